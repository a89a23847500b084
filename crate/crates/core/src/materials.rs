//! Per-region poroelastic constants and derived elastic moduli.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RegionId;

/// Poroelastic constants of one material region. Immutable value type.
///
/// An incompressible fluid is expressed as `inv_biot_modulus = 0` with
/// `biot_coefficient = 1`. Densities are only used for optional body-force
/// assembly and default to zero (gravity off).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialRegion {
    /// Young's modulus E (Pa).
    pub young_modulus: f64,
    /// Poisson ratio (dimensionless, 0 <= nu < 0.5).
    pub poisson_ratio: f64,
    /// Biot coefficient b (dimensionless, 0 <= b <= 1).
    pub biot_coefficient: f64,
    /// Inverse Biot modulus 1/M (1/Pa); 0 for an incompressible fluid.
    pub inv_biot_modulus: f64,
    /// Isotropic intrinsic permeability k (m^2).
    pub permeability: f64,
    /// Fluid dynamic viscosity mu (Pa s).
    pub viscosity: f64,
    /// Homogenized skeleton density (kg/m^3), used for the mechanical body
    /// force when gravity is enabled.
    #[serde(default)]
    pub solid_density: f64,
    /// Fluid density (kg/m^3), kept for a future flow gravity term.
    #[serde(default)]
    pub fluid_density: f64,
}

/// Derived isotropic moduli: first Lame parameter, shear modulus, and
/// drained bulk modulus (all Pa).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedModuli {
    pub lambda: f64,
    pub shear: f64,
    pub bulk_drained: f64,
}

impl MaterialRegion {
    pub fn new(
        young_modulus: f64,
        poisson_ratio: f64,
        biot_coefficient: f64,
        inv_biot_modulus: f64,
        permeability: f64,
        viscosity: f64,
    ) -> Result<Self> {
        let m = MaterialRegion {
            young_modulus,
            poisson_ratio,
            biot_coefficient,
            inv_biot_modulus,
            permeability,
            viscosity,
            solid_density: 0.0,
            fluid_density: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    /// Same constants with the stiffness given as drained bulk modulus K
    /// instead of E, using E = 3 K (1 - 2 nu).
    pub fn from_bulk_modulus(
        bulk_modulus: f64,
        poisson_ratio: f64,
        biot_coefficient: f64,
        inv_biot_modulus: f64,
        permeability: f64,
        viscosity: f64,
    ) -> Result<Self> {
        let young = 3.0 * bulk_modulus * (1.0 - 2.0 * poisson_ratio);
        MaterialRegion::new(
            young,
            poisson_ratio,
            biot_coefficient,
            inv_biot_modulus,
            permeability,
            viscosity,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0) {
            return Err(Error::invalid("young_modulus must be > 0"));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::invalid(
                "poisson_ratio must satisfy 0 <= nu < 0.5 (nu = 0.5 makes lambda and K_dr singular)",
            ));
        }
        if !(0.0..=1.0).contains(&self.biot_coefficient) {
            return Err(Error::invalid("biot_coefficient must be in [0, 1]"));
        }
        if !(self.inv_biot_modulus >= 0.0) {
            return Err(Error::invalid("inv_biot_modulus must be >= 0"));
        }
        if !(self.permeability >= 0.0) {
            return Err(Error::invalid("permeability must be >= 0"));
        }
        if !(self.viscosity > 0.0) {
            return Err(Error::invalid("viscosity must be > 0"));
        }
        Ok(())
    }

    /// Standard isotropic conversions from (E, nu).
    pub fn derived_moduli(&self) -> DerivedModuli {
        derived_moduli(self.young_modulus, self.poisson_ratio)
    }

    /// Optimal jump-stabilization coefficient 9 / (32 (lambda + 4 G)) (1/Pa),
    /// which minimizes the condition number of the undrained pressure Schur
    /// complement on a regular hexahedral macro-element.
    pub fn optimal_tau(&self) -> f64 {
        let m = self.derived_moduli();
        optimal_tau(m.lambda, m.shear)
    }
}

/// (lambda, G, K_dr) from (E, nu). `nu = 0.5` is rejected by
/// [`MaterialRegion::validate`]; calling this directly with nu = 0.5 would
/// divide by zero, so the same guard applies.
pub fn derived_moduli(young: f64, nu: f64) -> DerivedModuli {
    let shear = young / (2.0 * (1.0 + nu));
    let lambda = young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let bulk_drained = young / (3.0 * (1.0 - 2.0 * nu));
    DerivedModuli {
        lambda,
        shear,
        bulk_drained,
    }
}

/// See [`MaterialRegion::optimal_tau`].
pub fn optimal_tau(lambda: f64, shear: f64) -> f64 {
    9.0 / (32.0 * (lambda + 4.0 * shear))
}

/// Region-indexed material lookup. Region ids index into the table.
#[derive(Debug, Clone)]
pub struct MaterialTable {
    regions: Vec<MaterialRegion>,
}

impl MaterialTable {
    pub fn new(regions: Vec<MaterialRegion>) -> Result<Self> {
        if regions.is_empty() {
            return Err(Error::invalid("material table needs at least one region"));
        }
        for r in &regions {
            r.validate()?;
        }
        Ok(MaterialTable { regions })
    }

    pub fn get(&self, region: RegionId) -> &MaterialRegion {
        &self.regions[region as usize]
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Checks that every region id used by the grid resolves.
    pub fn check_covers(&self, grid: &crate::grid::StructuredGrid) -> Result<()> {
        if let Some(&id) = grid
            .cell_regions()
            .iter()
            .find(|&&id| id as usize >= self.regions.len())
        {
            return Err(Error::invalid(format!(
                "grid references region id {id} but the material table has {} regions",
                self.regions.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moduli_from_young_and_nu() {
        // E = 10 kPa, nu = 0.2.
        let m = derived_moduli(1.0e4, 0.2);
        assert!((m.shear - 4166.666666666667).abs() < 1e-9);
        assert!((m.lambda - 2777.777777777778).abs() < 1e-9);
        assert!((m.bulk_drained - 5555.555555555556).abs() < 1e-9);
    }

    #[test]
    fn nu_zero_forces_lambda_zero() {
        let m = derived_moduli(3.0, 0.0);
        assert_eq!(m.lambda, 0.0);
        assert!((m.shear - 1.5).abs() < 1e-15);
        assert!((m.bulk_drained - 1.0).abs() < 1e-15);
    }

    #[test]
    fn from_bulk_modulus_conversion() {
        // K = 5 GPa, nu = 0.25 => E = 3 K (1 - 2 nu) = 7.5 GPa, G = 3 GPa,
        // lambda = 3 GPa.
        let m =
            MaterialRegion::from_bulk_modulus(5.0e9, 0.25, 1.0, 1e-10, 9.8e-13, 1e-3).unwrap();
        assert!((m.young_modulus - 7.5e9).abs() / 7.5e9 < 1e-14);
        let d = m.derived_moduli();
        assert!((d.shear - 3.0e9).abs() / 3.0e9 < 1e-14);
        assert!((d.lambda - 3.0e9).abs() / 3.0e9 < 1e-14);
        assert!((d.bulk_drained - 5.0e9).abs() / 5.0e9 < 1e-14);
    }

    #[test]
    fn incompressible_nu_rejected() {
        assert!(MaterialRegion::new(1.0e4, 0.5, 1.0, 0.0, 1e-12, 1.0).is_err());
        assert!(MaterialRegion::new(-1.0, 0.2, 1.0, 0.0, 1e-12, 1.0).is_err());
        assert!(MaterialRegion::new(1.0, 0.2, 1.5, 0.0, 1e-12, 1.0).is_err());
        assert!(MaterialRegion::new(1.0, 0.2, 1.0, 0.0, 1e-12, 0.0).is_err());
    }

    #[test]
    fn optimal_tau_barry_mercer_moduli() {
        let m = MaterialRegion::new(1.0e4, 0.2, 1.0, 0.0, 1e-12, 1.0).unwrap();
        let tau = m.optimal_tau();
        assert!((tau - 1.4464285714285716e-5).abs() / tau < 1e-12);
    }

    proptest! {
        #[test]
        fn young_nu_round_trip(young in 1e3f64..1e11, nu in 0.0f64..0.49) {
            let m = derived_moduli(young, nu);
            // Invert: E = G (3 lambda + 2 G) / (lambda + G), nu = lambda / (2 (lambda + G)).
            let e_back = m.shear * (3.0 * m.lambda + 2.0 * m.shear) / (m.lambda + m.shear);
            let nu_back = m.lambda / (2.0 * (m.lambda + m.shear));
            prop_assert!((e_back - young).abs() <= 1e-12 * young);
            prop_assert!((nu_back - nu).abs() <= 1e-12 * nu.max(1e-3));
        }
    }
}
