//! Cell-centered finite-volume assembly for the flow block: TPFA
//! transmissibilities, accumulation, the fixed-stress diagonal, and the
//! pressure-jump stabilization, all in the incremental backward-Euler form
//! of the coupled system (unknowns are the per-step increments).

use crate::error::{Error, Result};
use crate::grid::{
    boundary_face_transmissibility, face_transmissibility, stabilization_volume, RegionSet,
    StructuredGrid,
};
use crate::linalg::{SparseBuilder, SparseMatrix};
use crate::materials::{optimal_tau, MaterialTable};

/// Flow boundary condition per (axis, side): no-flow (default) or a fixed
/// pressure imposed on the outer faces of the boundary cells through a
/// one-sided ghost transmissibility.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowBc {
    sides: [[Option<f64>; 2]; 3],
}

impl FlowBc {
    pub fn no_flow() -> Self {
        Self::default()
    }

    /// Fixed pressure on every boundary face.
    pub fn uniform_pressure(value: f64) -> Self {
        FlowBc {
            sides: [[Some(value); 2]; 3],
        }
    }

    pub fn set_pressure(&mut self, axis: usize, side: crate::grid::Side, value: f64) {
        let s = match side {
            crate::grid::Side::Lo => 0,
            crate::grid::Side::Hi => 1,
        };
        self.sides[axis][s] = Some(value);
    }

    fn pressure_on(&self, axis: usize, side: crate::grid::Side) -> Option<f64> {
        let s = match side {
            crate::grid::Side::Lo => 0,
            crate::grid::Side::Hi => 1,
        };
        self.sides[axis][s]
    }
}

/// Time-step independent pieces of the flow operator.
#[derive(Debug, Clone)]
pub struct FlowMatrices {
    /// Interior TPFA operator T: row sums vanish, so constants are in its
    /// kernel (pure-Neumann flow).
    pub transmissibility: SparseMatrix,
    /// Diagonal ghost transmissibilities from pressure boundary conditions.
    pub ghost_diag: Vec<f64>,
    /// Per-cell sum of T_ghost * p_bc (m^3/(s)) entering through pressure
    /// boundaries.
    pub ghost_rhs: Vec<f64>,
    /// Accumulation diagonal V_K / M (m^3/Pa).
    pub accumulation: Vec<f64>,
}

/// Assembles the flow matrices for the current grid and materials.
pub fn assemble_flow(
    grid: &StructuredGrid,
    materials: &MaterialTable,
    bc: &FlowBc,
) -> Result<FlowMatrices> {
    materials.check_covers(grid)?;
    let n = grid.n_cells();
    let mut t = SparseBuilder::new(n, n);
    for f in grid.interior_faces() {
        let ups = face_transmissibility(grid, f, materials);
        if ups == 0.0 {
            continue;
        }
        t.add(f.left, f.left, ups);
        t.add(f.right, f.right, ups);
        t.add(f.left, f.right, -ups);
        t.add(f.right, f.left, -ups);
    }

    let mut ghost_diag = vec![0.0; n];
    let mut ghost_rhs = vec![0.0; n];
    for f in grid.boundary_faces() {
        if let Some(p_bc) = bc.pressure_on(f.axis, f.side) {
            let tg = boundary_face_transmissibility(grid, f, materials);
            ghost_diag[f.cell] += tg;
            ghost_rhs[f.cell] += tg * p_bc;
        }
    }

    let v = grid.cell_volume();
    let accumulation = (0..n)
        .map(|k| v * materials.get(grid.region_of(k)).inv_biot_modulus)
        .collect();

    Ok(FlowMatrices {
        transmissibility: t.finalize(),
        ghost_diag,
        ghost_rhs,
        accumulation,
    })
}

impl FlowMatrices {
    /// C = M_acc + dt (T + T_ghost), acting on the pressure increment.
    pub fn c_matrix(&self, dt: f64) -> Result<SparseMatrix> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("time step must be > 0, got {dt}")));
        }
        let n = self.accumulation.len();
        let mut b = SparseBuilder::new(n, n);
        for (i, j, v) in self.transmissibility.iter() {
            b.add(i, j, dt * v);
        }
        for i in 0..n {
            b.add(i, i, self.accumulation[i] + dt * self.ghost_diag[i]);
        }
        Ok(b.finalize())
    }

    /// Right-hand side of the incremental mass balance:
    /// Q_p = dt q + dt T_ghost p_bc - dt (T + T_ghost) p_prev,
    /// with q the volumetric source rates (m^3/s) sampled at t_{n+1}.
    pub fn flow_rhs(&self, dt: f64, p_prev: &[f64], source_rates: &[f64]) -> Result<Vec<f64>> {
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("time step must be > 0, got {dt}")));
        }
        let n = self.accumulation.len();
        assert_eq!(p_prev.len(), n);
        assert_eq!(source_rates.len(), n);
        let tp = self.transmissibility.mul_vec(p_prev);
        Ok((0..n)
            .map(|k| {
                dt * (source_rates[k] + self.ghost_rhs[k]
                    - tp[k]
                    - self.ghost_diag[k] * p_prev[k])
            })
            .collect())
    }
}

/// Diagonal of the fixed-stress regularization: R_K = alpha V_K b^2 / K_dr.
pub fn assemble_fixed_stress_diagonal(
    grid: &StructuredGrid,
    materials: &MaterialTable,
    alpha: f64,
) -> Result<Vec<f64>> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "fixed-stress coefficient must be >= 0, got {alpha}"
        )));
    }
    materials.check_covers(grid)?;
    let v = grid.cell_volume();
    Ok((0..grid.n_cells())
        .map(|k| {
            let m = materials.get(grid.region_of(k));
            let kdr = m.derived_moduli().bulk_drained;
            alpha * v * m.biot_coefficient * m.biot_coefficient / kdr
        })
        .collect())
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Pressure-jump stabilization operator S, built on the pressure increment:
/// for every interior face whose two cells both lie in `stab_region`, a flux
/// tau V_f [[dp]] is added, with tau = c 9/(32 (lambda + 4 G)) evaluated
/// with face harmonic means of (lambda, G) and V_f the geometric
/// stabilization volume. S is symmetric positive semidefinite; applied
/// globally it has the constant vector in its kernel.
pub fn assemble_stabilization(
    grid: &StructuredGrid,
    materials: &MaterialTable,
    stab_region: &RegionSet,
    c: f64,
) -> Result<SparseMatrix> {
    if !(c >= 0.0) {
        return Err(Error::invalid(format!(
            "stabilization constant must be >= 0, got {c}"
        )));
    }
    materials.check_covers(grid)?;
    if let RegionSet::Ids(ids) = stab_region {
        let known = grid.region_ids();
        for id in ids {
            if !known.contains(id) {
                return Err(Error::invalid(format!(
                    "stabilization region id {id} does not exist on the grid"
                )));
            }
        }
    }

    let n = grid.n_cells();
    let mut s = SparseBuilder::new(n, n);
    if c == 0.0 {
        return Ok(s.finalize());
    }
    for f in grid.interior_faces() {
        let (rl, rr) = (grid.region_of(f.left), grid.region_of(f.right));
        if !(stab_region.contains(rl) && stab_region.contains(rr)) {
            continue;
        }
        let ml = materials.get(rl).derived_moduli();
        let mr = materials.get(rr).derived_moduli();
        let lambda = harmonic_mean(ml.lambda, mr.lambda);
        let shear = harmonic_mean(ml.shear, mr.shear);
        let w = c * optimal_tau(lambda, shear) * stabilization_volume(grid, f);
        s.add(f.left, f.left, w);
        s.add(f.right, f.right, w);
        s.add(f.left, f.right, -w);
        s.add(f.right, f.left, -w);
    }
    Ok(s.finalize())
}

/// All sparse blocks and load vectors of the discrete coupled problem for
/// one time step, in incremental form over (u^{n+1}-u^n, p^{n+1}-p^n).
///
/// The flow decomposition (accumulation, interior transmissibility, ghost
/// boundary terms, source) is kept alongside C so that mass bookkeeping can
/// audit each contribution separately.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    /// Mechanics stiffness (Dirichlet-eliminated, SPD).
    pub a: SparseMatrix,
    /// Coupling (discrete divergence), cells x mech dofs.
    pub b: SparseMatrix,
    /// Flow increment operator C = M_acc + dt (T + T_ghost).
    pub c: SparseMatrix,
    /// Fixed-stress diagonal, alpha-scaled.
    pub r: Vec<f64>,
    /// Jump stabilization.
    pub s: SparseMatrix,
    /// Mechanics right-hand side for this step.
    pub q_u: Vec<f64>,
    /// Flow right-hand side for this step.
    pub q_p: Vec<f64>,
    pub dt: f64,
    /// Audit pieces: M_acc diagonal, interior T, ghost diagonal and ghost
    /// inflow, and the source rates (m^3/s) sampled at t_{n+1}.
    pub accumulation: Vec<f64>,
    pub transmissibility: SparseMatrix,
    pub ghost_diag: Vec<f64>,
    pub ghost_rhs: Vec<f64>,
    pub source: Vec<f64>,
}

impl BlockSystem {
    pub fn n_mech(&self) -> usize {
        self.a.rows()
    }

    pub fn n_pressure(&self) -> usize {
        self.c.rows()
    }

    /// C + S, the flow block of the stabilized fully implicit operator.
    pub fn c_plus_s(&self) -> SparseMatrix {
        SparseMatrix::linear_combination(&[(1.0, &self.c), (1.0, &self.s)])
    }

    /// C + R + S, the operator of the fixed-stress flow solve.
    pub fn fs_flow_matrix(&self) -> SparseMatrix {
        self.c_plus_s().plus_diagonal(&self.r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, RegionId, RegionSet};
    use crate::materials::{MaterialRegion, MaterialTable};

    fn bm_table() -> MaterialTable {
        MaterialTable::new(vec![
            MaterialRegion::new(1.0e4, 0.2, 1.0, 0.0, 1.0e-12, 1.0).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn two_cell_exchange_matrix() {
        let g = build_grid(&[2, 1], &[0.2, 0.1], |_| 0).unwrap();
        let f = assemble_flow(&g, &bm_table(), &FlowBc::no_flow()).unwrap();
        let ups = 1.0e-12;
        let t = &f.transmissibility;
        assert!((t.get(0, 0) - ups).abs() < 1e-24);
        assert!((t.get(1, 1) - ups).abs() < 1e-24);
        assert!((t.get(0, 1) + ups).abs() < 1e-24);
        assert!((t.get(1, 0) + ups).abs() < 1e-24);
    }

    #[test]
    fn undrained_incompressible_limit_gives_zero_c() {
        let g = build_grid(&[3, 3], &[1.0, 1.0], |_| 0).unwrap();
        let mats = MaterialTable::new(vec![
            MaterialRegion::new(1.0e4, 0.2, 1.0, 0.0, 0.0, 1.0).unwrap()
        ])
        .unwrap();
        let f = assemble_flow(&g, &mats, &FlowBc::uniform_pressure(0.0)).unwrap();
        let c = f.c_matrix(10.0).unwrap();
        assert_eq!(c.nnz(), 0);
    }

    #[test]
    fn uniform_pressure_no_source_zero_rhs() {
        let g = build_grid(&[4, 4], &[1.0, 1.0], |_| 0).unwrap();
        let f = assemble_flow(&g, &bm_table(), &FlowBc::no_flow()).unwrap();
        let p = vec![7.5; 16];
        let q = vec![0.0; 16];
        let rhs = f.flow_rhs(10.0, &p, &q).unwrap();
        assert!(crate::linalg::inf_norm(&rhs) < 1e-22);
    }

    #[test]
    fn negative_dt_rejected() {
        let g = build_grid(&[2, 2], &[1.0, 1.0], |_| 0).unwrap();
        let f = assemble_flow(&g, &bm_table(), &FlowBc::no_flow()).unwrap();
        assert!(f.c_matrix(-1.0).is_err());
        assert!(f.flow_rhs(0.0, &vec![0.0; 4], &vec![0.0; 4]).is_err());
    }

    #[test]
    fn fixed_stress_diagonal_barry_mercer_value() {
        // b = 1, K_dr = 5555.56 Pa, V = 0.01 m^3, alpha = 1 => 1.8e-6 m^3/Pa.
        let g = build_grid(&[10, 10], &[1.0, 1.0], |_| 0).unwrap();
        let r = assemble_fixed_stress_diagonal(&g, &bm_table(), 1.0).unwrap();
        for v in &r {
            assert!((v - 1.8e-6).abs() / 1.8e-6 < 1e-12);
        }
        let r0 = assemble_fixed_stress_diagonal(&g, &bm_table(), 0.0).unwrap();
        assert!(r0.iter().all(|&v| v == 0.0));
        let r2 = assemble_fixed_stress_diagonal(&g, &bm_table(), 2.0).unwrap();
        for (a, b) in r2.iter().zip(&r) {
            assert!((a - 2.0 * b).abs() < 1e-20);
        }
    }

    #[test]
    fn stabilization_zero_constant() {
        let g = build_grid(&[3, 3], &[1.0, 1.0], |_| 0).unwrap();
        let s = assemble_stabilization(&g, &bm_table(), &RegionSet::All, 0.0).unwrap();
        assert_eq!(s.nnz(), 0);
    }

    #[test]
    fn stabilization_face_weight_matches_optimal_tau() {
        // E = 10 kPa, nu = 0.2, c = 1, uniform 10x10 grid: V_f = 1, so the
        // off-diagonal coupling is -tau* = -9/(32 (lambda + 4 G)).
        let g = build_grid(&[10, 10], &[1.0, 1.0], |_| 0).unwrap();
        let s = assemble_stabilization(&g, &bm_table(), &RegionSet::All, 1.0).unwrap();
        let tau = 1.4464285714285716e-5;
        let f = &g.interior_faces()[0];
        assert!((s.get(f.left, f.right) + tau).abs() / tau < 1e-12);
    }

    #[test]
    fn stabilization_kernel_and_psd() {
        let g = build_grid(&[5, 4], &[1.0, 1.0], |_| 0).unwrap();
        let s = assemble_stabilization(&g, &bm_table(), &RegionSet::All, 1.0).unwrap();
        let ones = vec![1.0; g.n_cells()];
        assert!(crate::linalg::inf_norm(&s.mul_vec(&ones)) < 1e-18);
        // x^T S x >= 0 for deterministic pseudo-random x, and sum(S x) = 0.
        let mut x = vec![0.0; g.n_cells()];
        let mut st = 7u64;
        for v in x.iter_mut() {
            st = st.wrapping_mul(6364136223846793005).wrapping_add(1);
            *v = ((st >> 33) as f64 / (1u64 << 31) as f64) - 1.0;
        }
        let sx = s.mul_vec(&x);
        let quad: f64 = x.iter().zip(&sx).map(|(a, b)| a * b).sum();
        assert!(quad >= 0.0);
        assert!(sx.iter().sum::<f64>().abs() < 1e-18);
        assert_eq!(s.asymmetry(), 0.0);
    }

    #[test]
    fn burden_only_stabilization_never_couples_regions() {
        let g = build_grid(&[4, 4, 6], &[4.0, 4.0, 6.0], |c| {
            if (2..4).contains(&c[2]) {
                0
            } else {
                1
            }
        })
        .unwrap();
        let mats = MaterialTable::new(vec![
            MaterialRegion::from_bulk_modulus(5e9, 0.25, 1.0, 1e-10, 9.8e-13, 1e-3).unwrap(),
            MaterialRegion::from_bulk_modulus(5e9, 0.25, 1.0, 1e-10, 9.8e-20, 1e-3).unwrap(),
        ])
        .unwrap();
        let s =
            assemble_stabilization(&g, &mats, &RegionSet::from_ids([1 as RegionId]), 1.0).unwrap();
        for (i, j, v) in s.iter() {
            if v != 0.0 {
                assert_eq!(g.region_of(i), 1);
                assert_eq!(g.region_of(j), 1);
            }
        }
        assert!(s.nnz() > 0);
    }

    #[test]
    fn unknown_stabilization_region_rejected() {
        let g = build_grid(&[3, 3], &[1.0, 1.0], |_| 0).unwrap();
        let err = assemble_stabilization(&g, &bm_table(), &RegionSet::from_ids([4]), 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn interior_flux_conserves_mass_globally() {
        let g = build_grid(&[4, 3], &[1.0, 1.0], |_| 0).unwrap();
        let f = assemble_flow(&g, &bm_table(), &FlowBc::no_flow()).unwrap();
        let mut p = vec![0.0; g.n_cells()];
        let mut st = 13u64;
        for v in p.iter_mut() {
            st = st.wrapping_mul(6364136223846793005).wrapping_add(1);
            *v = ((st >> 33) as f64 / (1u64 << 31) as f64) - 0.5;
        }
        let tp = f.transmissibility.mul_vec(&p);
        assert!(tp.iter().sum::<f64>().abs() < 1e-15 * crate::linalg::norm2(&tp).max(1e-30));
    }

    #[test]
    fn c_is_m_matrix_with_compressibility() {
        let g = build_grid(&[4, 4], &[1.0, 1.0], |_| 0).unwrap();
        let mats = MaterialTable::new(vec![
            MaterialRegion::new(1.0e4, 0.2, 1.0, 1e-10, 1.0e-12, 1.0).unwrap()
        ])
        .unwrap();
        let f = assemble_flow(&g, &mats, &FlowBc::no_flow()).unwrap();
        let c = f.c_matrix(10.0).unwrap();
        for i in 0..c.rows() {
            let (cols, vals) = c.row(i);
            let mut diag = 0.0;
            let mut off = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                if i == j {
                    diag = v;
                } else {
                    assert!(v <= 0.0);
                    off += v.abs();
                }
            }
            assert!(diag > off);
        }
    }
}
