//! Reproducible benchmark setups and parameter-sweep protocols: case
//! specifications (also the on-disk config schema), built-in cases, the
//! time-stepping runner, and the sweep harness.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, DirichletSet, FaceTraction};
use crate::fvm::{self, BlockSystem, FlowBc, FlowMatrices};
use crate::grid::{build_grid, RegionId, RegionSet, Side, StructuredGrid};
use crate::io::{RunReport, StepRow};
use crate::linalg::{self, SparseMatrix};
use crate::materials::{MaterialRegion, MaterialTable};
use crate::solvers::{self, FieldState, Scheme, SolverConfig, StepResult};

/// Volumetric source rate as a function of time: either a constant or a
/// scaled sinusoid. Serialized as a small expression string, e.g.
/// "1.0e-2" or "sin(pi*t/100)".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateExpr {
    Constant(f64),
    Sinusoid {
        amplitude: f64,
        angular: f64,
        phase: f64,
    },
}

impl RateExpr {
    pub fn sinusoid(amplitude: f64, angular: f64, phase: f64) -> Self {
        RateExpr::Sinusoid {
            amplitude,
            angular,
            phase,
        }
    }

    /// Rate (m^3/s) at time t (s).
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            RateExpr::Constant(v) => v,
            RateExpr::Sinusoid {
                amplitude,
                angular,
                phase,
            } => amplitude * (angular * t + phase).sin(),
        }
    }

    fn canonical(&self) -> String {
        match *self {
            RateExpr::Constant(v) => format!("{v:?}"),
            RateExpr::Sinusoid {
                amplitude,
                angular,
                phase,
            } => {
                let mut s = String::new();
                if amplitude != 1.0 {
                    s.push_str(&format!("{amplitude:?}*"));
                }
                s.push_str(&format!("sin({angular:?}*t"));
                if phase != 0.0 {
                    s.push_str(&format!("{}{:?}", if phase < 0.0 { "" } else { "+" }, phase));
                }
                s.push(')');
                s
            }
        }
    }

    /// Parses the rate mini-grammar: a float constant, or
    /// `[scale*]sin([c*]t[/d][+phase])` with `c` either `pi` or a float.
    pub fn parse(text: &str) -> Result<Self> {
        let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = |msg: &str| {
            Error::Parse {
                context: "source.rate".into(),
                message: format!("{msg} in rate expression '{text}'"),
            }
        };
        if let Some(idx) = s.find("sin(") {
            let amplitude = if idx == 0 {
                1.0
            } else {
                let prefix = &s[..idx];
                let coef = prefix
                    .strip_suffix('*')
                    .ok_or_else(|| bad("expected '<scale>*' before sin"))?;
                coef.parse::<f64>()
                    .map_err(|_| bad("scale is not a number"))?
            };
            let inner = s[idx + 4..]
                .strip_suffix(')')
                .ok_or_else(|| bad("missing closing parenthesis"))?;
            let t_pos = inner.find('t').ok_or_else(|| bad("missing 't'"))?;
            if inner[t_pos + 1..].contains('t') {
                return Err(bad("more than one 't'"));
            }
            let coef_part = &inner[..t_pos];
            let coef = match coef_part {
                "" => 1.0,
                "pi*" => std::f64::consts::PI,
                other => other
                    .strip_suffix('*')
                    .and_then(|c| c.parse::<f64>().ok())
                    .ok_or_else(|| bad("coefficient must be 'pi' or a number"))?,
            };
            let mut rest = &inner[t_pos + 1..];
            let mut angular = coef;
            if let Some(r) = rest.strip_prefix('/') {
                let (div, used) = scan_float(r).ok_or_else(|| bad("bad divisor"))?;
                if div == 0.0 {
                    return Err(bad("zero divisor"));
                }
                angular /= div;
                rest = &r[used..];
            }
            let phase = if rest.is_empty() {
                0.0
            } else {
                let (v, used) = scan_float(rest).ok_or_else(|| bad("bad phase"))?;
                if used != rest.len() {
                    return Err(bad("trailing characters"));
                }
                v
            };
            Ok(RateExpr::Sinusoid {
                amplitude,
                angular,
                phase,
            })
        } else {
            s.parse::<f64>()
                .map(RateExpr::Constant)
                .map_err(|_| bad("not a number and not a sin() expression"))
        }
    }
}

/// Longest float literal at the start of `s` (sign, digits, optional
/// fraction and exponent); returns the value and consumed length.
fn scan_float(s: &str) -> Option<(f64, usize)> {
    let b = s.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let start = i;
    while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
        i += 1;
    }
    if i == start {
        return None;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
            j += 1;
        }
        let es = j;
        while j < b.len() && b[j].is_ascii_digit() {
            j += 1;
        }
        if j > es {
            i = j;
        }
    }
    s[..i].parse().ok().map(|v| (v, i))
}

impl Serialize for RateExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for RateExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        RateExpr::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One side of the domain, or all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideSpec {
    All,
    Xmin,
    Xmax,
    Ymin,
    Ymax,
    Zmin,
    Zmax,
}

impl SideSpec {
    fn axis_sides(&self, dim: usize) -> Vec<(usize, Side)> {
        match self {
            SideSpec::All => (0..dim)
                .flat_map(|a| [(a, Side::Lo), (a, Side::Hi)])
                .collect(),
            SideSpec::Xmin => vec![(0, Side::Lo)],
            SideSpec::Xmax => vec![(0, Side::Hi)],
            SideSpec::Ymin => vec![(1, Side::Lo)],
            SideSpec::Ymax => vec![(1, Side::Hi)],
            SideSpec::Zmin => vec![(2, Side::Lo)],
            SideSpec::Zmax => vec![(2, Side::Hi)],
        }
    }

    fn max_axis(&self) -> usize {
        match self {
            SideSpec::All => 0,
            SideSpec::Xmin | SideSpec::Xmax => 0,
            SideSpec::Ymin | SideSpec::Ymax => 1,
            SideSpec::Zmin | SideSpec::Zmax => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dims: Vec<usize>,
    pub extent: Vec<f64>,
}

/// Region stiffness given either as Young's modulus or drained bulk modulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub young_modulus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bulk_modulus: Option<f64>,
    pub poisson_ratio: f64,
    pub biot_coefficient: f64,
    pub inv_biot_modulus: f64,
    pub permeability: f64,
    pub viscosity: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub solid_density: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub fluid_density: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl MaterialSpec {
    fn resolve(&self, context: &str) -> Result<MaterialRegion> {
        let mut m = match (self.young_modulus, self.bulk_modulus) {
            (Some(e), None) => MaterialRegion::new(
                e,
                self.poisson_ratio,
                self.biot_coefficient,
                self.inv_biot_modulus,
                self.permeability,
                self.viscosity,
            ),
            (None, Some(k)) => MaterialRegion::from_bulk_modulus(
                k,
                self.poisson_ratio,
                self.biot_coefficient,
                self.inv_biot_modulus,
                self.permeability,
                self.viscosity,
            ),
            _ => Err(Error::invalid(
                "exactly one of young_modulus and bulk_modulus must be given",
            )),
        }
        .map_err(|e| Error::Parse {
            context: context.to_string(),
            message: e.to_string(),
        })?;
        m.solid_density = self.solid_density;
        m.fluid_density = self.fluid_density;
        Ok(m)
    }
}

/// A named material region: either the whole domain (no layer ranges) or a
/// union of inclusive layer ranges along the last spatial axis. Later
/// regions override earlier ones cell by cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<[usize; 2]>>,
    pub material: MaterialSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechBcSpec {
    pub side: SideSpec,
    pub kind: MechBcKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechBcKind {
    /// Zero normal displacement, zero tangential traction.
    Roller,
    /// All displacement components fixed to zero.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBcSpec {
    pub side: SideSpec,
    /// Fixed pressure (Pa) imposed through a ghost transmissibility on the
    /// outer faces; sides without an entry are no-flow.
    pub pressure: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcSpec {
    #[serde(default)]
    pub mech: Vec<MechBcSpec>,
    #[serde(default)]
    pub flow: Vec<FlowBcSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Coordinates of the cell the source acts in; must resolve to exactly
    /// one cell.
    pub at: Vec<f64>,
    pub rate: RateExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    /// Initial step size (s).
    pub dt0: f64,
    /// Per-step growth factor for the step size.
    #[serde(default = "default_growth")]
    pub growth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// End time (s); the final step is clamped to land on it exactly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
}

fn default_growth() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabSpec {
    /// Multiplier on the optimal coefficient tau* = 9/(32 (lambda + 4G)).
    #[serde(default = "default_stab_c")]
    pub c: f64,
    /// "none", "all", or a list of region names.
    #[serde(default)]
    pub regions: StabRegionsSpec,
}

fn default_stab_c() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StabRegionsSpec {
    Keyword(String),
    Names(Vec<String>),
}

impl Default for StabRegionsSpec {
    fn default() -> Self {
        StabRegionsSpec::Keyword("none".into())
    }
}

impl StabRegionsSpec {
    pub fn none() -> Self {
        StabRegionsSpec::Keyword("none".into())
    }

    pub fn all() -> Self {
        StabRegionsSpec::Keyword("all".into())
    }

    pub fn names(names: &[&str]) -> Self {
        StabRegionsSpec::Names(names.iter().map(|s| s.to_string()).collect())
    }

    fn resolve(&self, region_ids: &BTreeMap<String, RegionId>) -> Result<Option<RegionSet>> {
        match self {
            StabRegionsSpec::Keyword(k) if k == "none" => Ok(None),
            StabRegionsSpec::Keyword(k) if k == "all" => Ok(Some(RegionSet::All)),
            StabRegionsSpec::Keyword(k) => Err(Error::Parse {
                context: "stabilization.regions".into(),
                message: format!("unknown keyword '{k}' (use \"none\", \"all\", or region names)"),
            }),
            StabRegionsSpec::Names(names) => {
                let mut ids = Vec::new();
                for n in names {
                    let id = region_ids.get(n).ok_or_else(|| Error::Parse {
                        context: "stabilization.regions".into(),
                        message: format!("unknown region name '{n}'"),
                    })?;
                    ids.push(*id);
                }
                Ok(Some(RegionSet::from_ids(ids)))
            }
        }
    }
}

/// Complete, serializable description of one simulation case. This is also
/// the schema of the on-disk `.case` (TOML) files; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub name: String,
    pub grid: GridSpec,
    pub regions: Vec<RegionSpec>,
    #[serde(default)]
    pub bc: BcSpec,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
    pub time: TimeSpec,
    pub solver: SolverConfig,
    #[serde(default = "default_stab")]
    pub stabilization: StabSpec,
    /// Gravitational acceleration (m/s^2); zero keeps body forces off.
    #[serde(default, skip_serializing_if = "gravity_off")]
    pub gravity: [f64; 3],
}

fn default_stab() -> StabSpec {
    StabSpec {
        c: default_stab_c(),
        regions: StabRegionsSpec::default(),
    }
}

fn gravity_off(g: &[f64; 3]) -> bool {
    g.iter().all(|&v| v == 0.0)
}

impl CaseSpec {
    /// Structural validation with config-key context in error messages.
    pub fn validate(&self) -> Result<()> {
        let parse_err = |context: &str, message: String| Error::Parse {
            context: context.into(),
            message,
        };
        let dim = self.grid.dims.len();
        if !(2..=3).contains(&dim) || self.grid.extent.len() != dim {
            return Err(parse_err(
                "grid",
                "dims and extent must both have 2 or 3 entries".into(),
            ));
        }
        if self.regions.is_empty() {
            return Err(parse_err("regions", "at least one region is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &self.regions {
            if !seen.insert(r.name.clone()) {
                return Err(parse_err(
                    "regions",
                    format!("duplicate region name '{}'", r.name),
                ));
            }
        }
        if !(self.time.dt0 > 0.0) {
            return Err(parse_err("time.dt0", "must be > 0".into()));
        }
        if !(self.time.growth >= 1.0) {
            return Err(parse_err("time.growth", "must be >= 1".into()));
        }
        if let Some(dt_max) = self.time.dt_max {
            if !(dt_max >= self.time.dt0) {
                return Err(parse_err("time.dt_max", "must be >= dt0".into()));
            }
        }
        match (self.time.steps, self.time.end) {
            (Some(s), None) if s > 0 => {}
            (None, Some(e)) if e > 0.0 => {}
            _ => {
                return Err(parse_err(
                    "time",
                    "exactly one of steps (> 0) or end (> 0) must be set".into(),
                ))
            }
        }
        for bc in &self.bc.mech {
            if bc.side.max_axis() >= dim {
                return Err(parse_err("bc.mech", "side does not exist in 2D".into()));
            }
        }
        for bc in &self.bc.flow {
            if bc.side.max_axis() >= dim {
                return Err(parse_err("bc.flow", "side does not exist in 2D".into()));
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.at.len() != dim {
                return Err(parse_err(
                    "sources.at",
                    format!("source {i} has {} coordinates for a {dim}D grid", s.at.len()),
                ));
            }
        }
        if !(self.stabilization.c >= 0.0) {
            return Err(parse_err("stabilization.c", "must be >= 0".into()));
        }
        self.solver.validate()?;
        Ok(())
    }

    /// Region name -> id map (ids are the listed order).
    pub fn region_ids(&self) -> BTreeMap<String, RegionId> {
        self.regions
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.clone(), i as RegionId))
            .collect()
    }

    /// Region names sorted for deterministic reporting.
    pub fn sorted_region_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.regions.iter().map(|r| r.name.clone()).collect();
        names.sort();
        names
    }

    fn build_grid(&self) -> Result<StructuredGrid> {
        let dim = self.grid.dims.len();
        let last_axis = dim - 1;
        let n_layers = self.grid.dims[last_axis];
        // Last matching region rule wins; every layer must be covered.
        let mut layer_region: Vec<Option<RegionId>> = vec![None; n_layers];
        for (id, r) in self.regions.iter().enumerate() {
            match &r.layers {
                None => layer_region.fill(Some(id as RegionId)),
                Some(ranges) => {
                    for &[lo, hi] in ranges {
                        if lo > hi || hi >= n_layers {
                            return Err(Error::Parse {
                                context: "regions.layers".into(),
                                message: format!(
                                    "range [{lo}, {hi}] is invalid for {n_layers} layers"
                                ),
                            });
                        }
                        for l in lo..=hi {
                            layer_region[l] = Some(id as RegionId);
                        }
                    }
                }
            }
        }
        let table: Vec<RegionId> = layer_region
            .iter()
            .enumerate()
            .map(|(l, r)| {
                r.ok_or_else(|| Error::Parse {
                    context: "regions".into(),
                    message: format!("layer {l} is not covered by any region"),
                })
            })
            .collect::<Result<_>>()?;
        build_grid(&self.grid.dims, &self.grid.extent, |idx| {
            table[idx[last_axis]]
        })
    }

    fn materials(&self) -> Result<MaterialTable> {
        let regions = self
            .regions
            .iter()
            .map(|r| r.material.resolve(&format!("regions.{}.material", r.name)))
            .collect::<Result<Vec<_>>>()?;
        MaterialTable::new(regions)
    }
}

/// One point of a sweep: named value overrides applied to a base case.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Alpha(Vec<f64>),
    StabC(Vec<f64>),
    Dt0(Vec<f64>),
    Scheme(Vec<Scheme>),
    StabRegions(Vec<StabRegionsSpec>),
    /// Permeability of one named region.
    Permeability { region: String, values: Vec<f64> },
}

impl SweepAxis {
    pub fn name(&self) -> String {
        match self {
            SweepAxis::Alpha(_) => "alpha".into(),
            SweepAxis::StabC(_) => "c".into(),
            SweepAxis::Dt0(_) => "dt0".into(),
            SweepAxis::Scheme(_) => "scheme".into(),
            SweepAxis::StabRegions(_) => "stab_regions".into(),
            SweepAxis::Permeability { region, .. } => format!("perm.{region}"),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Alpha(v) | SweepAxis::StabC(v) | SweepAxis::Dt0(v) => v.len(),
            SweepAxis::Scheme(v) => v.len(),
            SweepAxis::StabRegions(v) => v.len(),
            SweepAxis::Permeability { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value_label(&self, i: usize) -> String {
        match self {
            SweepAxis::Alpha(v) | SweepAxis::StabC(v) | SweepAxis::Dt0(v) => format!("{:?}", v[i]),
            SweepAxis::Scheme(v) => v[i].name().to_string(),
            SweepAxis::StabRegions(v) => match &v[i] {
                StabRegionsSpec::Keyword(k) => k.clone(),
                StabRegionsSpec::Names(n) => n.join("+"),
            },
            SweepAxis::Permeability { values, .. } => format!("{:?}", values[i]),
        }
    }

    fn apply(&self, spec: &mut CaseSpec, i: usize) -> Result<()> {
        match self {
            SweepAxis::Alpha(v) => spec.solver.alpha = v[i],
            SweepAxis::StabC(v) => spec.stabilization.c = v[i],
            SweepAxis::Dt0(v) => spec.time.dt0 = v[i],
            SweepAxis::Scheme(v) => spec.solver.scheme = v[i],
            SweepAxis::StabRegions(v) => spec.stabilization.regions = v[i].clone(),
            SweepAxis::Permeability { region, values } => {
                let r = spec
                    .regions
                    .iter_mut()
                    .find(|r| &r.name == region)
                    .ok_or_else(|| {
                        Error::invalid(format!("sweep permeability region '{region}' not found"))
                    })?;
                r.material.permeability = values[i];
            }
        }
        Ok(())
    }
}

/// Cross product of axis values over a base case.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: CaseSpec,
    pub axes: Vec<SweepAxis>,
    /// Upper bound on the cross-product size.
    pub cap: usize,
}

impl SweepSpec {
    pub fn new(base: CaseSpec, axes: Vec<SweepAxis>) -> Self {
        SweepSpec {
            base,
            axes,
            cap: 4096,
        }
    }

    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|a| a.len().max(1)).product()
    }
}

/// Execution options for the runner.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Abort the run at the first non-converged step (default); sweeps
    /// record non-convergence in-row instead.
    pub fail_on_nonconvergence: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            fail_on_nonconvergence: true,
        }
    }
}

/// A case resolved to assembled operators, ready to advance step by step.
pub struct CaseRunner {
    spec: CaseSpec,
    grid: StructuredGrid,
    materials: MaterialTable,
    dirichlet: DirichletSet,
    stiffness: SparseMatrix,
    coupling: SparseMatrix,
    flow: FlowMatrices,
    fs_diagonal: Vec<f64>,
    stabilization: SparseMatrix,
    static_load: Vec<f64>,
    sources: Vec<(usize, RateExpr)>,
    region_names: Vec<String>,
    state: FieldState,
    config: SolverConfig,
    steps_done: usize,
    next_dt: f64,
}

impl CaseRunner {
    pub fn new(spec: &CaseSpec) -> Result<Self> {
        spec.validate()?;
        let grid = spec.build_grid()?;
        let materials = spec.materials()?;
        let dim = grid.spatial_dim();

        let mut dirichlet = DirichletSet::new();
        for bc in &spec.bc.mech {
            for (axis, side) in bc.side.axis_sides(dim) {
                match bc.kind {
                    MechBcKind::Roller => dirichlet.roller(&grid, axis, side)?,
                    MechBcKind::Fixed => dirichlet.fixed(&grid, axis, side)?,
                }
            }
        }

        let mut flow_bc = FlowBc::no_flow();
        for bc in &spec.bc.flow {
            for (axis, side) in bc.side.axis_sides(dim) {
                flow_bc.set_pressure(axis, side, bc.pressure);
            }
        }

        let (stiffness, shift) = fem::assemble_stiffness(&grid, &materials, &dirichlet)?;
        let coupling = fem::assemble_coupling(&grid, &materials, &dirichlet)?;
        let flow = fvm::assemble_flow(&grid, &materials, &flow_bc)?;
        let fs_diagonal =
            fvm::assemble_fixed_stress_diagonal(&grid, &materials, spec.solver.alpha)?;

        let region_ids = spec.region_ids();
        let stabilization = match spec.stabilization.regions.resolve(&region_ids)? {
            Some(set) => {
                fvm::assemble_stabilization(&grid, &materials, &set, spec.stabilization.c)?
            }
            None => SparseMatrix::zero(grid.n_cells(), grid.n_cells()),
        };

        let tractions: Vec<FaceTraction> = Vec::new();
        let mut static_load = fem::assemble_mech_load(&grid, &materials, &tractions, spec.gravity)?;
        linalg::axpy(&mut static_load, 1.0, &shift);

        let mut sources = Vec::new();
        for s in &spec.sources {
            let cell = grid.cell_of_point(&s.at)?;
            sources.push((cell, s.rate));
        }

        let state = FieldState::initial(grid.n_mech_dofs(), grid.n_cells());
        let next_dt = spec.time.dt0;
        Ok(CaseRunner {
            region_names: spec.sorted_region_names(),
            config: spec.solver.clone(),
            spec: spec.clone(),
            grid,
            materials,
            dirichlet,
            stiffness,
            coupling,
            flow,
            fs_diagonal,
            stabilization,
            static_load,
            sources,
            state,
            steps_done: 0,
            next_dt,
        })
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn materials(&self) -> &MaterialTable {
        &self.materials
    }

    pub fn state(&self) -> &FieldState {
        &self.state
    }

    pub fn stabilization_matrix(&self) -> &SparseMatrix {
        &self.stabilization
    }

    pub fn region_names(&self) -> &[String] {
        &self.region_names
    }

    pub fn region_set(&self, name: &str) -> Result<RegionSet> {
        let ids = self.spec.region_ids();
        let id = ids
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown region '{name}'")))?;
        Ok(RegionSet::from_ids([*id]))
    }

    fn finished(&self) -> bool {
        if let Some(steps) = self.spec.time.steps {
            return self.steps_done >= steps;
        }
        if let Some(end) = self.spec.time.end {
            return self.state.time >= end * (1.0 - 1e-12);
        }
        false
    }

    fn dt_for_next_step(&self) -> f64 {
        let mut dt = self.next_dt;
        if let Some(end) = self.spec.time.end {
            let remaining = end - self.state.time;
            if remaining < dt {
                dt = remaining;
            }
        }
        dt
    }

    /// Assembles the block system for a step of size `dt` starting at the
    /// current state (sources sampled at t + dt, backward Euler).
    pub fn build_system(&self, dt: f64) -> Result<BlockSystem> {
        self.build_system_at(&self.state, dt)
    }

    /// Same as [`build_system`](Self::build_system) for an explicit state,
    /// so external drivers (oracles) can advance their own trajectories.
    pub fn build_system_at(&self, state: &FieldState, dt: f64) -> Result<BlockSystem> {
        let t_next = state.time + dt;
        let mut source = vec![0.0; self.grid.n_cells()];
        for (cell, rate) in &self.sources {
            source[*cell] += rate.eval(t_next);
        }
        let q_p = self.flow.flow_rhs(dt, &state.p_curr, &source)?;
        let c = self.flow.c_matrix(dt)?;

        // Q_u = F + shift - A u^n + B^T p^n, with constrained rows set to
        // the prescribed increment.
        let mut q_u = self.static_load.clone();
        linalg::axpy(&mut q_u, -1.0, &self.stiffness.mul_vec(&state.u_curr));
        linalg::axpy(
            &mut q_u,
            1.0,
            &self.coupling.mul_transpose_vec(&state.p_curr),
        );
        let dim = self.grid.spatial_dim();
        for (node, comp, value) in self.dirichlet.iter() {
            let dof = node * dim + comp;
            q_u[dof] = value - state.u_curr[dof];
        }

        Ok(BlockSystem {
            a: self.stiffness.clone(),
            b: self.coupling.clone(),
            c,
            r: self.fs_diagonal.clone(),
            s: self.stabilization.clone(),
            q_u,
            q_p,
            dt,
            accumulation: self.flow.accumulation.clone(),
            transmissibility: self.flow.transmissibility.clone(),
            ghost_diag: self.flow.ghost_diag.clone(),
            ghost_rhs: self.flow.ghost_rhs.clone(),
            source,
        })
    }

    /// Advances one step; returns None once the schedule is exhausted.
    pub fn advance(&mut self) -> Result<Option<StepResult>> {
        if self.finished() {
            return Ok(None);
        }
        let dt = self.dt_for_next_step();
        let system = self.build_system(dt)?;
        let result = solvers::step(&system, &self.state, &self.config)?;
        self.state = result.state.clone();
        self.steps_done += 1;
        let grown = self.next_dt * self.spec.time.growth;
        self.next_dt = match self.spec.time.dt_max {
            Some(m) => grown.min(m),
            None => grown,
        };
        Ok(Some(result))
    }

    fn step_row(&self, step_index: usize, dt: f64, result: &StepResult) -> Result<StepRow> {
        let mut jump = Vec::new();
        let mut checker = Vec::new();
        for name in &self.region_names {
            let set = self.region_set(name)?;
            let m = crate::diagnostics::oscillation_metrics(&self.grid, &result.state.p_curr, &set)?;
            jump.push(m.jump_energy);
            checker.push(m.checkerboard_projection);
        }
        Ok(StepRow {
            step: step_index,
            time: result.state.time,
            dt,
            scheme: self.config.scheme,
            outer_iterations: result.outer_iterations,
            converged: result.converged,
            residual_ratio: result.residual_ratio(),
            splitting_error_norm: result.splitting_error_norm,
            jump_energy: jump,
            checkerboard: checker,
            mass_defect: result.mass.defect,
            wall_time: result.wall_time,
        })
    }
}

/// A completed run: the report plus the per-step results (with fields).
pub struct CaseRun {
    pub report: RunReport,
    pub steps: Vec<StepResult>,
    pub final_state: FieldState,
}

/// Runs a case to completion.
pub fn run_case(spec: &CaseSpec) -> Result<CaseRun> {
    run_case_with(spec, RunOptions::default())
}

pub fn run_case_with(spec: &CaseSpec, opts: RunOptions) -> Result<CaseRun> {
    let mut runner = CaseRunner::new(spec)?;
    let mut rows = Vec::new();
    let mut steps = Vec::new();
    let mut step_index = 0;
    while let Some(result) = {
        let dt = runner.dt_for_next_step();
        let r = runner.advance()?;
        if let Some(result) = &r {
            step_index += 1;
            rows.push(runner.step_row(step_index, dt, result)?);
        }
        r
    } {
        if opts.fail_on_nonconvergence && !result.converged {
            return Err(Error::NonConvergence {
                step: step_index,
                iterations: result.outer_iterations,
                residual_ratio: result.residual_ratio(),
            });
        }
        steps.push(result);
    }
    let final_state = runner.state.clone();
    Ok(CaseRun {
        report: RunReport {
            case_name: spec.name.clone(),
            scheme: spec.solver.scheme,
            region_names: runner.region_names.clone(),
            rows,
        },
        steps,
        final_state,
    })
}

/// One row of a sweep result.
#[derive(Debug, Clone)]
pub struct SweepRow {
    /// One label per axis, in axis order.
    pub values: Vec<String>,
    pub steps: usize,
    /// Total outer iterations across all steps.
    pub outer_iterations: usize,
    pub converged: bool,
    /// Final-step oscillation metrics per region (sorted names).
    pub jump_energy: Vec<f64>,
    pub checkerboard: Vec<f64>,
    /// "ok", "nonconverged", or an error message.
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub case_name: String,
    pub axis_names: Vec<String>,
    pub region_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// Runs the cross product of the sweep axes. Individual point failures are
/// recorded in their rows; the sweep continues. `workers` bounds the
/// number of concurrently executing points (results are ordered by point
/// index regardless).
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepReport> {
    spec.base.validate()?;
    let n = spec.n_points();
    if n > spec.cap {
        return Err(Error::invalid(format!(
            "sweep has {n} points, above the cap of {}",
            spec.cap
        )));
    }
    let axis_lens: Vec<usize> = spec.axes.iter().map(|a| a.len().max(1)).collect();

    let point_spec = |flat: usize| -> (Vec<String>, Result<CaseSpec>) {
        let mut labels = Vec::with_capacity(spec.axes.len());
        let mut case = spec.base.clone();
        let mut rem = flat;
        let mut status = Ok(());
        for (axis, &len) in spec.axes.iter().zip(&axis_lens) {
            let i = rem % len;
            rem /= len;
            labels.push(axis.value_label(i));
            if status.is_ok() {
                status = axis.apply(&mut case, i);
            }
        }
        (labels, status.map(|_| case))
    };

    let run_point = |flat: usize| -> SweepRow {
        let (values, case) = point_spec(flat);
        match case.and_then(|c| {
            run_case_with(
                &c,
                RunOptions {
                    fail_on_nonconvergence: false,
                },
            )
        }) {
            Ok(run) => {
                let converged = run.steps.iter().all(|s| s.converged);
                let last = run.report.rows.last();
                SweepRow {
                    values,
                    steps: run.steps.len(),
                    outer_iterations: run.steps.iter().map(|s| s.outer_iterations).sum(),
                    converged,
                    jump_energy: last.map(|r| r.jump_energy.clone()).unwrap_or_default(),
                    checkerboard: last.map(|r| r.checkerboard.clone()).unwrap_or_default(),
                    status: if converged { "ok" } else { "nonconverged" }.into(),
                }
            }
            Err(e) => SweepRow {
                values,
                steps: 0,
                outer_iterations: 0,
                converged: false,
                jump_energy: Vec::new(),
                checkerboard: Vec::new(),
                status: format!("error: {e}"),
            },
        }
    };

    let rows: Vec<SweepRow> = if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
        pool.install(|| (0..n).into_par_iter().map(run_point).collect())
    } else {
        (0..n).map(run_point).collect()
    };

    Ok(SweepReport {
        case_name: spec.base.name.clone(),
        axis_names: spec.axes.iter().map(|a| a.name()).collect(),
        region_names: spec.base.sorted_region_names(),
        rows,
    })
}

fn material_spec(
    young: Option<f64>,
    bulk: Option<f64>,
    nu: f64,
    b: f64,
    inv_m: f64,
    k: f64,
    mu: f64,
) -> MaterialSpec {
    MaterialSpec {
        young_modulus: young,
        bulk_modulus: bulk,
        poisson_ratio: nu,
        biot_coefficient: b,
        inv_biot_modulus: inv_m,
        permeability: k,
        viscosity: mu,
        solid_density: 0.0,
        fluid_density: 0.0,
    }
}

/// Undrained Barry-Mercer setup: unit square, 10x10 grid, E = 10 kPa,
/// nu = 0.2, incompressible unit-viscosity fluid, k = 1e-12 m^2, sliding
/// supports on all sides with a zero-pressure boundary, and a volumetric
/// source sin(pi t / 100) m^3/s in the cell containing (0.35, 0.15),
/// advanced with 10 steps of 10 s.
pub fn barry_mercer_undrained() -> CaseSpec {
    CaseSpec {
        name: "barry-mercer".into(),
        grid: GridSpec {
            dims: vec![10, 10],
            extent: vec![1.0, 1.0],
        },
        regions: vec![RegionSpec {
            name: "domain".into(),
            layers: None,
            material: material_spec(Some(1.0e4), None, 0.2, 1.0, 0.0, 1.0e-12, 1.0),
        }],
        bc: BcSpec {
            mech: vec![MechBcSpec {
                side: SideSpec::All,
                kind: MechBcKind::Roller,
            }],
            flow: vec![FlowBcSpec {
                side: SideSpec::All,
                pressure: 0.0,
            }],
        },
        sources: vec![SourceSpec {
            at: vec![0.35, 0.15],
            rate: RateExpr::sinusoid(1.0, std::f64::consts::PI / 100.0, 0.0),
        }],
        time: TimeSpec {
            dt0: 10.0,
            growth: 1.0,
            dt_max: None,
            steps: Some(10),
            end: None,
        },
        solver: SolverConfig::new(Scheme::Monolithic),
        stabilization: default_stab(),
        gravity: [0.0; 3],
    }
}

/// Barry-Mercer with the permeability raised to 1e-8 m^2, making the
/// problem drained; used as the cross-scheme equivalence oracle.
pub fn barry_mercer_drained() -> CaseSpec {
    let mut spec = barry_mercer_undrained();
    spec.name = "barry-mercer-drained".into();
    spec.regions[0].material.permeability = 1.0e-8;
    spec
}

/// Synthetic layered column: a 10x10x15 box with a five-layer reservoir
/// (k = 9.8e-13 m^2) sandwiched between five-layer burdens whose
/// permeability spans drained to undrained (default 9.8e-20 m^2).
/// Skeleton bulk modulus 5 GPa, nu = 0.25, b = 1, slightly compressible
/// fluid (1/M = 1e-10 1/Pa) everywhere. Sliding supports on all sides
/// except a traction-free top, sealed flow boundaries, and constant
/// injection into a central reservoir cell.
pub fn layered_column_undrained() -> CaseSpec {
    let burden = material_spec(None, Some(5.0e9), 0.25, 1.0, 1.0e-10, 9.8e-20, 1.0e-3);
    let reservoir = material_spec(None, Some(5.0e9), 0.25, 1.0, 1.0e-10, 9.8e-13, 1.0e-3);
    let mut solver = SolverConfig::new(Scheme::FsIter);
    solver.rel_tol = 1e-8;
    CaseSpec {
        name: "layered-column".into(),
        grid: GridSpec {
            dims: vec![10, 10, 15],
            extent: vec![10.0, 10.0, 15.0],
        },
        regions: vec![
            RegionSpec {
                name: "burden".into(),
                layers: Some(vec![[0, 4], [10, 14]]),
                material: burden,
            },
            RegionSpec {
                name: "reservoir".into(),
                layers: Some(vec![[5, 9]]),
                material: reservoir,
            },
        ],
        bc: BcSpec {
            mech: vec![
                MechBcSpec {
                    side: SideSpec::Xmin,
                    kind: MechBcKind::Roller,
                },
                MechBcSpec {
                    side: SideSpec::Xmax,
                    kind: MechBcKind::Roller,
                },
                MechBcSpec {
                    side: SideSpec::Ymin,
                    kind: MechBcKind::Roller,
                },
                MechBcSpec {
                    side: SideSpec::Ymax,
                    kind: MechBcKind::Roller,
                },
                MechBcSpec {
                    side: SideSpec::Zmin,
                    kind: MechBcKind::Roller,
                },
            ],
            flow: vec![],
        },
        sources: vec![SourceSpec {
            at: vec![5.5, 5.5, 7.5],
            rate: RateExpr::Constant(1.0e-2),
        }],
        time: TimeSpec {
            dt0: 86400.0,
            growth: 2.0,
            dt_max: Some(30.0 * 86400.0),
            steps: Some(10),
            end: None,
        },
        solver,
        stabilization: default_stab(),
        gravity: [0.0; 3],
    }
}

/// Built-in case lookup for the CLI.
pub fn builtin_case(name: &str) -> Result<CaseSpec> {
    match name {
        "barry-mercer" => Ok(barry_mercer_undrained()),
        "barry-mercer-drained" => Ok(barry_mercer_drained()),
        "layered-column" => Ok(layered_column_undrained()),
        other => Err(Error::invalid(format!(
            "unknown builtin case '{other}' (available: {})",
            builtin_names().join(", ")
        ))),
    }
}

pub fn builtin_names() -> Vec<&'static str> {
    vec!["barry-mercer", "barry-mercer-drained", "layered-column"]
}
