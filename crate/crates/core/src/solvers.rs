//! Time-stepping schemes for the coupled system: monolithic (one saddle
//! solve per step), fixed-stress without sequential iterations (one flow
//! solve with extrapolated mean total stress, then one mechanics solve), and
//! the iterated fixed-stress split, which repeats flow/mechanics passes
//! until the fully implicit residual is reduced below tolerance.
//!
//! The problem is linear, so each "flow solve" and "mechanics solve" is one
//! direct factorization-backsolve; factorizations are done once per step and
//! reused across outer iterations.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fvm::BlockSystem;
use crate::grid::StructuredGrid;
use crate::linalg::{self, DirectFactor, SparseBuilder};
use crate::materials::MaterialTable;

/// Coupling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Monolithic,
    FsNoniter,
    FsIter,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Monolithic => "monolithic",
            Scheme::FsNoniter => "fs_noniter",
            Scheme::FsIter => "fs_iter",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monolithic" => Ok(Scheme::Monolithic),
            "fs_noniter" => Ok(Scheme::FsNoniter),
            "fs_iter" => Ok(Scheme::FsIter),
            other => Err(Error::invalid(format!(
                "unknown scheme '{other}' (expected monolithic, fs_noniter, or fs_iter)"
            ))),
        }
    }
}

/// Solver parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub scheme: Scheme,
    /// Fixed-stress coefficient; the split holds K_dr div(u) - alpha b p
    /// constant between passes. Convergence of the iterated scheme is
    /// guaranteed for alpha > 1/2.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Outer-iteration tolerance, relative to the initial coupled residual.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer_iters: usize,
    /// When set, run exactly this many outer iterations, ignoring the
    /// tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_iter_count: Option<usize>,
    /// Backward-error contract for the direct solves (enforced in linalg).
    #[serde(default = "default_linear_tol")]
    pub linear_solver_tol: f64,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_rel_tol() -> f64 {
    1e-8
}
fn default_max_outer() -> usize {
    1000
}
fn default_linear_tol() -> f64 {
    crate::linalg::LINEAR_SOLVER_TOL
}

impl SolverConfig {
    pub fn new(scheme: Scheme) -> Self {
        SolverConfig {
            scheme,
            alpha: default_alpha(),
            rel_tol: default_rel_tol(),
            max_outer_iters: default_max_outer(),
            fixed_iter_count: None,
            linear_solver_tol: default_linear_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid("rel_tol must be > 0"));
        }
        if self.scheme != Scheme::Monolithic && !(self.alpha > 0.0) {
            return Err(Error::invalid(
                "fixed-stress schemes need alpha > 0 (the split degenerates at alpha = 0)",
            ));
        }
        Ok(())
    }
}

/// Displacement and pressure fields at three consecutive time levels.
/// After a step, `*_curr` holds level n+1, `*_prev` level n, and `*_prev2`
/// level n-1 (populated once step_index >= 1).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u_prev2: Option<Vec<f64>>,
    pub u_prev: Vec<f64>,
    pub u_curr: Vec<f64>,
    pub p_prev2: Option<Vec<f64>>,
    pub p_prev: Vec<f64>,
    pub p_curr: Vec<f64>,
    /// Time of the `*_curr` level (s).
    pub time: f64,
    /// Number of completed steps.
    pub step_index: usize,
}

impl FieldState {
    pub fn initial(n_u: usize, n_p: usize) -> Self {
        FieldState {
            u_prev2: None,
            u_prev: vec![0.0; n_u],
            u_curr: vec![0.0; n_u],
            p_prev2: None,
            p_prev: vec![0.0; n_p],
            p_curr: vec![0.0; n_p],
            time: 0.0,
            step_index: 0,
        }
    }

    /// Rotates histories and installs the new level from increments.
    pub fn advanced(&self, du: &[f64], dp: &[f64], dt: f64) -> FieldState {
        FieldState {
            u_prev2: Some(self.u_prev.clone()),
            u_prev: self.u_curr.clone(),
            u_curr: linalg::add(&self.u_curr, du),
            p_prev2: Some(self.p_prev.clone()),
            p_prev: self.p_curr.clone(),
            p_curr: linalg::add(&self.p_curr, dp),
            time: self.time + dt,
            step_index: self.step_index + 1,
        }
    }

    /// Increment of the previous step (u^n - u^{n-1}); zero before the
    /// first step by the initialization convention.
    pub fn last_increment_u(&self) -> Vec<f64> {
        linalg::sub(&self.u_curr, &self.u_prev)
    }

    pub fn last_increment_p(&self) -> Vec<f64> {
        linalg::sub(&self.p_curr, &self.p_prev)
    }
}

/// Global mass bookkeeping of one step: every term of the discrete mass
/// balance the scheme committed to, summed over cells (m^3). `defect` is
/// accumulation + flux_out + stabilization - source and vanishes to solver
/// precision for a consistent assembly. For fixed-stress passes the
/// accumulation uses the lagged coupling divergence and the R increment
/// bookkeeping, matching the equation those passes actually solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassAudit {
    pub accumulation: f64,
    pub flux_out: f64,
    pub stabilization: f64,
    pub source: f64,
    pub defect: f64,
}

/// Outcome of one time step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: FieldState,
    pub outer_iterations: usize,
    /// Coupled residual per outer iteration, starting with the initial
    /// residual of the step.
    pub residual_history: Vec<f64>,
    /// Norm of the splitting-error vector committed by the step (second
    /// differences for the non-iterated split, last iterate difference for
    /// the iterated one; diagnostic second-difference form for monolithic).
    pub splitting_error_norm: f64,
    pub wall_time: f64,
    pub converged: bool,
    pub mass: MassAudit,
}

impl StepResult {
    /// Final residual over initial residual (0 when the initial residual
    /// vanishes).
    pub fn residual_ratio(&self) -> f64 {
        let first = self.residual_history.first().copied().unwrap_or(0.0);
        let last = self.residual_history.last().copied().unwrap_or(0.0);
        if first > 0.0 {
            last / first
        } else {
            0.0
        }
    }
}

/// Euclidean norm of the stacked fully implicit residual of a candidate
/// (u, p) for the step from `state` (which holds level n in `*_curr`):
/// mechanics row Q_u + B^T dp - A du and mass row Q_p - B du - (C+S) dp.
/// The fixed-stress diagonal R is splitting machinery and is excluded.
pub fn coupled_residual(
    system: &BlockSystem,
    state: &FieldState,
    u_candidate: &[f64],
    p_candidate: &[f64],
) -> f64 {
    let du = linalg::sub(u_candidate, &state.u_curr);
    let dp = linalg::sub(p_candidate, &state.p_curr);
    let (ru, rp) = residual_vectors(system, &du, &dp);
    (linalg::norm2(&ru).powi(2) + linalg::norm2(&rp).powi(2)).sqrt()
}

/// Fully implicit residual rows for given increments: mechanics and mass.
pub fn residual_vectors(system: &BlockSystem, du: &[f64], dp: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ru = system.q_u.clone();
    linalg::axpy(&mut ru, 1.0, &system.b.mul_transpose_vec(dp));
    linalg::axpy(&mut ru, -1.0, &system.a.mul_vec(du));

    let mut rp = system.q_p.clone();
    linalg::axpy(&mut rp, -1.0, &system.b.mul_vec(du));
    linalg::axpy(&mut rp, -1.0, &system.c.mul_vec(dp));
    linalg::axpy(&mut rp, -1.0, &system.s.mul_vec(dp));
    (ru, rp)
}

/// Splitting-error vector of the non-iterated fixed-stress step in the
/// rearranged saddle form: -B (u^{n+1} - 2u^n + u^{n-1}) +
/// R (p^{n+1} - 2p^n + p^{n-1}), evaluated on a post-step state.
pub fn splitting_error_vector(system: &BlockSystem, state: &FieldState) -> Result<Vec<f64>> {
    let (u2, p2) = match (&state.u_prev2, &state.p_prev2) {
        (Some(u2), Some(p2)) => (u2, p2),
        _ => {
            return Err(Error::invalid(
                "splitting_error_vector needs two history levels (state.step_index >= 1)",
            ))
        }
    };
    let ddu: Vec<f64> = state
        .u_curr
        .iter()
        .zip(&state.u_prev)
        .zip(u2)
        .map(|((c, p), p2)| c - 2.0 * p + p2)
        .collect();
    let ddp: Vec<f64> = state
        .p_curr
        .iter()
        .zip(&state.p_prev)
        .zip(p2)
        .map(|((c, p), p2)| c - 2.0 * p + p2)
        .collect();
    Ok(splitting_error_from_differences(system, &ddu, &ddp))
}

/// -B du_diff + R dp_diff: shared kernel of the non-iterated (second time
/// differences) and iterated (consecutive iterate differences) forms.
pub fn splitting_error_from_differences(
    system: &BlockSystem,
    du_diff: &[f64],
    dp_diff: &[f64],
) -> Vec<f64> {
    let mut e = system.b.mul_vec(du_diff);
    for v in e.iter_mut() {
        *v = -*v;
    }
    for (ei, (r, d)) in e.iter_mut().zip(system.r.iter().zip(dp_diff)) {
        *ei += r * d;
    }
    e
}

/// Mean total volumetric stress per cell: K_dr <div u> - b p.
pub fn mean_total_stress(
    grid: &StructuredGrid,
    materials: &MaterialTable,
    state: &FieldState,
) -> Vec<f64> {
    let div = crate::fem::cell_mean_divergence(grid, &state.u_curr);
    (0..grid.n_cells())
        .map(|k| {
            let m = materials.get(grid.region_of(k));
            m.derived_moduli().bulk_drained * div[k] - m.biot_coefficient * state.p_curr[k]
        })
        .collect()
}

/// Lag increments a fixed-stress flow pass used in place of the new ones;
/// `None` audits the fully implicit identity (monolithic).
fn mass_audit(
    system: &BlockSystem,
    state: &FieldState,
    du: &[f64],
    dp: &[f64],
    lag: Option<(&[f64], &[f64])>,
) -> MassAudit {
    let p_new = linalg::add(&state.p_curr, dp);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // Reported components use column-sum ordering for the matrix sums; the
    // analytic column sums of B, T, and S vanish (divergence theorem, flux
    // antisymmetry, jump antisymmetry), so this ordering avoids the large
    // cancellation of first forming the matvec.
    let b_colsums = system.b.column_sums();
    let t_colsums = system.transmissibility.column_sums();
    let s_colsums = system.s.column_sums();

    let mut acc = dot(&system.accumulation, dp);
    match lag {
        Some((du_lag, dp_lag)) => {
            acc += dot(&b_colsums, du_lag);
            for ((r, d), dl) in system.r.iter().zip(dp).zip(dp_lag) {
                acc += r * (d - dl);
            }
        }
        None => {
            acc += dot(&b_colsums, du);
        }
    }
    let flux_out = system.dt
        * (dot(&t_colsums, &p_new) + dot(&system.ghost_diag, &p_new)
            - system.ghost_rhs.iter().sum::<f64>());
    let stabilization = dot(&s_colsums, dp);
    let source = system.dt * system.source.iter().sum::<f64>();

    // The defect sums the per-cell residual of the mass equation the scheme
    // actually solved (fully implicit row for monolithic, the lagged
    // fixed-stress row otherwise), so it is bounded by the direct solver's
    // backward error instead of by reconstruction noise.
    let mut rows = system.c.mul_vec(dp);
    linalg::axpy(&mut rows, 1.0, &system.s.mul_vec(dp));
    linalg::axpy(&mut rows, -1.0, &system.q_p);
    match lag {
        Some((du_lag, dp_lag)) => {
            linalg::axpy(&mut rows, 1.0, &system.b.mul_vec(du_lag));
            for (row, ((r, d), dl)) in rows.iter_mut().zip(system.r.iter().zip(dp).zip(dp_lag)) {
                *row += r * (d - dl);
            }
        }
        None => {
            linalg::axpy(&mut rows, 1.0, &system.b.mul_vec(du));
        }
    }
    let defect = rows.iter().sum::<f64>();

    MassAudit {
        accumulation: acc,
        flux_out,
        stabilization,
        source,
        defect,
    }
}

/// One monolithic step: a single direct solve of the stabilized saddle
/// system [[A, -B^T], [B, C+S]] [du; dp] = [Q_u; Q_p]. The pressure dofs
/// are diagonally rescaled before factorization so the coupling blocks land
/// at the stiffness scale.
pub fn step_monolithic(system: &BlockSystem, state: &FieldState) -> Result<StepResult> {
    let t0 = Instant::now();
    let n_u = system.n_mech();
    let n_p = system.n_pressure();

    let b_max = system.b.max_abs();
    let scale = if b_max > 0.0 {
        system.a.max_abs() / b_max
    } else {
        1.0
    };

    let mut builder = SparseBuilder::new(n_u + n_p, n_u + n_p);
    for (i, j, v) in system.a.iter() {
        builder.add(i, j, v);
    }
    for (k, j, v) in system.b.iter() {
        builder.add(j, n_u + k, -v * scale);
        builder.add(n_u + k, j, v * scale);
    }
    let cs = system.c_plus_s();
    for (k, l, v) in cs.iter() {
        builder.add(n_u + k, n_u + l, v * scale * scale);
    }
    let mut rhs = Vec::with_capacity(n_u + n_p);
    rhs.extend_from_slice(&system.q_u);
    rhs.extend(system.q_p.iter().map(|v| v * scale));

    let factor = DirectFactor::lu(builder.finalize(), "monolithic saddle system")?;
    let sol = factor.solve(&rhs)?;
    let du = sol[..n_u].to_vec();
    let dp: Vec<f64> = sol[n_u..].iter().map(|v| v * scale).collect();

    let r0 = coupled_residual(system, state, &state.u_curr, &state.p_curr);
    let u_new = linalg::add(&state.u_curr, &du);
    let p_new = linalg::add(&state.p_curr, &dp);
    let r_final = coupled_residual(system, state, &u_new, &p_new);

    let mass = mass_audit(system, state, &du, &dp, None);
    let new_state = state.advanced(&du, &dp, system.dt);
    let splitting_error_norm = splitting_error_vector(system, &new_state)
        .map(|e| linalg::norm2(&e))
        .unwrap_or(0.0);

    Ok(StepResult {
        state: new_state,
        outer_iterations: 1,
        residual_history: vec![r0, r_final],
        splitting_error_norm,
        wall_time: t0.elapsed().as_secs_f64(),
        converged: true,
        mass,
    })
}

/// One non-iterated fixed-stress step: flow with the mean total stress
/// increment extrapolated from the previous step, then mechanics with the
/// updated pressure. Missing history (the first step) degenerates to a
/// zero-increment extrapolation.
pub fn step_fs_noniter(system: &BlockSystem, state: &FieldState) -> Result<StepResult> {
    let t0 = Instant::now();
    let du_lag = state.last_increment_u();
    let dp_lag = state.last_increment_p();

    // (C + R + S) dp = Q_p - B (u^n - u^{n-1}) + R (p^n - p^{n-1})
    let mut rhs_flow = system.q_p.clone();
    linalg::axpy(&mut rhs_flow, -1.0, &system.b.mul_vec(&du_lag));
    for (r, (rk, d)) in rhs_flow.iter_mut().zip(system.r.iter().zip(&dp_lag)) {
        *r += rk * d;
    }
    let flow = DirectFactor::cholesky_or_lu(system.fs_flow_matrix(), "fixed-stress flow block")?;
    let dp = flow.solve(&rhs_flow)?;

    // A du = Q_u + B^T dp
    let mut rhs_mech = system.q_u.clone();
    linalg::axpy(&mut rhs_mech, 1.0, &system.b.mul_transpose_vec(&dp));
    let mech = DirectFactor::cholesky(system.a.clone(), "mechanics stiffness")?;
    let du = mech.solve(&rhs_mech)?;

    let r0 = coupled_residual(system, state, &state.u_curr, &state.p_curr);
    let u_new = linalg::add(&state.u_curr, &du);
    let p_new = linalg::add(&state.p_curr, &dp);
    let r_final = coupled_residual(system, state, &u_new, &p_new);

    let mass = mass_audit(system, state, &du, &dp, Some((&du_lag, &dp_lag)));
    let new_state = state.advanced(&du, &dp, system.dt);
    let e = splitting_error_vector(system, &new_state)?;

    Ok(StepResult {
        state: new_state,
        outer_iterations: 1,
        residual_history: vec![r0, r_final],
        splitting_error_norm: linalg::norm2(&e),
        wall_time: t0.elapsed().as_secs_f64(),
        converged: true,
        mass,
    })
}

/// One iterated fixed-stress step: starting from the converged previous
/// level (zero increments), alternate flow solves with the mean total
/// stress frozen at the previous iterate and mechanics solves with the new
/// pressure, until the coupled residual falls below rel_tol times its
/// initial value (or for exactly `fixed_iter_count` iterations when set).
pub fn step_fs_iter(
    system: &BlockSystem,
    state: &FieldState,
    config: &SolverConfig,
) -> Result<StepResult> {
    if !(config.alpha > 0.0) {
        return Err(Error::invalid("fs_iter needs alpha > 0"));
    }
    if !(config.rel_tol > 0.0) {
        return Err(Error::invalid("rel_tol must be > 0"));
    }
    let t0 = Instant::now();
    let n_u = system.n_mech();
    let n_p = system.n_pressure();

    let flow = DirectFactor::cholesky_or_lu(system.fs_flow_matrix(), "fixed-stress flow block")?;
    let mech = DirectFactor::cholesky(system.a.clone(), "mechanics stiffness")?;

    let r0 = coupled_residual(system, state, &state.u_curr, &state.p_curr);
    let mut history = vec![r0];
    if r0 == 0.0 {
        let zero_u = vec![0.0; n_u];
        let zero_p = vec![0.0; n_p];
        let mass = mass_audit(system, state, &zero_u, &zero_p, None);
        return Ok(StepResult {
            state: state.advanced(&zero_u, &zero_p, system.dt),
            outer_iterations: 0,
            residual_history: history,
            splitting_error_norm: 0.0,
            wall_time: t0.elapsed().as_secs_f64(),
            converged: true,
            mass,
        });
    }

    let target = config.rel_tol * r0;
    let limit = config.fixed_iter_count.unwrap_or(config.max_outer_iters);
    let mut du = vec![0.0; n_u];
    let mut dp = vec![0.0; n_p];
    let mut du_lag = du.clone();
    let mut dp_lag = dp.clone();
    let mut converged = false;
    let mut splitting_error_norm = 0.0;
    let mut iterations = 0;

    for _ in 0..limit {
        du_lag.copy_from_slice(&du);
        dp_lag.copy_from_slice(&dp);

        // Flow with the stress increment frozen at iterate k:
        // (C + R + S) dp_{k+1} = Q_p - B du_k + R dp_k.
        let mut rhs_flow = system.q_p.clone();
        linalg::axpy(&mut rhs_flow, -1.0, &system.b.mul_vec(&du));
        for (r, (rk, d)) in rhs_flow.iter_mut().zip(system.r.iter().zip(&dp)) {
            *r += rk * d;
        }
        let dp_new = flow.solve(&rhs_flow)?;

        let mut rhs_mech = system.q_u.clone();
        linalg::axpy(&mut rhs_mech, 1.0, &system.b.mul_transpose_vec(&dp_new));
        let du_new = mech.solve(&rhs_mech)?;

        let e = splitting_error_from_differences(
            system,
            &linalg::sub(&du_new, &du),
            &linalg::sub(&dp_new, &dp),
        );
        splitting_error_norm = linalg::norm2(&e);

        du = du_new;
        dp = dp_new;
        iterations += 1;

        let u_cand = linalg::add(&state.u_curr, &du);
        let p_cand = linalg::add(&state.p_curr, &dp);
        let residual = coupled_residual(system, state, &u_cand, &p_cand);
        history.push(residual);

        if !residual.is_finite() {
            break;
        }
        if config.fixed_iter_count.is_none() && residual <= target {
            converged = true;
            break;
        }
    }
    if config.fixed_iter_count.is_some() && history.last().map_or(false, |r| r.is_finite()) {
        // Ran exactly the requested number of iterations.
        converged = true;
    }

    let mass = mass_audit(system, state, &du, &dp, Some((&du_lag, &dp_lag)));
    let new_state = state.advanced(&du, &dp, system.dt);
    Ok(StepResult {
        state: new_state,
        outer_iterations: iterations,
        residual_history: history,
        splitting_error_norm,
        wall_time: t0.elapsed().as_secs_f64(),
        converged,
        mass,
    })
}

/// Dispatches one step with the configured scheme.
pub fn step(system: &BlockSystem, state: &FieldState, config: &SolverConfig) -> Result<StepResult> {
    config.validate()?;
    match config.scheme {
        Scheme::Monolithic => step_monolithic(system, state),
        Scheme::FsNoniter => step_fs_noniter(system, state),
        Scheme::FsIter => step_fs_iter(system, state, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fvm::BlockSystem;
    use crate::grid::build_grid;
    use crate::linalg::SparseMatrix;
    use crate::materials::{MaterialRegion, MaterialTable};

    fn tiny_system() -> BlockSystem {
        // 1 mech dof, 2 cells: hand-built blocks.
        let mut a = crate::linalg::SparseBuilder::new(1, 1);
        a.add(0, 0, 2.0);
        let mut b = crate::linalg::SparseBuilder::new(2, 1);
        b.add(0, 0, 0.5);
        b.add(1, 0, -0.5);
        let mut c = crate::linalg::SparseBuilder::new(2, 2);
        c.add(0, 0, 1.0);
        c.add(1, 1, 1.0);
        BlockSystem {
            a: a.finalize(),
            b: b.finalize(),
            c: c.finalize(),
            r: vec![0.3, 0.3],
            s: SparseMatrix::zero(2, 2),
            q_u: vec![1.0],
            q_p: vec![0.5, -0.25],
            dt: 1.0,
            accumulation: vec![1.0, 1.0],
            transmissibility: SparseMatrix::zero(2, 2),
            ghost_diag: vec![0.0, 0.0],
            ghost_rhs: vec![0.0, 0.0],
            source: vec![0.5, -0.25],
        }
    }

    #[test]
    fn zero_forcing_zero_increment() {
        let mut sys = tiny_system();
        sys.q_u = vec![0.0];
        sys.q_p = vec![0.0, 0.0];
        sys.source = vec![0.0, 0.0];
        let state = FieldState::initial(1, 2);
        for result in [
            step_monolithic(&sys, &state).unwrap(),
            step_fs_noniter(&sys, &state).unwrap(),
            step_fs_iter(&sys, &state, &SolverConfig::new(Scheme::FsIter)).unwrap(),
        ] {
            assert!(crate::linalg::inf_norm(&result.state.u_curr) < 1e-14);
            assert!(crate::linalg::inf_norm(&result.state.p_curr) < 1e-14);
            assert!(result.converged);
            assert!(!result.residual_history.is_empty());
        }
    }

    #[test]
    fn zero_candidate_residual_is_rhs_norm() {
        let sys = tiny_system();
        let state = FieldState::initial(1, 2);
        let r = coupled_residual(&sys, &state, &state.u_curr, &state.p_curr);
        let expect = (1.0f64.powi(2) + 0.5f64.powi(2) + 0.25f64.powi(2)).sqrt();
        assert!((r - expect).abs() < 1e-15);
    }

    #[test]
    fn monolithic_solution_has_tiny_residual() {
        let sys = tiny_system();
        let state = FieldState::initial(1, 2);
        let res = step_monolithic(&sys, &state).unwrap();
        let r = coupled_residual(&sys, &state, &res.state.u_curr, &res.state.p_curr);
        assert!(r < 1e-12);
        assert!(res.mass.defect.abs() < 1e-14);
    }

    #[test]
    fn fs_iter_matches_monolithic_on_tiny_system() {
        let sys = tiny_system();
        let state = FieldState::initial(1, 2);
        let mono = step_monolithic(&sys, &state).unwrap();
        let mut cfg = SolverConfig::new(Scheme::FsIter);
        cfg.rel_tol = 1e-12;
        let fs = step_fs_iter(&sys, &state, &cfg).unwrap();
        assert!(fs.converged);
        for (a, b) in fs.state.u_curr.iter().zip(&mono.state.u_curr) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in fs.state.p_curr.iter().zip(&mono.state.p_curr) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fs_iter_residual_equals_splitting_error_norm() {
        let sys = tiny_system();
        let state = FieldState::initial(1, 2);
        let mut cfg = SolverConfig::new(Scheme::FsIter);
        cfg.fixed_iter_count = Some(3);
        let res = step_fs_iter(&sys, &state, &cfg).unwrap();
        // Mechanics rows are solved exactly, so the coupled residual is the
        // splitting-error norm of the last iterate pair.
        let last = *res.residual_history.last().unwrap();
        assert!(
            (last - res.splitting_error_norm).abs() <= 1e-12 * last.max(1e-30),
            "residual {last} vs splitting error {}",
            res.splitting_error_norm
        );
    }

    #[test]
    fn fs_schemes_conserve_their_own_mass_identity() {
        let sys = tiny_system();
        let state = FieldState::initial(1, 2);
        let non = step_fs_noniter(&sys, &state).unwrap();
        assert!(non.mass.defect.abs() < 1e-14);
        let mut cfg = SolverConfig::new(Scheme::FsIter);
        cfg.fixed_iter_count = Some(2);
        let it = step_fs_iter(&sys, &state, &cfg).unwrap();
        assert!(it.mass.defect.abs() < 1e-14);
    }

    #[test]
    fn fixed_iter_count_is_exact() {
        let sys = tiny_system();
        let state = FieldState::initial(1, 2);
        let mut cfg = SolverConfig::new(Scheme::FsIter);
        cfg.fixed_iter_count = Some(7);
        let res = step_fs_iter(&sys, &state, &cfg).unwrap();
        assert_eq!(res.outer_iterations, 7);
        assert_eq!(res.residual_history.len(), 8);
    }

    #[test]
    fn nonconvergence_reported_not_crashed() {
        let sys = tiny_system();
        let state = FieldState::initial(1, 2);
        let mut cfg = SolverConfig::new(Scheme::FsIter);
        cfg.rel_tol = 1e-30;
        cfg.max_outer_iters = 2;
        let res = step_fs_iter(&sys, &state, &cfg).unwrap();
        assert!(!res.converged);
        assert_eq!(res.outer_iterations, 2);
    }

    #[test]
    fn alpha_zero_rejected_for_fs() {
        let mut cfg = SolverConfig::new(Scheme::FsIter);
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::new(Scheme::Monolithic);
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn splitting_error_vanishes_for_linear_in_time_states() {
        let sys = tiny_system();
        // u and p linear in step index: second differences vanish.
        let state = FieldState {
            u_prev2: Some(vec![0.0]),
            u_prev: vec![1.0],
            u_curr: vec![2.0],
            p_prev2: Some(vec![0.0, 0.0]),
            p_prev: vec![0.5, -0.5],
            p_curr: vec![1.0, -1.0],
            time: 2.0,
            step_index: 2,
        };
        let e = splitting_error_vector(&sys, &state).unwrap();
        assert!(crate::linalg::inf_norm(&e) < 1e-15);
    }

    #[test]
    fn splitting_error_needs_history() {
        let sys = tiny_system();
        let state = FieldState::initial(1, 2);
        assert!(splitting_error_vector(&sys, &state).is_err());
    }

    #[test]
    fn mean_stress_pure_pressure() {
        let g = build_grid(&[2, 2], &[1.0, 1.0], |_| 0).unwrap();
        let mats = MaterialTable::new(vec![
            MaterialRegion::new(1.0e4, 0.2, 1.0, 0.0, 1e-12, 1.0).unwrap()
        ])
        .unwrap();
        let mut state = FieldState::initial(g.n_mech_dofs(), g.n_cells());
        state.p_curr = vec![7.0; 4];
        let sv = mean_total_stress(&g, &mats, &state);
        for v in sv {
            assert!((v + 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_stress_pure_dilation() {
        // 3D: u = eps0 (x, y, z), p = 0 => sigma_v = K_dr 3 eps0.
        let g = build_grid(&[2, 2, 2], &[1.0, 1.0, 1.0], |_| 0).unwrap();
        let mats = MaterialTable::new(vec![
            MaterialRegion::new(9.0, 0.25, 1.0, 0.0, 1e-12, 1.0).unwrap()
        ])
        .unwrap();
        let kdr = mats.get(0).derived_moduli().bulk_drained;
        let eps0 = 1e-3;
        let mut state = FieldState::initial(g.n_mech_dofs(), g.n_cells());
        for n in 0..g.n_nodes() {
            let p = g.node_position(n);
            for c in 0..3 {
                state.u_curr[3 * n + c] = eps0 * p[c];
            }
        }
        let sv = mean_total_stress(&g, &mats, &state);
        for v in sv {
            assert!((v - kdr * 3.0 * eps0).abs() < 1e-12 * kdr);
        }

        // 2D plane strain: u = eps0 (x, y) => tr(eps) = 2 eps0,
        // sigma_v = K_dr 2 eps0.
        let g2 = build_grid(&[2, 2], &[1.0, 1.0], |_| 0).unwrap();
        let mut state2 = FieldState::initial(g2.n_mech_dofs(), g2.n_cells());
        for n in 0..g2.n_nodes() {
            let p = g2.node_position(n);
            for c in 0..2 {
                state2.u_curr[2 * n + c] = eps0 * p[c];
            }
        }
        let sv2 = mean_total_stress(&g2, &mats, &state2);
        for v in sv2 {
            assert!((v - kdr * 2.0 * eps0).abs() < 1e-12 * kdr);
        }
    }
}
