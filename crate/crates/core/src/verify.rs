//! End-to-end verification suite: each criterion reproduces one piece of the
//! undrained-stability and sequential-convergence phenomenology at desk
//! scale and checks it against frozen numeric thresholds. The `verify` CLI
//! subcommand runs all criteria; the acceptance integration tests assert
//! them one by one.
//!
//! Where a threshold cannot come from theory (checkerboard magnitudes,
//! iteration-count ratios), it was frozen from the first oracle run of this
//! suite and is recorded here as a named constant next to the criterion
//! that uses it.

use std::path::Path;

use crate::cases::{
    self, barry_mercer_drained, barry_mercer_undrained, layered_column_undrained, CaseRun,
    CaseRunner, CaseSpec, RunOptions, StabRegionsSpec, SweepAxis, SweepSpec,
};
use crate::diagnostics::field_difference;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg;
use crate::materials::MaterialRegion;
use crate::solvers::{self, FieldState, Scheme, SolverConfig};

pub mod dense;

/// Checkerboard-projection threshold for the unstabilized, undrained
/// Barry-Mercer monolithic run after 10 steps. The first oracle run of
/// criterion 1 measured 5.77e8 Pa; the threshold is frozen at half that.
pub const THETA_CB: f64 = 2.8e8;

/// Required relative decrease between consecutive ||p_k - p_FIM|| values at
/// k = 10, 50, 100, 500 outer iterations (criterion 2). The checkerboard
/// component of the error contracts extremely slowly on this undrained
/// problem, so the later gaps are far below the provisional 5%; frozen from
/// the first oracle run (measured decreases: 0.66, 0.45, 0.89 of the
/// previous norm for the three consecutive pairs).
pub const C2_MIN_DECREASE: [f64; 3] = [0.05, 0.05, 0.05];

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<38} {} ({})",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

fn make(id: usize, name: &'static str, passed: bool, detail: String) -> CriterionResult {
    CriterionResult {
        id,
        name,
        passed,
        detail,
    }
}

fn final_checkerboard(run: &CaseRun) -> f64 {
    run.report.rows.last().map(|r| r.checkerboard[0]).unwrap_or(0.0)
}

fn with_stab_all(mut spec: CaseSpec, c: f64) -> CaseSpec {
    spec.stabilization.c = c;
    spec.stabilization.regions = StabRegionsSpec::all();
    spec
}

fn bm_fs_iter(rel_tol: f64, fixed: Option<usize>) -> CaseSpec {
    let mut spec = barry_mercer_undrained();
    spec.solver = SolverConfig::new(Scheme::FsIter);
    spec.solver.rel_tol = rel_tol;
    spec.solver.fixed_iter_count = fixed;
    spec
}

/// Layered column variant: burden permeability, fixed-stress alpha,
/// stabilization (burden-only when `stab_c` is Some), single time step.
fn layered_variant(burden_k: f64, alpha: f64, stab_c: Option<f64>, steps: usize) -> CaseSpec {
    let mut spec = layered_column_undrained();
    spec.regions[0].material.permeability = burden_k;
    spec.solver.alpha = alpha;
    spec.time.steps = Some(steps);
    if let Some(c) = stab_c {
        spec.stabilization.c = c;
        spec.stabilization.regions = StabRegionsSpec::names(&["burden"]);
    }
    spec
}

fn run_tolerant(spec: &CaseSpec) -> Result<CaseRun> {
    cases::run_case_with(
        spec,
        RunOptions {
            fail_on_nonconvergence: false,
        },
    )
}

fn total_iterations(run: &CaseRun) -> usize {
    run.steps.iter().map(|s| s.outer_iterations).sum()
}

/// Criterion 1: the monolithic, unstabilized, undrained Barry-Mercer run
/// exhibits the checkerboard after 10 steps, and the sparse trajectory
/// matches an independent dense-LU trajectory of the same systems to 1e-10.
pub fn criterion_1() -> Result<CriterionResult> {
    let spec = barry_mercer_undrained();
    let sparse = cases::run_case(&spec)?;
    let cb = final_checkerboard(&sparse);

    let runner = CaseRunner::new(&spec)?;
    let dt = spec.time.dt0;
    let mut state = FieldState::initial(
        runner.grid().n_mech_dofs(),
        runner.grid().n_cells(),
    );
    for _ in 0..spec.time.steps.unwrap() {
        let sys = runner.build_system_at(&state, dt)?;
        let (du, dp) = dense::solve_saddle(&sys)?;
        state = state.advanced(&du, &dp, dt);
    }
    let (p_rel, _) = field_difference(&sparse.final_state.p_curr, &state.p_curr);
    let (u_rel, _) = field_difference(&sparse.final_state.u_curr, &state.u_curr);

    let passed = cb >= THETA_CB && p_rel <= 1e-10 && u_rel <= 1e-10;
    Ok(make(
        1,
        "checkerboard emergence + dense oracle",
        passed,
        format!(
            "checkerboard {cb:.3e} >= {THETA_CB:.1e}; sparse-dense rel diff p {p_rel:.2e}, u {u_rel:.2e}"
        ),
    ))
}

/// Criterion 2: with fixed iteration counts 10/50/100/500 per step, the
/// iterated fixed-stress pressure approaches the monolithic one, strictly
/// and with the frozen minimum separation.
pub fn criterion_2() -> Result<CriterionResult> {
    let p_fim = cases::run_case(&barry_mercer_undrained())?.final_state.p_curr;
    let counts = [10usize, 50, 100, 500];
    let mut norms = Vec::new();
    for k in counts {
        let run = run_tolerant(&bm_fs_iter(1e-8, Some(k)))?;
        norms.push(linalg::norm2(&linalg::sub(&run.final_state.p_curr, &p_fim)));
    }
    let mut passed = true;
    let mut pairs = Vec::new();
    for i in 0..3 {
        let decrease = 1.0 - norms[i + 1] / norms[i];
        pairs.push(format!("{:.3}", decrease));
        if !(norms[i + 1] < norms[i] && decrease >= C2_MIN_DECREASE[i]) {
            passed = false;
        }
    }
    let norm_list = norms
        .iter()
        .map(|n| format!("{n:.3e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(make(
        2,
        "fs_iter converges toward monolithic",
        passed,
        format!("norms [{norm_list}], relative decreases [{}]", pairs.join(", ")),
    ))
}

/// Criterion 3: the non-iterated split looks stable after one step and the
/// spurious mode grows monotonically from step 4 to step 10.
pub fn criterion_3() -> Result<CriterionResult> {
    let mut spec = barry_mercer_undrained();
    spec.solver = SolverConfig::new(Scheme::FsNoniter);
    let run = cases::run_case(&spec)?;
    let cb: Vec<f64> = run.report.rows.iter().map(|r| r.checkerboard[0]).collect();
    let early_quiet = cb[0] < 0.1 * cb[9];
    let growing = (3..9).all(|i| cb[i + 1] >= cb[i]);
    Ok(make(
        3,
        "fs_noniter delayed oscillation",
        early_quiet && growing,
        format!(
            "cb(step1) {:.3e} vs 0.1 cb(step10) {:.3e}; growth steps 4..10 {}",
            cb[0],
            0.1 * cb[9],
            growing
        ),
    ))
}

/// Criterion 4: on the drained variant, the iterated split at tight
/// tolerance reproduces the monolithic fields to 1e-6.
pub fn criterion_4() -> Result<CriterionResult> {
    let mono = cases::run_case(&barry_mercer_drained())?;
    let mut spec = barry_mercer_drained();
    spec.solver = SolverConfig::new(Scheme::FsIter);
    spec.solver.rel_tol = 1e-10;
    let fs = cases::run_case(&spec)?;
    let (p_rel, _) = field_difference(&fs.final_state.p_curr, &mono.final_state.p_curr);
    let (u_rel, _) = field_difference(&fs.final_state.u_curr, &mono.final_state.u_curr);
    Ok(make(
        4,
        "scheme equivalence (drained)",
        p_rel <= 1e-6 && u_rel <= 1e-6,
        format!("rel diff p {p_rel:.2e}, u {u_rel:.2e} (tol 1e-6)"),
    ))
}

/// Criterion 5: every non-iterated step satisfies the rearranged saddle
/// identity exactly: the fully implicit residual equals the computed
/// splitting-error right-hand side to 1e-10 relative.
pub fn criterion_5() -> Result<CriterionResult> {
    let mut spec = barry_mercer_undrained();
    spec.solver = SolverConfig::new(Scheme::FsNoniter);
    let runner = CaseRunner::new(&spec)?;
    let dt = spec.time.dt0;
    let mut state = FieldState::initial(
        runner.grid().n_mech_dofs(),
        runner.grid().n_cells(),
    );
    let mut worst: f64 = 0.0;
    for _ in 0..spec.time.steps.unwrap() {
        let sys = runner.build_system_at(&state, dt)?;
        let res = solvers::step_fs_noniter(&sys, &state)?;
        let e = solvers::splitting_error_vector(&sys, &res.state)?;
        let du = linalg::sub(&res.state.u_curr, &state.u_curr);
        let dp = linalg::sub(&res.state.p_curr, &state.p_curr);
        let (ru, rp) = solvers::residual_vectors(&sys, &du, &dp);
        // Saddle form with the splitting-error right-hand side: the mass
        // row residual must equal e, the mechanics row residual zero.
        let mass_mismatch = linalg::norm2(&linalg::sub(&rp, &e));
        let mech_mismatch = linalg::norm2(&ru);
        let modified_rhs = (linalg::norm2(&sys.q_u).powi(2)
            + linalg::norm2(&linalg::sub(&sys.q_p, &e)).powi(2))
        .sqrt();
        let total = (mass_mismatch.powi(2) + mech_mismatch.powi(2)).sqrt();
        worst = worst.max(total / modified_rhs.max(1e-300));
        state = res.state;
    }
    Ok(make(
        5,
        "splitting-error identity (per step)",
        worst <= 1e-10,
        format!("max relative identity residual {worst:.2e} (tol 1e-10)"),
    ))
}

/// Criterion 6: global stabilization at c = 1 removes the checkerboard
/// (>= 10x reduction) and accelerates the iterated split (>= 2x fewer
/// outer iterations at alpha = 1, rel_tol 1e-8).
pub fn criterion_6() -> Result<CriterionResult> {
    let cb_unstab = final_checkerboard(&cases::run_case(&barry_mercer_undrained())?);
    let cb_stab = final_checkerboard(&cases::run_case(&with_stab_all(
        barry_mercer_undrained(),
        1.0,
    ))?);

    let iters_unstab = total_iterations(&run_tolerant(&bm_fs_iter(1e-8, None))?);
    let iters_stab = total_iterations(&run_tolerant(&with_stab_all(bm_fs_iter(1e-8, None), 1.0))?);

    let cb_factor = cb_unstab / cb_stab.max(1e-300);
    let passed = cb_factor >= 10.0 && 2 * iters_stab <= iters_unstab;
    Ok(make(
        6,
        "stabilization efficacy (Barry-Mercer)",
        passed,
        format!(
            "checkerboard reduction {cb_factor:.1e}x (>= 10x); outer iterations {iters_unstab} -> {iters_stab} (>= 2x drop)"
        ),
    ))
}

/// Criterion 7: the optimal stabilization coefficient formula against an
/// independent scalar evaluation at E = 10 kPa, nu = 0.2.
pub fn criterion_7() -> Result<CriterionResult> {
    let m = MaterialRegion::new(1.0e4, 0.2, 1.0, 0.0, 1e-12, 1.0)?;
    let tau = m.optimal_tau();
    // Longhand evaluation.
    let (e, nu) = (1.0e4, 0.2);
    let shear = e / (2.0 * (1.0 + nu));
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let expected = 9.0 / (32.0 * (lambda + 4.0 * shear));
    let rel = (tau - expected).abs() / expected;
    let near_reference = (tau - 1.4464e-5).abs() / 1.4464e-5 < 1e-4;
    Ok(make(
        7,
        "optimal tau formula",
        rel <= 1e-12 && near_reference,
        format!("tau = {tau:.10e}, independent eval diff {rel:.2e}"),
    ))
}

/// Criterion 8: alpha-sweep trends on the layered column (first time step,
/// one day): (a) undrained costs more than drained without stabilization,
/// (b) burden-only stabilization makes the counts permeability-agnostic to
/// a 25% spread, (c) alpha = 0.4 never beats alpha = 1 on the undrained
/// point.
pub fn criterion_8() -> Result<CriterionResult> {
    let k_drained = 9.8e-14;
    let k_mid = 9.8e-17;
    let k_undrained = 9.8e-20;

    let it = |spec: &CaseSpec| -> Result<(usize, bool)> {
        let run = run_tolerant(spec)?;
        Ok((
            total_iterations(&run),
            run.steps.iter().all(|s| s.converged),
        ))
    };

    // (a) unstabilized, alpha = 1.
    let (n_drained, _) = it(&layered_variant(k_drained, 1.0, None, 1))?;
    let (n_undrained, _) = it(&layered_variant(k_undrained, 1.0, None, 1))?;
    let a_ok = n_undrained > n_drained;

    // (b) burden-only stabilization at c = 1, alpha = 1.
    let mut stab_counts = Vec::new();
    for k in [k_drained, k_mid, k_undrained] {
        stab_counts.push(it(&layered_variant(k, 1.0, Some(1.0), 1))?.0);
    }
    let max = *stab_counts.iter().max().unwrap() as f64;
    let min = *stab_counts.iter().min().unwrap() as f64;
    let spread = (max - min) / min;
    let b_ok = spread <= 0.25;

    // (c) alpha = 0.4 on the undrained unstabilized point.
    let (n_alpha04, converged04) = it(&layered_variant(k_undrained, 0.4, None, 1))?;
    let c_ok = !converged04 || n_alpha04 > n_undrained;

    Ok(make(
        8,
        "alpha sweep trends (layered column)",
        a_ok && b_ok && c_ok,
        format!(
            "(a) unstab iters drained {n_drained} vs undrained {n_undrained}; (b) stab counts {stab_counts:?} spread {spread:.2}; (c) alpha=0.4: {n_alpha04} iters converged={converged04}"
        ),
    ))
}

/// Criterion 9: stabilization-strength knee on the undrained layered
/// column: c = 0.1 is at least 1.5x slower than c = 1, while c = 1 and
/// c = 10 differ by at most 30%.
pub fn criterion_9() -> Result<CriterionResult> {
    let mut counts = Vec::new();
    for c in [0.1, 1.0, 10.0] {
        let run = run_tolerant(&layered_variant(9.8e-20, 1.0, Some(c), 1))?;
        counts.push(total_iterations(&run));
    }
    let (n01, n1, n10) = (counts[0] as f64, counts[1] as f64, counts[2] as f64);
    let knee = n01 >= 1.5 * n1;
    let flat = (n1 - n10).abs() <= 0.30 * n1;
    Ok(make(
        9,
        "stabilization strength knee",
        knee && flat,
        format!("iterations at c=0.1/1/10: {counts:?}; knee {knee}, flat {flat}"),
    ))
}

/// Criterion 10: burden-only stabilization leaves every reservoir-burden
/// interface coupling structurally zero and perturbs the reservoir pressure
/// by no more than 1e-8 relative (monolithic comparison).
pub fn criterion_10() -> Result<CriterionResult> {
    let mut stab_spec = layered_variant(9.8e-20, 1.0, Some(1.0), 1);
    stab_spec.solver = SolverConfig::new(Scheme::Monolithic);
    let mut unstab_spec = layered_variant(9.8e-20, 1.0, None, 1);
    unstab_spec.solver = SolverConfig::new(Scheme::Monolithic);

    let runner = CaseRunner::new(&stab_spec)?;
    let grid = runner.grid();
    let s = runner.stabilization_matrix();
    let mut interface_coupling: f64 = 0.0;
    let mut interface_faces = 0;
    for f in grid.interior_faces() {
        if grid.region_of(f.left) != grid.region_of(f.right) {
            interface_faces += 1;
            interface_coupling = interface_coupling
                .max(s.get(f.left, f.right).abs())
                .max(s.get(f.right, f.left).abs());
        }
    }

    let stab = cases::run_case(&stab_spec)?;
    let unstab = cases::run_case(&unstab_spec)?;
    let reservoir: Vec<usize> = (0..grid.n_cells())
        .filter(|&k| grid.region_of(k) == 1)
        .collect();
    let pick = |p: &[f64]| -> Vec<f64> { reservoir.iter().map(|&k| p[k]).collect() };
    let (rel, _) = field_difference(
        &pick(&stab.final_state.p_curr),
        &pick(&unstab.final_state.p_curr),
    );

    let passed = interface_coupling == 0.0 && rel <= 1e-8;
    Ok(make(
        10,
        "interface sharpness (burden-only stab)",
        passed,
        format!(
            "max |S| across {interface_faces} interface faces = {interface_coupling:.1e}; reservoir pressure rel diff {rel:.2e} (tol 1e-8)"
        ),
    ))
}

/// Criterion 11: global mass bookkeeping for every scheme and step:
/// |accumulation + net flux + stabilization - source| <= 1e-10 of the
/// run's source magnitude (max over steps of the injected volume).
pub fn criterion_11() -> Result<CriterionResult> {
    let mut configs: Vec<CaseSpec> = Vec::new();
    for scheme in [Scheme::Monolithic, Scheme::FsNoniter, Scheme::FsIter] {
        let mut bm = barry_mercer_undrained();
        bm.solver = SolverConfig::new(scheme);
        configs.push(bm);

        let mut layered = layered_variant(9.8e-20, 1.0, Some(1.0), 2);
        layered.solver.scheme = scheme;
        configs.push(layered);
    }
    let mut worst: f64 = 0.0;
    let mut audited = 0;
    for spec in &configs {
        let run = run_tolerant(spec)?;
        let source_scale = run
            .steps
            .iter()
            .map(|s| s.mass.source.abs())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        for s in &run.steps {
            worst = worst.max(s.mass.defect.abs() / source_scale);
            audited += 1;
        }
    }
    Ok(make(
        11,
        "global mass bookkeeping",
        worst <= 1e-10,
        format!("max |defect|/source over {audited} steps = {worst:.2e} (tol 1e-10)"),
    ))
}

/// Criterion 12: the verification outputs (CSV and VTK) are byte-identical
/// across two runs.
pub fn criterion_12() -> Result<CriterionResult> {
    let dir_a = tempdir()?;
    let dir_b = tempdir()?;
    write_verify_outputs(dir_a.path())?;
    write_verify_outputs(dir_b.path())?;

    let mut names: Vec<String> = std::fs::read_dir(dir_a.path())
        .map_err(|e| Error::Io {
            path: dir_a.path().display().to_string(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    let mut identical = true;
    for n in &names {
        let a = std::fs::read(dir_a.path().join(n)).unwrap_or_default();
        let b = std::fs::read(dir_b.path().join(n)).unwrap_or_default();
        if a != b || a.is_empty() {
            identical = false;
        }
    }
    Ok(make(
        12,
        "deterministic outputs",
        identical && !names.is_empty(),
        format!("{} files byte-compared: {names:?}", names.len()),
    ))
}

struct TempDir(std::path::PathBuf);

impl TempDir {
    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn tempdir() -> Result<TempDir> {
    let base = std::env::temp_dir();
    for i in 0..10_000 {
        let candidate = base.join(format!(
            "porosplit-verify-{}-{i}",
            std::process::id()
        ));
        if std::fs::create_dir(&candidate).is_ok() {
            return Ok(TempDir(candidate));
        }
    }
    Err(Error::invalid("could not allocate a temporary directory"))
}

/// Writes the deterministic verification outputs: Barry-Mercer reports for
/// the monolithic and non-iterated runs, the final monolithic fields, and a
/// small alpha/c sweep table. Timing columns are excluded on purpose.
pub fn write_verify_outputs(dir: &Path) -> Result<()> {
    let mono = cases::run_case(&barry_mercer_undrained())?;
    io::write_report_csv(&mono.report, &dir.join("barry_mercer_monolithic.csv"), false)?;
    let runner = CaseRunner::new(&barry_mercer_undrained())?;
    io::write_vtk(
        runner.grid(),
        &mono.final_state.p_curr,
        &mono.final_state.u_curr,
        "barry-mercer monolithic, step 10",
        &dir.join("barry_mercer_monolithic_step10.vtk"),
    )?;

    let mut noniter = barry_mercer_undrained();
    noniter.solver = SolverConfig::new(Scheme::FsNoniter);
    let noniter_run = cases::run_case(&noniter)?;
    io::write_report_csv(
        &noniter_run.report,
        &dir.join("barry_mercer_fs_noniter.csv"),
        false,
    )?;

    let mut base = bm_fs_iter(1e-8, Some(20));
    base.time.steps = Some(2);
    let sweep = SweepSpec::new(
        base,
        vec![
            SweepAxis::Alpha(vec![0.6, 1.0]),
            SweepAxis::StabRegions(vec![StabRegionsSpec::none(), StabRegionsSpec::all()]),
        ],
    );
    let report = cases::run_sweep(&sweep, 1)?;
    io::write_sweep_csv(&report, &dir.join("barry_mercer_sweep.csv"))?;
    Ok(())
}

/// Runs all criteria in order, printing one line each; optionally writes
/// the deterministic outputs into `out_dir`.
pub fn run_all(out_dir: Option<&Path>) -> Result<Vec<CriterionResult>> {
    let criteria: Vec<fn() -> Result<CriterionResult>> = vec![
        criterion_1,
        criterion_2,
        criterion_3,
        criterion_4,
        criterion_5,
        criterion_6,
        criterion_7,
        criterion_8,
        criterion_9,
        criterion_10,
        criterion_11,
        criterion_12,
    ];
    let mut results = Vec::new();
    for f in criteria {
        let r = f()?;
        println!("{}", r.line());
        results.push(r);
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        write_verify_outputs(dir)?;
    }
    Ok(results)
}
