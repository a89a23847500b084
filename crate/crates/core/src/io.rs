//! Case-file ingestion and simulation outputs: TOML case configs, legacy
//! ASCII VTK fields, and CSV run/sweep reports.
//!
//! Output determinism contract: given the same case, the VTK and CSV bytes
//! are identical across runs. Wall times are the one volatile quantity, so
//! report writers take an `include_timing` switch; the verification outputs
//! are written without it.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::cases::{CaseSpec, SweepReport};
use crate::error::{Error, Result};
use crate::grid::StructuredGrid;
use crate::solvers::Scheme;

/// Per-step report rows of one run.
///
/// CSV schema (fixed column order): `case, scheme, step, time, dt,
/// outer_iterations, converged, residual_ratio, splitting_error_norm,
/// mass_defect, jump_energy_<region>..., checkerboard_<region>...` with the
/// regions in sorted name order, then `wall_time` when timing is included.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub case_name: String,
    pub scheme: Scheme,
    /// Sorted region names; metric vectors in rows follow this order.
    pub region_names: Vec<String>,
    pub rows: Vec<StepRow>,
}

#[derive(Debug, Clone)]
pub struct StepRow {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub outer_iterations: usize,
    pub converged: bool,
    pub residual_ratio: f64,
    pub splitting_error_norm: f64,
    pub jump_energy: Vec<f64>,
    pub checkerboard: Vec<f64>,
    pub mass_defect: f64,
    pub wall_time: f64,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses and validates a TOML case file.
pub fn parse_case(path: &Path) -> Result<CaseSpec> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_case_str(&text).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn parse_case_str(text: &str) -> Result<CaseSpec> {
    let spec: CaseSpec = toml::from_str(text).map_err(|e| Error::Parse {
        context: "case file".into(),
        message: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Serializes a case; `parse_case` of the output yields an equal CaseSpec.
pub fn write_case(spec: &CaseSpec, path: &Path) -> Result<()> {
    fs::write(path, case_to_string(spec)?).map_err(io_err(path))
}

pub fn case_to_string(spec: &CaseSpec) -> Result<String> {
    toml::to_string_pretty(spec).map_err(|e| Error::Parse {
        context: "case serialization".into(),
        message: e.to_string(),
    })
}

/// Formats a float with 17 significant digits (round-trip exact for f64).
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes pressure (cell data) and displacement (point data) as a legacy
/// ASCII VTK rectilinear grid. Output bytes are deterministic.
pub fn write_vtk(
    grid: &StructuredGrid,
    pressure: &[f64],
    displacement: &[f64],
    title: &str,
    path: &Path,
) -> Result<()> {
    if pressure.len() != grid.n_cells() || displacement.len() != grid.n_mech_dofs() {
        return Err(Error::invalid(format!(
            "field sizes ({}, {}) do not match the grid ({} cells, {} mech dofs)",
            pressure.len(),
            displacement.len(),
            grid.n_cells(),
            grid.n_mech_dofs()
        )));
    }
    let err = io_err(path);
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(err)?);
    let err = io_err(path);
    let dim = grid.spatial_dim();
    let nd = grid.node_dims();
    let h = grid.spacing();

    let mut w = || -> std::io::Result<()> {
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "{title}")?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET RECTILINEAR_GRID")?;
        writeln!(out, "DIMENSIONS {} {} {}", nd[0], nd[1], nd[2])?;
        for (axis, label) in ["X", "Y", "Z"].iter().enumerate() {
            writeln!(out, "{label}_COORDINATES {} double", nd[axis])?;
            let coords: Vec<String> = (0..nd[axis]).map(|i| fmt17(i as f64 * h[axis])).collect();
            writeln!(out, "{}", coords.join(" "))?;
        }
        writeln!(out, "CELL_DATA {}", grid.n_cells())?;
        writeln!(out, "SCALARS pressure double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in pressure {
            writeln!(out, "{}", fmt17(*v))?;
        }
        writeln!(out, "POINT_DATA {}", grid.n_nodes())?;
        writeln!(out, "VECTORS displacement double")?;
        for n in 0..grid.n_nodes() {
            let mut comps = [0.0f64; 3];
            for c in 0..dim {
                comps[c] = displacement[n * dim + c];
            }
            writeln!(
                out,
                "{} {} {}",
                fmt17(comps[0]),
                fmt17(comps[1]),
                fmt17(comps[2])
            )?;
        }
        out.flush()
    };
    w().map_err(err)
}

/// Writes the per-step report. Column order is documented on [`RunReport`].
pub fn write_report_csv(report: &RunReport, path: &Path, include_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut header = vec![
        "case".to_string(),
        "scheme".into(),
        "step".into(),
        "time".into(),
        "dt".into(),
        "outer_iterations".into(),
        "converged".into(),
        "residual_ratio".into(),
        "splitting_error_norm".into(),
        "mass_defect".into(),
    ];
    for r in &report.region_names {
        header.push(format!("jump_energy_{r}"));
    }
    for r in &report.region_names {
        header.push(format!("checkerboard_{r}"));
    }
    if include_timing {
        header.push("wall_time".into());
    }
    let io_wrap = |e: csv::Error| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    };
    w.write_record(&header).map_err(io_wrap)?;
    for row in &report.rows {
        let mut rec = vec![
            report.case_name.clone(),
            row.scheme.name().to_string(),
            row.step.to_string(),
            fmt17(row.time),
            fmt17(row.dt),
            row.outer_iterations.to_string(),
            row.converged.to_string(),
            fmt17(row.residual_ratio),
            fmt17(row.splitting_error_norm),
            fmt17(row.mass_defect),
        ];
        for v in &row.jump_energy {
            rec.push(fmt17(*v));
        }
        for v in &row.checkerboard {
            rec.push(fmt17(*v));
        }
        if include_timing {
            rec.push(format!("{:.6}", row.wall_time));
        }
        w.write_record(&rec).map_err(io_wrap)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes a sweep table: axis columns, then steps, outer_iterations,
/// converged, per-region final metrics, and a status column.
pub fn write_sweep_csv(report: &SweepReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    let io_wrap = |e: csv::Error| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    };
    let mut header = vec!["case".to_string()];
    header.extend(report.axis_names.iter().cloned());
    header.extend(["steps".into(), "outer_iterations".into(), "converged".into()]);
    for r in &report.region_names {
        header.push(format!("jump_energy_{r}"));
    }
    for r in &report.region_names {
        header.push(format!("checkerboard_{r}"));
    }
    header.push("status".into());
    w.write_record(&header).map_err(io_wrap)?;
    for row in &report.rows {
        let mut rec = vec![report.case_name.clone()];
        rec.extend(row.values.iter().cloned());
        rec.push(row.steps.to_string());
        rec.push(row.outer_iterations.to_string());
        rec.push(row.converged.to_string());
        let pad = report.region_names.len();
        for i in 0..pad {
            rec.push(row.jump_energy.get(i).map(|v| fmt17(*v)).unwrap_or_default());
        }
        for i in 0..pad {
            rec.push(row.checkerboard.get(i).map(|v| fmt17(*v)).unwrap_or_default());
        }
        rec.push(row.status.clone());
        w.write_record(&rec).map_err(io_wrap)?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::{barry_mercer_undrained, layered_column_undrained};
    use crate::grid::build_grid;

    #[test]
    fn case_round_trip() {
        for spec in [barry_mercer_undrained(), layered_column_undrained()] {
            let text = case_to_string(&spec).unwrap();
            let back = parse_case_str(&text).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn negative_dt0_error_names_key() {
        let mut spec = barry_mercer_undrained();
        spec.time.dt0 = -10.0;
        let text = case_to_string(&spec).unwrap();
        let err = parse_case_str(&text).unwrap_err().to_string();
        assert!(err.contains("time.dt0"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = case_to_string(&barry_mercer_undrained()).unwrap() + "\nbogus_key = 1\n";
        assert!(parse_case_str(&text).is_err());
    }

    #[test]
    fn vtk_2d_counts() {
        let g = build_grid(&[10, 10], &[1.0, 1.0], |_| 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.vtk");
        write_vtk(
            &g,
            &vec![0.0; 100],
            &vec![0.0; g.n_mech_dofs()],
            "fields",
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0"));
        assert!(text.contains("DIMENSIONS 11 11 1"));
        assert!(text.contains("X_COORDINATES 11 double"));
        assert!(text.contains("Z_COORDINATES 1 double"));
        assert!(text.contains("CELL_DATA 100"));
        assert!(text.contains("POINT_DATA 121"));
        // All-zero fields really are zero in the file.
        assert!(text.contains("0.0000000000000000e0"));

        // Byte-identical on rewrite.
        let path2 = dir.path().join("g.vtk");
        write_vtk(
            &g,
            &vec![0.0; 100],
            &vec![0.0; g.n_mech_dofs()],
            "fields",
            &path2,
        )
        .unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn vtk_3d_z_count() {
        let g = build_grid(&[10, 10, 15], &[10.0, 10.0, 15.0], |_| 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.vtk");
        write_vtk(
            &g,
            &vec![0.0; g.n_cells()],
            &vec![0.0; g.n_mech_dofs()],
            "fields",
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("Z_COORDINATES 16 double"));
    }

    #[test]
    fn report_csv_line_counts() {
        let mut spec = barry_mercer_undrained();
        spec.time.steps = Some(10);
        let run = crate::cases::run_case(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_report_csv(&run.report, &path, false).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 11); // header + 10 steps
    }

    #[test]
    fn empty_sweep_csv_is_header_only() {
        let report = SweepReport {
            case_name: "none".into(),
            axis_names: vec!["alpha".into()],
            region_names: vec!["domain".into()],
            rows: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
    }
}
