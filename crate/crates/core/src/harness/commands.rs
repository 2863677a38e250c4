//! Library side of the command-line entry points. Each command writes its
//! files under `out_dir` and returns the in-memory results.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::archive::{archive_read, archive_write, compatibility_warnings, ArchiveHeader, LegacyArchive, ARCHIVE_VERSION};
use super::config::{ExperimentConfig, Mode};
use crate::error::{Error, Result};
use crate::gp::{merge_legacy, Hyperparameters, Provenance, ResidualDataset};
use crate::gparareal::{run_gparareal, GpararealOptions};
use crate::parareal::{run_fine, run_parareal, ConvergenceReport, Outcome, Run, SolveConfig};
use crate::runtime::{predict_times, CostModel, Executor, PredictedTimes};

pub const SOLUTION_FILE: &str = "solution.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const ERROR_FILE: &str = "errors.csv";

/// Legacy rows loaded for a solve, retagged as legacy.
#[derive(Debug, Clone)]
pub struct LegacyInput {
    pub data: ResidualDataset,
    pub hyperparameters: Option<Vec<Hyperparameters>>,
    pub warnings: Vec<String>,
}

impl LegacyInput {
    fn options(&self) -> GpararealOptions {
        GpararealOptions {
            legacy: Some(self.data.clone()),
            initial_hyperparameters: self.hyperparameters.clone(),
            ..Default::default()
        }
    }
}

/// Archive header describing the solver pair of `cfg`.
pub fn expected_header(cfg: &ExperimentConfig, hyperparameters: Vec<Hyperparameters>) -> Result<ArchiveHeader> {
    let mesh = cfg.mesh()?;
    Ok(ArchiveHeader {
        version: ARCHIVE_VERSION,
        system: cfg.system.clone(),
        dim: cfg.u0.len(),
        fine_order: cfg.fine_order,
        coarse_order: cfg.coarse_order,
        fine_steps_per_slice: cfg.nf / cfg.slices,
        coarse_steps_per_slice: cfg.ng / cfg.slices,
        slice_width: mesh.slice_width(),
        hyperparameters,
    })
}

pub fn load_legacy(cfg: &ExperimentConfig, path: &Path) -> Result<LegacyInput> {
    let archive = archive_read(path)?;
    let expected = expected_header(cfg, Vec::new())?;
    if archive.header.dim != expected.dim {
        return Err(Error::Archive {
            path: path.to_path_buf(),
            message: format!("dimension {} does not match the system's {}", archive.header.dim, expected.dim),
        });
    }
    let warnings = compatibility_warnings(&archive.header, &expected);
    let hyperparameters = Some(archive.header.hyperparameters).filter(|h| !h.is_empty());
    Ok(LegacyInput {
        data: archive.data.retagged(Provenance::Legacy),
        hyperparameters,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedupSummary {
    /// Analytic prediction from the measured median slice costs and `k`.
    pub predicted: Option<PredictedTimes>,
    /// `J` times the median fine slice wallclock.
    pub serial_estimate_seconds: Option<f64>,
    pub measured_seconds: f64,
    /// `serial_estimate_seconds / measured_seconds`.
    pub measured_speedup: Option<f64>,
}

impl SpeedupSummary {
    pub fn from_report(report: &ConvergenceReport, slices: usize) -> Self {
        let measured_seconds = report.timings.total;
        let serial = report.median_fine_seconds.map(|t| t * slices as f64);
        let predicted = match (report.median_fine_seconds, report.median_coarse_seconds) {
            (Some(t_fine), Some(t_coarse)) if report.iterations > 0 && t_fine > 0.0 && t_coarse > 0.0 => {
                Some(predict_times(&CostModel {
                    t_fine,
                    t_coarse,
                    slices,
                    iterations: report.iterations,
                }))
            }
            _ => None,
        };
        Self {
            predicted,
            serial_estimate_seconds: serial,
            measured_seconds,
            measured_speedup: serial.filter(|_| measured_seconds > 0.0).map(|s| s / measured_seconds),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct ReportFile<'a> {
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    report: &'a ConvergenceReport,
    speedup: SpeedupSummary,
    legacy_rows: usize,
    warnings: &'a [String],
}

#[derive(Debug)]
pub struct SolveSummary {
    pub run: Run,
    pub speedup: SpeedupSummary,
    pub warnings: Vec<String>,
    pub out_dir: PathBuf,
}

impl SolveSummary {
    /// 0 when the solve converged, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.run.report.outcome.is_converged())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Runs one solve in the configured mode and writes the solution table,
/// report and schedule log (plus the legacy archive when requested).
pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<SolveSummary> {
    cfg.validate()?;
    let system = cfg.system()?;
    let solve = cfg.solve_config()?;
    let legacy = cfg.legacy_in.as_deref().map(|p| load_legacy(cfg, p)).transpose()?;
    let run = match cfg.mode {
        Mode::Fine => run_fine(&system, &solve)?,
        Mode::Parareal => run_parareal(&system, &solve)?,
        Mode::Gparareal => {
            let opts = legacy.as_ref().map(LegacyInput::options).unwrap_or_default();
            run_gparareal(&system, &solve, &opts)?
        }
    };
    let warnings = legacy.as_ref().map(|l| l.warnings.clone()).unwrap_or_default();
    let legacy_rows = legacy.as_ref().map_or(0, |l| l.data.len());

    run.table.write_csv(create(&cfg.out_dir, SOLUTION_FILE)?)?;
    run.schedule.write_csv(create(&cfg.out_dir, SCHEDULE_FILE)?)?;
    let speedup = SpeedupSummary::from_report(&run.report, cfg.slices);
    let file = ReportFile {
        config: cfg,
        report: &run.report,
        speedup: speedup.clone(),
        legacy_rows,
        warnings: &warnings,
    };
    serde_json::to_writer_pretty(create(&cfg.out_dir, REPORT_FILE)?, &file)?;

    if let (Some(path), Some(acquisition)) = (&cfg.legacy_out, &run.acquisition) {
        let data = match &legacy {
            Some(l) => merge_legacy(acquisition, &l.data)?,
            None => acquisition.deduplicated(),
        };
        let thetas = run
            .report
            .emulator
            .last()
            .map(|e| e.hyperparameters.clone())
            .or_else(|| legacy.as_ref().and_then(|l| l.hyperparameters.clone()))
            .unwrap_or_default();
        let archive = LegacyArchive {
            header: expected_header(cfg, thetas)?,
            data,
        };
        archive_write(path, &archive)?;
    }
    Ok(SolveSummary {
        run,
        speedup,
        warnings,
        out_dir: cfg.out_dir.clone(),
    })
}

/// One heatmap entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub u0: Vec<f64>,
    pub algorithm: &'static str,
    /// Iteration count, `None` unless the cell converged.
    pub k: Option<usize>,
    pub status: String,
}

fn cell_run(
    cfg: &ExperimentConfig,
    solve: &SolveConfig,
    u0: &[f64],
    algorithm: &'static str,
    legacy: Option<&LegacyInput>,
) -> SweepCell {
    let result = cfg.system_at(u0).and_then(|sys| match algorithm {
        "parareal" => run_parareal(&sys, solve),
        "gparareal" => run_gparareal(&sys, solve, &GpararealOptions::default()),
        _ => run_gparareal(&sys, solve, &legacy.expect("legacy cell without data").options()),
    });
    let (k, status) = match result {
        Ok(run) => {
            let o = run.report.outcome;
            (o.is_converged().then_some(run.report.iterations), o.label().to_string())
        }
        Err(e) => (None, format!("error: {e}")),
    };
    SweepCell {
        u0: u0.to_vec(),
        algorithm,
        k,
        status,
    }
}

/// Solves every grid cell with parareal and GParareal (and GParareal with
/// legacy data when `legacy_in` is set). Cells run through the configured
/// executor, each one sequential inside. Failures are recorded per cell.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    let points = cfg
        .grid_points()
        .ok_or_else(|| Error::config("grid_min", "sweep needs grid_min, grid_max and grid_count"))?;
    if cfg.u0.len() != 2 {
        return Err(Error::config("system", "heatmap sweeps need a two-dimensional system"));
    }
    let legacy = cfg.legacy_in.as_deref().map(|p| load_legacy(cfg, p)).transpose()?;
    let mut algorithms = vec!["parareal", "gparareal"];
    if legacy.is_some() {
        algorithms.push("gparareal_legacy");
    }
    let solve = cfg.solve_config()?.with_executor(Executor::sequential());
    let tasks: Vec<(&[f64], &'static str)> = points
        .iter()
        .flat_map(|p| algorithms.iter().map(move |&a| (p.as_slice(), a)))
        .collect();
    let cells = cfg
        .executor()
        .map(&tasks, |_, &(u0, a)| Ok::<_, std::convert::Infallible>(cell_run(cfg, &solve, u0, a, legacy.as_ref())))
        .unwrap_or_else(|f| match f.error {});
    write_heatmap(&cfg.out_dir.join(HEATMAP_FILE), &cells)?;
    Ok(cells)
}

pub fn write_heatmap(path: &Path, cells: &[SweepCell]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["u01", "u02", "algorithm", "k", "status"])?;
    for c in cells {
        let k = c.k.map_or_else(|| "NaN".to_string(), |k| k.to_string());
        w.write_record([c.u0[0].to_string(), c.u0[1].to_string(), c.algorithm.to_string(), k, c.status.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-node absolute errors against the serial fine solution, max over
/// dimensions. Missing rows (failed runs) are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub t: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
    pub outcomes: Vec<(String, Outcome)>,
}

impl ErrorTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_slice())
    }
}

fn node_errors(run: &Run, reference: &[Vec<f64>]) -> Vec<f64> {
    reference
        .iter()
        .enumerate()
        .map(|(j, r)| match run.table.states.get(j) {
            Some(u) if run.report.outcome.is_converged() => {
                u.iter().zip(r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            }
            _ => f64::NAN,
        })
        .collect()
}

/// Runs the serial fine reference, parareal and GParareal (with and without
/// legacy data when `legacy_in` is set) and writes the error table.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<ErrorTable> {
    cfg.validate()?;
    let system = cfg.system()?;
    let solve = cfg.solve_config()?;
    let reference = run_fine(&system, &solve)?;
    if let Outcome::BlowUp { slice, step, .. } = reference.report.outcome {
        return Err(Error::BlowUp { slice, step });
    }
    let mut runs = vec![
        ("parareal".to_string(), run_parareal(&system, &solve)?),
        ("gparareal".to_string(), run_gparareal(&system, &solve, &GpararealOptions::default())?),
    ];
    if let Some(path) = &cfg.legacy_in {
        let legacy = load_legacy(cfg, path)?;
        runs.push(("gparareal_legacy".to_string(), run_gparareal(&system, &solve, &legacy.options())?));
    }
    let table = ErrorTable {
        t: reference.table.mesh.nodes(),
        columns: runs
            .iter()
            .map(|(n, r)| (n.clone(), node_errors(r, &reference.table.states)))
            .collect(),
        outcomes: runs.iter().map(|(n, r)| (n.clone(), r.report.outcome)).collect(),
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut w = csv::Writer::from_path(cfg.out_dir.join(ERROR_FILE))?;
    let mut header = vec!["t".to_string()];
    header.extend(table.columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (j, t) in table.t.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(table.columns.iter().map(|(_, c)| c[j].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(table)
}

/// Merges archives into one, keeping the first header and the first copy of
/// duplicate inputs. Returns warnings for headers that disagree.
pub fn merge_archives(paths: &[PathBuf]) -> Result<(LegacyArchive, Vec<String>)> {
    let (first, rest) = paths
        .split_first()
        .ok_or_else(|| Error::config("archive", "nothing to merge"))?;
    let mut merged = archive_read(first)?;
    let mut warnings = Vec::new();
    for p in rest {
        let next = archive_read(p)?;
        if next.header.dim != merged.header.dim {
            return Err(Error::Archive {
                path: p.clone(),
                message: format!("dimension {} does not match {}", next.header.dim, merged.header.dim),
            });
        }
        warnings.extend(
            compatibility_warnings(&next.header, &merged.header)
                .into_iter()
                .map(|w| format!("{}: {w}", p.display())),
        );
        merged.data = merged.data.concat(&next.data)?.deduplicated();
    }
    Ok((merged, warnings))
}
