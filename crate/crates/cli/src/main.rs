use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use gparareal::harness::{archive_read, archive_write, cmd_compare, cmd_solve, cmd_sweep, merge_archives, ExperimentConfig, Mode};
use gparareal::RkOrder;

#[derive(Parser)]
#[command(name = "gparareal", version, about = "Parareal and GParareal time-parallel ODE solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one initial value problem
    Solve(Overrides),
    /// Initial-value heatmap of iteration counts
    Sweep(Overrides),
    /// Per-node errors of each algorithm against the serial fine solution
    Compare(Overrides),
    /// Inspect or combine legacy archives
    #[command(subcommand)]
    Archive(ArchiveCommand),
    /// Print the default configuration for a system
    Config {
        #[arg(long, default_value = "fhn")]
        system: String,
    },
}

#[derive(Subcommand)]
enum ArchiveCommand {
    /// Print an archive's header and row counts
    Show { path: PathBuf },
    /// Merge archives, first header wins
    Merge {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Configuration file plus per-field overrides.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    u0: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    t0: Option<f64>,
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long)]
    nf: Option<usize>,
    #[arg(long)]
    ng: Option<usize>,
    #[arg(long)]
    fine_order: Option<u8>,
    #[arg(long)]
    coarse_order: Option<u8>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    legacy_in: Option<PathBuf>,
    #[arg(long)]
    legacy_out: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
}

fn order(v: u8, flag: &str) -> Result<RkOrder> {
    RkOrder::try_from(v).map_err(|_| anyhow::anyhow!("--{flag}: order must be 1, 2 or 4"))
}

impl Overrides {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut c = match (&self.config, &self.system) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(system)) => ExperimentConfig::preset(system)?,
            (None, None) => ExperimentConfig::fhn_desk(),
        };
        if let Some(system) = self.system {
            if system != c.system {
                c.params.clear();
            }
            c.system = system;
        }
        if let Some(v) = self.u0 {
            c.u0 = v;
        }
        if let Some(v) = self.t0 {
            c.t0 = v;
        }
        if let Some(v) = self.tmax {
            c.tmax = v;
        }
        if let Some(v) = self.slices {
            c.slices = v;
        }
        if let Some(v) = self.nf {
            c.nf = v;
        }
        if let Some(v) = self.ng {
            c.ng = v;
        }
        if let Some(v) = self.fine_order {
            c.fine_order = order(v, "fine-order")?;
        }
        if let Some(v) = self.coarse_order {
            c.coarse_order = order(v, "coarse-order")?;
        }
        if let Some(v) = self.tol {
            c.tol = v;
        }
        if self.workers.is_some() {
            c.workers = self.workers;
        }
        if self.legacy_in.is_some() {
            c.legacy_in = self.legacy_in;
        }
        if self.legacy_out.is_some() {
            c.legacy_out = self.legacy_out;
        }
        if let Some(v) = self.out_dir {
            c.out_dir = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve(o) => {
            let cfg = o.resolve()?;
            let s = cmd_solve(&cfg)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            let r = &s.run.report;
            println!(
                "{:?}: {} after {} iterations ({} fine runs, {:.3} s)",
                r.algorithm,
                r.outcome.label(),
                r.iterations,
                r.fine_runs,
                r.timings.total
            );
            if let Some(p) = s.speedup.predicted {
                println!("predicted speedup {:.2}", p.speedup);
            }
            println!("wrote {}", s.out_dir.display());
            Ok(ExitCode::from(s.exit_code() as u8))
        }
        Command::Sweep(o) => {
            let cfg = o.resolve()?;
            let cells = cmd_sweep(&cfg)?;
            for a in ["parareal", "gparareal", "gparareal_legacy"] {
                let mine: Vec<_> = cells.iter().filter(|c| c.algorithm == a).collect();
                if mine.is_empty() {
                    continue;
                }
                let ks: Vec<usize> = mine.iter().filter_map(|c| c.k).collect();
                println!(
                    "{a}: {}/{} converged, k in [{}, {}]",
                    ks.len(),
                    mine.len(),
                    ks.iter().min().map_or("-".into(), |k| k.to_string()),
                    ks.iter().max().map_or("-".into(), |k| k.to_string())
                );
            }
            println!("wrote {}", cfg.out_dir.join("heatmap.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare(o) => {
            let cfg = o.resolve()?;
            let table = cmd_compare(&cfg)?;
            for (name, col) in &table.columns {
                let max = col.iter().copied().fold(0.0, f64::max);
                println!("{name}: max error {max:.3e}");
            }
            println!("wrote {}", cfg.out_dir.join("errors.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Archive(ArchiveCommand::Show { path }) => {
            let a = archive_read(&path)?;
            let h = &a.header;
            println!("version {}", h.version);
            println!("system {} (d = {})", h.system, h.dim);
            println!(
                "solvers RK{} / RK{}, {} / {} steps per slice, slice width {}",
                u8::from(h.fine_order),
                u8::from(h.coarse_order),
                h.fine_steps_per_slice,
                h.coarse_steps_per_slice,
                h.slice_width
            );
            for (i, t) in h.hyperparameters.iter().enumerate() {
                println!("output {}: sigma2 = {:.6e}, ell2 = {:.6e}", i + 1, t.sigma2, t.ell2);
            }
            println!(
                "{} rows ({} acquisition, {} legacy)",
                a.data.len(),
                a.data.count(gparareal::gp::Provenance::Acquisition),
                a.data.count(gparareal::gp::Provenance::Legacy)
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Archive(ArchiveCommand::Merge { inputs, output }) => {
            let (merged, warnings) = merge_archives(&inputs)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            archive_write(&output, &merged)?;
            println!("wrote {} rows to {}", merged.data.len(), output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Config { system } => {
            print!("{}", ExperimentConfig::preset(&system)?.to_toml_string());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
