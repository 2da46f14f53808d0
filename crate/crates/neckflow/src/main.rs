use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use neckflow::config::RunConfig;
use neckflow::recipes::{run_experiment, spectral_suite_in, zoom_from};
use neckflow::report::{report_csv, Report};
use neckflow_core::rescaled::StepControls;
use neckflow_core::run::PinchConfig;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "neckflow", version, about = "Neckpinch simulations of mean curvature flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Check a monitors.csv and render report.txt plus SVG plots.
    Report {
        csv: PathBuf,
        /// Output directory (defaults to the CSV's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Spectra and decay rates of the linearized propagators.
    SpectralSuite {
        #[arg(long, default_value = "out/spectral-suite")]
        out: PathBuf,
        #[arg(long, default_value_t = 401)]
        n_y: usize,
        #[arg(long, default_value_t = 12.0)]
        y_max: f64,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Continue a rescaled snapshot as the unrescaled neck flow until it pinches.
    Zoom {
        snapshot: PathBuf,
        /// Anchor time; defaults to the snapshot's own `τ`.
        #[arg(long)]
        tau1: Option<f64>,
        #[arg(long, default_value = "out/zoom")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        stop_min: f64,
        #[arg(long, default_value_t = 0.5)]
        window: f64,
    },
}

/// Parses `NECKFLOW_THREADS`. The solvers run on one thread, which every valid cap allows.
fn thread_cap() -> Result<Option<usize>, String> {
    match std::env::var("NECKFLOW_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("NECKFLOW_THREADS must be a positive integer, got {s:?}")),
        },
    }
}

fn finish(report: anyhow::Result<Report>) -> ExitCode {
    match report {
        Ok(r) => {
            print!("{}", r.render());
            if r.passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAIL) }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAIL)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match thread_cap() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("usage error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let note = |mut r: Report| {
        r.note(format!("threads=1 (cap {})", threads.map_or("none".to_string(), |n| n.to_string())));
        r
    };
    match cli.command {
        Command::Run { config } => match RunConfig::load(&config) {
            Ok(cfg) => finish(run_experiment(&cfg).map(note)),
            Err(e) => {
                eprintln!("usage error: {e}");
                ExitCode::from(EXIT_USAGE)
            }
        },
        Command::Report { csv, out, no_plots } => {
            let dir = out.unwrap_or_else(|| csv.parent().map(PathBuf::from).unwrap_or_default());
            finish(std::fs::create_dir_all(&dir).map_err(Into::into).and_then(|_| report_csv(&csv, &dir, !no_plots)))
        }
        Command::SpectralSuite { out, n_y, y_max, eps, seed } => {
            finish(spectral_suite_in(n_y, y_max, eps, seed, &out).and_then(|r| {
                r.write(&out.join("report.txt"))?;
                Ok(note(r))
            }))
        }
        Command::Zoom { snapshot, tau1, out, stop_min, window } => {
            if !(stop_min > 0.0 && window > 0.0) {
                eprintln!("usage error: --stop-min and --window must be positive");
                return ExitCode::from(EXIT_USAGE);
            }
            let pc = PinchConfig { stop_min, window, controls: StepControls::default() };
            finish(zoom_from(&snapshot, tau1, &out, &pc).map(note))
        }
    }
}
