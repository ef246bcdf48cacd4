use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use sagin_ia::config::{CsiType, SystemConfig};
use sagin_ia::dof;
use sagin_ia::harness::{self, figures::Figure};
use sagin_ia::scheme::SchemeId;
use sagin_ia::Result;

#[derive(Parser)]
#[command(name = "sagin-ia", version, about = "RIS-assisted satellite/D2D interference management")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a config file.
    Validate { config: PathBuf },
    /// Run noiseless Monte-Carlo trials of one scheme.
    Simulate {
        #[arg(long)]
        scheme: SchemeId,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        trials: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads, 0 for one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Write the first delayed-CSI session as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate the sum-DoF formula for one CSI type.
    Dof {
        #[arg(long)]
        csi: CsiType,
        #[arg(long)]
        kd: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        ms: usize,
    },
    /// Write the DoF table behind one evaluation figure.
    Sweep {
        #[arg(long)]
        figure: Figure,
        #[arg(long)]
        out: PathBuf,
    },
    /// One noiseless trial of every applicable scheme, residuals only.
    Verify {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Validate { config } => {
            let cfg = SystemConfig::load(&config)?;
            let report = cfg.validate();
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.is_valid())
        }
        Cmd::Simulate {
            scheme,
            config,
            trials,
            out,
            threads,
            trace,
        } => {
            let cfg = SystemConfig::load(&config)?;
            for w in cfg.validate().warnings {
                log::warn!("{w}");
            }
            let start = Instant::now();
            let report = harness::run_experiment(&cfg, scheme, trials, threads)?;
            std::fs::write(&out, report.to_json()? + "\n")?;
            if let Some(path) = trace {
                std::fs::write(path, harness::dcsi_trace(&cfg, 0)?)?;
            }
            eprintln!("{trials} trials in {:.3} s", start.elapsed().as_secs_f64());
            let violations = report.aggregate.violations();
            for v in &violations {
                eprintln!("violation: {v}");
            }
            Ok(violations.is_empty())
        }
        Cmd::Dof { csi, kd, n, ms } => {
            if kd == 0 || n == 0 || ms == 0 {
                return Err(sagin_ia::Error::InvalidConfig("kd, n and ms must be at least 1".into()));
            }
            let (scheme, point) = dof::select_scheme(csi, ms, kd, n);
            println!("scheme={scheme} regime={} dof={}", point.regime, point.dof);
            Ok(true)
        }
        Cmd::Sweep { figure, out } => {
            std::fs::write(&out, harness::figures::figure_csv(figure)?)?;
            Ok(true)
        }
        Cmd::Verify { config } => {
            let cfg = SystemConfig::load(&config)?;
            let report = harness::verify_config(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
