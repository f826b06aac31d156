use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use micromodes::pipeline::{
    artifact, emit_report, run_pipeline, run_single_stage, Manifest, PathOverrides, PipelineConfig, PipelineError, Stage,
};

#[derive(Parser)]
#[command(name = "micromodes", version, about = "Order-flow modes, VAR dynamics and metaorder impact")]
struct Cli {
    /// TOML config; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Log stage progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event tape.
    Synth {
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        events_per_day: Option<usize>,
    },
    /// Detect price changes and aggregate flows between them.
    Coarse {
        /// Event tape (CSV, or .csv.gz).
        #[arg(long)]
        tape: Option<PathBuf>,
    },
    /// Bin, Box-Cox, deseasonalise and normalise the records.
    Preprocess {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        bin: Option<usize>,
    },
    /// Bid-ask symmetric principal modes of the transformed vectors.
    Modes {
        #[arg(long)]
        tprime: Option<PathBuf>,
    },
    /// Fit symmetry-constrained VAR(p) models in mode space.
    Var {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        tprime: Option<PathBuf>,
        #[arg(long)]
        max_lags: Option<usize>,
    },
    /// Unit-root gamma of every fitted lag order.
    Stability {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        max_lags: Option<usize>,
    },
    /// Imbalance scaling fit and simulated metaorder impact.
    Impact {
        #[command(flatten)]
        inputs: ModelInputs,
        #[arg(long)]
        records: Option<PathBuf>,
        /// Volume added per step.
        #[arg(long)]
        q: Option<f64>,
        /// Metaorder length in steps.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Lag order of the simulated model.
        #[arg(long)]
        lag: Option<usize>,
    },
    /// Every enabled stage in order, then the report.
    Run,
    /// Summary of the artifacts in the output directory.
    Report {
        /// Write the summary here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelInputs {
    /// Mode basis (basis.json).
    #[arg(long)]
    basis: Option<PathBuf>,
    /// Fitted models (models.json).
    #[arg(long)]
    model: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn set(overrides: &mut PathOverrides, name: &str, path: &Option<PathBuf>) {
    if let Some(p) = path {
        overrides.insert(name.to_string(), p.clone());
    }
}

fn stage_command(cfg: &mut PipelineConfig, command: &Command) -> Option<(Stage, PathOverrides)> {
    let mut o = PathOverrides::new();
    let stage = match command {
        Command::Synth { days, events_per_day } => {
            if let Some(d) = days {
                cfg.synth.days = *d;
            }
            if let Some(e) = events_per_day {
                cfg.synth.events_per_day = *e;
            }
            Stage::Synth
        }
        Command::Coarse { tape } => {
            set(&mut o, artifact::TAPE, tape);
            Stage::Coarse
        }
        Command::Preprocess { records, bin } => {
            set(&mut o, artifact::RECORDS, records);
            if let Some(b) = bin {
                cfg.preprocess.bin = *b;
            }
            Stage::Preprocess
        }
        Command::Modes { tprime } => {
            set(&mut o, artifact::TPRIME, tprime);
            Stage::Modes
        }
        Command::Var { inputs, tprime, max_lags } => {
            set(&mut o, artifact::BASIS, &inputs.basis);
            set(&mut o, artifact::MODELS, &inputs.model);
            set(&mut o, artifact::TPRIME, tprime);
            if let Some(m) = max_lags {
                cfg.var.max_lags = *m;
            }
            Stage::Var
        }
        Command::Stability { inputs, max_lags } => {
            set(&mut o, artifact::BASIS, &inputs.basis);
            set(&mut o, artifact::MODELS, &inputs.model);
            if let Some(m) = max_lags {
                cfg.stability.max_lags = *m;
            }
            Stage::Stability
        }
        Command::Impact {
            inputs,
            records,
            q,
            k,
            horizon,
            lag,
        } => {
            set(&mut o, artifact::BASIS, &inputs.basis);
            set(&mut o, artifact::MODELS, &inputs.model);
            set(&mut o, artifact::RECORDS, records);
            if q.is_some() {
                cfg.impact.q = *q;
            }
            if let Some(k) = k {
                cfg.impact.k = *k;
            }
            if let Some(h) = horizon {
                cfg.impact.horizon = *h;
            }
            if lag.is_some() {
                cfg.impact.lag = *lag;
            }
            Stage::Impact
        }
        Command::Run | Command::Report { .. } => return None,
    };
    Some((stage, o))
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let mut cfg = load_config(cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    }
    if let Some((stage, overrides)) = stage_command(&mut cfg, &cli.command) {
        let manifest = run_single_stage(&cfg, stage, overrides)?;
        eprintln!("{}: {} artifacts recorded in {}", stage.name(), manifest.artifacts.len(), cfg.out_dir.display());
        return Ok(());
    }
    match &cli.command {
        Command::Run => {
            let manifest = run_pipeline(&cfg)?;
            eprintln!("{} artifacts recorded in {}", manifest.artifacts.len(), cfg.out_dir.display());
        }
        Command::Report { out } => {
            if Manifest::load(&cfg.out_dir)?.is_none() {
                return Err(PipelineError::Config(format!(
                    "no {} in {}",
                    micromodes::pipeline::MANIFEST,
                    cfg.out_dir.display()
                )));
            }
            let text = emit_report(&cfg.out_dir)?;
            match out {
                Some(p) => std::fs::write(p, text).map_err(|e| PipelineError::Io {
                    path: p.display().to_string(),
                    source: e,
                })?,
                None => print!("{text}"),
            }
        }
        _ => unreachable!("stage commands handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
