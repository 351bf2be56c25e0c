use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use idml::data::{self, SynthConfig};
use idml::harness::{self, DataSource, RunConfig, SweepParam};
use idml::losses::LossKind;
use idml::model::checkpoint;
use idml::model::gradcheck::GradcheckOptions;
use idml::{IdmlError, Metric};

#[derive(Parser)]
#[command(name = "idml", version, about = "Introspective deep metric learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON). Defaults to the desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset (desk or full) instead of a config file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    test_metric: Option<Metric>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Train, evaluate on the test split and write the run outputs.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the test split of the configured data.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One run per value of a parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// tau, gamma, batch_size, semantic_dim or uncertainty_dim
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        parallel: bool,
    },
    /// Finite-difference and gradient-weight checks for the configured loss.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluation and uncertainty tables of a checkpoint on a dataset file.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<RunConfig, IdmlError> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => RunConfig::desk(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
        if let DataSource::Synthetic(sc) = &mut cfg.data {
            sc.seed = s;
        }
    }
    if let Some(o) = &c.output {
        cfg.output_dir = Some(o.clone());
    }
    if let Some(m) = c.metric {
        cfg.metric = m;
    }
    if let Some(l) = c.loss {
        cfg.loss = l;
    }
    if let Some(t) = c.tau {
        cfg.metric_params.tau = t;
    }
    if let Some(g) = c.gamma {
        cfg.metric_params.gamma = g;
    }
    if let Some(m) = c.test_metric {
        cfg.eval.test_metric = m;
    }
    if let Some(e) = c.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &IdmlError) -> u8 {
    match e {
        IdmlError::Numerical(_) | IdmlError::NonFinite { .. } => 3,
        _ => 2,
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), IdmlError> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), IdmlError> {
    emit(&format!("{}\n", serde_json::to_string_pretty(v)?))
}

fn run(cmd: Command) -> Result<u8, IdmlError> {
    match cmd {
        Command::Synth { common, out, format } => {
            let cfg = load_config(&common)?;
            let sc = match cfg.data {
                DataSource::Synthetic(s) => s,
                DataSource::File { .. } => SynthConfig {
                    seed: cfg.seed,
                    ..SynthConfig::default()
                },
            };
            let ds = data::generate(&sc)?;
            match format {
                Format::Csv => data::save_csv(&ds, &out)?,
                Format::Binary => data::save_binary(&ds, &out)?,
            }
            eprintln!("wrote {} samples to {}", ds.len(), out.display());
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            let out = harness::train(&cfg)?;
            if let Some(ev) = &out.record.eval {
                print_json(ev)?;
            }
        }
        Command::Eval { common, checkpoint: path } => {
            let cfg = load_config(&common)?;
            let model = checkpoint::load(path)?;
            let ev = harness::evaluate_checkpoint(&cfg, &model)?;
            if let Some(dir) = &cfg.output_dir {
                harness::write_evaluation(dir, &ev)?;
            }
            print_json(&ev.report)?;
        }
        Command::Sweep {
            common,
            param,
            values,
            parallel,
        } => {
            let cfg = load_config(&common)?;
            let param: SweepParam = param.parse()?;
            let runs = harness::sweep(&cfg, param, &values, parallel)?;
            emit(&harness::sweep_csv(&cfg, param, &values, &runs))?;
        }
        Command::Gradcheck { common } => {
            let cfg = load_config(&common)?;
            let outcome = harness::gradcheck(&cfg, &GradcheckOptions::default())?;
            print_json(&outcome)?;
            if !outcome.passed {
                return Ok(4);
            }
        }
        Command::Diagnose {
            common,
            checkpoint: path,
            data: data_path,
        } => {
            let cfg = load_config(&common)?;
            let model = checkpoint::load(path)?;
            let ds = data::load(data_path)?;
            let ev = harness::diagnose(&model, &ds, &cfg.eval_options(), cfg.seed)?;
            if let Some(dir) = &cfg.output_dir {
                harness::write_evaluation(dir, &ev)?;
            }
            print_json(&ev.report)?;
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
