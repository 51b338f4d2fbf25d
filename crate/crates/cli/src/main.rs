//! `ynetr` command line: phantom | wavelet | train | infer | eval | summary.
//!
//! Failures print one line `error[<class>]: <kind>: <message>` to stderr
//! and exit with 1 (data), 2 (config), 3 (i/o) or 4 (numeric).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ynetr::config::{apply_variant, RunConfig};
use ynetr::run;
use ynetr::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "ynetr", version, about = "Dual-encoder wavelet segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of paired image/label volumes.
    Phantom {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split a volume into low- and high-frequency reconstructions.
    Wavelet {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory, writing a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Total optimizer steps (overrides epochs × steps_per_epoch).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Built-in ablation variant applied on top of the config.
        #[arg(long)]
        variant: Option<String>,
        /// Use the small 32³ preset instead of the full-size defaults
        /// when no config file is given.
        #[arg(long)]
        tiny: bool,
        /// Continue from the checkpoint already in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Predict whole volumes with a trained checkpoint.
    Infer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Per-volume Dice of predictions against labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate variant → Dice across run directories.
    Summary {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, tiny: bool) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None if tiny => Ok(RunConfig::tiny()),
        None => Ok(RunConfig::default()),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Data => 1,
        ErrorClass::Config => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numeric => 4,
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom {
            config,
            out,
            count,
            seed,
        } => {
            let mut cfg = load_config(config.as_deref(), false)?;
            if let Some(n) = count {
                cfg.phantom.count = n;
            }
            if let Some(s) = seed {
                cfg.phantom.spec.seed = s;
            }
            cfg.validate()?;
            for name in run::phantom_dataset(&cfg, &out)? {
                println!("{}", out.join(name).display());
            }
        }
        Command::Wavelet { input, out } => {
            let (lf, hf) = run::wavelet_split(&input, &out)?;
            println!("{}\n{}", lf.display(), hf.display());
        }
        Command::Train {
            config,
            data,
            out,
            steps,
            seed,
            variant,
            tiny,
            resume,
        } => {
            let mut cfg = load_config(config.as_deref(), tiny)?;
            if let Some(v) = variant {
                cfg = apply_variant(&cfg, &v)?;
            }
            if let Some(s) = steps {
                cfg.train.max_steps = Some(s);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let outcome = run::train_run(&cfg, &data, &out, resume)?;
            let last = outcome.history.last().map_or(f32::NAN, |r| r.loss);
            println!(
                "{}: {} steps, final loss {last:.6}, training-set mean dice {:.4}",
                cfg.name, outcome.steps, outcome.eval.mean_dice
            );
        }
        Command::Infer {
            config,
            checkpoint,
            out,
            inputs,
        } => {
            let cfg = load_config(config.as_deref(), false)?;
            for (name, p) in run::infer_run(&cfg, &checkpoint, &inputs, &out)? {
                println!("{name}: {} foreground voxels", p.mask.foreground_count());
            }
        }
        Command::Eval { pred, gt, out } => {
            let (names, report) = run::eval_run(&pred, &gt)?;
            let csv = report.to_csv(&names);
            if let Some(path) = out {
                write_file(&path, &csv)?;
            }
            print!("{csv}");
        }
        Command::Summary { runs } => {
            print!("{}", run::summary_table(&run::summary(&runs)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {}: {msg}", class.as_str(), e.kind());
            ExitCode::from(exit_code(class))
        }
    }
}
