use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ssl_forge::data::{load, save, split};
use ssl_forge::harness::config::read_toml;
use ssl_forge::harness::{
    aggregate, format_accuracy, run_ablation, run_grid, write_ablation, write_grid, write_metrics_logs, GridOutcome, GridSpec,
    RunConfig, SynthFile,
};
use ssl_forge::model::checkpoint;
use ssl_forge::trainer::{evaluate, metrics_log, train};
use ssl_forge::Error;

#[derive(Parser)]
#[command(name = "ssl-forge", version, about = "Semi-supervised damage classification on paired pre/post crops")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Synth {
        /// TOML file with a `[synth]` table; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model.
    Train {
        /// Run config with `[data]`, `[split]`, `[train]` and `[output]` tables.
        #[arg(long)]
        config: PathBuf,
        /// Skip training and score this checkpoint on the configured test split.
        #[arg(long, value_name = "CHECKPOINT")]
        eval_only: Option<PathBuf>,
    },
    /// Run the label-count grid.
    Grid {
        #[arg(long)]
        spec: PathBuf,
        /// Receives grid.csv, grid_agg.csv and metrics/.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the augmentation-policy ablation.
    Ablation {
        #[arg(long)]
        spec: PathBuf,
        /// Receives ablation.csv, ablation_agg.csv and metrics/.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on every labeled example of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
}

/// Exit status for a failed run: 2 for configuration problems, 1 otherwise.
fn failure_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Policy(_) | Error::Split(_) => 2,
        _ => 1,
    }
}

fn run_train(config: &Path, eval_only: Option<&Path>) -> Result<(), Error> {
    let cfg: RunConfig = read_toml(config)?;
    cfg.train.validate()?;
    let examples = cfg.data.load()?;
    let data = split(&examples, &cfg.split.spec())?;
    if let Some(ckpt) = eval_only {
        let model = checkpoint::load(ckpt)?;
        let acc = evaluate(&model, &data.test, cfg.train.eval_batch)?;
        println!("test_accuracy={}", format_accuracy(acc));
        return Ok(());
    }
    let out = train(&cfg.train, &data)?;
    if let Some(path) = &cfg.output.metrics {
        std::fs::write(path, metrics_log(&out.metrics))?;
    }
    if let Some(path) = &cfg.output.checkpoint {
        checkpoint::save(&out.ema_model, path)?;
    }
    for (step, acc) in &out.eval_history {
        println!("step={step} ema_accuracy={}", format_accuracy(*acc));
    }
    println!("method={} labeled={} unlabeled={} test={}", cfg.train.method, data.labeled.len(), data.unlabeled.len(), data.test.len());
    if let Some(raw) = out.raw_test_accuracy {
        println!("raw_test_accuracy={}", format_accuracy(raw));
    }
    println!("test_accuracy={}", format_accuracy(out.test_accuracy));
    Ok(())
}

fn finish(outcome: &GridOutcome) -> ExitCode {
    for row in aggregate(&outcome.results) {
        let policy = row.policy.as_ref().map(|(n, f)| format!(" policy={n} [{f}]")).unwrap_or_default();
        println!(
            "{} {} n={}{policy}: {} +- {} ({} runs)",
            row.dataset,
            row.method,
            row.n_labeled,
            format_accuracy(row.mean),
            format_accuracy(row.std),
            row.count
        );
    }
    for f in &outcome.failed {
        eprintln!("failed: {} n={} seed={}: {}", f.method, f.n_labeled, f.seed, f.error);
    }
    if outcome.success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out } => (|| {
            let file: SynthFile = match config {
                Some(p) => read_toml(&p)?,
                None => SynthFile::default(),
            };
            let examples = ssl_forge::data::synth_generate(&file.synth);
            save(&examples, &out)?;
            println!("wrote {} examples to {}", examples.len(), out.display());
            Ok(())
        })(),
        Command::Train { config, eval_only } => run_train(&config, eval_only.as_deref()),
        Command::Grid { spec, out_dir } => {
            return match (|| {
                let spec: GridSpec = read_toml(&spec)?;
                let outcome = run_grid(&spec)?;
                write_grid(&outcome.results, &outcome.failed, &out_dir)?;
                write_metrics_logs(&outcome.results, &out_dir)?;
                Ok::<_, Error>(outcome)
            })() {
                Ok(outcome) => finish(&outcome),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(failure_code(&e))
                }
            };
        }
        Command::Ablation { spec, out_dir } => {
            return match (|| {
                let spec: GridSpec = read_toml(&spec)?;
                let outcome = run_ablation(&spec)?;
                write_ablation(&outcome.results, &outcome.failed, &out_dir)?;
                write_metrics_logs(&outcome.results, &out_dir)?;
                Ok::<_, Error>(outcome)
            })() {
                Ok(outcome) => finish(&outcome),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(failure_code(&e))
                }
            };
        }
        Command::Eval { checkpoint: ckpt, dataset } => (|| {
            let model = checkpoint::load(&ckpt)?;
            let examples: Vec<_> = load(&dataset)?.into_iter().filter(|e| e.label.is_some()).collect();
            let acc = evaluate(&model, &examples, 256)?;
            println!("examples={} accuracy={}", examples.len(), format_accuracy(acc));
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(failure_code(&e))
        }
    }
}
