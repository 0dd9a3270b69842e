//! Command-line entry point: prepare, train, eval, ablate, params, synth.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use faf::checkpoint::Checkpoint;
use faf::runner::{self, AblationGrid, RunConfig};
use faf::synth::SynthSpec;

#[derive(Parser)]
#[command(name = "faf", about = "Few-shot forecasting with feature-adaptive routing", version)]
struct Cli {
    /// Suppress progress output; errors still print.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override config-file values, one per config key.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Config file (JSON or flat `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Force single-threaded execution.
    #[arg(long)]
    sequential: bool,
}

impl Overrides {
    fn build(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set `{kv}`: expected KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.sequential {
            cfg.parallel = false;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Partition tasks, fit normalization stats, and write a load summary.
    Prepare {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "prepare_out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Meta-train a model and save the best checkpoint plus a train log.
    Train {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "train_out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Few-shot evaluate a checkpoint on its test tasks.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "eval_out")]
        out: PathBuf,
        /// Also write per-task per-horizon predictions as CSV.
        #[arg(long)]
        predictions: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train/eval one model per ablation grid cell.
    Ablate {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "ablate_out")]
        out: PathBuf,
        /// Grid: `sr` (module x regions) or `length` (window lengths).
        #[arg(long, default_value = "sr")]
        grid: String,
        /// Restrict to named cells, `;`-separated (e.g. "S=1,R=8").
        #[arg(long)]
        only: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print parameter counts with the closed-form accounting.
    Params {
        /// Read the config from a checkpoint instead of flags.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate a seeded synthetic corpus with known decomposition.
    Synth {
        #[arg(long, default_value = "synth_out")]
        out: PathBuf,
        #[arg(long, default_value_t = 84)]
        tasks: usize,
        #[arg(long, default_value_t = 140)]
        length: usize,
        #[arg(long, default_value_t = 2)]
        templates: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let quiet = cli.quiet;
    let say = |s: &str| {
        if !quiet {
            println!("{s}");
        }
    };
    match cli.command {
        Command::Prepare { csv, out, overrides } => {
            let cfg = overrides.build()?;
            let prepared = runner::cmd_prepare(&csv, &out, &cfg)?;
            say(&prepared.summary.render());
            say(&format!("wrote splits, norm stats, and summary to {}", out.display()));
        }
        Command::Train { csv, out, overrides } => {
            let cfg = overrides.build()?;
            let outputs = runner::cmd_train(&csv, &out, &cfg, |line| say(line))?;
            say(&format!(
                "checkpoint: {}\ntrain log:  {}",
                outputs.checkpoint.display(),
                outputs.train_log.display()
            ));
        }
        Command::Eval { checkpoint, csv, out, predictions, overrides } => {
            if !checkpoint.exists() {
                bail!(
                    "checkpoint {} does not exist; run `faf train` first or pass --checkpoint",
                    checkpoint.display()
                );
            }
            let cfg = overrides.build()?;
            let outputs = runner::cmd_eval(&checkpoint, &csv, &out, &cfg, predictions)?;
            say(&std::fs::read_to_string(&outputs.report_txt)?);
            say(&format!("report: {}", outputs.report_json.display()));
            if let Some(p) = &outputs.predictions_csv {
                say(&format!("predictions: {}", p.display()));
            }
        }
        Command::Ablate { csv, out, grid, only, overrides } => {
            let cfg = overrides.build()?;
            let grid = match grid.as_str() {
                "sr" => AblationGrid::ModuleRegions,
                "length" => AblationGrid::Lengths,
                other => bail!("unknown grid `{other}` (expected `sr` or `length`)"),
            };
            let rows = runner::cmd_ablate(&csv, &out, &cfg, grid, only.as_deref())?;
            say(&format!("{:<12} {:>12} {:>12} {:>12} {:>6}", "setting", "rmse", "mae", "mape%", "epoch"));
            for r in &rows {
                say(&format!(
                    "{:<12} {:>12.6} {:>12.6} {:>12.4} {:>6}",
                    r.setting, r.rmse, r.mae, r.mape, r.best_epoch
                ));
            }
            say(&format!("table: {}", out.join("ablation.csv").display()));
        }
        Command::Params { checkpoint, overrides } => {
            let config = match checkpoint {
                Some(path) => Checkpoint::load(&path)?.model.config,
                None => overrides.build()?.model_config(),
            };
            let (counts, formula) = runner::cmd_params(&config);
            println!("total parameters:  {}", counts.total);
            println!("active per forward: {}", counts.active);
            println!("{formula}");
        }
        Command::Synth { out, tasks, length, templates, noise, seed } => {
            let spec = SynthSpec {
                n_tasks: tasks,
                length,
                n_templates: templates,
                noise_sigma: noise,
                seed,
                ..SynthSpec::default()
            };
            let outputs = runner::cmd_synth(&spec, &out)?;
            say(&format!(
                "corpus: {}\ndecomposition: {}",
                outputs.corpus_csv.display(),
                outputs.decomposition_json.display()
            ));
        }
    }
    Ok(())
}
