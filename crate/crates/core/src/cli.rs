//! The `promobench` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 training or numerical error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::banditsel::{evaluate_policy, Algorithm, BanditConfig};
use crate::checkpoint::{self, TrainingEcho};
use crate::config::{parse_config_file, ExperimentConfig, MAIN_DATASET};
use crate::error::{Error, Result};
use crate::experiment::{render_summary, run_experiment_with, ExperimentReport, SUMMARY_MD};
use crate::harness::{evaluate_splits, split, SplitEval};
use crate::synthgen::{generate_to_dir, load_dataset_dir, mislabeled_rows};

#[derive(Debug, Parser)]
#[command(name = "promobench", version, about = "Synthetic promo-offer benchmark: data, models, bandits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AlgoArg {
    None,
    Ts,
    Ucb,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::None => Algorithm::None,
            AlgoArg::Ts => Algorithm::Ts,
            AlgoArg::Ucb => Algorithm::Ucb,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset (dataset.csv + profiles.csv) from a config's [gen] section.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `main` or a [variants] name.
        #[arg(long, default_value = MAIN_DATASET)]
        dataset: String,
    },
    /// Re-label every row of a dataset and fail if any stored label disagrees.
    Verify {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one configured model on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Name of a [[models]] entry.
        #[arg(long)]
        model: String,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy accuracy of a checkpoint on the split it was trained with.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Bandit policy accuracy of a checkpoint on its split.
    BanditEval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        algo: AlgoArg,
        #[arg(long, default_value_t = 100)]
        passes: usize,
        #[arg(long, default_value_t = 5)]
        rank: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        dropout_p: f64,
    },
    /// Re-render summary.md of a finished run directory and print it.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run a whole experiment: generate, train, evaluate, report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen { config, out, dataset } => {
            let cfg = parse_config_file(&config)?;
            let spec = cfg
                .dataset(&dataset)
                .ok_or_else(|| Error::Config(vec![format!("config has no dataset `{dataset}`")]))?;
            let summary = generate_to_dir(spec, &out).map_err(|e| e.in_stage("gen"))?;
            println!(
                "wrote {} rows to {} (customer occurrences {}..{})",
                summary.rows,
                out.display(),
                summary.customer_min,
                summary.customer_max
            );
            println!("label histogram: {:?}", summary.label_histogram);
            Ok(())
        }
        Command::Verify { data } => {
            let (spec, ds) = load_dataset_dir(&data).map_err(|e| e.in_stage("verify"))?;
            let bad = mislabeled_rows(&ds.rows, spec.n_offers);
            if bad.is_empty() {
                println!("{} rows verified", ds.len());
                Ok(())
            } else {
                let shown: Vec<String> = bad.iter().take(10).map(|i| i.to_string()).collect();
                Err(Error::Data(format!(
                    "{} of {} rows carry a label that disagrees with their features (first: {})",
                    bad.len(),
                    ds.len(),
                    shown.join(", ")
                )))
            }
        }
        Command::Train { config, data, model, out } => {
            let cfg = parse_config_file(&config)?;
            let entry = cfg
                .model(&model)
                .ok_or_else(|| Error::Config(vec![format!("config has no model `{model}`")]))?;
            let (gen, ds) = load_dataset_dir(&data).map_err(|e| e.in_stage("load"))?;
            let split_spec = cfg.split_for(entry.split);
            let splits = split(ds.len(), &split_spec).map_err(|e| e.in_stage("split"))?;
            let mut m = crate::modelzoo::build(&entry.spec, entry.init_seed).map_err(|e| e.in_stage("build"))?;
            let log = crate::harness::train(&mut m, &ds, &splits, &entry.train).map_err(|e| e.in_stage("train"))?;
            let echo = TrainingEcho {
                model: entry.clone(),
                split: split_spec,
                gen,
            };
            checkpoint::save(&m, &echo.info(), &out)?;
            let log_path = out.with_extension("log.csv");
            std::fs::write(&log_path, log.to_csv()).map_err(|e| Error::io(&log_path, e))?;
            println!(
                "trained {} for {} epochs (best {}), checkpoint {}",
                entry.name,
                log.epochs_trained(),
                log.best_epoch,
                out.display()
            );
            Ok(())
        }
        Command::Eval { checkpoint, data } => {
            let (model, ds, splits) = load_for_eval(&checkpoint, &data)?;
            let r = evaluate_splits(&model, &ds, &splits).map_err(|e| e.in_stage("eval"))?;
            println!("split,rows,accuracy,within_one");
            for (name, e) in [("train", &r.train), ("valid", &r.valid), ("test", &r.test)] {
                println!("{name},{},{},{}", e.rows, e.accuracy, e.within_one_fraction);
            }
            Ok(())
        }
        Command::BanditEval {
            checkpoint,
            data,
            algo,
            passes,
            rank,
            seed,
            dropout_p,
        } => {
            let (model, ds, splits) = load_for_eval(&checkpoint, &data)?;
            let cfg = BanditConfig {
                algorithm: algo.into(),
                n_mc_passes: passes,
                confidence_rank: rank,
                dropout_p,
                seed,
            };
            let r = evaluate_policy(&model, &ds, &splits.test, &cfg).map_err(|e| e.in_stage("bandit-eval"))?;
            println!("algorithm,n_mc_passes,confidence_rank,dropout_p,seed,test_rows,test_acc,test_within_one");
            print_policy_row(&cfg, &r.eval);
            Ok(())
        }
        Command::Report { run } => {
            let report = ExperimentReport::load(&run).map_err(|e| e.in_stage("report"))?;
            let md = render_summary(&report);
            let path = run.join(SUMMARY_MD);
            std::fs::write(&path, &md).map_err(|e| Error::io(&path, e))?;
            print!("{md}");
            Ok(())
        }
        Command::Run { config, out } => {
            let mut cfg: ExperimentConfig = parse_config_file(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let report = run_experiment_with(&cfg, |line| eprintln!("{line}"))?;
            print!("{}", render_summary(&report));
            Ok(())
        }
    }
}

fn print_policy_row(cfg: &BanditConfig, e: &SplitEval) {
    println!(
        "{},{},{},{},{},{},{},{}",
        cfg.algorithm.name(),
        cfg.n_mc_passes,
        cfg.confidence_rank,
        cfg.dropout_p,
        cfg.seed,
        e.rows,
        e.accuracy,
        e.within_one_fraction
    );
}

/// Loads a checkpoint and its dataset and rebuilds the split recorded in the checkpoint.
fn load_for_eval(
    ckpt: &Path,
    data: &Path,
) -> Result<(crate::modelzoo::Model, crate::synthgen::Dataset, crate::harness::Splits)> {
    let (model, info) = checkpoint::load(ckpt).map_err(|e| e.in_stage("load checkpoint"))?;
    let (_, ds) = load_dataset_dir(data).map_err(|e| e.in_stage("load"))?;
    let echo = TrainingEcho::from_info(&info)?;
    let splits = split(ds.len(), &echo.split).map_err(|e| e.in_stage("split"))?;
    Ok((model, ds, splits))
}
