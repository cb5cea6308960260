//! End-to-end experiment runner and report files.
//!
//! Output directory layout:
//!
//! ```text
//! config.toml                   resolved config (every seed explicit)
//! data/<dataset>/dataset.csv    generated rows
//! data/<dataset>/profiles.csv   profile sidecar
//! models/<name>.ckpt            trained weights
//! logs/<name>.csv               per-epoch training log
//! table1_random_split.csv       random-split models on the main dataset, plus the random policy
//! table2_sequential_split.csv   sequential-split models
//! ablation.csv                  models trained on variant datasets
//! table3_bandits.csv            greedy / TS / UCB selection accuracy
//! report.json                   everything above plus confusion matrices
//! summary.md                    markdown rendering of report.json
//! ```
//!
//! Every CSV starts with a `# config=` line carrying the JSON config echo.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::banditsel::{evaluate_policy, Algorithm, BanditConfig, PolicyEval};
use crate::checkpoint::{self, TrainingEcho};
use crate::config::{ExperimentConfig, ModelEntry, MAIN_DATASET};
use crate::error::{Error, Result};
use crate::harness::{evaluate_splits, split, train, RandomPolicy, SplitMode, SplitReport, Splits};
use crate::modelzoo::build;
use crate::rng::component_seed;
use crate::synthgen::{
    generate_in_memory, write_dataset_csv, write_profiles_csv, Dataset, GenSpec, DATASET_FILE, PROFILES_FILE,
};

pub const REPORT_JSON: &str = "report.json";
pub const SUMMARY_MD: &str = "summary.md";
pub const TABLE1: &str = "table1_random_split.csv";
pub const TABLE2: &str = "table2_sequential_split.csv";
pub const TABLE3: &str = "table3_bandits.csv";
pub const ABLATION: &str = "ablation.csv";
pub const RANDOM_POLICY: &str = "random";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub name: String,
    pub label: String,
    pub dataset: String,
    pub split: SplitMode,
    pub params: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub seconds: f64,
    pub report: SplitReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditResult {
    pub model: String,
    pub config: BanditConfig,
    pub train: PolicyEval,
    pub valid: PolicyEval,
    pub test: PolicyEval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub random_policy: SplitReport,
    pub models: Vec<ModelResult>,
    pub bandits: Vec<BanditResult>,
}

impl ExperimentReport {
    pub fn model(&self, name: &str) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn bandit(&self, algorithm: Algorithm) -> Option<&BanditResult> {
        self.bandits.iter().find(|b| b.config.algorithm == algorithm)
    }

    /// The part that must repeat exactly: wall-clock times are zeroed and the
    /// output location is cleared, since a rerun may write elsewhere.
    pub fn comparable(&self) -> Self {
        let mut r = self.clone();
        r.config.output_dir = PathBuf::new();
        for m in &mut r.models {
            m.seconds = 0.0;
        }
        r
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(REPORT_JSON);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// Writes the dataset files of `spec` to `dir` and returns the rows.
pub fn materialize_dataset(spec: &GenSpec, dir: &Path) -> Result<Dataset> {
    let (profiles, dataset) = generate_in_memory(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ppath = dir.join(PROFILES_FILE);
    let mut out = BufWriter::new(File::create(&ppath).map_err(|e| Error::io(&ppath, e))?);
    write_profiles_csv(spec, &profiles, &mut out).map_err(|e| Error::io(&ppath, e))?;
    let dpath = dir.join(DATASET_FILE);
    let mut out = BufWriter::new(File::create(&dpath).map_err(|e| Error::io(&dpath, e))?);
    write_dataset_csv(&dataset.rows, &mut out).map_err(|e| Error::io(&dpath, e))?;
    Ok(dataset)
}

pub fn dataset_dir(output_dir: &Path, name: &str) -> PathBuf {
    output_dir.join("data").join(name)
}

pub fn checkpoint_path(output_dir: &Path, model: &str) -> PathBuf {
    output_dir.join("models").join(format!("{model}.ckpt"))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn echo_line(value: &impl Serialize) -> String {
    format!("# config={}\n", serde_json::to_string(value).expect("echo serializes"))
}

/// Trains and evaluates one configured model, saving its checkpoint and log.
pub fn run_model(config: &ExperimentConfig, entry: &ModelEntry, dataset: &Dataset) -> Result<(ModelResult, Splits)> {
    let dataset_spec = config
        .dataset(&entry.dataset)
        .ok_or_else(|| Error::Config(vec![format!("unknown dataset `{}`", entry.dataset)]))?;
    let split_spec = config.split_for(entry.split);
    let splits = split(dataset.len(), &split_spec).map_err(|e| e.in_stage("split"))?;
    let mut model = build(&entry.spec, entry.init_seed).map_err(|e| e.in_stage("build"))?;
    let log = train(&mut model, dataset, &splits, &entry.train).map_err(|e| e.in_stage("train"))?;
    let report = evaluate_splits(&model, dataset, &splits).map_err(|e| e.in_stage("evaluate"))?;
    let echo = TrainingEcho {
        model: entry.clone(),
        split: split_spec,
        gen: dataset_spec.clone(),
    };
    let ckpt = checkpoint_path(&config.output_dir, &entry.name);
    if let Some(parent) = ckpt.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    checkpoint::save(&model, &echo.info(), &ckpt)?;
    let log_path = config.output_dir.join("logs").join(format!("{}.csv", entry.name));
    write_file(&log_path, &(echo_line(entry) + &log.to_csv()))?;
    Ok((
        ModelResult {
            name: entry.name.clone(),
            label: entry.spec.label(),
            dataset: entry.dataset.clone(),
            split: entry.split,
            params: model.param_count(),
            epochs: log.epochs_trained(),
            best_epoch: log.best_epoch,
            stopped_early: log.stopped_early,
            seconds: log.seconds,
            report,
        },
        splits,
    ))
}

/// Runs the whole experiment, calling `progress` with one line per step.
pub fn run_experiment_with(config: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<ExperimentReport> {
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join("config.toml"), &config.to_toml()?)?;

    let mut datasets = BTreeMap::new();
    for name in config.datasets_in_use() {
        let spec = config
            .dataset(&name)
            .ok_or_else(|| Error::Config(vec![format!("unknown dataset `{name}`")]))?;
        progress(&format!("generating dataset {name} ({} rows)", spec.n_samples));
        let ds = materialize_dataset(spec, &dataset_dir(out, &name)).map_err(|e| e.in_stage("generate"))?;
        datasets.insert(name, ds);
    }
    let main = &datasets[MAIN_DATASET];

    let random_splits = split(main.len(), &config.split_for(SplitMode::Random)).map_err(|e| e.in_stage("split"))?;
    let policy = RandomPolicy {
        n_offers: main.n_offers,
        seed: component_seed(config.global_seed, "random_policy"),
    };
    let random_policy = evaluate_splits(&policy, main, &random_splits).map_err(|e| e.in_stage("evaluate"))?;

    let mut models = Vec::new();
    let mut bandits = Vec::new();
    for entry in &config.models {
        progress(&format!("training {} on {} ({:?} split)", entry.name, entry.dataset, entry.split));
        let ds = &datasets[&entry.dataset];
        let (result, splits) = run_model(config, entry, ds)?;
        progress(&format!(
            "  {}: test accuracy {:.4}, {} epochs, {:.1}s",
            entry.name, result.report.test.accuracy, result.epochs, result.seconds
        ));
        models.push(result);
        if config.bandit_model.as_deref() == Some(entry.name.as_str()) {
            let (model, _) = checkpoint::load(&checkpoint_path(out, &entry.name))?;
            for bc in &config.bandit {
                progress(&format!("bandit {} on {}", bc.algorithm.name(), entry.name));
                let eval = |idx: &[usize]| evaluate_policy(&model, ds, idx, bc).map_err(|e| e.in_stage("bandit"));
                bandits.push(BanditResult {
                    model: entry.name.clone(),
                    config: bc.clone(),
                    train: eval(&splits.train)?,
                    valid: eval(&splits.valid)?,
                    test: eval(&splits.test)?,
                });
            }
        }
    }

    let report = ExperimentReport {
        config: config.clone(),
        random_policy,
        models,
        bandits,
    };
    write_reports(&report, out).map_err(|e| e.in_stage("report"))?;
    Ok(report)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(config, |_| {})
}

const MODEL_COLUMNS: &str =
    "model,architecture,dataset,params,train_acc,valid_acc,test_acc,test_within_one,epochs,best_epoch,seconds\n";

fn model_row(m: &ModelResult) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{:.3}\n",
        m.name,
        m.label,
        m.dataset,
        m.params,
        m.report.train.accuracy,
        m.report.valid.accuracy,
        m.report.test.accuracy,
        m.report.test.within_one_fraction,
        m.epochs,
        m.best_epoch,
        m.seconds
    )
}

fn in_table1(m: &ModelResult) -> bool {
    m.split == SplitMode::Random && m.dataset == MAIN_DATASET
}

fn in_table2(m: &ModelResult) -> bool {
    m.split == SplitMode::Sequential
}

fn in_ablation(m: &ModelResult) -> bool {
    m.dataset != MAIN_DATASET && m.split == SplitMode::Random
}

/// Writes every report file for `report` into `dir`.
pub fn write_reports(report: &ExperimentReport, dir: &Path) -> Result<()> {
    let echo = echo_line(&report.config);

    let mut t1 = echo.clone() + MODEL_COLUMNS;
    for m in report.models.iter().filter(|m| in_table1(m)) {
        t1 += &model_row(m);
    }
    let r = &report.random_policy;
    t1 += &format!(
        "{RANDOM_POLICY},uniform,{MAIN_DATASET},0,{},{},{},{},0,0,0.000\n",
        r.train.accuracy, r.valid.accuracy, r.test.accuracy, r.test.within_one_fraction
    );
    write_file(&dir.join(TABLE1), &t1)?;

    let mut t2 = echo.clone() + MODEL_COLUMNS;
    for m in report.models.iter().filter(|m| in_table2(m)) {
        t2 += &model_row(m);
    }
    write_file(&dir.join(TABLE2), &t2)?;

    let mut ab = echo.clone() + MODEL_COLUMNS;
    for m in report.models.iter().filter(|m| in_ablation(m)) {
        ab += &model_row(m);
    }
    write_file(&dir.join(ABLATION), &ab)?;

    let mut t3 = echo + "model,algorithm,n_mc_passes,confidence_rank,dropout_p,train_acc,valid_acc,test_acc,test_within_one\n";
    for b in &report.bandits {
        t3 += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            b.model,
            b.config.algorithm.name(),
            b.config.n_mc_passes,
            b.config.confidence_rank,
            b.config.dropout_p,
            b.train.eval.accuracy,
            b.valid.eval.accuracy,
            b.test.eval.accuracy,
            b.test.eval.within_one_fraction
        );
    }
    write_file(&dir.join(TABLE3), &t3)?;

    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(&dir.join(REPORT_JSON), &(json + "\n"))?;
    write_file(&dir.join(SUMMARY_MD), &render_summary(report))
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn model_table(out: &mut String, rows: &[&ModelResult], random: Option<&SplitReport>) {
    out.push_str("| Model | Params | Train | Valid | Test | Test within ±1 | Epochs |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    for m in rows {
        let r = &m.report;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            m.name,
            m.params,
            pct(r.train.accuracy),
            pct(r.valid.accuracy),
            pct(r.test.accuracy),
            pct(r.test.within_one_fraction),
            m.epochs
        );
    }
    if let Some(r) = random {
        let _ = writeln!(
            out,
            "| random | 0 | {} | {} | {} | {} | - |",
            pct(r.train.accuracy),
            pct(r.valid.accuracy),
            pct(r.test.accuracy),
            pct(r.test.within_one_fraction)
        );
    }
    out.push('\n');
}

/// Markdown summary with one table per results table.
pub fn render_summary(report: &ExperimentReport) -> String {
    let c = &report.config;
    let mut out = String::new();
    let _ = writeln!(out, "# Experiment summary\n");
    let _ = writeln!(
        out,
        "Dataset: {} rows, {} customers, {} campaigns, {} offers. Global seed {}.\n",
        c.gen.n_samples, c.gen.n_customers, c.gen.n_campaigns, c.gen.n_offers, c.global_seed
    );
    let all: Vec<&ModelResult> = report.models.iter().collect();

    out.push_str("## Table 1: random split (accuracy %)\n\n");
    let t1: Vec<_> = all.iter().copied().filter(|m| in_table1(m)).collect();
    model_table(&mut out, &t1, Some(&report.random_policy));

    out.push_str("## Table 2: sequential split (accuracy %)\n\n");
    let t2: Vec<_> = all.iter().copied().filter(|m| in_table2(m)).collect();
    model_table(&mut out, &t2, None);

    out.push_str("## Table 3: bandit selection (accuracy %)\n\n");
    out.push_str("| Model | Algorithm | Passes | Rank | Train | Valid | Test |\n");
    out.push_str("|---|---|---:|---:|---:|---:|---:|\n");
    for b in &report.bandits {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            b.model,
            b.config.algorithm.name(),
            b.config.n_mc_passes,
            b.config.confidence_rank,
            pct(b.train.eval.accuracy),
            pct(b.valid.eval.accuracy),
            pct(b.test.eval.accuracy)
        );
    }
    out.push('\n');

    out.push_str("## Ablation: variant datasets (accuracy %)\n\n");
    let ab: Vec<_> = all.iter().copied().filter(|m| in_ablation(m)).collect();
    model_table(&mut out, &ab, None);
    out
}
