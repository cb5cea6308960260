//! Experiment configuration files (TOML).
//!
//! ```toml
//! global_seed = 7
//! output_dir = "runs/desk"
//!
//! [gen]                       # GenSpec; n_samples, n_customers, n_campaigns required
//! n_samples = 400000
//! n_customers = 200
//! n_campaigns = 20
//!
//! [variants.low_variance]     # named datasets: GenSpec fields overlaid on [gen]
//! customer_sd_caps = [0.05, 0.1]
//!
//! [split]                     # SplitSpec, mode defaults to "random"
//! [train]                     # TrainSpec defaults for every model
//!
//! [[models]]
//! name = "deep-v3-seq"        # defaults to the spec label
//! split = "sequential"        # defaults to [split].mode
//! dataset = "main"            # "main" or a [variants] key
//! spec = { kind = "deep", deep_input_variant = 3 }
//! train = { patience = 8 }    # overlaid on [train]
//!
//! bandit_model = "wide_deep"  # model entry the [[bandit]] policies run on
//! [[bandit]]
//! algorithm = "ucb"
//! ```
//!
//! Seeds left out of the file are derived from `global_seed` with
//! [`component_seed`]: `gen` and `split` for those sections, `init/<name>` and
//! `train/<name>` per model and `bandit` for the policies. A variant inherits
//! the `[gen]` seed unless it sets its own. Model specs take `n_customers`,
//! `n_campaigns` and `n_offers` from their dataset unless given.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::banditsel::BanditConfig;
use crate::error::{Error, Result};
use crate::harness::{SplitMode, SplitSpec, TrainSpec};
use crate::modelzoo::ModelSpec;
use crate::rng::component_seed;
use crate::synthgen::GenSpec;

pub const MAIN_DATASET: &str = "main";

const TOP_KEYS: &[&str] = &[
    "global_seed",
    "output_dir",
    "gen",
    "variants",
    "split",
    "train",
    "models",
    "bandit_model",
    "bandit",
];
const REQUIRED_TOP: &[&str] = &["global_seed", "output_dir", "gen", "models"];
const REQUIRED_GEN: &[&str] = &["n_samples", "n_customers", "n_campaigns"];
const MODEL_KEYS: &[&str] = &["name", "split", "dataset", "spec", "train", "init_seed"];

/// One trained model of an experiment. `multihead` defaults to on for
/// wide & deep specs and off otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub split: SplitMode,
    pub dataset: String,
    pub init_seed: u64,
    pub spec: ModelSpec,
    pub train: TrainSpec,
}

/// A fully resolved experiment: every seed explicit, every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub global_seed: u64,
    pub output_dir: PathBuf,
    pub gen: GenSpec,
    #[serde(default)]
    pub variants: BTreeMap<String, GenSpec>,
    pub split: SplitSpec,
    pub train: TrainSpec,
    pub models: Vec<ModelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandit_model: Option<String>,
    #[serde(default)]
    pub bandit: Vec<BanditConfig>,
}

impl ExperimentConfig {
    /// Generator spec of dataset `name`.
    pub fn dataset(&self, name: &str) -> Option<&GenSpec> {
        if name == MAIN_DATASET {
            Some(&self.gen)
        } else {
            self.variants.get(name)
        }
    }

    pub fn split_for(&self, mode: SplitMode) -> SplitSpec {
        SplitSpec {
            mode,
            ..self.split.clone()
        }
    }

    pub fn model(&self, name: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Names of datasets some model trains on, `main` first.
    pub fn datasets_in_use(&self) -> Vec<String> {
        let mut names = vec![MAIN_DATASET.to_string()];
        for m in &self.models {
            if !names.contains(&m.dataset) {
                names.push(m.dataset.clone());
            }
        }
        names
    }

    /// JSON echo embedded in output artifacts.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// The resolved config as a config file that parses back to `self`.
    pub fn to_toml(&self) -> Result<String> {
        let Value::Table(t) = json_to_toml(self.echo()).expect("config is an object") else {
            unreachable!("config serializes to a table")
        };
        toml::to_string(&t).map_err(|e| Error::Config(vec![format!("cannot write config as TOML: {e}")]))
    }
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Parses and validates a config, reporting every violation found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("TOML syntax: {}", e.message())]))?;
    let mut v = Vec::new();

    for key in root.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            v.push(format!("unknown key `{key}`"));
        }
    }
    for key in REQUIRED_TOP {
        if !root.contains_key(*key) {
            v.push(format!("missing required key `{key}`"));
        }
    }
    let gen_table = table_at(&root, "gen", &mut v);
    match &gen_table {
        Some(t) => {
            for key in REQUIRED_GEN {
                if !t.contains_key(*key) {
                    v.push(format!("missing required key `gen.{key}`"));
                }
            }
        }
        None if !root.contains_key("gen") => {
            for key in REQUIRED_GEN {
                v.push(format!("missing required key `gen.{key}`"));
            }
        }
        None => {}
    }

    let global_seed = match root.get("global_seed") {
        Some(value) => seed_of(value).unwrap_or_else(|| {
            v.push(format!("global_seed must be an integer, got {value}"));
            0
        }),
        None => 0,
    };
    let output_dir = match root.get("output_dir") {
        Some(Value::String(s)) => PathBuf::from(s),
        Some(other) => {
            v.push(format!("output_dir must be a string, got {other}"));
            PathBuf::new()
        }
        None => PathBuf::new(),
    };

    // [gen]
    let gen_base = gen_table.unwrap_or_default();
    let gen = decode::<GenSpec>("gen", with_seed(gen_base.clone(), component_seed(global_seed, "gen")), &mut v);
    if let Some(g) = &gen {
        v.extend(g.violations());
    }

    // [variants.*]
    let mut variants = BTreeMap::new();
    if let Some(vt) = table_at(&root, "variants", &mut v) {
        for (name, overlay) in vt {
            let path = format!("variants.{name}");
            if name == MAIN_DATASET {
                v.push(format!("`{path}`: `{MAIN_DATASET}` is reserved for [gen]"));
                continue;
            }
            let Value::Table(overlay) = overlay else {
                v.push(format!("`{path}` must be a table"));
                continue;
            };
            let gen_seed = gen.as_ref().map_or(0, |g| g.seed);
            let merged = with_seed(merge(&gen_base, &overlay), gen_seed);
            if let Some(g) = decode::<GenSpec>(&path, merged, &mut v) {
                v.extend(g.violations().into_iter().map(|m| format!("{path}: {m}")));
                variants.insert(name, g);
            }
        }
    }

    // [split]
    let mut split_table = table_at(&root, "split", &mut v).unwrap_or_default();
    split_table
        .entry("mode")
        .or_insert_with(|| Value::String("random".into()));
    let split = decode::<SplitSpec>("split", with_seed(split_table, component_seed(global_seed, "split")), &mut v);
    if let Some(s) = &split {
        v.extend(s.violations());
    }

    // [train]
    let train_base = table_at(&root, "train", &mut v).unwrap_or_default();
    let train = decode::<TrainSpec>("train", train_base.clone(), &mut v);

    // [[models]]
    let mut models = Vec::new();
    match root.get("models") {
        Some(Value::Array(items)) => {
            if items.is_empty() {
                v.push("`models` must list at least one model".into());
            }
            for (i, item) in items.iter().enumerate() {
                let Value::Table(t) = item else {
                    v.push(format!("`models[{i}]` must be a table"));
                    continue;
                };
                if let Some(m) = model_entry(i, t, global_seed, &gen, &variants, &split, &train_base, &mut v) {
                    models.push(m);
                }
            }
        }
        Some(_) => v.push("`models` must be an array of tables ([[models]])".into()),
        None => {}
    }
    let mut seen = BTreeSet::new();
    for m in &models {
        if !seen.insert(m.name.clone()) {
            v.push(format!("duplicate model name `{}`", m.name));
        }
    }

    // bandit
    let bandit_model = match root.get("bandit_model") {
        Some(Value::String(s)) => {
            match models.iter().find(|m| &m.name == s) {
                Some(m) if !m.spec.multihead => {
                    v.push(format!("bandit_model `{s}` has no multi-head dropout layer"))
                }
                None if !models.is_empty() => v.push(format!("bandit_model `{s}` is not a configured model")),
                _ => {}
            }
            Some(s.clone())
        }
        Some(other) => {
            v.push(format!("bandit_model must be a string, got {other}"));
            None
        }
        None => None,
    };
    let mut bandit = Vec::new();
    match root.get("bandit") {
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                let path = format!("bandit[{i}]");
                let Value::Table(t) = item else {
                    v.push(format!("`{path}` must be a table"));
                    continue;
                };
                let t = with_seed(t.clone(), component_seed(global_seed, "bandit"));
                if let Some(b) = decode::<BanditConfig>(&path, t, &mut v) {
                    v.extend(b.violations().into_iter().map(|m| format!("{path}: {m}")));
                    bandit.push(b);
                }
            }
            if !items.is_empty() && bandit_model.is_none() {
                v.push("`bandit` policies need `bandit_model`".into());
            }
        }
        Some(_) => v.push("`bandit` must be an array of tables ([[bandit]])".into()),
        None => {}
    }

    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    Ok(ExperimentConfig {
        global_seed,
        output_dir,
        gen: gen.expect("checked"),
        variants,
        split: split.expect("checked"),
        train: train.expect("checked"),
        models,
        bandit_model,
        bandit,
    })
}

#[allow(clippy::too_many_arguments)]
fn model_entry(
    i: usize,
    t: &Table,
    global_seed: u64,
    gen: &Option<GenSpec>,
    variants: &BTreeMap<String, GenSpec>,
    split: &Option<SplitSpec>,
    train_base: &Table,
    v: &mut Vec<String>,
) -> Option<ModelEntry> {
    let at = format!("models[{i}]");
    for key in t.keys() {
        if !MODEL_KEYS.contains(&key.as_str()) {
            v.push(format!("unknown key `{at}.{key}`"));
        }
    }
    let dataset = match t.get("dataset") {
        None => MAIN_DATASET.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => {
            v.push(format!("`{at}.dataset` must be a string, got {other}"));
            return None;
        }
    };
    let ds = if dataset == MAIN_DATASET {
        gen.as_ref()
    } else {
        let found = variants.get(&dataset);
        if found.is_none() {
            v.push(format!("`{at}.dataset`: unknown dataset `{dataset}`"));
        }
        found
    };
    let mut spec_table = match t.get("spec") {
        Some(Value::Table(s)) => s.clone(),
        Some(_) => {
            v.push(format!("`{at}.spec` must be a table"));
            return None;
        }
        None => {
            v.push(format!("missing required key `{at}.spec`"));
            return None;
        }
    };
    let is_wide_deep = spec_table.get("kind").and_then(Value::as_str) == Some("wide_deep");
    spec_table
        .entry("multihead")
        .or_insert(Value::Boolean(is_wide_deep));
    if let Some(g) = ds {
        for (key, value) in [
            ("n_customers", g.n_customers),
            ("n_campaigns", g.n_campaigns),
            ("n_offers", g.n_offers),
        ] {
            spec_table
                .entry(key)
                .or_insert_with(|| Value::Integer(value as i64));
        }
    }
    let spec = decode::<ModelSpec>(&format!("{at}.spec"), spec_table, v)?;
    let spec_v = spec.violations();
    v.extend(spec_v.iter().map(|m| format!("{at}.spec: {m}")));
    if let Some(g) = ds {
        if (spec.n_customers, spec.n_campaigns, spec.n_offers) != (g.n_customers, g.n_campaigns, g.n_offers) {
            v.push(format!("{at}.spec: entity counts do not match dataset `{dataset}`"));
        }
    }
    let name = match t.get("name") {
        None => spec.label(),
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(other) => {
            v.push(format!("`{at}.name` must be a non-empty string, got {other}"));
            return None;
        }
    };
    let split_mode = match t.get("split") {
        None => split.as_ref().map_or(SplitMode::Random, |s| s.mode),
        Some(value) => decode_value::<SplitMode>(&format!("{at}.split"), value.clone(), v)?,
    };
    let overlay = match t.get("train") {
        None => Table::new(),
        Some(Value::Table(o)) => o.clone(),
        Some(_) => {
            v.push(format!("`{at}.train` must be a table"));
            return None;
        }
    };
    let train_table = with_seed(merge(train_base, &overlay), component_seed(global_seed, &format!("train/{name}")));
    let train = decode::<TrainSpec>(&format!("{at}.train"), train_table, v)?;
    v.extend(train.violations(spec.kind).into_iter().map(|m| format!("{at}: {m}")));
    let init_seed = match t.get("init_seed") {
        None => component_seed(global_seed, &format!("init/{name}")),
        Some(value) => match seed_of(value) {
            Some(s) => s,
            None => {
                v.push(format!("`{at}.init_seed` must be an integer, got {value}"));
                return None;
            }
        },
    };
    if spec_v.is_empty() {
        Some(ModelEntry {
            name,
            split: split_mode,
            dataset,
            init_seed,
            spec,
            train,
        })
    } else {
        None
    }
}

fn table_at(root: &Table, key: &str, v: &mut Vec<String>) -> Option<Table> {
    match root.get(key) {
        Some(Value::Table(t)) => Some(t.clone()),
        Some(_) => {
            v.push(format!("`{key}` must be a table"));
            None
        }
        None => None,
    }
}

/// TOML integers are signed 64-bit, so seeds above `i64::MAX` are written as
/// their two's-complement bit pattern and read back with `as u64`.
fn seed_of(value: &Value) -> Option<u64> {
    value.as_integer().map(|i| i as u64)
}

/// Inserts `seed` unless the table sets one.
fn with_seed(mut t: Table, seed: u64) -> Table {
    t.entry("seed").or_insert(Value::Integer(seed as i64));
    t
}

fn json_to_toml(j: serde_json::Value) -> Option<Value> {
    use serde_json::Value as J;
    Some(match j {
        J::Null => return None,
        J::Bool(b) => Value::Boolean(b),
        J::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => Value::Integer(i),
            (None, Some(u)) => Value::Integer(u as i64),
            _ => Value::Float(n.as_f64().expect("finite number")),
        },
        J::String(s) => Value::String(s),
        J::Array(a) => Value::Array(a.into_iter().filter_map(json_to_toml).collect()),
        J::Object(o) => Value::Table(
            o.into_iter()
                .filter_map(|(k, v)| json_to_toml(v).map(|v| (k, v)))
                .collect(),
        ),
    })
}

fn merge(base: &Table, overlay: &Table) -> Table {
    let mut out = base.clone();
    for (k, val) in overlay {
        out.insert(k.clone(), val.clone());
    }
    out
}

fn decode<T: DeserializeOwned>(path: &str, t: Table, v: &mut Vec<String>) -> Option<T> {
    // Seeds may carry a wrapped u64; restore it before handing off to serde.
    let mut json = match serde_json::to_value(&t) {
        Ok(j) => j,
        Err(e) => {
            v.push(format!("`{path}`: {e}"));
            return None;
        }
    };
    if let Some(serde_json::Value::Number(n)) = json.get("seed").cloned() {
        if let Some(i) = n.as_i64() {
            json["seed"] = serde_json::Value::from(i as u64);
        }
    }
    match serde_json::from_value(json) {
        Ok(x) => Some(x),
        Err(e) => {
            v.push(format!("`{path}`: {e}"));
            None
        }
    }
}

fn decode_value<T: DeserializeOwned>(path: &str, value: Value, v: &mut Vec<String>) -> Option<T> {
    match value.try_into() {
        Ok(x) => Some(x),
        Err(e) => {
            let e: toml::de::Error = e;
            v.push(format!("`{path}`: {}", e.message()));
            None
        }
    }
}
