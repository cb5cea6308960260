//! Thompson sampling and UCB action selection over MC-dropout samples of a
//! model's softmax output.
//!
//! The deterministic prefix (everything before the multi-head dropout) runs
//! once per row; each stochastic pass only re-runs dropout and the output
//! layer. Pass `j` of a selection draws its dropout mask from
//! `Stream::substream(base, j)`, where `base` is the selection's seed, so
//! passes can be computed in any order or in parallel with identical results.
//! In policy evaluation `base = derive_seed(config.seed, row index)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::SplitEval;
use crate::modelzoo::{argmax_offer, Model, ModelInput, Prefix};
use crate::ndnum::{dropout_mask, Tensor};
use crate::rng::{derive_seed, Stream};
use crate::synthgen::{Dataset, Sample};

const ROW_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Greedy argmax of the deterministic output.
    None,
    Ts,
    Ucb,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::None => "none",
            Algorithm::Ts => "ts",
            Algorithm::Ucb => "ucb",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Algorithm::None),
            "ts" => Ok(Algorithm::Ts),
            "ucb" => Ok(Algorithm::Ucb),
            other => Err(Error::Config(vec![format!(
                "unknown bandit algorithm {other:?} (expected none, ts or ucb)"
            )])),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub algorithm: Algorithm,
    #[serde(default = "defaults::n_mc_passes")]
    pub n_mc_passes: usize,
    /// UCB bound is the `confidence_rank`-th largest of the pass samples.
    #[serde(default = "defaults::confidence_rank")]
    pub confidence_rank: usize,
    #[serde(default = "defaults::dropout_p")]
    pub dropout_p: f64,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn n_mc_passes() -> usize {
        100
    }
    pub fn confidence_rank() -> usize {
        5
    }
    pub fn dropout_p() -> f64 {
        0.3
    }
}

impl BanditConfig {
    pub fn new(algorithm: Algorithm, seed: u64) -> Self {
        Self {
            algorithm,
            n_mc_passes: defaults::n_mc_passes(),
            confidence_rank: defaults::confidence_rank(),
            dropout_p: defaults::dropout_p(),
            seed,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_mc_passes == 0 {
            v.push("bandit.n_mc_passes must be positive".into());
        }
        if self.confidence_rank == 0 || self.confidence_rank > self.n_mc_passes {
            v.push(format!(
                "bandit.confidence_rank ({}) must lie in 1..=n_mc_passes ({})",
                self.confidence_rank, self.n_mc_passes
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            v.push(format!("bandit.dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        v
    }

    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Source of reward samples for a batch of rows.
pub trait McSampler: Sync {
    type Prefix: Sync;

    fn n_actions(&self) -> usize;

    /// Greedy offers (1-based) from the deterministic output.
    fn greedy_offers(&self, rows: &[&Sample]) -> Result<Vec<usize>>;

    /// Runs the deterministic part of the network once for `rows`.
    fn prefix(&self, rows: &[&Sample]) -> Result<Self::Prefix>;

    /// `[passes, n_actions]` sampled rewards for row `row` of the prefix;
    /// pass `j` uses `Stream::substream(base, j)`.
    fn sample(&self, prefix: &Self::Prefix, row: usize, base: u64, passes: usize, p: f64) -> Result<Tensor>;
}

impl McSampler for Model {
    type Prefix = Prefix;

    fn n_actions(&self) -> usize {
        self.spec().n_offers
    }

    fn greedy_offers(&self, rows: &[&Sample]) -> Result<Vec<usize>> {
        let inputs: Vec<ModelInput> = rows.iter().map(|r| ModelInput::from(*r)).collect();
        self.predict_offers(&inputs)
    }

    fn prefix(&self, rows: &[&Sample]) -> Result<Prefix> {
        let inputs: Vec<ModelInput> = rows.iter().map(|r| ModelInput::from(*r)).collect();
        Model::prefix(self, &inputs)
    }

    fn sample(&self, prefix: &Prefix, row: usize, base: u64, passes: usize, p: f64) -> Result<Tensor> {
        let masks = pass_masks(self.head_width(), p, base, passes);
        self.head_proba(prefix, row, &masks)
    }
}

/// Dropout masks of passes `0..passes` for one selection.
pub fn pass_masks(width: usize, p: f64, base: u64, passes: usize) -> Vec<Vec<f64>> {
    (0..passes)
        .map(|j| dropout_mask(width, p, &mut Stream::substream(base, j as u64)))
        .collect()
}

/// Per-action `rank`-th largest value over the sample rows of `samples[passes, k]`.
pub fn upper_bounds(samples: &Tensor, rank: usize) -> Result<Vec<f64>> {
    let (passes, k) = samples.dims2();
    if rank == 0 || rank > passes {
        return Err(Error::Config(vec![format!(
            "confidence rank {rank} outside 1..={passes}"
        )]));
    }
    let mut column = vec![0.0; passes];
    Ok((0..k)
        .map(|a| {
            for (j, c) in column.iter_mut().enumerate() {
                *c = samples.data()[j * k + a];
            }
            *column
                .select_nth_unstable_by(rank - 1, |x, y| y.total_cmp(x))
                .1
        })
        .collect())
}

fn require_multihead(model: &Model) -> Result<()> {
    if model.has_multihead() {
        Ok(())
    } else {
        Err(Error::Capability(format!(
            "{} has no multi-head dropout layer to sample from",
            model.spec().label()
        )))
    }
}

/// Thompson sampling: argmax of one stochastic pass.
pub fn ts_select(model: &Model, input: &ModelInput, dropout_p: f64, rng: &mut Stream) -> Result<usize> {
    require_multihead(model)?;
    let prefix = model.prefix(std::slice::from_ref(input))?;
    let base = rng.next_u64();
    let probs = McSampler::sample(model, &prefix, 0, base, 1, dropout_p)?;
    Ok(argmax_offer(probs.data()))
}

/// UCB: argmax over actions of the `confidence_rank`-th largest of
/// `n_mc_passes` stochastic passes.
pub fn ucb_select(model: &Model, input: &ModelInput, config: &BanditConfig, rng: &mut Stream) -> Result<usize> {
    config.validate()?;
    require_multihead(model)?;
    let prefix = model.prefix(std::slice::from_ref(input))?;
    let base = rng.next_u64();
    let samples = McSampler::sample(model, &prefix, 0, base, config.n_mc_passes, config.dropout_p)?;
    Ok(argmax_offer(&upper_bounds(&samples, config.confidence_rank)?))
}

/// Selection for one prefix row under `config`, with pass streams rooted at `base`.
pub fn select_row<S: McSampler>(sampler: &S, prefix: &S::Prefix, row: usize, base: u64, config: &BanditConfig) -> Result<usize> {
    match config.algorithm {
        Algorithm::None => Err(Error::Usage("greedy selection does not sample".into())),
        Algorithm::Ts => {
            let s = sampler.sample(prefix, row, base, 1, config.dropout_p)?;
            Ok(argmax_offer(s.data()))
        }
        Algorithm::Ucb => {
            let s = sampler.sample(prefix, row, base, config.n_mc_passes, config.dropout_p)?;
            Ok(argmax_offer(&upper_bounds(&s, config.confidence_rank)?))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEval {
    pub algorithm: Algorithm,
    pub eval: SplitEval,
    /// Selections per offer (index 0 is offer 1).
    pub selection_histogram: Vec<usize>,
}

/// Selects an offer for every row of `idx` and scores it against the label.
pub fn evaluate_policy<S: McSampler>(
    sampler: &S,
    dataset: &Dataset,
    idx: &[usize],
    config: &BanditConfig,
) -> Result<PolicyEval> {
    config.validate()?;
    if idx.is_empty() {
        return Err(Error::Evaluation("empty split".into()));
    }
    let chunks: Vec<Result<Vec<usize>>> = idx
        .par_chunks(ROW_CHUNK)
        .map(|chunk| {
            let rows: Vec<&Sample> = chunk.iter().map(|&i| &dataset.rows[i]).collect();
            if config.algorithm == Algorithm::None {
                return sampler.greedy_offers(&rows);
            }
            let prefix = sampler.prefix(&rows)?;
            rows.iter()
                .enumerate()
                .map(|(r, s)| {
                    let base = derive_seed(config.seed, s.index as u64);
                    select_row(sampler, &prefix, r, base, config)
                })
                .collect()
        })
        .collect();
    let mut selections = Vec::with_capacity(idx.len());
    for c in chunks {
        selections.extend(c?);
    }
    let n_actions = sampler.n_actions();
    let mut selection_histogram = vec![0; n_actions];
    for &s in &selections {
        selection_histogram[s - 1] += 1;
    }
    let eval = SplitEval::from_pairs(
        dataset.n_offers,
        idx.iter().map(|&i| dataset.rows[i].offer).zip(selections),
    )?;
    Ok(PolicyEval {
        algorithm: config.algorithm,
        eval,
        selection_histogram,
    })
}
