//! Splits, minibatch training with early stopping, and accuracy metrics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modelzoo::{Model, ModelInput, ModelKind};
use crate::ndnum::{adam_step, AdamConfig, DropoutMode};
use crate::rng::{derive_seed, Stream};
use crate::synthgen::{Dataset, Sample};

const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// All rows permuted, then cut train/valid/test.
    Random,
    /// Tail of the file is the test set; the head is permuted into train/valid.
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// (train, valid, test). Sequential mode holds out the last `test`
    /// fraction and divides the rest train:valid in the same ratio.
    #[serde(default = "default_fractions")]
    pub fractions: (f64, f64, f64),
    #[serde(default)]
    pub seed: u64,
}

fn default_fractions() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}

impl SplitSpec {
    pub fn random(seed: u64) -> Self {
        Self {
            mode: SplitMode::Random,
            fractions: default_fractions(),
            seed,
        }
    }

    pub fn sequential(seed: u64) -> Self {
        Self {
            mode: SplitMode::Sequential,
            ..Self::random(seed)
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let (a, b, c) = self.fractions;
        let mut v = Vec::new();
        if [a, b, c].iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            v.push(format!("split.fractions must all be positive, got ({a}, {b}, {c})"));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            v.push(format!("split.fractions must sum to 1, got {}", a + b + c));
        }
        v
    }
}

/// Row indices of the three splits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `0..n_rows` according to `spec`.
pub fn split(n_rows: usize, spec: &SplitSpec) -> Result<Splits> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::Split(v.join("; ")));
    }
    if n_rows == 0 {
        return Err(Error::Split("dataset is empty".into()));
    }
    let (ft, fv, fs) = spec.fractions;
    let mut rng = Stream::new(spec.seed);
    let splits = match spec.mode {
        SplitMode::Random => {
            let mut idx: Vec<usize> = (0..n_rows).collect();
            rng.shuffle(&mut idx);
            let n_train = (n_rows as f64 * ft).round() as usize;
            let n_valid = ((n_rows as f64 * fv).round() as usize).min(n_rows - n_train.min(n_rows));
            let test = idx.split_off((n_train + n_valid).min(n_rows));
            let valid = idx.split_off(n_train.min(idx.len()));
            Splits {
                train: idx,
                valid,
                test,
            }
        }
        SplitMode::Sequential => {
            let n_test = ((n_rows as f64 * fs).round() as usize).min(n_rows);
            let head = n_rows - n_test;
            let mut idx: Vec<usize> = (0..head).collect();
            rng.shuffle(&mut idx);
            let n_train = (head as f64 * ft / (ft + fv)).round() as usize;
            let valid = idx.split_off(n_train.min(head));
            Splits {
                train: idx,
                valid,
                test: (head..n_rows).collect(),
            }
        }
    };
    for (name, part) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
        if part.is_empty() {
            return Err(Error::Split(format!(
                "{name} split would be empty for {n_rows} rows with fractions {:?}",
                spec.fractions
            )));
        }
    }
    Ok(splits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    /// Defaults to 5 for wide and deep models, 10 for wide & deep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default = "defaults::restore_best")]
    pub restore_best: bool,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn batch_size() -> usize {
        1024
    }
    pub fn max_epochs() -> usize {
        200
    }
    pub fn restore_best() -> bool {
        true
    }
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            lr: defaults::lr(),
            batch_size: defaults::batch_size(),
            max_epochs: defaults::max_epochs(),
            patience: None,
            restore_best: true,
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn patience_for(&self, kind: ModelKind) -> usize {
        self.patience.unwrap_or(match kind {
            ModelKind::WideDeep => 10,
            ModelKind::Wide | ModelKind::Deep => 5,
        })
    }

    pub fn violations(&self, kind: ModelKind) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.lr.is_finite() && self.lr > 0.0) {
            v.push(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            v.push("train.batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            v.push("train.max_epochs must be positive".into());
        }
        let p = self.patience_for(kind);
        if p == 0 || p >= self.max_epochs {
            v.push(format!(
                "train.patience ({p}) must be positive and below train.max_epochs ({})",
                self.max_epochs
            ));
        }
        v
    }
}

/// Patience-based early stopping on a monitored value (lower is better).
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    wait: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            wait: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        if value < self.best {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub valid_loss: f64,
    pub valid_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights the model holds after training.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub seconds: f64,
}

impl TrainLog {
    pub fn epochs_trained(&self) -> usize {
        self.epochs.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,valid_loss,valid_acc\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_loss, e.train_acc, e.valid_loss, e.valid_acc
            ));
        }
        s
    }
}

fn inputs_of(dataset: &Dataset, idx: &[usize]) -> (Vec<ModelInput>, Vec<usize>) {
    idx.iter()
        .map(|&i| {
            let r = &dataset.rows[i];
            (ModelInput::from(r), r.offer - 1)
        })
        .unzip()
}

/// Mean loss and accuracy with dropout off.
pub fn loss_and_accuracy(model: &Model, dataset: &Dataset, idx: &[usize]) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::Evaluation("empty index list".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut rng = Stream::new(0);
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (inputs, labels) = inputs_of(dataset, chunk);
        let (g, l) = model.loss_graph(&inputs, &labels, DropoutMode::Off, &mut rng)?;
        loss += g.value(l).data()[0] * chunk.len() as f64;
        correct += count_correct(g.logits_of(l)?, &labels);
    }
    Ok((loss / idx.len() as f64, correct as f64 / idx.len() as f64))
}

fn count_correct(logits: &crate::ndnum::Tensor, labels: &[usize]) -> usize {
    let k = logits.dims2().1;
    logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &l)| crate::modelzoo::argmax_offer(row) - 1 == l)
        .count()
}

/// Trains `model` in place with Adam and early stopping on validation loss.
pub fn train(model: &mut Model, dataset: &Dataset, splits: &Splits, spec: &TrainSpec) -> Result<TrainLog> {
    let kind = model.spec().kind;
    let v = spec.violations(kind);
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    if splits.train.is_empty() {
        return Err(Error::Training("empty train split".into()));
    }
    if splits.valid.is_empty() {
        return Err(Error::Training("empty validation split".into()));
    }
    let start = Instant::now();
    let adam = AdamConfig::with_lr(spec.lr);
    let mode = if model.has_multihead() {
        DropoutMode::Train
    } else {
        DropoutMode::Off
    };
    let mut stopper = EarlyStopping::new(spec.patience_for(kind));
    let mut best = model.clone();
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        seconds: 0.0,
    };
    let mut order = splits.train.clone();
    for epoch in 1..=spec.max_epochs {
        let epoch_seed = derive_seed(spec.seed, epoch as u64);
        Stream::new(epoch_seed).shuffle(&mut order);
        let mut dropout_rng = Stream::substream(epoch_seed, u64::MAX);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(spec.batch_size) {
            let (inputs, labels) = inputs_of(dataset, batch);
            let (g, loss) = model.loss_graph(&inputs, &labels, mode, &mut dropout_rng)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                *model = best;
                return Err(Error::Training(format!(
                    "non-finite loss in epoch {epoch}; weights restored to epoch {}",
                    log.best_epoch
                )));
            }
            loss_sum += value * batch.len() as f64;
            correct += count_correct(g.logits_of(loss)?, &labels);
            model.params_mut().zero_grad();
            g.backward(loss, model.params_mut())?;
            if let Err(e) = adam_step(model.params_mut(), &adam) {
                *model = best;
                return Err(Error::Training(format!("{e}; weights restored to epoch {}", log.best_epoch)));
            }
        }
        let (valid_loss, valid_acc) = loss_and_accuracy(model, dataset, &splits.valid)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_acc: correct as f64 / order.len() as f64,
            valid_loss,
            valid_acc,
        });
        match stopper.observe(epoch, valid_loss) {
            StopDecision::Improved => {
                best.copy_values_from(model);
                log.best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                log.stopped_early = true;
                break;
            }
        }
    }
    if spec.restore_best {
        model.copy_values_from(&best);
    } else {
        log.best_epoch = log.epochs.len();
    }
    log.seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Anything that maps rows to 1-based offers.
pub trait OfferPredictor {
    fn predict(&self, rows: &[&Sample]) -> Result<Vec<usize>>;
}

impl OfferPredictor for Model {
    fn predict(&self, rows: &[&Sample]) -> Result<Vec<usize>> {
        let inputs: Vec<ModelInput> = rows.iter().map(|r| ModelInput::from(*r)).collect();
        self.predict_offers(&inputs)
    }
}

/// Uniformly random offers; row `i` always receives the same draw.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    pub n_offers: usize,
    pub seed: u64,
}

impl OfferPredictor for RandomPolicy {
    fn predict(&self, rows: &[&Sample]) -> Result<Vec<usize>> {
        Ok(rows
            .iter()
            .map(|r| Stream::substream(self.seed, r.index as u64).below(self.n_offers) + 1)
            .collect())
    }
}

/// Accuracy, confusion matrix and within-one share over one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    pub rows: usize,
    pub accuracy: f64,
    /// `confusion[true - 1][predicted - 1]`.
    pub confusion: Vec<Vec<usize>>,
    pub within_one_fraction: f64,
}

impl SplitEval {
    pub fn from_pairs(n_offers: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut confusion = vec![vec![0usize; n_offers]; n_offers];
        let (mut rows, mut hits, mut near) = (0usize, 0usize, 0usize);
        for (truth, pred) in pairs {
            if truth == 0 || truth > n_offers || pred == 0 || pred > n_offers {
                return Err(Error::Evaluation(format!(
                    "offer pair ({truth}, {pred}) outside 1..={n_offers}"
                )));
            }
            confusion[truth - 1][pred - 1] += 1;
            rows += 1;
            hits += usize::from(truth == pred);
            near += usize::from(truth.abs_diff(pred) <= 1);
        }
        if rows == 0 {
            return Err(Error::Evaluation("empty index list".into()));
        }
        Ok(Self {
            rows,
            accuracy: hits as f64 / rows as f64,
            confusion,
            within_one_fraction: near as f64 / rows as f64,
        })
    }

    /// Accuracy recomputed from the confusion matrix.
    pub fn trace_accuracy(&self) -> f64 {
        let trace: usize = (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum();
        trace as f64 / self.rows as f64
    }
}

/// Greedy evaluation of `predictor` over the rows in `idx`.
pub fn evaluate<P: OfferPredictor + ?Sized>(predictor: &P, dataset: &Dataset, idx: &[usize]) -> Result<SplitEval> {
    if idx.is_empty() {
        return Err(Error::Evaluation("empty index list".into()));
    }
    let mut pairs = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let rows: Vec<&Sample> = chunk.iter().map(|&i| &dataset.rows[i]).collect();
        let preds = predictor.predict(&rows)?;
        pairs.extend(rows.iter().map(|r| r.offer).zip(preds));
    }
    SplitEval::from_pairs(dataset.n_offers, pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train: SplitEval,
    pub valid: SplitEval,
    pub test: SplitEval,
}

pub fn evaluate_splits<P: OfferPredictor + ?Sized>(predictor: &P, dataset: &Dataset, splits: &Splits) -> Result<SplitReport> {
    Ok(SplitReport {
        train: evaluate(predictor, dataset, &splits.train)?,
        valid: evaluate(predictor, dataset, &splits.valid)?,
        test: evaluate(predictor, dataset, &splits.test)?,
    })
}
