//! Cross-entropy training, evaluation metrics, fold cross-validation and the
//! paired bootstrap significance test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{user_folds, Corpus, Label};
use crate::model::{backward, forward_train, FusionMode, ModelParams, Prediction};
use crate::tabular::TabularVector;
use crate::textprep::TokenSequence;
use crate::{Error, Result, Scalar};

/// Probabilities below this are clamped before taking the log.
pub const LOSS_EPS: f64 = 1e-12;

/// Examples per gradient work unit; fixed so that the reduction order does
/// not depend on the thread count.
const CHUNK: usize = 8;

/// One training row: a post's token sequence joined with its tabular vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub user_id: String,
    pub tokens: TokenSequence,
    pub tab: TabularVector<T>,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: FusionMode,
    pub optimizer: Optimizer,
    /// Global-norm gradient clipping threshold.
    pub clip_norm: Option<f64>,
    /// Apply the model's dropout rates during training.
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            mode: FusionMode::AttentionFusion,
            optimizer: Optimizer::default(),
            clip_norm: None,
            dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("clip_norm {c}")));
            }
        }
        Ok(())
    }
}

/// `−ln p[label]` with the probability clamped at [`LOSS_EPS`]. The flag
/// reports whether clamping happened.
pub fn loss<T: Scalar>(probs: &[T], label: Label) -> (T, bool) {
    let p = probs[label.index()];
    let eps = T::of(LOSS_EPS);
    if p < eps {
        (-eps.ln(), true)
    } else {
        (-p.ln(), false)
    }
}

/// Mean loss over a batch of `(probabilities, label)` pairs.
pub fn mean_loss<'a, T: Scalar>(items: impl IntoIterator<Item = (&'a [T], Label)>) -> (T, bool) {
    let mut sum = T::zero();
    let mut n = 0usize;
    let mut clamped = false;
    for (p, y) in items {
        let (l, c) = loss(p, y);
        sum += l;
        clamped |= c;
        n += 1;
    }
    (if n == 0 { T::zero() } else { sum / T::of_usize(n) }, clamped)
}

/// Gradient of the mean batch loss.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub grads: ModelParams<T>,
    pub loss: T,
    pub clamped: bool,
}

struct DropoutStream {
    seed: u64,
    first: u64,
}

fn batch_gradients<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&Example<T>],
    mode: FusionMode,
    dropout: Option<DropoutStream>,
) -> Result<Gradients<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch".into()));
    }
    let weight = T::one() / T::of_usize(batch.len());
    let partials: Vec<Result<(ModelParams<T>, T, bool)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut g = params.zeros_like();
            let mut loss_sum = T::zero();
            let mut clamped = false;
            for (j, ex) in chunk.iter().enumerate() {
                let mut rng = dropout.as_ref().map(|d| {
                    let mut r = ChaCha8Rng::seed_from_u64(d.seed);
                    r.set_stream(d.first + (ci * CHUNK + j) as u64);
                    r
                });
                let cache = forward_train(params, &ex.tokens, &ex.tab, mode, rng.as_mut())?;
                let (l, c) = loss(&cache.probs, ex.label);
                loss_sum += l;
                clamped |= c;
                backward(params, &cache, ex.label, weight, &mut g);
            }
            Ok((g, loss_sum, clamped))
        })
        .collect();
    let mut total = params.zeros_like();
    let mut loss_sum = T::zero();
    let mut clamped = false;
    for part in partials {
        let (g, l, c) = part?;
        total.add_scaled(&g, T::one());
        loss_sum += l;
        clamped |= c;
    }
    if !total.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(Gradients {
        grads: total,
        loss: loss_sum * weight,
        clamped,
    })
}

/// Exact gradient of the mean cross-entropy over `batch` with dropout
/// disabled.
pub fn gradients<T: Scalar>(params: &ModelParams<T>, batch: &[Example<T>], mode: FusionMode) -> Result<Gradients<T>> {
    let refs: Vec<&Example<T>> = batch.iter().collect();
    batch_gradients(params, &refs, mode, None)
}

enum OptState<T> {
    Sgd,
    Momentum(ModelParams<T>),
    Adam { m: ModelParams<T>, v: ModelParams<T>, t: i32 },
}

fn apply_update<T: Scalar>(params: &mut ModelParams<T>, grads: &ModelParams<T>, state: &mut OptState<T>, opt: Optimizer, lr: f64) {
    let lr_t = T::of(lr);
    let grad_tensors: Vec<&[T]> = grads.named_tensors().into_iter().map(|(_, t)| t.data()).collect();
    match (state, opt) {
        (OptState::Sgd, _) => {
            for (p, g) in params.tensors_mut().into_iter().zip(grad_tensors) {
                p.data_mut().iter_mut().zip(g).for_each(|(p, &g)| *p -= lr_t * g);
            }
        }
        (OptState::Momentum(vel), Optimizer::Momentum { beta }) => {
            let b = T::of(beta);
            for ((p, v), g) in params.tensors_mut().into_iter().zip(vel.tensors_mut()).zip(grad_tensors) {
                for ((p, v), &g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g) {
                    *v = b * *v + g;
                    *p -= lr_t * *v;
                }
            }
        }
        (OptState::Adam { m, v, t }, Optimizer::Adam { beta1, beta2, eps }) => {
            *t += 1;
            let (b1, b2) = (T::of(beta1), T::of(beta2));
            let c1 = T::one() - b1.powi(*t);
            let c2 = T::one() - b2.powi(*t);
            let eps = T::of(eps);
            let ms = m.tensors_mut();
            let vs = v.tensors_mut();
            for (((p, m), v), g) in params.tensors_mut().into_iter().zip(ms).zip(vs).zip(grad_tensors) {
                for (((p, m), v), &g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g) {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    *p -= lr_t * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        _ => unreachable!("optimizer state matches its kind"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub history: Vec<EpochRecord>,
}

/// Mini-batch training. Batches are drawn from a seeded shuffle, per-example
/// gradients are reduced in a fixed order, and dropout masks come from
/// seeded per-example streams, so a fixed seed reproduces the run exactly.
/// Each history row holds the dropout-free training loss and the validation
/// macro F1 after the epoch.
pub fn train<T: Scalar>(
    init: ModelParams<T>,
    train_set: &[Example<T>],
    val_set: &[Example<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let train_users: BTreeSet<&str> = train_set.iter().map(|e| e.user_id.as_str()).collect();
    if let Some(e) = val_set.iter().find(|e| train_users.contains(e.user_id.as_str())) {
        return Err(Error::InvalidArgument(format!(
            "user `{}` appears in both training and validation data",
            e.user_id
        )));
    }

    let mut params = init;
    let mut state = match cfg.optimizer {
        Optimizer::Sgd => OptState::Sgd,
        Optimizer::Momentum { .. } => OptState::Momentum(params.zeros_like()),
        Optimizer::Adam { .. } => OptState::Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        },
    };
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dropout_seed: u64 = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d40f).gen();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut seen = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example<T>> = idx.iter().map(|&i| &train_set[i]).collect();
            let dropout = cfg.dropout.then_some(DropoutStream {
                seed: dropout_seed,
                first: seen,
            });
            seen += batch.len() as u64;
            let mut g = match batch_gradients(&params, &batch, cfg.mode, dropout) {
                Ok(g) => g,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { epoch }),
                Err(e) => return Err(e),
            };
            if !g.loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            if let Some(c) = cfg.clip_norm {
                let norm = g.grads.global_norm();
                let c = T::of(c);
                if norm > c {
                    let s = c / norm;
                    g.grads.tensors_mut().into_iter().for_each(|t| t.map_inplace(|v| v * s));
                }
            }
            apply_update(&mut params, &g.grads, &mut state, cfg.optimizer, cfg.learning_rate);
        }
        if !params.all_finite() {
            return Err(Error::Diverged { epoch });
        }
        let preds = predict(&params, train_set, cfg.mode)?;
        let (train_loss, _) = mean_loss(preds.iter().zip(train_set).map(|(p, e)| (&p.probs[..], e.label)));
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let val_f1 = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(&params, val_set, cfg.mode)?.macro_avg.f1_score)
        };
        log::debug!("epoch {epoch}: loss {train_loss:.6} val_f1 {val_f1:?}");
        history.push(EpochRecord {
            epoch,
            train_loss: train_loss.as_f64(),
            val_f1,
        });
    }
    Ok(TrainOutcome { params, history })
}

/// `epoch,train_loss,val_f1` with an optional leading `#` metadata line.
pub fn write_history<W: Write>(history: &[EpochRecord], mut out: W, meta: Option<&str>) -> Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# {m}")?;
    }
    writeln!(out, "epoch,train_loss,val_f1")?;
    for r in history {
        let f1 = r.val_f1.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, f1)?;
    }
    Ok(())
}

/// Inference over a split, dropout disabled, results in input order.
pub fn predict<T: Scalar>(params: &ModelParams<T>, examples: &[Example<T>], mode: FusionMode) -> Result<Vec<Prediction<T>>> {
    examples
        .par_iter()
        .map(|e| params.forward(&e.tokens, &e.tab, mode))
        .collect()
}

pub fn predict_labels<T: Scalar>(params: &ModelParams<T>, examples: &[Example<T>], mode: FusionMode) -> Result<Vec<Label>> {
    Ok(predict(params, examples, mode)?.iter().map(Prediction::class).collect())
}

/// Argmax predictions scored against the gold labels.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, examples: &[Example<T>], mode: FusionMode) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let pred = predict_labels(params, examples, mode)?;
    let truth: Vec<Label> = examples.iter().map(|e| e.label).collect();
    MetricsReport::from_labels(&truth, &pred)
}

/// Binary confusion counts with the positive class as the reference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl Confusion {
    pub fn from_labels(truth: &[Label], pred: &[Label]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!("{} gold labels vs {} predictions", truth.len(), pred.len())));
        }
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t, p) {
                (Label::Negative, Label::Negative) => c.tn += 1,
                (Label::Negative, Label::Positive) => c.fp += 1,
                (Label::Positive, Label::Negative) => c.fn_ += 1,
                (Label::Positive, Label::Positive) => c.tp += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1_score: f64,
    pub support: u64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ClassMetrics {
    fn from_counts(hit: u64, false_alarm: u64, miss: u64) -> Self {
        let precision = ratio(hit, hit + false_alarm);
        let recall = ratio(hit, hit + miss);
        // Harmonic mean of precision and recall, taken from the counts.
        let f1_score = ratio(2 * hit, 2 * hit + false_alarm + miss);
        Self {
            precision,
            recall,
            f1_score,
            support: hit + miss,
        }
    }
}

/// Per-class precision, recall and F1 plus accuracy and the macro and
/// support-weighted averages. Zero denominators yield 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub negative: ClassMetrics,
    pub positive: ClassMetrics,
    pub accuracy: f64,
    pub macro_avg: ClassMetrics,
    pub weighted_avg: ClassMetrics,
    pub confusion: Confusion,
}

impl MetricsReport {
    pub fn from_confusion(c: Confusion) -> Self {
        let negative = ClassMetrics::from_counts(c.tn, c.fn_, c.fp);
        let positive = ClassMetrics::from_counts(c.tp, c.fp, c.fn_);
        let total = c.total();
        let avg = |w: [f64; 2]| {
            let s = w[0] + w[1];
            let f = |a: f64, b: f64| if s == 0.0 { 0.0 } else { (w[0] * a + w[1] * b) / s };
            ClassMetrics {
                precision: f(negative.precision, positive.precision),
                recall: f(negative.recall, positive.recall),
                f1_score: f(negative.f1_score, positive.f1_score),
                support: total,
            }
        };
        Self {
            negative,
            positive,
            accuracy: ratio(c.tp + c.tn, total),
            macro_avg: avg([1.0, 1.0]),
            weighted_avg: avg([negative.support as f64, positive.support as f64]),
            confusion: c,
        }
    }

    pub fn from_labels(truth: &[Label], pred: &[Label]) -> Result<Self> {
        Ok(Self::from_confusion(Confusion::from_labels(truth, pred)?))
    }

    pub fn class(&self, label: Label) -> &ClassMetrics {
        match label {
            Label::Negative => &self.negative,
            Label::Positive => &self.positive,
        }
    }

    /// Plain-text table with one row per class followed by accuracy and the
    /// two averages, values to four decimals.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14}{:>10}{:>10}{:>10}{:>10}", "class", "precision", "recall", "f1-score", "support");
        for (name, m) in [("negative", &self.negative), ("positive", &self.positive)] {
            let _ = writeln!(
                s,
                "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>10}",
                name, m.precision, m.recall, m.f1_score, m.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<14}{:>10}{:>10}{:>10.4}{:>10}", "accuracy", "", "", self.accuracy, self.confusion.total());
        for (name, m) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                s,
                "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>10}",
                name, m.precision, m.recall, m.f1_score, m.support
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        // Shifting by the first value keeps identical inputs at exactly zero spread.
        let v0 = values[0];
        let shift = values.iter().map(|v| v - v0).sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - v0 - shift).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean: v0 + shift, std }
    }
}

/// Mean ± std of the headline metrics over folds or seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// `"folds"` or `"seeds"`.
    pub over: String,
    pub reports: Vec<MetricsReport>,
    pub metrics: BTreeMap<String, MeanStd>,
}

impl RunSummary {
    pub fn new(over: &str, reports: Vec<MetricsReport>) -> Self {
        let pick: [(&str, fn(&MetricsReport) -> f64); 4] = [
            ("accuracy", |r| r.accuracy),
            ("precision", |r| r.macro_avg.precision),
            ("recall", |r| r.macro_avg.recall),
            ("f1_score", |r| r.macro_avg.f1_score),
        ];
        let metrics = pick
            .iter()
            .map(|(name, f)| {
                let v: Vec<f64> = reports.iter().map(f).collect();
                (name.to_string(), MeanStd::of(&v))
            })
            .collect();
        Self {
            over: over.into(),
            reports,
            metrics,
        }
    }
}

/// User-disjoint k-fold cross-validation. `run` receives the fold index and
/// the training and held-out corpora and returns the held-out metrics.
pub fn kfold<F>(corpus: &Corpus, k: usize, seed: u64, mut run: F) -> Result<RunSummary>
where
    F: FnMut(usize, &Corpus, &Corpus) -> Result<MetricsReport>,
{
    let folds = user_folds(corpus, k, seed)?;
    let mut reports = Vec::with_capacity(k);
    for (i, held) in folds.iter().enumerate() {
        let held_set: BTreeSet<&str> = held.iter().map(String::as_str).collect();
        let test = corpus.select_users(held);
        let train = corpus.filter_users(|u, _| !held_set.contains(u));
        reports.push(run(i, &train, &test)?);
    }
    Ok(RunSummary::new("folds", reports))
}

/// Two-sided paired bootstrap test on the macro-F1 difference between two
/// systems scored on the same rows. Rows are resampled with replacement;
/// the p-value is the share of resampled differences at least as far from
/// the observed difference as the observed difference is from zero, with
/// the usual +1 correction.
pub fn paired_significance(truth: &[Label], pred_a: &[Label], pred_b: &[Label], resamples: usize, seed: u64) -> Result<f64> {
    if truth.len() != pred_a.len() || truth.len() != pred_b.len() {
        return Err(Error::Shape(format!(
            "row sets differ: {} gold, {} and {} predictions",
            truth.len(),
            pred_a.len(),
            pred_b.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("significance rows".into()));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument("resamples must be positive".into()));
    }
    let f1 = |t: &[Label], p: &[Label]| MetricsReport::from_labels(t, p).map(|r| r.macro_avg.f1_score);
    let observed = f1(truth, pred_a)? - f1(truth, pred_b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = truth.len();
    let mut extreme = 0usize;
    let (mut t, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..resamples {
        t.clear();
        a.clear();
        b.clear();
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            t.push(truth[i]);
            a.push(pred_a[i]);
            b.push(pred_b[i]);
        }
        let d = f1(&t, &a)? - f1(&t, &b)?;
        if (d - observed).abs() >= observed.abs() {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (resamples + 1) as f64)
}
