//! Baselines (TF-IDF features, Gaussian naive Bayes, Gini decision tree),
//! the setup runner over tabular / text / text-tabular inputs, and the
//! ablation driver.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::dataset::Dataset;
use crate::model::{EncoderConfig, FusionMode, ModelConfig, ModelParams};
use crate::tabular::FeatureSlot;
use crate::train::{self, MeanStd, MetricsReport, TrainConfig, TrainOutcome};
use crate::{Error, Result, Scalar};

pub const DEFAULT_TFIDF_FEATURES: usize = 300;
pub const DEFAULT_TREE_DEPTH: usize = 8;
pub const NB_VAR_FLOOR: f64 = 1e-9;

/// Term weights `tf · idf` with `idf(t) = ln((1 + N) / (1 + df(t))) + 1`,
/// L2-normalized per document. Terms are whitespace-separated tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Tfidf {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl Tfidf {
    /// Keeps the `max_features` terms with the highest document frequency,
    /// ties broken lexicographically; features are ordered by term.
    pub fn fit<'a>(docs: impl IntoIterator<Item = &'a str>, max_features: usize) -> Result<Self> {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for d in docs {
            n_docs += 1;
            let mut terms: Vec<&str> = d.split_whitespace().collect();
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_features);
        if ranked.is_empty() {
            return Err(Error::Empty("tf-idf vocabulary".into()));
        }
        ranked.sort_by(|a, b| a.0.cmp(b.0));
        let n = n_docs as f64;
        let idf = ranked.iter().map(|&(_, d)| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        let terms: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { terms, index, idf })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index.get(term).map(|&i| self.idf[i])
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// A document without known terms maps to the zero vector.
    pub fn transform(&self, doc: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.terms.len()];
        for t in doc.split_whitespace() {
            if let Some(&i) = self.index.get(t) {
                v[i] += 1.0;
            }
        }
        v.iter_mut().zip(&self.idf).for_each(|(w, idf)| *w *= idf);
        let norm = v.iter().map(|w| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|w| *w /= norm);
        }
        v
    }
}

fn check_xy(x: &[Vec<f64>], y: &[Label]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", x.len(), y.len())));
    }
    let width = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != width) {
        return Err(Error::Shape("ragged feature rows".into()));
    }
    Ok(width)
}

/// Gaussian naive Bayes with per-class means and variances (floored) and
/// frequency priors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    means: [Vec<f64>; 2],
    vars: [Vec<f64>; 2],
    log_prior: [f64; 2],
}

impl GaussianNb {
    pub fn fit(x: &[Vec<f64>], y: &[Label]) -> Result<Self> {
        let width = check_xy(x, y)?;
        let mut counts = [0usize; 2];
        let mut sums = [vec![0.0; width], vec![0.0; width]];
        for (r, &l) in x.iter().zip(y) {
            counts[l.index()] += 1;
            sums[l.index()].iter_mut().zip(r).for_each(|(s, v)| *s += v);
        }
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("naive Bayes needs samples of both classes".into()));
        }
        let means = [0, 1].map(|k| sums[k].iter().map(|s| s / counts[k] as f64).collect::<Vec<f64>>());
        let mut sq = [vec![0.0; width], vec![0.0; width]];
        for (r, &l) in x.iter().zip(y) {
            let k = l.index();
            for ((s, v), m) in sq[k].iter_mut().zip(r).zip(&means[k]) {
                *s += (v - m) * (v - m);
            }
        }
        let vars = [0, 1].map(|k| sq[k].iter().map(|s| (s / counts[k] as f64).max(NB_VAR_FLOOR)).collect());
        let total = (counts[0] + counts[1]) as f64;
        Ok(Self {
            means,
            vars,
            log_prior: counts.map(|c| (c as f64 / total).ln()),
        })
    }

    /// Posterior `[negative, positive]`.
    pub fn predict_proba(&self, x: &[f64]) -> [f64; 2] {
        let ll = [0, 1].map(|k| {
            self.log_prior[k]
                + x.iter()
                    .zip(&self.means[k])
                    .zip(&self.vars[k])
                    .map(|((v, m), var)| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - m).powi(2) / var))
                    .sum::<f64>()
        });
        let mx = ll[0].max(ll[1]);
        let e = ll.map(|l| (l - mx).exp());
        let s = e[0] + e[1];
        e.map(|v| v / s)
    }

    /// Ties go to the negative class.
    pub fn predict(&self, x: &[f64]) -> Label {
        let p = self.predict_proba(x);
        if p[1] > p[0] {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TreeNode {
    Leaf(Label),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary classification tree grown greedily on weighted Gini impurity.
/// Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
}

fn gini(neg: usize, pos: usize) -> f64 {
    let n = (neg + pos) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let (a, b) = (neg as f64 / n, pos as f64 / n);
    1.0 - a * a - b * b
}

fn majority(neg: usize, pos: usize) -> Label {
    if pos > neg {
        Label::Positive
    } else {
        Label::Negative
    }
}

impl DecisionTree {
    /// Splits use midpoints between consecutive distinct values; the split
    /// with the lowest weighted child impurity wins, ties going to the
    /// lowest feature index and then the lowest threshold. Impure nodes are
    /// split until `max_depth`; leaves predict the majority class (ties to
    /// negative).
    pub fn fit(x: &[Vec<f64>], y: &[Label], max_depth: usize) -> Result<Self> {
        check_xy(x, y)?;
        if max_depth == 0 {
            return Err(Error::InvalidArgument("max_depth must be at least 1".into()));
        }
        if x.is_empty() {
            return Err(Error::Empty("decision tree training rows".into()));
        }
        let mut tree = Self { nodes: Vec::new() };
        let idx: Vec<usize> = (0..x.len()).collect();
        tree.grow(x, y, idx, 0, max_depth);
        Ok(tree)
    }

    fn grow(&mut self, x: &[Vec<f64>], y: &[Label], idx: Vec<usize>, depth: usize, max_depth: usize) -> usize {
        let pos = idx.iter().filter(|&&i| y[i] == Label::Positive).count();
        let neg = idx.len() - pos;
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf(majority(neg, pos)));
        if depth >= max_depth || neg == 0 || pos == 0 {
            return id;
        }
        let Some((feature, threshold)) = best_split(x, y, &idx) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][feature] <= threshold);
        let left = self.grow(x, y, l, depth + 1, max_depth);
        let right = self.grow(x, y, r, depth + 1, max_depth);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf(l) => return *l,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + d(nodes, *left).max(d(nodes, *right)),
            }
        }
        d(&self.nodes, 0)
    }

    /// The root split, if any.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            TreeNode::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            TreeNode::Leaf(_) => None,
        }
    }
}

fn best_split(x: &[Vec<f64>], y: &[Label], idx: &[usize]) -> Option<(usize, f64)> {
    let width = x[idx[0]].len();
    let total_pos = idx.iter().filter(|&&i| y[i] == Label::Positive).count();
    let n = idx.len();
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..width {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left_pos = 0usize;
        for k in 0..n - 1 {
            if y[order[k]] == Label::Positive {
                left_pos += 1;
            }
            let (v, next) = (x[order[k]][f], x[order[k + 1]][f]);
            if v == next {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            let score = (nl as f64 * gini(nl - left_pos, left_pos)
                + nr as f64 * gini(nr - (total_pos - left_pos), total_pos - left_pos))
                / n as f64;
            let threshold = v + (next - v) / 2.0;
            if best.map_or(true, |(s, _, _)| score < s) {
                best = Some((score, f, threshold));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    TabularOnly,
    TextOnly,
    TextTabular,
}

impl Setup {
    pub const ALL: [Setup; 3] = [Setup::TabularOnly, Setup::TextOnly, Setup::TextTabular];

    pub fn name(self) -> &'static str {
        match self {
            Setup::TabularOnly => "tabular_only",
            Setup::TextOnly => "text_only",
            Setup::TextTabular => "text_tabular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Nb,
    Dt,
    Transformer,
}

impl Learner {
    pub const ALL: [Learner; 3] = [Learner::Nb, Learner::Dt, Learner::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Learner::Nb => "nb",
            Learner::Dt => "dt",
            Learner::Transformer => "transformer",
        }
    }
}

/// Architecture sizes; vocabulary and tabular widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub encoder: EncoderConfig,
    pub fusion_dim: usize,
    pub leaky_slope: f64,
    pub mlp_dropout: f64,
    pub mlp_division: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let c = ModelConfig::new(EncoderConfig::default(), 2, 0, 0);
        Self {
            encoder: c.encoder,
            fusion_dim: c.fusion_dim,
            leaky_slope: c.leaky_slope,
            mlp_dropout: c.mlp_dropout,
            mlp_division: c.mlp_division,
        }
    }
}

impl ModelSettings {
    pub fn config(&self, vocab_size: usize, c_dim: usize, n_dim: usize) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            vocab_size,
            c_dim,
            n_dim,
            fusion_dim: self.fusion_dim,
            leaky_slope: self.leaky_slope,
            mlp_dropout: self.mlp_dropout,
            mlp_division: self.mlp_division,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub tfidf_max_features: usize,
    pub tree_max_depth: usize,
    pub model: ModelSettings,
    pub train: TrainConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            tfidf_max_features: DEFAULT_TFIDF_FEATURES,
            tree_max_depth: DEFAULT_TREE_DEPTH,
            model: ModelSettings::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Largest token id in use plus one; the embedding table size.
pub fn vocab_extent<T>(sets: &[&Dataset<T>]) -> usize {
    sets.iter()
        .flat_map(|d| &d.examples)
        .flat_map(|e| e.tokens.ids.iter())
        .map(|&i| i as usize + 1)
        .max()
        .unwrap_or(2)
        .max(2)
}

/// Initializes from `seed` and trains with the configured optimizer, using
/// `seed` for shuffling and dropout as well.
pub fn train_transformer<T: Scalar>(
    train_set: &Dataset<T>,
    val_set: Option<&Dataset<T>>,
    vocab_size: usize,
    cfg: &HarnessConfig,
    mode: FusionMode,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    let first = train_set.examples.first().ok_or_else(|| Error::Empty("training set".into()))?;
    let mc = cfg.model.config(vocab_size, first.tab.c.len(), first.tab.n.len());
    let init = ModelParams::init(&mc, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let tc = TrainConfig {
        seed,
        mode,
        ..cfg.train.clone()
    };
    train::train(init, &train_set.examples, val_set.map_or(&[][..], |v| &v.examples), &tc)
}

fn classic_features<T: Scalar>(setup: Setup, data: &Dataset<T>, tfidf: Option<&Tfidf>) -> Vec<Vec<f64>> {
    data.examples
        .iter()
        .zip(&data.texts)
        .map(|(e, text)| {
            let mut row = Vec::new();
            if let (Setup::TextOnly | Setup::TextTabular, Some(t)) = (setup, tfidf) {
                row.extend(t.transform(text));
            }
            if matches!(setup, Setup::TabularOnly | Setup::TextTabular) {
                row.extend(e.tab.flat().into_iter().map(Scalar::as_f64));
            }
            row
        })
        .collect()
}

/// Predictions of one learner under one setup, in test-row order.
pub fn setup_predictions<T: Scalar>(
    setup: Setup,
    learner: Learner,
    train_set: &Dataset<T>,
    test_set: &Dataset<T>,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<Vec<Label>> {
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Empty("setup needs non-empty train and test sets".into()));
    }
    match learner {
        Learner::Transformer => {
            let mode = match setup {
                Setup::TextOnly => FusionMode::TextOnly,
                Setup::TextTabular => FusionMode::AttentionFusion,
                Setup::TabularOnly => {
                    return Err(Error::InvalidArgument(
                        "the transformer needs text; use nb or dt for tabular_only".into(),
                    ))
                }
            };
            let vocab = vocab_extent(&[train_set, test_set]);
            let out = train_transformer(train_set, None, vocab, cfg, mode, seed)?;
            train::predict_labels(&out.params, &test_set.examples, mode)
        }
        Learner::Nb | Learner::Dt => {
            let tfidf = match setup {
                Setup::TabularOnly => None,
                _ => Some(Tfidf::fit(train_set.texts.iter().map(String::as_str), cfg.tfidf_max_features)?),
            };
            let xtr = classic_features(setup, train_set, tfidf.as_ref());
            let xte = classic_features(setup, test_set, tfidf.as_ref());
            let ytr = train_set.labels();
            Ok(if learner == Learner::Nb {
                let m = GaussianNb::fit(&xtr, &ytr)?;
                xte.iter().map(|r| m.predict(r)).collect()
            } else {
                let m = DecisionTree::fit(&xtr, &ytr, cfg.tree_max_depth)?;
                xte.iter().map(|r| m.predict(r)).collect()
            })
        }
    }
}

/// Trains one learner on one input setup and scores it on the test split.
pub fn run_setup<T: Scalar>(
    setup: Setup,
    learner: Learner,
    train_set: &Dataset<T>,
    test_set: &Dataset<T>,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let pred = setup_predictions(setup, learner, train_set, test_set, cfg, seed)?;
    MetricsReport::from_labels(&test_set.labels(), &pred)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "features")]
pub enum VariantKind {
    /// Text branch only; tabular inputs bypassed.
    TextOnly,
    /// Attention fusion without the named features.
    Drop(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariantKind,
}

/// Variants compared against the full attention-fusion model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationPlan {
    pub variants: Vec<AblationVariant>,
    pub seeds: Vec<u64>,
    /// Run variants concurrently; results are identical either way.
    pub parallel: bool,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self {
            variants: Vec::new(),
            seeds: vec![1, 2, 3],
            parallel: false,
        }
    }
}

pub const BASELINE_VARIANT: &str = "text_tabular";

impl AblationPlan {
    /// `text_only` plus one drop-one variant per feature.
    pub fn drop_one(features: &[String], seeds: Vec<u64>) -> Self {
        let mut variants = vec![AblationVariant {
            name: "text_only".into(),
            kind: VariantKind::TextOnly,
        }];
        variants.extend(features.iter().map(|f| AblationVariant {
            name: format!("drop_{f}"),
            kind: VariantKind::Drop(vec![f.clone()]),
        }));
        Self {
            variants,
            seeds,
            parallel: false,
        }
    }

    pub fn validate(&self, features: &[String]) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("ablation needs at least one seed".into()));
        }
        let mut names = std::collections::BTreeSet::from([BASELINE_VARIANT]);
        for v in &self.variants {
            if !names.insert(v.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate variant `{}`", v.name)));
            }
            if let VariantKind::Drop(drop) = &v.kind {
                if drop.is_empty() {
                    return Err(Error::InvalidArgument(format!("variant `{}` drops nothing", v.name)));
                }
                if let Some(f) = drop.iter().find(|f| !features.contains(f)) {
                    return Err(Error::InvalidArgument(format!("variant `{}` names unknown feature `{f}`", v.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub f1: MeanStd,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<f64>,
}

fn run_variant<T: Scalar>(
    kind: Option<&VariantKind>,
    train_set: &Dataset<T>,
    test_set: &Dataset<T>,
    layout: &[FeatureSlot],
    cfg: &HarnessConfig,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    let (mode, tr, te);
    match kind {
        Some(VariantKind::Drop(drop)) => {
            let slots: Vec<&FeatureSlot> = layout.iter().filter(|s| drop.contains(&s.name)).collect();
            tr = train_set.map_tabular(|t| t.drop_slots(&slots));
            te = test_set.map_tabular(|t| t.drop_slots(&slots));
            mode = FusionMode::AttentionFusion;
        }
        other => {
            tr = train_set.clone();
            te = test_set.clone();
            mode = if other.is_some() {
                FusionMode::TextOnly
            } else {
                FusionMode::AttentionFusion
            };
        }
    }
    let vocab = vocab_extent(&[&tr, &te]);
    seeds
        .iter()
        .map(|&s| {
            let out = train_transformer(&tr, None, vocab, cfg, mode, s)?;
            Ok(train::evaluate(&out.params, &te.examples, mode)?.macro_avg.f1_score)
        })
        .collect()
}

/// Trains and evaluates the full model and every variant on the same splits
/// with the same seeds. The baseline row comes first.
pub fn run_ablation<T: Scalar>(
    plan: &AblationPlan,
    train_set: &Dataset<T>,
    test_set: &Dataset<T>,
    layout: &[FeatureSlot],
    cfg: &HarnessConfig,
) -> Result<Vec<AblationRow>> {
    let features: Vec<String> = layout.iter().map(|s| s.name.clone()).collect();
    plan.validate(&features)?;
    let jobs: Vec<(String, Option<&VariantKind>)> = std::iter::once((BASELINE_VARIANT.to_string(), None))
        .chain(plan.variants.iter().map(|v| (v.name.clone(), Some(&v.kind))))
        .collect();
    let run = |(name, kind): &(String, Option<&VariantKind>)| -> Result<AblationRow> {
        log::info!("ablation variant {name}");
        let per_seed = run_variant(*kind, train_set, test_set, layout, cfg, &plan.seeds)?;
        Ok(AblationRow {
            variant: name.clone(),
            f1: MeanStd::of(&per_seed),
            seeds: plan.seeds.clone(),
            per_seed,
        })
    };
    if plan.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    }
}

/// `variant,f1_mean,f1_std,seed_list` with seeds joined by `;`.
pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut out: W, meta: Option<&str>) -> Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# {m}")?;
    }
    writeln!(out, "variant,f1_mean,f1_std,seed_list")?;
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        writeln!(out, "{},{},{},{}", r.variant, r.f1.mean, r.f1.std, seeds.join(";"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
