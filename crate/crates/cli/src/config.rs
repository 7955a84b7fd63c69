//! The pipeline config file: one TOML document with dotted keys.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use persona_core::context::{ContextExtractor, LateNightWindow, Lexicon, ValenceLexicon, DEFAULT_ALPHA};
use persona_core::corpus::{CorpusSchema, Label};
use persona_core::dataset::{FeaturePipeline, DEFAULT_CAPACITY, DEFAULT_VOCAB_SIZE};
use persona_core::harness::{AblationPlan, AblationVariant, HarnessConfig, ModelSettings, DEFAULT_TFIDF_FEATURES, DEFAULT_TREE_DEPTH};
use persona_core::model::FusionMode;
use persona_core::profiles::{builtin_stopwords, load_stopwords, AggregationSettings};
use persona_core::tabular::{FeatureSource, TabularSchema};
use persona_core::textprep::ExpansionTable;
use persona_core::train::{Optimizer, TrainConfig};
use persona_core::explain::{BACKGROUND_CAP, MAX_EXACT_FEATURES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Overrides `paths.workdir`.
pub const WORKDIR_ENV: &str = "PERSONA_WORKDIR";

pub const PRIMARY_LEXICON: &str = "lexicon_based";
pub const SECONDARY_LEXICON: &str = "junyeop_lex";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    #[serde(default = "default_workdir")]
    pub workdir: PathBuf,
    /// Unset entries fall back to the tables shipped with the library.
    #[serde(default)]
    pub lexicon_primary: Option<PathBuf>,
    #[serde(default)]
    pub lexicon_secondary: Option<PathBuf>,
    #[serde(default)]
    pub valence: Option<PathBuf>,
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
    #[serde(default)]
    pub expansions: Option<PathBuf>,
}

fn default_workdir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub min_posts: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self { min_posts: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidatePool {
    /// Users dropped by the minimum-post filter.
    Excluded,
    /// No re-admission; balancing only reports the imbalance.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceSection {
    pub threshold: f64,
    pub candidate_pool: CandidatePool,
    /// Cap on re-admitted posts.
    pub budget: Option<usize>,
}

impl Default for BalanceSection {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            candidate_pool: CandidatePool::Excluded,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Share of users in the training side; the rest is the test split.
    pub train_fraction: f64,
    /// Share of training users held out for per-epoch validation F1.
    pub validation_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            validation_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextSection {
    pub vocab_size: usize,
    pub capacity: usize,
}

impl Default for TextSection {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
            capacity: DEFAULT_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContextSection {
    pub late_night: LateNightWindow,
    pub alpha: f64,
}

impl Default for ContextSection {
    fn default() -> Self {
        Self {
            late_night: LateNightWindow::default(),
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    /// Top words per user feeding `avg_top_sent`.
    pub top_k: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self { top_k: 10 }
    }
}

/// Training settings; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: FusionMode,
    pub optimizer: Optimizer,
    pub clip_norm: Option<f64>,
    pub dropout: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            mode: t.mode,
            optimizer: t.optimizer,
            clip_norm: t.clip_norm,
            dropout: t.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub tfidf_max_features: usize,
    pub tree_max_depth: usize,
    pub bootstrap_resamples: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            tfidf_max_features: DEFAULT_TFIDF_FEATURES,
            tree_max_depth: DEFAULT_TREE_DEPTH,
            bootstrap_resamples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
    pub parallel: bool,
    /// Empty means `text_only` plus one drop-one variant per tabular feature.
    pub variants: Vec<AblationVariant>,
}

impl Default for AblationSection {
    fn default() -> Self {
        let p = AblationPlan::default();
        Self {
            seeds: p.seeds,
            parallel: p.parallel,
            variants: p.variants,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    /// Test rows explained, taken in file order.
    pub instances: usize,
    pub background_cap: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            instances: 100,
            background_cap: BACKGROUND_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub corpus: CorpusSchema,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub balance: BalanceSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub text: TextSection,
    #[serde(default)]
    pub context: ContextSection,
    #[serde(default)]
    pub profiles: ProfileSection,
    #[serde(default)]
    pub tabular: TabularSchema,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub baselines: BaselineSection,
    #[serde(default)]
    pub ablation: AblationSection,
    #[serde(default)]
    pub explain: ExplainSection,
}

/// One config problem, tied to the dotted key that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn violation(key: &str, message: impl Into<String>) -> Violation {
    Violation {
        key: key.to_string(),
        message: message.into(),
    }
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    /// Directory that relative paths are resolved against.
    pub base: PathBuf,
    pub hash: String,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn workdir(&self) -> PathBuf {
        match std::env::var_os(WORKDIR_ENV) {
            Some(w) if !w.is_empty() => PathBuf::from(w),
            _ => self.resolve(&self.config.paths.workdir),
        }
    }

    /// `config_hash=<hex> seed=<n>`, the provenance line of every artifact.
    pub fn stamp(&self) -> String {
        format!("config_hash={} seed={}", self.hash, self.config.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.config.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.config.seed,
            mode: t.mode,
            optimizer: t.optimizer,
            clip_norm: t.clip_norm,
            dropout: t.dropout,
        }
    }

    pub fn harness_config(&self) -> HarnessConfig {
        HarnessConfig {
            tfidf_max_features: self.config.baselines.tfidf_max_features,
            tree_max_depth: self.config.baselines.tree_max_depth,
            model: self.config.model.clone(),
            train: self.train_config(),
        }
    }

    pub fn ablation_plan(&self) -> AblationPlan {
        let a = &self.config.ablation;
        if a.variants.is_empty() {
            let features: Vec<String> = self.config.tabular.feature_names().map(String::from).collect();
            AblationPlan {
                parallel: a.parallel,
                ..AblationPlan::drop_one(&features, a.seeds.clone())
            }
        } else {
            AblationPlan {
                variants: a.variants.clone(),
                seeds: a.seeds.clone(),
                parallel: a.parallel,
            }
        }
    }

    /// Loads the configured tables and lexicons.
    pub fn feature_pipeline(&self) -> persona_core::Result<FeaturePipeline> {
        let p = &self.config.paths;
        let lexicon = |name: &str, path: &Option<PathBuf>, builtin: fn() -> Lexicon| match path {
            Some(f) => Lexicon::load(name, &self.resolve(f)),
            None => Ok(builtin()),
        };
        let extractor = ContextExtractor::new(
            vec![
                lexicon(PRIMARY_LEXICON, &p.lexicon_primary, Lexicon::builtin_primary)?,
                lexicon(SECONDARY_LEXICON, &p.lexicon_secondary, Lexicon::builtin_secondary)?,
            ],
            self.config.context.late_night,
        )?;
        let aggregation = AggregationSettings {
            top_k: self.config.profiles.top_k,
            stopwords: match &p.stopwords {
                Some(f) => load_stopwords(&self.resolve(f))?,
                None => builtin_stopwords(),
            },
            valence: match &p.valence {
                Some(f) => ValenceLexicon::load(&self.resolve(f))?,
                None => ValenceLexicon::builtin(),
            },
            alpha: self.config.context.alpha,
        };
        Ok(FeaturePipeline {
            expansions: match &p.expansions {
                Some(f) => ExpansionTable::load(&self.resolve(f))?,
                None => ExpansionTable::builtin(),
            },
            extractor,
            aggregation,
            schema: self.config.tabular.clone(),
            vocab_size: self.config.text.vocab_size,
            capacity: self.config.text.capacity,
        })
    }
}

/// SHA-256 of the canonical JSON form, without the workdir (so a relocated
/// run keeps its hash). First 16 hex digits.
pub fn config_hash(config: &PipelineConfig) -> String {
    let mut c = config.clone();
    c.paths.workdir = PathBuf::new();
    let json = serde_json::to_string(&c).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses the config file. Syntax errors and unknown keys come back as
/// violations.
pub fn load(path: &Path) -> Result<LoadedConfig, Vec<Violation>> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| vec![violation("<file>", format!("{}: {e}", path.display()))])?;
    parse(&src, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse(src: &str, base: &Path) -> Result<LoadedConfig, Vec<Violation>> {
    let config: PipelineConfig = toml::from_str(src).map_err(|e| {
        let msg = e.message().to_string();
        let key = e
            .span()
            .and_then(|s| src.get(..s.start))
            .map(|head| enclosing_key(head))
            .unwrap_or_else(|| "<toml>".to_string());
        vec![violation(&key, msg)]
    })?;
    let hash = config_hash(&config);
    Ok(LoadedConfig {
        config,
        base: base.to_path_buf(),
        hash,
    })
}

/// Best-effort dotted key of the last table header and key before an
/// error position.
fn enclosing_key(head: &str) -> String {
    let mut table = String::new();
    let mut key = String::new();
    for line in head.lines() {
        let t = line.trim();
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
    }
    if let Some(last) = head.lines().last() {
        if let Some((k, _)) = last.trim().split_once('=') {
            key = k.trim().to_string();
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "<toml>".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

/// Every violated invariant, without side effects.
pub fn validate(lc: &LoadedConfig) -> Vec<Violation> {
    let c = &lc.config;
    let mut v = Vec::new();
    let mut file = |key: &str, p: &Path| {
        let full = lc.resolve(p);
        if !full.is_file() {
            v.push(violation(key, format!("file not found: {}", full.display())));
        }
    };
    file("paths.corpus", &c.paths.corpus);
    for (key, p) in [
        ("paths.lexicon_primary", &c.paths.lexicon_primary),
        ("paths.lexicon_secondary", &c.paths.lexicon_secondary),
        ("paths.valence", &c.paths.valence),
        ("paths.stopwords", &c.paths.stopwords),
        ("paths.expansions", &c.paths.expansions),
    ] {
        if let Some(p) = p {
            file(key, p);
        }
    }

    let s = &c.corpus;
    if !s.delimiter.is_ascii() {
        v.push(violation("corpus.delimiter", "must be an ASCII character"));
    }
    if s.timestamp_formats.is_empty() {
        v.push(violation("corpus.timestamp_formats", "needs at least one layout"));
    }
    let cols = [s.label_column, s.user_column, s.timestamp_column, s.text_column];
    if cols.iter().collect::<BTreeSet<_>>().len() != cols.len() {
        v.push(violation("corpus", "label, user, timestamp and text columns must differ"));
    }
    for l in Label::ALL {
        if !s.label_map.values().any(|&m| m == l) {
            v.push(violation("corpus.label_map", format!("no raw value maps to {}", l.name())));
        }
    }

    if c.filter.min_posts == 0 {
        v.push(violation("filter.min_posts", "must be at least 1"));
    }
    if !(c.balance.threshold > 0.0 && c.balance.threshold <= 1.0) {
        v.push(violation("balance.threshold", format!("{} outside (0, 1]", c.balance.threshold)));
    }
    if !(c.split.train_fraction > 0.0 && c.split.train_fraction < 1.0) {
        v.push(violation("split.train_fraction", format!("{} outside (0, 1)", c.split.train_fraction)));
    }
    if !(c.split.validation_fraction >= 0.0 && c.split.validation_fraction < 1.0) {
        v.push(violation(
            "split.validation_fraction",
            format!("{} outside [0, 1)", c.split.validation_fraction),
        ));
    }
    if c.text.vocab_size < 3 {
        v.push(violation("text.vocab_size", "needs room for the two reserved tokens and one word"));
    }
    if c.text.capacity == 0 {
        v.push(violation("text.capacity", "must be at least 1"));
    }
    let w = c.context.late_night;
    if w.start_hour >= 24 || w.end_hour >= 24 || w.start_hour == w.end_hour {
        v.push(violation("context.late_night", "hours must lie in 0..24 and differ"));
    }
    if !(c.context.alpha > 0.0) {
        v.push(violation("context.alpha", "must be positive"));
    }
    if c.profiles.top_k == 0 {
        v.push(violation("profiles.top_k", "must be at least 1"));
    }

    if let Err(e) = c.tabular.validate() {
        v.push(violation("tabular", e.to_string()));
    }
    let n_features = c.tabular.numerical.len() + c.tabular.categorical.len();
    if n_features == 0 {
        v.push(violation("tabular", "needs at least one feature"));
    }
    if n_features > MAX_EXACT_FEATURES {
        v.push(violation(
            "tabular",
            format!("{n_features} features exceed the exact attribution limit of {MAX_EXACT_FEATURES}"),
        ));
    }
    // Feature names are checked against the loaded lexicons.
    match lc.feature_pipeline() {
        Ok(pipe) => v.extend(unknown_features(&c.tabular, &pipe.extractor)),
        Err(e) => {
            if v.iter().all(|x| !x.key.starts_with("paths.")) {
                v.push(violation("paths", format!("loading tables: {e}")));
            }
        }
    }

    let mc = c.model.config(c.text.vocab_size, 1, 1);
    if let Err(e) = mc.validate() {
        v.push(violation("model", e.to_string()));
    }
    if c.model.encoder.capacity < c.text.capacity {
        v.push(violation(
            "model.encoder.capacity",
            format!("{} is below text.capacity {}", c.model.encoder.capacity, c.text.capacity),
        ));
    }
    if let Err(e) = lc.train_config().validate() {
        v.push(violation("train", e.to_string()));
    }
    if c.baselines.tfidf_max_features == 0 {
        v.push(violation("baselines.tfidf_max_features", "must be at least 1"));
    }
    if c.baselines.tree_max_depth == 0 {
        v.push(violation("baselines.tree_max_depth", "must be at least 1"));
    }
    if c.baselines.bootstrap_resamples == 0 {
        v.push(violation("baselines.bootstrap_resamples", "must be at least 1"));
    }
    let features: Vec<String> = c.tabular.feature_names().map(String::from).collect();
    if let Err(e) = lc.ablation_plan().validate(&features) {
        v.push(violation("ablation", e.to_string()));
    }
    if c.explain.instances == 0 {
        v.push(violation("explain.instances", "must be at least 1"));
    }
    if c.explain.background_cap == 0 {
        v.push(violation("explain.background_cap", "must be at least 1"));
    }
    v
}

fn unknown_features(schema: &TabularSchema, extractor: &ContextExtractor) -> Vec<Violation> {
    let mut profile: BTreeSet<&str> = ["night_ratio", "avg_top_sent"].into_iter().collect();
    let mut post: BTreeSet<&str> = ["is_late_night"].into_iter().collect();
    for l in &extractor.lexicons {
        profile.insert(l.name());
        post.insert(l.name());
        for s in l.subtypes() {
            post.insert(s);
            if l.n_subtypes() > 1 {
                profile.insert(s);
            }
        }
    }
    let mut v = Vec::new();
    for (i, f) in schema.numerical.iter().enumerate() {
        let known = match f.source {
            FeatureSource::Profile => profile.contains(f.name.as_str()),
            FeatureSource::Post => post.contains(f.name.as_str()),
        };
        if !known {
            v.push(violation(&format!("tabular.numerical[{i}]"), format!("unknown feature `{}`", f.name)));
        }
    }
    for (i, f) in schema.categorical.iter().enumerate() {
        if !(f.source == FeatureSource::Post && f.name == "is_late_night") {
            v.push(violation(
                &format!("tabular.categorical[{i}]"),
                format!("unknown categorical feature `{}`", f.name),
            ));
        }
    }
    v
}
