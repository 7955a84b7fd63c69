//! Featurization: normalized text, post contexts, per-user profiles, the
//! vocabulary and the fitted tabular transform, joined into training rows.
//!
//! One row per post: the post's token sequence plus a tabular vector made of
//! the author's profile features and the post's own fields. Vocabulary and
//! tabular transform are fitted on the training split only; profiles are
//! aggregated from each user's own posts and never read labels.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::context::{ContextExtractor, PostContext};
use crate::corpus::{Corpus, Label};
use crate::profiles::{AggregationSettings, ProfileFeatures, ProfileStore, StoredPost};
use crate::tabular::{FittedTransform, RawRow, TabularSchema, TabularVector};
use crate::textprep::{normalize_text, tokenize_pad, ExpansionTable, Vocabulary};
use crate::train::Example;
use crate::{Error, Result, Scalar};

pub const DEFAULT_VOCAB_SIZE: usize = 10_000;
pub const DEFAULT_CAPACITY: usize = 300;

#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub expansions: ExpansionTable,
    pub extractor: ContextExtractor,
    pub aggregation: AggregationSettings,
    pub schema: TabularSchema,
    pub vocab_size: usize,
    pub capacity: usize,
}

impl FeaturePipeline {
    /// Shipped tables and lexicons with the default schema and limits.
    pub fn builtin() -> Self {
        Self {
            expansions: ExpansionTable::builtin(),
            extractor: ContextExtractor::builtin(),
            aggregation: AggregationSettings::builtin(),
            schema: TabularSchema::default(),
            vocab_size: DEFAULT_VOCAB_SIZE,
            capacity: DEFAULT_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPost {
    pub user_id: String,
    pub normalized: String,
    pub label: Label,
    pub context: PostContext,
}

/// A split after normalization, context extraction and profiling.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub posts: Vec<PreparedPost>,
    pub profiles: BTreeMap<String, ProfileFeatures>,
    pub store: ProfileStore,
}

impl PreparedSplit {
    pub fn labels(&self) -> Vec<Label> {
        self.posts.iter().map(|p| p.label).collect()
    }
}

impl FeaturePipeline {
    /// Normalizes and contextualizes every post, stores the posts in a
    /// profile store (with labels only if `keep_labels`), and aggregates the
    /// per-user profile features.
    pub fn prepare(&self, corpus: &Corpus, keep_labels: bool) -> Result<PreparedSplit> {
        let posts: Vec<PreparedPost> = corpus
            .posts()
            .par_iter()
            .map(|p| {
                let normalized = normalize_text(&p.text, &self.expansions);
                let context = self.extractor.extract(&normalized, &p.timestamp);
                PreparedPost {
                    user_id: p.user_id.clone(),
                    normalized,
                    label: p.label,
                    context,
                }
            })
            .collect();
        let mut store = ProfileStore::new();
        for (raw, prep) in corpus.posts().iter().zip(&posts) {
            store.upsert_posts(
                &raw.user_id,
                [StoredPost {
                    text: prep.normalized.clone(),
                    timestamp: raw.timestamp,
                    label: keep_labels.then_some(raw.label),
                    context: prep.context.clone(),
                }],
            );
        }
        let users: Vec<&str> = store.users().collect();
        let profiles = users
            .par_iter()
            .map(|u| Ok((u.to_string(), store.aggregate_features(u, &self.aggregation)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(PreparedSplit {
            posts,
            profiles,
            store,
        })
    }

    pub fn raw_rows(&self, split: &PreparedSplit) -> Result<Vec<RawRow>> {
        split
            .posts
            .iter()
            .map(|p| {
                let profile = split
                    .profiles
                    .get(&p.user_id)
                    .ok_or_else(|| Error::UnknownUser(p.user_id.clone()))?;
                self.schema.resolve(&p.context, profile)
            })
            .collect()
    }

    /// Fits the vocabulary and the tabular transform on a training split.
    pub fn fit<T: Scalar>(&self, train: &PreparedSplit) -> Result<FittedFeatures<T>> {
        if train.posts.is_empty() {
            return Err(Error::Empty("training split".into()));
        }
        let vocab = Vocabulary::build(train.posts.iter().map(|p| p.normalized.as_str()), self.vocab_size)?;
        let transform = FittedTransform::fit(&self.schema, &self.raw_rows(train)?)?;
        Ok(FittedFeatures {
            vocab,
            transform,
            capacity: self.capacity,
        })
    }

    /// Rows of `split` under fitted features.
    pub fn dataset<T: Scalar>(&self, fitted: &FittedFeatures<T>, split: &PreparedSplit) -> Result<Dataset<T>> {
        let rows = self.raw_rows(split)?;
        let examples = split
            .posts
            .iter()
            .zip(&rows)
            .map(|(p, row)| {
                Ok(Example {
                    user_id: p.user_id.clone(),
                    tokens: tokenize_pad(&p.normalized, &fitted.vocab, fitted.capacity),
                    tab: fitted.transform.apply_row(row)?,
                    label: p.label,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            examples,
            texts: split.posts.iter().map(|p| p.normalized.clone()).collect(),
        })
    }

    /// Prepares both splits, fits on the training one and builds both datasets.
    pub fn build<T: Scalar>(&self, train: &Corpus, test: &Corpus) -> Result<Featurized<T>> {
        let train_split = self.prepare(train, true)?;
        let test_split = self.prepare(test, false)?;
        let fitted = self.fit(&train_split)?;
        Ok(Featurized {
            train: self.dataset(&fitted, &train_split)?,
            test: self.dataset(&fitted, &test_split)?,
            fitted,
            train_split,
            test_split,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FittedFeatures<T> {
    pub vocab: Vocabulary,
    pub transform: FittedTransform<T>,
    pub capacity: usize,
}

/// Model-ready rows with their normalized texts, in post order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub examples: Vec<Example<T>>,
    pub texts: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Flat `[c ‖ n]` rows.
    pub fn tabular_rows(&self) -> Vec<Vec<T>> {
        self.examples.iter().map(|e| e.tab.flat()).collect()
    }

    /// Copy with every tabular vector replaced by `f(vector)`.
    pub fn map_tabular(&self, f: impl Fn(&TabularVector<T>) -> TabularVector<T>) -> Self {
        Self {
            examples: self
                .examples
                .iter()
                .map(|e| Example {
                    tab: f(&e.tab),
                    ..e.clone()
                })
                .collect(),
            texts: self.texts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Featurized<T> {
    pub fitted: FittedFeatures<T>,
    pub train: Dataset<T>,
    pub test: Dataset<T>,
    pub train_split: PreparedSplit,
    pub test_split: PreparedSplit,
}
