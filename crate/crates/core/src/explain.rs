//! Exact Shapley attribution of the tabular features, global importance
//! summaries, and the Pearson correlation matrix used as a leakage check.

use std::collections::BTreeSet;
use std::io::Write;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{FusionMode, ModelParams};
use crate::tabular::{FeatureSlot, Modality, TabularVector};
use crate::textprep::TokenSequence;
use crate::{Error, Result, Scalar};

/// Largest feature count handled by full coalition enumeration.
pub const MAX_EXACT_FEATURES: usize = 15;

/// Default cap on background rows.
pub const BACKGROUND_CAP: usize = 1024;

/// A named group of columns of the flat `[c ‖ n]` vector that is switched
/// on and off as a unit (a one-hot block or a single numeric column).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGroup {
    pub name: String,
    pub columns: Vec<usize>,
}

/// One group per fitted feature, in layout order.
pub fn groups_from_layout(layout: &[FeatureSlot], c_dim: usize) -> Vec<FeatureGroup> {
    layout
        .iter()
        .map(|s| {
            let off = match s.modality {
                Modality::Categorical => 0,
                Modality::Numerical => c_dim,
            };
            FeatureGroup {
                name: s.name.clone(),
                columns: s.columns.clone().map(|c| c + off).collect(),
            }
        })
        .collect()
}

/// Column means of the reference rows used to impute absent features.
#[derive(Debug, Clone, PartialEq)]
pub struct Background<T> {
    pub means: Vec<T>,
    pub rows_used: usize,
}

impl<T: Scalar> Background<T> {
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Empty("background rows".into()))?;
        let width = first.len();
        let mut sums = vec![T::zero(); width];
        for r in rows {
            if r.len() != width {
                return Err(Error::Shape(format!("background row of width {} vs {width}", r.len())));
            }
            sums.iter_mut().zip(r).for_each(|(s, &v)| *s += v);
        }
        let n = T::of_usize(rows.len());
        Ok(Self {
            means: sums.into_iter().map(|s| s / n).collect(),
            rows_used: rows.len(),
        })
    }

    /// Uses at most `cap` rows, picked by a seeded subsample kept in input order.
    pub fn from_rows_capped(rows: &[Vec<T>], cap: usize, seed: u64) -> Result<Self> {
        if rows.len() <= cap {
            return Self::from_rows(rows);
        }
        let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), rows.len(), cap).into_vec();
        idx.sort_unstable();
        let picked: Vec<Vec<T>> = idx.into_iter().map(|i| rows[i].clone()).collect();
        Self::from_rows(&picked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution<T> {
    pub instance_id: String,
    /// Model output with every feature at its background mean.
    pub base_value: T,
    /// Model output on the instance itself.
    pub output: T,
    pub phi: IndexMap<String, T>,
}

fn shapley_weights(f: usize) -> Vec<f64> {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    (0..f).map(|s| fact(s) * fact(f - s - 1) / fact(f)).collect()
}

/// Exact Shapley values by enumerating all `2^F` coalitions. A coalition's
/// value is `model_fn` on the instance with every feature outside the
/// coalition replaced by its background mean.
pub fn shapley_exact<T, F>(
    model_fn: F,
    instance_id: &str,
    instance: &[T],
    background: &Background<T>,
    groups: &[FeatureGroup],
) -> Result<Attribution<T>>
where
    T: Scalar,
    F: Fn(&[T]) -> Result<T> + Sync,
{
    let f = groups.len();
    if f > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures {
            features: f,
            limit: MAX_EXACT_FEATURES,
        });
    }
    if instance.len() != background.means.len() {
        return Err(Error::Shape(format!(
            "instance width {} vs background width {}",
            instance.len(),
            background.means.len()
        )));
    }
    let mut names = BTreeSet::new();
    for g in groups {
        if !names.insert(g.name.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate feature `{}`", g.name)));
        }
        if let Some(&c) = g.columns.iter().find(|&&c| c >= instance.len()) {
            return Err(Error::Shape(format!("feature `{}` column {c} out of range", g.name)));
        }
    }

    let values: Vec<T> = (0..1usize << f)
        .into_par_iter()
        .map(|mask| {
            let mut row = background.means.clone();
            for (i, g) in groups.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    for &c in &g.columns {
                        row[c] = instance[c];
                    }
                }
            }
            let v = model_fn(&row)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite("model output during attribution".into()))
            }
        })
        .collect::<Result<_>>()?;

    let w: Vec<T> = shapley_weights(f).into_iter().map(T::of).collect();
    let mut phi = IndexMap::with_capacity(f);
    for (i, g) in groups.iter().enumerate() {
        let bit = 1usize << i;
        let mut total = T::zero();
        for mask in (0..1usize << f).filter(|m| m & bit == 0) {
            let s = mask.count_ones() as usize;
            total += w[s] * (values[mask | bit] - values[mask]);
        }
        phi.insert(g.name.clone(), total);
    }
    Ok(Attribution {
        instance_id: instance_id.to_string(),
        base_value: values[0],
        output: values[(1 << f) - 1],
        phi,
    })
}

/// Positive-class probability as a function of the flat tabular vector,
/// with the instance's text encoded once and held fixed.
pub fn model_output_fn<'a, T: Scalar>(
    params: &'a ModelParams<T>,
    tokens: &TokenSequence,
    mode: FusionMode,
) -> Result<impl Fn(&[T]) -> Result<T> + Sync + 'a> {
    let x = params.encode_text(tokens)?;
    let c_dim = params.config.c_dim;
    Ok(move |flat: &[T]| {
        let tab = TabularVector::from_flat(flat, c_dim);
        Ok(params.forward_encoded(&x, &tab, mode)?.positive())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
    /// 1-based.
    pub rank: usize,
}

/// Features ranked by mean |phi|, descending, ties by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub features: Vec<FeatureImportance>,
}

pub fn global_summary<T: Scalar>(attributions: &[Attribution<T>]) -> Result<GlobalSummary> {
    let first = attributions.first().ok_or_else(|| Error::Empty("attributions".into()))?;
    let names: Vec<&String> = first.phi.keys().collect();
    let mut sums = vec![0.0f64; names.len()];
    for a in attributions {
        if a.phi.len() != names.len() || !names.iter().all(|n| a.phi.contains_key(*n)) {
            return Err(Error::InvalidArgument(format!(
                "attribution `{}` has a different feature set",
                a.instance_id
            )));
        }
        for (s, n) in sums.iter_mut().zip(&names) {
            *s += a.phi[*n].as_f64().abs();
        }
    }
    let count = attributions.len() as f64;
    let mut features: Vec<FeatureImportance> = names
        .iter()
        .zip(sums)
        .map(|(n, s)| FeatureImportance {
            feature: n.to_string(),
            mean_abs_phi: s / count,
            rank: 0,
        })
        .collect();
    features.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    features.iter_mut().enumerate().for_each(|(i, f)| f.rank = i + 1);
    Ok(GlobalSummary { features })
}

pub fn write_summary_csv<W: Write>(summary: &GlobalSummary, mut out: W, meta: Option<&str>) -> Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# {m}")?;
    }
    writeln!(out, "feature,mean_abs_phi,rank")?;
    for f in &summary.features {
        writeln!(out, "{},{},{}", f.feature, f.mean_abs_phi, f.rank)?;
    }
    Ok(())
}

/// Pearson coefficients over the features and the target (last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Columns with zero variance; their off-diagonal coefficients are 0.
    pub constant: Vec<String>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }

    /// Coefficient of each feature with the target.
    pub fn target_column(&self) -> Vec<(&str, f64)> {
        let t = self.names.len() - 1;
        self.names[..t]
            .iter()
            .zip(&self.values)
            .map(|(n, row)| (n.as_str(), row[t]))
            .collect()
    }
}

pub const TARGET_NAME: &str = "target";

/// Correlation matrix of the feature columns of `rows` plus `target`.
pub fn pearson_matrix(feature_names: &[String], rows: &[Vec<f64>], target: &[f64]) -> Result<CorrelationMatrix> {
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 rows, got {}", rows.len())));
    }
    if target.len() != rows.len() {
        return Err(Error::Shape(format!("{} rows vs {} targets", rows.len(), target.len())));
    }
    let f = feature_names.len();
    if let Some(r) = rows.iter().find(|r| r.len() != f) {
        return Err(Error::Shape(format!("row width {} vs {f} feature names", r.len())));
    }
    let mut cols: Vec<Vec<f64>> = (0..f).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    cols.push(target.to_vec());
    let mut names = feature_names.to_vec();
    names.push(TARGET_NAME.to_string());

    let centered: Vec<(Vec<f64>, f64)> = cols
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let d: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let ss = d.iter().map(|v| v * v).sum::<f64>();
            (d, ss)
        })
        .collect();
    let constant: Vec<String> = centered
        .iter()
        .zip(&names)
        .filter(|((_, ss), _)| *ss == 0.0)
        .map(|(_, n)| n.clone())
        .collect();
    for n in &constant {
        log::warn!("column `{n}` is constant; its correlations are reported as 0");
    }
    let k = cols.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let (di, si) = &centered[i];
            let (dj, sj) = &centered[j];
            let r = if *si == 0.0 || *sj == 0.0 {
                0.0
            } else {
                let cov: f64 = di.iter().zip(dj).map(|(a, b)| a * b).sum();
                (cov / (si.sqrt() * sj.sqrt())).clamp(-1.0, 1.0)
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        names,
        values,
        constant,
    })
}

pub fn write_correlation_csv<W: Write>(m: &CorrelationMatrix, mut out: W, meta: Option<&str>) -> Result<()> {
    if let Some(meta) = meta {
        writeln!(out, "# {meta}")?;
    }
    writeln!(out, "feature,{}", m.names.join(","))?;
    for (n, row) in m.names.iter().zip(&m.values) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{n},{}", vals.join(","))?;
    }
    Ok(())
}
