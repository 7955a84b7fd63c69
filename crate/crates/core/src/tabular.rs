//! Encoding of contextual features into the categorical vector `c` (one-hot)
//! and the numerical vector `n` (Yeo-Johnson, then standardization).

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::PostContext;
use crate::escape::{escape_field, unescape_field};
use crate::profiles::ProfileFeatures;
use crate::{Error, Result, Scalar};

pub const LAMBDA_RANGE: (f64, f64) = (-2.0, 2.0);
pub const LAMBDA_TOLERANCE: f64 = 1e-4;

/// Yeo-Johnson power transform.
pub fn yeo_johnson<T: Scalar>(x: T, lambda: T) -> T {
    let zero = T::zero();
    let one = T::one();
    let two = T::of(2.0);
    if lambda == one {
        return x;
    }
    if x >= zero {
        if lambda == zero {
            x.ln_1p()
        } else {
            (lambda * x.ln_1p()).exp_m1() / lambda
        }
    } else if lambda == two {
        -(-x).ln_1p()
    } else {
        let p = two - lambda;
        -(p * (-x).ln_1p()).exp_m1() / p
    }
}

/// Profile log-likelihood of the Yeo-Johnson parameter under normality:
/// `−(N/2)·ln σ̂² + (λ−1)·Σ sign(x)·ln(|x|+1)`.
pub fn yeo_johnson_log_likelihood<T: Scalar>(values: &[T], lambda: T) -> T {
    let n = T::of_usize(values.len());
    let transformed: Vec<T> = values.iter().map(|&x| yeo_johnson(x, lambda)).collect();
    let mean = transformed.iter().copied().sum::<T>() / n;
    let var = transformed.iter().map(|&t| (t - mean) * (t - mean)).sum::<T>() / n;
    let jacobian: T = values.iter().map(|&x| x.signum() * x.abs().ln_1p()).sum();
    -(n / T::of(2.0)) * var.ln() + (lambda - T::one()) * jacobian
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaFit<T> {
    pub lambda: T,
    /// Fewer than two distinct values: λ = 1 and the column is constant.
    pub constant: bool,
}

/// Maximizes the Yeo-Johnson log-likelihood over λ ∈ [−2, 2] by
/// golden-section search to a bracket width of 1e−4.
pub fn fit_yeo_johnson<T: Scalar>(values: &[T]) -> LambdaFit<T> {
    let first = values.first().copied();
    if values.iter().all(|&v| Some(v) == first) {
        return LambdaFit {
            lambda: T::one(),
            constant: true,
        };
    }
    let objective = |l: T| {
        let ll = yeo_johnson_log_likelihood(values, l);
        if ll.is_nan() {
            T::neg_infinity()
        } else {
            ll
        }
    };
    let inv_phi = T::of((5f64.sqrt() - 1.0) / 2.0);
    let (mut a, mut b) = (T::of(LAMBDA_RANGE.0), T::of(LAMBDA_RANGE.1));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    let tol = T::of(LAMBDA_TOLERANCE);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    LambdaFit {
        lambda: (a + b) / T::of(2.0),
        constant: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Post,
    Profile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub source: FeatureSource,
}

impl FeatureSpec {
    pub fn profile(name: &str) -> Self {
        Self {
            name: name.into(),
            source: FeatureSource::Profile,
        }
    }

    pub fn post(name: &str) -> Self {
        Self {
            name: name.into(),
            source: FeatureSource::Post,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub numerical: Vec<FeatureSpec>,
    pub categorical: Vec<FeatureSpec>,
}

impl Default for TabularSchema {
    /// The five profile-level numericals plus the post's late-night flag.
    fn default() -> Self {
        Self {
            numerical: ["night_ratio", "avg_top_sent", "lexicon_based", "junyeop_lex", "anxious_dep"]
                .into_iter()
                .map(FeatureSpec::profile)
                .collect(),
            categorical: vec![FeatureSpec::post("is_late_night")],
        }
    }
}

/// Feature values before encoding, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub numerical: Vec<f64>,
    pub categorical: Vec<String>,
}

impl TabularSchema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for f in self.numerical.iter().chain(&self.categorical) {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate feature `{}`", f.name)));
            }
        }
        Ok(())
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> {
        self.categorical
            .iter()
            .chain(&self.numerical)
            .map(|f| f.name.as_str())
    }

    /// Copy of the schema without the named features.
    pub fn without(&self, drop: &[String]) -> TabularSchema {
        let keep = |f: &&FeatureSpec| !drop.contains(&f.name);
        TabularSchema {
            numerical: self.numerical.iter().filter(keep).cloned().collect(),
            categorical: self.categorical.iter().filter(keep).cloned().collect(),
        }
    }

    pub fn resolve(&self, post: &PostContext, profile: &ProfileFeatures) -> Result<RawRow> {
        let numerical = self
            .numerical
            .iter()
            .map(|f| {
                match f.source {
                    FeatureSource::Profile => profile.get(&f.name),
                    FeatureSource::Post => post_numeric(post, &f.name),
                }
                .ok_or_else(|| Error::MissingFeature(f.name.clone()))
            })
            .collect::<Result<_>>()?;
        let categorical = self
            .categorical
            .iter()
            .map(|f| match (f.source, f.name.as_str()) {
                (FeatureSource::Post, "is_late_night") => Ok(post.is_late_night.to_string()),
                _ => Err(Error::MissingFeature(f.name.clone())),
            })
            .collect::<Result<_>>()?;
        Ok(RawRow {
            numerical,
            categorical,
        })
    }
}

fn post_numeric(post: &PostContext, name: &str) -> Option<f64> {
    if name == "is_late_night" {
        return Some(if post.is_late_night { 1.0 } else { 0.0 });
    }
    if let Some(t) = post.lexicon_total(name) {
        return Some(t as f64);
    }
    post.lexicon_hits
        .values()
        .find_map(|subs| subs.get(name))
        .map(|&c| c as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericalFit<T> {
    pub name: String,
    pub lambda: T,
    pub mean: T,
    pub std: T,
    /// Constant after transformation: encoded as 0.
    pub constant: bool,
}

impl<T: Scalar> NumericalFit<T> {
    pub fn encode(&self, x: T) -> T {
        if self.constant {
            T::zero()
        } else {
            (yeo_johnson(x, self.lambda) - self.mean) / self.std
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalFit {
    pub name: String,
    /// Frozen from training data, lexicographic.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Categorical,
    Numerical,
}

/// Column range of one feature inside `c` or `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSlot {
    pub name: String,
    pub modality: Modality,
    pub columns: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedTransform<T> {
    pub numerical: Vec<NumericalFit<T>>,
    pub categorical: Vec<CategoricalFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularVector<T> {
    pub c: Vec<T>,
    pub n: Vec<T>,
}

impl<T: Scalar> TabularVector<T> {
    /// `[c ‖ n]`.
    pub fn flat(&self) -> Vec<T> {
        self.c.iter().chain(&self.n).copied().collect()
    }

    pub fn from_flat(flat: &[T], c_dim: usize) -> Self {
        Self {
            c: flat[..c_dim].to_vec(),
            n: flat[c_dim..].to_vec(),
        }
    }

    /// Removes the columns of the given slots.
    pub fn drop_slots(&self, slots: &[&FeatureSlot]) -> Self {
        let keep = |m: Modality, v: &[T]| -> Vec<T> {
            v.iter()
                .enumerate()
                .filter(|(i, _)| {
                    !slots
                        .iter()
                        .any(|s| s.modality == m && s.columns.contains(i))
                })
                .map(|(_, &x)| x)
                .collect()
        };
        Self {
            c: keep(Modality::Categorical, &self.c),
            n: keep(Modality::Numerical, &self.n),
        }
    }
}

impl<T: Scalar> FittedTransform<T> {
    /// Fits on training rows only.
    pub fn fit(schema: &TabularSchema, rows: &[RawRow]) -> Result<Self> {
        schema.validate()?;
        if rows.is_empty() {
            return Err(Error::Empty("no training rows for the tabular transform".into()));
        }
        for r in rows {
            if r.numerical.len() != schema.numerical.len() || r.categorical.len() != schema.categorical.len() {
                return Err(Error::Shape("row does not match tabular schema".into()));
            }
        }
        let numerical = schema
            .numerical
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let col: Vec<T> = rows.iter().map(|r| T::of(r.numerical[j])).collect();
                if col.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("training column `{}`", spec.name)));
                }
                let fit = fit_yeo_johnson(&col);
                let t: Vec<T> = col.iter().map(|&x| yeo_johnson(x, fit.lambda)).collect();
                let (mean, std) = mean_std(&t);
                let constant = fit.constant || !(std > T::epsilon() * (T::one() + mean.abs()));
                Ok(NumericalFit {
                    name: spec.name.clone(),
                    lambda: fit.lambda,
                    mean,
                    std: if constant { T::one() } else { std },
                    constant,
                })
            })
            .collect::<Result<_>>()?;
        let categorical = schema
            .categorical
            .iter()
            .enumerate()
            .map(|(j, spec)| CategoricalFit {
                name: spec.name.clone(),
                categories: rows
                    .iter()
                    .map(|r| r.categorical[j].clone())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            })
            .collect();
        Ok(Self {
            numerical,
            categorical,
        })
    }

    pub fn c_dim(&self) -> usize {
        self.categorical.iter().map(|c| c.categories.len()).sum()
    }

    pub fn n_dim(&self) -> usize {
        self.numerical.len()
    }

    pub fn layout(&self) -> Vec<FeatureSlot> {
        let mut slots = Vec::new();
        let mut off = 0;
        for c in &self.categorical {
            slots.push(FeatureSlot {
                name: c.name.clone(),
                modality: Modality::Categorical,
                columns: off..off + c.categories.len(),
            });
            off += c.categories.len();
        }
        for (i, n) in self.numerical.iter().enumerate() {
            slots.push(FeatureSlot {
                name: n.name.clone(),
                modality: Modality::Numerical,
                columns: i..i + 1,
            });
        }
        slots
    }

    /// Encodes a resolved row. Unseen categories give an all-zero block and
    /// a logged warning.
    pub fn apply_row(&self, row: &RawRow) -> Result<TabularVector<T>> {
        if row.numerical.len() != self.numerical.len() {
            return Err(Error::MissingFeature(
                self.numerical
                    .get(row.numerical.len())
                    .map_or_else(|| "<extra numerical value>".to_string(), |f| f.name.clone()),
            ));
        }
        if row.categorical.len() != self.categorical.len() {
            return Err(Error::MissingFeature(
                self.categorical
                    .get(row.categorical.len())
                    .map_or_else(|| "<extra categorical value>".to_string(), |f| f.name.clone()),
            ));
        }
        let mut c = Vec::with_capacity(self.c_dim());
        for (fit, value) in self.categorical.iter().zip(&row.categorical) {
            let hit = fit.categories.iter().position(|k| k == value);
            if hit.is_none() {
                log::warn!("feature `{}`: unseen category `{value}` encoded as zeros", fit.name);
            }
            c.extend((0..fit.categories.len()).map(|i| if Some(i) == hit { T::one() } else { T::zero() }));
        }
        let n = self
            .numerical
            .iter()
            .zip(&row.numerical)
            .map(|(fit, &x)| {
                let v = fit.encode(T::of(x));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite(format!("encoded feature `{}`", fit.name)))
                }
            })
            .collect::<Result<_>>()?;
        Ok(TabularVector { c, n })
    }

    pub fn apply(
        &self,
        schema: &TabularSchema,
        post: &PostContext,
        profile: &ProfileFeatures,
    ) -> Result<TabularVector<T>> {
        self.apply_row(&schema.resolve(post, profile)?)
    }

    /// One line per feature:
    /// `numerical <name> <lambda> <mean> <std> <constant>` or
    /// `categorical <name> <category>...`, tab-separated.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.categorical {
            write!(out, "categorical\t{}", escape_field(&c.name))?;
            for k in &c.categories {
                write!(out, "\t{}", escape_field(k))?;
            }
            writeln!(out)?;
        }
        for n in &self.numerical {
            writeln!(
                out,
                "numerical\t{}\t{}\t{}\t{}\t{}",
                escape_field(&n.name),
                n.lambda,
                n.mean,
                n.std,
                n.constant
            )?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, path: &Path) -> Result<Self> {
        let mut out = Self {
            numerical: Vec::new(),
            categorical: Vec::new(),
        };
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::format(path, i + 1, m);
            let f: Vec<&str> = line.split('\t').collect();
            let un = |s: &str| unescape_field(s).ok_or_else(|| bad("bad escape"));
            let num = |s: &str| s.parse::<T>().map_err(|_| bad("bad number"));
            match f.as_slice() {
                ["categorical", name, cats @ ..] => out.categorical.push(CategoricalFit {
                    name: un(name)?,
                    categories: cats.iter().map(|c| un(c)).collect::<Result<_>>()?,
                }),
                ["numerical", name, lambda, mean, std, constant] => out.numerical.push(NumericalFit {
                    name: un(name)?,
                    lambda: num(lambda)?,
                    mean: num(mean)?,
                    std: num(std)?,
                    constant: constant.parse().map_err(|_| bad("bad flag"))?,
                }),
                _ => return Err(bad("unrecognized transform line")),
            }
        }
        Ok(out)
    }
}

/// Mean and population standard deviation.
pub(crate) fn mean_std<T: Scalar>(v: &[T]) -> (T, T) {
    let n = T::of_usize(v.len());
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    /// Textbook transform and likelihood, kept separate from the
    /// implementation under test.
    fn yj_naive(x: f64, l: f64) -> f64 {
        if x >= 0.0 {
            if l.abs() < 1e-12 {
                (x + 1.0).ln()
            } else {
                ((x + 1.0).powf(l) - 1.0) / l
            }
        } else if (l - 2.0).abs() < 1e-12 {
            -(-x + 1.0).ln()
        } else {
            -((-x + 1.0).powf(2.0 - l) - 1.0) / (2.0 - l)
        }
    }

    fn grid_oracle(values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let ll = |l: f64| {
            let t: Vec<f64> = values.iter().map(|&x| yj_naive(x, l)).collect();
            let m = t.iter().sum::<f64>() / n;
            let v = t.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            let jac: f64 = values.iter().map(|&x| x.signum() * (x.abs() + 1.0).ln()).sum();
            -n / 2.0 * v.ln() + (l - 1.0) * jac
        };
        (0..=4000)
            .map(|i| -2.0 + i as f64 * 1e-3)
            .max_by(|a, b| ll(*a).partial_cmp(&ll(*b)).unwrap())
            .unwrap()
    }

    #[test]
    fn transform_examples() {
        assert_eq!(yeo_johnson(3.0f64, 1.0), 3.0);
        assert_eq!(yeo_johnson(-3.5f64, 1.0), -3.5);
        let e = std::f64::consts::E;
        assert!((yeo_johnson(e - 1.0, 0.0) - 1.0).abs() < 1e-15);
        assert!((yeo_johnson(-(e - 1.0), 2.0) + 1.0).abs() < 1e-15);
        for &(x, l) in &[(0.7, 0.3), (-1.2, 0.5), (2.5, -1.5), (-0.4, 1.7)] {
            assert!((yeo_johnson(x, l) - yj_naive(x, l)).abs() < 1e-12);
        }
    }

    #[test]
    fn continuity_at_branch_points() {
        for &x in &[0.0, 0.3, 1.0, 5.0] {
            let (lo, hi) = (yeo_johnson(x, -1e-6f64), yeo_johnson(x, 1e-6));
            assert!((lo - hi).abs() < 1e-5 && (lo - yeo_johnson(x, 0.0)).abs() < 1e-5);
        }
        for &x in &[-0.3, -1.0, -5.0] {
            let (lo, hi) = (yeo_johnson(x, 2.0 - 1e-6f64), yeo_johnson(x, 2.0 + 1e-6));
            assert!((lo - hi).abs() < 1e-5 && (lo - yeo_johnson(x, 2.0)).abs() < 1e-5);
        }
    }

    proptest! {
        #[test]
        fn monotone_in_x(a in -50.0f64..50.0, d in 1e-3f64..10.0, l in -2.0f64..2.0) {
            prop_assert!(yeo_johnson(a + d, l) > yeo_johnson(a, l));
        }
    }

    #[test]
    fn fit_symmetric_sample_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..2000).map(|_| normal(&mut rng)).collect();
        let fit = fit_yeo_johnson(&v);
        assert!(!fit.constant);
        assert!((fit.lambda - 1.0).abs() < 0.15, "{}", fit.lambda);
        assert!((fit.lambda - grid_oracle(&v)).abs() < 2e-3);
    }

    #[test]
    fn fit_right_skewed_below_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..1000).map(|_| normal(&mut rng).exp() - 1.0).collect();
        let fit = fit_yeo_johnson(&v);
        let oracle = grid_oracle(&v);
        assert!(fit.lambda < 1.0 && oracle < 1.0);
        assert!((fit.lambda - oracle).abs() < 2e-3);
    }

    #[test]
    fn fit_constant_column() {
        let fit = fit_yeo_johnson(&[2.0f64; 5]);
        assert_eq!((fit.lambda, fit.constant), (1.0, true));
    }

    #[test]
    fn fit_in_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..500).map(|_| normal(&mut rng).exp() - 1.0).collect();
        let v32: Vec<f32> = v.iter().map(|&x| x as f32).collect();
        let l64 = fit_yeo_johnson(&v).lambda;
        let l32 = fit_yeo_johnson(&v32).lambda as f64;
        assert!((l64 - l32).abs() < 5e-3);
    }

    fn rows(vals: &[(f64, &str)]) -> Vec<RawRow> {
        vals.iter()
            .map(|(x, c)| RawRow {
                numerical: vec![*x],
                categorical: vec![c.to_string()],
            })
            .collect()
    }

    fn one_each() -> TabularSchema {
        TabularSchema {
            numerical: vec![FeatureSpec::profile("night_ratio")],
            categorical: vec![FeatureSpec::post("is_late_night")],
        }
    }

    #[test]
    fn standardized_training_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<RawRow> = (0..300)
            .map(|_| RawRow {
                numerical: vec![normal(&mut rng).exp(), normal(&mut rng) * 3.0],
                categorical: vec![],
            })
            .collect();
        let schema = TabularSchema {
            numerical: vec![FeatureSpec::profile("a"), FeatureSpec::profile("b")],
            categorical: vec![],
        };
        let fit = FittedTransform::<f64>::fit(&schema, &data).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = data.iter().map(|r| fit.apply_row(r).unwrap().n[j]).collect();
            let (m, s) = mean_std(&col);
            assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9, "{m} {s}");
        }
    }

    #[test]
    fn one_hot_and_unseen_category() {
        let fit = FittedTransform::<f64>::fit(&one_each(), &rows(&[(0.1, "true"), (0.5, "false"), (0.9, "true")])).unwrap();
        assert_eq!(fit.categorical[0].categories, vec!["false", "true"]);
        let v = fit.apply_row(&rows(&[(0.5, "true")])[0]).unwrap();
        assert_eq!(v.c, vec![0.0, 1.0]);
        let u = fit.apply_row(&rows(&[(0.5, "maybe")])[0]).unwrap();
        assert_eq!(u.c, vec![0.0, 0.0]);
    }

    #[test]
    fn training_mean_maps_near_zero() {
        let data = rows(&[(1.0, "a"), (2.0, "a"), (3.0, "a")]);
        let fit = FittedTransform::<f64>::fit(&one_each(), &data).unwrap();
        let nf = &fit.numerical[0];
        let back = |t: f64| {
            // invert the monotone transform by bisection
            let (mut lo, mut hi) = (-100.0, 100.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if yeo_johnson(mid, nf.lambda) < t { lo = mid } else { hi = mid }
            }
            0.5 * (lo + hi)
        };
        let x = back(nf.mean);
        assert!(nf.encode(x).abs() < 1e-9);
    }

    #[test]
    fn degenerate_fits() {
        let one = FittedTransform::<f64>::fit(&one_each(), &rows(&[(0.3, "a")])).unwrap();
        assert!(one.numerical[0].constant);
        assert_eq!(one.apply_row(&rows(&[(7.0, "a")])[0]).unwrap().n, vec![0.0]);
        let empty_schema = TabularSchema { numerical: vec![], categorical: vec![] };
        let e = FittedTransform::<f64>::fit(&empty_schema, &[RawRow { numerical: vec![], categorical: vec![] }]).unwrap();
        assert_eq!((e.c_dim(), e.n_dim()), (0, 0));
        assert!(FittedTransform::<f64>::fit(&one_each(), &[]).is_err());
    }

    #[test]
    fn missing_value_names_feature() {
        let fit = FittedTransform::<f64>::fit(&one_each(), &rows(&[(0.1, "a"), (0.2, "b")])).unwrap();
        let err = fit
            .apply_row(&RawRow { numerical: vec![], categorical: vec!["a".into()] })
            .unwrap_err();
        assert!(err.to_string().contains("night_ratio"));
        let mut pf = ProfileFeatures {
            n_posts: 1,
            night_ratio: 0.0,
            avg_lex: Default::default(),
            avg_top_sent: 0.0,
            top_words: vec![],
        };
        let schema = TabularSchema::default();
        let err = schema.resolve(&PostContext::default(), &pf).unwrap_err();
        assert!(err.to_string().contains("lexicon_based"));
        for k in ["lexicon_based", "junyeop_lex", "anxious_dep"] {
            pf.avg_lex.insert(k.into(), 1.0);
        }
        assert_eq!(schema.resolve(&PostContext::default(), &pf).unwrap().categorical, vec!["false"]);
    }

    #[test]
    fn apply_does_not_mutate_fit_and_roundtrips() {
        let data = rows(&[(0.1, "x"), (2.5, "y"), (0.7, "x"), (9.0, "z")]);
        let fit = FittedTransform::<f64>::fit(&one_each(), &data).unwrap();
        let before = fit.clone();
        fit.apply_row(&rows(&[(100.0, "w")])[0]).unwrap();
        assert_eq!(fit, before);
        let mut buf = Vec::new();
        fit.write(&mut buf).unwrap();
        assert_eq!(FittedTransform::<f64>::read(&buf[..], Path::new("t")).unwrap(), fit);
    }

    #[test]
    fn layout_and_drop() {
        let fit = FittedTransform::<f64>::fit(&one_each(), &rows(&[(0.1, "x"), (2.5, "y")])).unwrap();
        let layout = fit.layout();
        assert_eq!(layout[0].columns, 0..2);
        assert_eq!(layout[1].modality, Modality::Numerical);
        let v = fit.apply_row(&data_row()).unwrap();
        let d = v.drop_slots(&[&layout[0]]);
        assert!(d.c.is_empty() && d.n == v.n);
        fn data_row() -> RawRow {
            RawRow { numerical: vec![1.0], categorical: vec!["x".into()] }
        }
    }
}
