//! Per-post contextual signals: late-night flag, lexicon hits and compound
//! sentiment.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default normalizer of [`compound_sentiment`].
pub const DEFAULT_ALPHA: f64 = 15.0;

pub type TokenCounts = BTreeMap<String, u32>;

/// Word multiset of a normalized text.
pub fn token_counts(normalized: &str) -> TokenCounts {
    let mut counts = TokenCounts::new();
    for w in normalized.split_whitespace() {
        *counts.entry(w.to_string()).or_default() += 1;
    }
    counts
}

fn read_pairs<R: BufRead>(input: R, path: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, i + 1, "expected two tab-separated fields"))?;
        out.push((i + 1, a.trim().to_string(), b.trim().to_string()));
    }
    Ok(out)
}

/// Named word sets per subtype. Subtype sets may overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    name: String,
    subtypes: BTreeMap<String, BTreeSet<String>>,
}

impl Lexicon {
    pub fn new(name: impl Into<String>, subtypes: BTreeMap<String, BTreeSet<String>>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidArgument("lexicon name is empty".into()));
        }
        for (sub, words) in &subtypes {
            if words.iter().any(|w| w.is_empty() || *w != w.to_lowercase()) {
                return Err(Error::InvalidArgument(format!(
                    "lexicon {name}/{sub}: words must be lowercase and non-empty"
                )));
            }
        }
        Ok(Self { name, subtypes })
    }

    /// Parses `subtype<TAB>word` lines.
    pub fn parse<R: BufRead>(name: &str, input: R, path: &Path) -> Result<Self> {
        let mut subtypes: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (line, sub, word) in read_pairs(input, path)? {
            if sub.is_empty() || word.is_empty() {
                return Err(Error::format(path, line, "empty subtype or word"));
            }
            subtypes.entry(sub).or_default().insert(word.to_lowercase());
        }
        Self::new(name, subtypes)
    }

    pub fn load(name: &str, path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::parse(name, std::io::BufReader::new(f), path)
    }

    /// Nine-subtype behaviour lexicon shipped with the crate.
    pub fn builtin_primary() -> Self {
        Self::parse(
            "lexicon_based",
            include_str!("../data/lexicon_based.tsv").as_bytes(),
            Path::new("lexicon_based.tsv"),
        )
        .expect("builtin lexicon is valid")
    }

    /// Single-subtype lexicon shipped with the crate.
    pub fn builtin_secondary() -> Self {
        Self::parse(
            "junyeop_lex",
            include_str!("../data/junyeop_lex.tsv").as_bytes(),
            Path::new("junyeop_lex.tsv"),
        )
        .expect("builtin lexicon is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn subtypes(&self) -> impl Iterator<Item = &str> {
        self.subtypes.keys().map(String::as_str)
    }

    pub fn n_subtypes(&self) -> usize {
        self.subtypes.len()
    }
}

/// Per-subtype raw hit counts; a word seen twice counts twice, and a word in
/// two subtypes counts in both.
pub fn lexicon_score(tokens: &TokenCounts, lexicon: &Lexicon) -> BTreeMap<String, u32> {
    lexicon
        .subtypes
        .iter()
        .map(|(sub, words)| {
            let hits = words
                .iter()
                .filter_map(|w| tokens.get(w))
                .sum::<u32>();
            (sub.clone(), hits)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValenceLexicon {
    scores: HashMap<String, f64>,
}

impl ValenceLexicon {
    pub fn parse<R: BufRead>(input: R, path: &Path) -> Result<Self> {
        let mut scores = HashMap::new();
        for (line, word, score) in read_pairs(input, path)? {
            let v: f64 = score
                .parse()
                .map_err(|_| Error::format(path, line, "score is not a number"))?;
            if !v.is_finite() || !(-4.0..=4.0).contains(&v) {
                return Err(Error::format(path, line, "score outside [-4, 4]"));
            }
            scores.insert(word.to_lowercase(), v);
        }
        Ok(Self { scores })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::parse(std::io::BufReader::new(f), path)
    }

    pub fn builtin() -> Self {
        Self::parse(
            include_str!("../data/valence.tsv").as_bytes(),
            Path::new("valence.tsv"),
        )
        .expect("builtin valence table is valid")
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        Self {
            scores: pairs.into_iter().map(|(w, v)| (w.to_string(), v)).collect(),
        }
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.scores.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// `S / sqrt(S² + alpha)` with `S = Σ count(w)·valence(w)`.
pub fn compound_sentiment<'a, I>(word_counts: I, valence: &ValenceLexicon, alpha: f64) -> f64
where
    I: IntoIterator<Item = (&'a str, u32)>,
{
    assert!(alpha > 0.0, "compound normalizer must be positive");
    let s: f64 = word_counts
        .into_iter()
        .filter_map(|(w, c)| valence.get(w).map(|v| c as f64 * v))
        .sum();
    if s == 0.0 {
        return 0.0;
    }
    s / (s * s + alpha).sqrt()
}

/// Half-open hour window `[start, end)`; wraps past midnight when
/// `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LateNightWindow {
    pub start_hour: u32,
    pub end_hour: u32,
}

impl Default for LateNightWindow {
    fn default() -> Self {
        Self {
            start_hour: 1,
            end_hour: 6,
        }
    }
}

impl LateNightWindow {
    pub fn contains_hour(&self, hour: u32) -> bool {
        if self.start_hour <= self.end_hour {
            (self.start_hour..self.end_hour).contains(&hour)
        } else {
            hour >= self.start_hour || hour < self.end_hour
        }
    }
}

/// Timestamps are taken as stored; no timezone conversion.
pub fn is_late_night(timestamp: &NaiveDateTime, window: &LateNightWindow) -> bool {
    window.contains_hour(timestamp.hour())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostContext {
    pub is_late_night: bool,
    /// lexicon name → subtype → hit count
    pub lexicon_hits: BTreeMap<String, BTreeMap<String, u32>>,
    pub token_multiset: TokenCounts,
}

impl PostContext {
    /// Total hits of one lexicon over all its subtypes.
    pub fn lexicon_total(&self, lexicon: &str) -> Option<u32> {
        self.lexicon_hits.get(lexicon).map(|s| s.values().sum())
    }

    pub fn subtype_hits(&self, lexicon: &str, subtype: &str) -> Option<u32> {
        self.lexicon_hits.get(lexicon)?.get(subtype).copied()
    }
}

/// Lexicons plus the late-night window: everything needed per post.
#[derive(Debug, Clone)]
pub struct ContextExtractor {
    pub lexicons: Vec<Lexicon>,
    pub window: LateNightWindow,
}

impl ContextExtractor {
    pub fn new(lexicons: Vec<Lexicon>, window: LateNightWindow) -> Result<Self> {
        // Profile aggregation keys every lexicon by name and the subtypes of
        // multi-subtype lexicons by subtype name; all keys must be distinct.
        let mut keys: BTreeSet<&str> = ["night_ratio", "avg_top_sent"].into_iter().collect();
        for l in &lexicons {
            if !keys.insert(l.name()) {
                return Err(Error::InvalidArgument(format!("duplicate feature key `{}`", l.name())));
            }
        }
        for l in lexicons.iter().filter(|l| l.n_subtypes() > 1) {
            for s in l.subtypes() {
                if !keys.insert(s) {
                    return Err(Error::InvalidArgument(format!(
                        "subtype `{s}` of lexicon `{}` collides with another feature key",
                        l.name()
                    )));
                }
            }
        }
        Ok(Self { lexicons, window })
    }

    pub fn builtin() -> Self {
        Self::new(
            vec![Lexicon::builtin_primary(), Lexicon::builtin_secondary()],
            LateNightWindow::default(),
        )
        .expect("builtin lexicon names are distinct")
    }

    /// `normalized` must already have gone through text normalization.
    pub fn extract(&self, normalized: &str, timestamp: &NaiveDateTime) -> PostContext {
        let tokens = token_counts(normalized);
        PostContext {
            is_late_night: is_late_night(timestamp, &self.window),
            lexicon_hits: self
                .lexicons
                .iter()
                .map(|l| (l.name().to_string(), lexicon_score(&tokens, l)))
                .collect(),
            token_multiset: tokens,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::ts;
    use proptest::prelude::*;

    fn lex(pairs: &[(&str, &str)]) -> Lexicon {
        let src: String = pairs.iter().map(|(s, w)| format!("{s}\t{w}\n")).collect();
        Lexicon::parse("test", src.as_bytes(), Path::new("t")).unwrap()
    }

    #[test]
    fn late_night_half_open() {
        let w = LateNightWindow::default();
        assert!(is_late_night(&ts(2, 30), &w));
        assert!(is_late_night(&ts(1, 0), &w));
        assert!(!is_late_night(&ts(6, 0), &w));
        assert!(!is_late_night(&ts(13, 45), &w));
        let wrap = LateNightWindow {
            start_hour: 23,
            end_hour: 2,
        };
        assert!(wrap.contains_hour(23) && wrap.contains_hour(0) && !wrap.contains_hour(2));
    }

    #[test]
    fn lexicon_counts_multiset() {
        let l = lex(&[("anxious_dep", "sad"), ("major", "empty")]);
        let t = token_counts("sad tired sad");
        let s = lexicon_score(&t, &l);
        assert_eq!(s["anxious_dep"], 2);
        assert_eq!(s["major"], 0);
        let z = lexicon_score(&TokenCounts::new(), &l);
        assert!(z.values().all(|&v| v == 0));
    }

    #[test]
    fn overlapping_subtypes_both_count() {
        let l = lex(&[("a", "sad"), ("b", "sad")]);
        let s = lexicon_score(&token_counts("sad"), &l);
        assert_eq!((s["a"], s["b"]), (1, 1));
    }

    #[test]
    fn builtin_lexicons() {
        let p = Lexicon::builtin_primary();
        assert_eq!(p.n_subtypes(), 9);
        assert!(p.subtypes().any(|s| s == "anxious_dep"));
        assert_eq!(Lexicon::builtin_secondary().n_subtypes(), 1);
        assert!(ValenceLexicon::builtin().len() >= 100);
    }

    #[test]
    fn valence_rejects_out_of_range() {
        assert!(ValenceLexicon::parse("x\t4.5\n".as_bytes(), Path::new("v")).is_err());
        assert!(ValenceLexicon::parse("x\tnan\n".as_bytes(), Path::new("v")).is_err());
        assert!(ValenceLexicon::parse("x 1\n".as_bytes(), Path::new("v")).is_err());
    }

    #[test]
    fn compound_examples() {
        let v = ValenceLexicon::from_pairs([("good", 1.9), ("not", -1.2), ("one", 1.0)]);
        assert_eq!(compound_sentiment([("zzz", 3)], &v, 15.0), 0.0);
        assert_eq!(compound_sentiment([("one", 1)], &v, 15.0), 0.25);
        let got = compound_sentiment([("good", 1), ("not", 1)], &v, 15.0);
        let want = 0.7 / (0.49f64 + 15.0).sqrt();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.1779).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn compound_is_odd_and_bounded(vals in proptest::collection::vec(-4.0f64..4.0, 1..6),
                                      counts in proptest::collection::vec(0u32..50, 6)) {
            let words: Vec<String> = (0..vals.len()).map(|i| format!("w{i}")).collect();
            let pos = ValenceLexicon::from_pairs(words.iter().map(String::as_str).zip(vals.iter().copied()));
            let neg = ValenceLexicon::from_pairs(words.iter().map(String::as_str).zip(vals.iter().map(|v| -v)));
            let wc: Vec<(&str, u32)> = words.iter().map(String::as_str).zip(counts.iter().copied()).collect();
            let a = compound_sentiment(wc.iter().copied(), &pos, 15.0);
            let b = compound_sentiment(wc.iter().copied(), &neg, 15.0);
            prop_assert_eq!(a, -b);
            prop_assert!(a.abs() < 1.0);
        }

        #[test]
        fn compound_monotone_in_sum(s1 in -50.0f64..50.0, d in 0.001f64..10.0) {
            let v1 = ValenceLexicon::from_pairs([("w", s1)]);
            let v2 = ValenceLexicon::from_pairs([("w", s1 + d)]);
            prop_assert!(compound_sentiment([("w", 1)], &v2, 15.0) > compound_sentiment([("w", 1)], &v1, 15.0));
        }

        #[test]
        fn lexicon_score_additive(a in proptest::collection::vec("(sad|cry|happy|empty)", 0..10),
                                  b in proptest::collection::vec("(sad|cry|happy|empty)", 0..10)) {
            let l = Lexicon::builtin_primary();
            let ta = token_counts(&a.join(" "));
            let tb = token_counts(&b.join(" "));
            let tab = token_counts(&format!("{} {}", a.join(" "), b.join(" ")));
            let (sa, sb, sab) = (lexicon_score(&ta, &l), lexicon_score(&tb, &l), lexicon_score(&tab, &l));
            for (k, v) in &sab {
                prop_assert_eq!(*v, sa[k] + sb[k]);
            }
        }
    }

    #[test]
    fn extractor_fills_all_lexicons() {
        let ex = ContextExtractor::builtin();
        let c = ex.extract("so sad and lonely at night sad", &ts(3, 0));
        assert!(c.is_late_night);
        assert_eq!(c.subtype_hits("lexicon_based", "anxious_dep"), Some(3));
        assert_eq!(c.lexicon_total("junyeop_lex"), Some(3));
        assert_eq!(c.token_multiset["sad"], 2);
    }
}
