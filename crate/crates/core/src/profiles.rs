//! User-centred profile store: posts linked to their user node, time-aware
//! aggregation into profile features, and append-only persona annotations.
//!
//! The store is an in-memory index backed by a flat record file. Mutation
//! needs `&mut ProfileStore`, so readers always see a consistent snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::context::{compound_sentiment, PostContext, TokenCounts, ValenceLexicon, DEFAULT_ALPHA};
use crate::corpus::{Label, RawPost, ISO_FORMAT};
use crate::escape::{escape_field, unescape_field};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
const HEADER_TAG: &str = "#PERSONA-PROFILE-STORE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPost {
    pub text: String,
    pub timestamp: NaiveDateTime,
    /// Present only for training-split posts.
    pub label: Option<Label>,
    pub context: PostContext,
}

impl StoredPost {
    pub fn from_raw(raw: &RawPost, context: PostContext, keep_label: bool) -> Self {
        Self {
            text: raw.text.clone(),
            timestamp: raw.timestamp,
            label: keep_label.then_some(raw.label),
            context,
        }
    }

    fn sort_key(&self) -> (&NaiveDateTime, &str) {
        (&self.timestamp, &self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaAnnotation {
    pub cycle_id: u64,
    pub persona: String,
    pub timestamp: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileNode {
    pub user_id: String,
    /// Sorted by `(timestamp, text)`.
    pub posts: Vec<StoredPost>,
    /// Append-only history.
    pub persona_annotations: Vec<PersonaAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFeatures {
    pub n_posts: usize,
    pub night_ratio: f64,
    /// Mean per-post hits, keyed by lexicon name (total over subtypes) and,
    /// for multi-subtype lexicons, by subtype name.
    pub avg_lex: BTreeMap<String, f64>,
    pub avg_top_sent: f64,
    pub top_words: Vec<(String, u32)>,
}

impl ProfileFeatures {
    /// Resolves a numerical feature by name.
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "night_ratio" => Some(self.night_ratio),
            "avg_top_sent" => Some(self.avg_top_sent),
            other => self.avg_lex.get(other).copied(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AggregationSettings {
    pub top_k: usize,
    pub stopwords: BTreeSet<String>,
    pub valence: ValenceLexicon,
    pub alpha: f64,
}

impl AggregationSettings {
    pub fn builtin() -> Self {
        Self {
            top_k: 10,
            stopwords: builtin_stopwords(),
            valence: ValenceLexicon::builtin(),
            alpha: DEFAULT_ALPHA,
        }
    }
}

pub fn parse_stopwords(src: &str) -> BTreeSet<String> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    Ok(parse_stopwords(&std::fs::read_to_string(path)?))
}

pub fn builtin_stopwords() -> BTreeSet<String> {
    parse_stopwords(include_str!("../data/stopwords.txt"))
}

/// The `k` most frequent non-stopword tokens; ties lexicographic.
pub fn top_words(counts: &TokenCounts, k: usize, stopwords: &BTreeSet<String>) -> Vec<(String, u32)> {
    let mut ranked: Vec<(String, u32)> = counts
        .iter()
        .filter(|(w, _)| !stopwords.contains(*w))
        .map(|(w, &c)| (w.clone(), c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileStore {
    nodes: BTreeMap<String, ProfileNode>,
    cycle: u64,
    schema_version: u32,
    /// Free-form `key=value` metadata carried in the file header.
    pub metadata: BTreeMap<String, String>,
}

impl Default for ProfileStore {
    fn default() -> Self {
        Self {
            nodes: BTreeMap::new(),
            cycle: 0,
            schema_version: SCHEMA_VERSION,
            metadata: BTreeMap::new(),
        }
    }
}

impl ProfileStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, user_id: &str) -> Option<&ProfileNode> {
        self.nodes.get(user_id)
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Highest cycle id annotated so far.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Inserts posts under the user node in `(timestamp, text)` order;
    /// posts already present with the same timestamp and text are ignored.
    pub fn upsert_posts(&mut self, user_id: &str, posts: impl IntoIterator<Item = StoredPost>) {
        let mut posts = posts.into_iter().peekable();
        if posts.peek().is_none() {
            return;
        }
        let node = self
            .nodes
            .entry(user_id.to_string())
            .or_insert_with(|| ProfileNode {
                user_id: user_id.to_string(),
                ..Default::default()
            });
        for p in posts {
            match node
                .posts
                .binary_search_by(|q| q.sort_key().cmp(&p.sort_key()))
            {
                Ok(_) => {}
                Err(pos) => node.posts.insert(pos, p),
            }
        }
    }

    pub fn upsert_raw(&mut self, raw: &RawPost, context: PostContext, keep_label: bool) {
        self.upsert_posts(&raw.user_id, [StoredPost::from_raw(raw, context, keep_label)]);
    }

    /// Aggregates the user's posts into profile features. Persona
    /// annotations and labels are never read here.
    pub fn aggregate_features(&self, user_id: &str, settings: &AggregationSettings) -> Result<ProfileFeatures> {
        let node = self
            .nodes
            .get(user_id)
            .ok_or_else(|| Error::UnknownUser(user_id.to_string()))?;
        let n = node.posts.len();
        if n == 0 {
            return Err(Error::Empty(format!("user `{user_id}` has no posts")));
        }
        let nf = n as f64;
        let night = node.posts.iter().filter(|p| p.context.is_late_night).count();

        let mut totals: BTreeMap<String, u64> = BTreeMap::new();
        let mut words = TokenCounts::new();
        for p in &node.posts {
            for (lex, subs) in &p.context.lexicon_hits {
                let total: u32 = subs.values().sum();
                *totals.entry(lex.clone()).or_default() += u64::from(total);
                if subs.len() > 1 {
                    for (s, &c) in subs {
                        *totals.entry(s.clone()).or_default() += u64::from(c);
                    }
                }
            }
            for (w, &c) in &p.context.token_multiset {
                *words.entry(w.clone()).or_default() += c;
            }
        }
        let top = top_words(&words, settings.top_k, &settings.stopwords);
        let avg_top_sent = compound_sentiment(
            top.iter().map(|(w, c)| (w.as_str(), *c)),
            &settings.valence,
            settings.alpha,
        );
        Ok(ProfileFeatures {
            n_posts: n,
            night_ratio: night as f64 / nf,
            avg_lex: totals
                .into_iter()
                .map(|(k, v)| (k, v as f64 / nf))
                .collect(),
            avg_top_sent,
            top_words: top,
        })
    }

    /// Appends a persona annotation to the user's history.
    pub fn annotate_persona(
        &mut self,
        user_id: &str,
        persona: &str,
        cycle_id: u64,
        timestamp: NaiveDateTime,
    ) -> Result<()> {
        let node = self
            .nodes
            .get_mut(user_id)
            .ok_or_else(|| Error::UnknownUser(user_id.to_string()))?;
        node.persona_annotations.push(PersonaAnnotation {
            cycle_id,
            persona: persona.to_string(),
            timestamp,
        });
        self.cycle = self.cycle.max(cycle_id);
        Ok(())
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "{HEADER_TAG}\tv{}\tcycle={}", self.schema_version, self.cycle)?;
        for (k, v) in &self.metadata {
            write!(out, "\t{}={}", escape_field(k), escape_field(v))?;
        }
        writeln!(out)?;
        for node in self.nodes.values() {
            let user = escape_field(&node.user_id);
            for p in &node.posts {
                let label = p.label.map_or("-".to_string(), |l| l.index().to_string());
                writeln!(
                    out,
                    "POST\t{user}\t{}\t{label}\t{}\t{}",
                    p.timestamp.format(ISO_FORMAT),
                    serde_json::to_string(&p.context)?,
                    escape_field(&p.text)
                )?;
            }
            for a in &node.persona_annotations {
                writeln!(
                    out,
                    "ANNOT\t{user}\t{}\t{}\t{}",
                    a.cycle_id,
                    a.timestamp.format(ISO_FORMAT),
                    escape_field(&a.persona)
                )?;
            }
        }
        Ok(())
    }

    pub fn save_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(input: R, path: &Path) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l?,
            None => return Err(Error::format(path, 1, "missing header")),
        };
        let mut store = ProfileStore::new();
        let mut fields = header.split('\t');
        if fields.next() != Some(HEADER_TAG) {
            return Err(Error::format(path, 1, "not a profile store file"));
        }
        store.schema_version = fields
            .next()
            .and_then(|v| v.strip_prefix('v'))
            .and_then(|v| v.parse().ok())
            .filter(|&v| v == SCHEMA_VERSION)
            .ok_or_else(|| Error::format(path, 1, "unsupported schema version"))?;
        for kv in fields {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::format(path, 1, "bad header field"))?;
            if k == "cycle" {
                store.cycle = v.parse().map_err(|_| Error::format(path, 1, "bad cycle"))?;
            } else {
                let un = |s| unescape_field(s).ok_or_else(|| Error::format(path, 1, "bad escape"));
                store.metadata.insert(un(k)?, un(v)?);
            }
        }

        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            let bad = |m: String| Error::format(path, lineno, m);
            let f: Vec<&str> = line.split('\t').collect();
            let ts = |s: &str| {
                NaiveDateTime::parse_from_str(s, ISO_FORMAT).map_err(|e| bad(format!("timestamp: {e}")))
            };
            let text = |s: &str| unescape_field(s).ok_or_else(|| bad("bad escape".into()));
            match f[0] {
                "POST" if f.len() == 6 => {
                    let label = match f[3] {
                        "-" => None,
                        s => Some(
                            s.parse()
                                .ok()
                                .and_then(Label::from_index)
                                .ok_or_else(|| bad("label must be 0, 1 or -".into()))?,
                        ),
                    };
                    let context: PostContext =
                        serde_json::from_str(f[4]).map_err(|e| bad(format!("context: {e}")))?;
                    let post = StoredPost {
                        timestamp: ts(f[2])?,
                        label,
                        context,
                        text: text(f[5])?,
                    };
                    store.upsert_posts(&text(f[1])?, [post]);
                }
                "ANNOT" if f.len() == 5 => {
                    let cycle: u64 = f[2].parse().map_err(|_| bad("bad cycle id".into()))?;
                    let user = text(f[1])?;
                    let node = store
                        .nodes
                        .get_mut(&user)
                        .ok_or_else(|| bad(format!("annotation for unknown user `{user}`")))?;
                    node.persona_annotations.push(PersonaAnnotation {
                        cycle_id: cycle,
                        timestamp: ts(f[3])?,
                        persona: text(f[4])?,
                    });
                }
                "" if f.len() == 1 => {}
                tag => {
                    return Err(bad(format!(
                        "malformed or truncated `{tag}` record ({} fields)",
                        f.len()
                    )))
                }
            }
        }
        Ok(store)
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(f), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextExtractor;
    use crate::corpus::tests::ts;
    use proptest::prelude::*;

    fn stored(text: &str, h: u32, m: u32, label: Option<Label>) -> StoredPost {
        let ex = ContextExtractor::builtin();
        StoredPost {
            text: text.into(),
            timestamp: ts(h, m),
            label,
            context: ex.extract(text, &ts(h, m)),
        }
    }

    #[test]
    fn upsert_orders_and_deduplicates() {
        let mut s = ProfileStore::new();
        let posts = vec![
            stored("c", 9, 0, None),
            stored("a", 2, 0, None),
            stored("b", 5, 30, None),
        ];
        s.upsert_posts("u", posts.clone());
        let node = s.node("u").unwrap();
        let texts: Vec<_> = node.posts.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["a", "b", "c"]);
        let before = s.clone();
        s.upsert_posts("u", posts);
        assert_eq!(s, before);
    }

    #[test]
    fn night_ratio_and_lexicon_means() {
        let mut s = ProfileStore::new();
        s.upsert_posts(
            "u",
            [
                stored("sad sad", 1, 0, None),
                stored("lonely", 3, 0, None),
                stored("ok", 10, 0, None),
                stored("fine", 12, 0, None),
                stored("ok then", 20, 0, None),
            ],
        );
        let f = s.aggregate_features("u", &AggregationSettings::builtin()).unwrap();
        assert_eq!(f.night_ratio, 0.4);
        assert_eq!(f.avg_lex["anxious_dep"], 3.0 / 5.0);
        assert_eq!(f.avg_lex["lexicon_based"], 3.0 / 5.0);
        assert_eq!(f.avg_lex["junyeop_lex"], 3.0 / 5.0);
        assert!(!f.avg_lex.contains_key("junyeop_lex_sub"));
    }

    #[test]
    fn neutral_user_has_zero_features() {
        let mut s = ProfileStore::new();
        s.upsert_posts("u", [stored("table chair", 12, 0, None), stored("window", 13, 0, None)]);
        let f = s.aggregate_features("u", &AggregationSettings::builtin()).unwrap();
        assert!(f.avg_lex.values().all(|&v| v == 0.0));
        assert_eq!(f.avg_top_sent, 0.0);
        assert_eq!(f.night_ratio, 0.0);
    }

    #[test]
    fn top_word_sentiment_is_frequency_weighted() {
        let mut s = ProfileStore::new();
        s.upsert_posts(
            "u",
            [stored("good good the", 12, 0, None), stored("good bad", 13, 0, None)],
        );
        let mut settings = AggregationSettings::builtin();
        settings.top_k = 1;
        let f = s.aggregate_features("u", &settings).unwrap();
        assert_eq!(f.top_words, vec![("good".to_string(), 3)]);
        let sv = 3.0 * 1.9;
        assert!((f.avg_top_sent - sv / (sv * sv + 15.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unknown_user_errors() {
        let mut s = ProfileStore::new();
        assert!(matches!(
            s.aggregate_features("nobody", &AggregationSettings::builtin()),
            Err(Error::UnknownUser(_))
        ));
        assert!(s.annotate_persona("nobody", "positive", 1, ts(0, 0)).is_err());
    }

    #[test]
    fn annotations_append_and_do_not_touch_features() {
        let mut s = ProfileStore::new();
        s.upsert_posts("u", [stored("sad", 2, 0, Some(Label::Negative))]);
        let settings = AggregationSettings::builtin();
        let before = s.aggregate_features("u", &settings).unwrap();
        s.annotate_persona("u", "positive", 1, ts(4, 0)).unwrap();
        s.annotate_persona("u", "negative", 2, ts(5, 0)).unwrap();
        s.annotate_persona("u", "negative", 2, ts(5, 0)).unwrap();
        let hist = &s.node("u").unwrap().persona_annotations;
        assert_eq!(hist.len(), 3);
        assert_eq!((hist[0].cycle_id, hist[1].cycle_id), (1, 2));
        assert_eq!(s.cycle(), 2);
        assert_eq!(s.aggregate_features("u", &settings).unwrap(), before);
    }

    #[test]
    fn save_load_roundtrip() {
        let mut s = ProfileStore::new();
        s.metadata.insert("config_hash".into(), "abc".into());
        s.upsert_posts("u\t1", [stored("sad\ttab", 2, 0, Some(Label::Negative)), stored("ok", 9, 0, None)]);
        s.upsert_posts("v", [stored("good", 4, 0, Some(Label::Positive))]);
        s.annotate_persona("u\t1", "negative", 1, ts(23, 0)).unwrap();
        let mut buf = Vec::new();
        s.save(&mut buf).unwrap();
        let back = ProfileStore::load(&buf[..], Path::new("s")).unwrap();
        assert_eq!(back, s);

        let mut empty = Vec::new();
        ProfileStore::new().save(&mut empty).unwrap();
        assert_eq!(String::from_utf8(empty.clone()).unwrap().lines().count(), 1);
        assert_eq!(ProfileStore::load(&empty[..], Path::new("e")).unwrap(), ProfileStore::new());
    }

    #[test]
    fn truncated_file_reports_line() {
        let mut s = ProfileStore::new();
        s.upsert_posts("u", [stored("a", 1, 0, None), stored("b", 2, 0, None)]);
        let mut buf = Vec::new();
        s.save(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut = &text[..text.len() - 10];
        let err = ProfileStore::load(cut.as_bytes(), Path::new("store.tsv")).unwrap_err();
        assert!(err.to_string().starts_with("store.tsv:3:"), "{err}");
        assert!(ProfileStore::load("".as_bytes(), Path::new("x")).is_err());
    }

    fn post_set() -> impl Strategy<Value = Vec<(String, u32, u32)>> {
        proptest::collection::vec(("(sad|good|tired|ok|lonely|love) (sad|not|fine)", 0u32..24, 0u32..60), 1..10)
    }

    proptest! {
        #[test]
        fn aggregation_ignores_upsert_order(posts in post_set(), seed in any::<u64>()) {
            let settings = AggregationSettings::builtin();
            let items: Vec<StoredPost> = posts.iter().map(|(t, h, m)| stored(t, *h, *m, None)).collect();
            let mut a = ProfileStore::new();
            a.upsert_posts("u", items.clone());
            let mut shuffled = items.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut b = ProfileStore::new();
            for p in shuffled {
                b.upsert_posts("u", [p]);
            }
            prop_assert_eq!(a.aggregate_features("u", &settings).unwrap(), b.aggregate_features("u", &settings).unwrap());
        }

        #[test]
        fn incremental_matches_scratch(posts in post_set(), extra in post_set()) {
            let settings = AggregationSettings::builtin();
            let mut inc = ProfileStore::new();
            inc.upsert_posts("u", posts.iter().map(|(t, h, m)| stored(t, *h, *m, None)));
            inc.upsert_posts("u", extra.iter().map(|(t, h, m)| stored(t, *h, *m, None)));
            let mut scratch = ProfileStore::new();
            scratch.upsert_posts("u", posts.iter().chain(&extra).map(|(t, h, m)| stored(t, *h, *m, None)));
            let f = inc.aggregate_features("u", &settings).unwrap();
            prop_assert_eq!(&f, &scratch.aggregate_features("u", &settings).unwrap());
            // independent night-ratio count over the deduplicated post set
            let uniq: BTreeSet<(u32, u32, &str)> = posts.iter().chain(&extra).map(|(t, h, m)| (*h, *m, t.as_str())).collect();
            let night = uniq.iter().filter(|(h, _, _)| (1..6).contains(h)).count();
            prop_assert_eq!(f.night_ratio, night as f64 / uniq.len() as f64);
        }
    }
}
