//! Raw post ingestion, per-user filtering, user-atomic class balancing and
//! user-disjoint splitting.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::escape::{escape_field, unescape_field};
use crate::{Error, Result};

/// Timestamp layout used by the canonical corpus file.
pub const ISO_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative = 0,
    Positive = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Negative, Label::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawPost {
    pub user_id: String,
    pub text: String,
    pub timestamp: NaiveDateTime,
    pub label: Label,
}

/// Ordered posts with a user index kept in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    posts: Vec<RawPost>,
    user_index: IndexMap<String, Vec<usize>>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, post: RawPost) {
        let idx = self.posts.len();
        self.user_index
            .entry(post.user_id.clone())
            .or_default()
            .push(idx);
        self.posts.push(post);
    }

    pub fn posts(&self) -> &[RawPost] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    /// User ids in first-seen order.
    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.user_index.keys().map(String::as_str)
    }

    pub fn contains_user(&self, user_id: &str) -> bool {
        self.user_index.contains_key(user_id)
    }

    pub fn user_posts<'a>(&'a self, user_id: &str) -> impl Iterator<Item = &'a RawPost> + 'a {
        self.user_index
            .get(user_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(move |&i| &self.posts[i])
    }

    pub fn user_post_count(&self, user_id: &str) -> usize {
        self.user_index.get(user_id).map_or(0, Vec::len)
    }

    /// `(negative, positive)` post counts.
    pub fn label_counts(&self) -> (usize, usize) {
        let pos = self
            .posts
            .iter()
            .filter(|p| p.label == Label::Positive)
            .count();
        (self.posts.len() - pos, pos)
    }

    /// Sub-corpus holding every post of the users accepted by `keep`, in
    /// original order.
    pub fn filter_users(&self, mut keep: impl FnMut(&str, usize) -> bool) -> Corpus {
        let kept: HashSet<&str> = self
            .user_index
            .iter()
            .filter(|(u, idx)| keep(u, idx.len()))
            .map(|(u, _)| u.as_str())
            .collect();
        self.posts
            .iter()
            .filter(|p| kept.contains(p.user_id.as_str()))
            .cloned()
            .collect()
    }

    pub fn select_users<S: AsRef<str>>(&self, users: &[S]) -> Corpus {
        let set: HashSet<&str> = users.iter().map(AsRef::as_ref).collect();
        self.filter_users(|u, _| set.contains(u))
    }

    /// Appends all posts of `other` after this corpus' posts.
    pub fn extend_from(&mut self, other: &Corpus) {
        for p in &other.posts {
            self.push(p.clone());
        }
    }
}

impl FromIterator<RawPost> for Corpus {
    fn from_iter<I: IntoIterator<Item = RawPost>>(iter: I) -> Self {
        let mut c = Corpus::new();
        for p in iter {
            c.push(p);
        }
        c
    }
}

/// Column mapping for delimiter-separated input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSchema {
    pub delimiter: char,
    pub has_header: bool,
    pub label_column: usize,
    pub user_column: usize,
    pub timestamp_column: usize,
    pub text_column: usize,
    /// Raw label string to class. Unmapped values (e.g. a neutral class) are
    /// skipped and counted.
    pub label_map: BTreeMap<String, Label>,
    /// chrono layouts tried in order.
    pub timestamp_formats: Vec<String>,
}

impl CorpusSchema {
    /// The Sentiment140 layout: `target,id,date,flag,user,text` with
    /// positive encoded as `4`.
    pub fn sentiment140() -> Self {
        Self {
            delimiter: ',',
            has_header: false,
            label_column: 0,
            user_column: 4,
            timestamp_column: 2,
            text_column: 5,
            label_map: BTreeMap::from([
                ("0".to_string(), Label::Negative),
                ("4".to_string(), Label::Positive),
            ]),
            timestamp_formats: vec![
                "%a %b %d %H:%M:%S %Z %Y".to_string(),
                ISO_FORMAT.to_string(),
                "%Y-%m-%d %H:%M:%S".to_string(),
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.delimiter.is_ascii() {
            return Err(Error::InvalidArgument(format!(
                "delimiter {:?} is not ASCII",
                self.delimiter
            )));
        }
        if self.timestamp_formats.is_empty() {
            return Err(Error::InvalidArgument("no timestamp formats".into()));
        }
        Ok(())
    }

    pub fn parse_timestamp(&self, raw: &str) -> Option<NaiveDateTime> {
        let raw = raw.trim();
        self.timestamp_formats
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
    }
}

impl Default for CorpusSchema {
    fn default() -> Self {
        Self::sentiment140()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub accepted: usize,
    pub skipped_label: usize,
    pub skipped_timestamp: usize,
    pub skipped_malformed: usize,
}

impl ParseStats {
    pub fn skipped(&self) -> usize {
        self.skipped_label + self.skipped_timestamp + self.skipped_malformed
    }
}

/// Parses delimiter-separated rows. Malformed rows are skipped and counted;
/// only a failing reader is fatal.
pub fn parse_corpus<R: Read>(source: R, schema: &CorpusSchema) -> Result<(Corpus, ParseStats)> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(schema.has_header)
        .flexible(true)
        .from_reader(source);
    let mut corpus = Corpus::new();
    let mut stats = ParseStats::default();
    let width = [
        schema.label_column,
        schema.user_column,
        schema.timestamp_column,
        schema.text_column,
    ]
    .into_iter()
    .max()
    .unwrap_or(0);

    for record in reader.byte_records() {
        let record = match record {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(Error::Source(e.to_string())),
            Err(_) => {
                stats.skipped_malformed += 1;
                continue;
            }
        };
        if record.len() <= width {
            stats.skipped_malformed += 1;
            continue;
        }
        let field = |i: usize| String::from_utf8_lossy(&record[i]).into_owned();
        let Some(&label) = schema.label_map.get(field(schema.label_column).trim()) else {
            stats.skipped_label += 1;
            continue;
        };
        let Some(timestamp) = schema.parse_timestamp(&field(schema.timestamp_column)) else {
            stats.skipped_timestamp += 1;
            continue;
        };
        let user_id = field(schema.user_column).trim().to_string();
        let text = field(schema.text_column);
        if user_id.is_empty() || text.trim().is_empty() {
            stats.skipped_malformed += 1;
            continue;
        }
        corpus.push(RawPost {
            user_id,
            text,
            timestamp,
            label,
        });
        stats.accepted += 1;
    }
    Ok((corpus, stats))
}

/// Keeps users with at least `min_posts` posts.
pub fn filter_min_posts(corpus: &Corpus, min_posts: usize) -> Corpus {
    corpus.filter_users(|_, n| n >= min_posts)
}

/// Splits into `(kept, excluded)` by the per-user post-count rule. The
/// excluded part is the default candidate pool for balancing.
pub fn partition_min_posts(corpus: &Corpus, min_posts: usize) -> (Corpus, Corpus) {
    (
        corpus.filter_users(|_, n| n >= min_posts),
        corpus.filter_users(|_, n| n < min_posts),
    )
}

/// `|pos − neg| / (pos + neg)`, zero for an empty set.
pub fn imbalance(neg: usize, pos: usize) -> f64 {
    let total = neg + pos;
    if total == 0 {
        0.0
    } else {
        neg.abs_diff(pos) as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceStep {
    pub user_id: String,
    /// Minority-class posts minus majority-class posts contributed by the user.
    pub net_minority: i64,
    pub neg_count: usize,
    pub pos_count: usize,
    pub imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub neg_count: usize,
    pub pos_count: usize,
    pub initial_imbalance: f64,
    pub imbalance: f64,
    pub threshold: f64,
    pub users_added: Vec<String>,
    pub posts_added: usize,
    /// Set when the imbalance is still above the threshold because no
    /// eligible candidate (or budget) remained.
    pub unmet: bool,
    pub steps: Vec<BalanceStep>,
}

/// Greedy user-atomic balancing.
///
/// While the imbalance exceeds `threshold`, adds the candidate user with the
/// largest net count of minority-class posts among those that strictly
/// shrink `|pos − neg|` and fit in the remaining post `budget`; ties go to
/// the lexicographically smallest user id.
pub fn balance_classes(
    core: &Corpus,
    candidates: &Corpus,
    threshold: f64,
    budget: Option<usize>,
) -> Result<(Corpus, BalanceReport)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "balance threshold {threshold} outside (0, 1]"
        )));
    }
    if let Some(u) = candidates.users().find(|u| core.contains_user(u)) {
        return Err(Error::InvalidArgument(format!(
            "candidate user `{u}` already in the core corpus"
        )));
    }

    // (user, neg, pos, total)
    let mut pool: Vec<(String, usize, usize)> = candidates
        .users()
        .map(|u| {
            let pos = candidates
                .user_posts(u)
                .filter(|p| p.label == Label::Positive)
                .count();
            (u.to_string(), candidates.user_post_count(u) - pos, pos)
        })
        .collect();
    pool.sort_by(|a, b| a.0.cmp(&b.0));

    let (mut neg, mut pos) = core.label_counts();
    let initial_imbalance = imbalance(neg, pos);
    let mut remaining = budget.unwrap_or(usize::MAX);
    let mut steps = Vec::new();
    let mut unmet = false;

    while imbalance(neg, pos) > threshold {
        let gap = neg.abs_diff(pos) as i64;
        let minority_is_pos = pos < neg;
        let best = pool
            .iter()
            .enumerate()
            .filter_map(|(i, (_, n, p))| {
                let (min, maj) = if minority_is_pos { (*p, *n) } else { (*n, *p) };
                let net = min as i64 - maj as i64;
                let size = n + p;
                (net > 0 && net < 2 * gap && size <= remaining).then_some((i, net))
            })
            // Pool is sorted by id, so the first maximum wins ties.
            .fold(None, |acc: Option<(usize, i64)>, (i, net)| match acc {
                Some((_, best)) if best >= net => acc,
                _ => Some((i, net)),
            });
        let Some((i, net)) = best else {
            unmet = true;
            break;
        };
        let (user, n, p) = pool.remove(i);
        neg += n;
        pos += p;
        remaining -= n + p;
        steps.push(BalanceStep {
            user_id: user,
            net_minority: net,
            neg_count: neg,
            pos_count: pos,
            imbalance: imbalance(neg, pos),
        });
    }

    let users_added: Vec<String> = steps.iter().map(|s| s.user_id.clone()).collect();
    let mut out = core.clone();
    for u in &users_added {
        for p in candidates.user_posts(u) {
            out.push(p.clone());
        }
    }
    let report = BalanceReport {
        neg_count: neg,
        pos_count: pos,
        initial_imbalance,
        imbalance: imbalance(neg, pos),
        threshold,
        posts_added: out.len() - core.len(),
        users_added,
        unmet,
        steps,
    };
    Ok((out, report))
}

fn seeded_user_shuffle(corpus_users: Vec<String>, seed: u64) -> Vec<String> {
    let mut users = corpus_users;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);
    users
}

/// Partitions users by a seeded shuffle into `(train, test)`.
pub fn split_by_user(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = corpus.n_users();
    if n < 2 {
        return Err(Error::TooFewUsers {
            needed: 2,
            found: n,
        });
    }
    let users = seeded_user_shuffle(corpus.users().map(str::to_string).collect(), seed);
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok((
        corpus.select_users(&users[..n_train]),
        corpus.select_users(&users[n_train..]),
    ))
}

/// Assigns users to `k` folds round-robin after a seeded shuffle. Fold sizes
/// differ by at most one.
pub fn user_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}; need k >= 2")));
    }
    let n = corpus.n_users();
    if n < k {
        return Err(Error::TooFewUsers { needed: k, found: n });
    }
    let users = seeded_user_shuffle(corpus.users().map(str::to_string).collect(), seed);
    let mut folds = vec![Vec::new(); k];
    for (i, u) in users.into_iter().enumerate() {
        folds[i % k].push(u);
    }
    Ok(folds)
}

/// Writes the canonical corpus: `user_id \t timestamp \t label \t text`,
/// preceded by an optional `#` metadata line.
pub fn write_canonical<W: Write>(corpus: &Corpus, mut out: W, meta: Option<&str>) -> Result<()> {
    if let Some(m) = meta {
        writeln!(out, "# {m}")?;
    }
    for p in corpus.posts() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            escape_field(&p.user_id),
            p.timestamp.format(ISO_FORMAT),
            p.label.index(),
            escape_field(&p.text)
        )?;
    }
    Ok(())
}

/// Reads a canonical corpus file. `#` lines before the first record are
/// metadata and skipped.
pub fn read_canonical<R: BufRead>(input: R, path: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::new();
    let mut in_header = true;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if in_header && line.starts_with('#') {
            continue;
        }
        in_header = false;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(Error::format(path, lineno, "expected 4 tab-separated fields"));
        }
        let bad = |m: &str| Error::format(path, lineno, m);
        let user_id = unescape_field(fields[0]).ok_or_else(|| bad("bad escape in user_id"))?;
        let timestamp = NaiveDateTime::parse_from_str(fields[1], ISO_FORMAT)
            .map_err(|e| bad(&format!("timestamp: {e}")))?;
        let label = fields[2]
            .parse::<usize>()
            .ok()
            .and_then(Label::from_index)
            .ok_or_else(|| bad("label must be 0 or 1"))?;
        let text = unescape_field(fields[3]).ok_or_else(|| bad("bad escape in text"))?;
        corpus.push(RawPost {
            user_id,
            text,
            timestamp,
            label,
        });
    }
    Ok(corpus)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use chrono::NaiveDate;

    pub(crate) fn ts(h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2009, 4, 6)
            .unwrap()
            .and_hms_opt(h, m, 0)
            .unwrap()
    }

    pub(crate) fn post(user: &str, label: Label, i: usize) -> RawPost {
        RawPost {
            user_id: user.to_string(),
            text: format!("post {i} by {user}"),
            timestamp: ts((i % 24) as u32, 0),
            label,
        }
    }

    /// Adds `neg` negative then `pos` positive posts for `user`.
    pub(crate) fn add_user(c: &mut Corpus, user: &str, neg: usize, pos: usize) {
        for i in 0..neg {
            c.push(post(user, Label::Negative, i));
        }
        for i in 0..pos {
            c.push(post(user, Label::Positive, neg + i));
        }
    }

    #[test]
    fn parses_sentiment140_rows() {
        let src = "\"0\",\"1\",\"Mon Apr 06 22:19:45 PDT 2009\",\"NO_QUERY\",\"alice\",\"so sad today\"\n\
                   \"4\",\"2\",\"Mon Apr 06 02:19:49 PDT 2009\",\"NO_QUERY\",\"bob\",\"great day, thanks\"\n\
                   \"4\",\"3\",\"Tue Apr 07 13:00:00 PDT 2009\",\"NO_QUERY\",\"alice\",\"better now\"\n";
        let (c, stats) = parse_corpus(src.as_bytes(), &CorpusSchema::sentiment140()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(stats.skipped(), 0);
        assert_eq!(c.posts()[0].label, Label::Negative);
        assert_eq!(c.posts()[1].label, Label::Positive);
        assert_eq!(c.posts()[1].timestamp.format("%H:%M").to_string(), "02:19");
        assert_eq!(c.users().collect::<Vec<_>>(), vec!["alice", "bob"]);
        assert_eq!(c.user_post_count("alice"), 2);
    }

    #[test]
    fn empty_stream() {
        let (c, stats) = parse_corpus("".as_bytes(), &CorpusSchema::sentiment140()).unwrap();
        assert!(c.is_empty());
        assert_eq!(stats.skipped(), 0);
    }

    #[test]
    fn garbage_timestamp_and_neutral_label_are_counted() {
        let src = "0,1,Mon Apr 06 22:19:45 PDT 2009,q,u1,a\n\
                   0,2,not a date,q,u1,b\n\
                   4,3,2009-04-06 10:00:00,q,u2,c\n\
                   4,4,2009-04-06T11:00:00,q,u2,d\n\
                   0,5,Mon Apr 06 23:19:45 PDT 2009,q,u3,e\n\
                   2,6,Mon Apr 06 23:19:45 PDT 2009,q,u3,neutral\n\
                   0,7,Mon Apr 06 23:19:45 PDT 2009,q\n\
                   0,8,Mon Apr 06 23:19:45 PDT 2009,q,u3,   \n";
        let (c, stats) = parse_corpus(src.as_bytes(), &CorpusSchema::sentiment140()).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(stats.skipped_timestamp, 1);
        assert_eq!(stats.skipped_label, 1);
        assert_eq!(stats.skipped_malformed, 2);
    }

    #[test]
    fn unreadable_source_is_fatal() {
        struct Broken;
        impl Read for Broken {
            fn read(&mut self, _: &mut [u8]) -> std::io::Result<usize> {
                Err(std::io::Error::other("boom"))
            }
        }
        assert!(matches!(
            parse_corpus(Broken, &CorpusSchema::sentiment140()),
            Err(Error::Source(_))
        ));
    }

    #[test]
    fn min_posts_filter() {
        let mut c = Corpus::new();
        add_user(&mut c, "A", 6, 6);
        add_user(&mut c, "B", 2, 1);
        let f = filter_min_posts(&c, 10);
        assert_eq!(f.users().collect::<Vec<_>>(), vec!["A"]);
        assert_eq!(f.len(), 12);
        assert_eq!(filter_min_posts(&c, 1), c);
        assert!(filter_min_posts(&c, 100).is_empty());
        let (kept, excluded) = partition_min_posts(&c, 10);
        assert_eq!(kept.len() + excluded.len(), c.len());
        assert_eq!(excluded.users().collect::<Vec<_>>(), vec!["B"]);
    }

    #[test]
    fn balance_adds_best_minority_user_and_flags_shortfall() {
        let mut core = Corpus::new();
        add_user(&mut core, "c1", 30, 20);
        add_user(&mut core, "c2", 30, 20);
        let mut cand = Corpus::new();
        add_user(&mut cand, "X", 1, 15);
        let (out, report) = balance_classes(&core, &cand, 0.05, None).unwrap();
        assert_eq!(report.users_added, vec!["X"]);
        assert_eq!((report.neg_count, report.pos_count), (61, 55));
        assert!((report.imbalance - 6.0 / 116.0).abs() < 1e-12);
        assert!(report.unmet);
        assert_eq!(out.len(), 116);
    }

    #[test]
    fn balanced_core_or_vacuous_threshold_is_unchanged() {
        let mut core = Corpus::new();
        add_user(&mut core, "c1", 50, 50);
        let mut cand = Corpus::new();
        add_user(&mut cand, "X", 0, 5);
        let (out, r) = balance_classes(&core, &cand, 0.05, None).unwrap();
        assert_eq!(out, core);
        assert!(r.users_added.is_empty() && !r.unmet);

        let mut skewed = Corpus::new();
        add_user(&mut skewed, "c1", 90, 10);
        let (out, r) = balance_classes(&skewed, &cand, 1.0, None).unwrap();
        assert_eq!(out, skewed);
        assert!(r.users_added.is_empty());
    }

    #[test]
    fn balance_rejects_overlap_and_bad_threshold() {
        let mut core = Corpus::new();
        add_user(&mut core, "c1", 5, 1);
        assert!(balance_classes(&core, &core, 0.05, None).is_err());
        assert!(balance_classes(&core, &Corpus::new(), 0.0, None).is_err());
    }

    #[test]
    fn balance_respects_budget() {
        let mut core = Corpus::new();
        add_user(&mut core, "c1", 20, 10);
        let mut cand = Corpus::new();
        add_user(&mut cand, "big", 0, 8);
        add_user(&mut cand, "small", 0, 3);
        let (_, r) = balance_classes(&core, &cand, 0.05, Some(5)).unwrap();
        assert_eq!(r.users_added, vec!["small"]);
        assert_eq!(r.posts_added, 3);
        assert!(r.unmet);
    }

    #[test]
    fn split_is_user_disjoint_and_deterministic() {
        let mut c = Corpus::new();
        for u in 0..10 {
            add_user(&mut c, &format!("u{u}"), 2, 1);
        }
        let (tr, te) = split_by_user(&c, 0.8, 7).unwrap();
        assert_eq!(tr.n_users(), 8);
        assert_eq!(te.n_users(), 2);
        assert!(tr.users().all(|u| !te.contains_user(u)));
        assert_eq!(tr.len() + te.len(), c.len());
        let (tr2, te2) = split_by_user(&c, 0.8, 7).unwrap();
        assert_eq!((tr, te), (tr2, te2));
    }

    #[test]
    fn split_needs_two_users() {
        let mut c = Corpus::new();
        add_user(&mut c, "solo", 3, 3);
        assert!(matches!(
            split_by_user(&c, 0.5, 1),
            Err(Error::TooFewUsers { .. })
        ));
    }

    #[test]
    fn canonical_roundtrip_with_escapes() {
        let mut c = Corpus::new();
        c.push(RawPost {
            user_id: "we\tird".into(),
            text: "line one\nline\\two\ttab".into(),
            timestamp: ts(3, 15),
            label: Label::Positive,
        });
        add_user(&mut c, "plain", 1, 1);
        let mut buf = Vec::new();
        write_canonical(&c, &mut buf, Some("config_hash=abc seed=1")).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        let back = read_canonical(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn canonical_reader_names_bad_line() {
        let data = "u\t2009-04-06T01:00:00\t0\thello\nu\t2009-04-06T01:00:00\t7\tbad\n";
        let err = read_canonical(data.as_bytes(), Path::new("c.tsv")).unwrap_err();
        assert!(err.to_string().starts_with("c.tsv:2:"), "{err}");
    }
}
