//! Seeded generator of Sentiment140-format corpora with controllable label
//! signal placement.
//!
//! Every user has a class, and each of the user's posts carries that class
//! as its label (optionally flipped with probability `label_noise`). A post
//! carries its label in one of two places:
//!
//! * text: with probability `1 − context_share` the post contains one or two
//!   cue words from the class's cue pool;
//! * context: the remaining posts hold only class-independent filler, and
//!   their class is recoverable only from the user's posting hours when
//!   `night_rate` differs between the classes.
//!
//! Cue words are disjoint from the shipped lexicons and valence table, so
//! the aggregated profile features never see them. Filler occasionally
//! includes a mood word from the lexicons, drawn independently of the class.

use std::io::Write;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::LateNightWindow;
use crate::corpus::{Corpus, Label, RawPost};
use crate::{Error, Result};

pub const NEGATIVE_CUES: [&str; 8] = [
    "deadline", "traffic", "homework", "laundry", "invoice", "dentist", "queue", "overtime",
];
pub const POSITIVE_CUES: [&str; 8] = [
    "beach", "pizza", "concert", "holiday", "puppy", "picnic", "garden", "festival",
];
pub const FILLER: [&str; 24] = [
    "today", "went", "with", "my", "some", "coffee", "bus", "phone", "music", "book", "work",
    "house", "just", "then", "town", "dinner", "walk", "movie", "car", "class", "weekend",
    "morning", "street", "news",
];
pub const MOOD_WORDS: [&str; 8] = ["happy", "sad", "tired", "love", "alone", "fine", "hope", "bored"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub min_posts: usize,
    pub max_posts: usize,
    /// Share of posts whose label is recoverable only from context.
    pub context_share: f64,
    /// Probability that a post falls in the late-night window, by class
    /// `[negative, positive]`.
    pub night_rate: [f64; 2],
    /// Probability of flipping a post's label.
    pub label_noise: f64,
    /// Probability that a post includes one mood word.
    pub mood_rate: f64,
    pub filler_words: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::context_mix(0)
    }
}

impl SynthConfig {
    /// 40% of posts are labelled only through posting hours.
    pub fn context_mix(seed: u64) -> Self {
        Self {
            seed,
            n_users: 80,
            min_posts: 12,
            max_posts: 20,
            context_share: 0.4,
            night_rate: [0.75, 0.05],
            label_noise: 0.0,
            mood_rate: 0.3,
            filler_words: (3, 7),
        }
    }

    /// All label signal in the text; posting hours are class-independent
    /// and 10% of labels are flipped.
    pub fn text_only(seed: u64) -> Self {
        Self {
            context_share: 0.0,
            night_rate: [0.3, 0.3],
            label_noise: 0.1,
            ..Self::context_mix(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = |v: f64| (0.0..=1.0).contains(&v);
        if self.n_users < 2 || self.min_posts == 0 || self.min_posts > self.max_posts {
            return Err(Error::InvalidArgument(
                "need n_users >= 2 and 1 <= min_posts <= max_posts".into(),
            ));
        }
        if !(p(self.context_share) && p(self.night_rate[0]) && p(self.night_rate[1]) && p(self.label_noise) && p(self.mood_rate)) {
            return Err(Error::InvalidArgument("rates must lie in [0, 1]".into()));
        }
        if self.filler_words.0 == 0 || self.filler_words.0 > self.filler_words.1 {
            return Err(Error::InvalidArgument("filler_words must be a range (lo, hi) with 1 <= lo <= hi".into()));
        }
        Ok(())
    }
}

fn random_time<R: Rng>(rng: &mut R, day: i64, late: bool, window: &LateNightWindow) -> NaiveDateTime {
    let base = NaiveDate::from_ymd_opt(2009, 4, 6)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time");
    let hours: Vec<u32> = (0..24).filter(|&h| window.contains_hour(h) == late).collect();
    let hour = *hours.choose(rng).expect("window leaves hours on both sides");
    base + Duration::days(day) + Duration::hours(hour as i64) + Duration::minutes(rng.gen_range(0..60)) + Duration::seconds(rng.gen_range(0..60))
}

/// Generates the corpus. Users alternate between the two classes, so the
/// classes are balanced by user.
pub fn generate(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let window = LateNightWindow::default();
    let mut corpus = Corpus::default();
    for u in 0..cfg.n_users {
        let class = if u % 2 == 0 { Label::Negative } else { Label::Positive };
        let user_id = format!("user{u:04}");
        let n_posts = rng.gen_range(cfg.min_posts..=cfg.max_posts);
        for i in 0..n_posts {
            let mut words: Vec<&str> = (0..rng.gen_range(cfg.filler_words.0..=cfg.filler_words.1))
                .map(|_| *FILLER.choose(&mut rng).expect("non-empty"))
                .collect();
            if rng.gen_bool(cfg.mood_rate) {
                words.push(MOOD_WORDS.choose(&mut rng).expect("non-empty"));
            }
            if !rng.gen_bool(cfg.context_share) {
                let pool = match class {
                    Label::Negative => &NEGATIVE_CUES,
                    Label::Positive => &POSITIVE_CUES,
                };
                for _ in 0..rng.gen_range(1..=2) {
                    words.push(pool.choose(&mut rng).expect("non-empty"));
                }
            }
            words.shuffle(&mut rng);
            let late = rng.gen_bool(cfg.night_rate[class.index()]);
            let timestamp = random_time(&mut rng, i as i64, late, &window);
            debug_assert_eq!(window.contains_hour(timestamp.hour()), late);
            let label = if rng.gen_bool(cfg.label_noise) { class.other() } else { class };
            corpus.push(RawPost {
                user_id: user_id.clone(),
                text: words.join(" "),
                timestamp,
                label,
            });
        }
    }
    Ok(corpus)
}

/// Writes the six-column Sentiment140 layout:
/// `"label","id","date","query","user","text"` with labels `0`/`4`.
pub fn write_sentiment140<W: Write>(corpus: &Corpus, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .quote_style(csv::QuoteStyle::Always)
        .from_writer(out);
    for (i, p) in corpus.posts().iter().enumerate() {
        let label = match p.label {
            Label::Negative => "0",
            Label::Positive => "4",
        };
        let id = (1_467_810_000 + i).to_string();
        let date = p.timestamp.format("%a %b %d %H:%M:%S PDT %Y").to_string();
        w.write_record([label, &id, &date, "NO_QUERY", &p.user_id, &p.text])
            .map_err(|e| Error::Source(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{Lexicon, ValenceLexicon};
    use crate::corpus::{parse_corpus, CorpusSchema};

    #[test]
    fn cues_avoid_lexicons() {
        let val = ValenceLexicon::builtin();
        let lexes = [Lexicon::builtin_primary(), Lexicon::builtin_secondary()];
        let mut src = Vec::new();
        for l in &lexes {
            let dir = env!("CARGO_MANIFEST_DIR");
            let file = if l.name() == "lexicon_based" { "lexicon_based.tsv" } else { "junyeop_lex.tsv" };
            src.push(std::fs::read_to_string(format!("{dir}/data/{file}")).unwrap());
        }
        for w in NEGATIVE_CUES.iter().chain(&POSITIVE_CUES).chain(&FILLER) {
            assert!(val.get(w).is_none(), "{w} has a valence");
            for s in &src {
                assert!(!s.lines().any(|l| l.split('\t').nth(1) == Some(w)), "{w} is a lexicon word");
            }
        }
    }

    #[test]
    fn generated_corpus_roundtrips_through_the_parser() {
        let cfg = SynthConfig {
            n_users: 6,
            ..SynthConfig::context_mix(3)
        };
        let c = generate(&cfg).unwrap();
        assert_eq!(c.n_users(), 6);
        assert!(c.users().all(|u| c.user_post_count(u) >= 12));
        let mut buf = Vec::new();
        write_sentiment140(&c, &mut buf).unwrap();
        let (back, stats) = parse_corpus(&buf[..], &CorpusSchema::sentiment140()).unwrap();
        assert_eq!(stats.accepted, c.len());
        assert_eq!(back.posts(), c.posts());
        assert_eq!(generate(&cfg).unwrap().posts(), c.posts());
    }

    #[test]
    fn signal_placement() {
        let c = generate(&SynthConfig::context_mix(1)).unwrap();
        let window = LateNightWindow::default();
        let mut cue_less = 0;
        for p in c.posts() {
            let has_cue = p.text.split(' ').any(|w| NEGATIVE_CUES.contains(&w) || POSITIVE_CUES.contains(&w));
            if !has_cue {
                cue_less += 1;
            }
            if p.text.split(' ').any(|w| NEGATIVE_CUES.contains(&w)) {
                assert_eq!(p.label, Label::Negative);
            }
        }
        let share = cue_less as f64 / c.len() as f64;
        assert!((share - 0.4).abs() < 0.05, "{share}");
        let night = |l: Label| {
            let posts: Vec<_> = c.posts().iter().filter(|p| p.label == l).collect();
            posts.iter().filter(|p| window.contains_hour(p.timestamp.hour())).count() as f64 / posts.len() as f64
        };
        assert!(night(Label::Negative) > 0.6 && night(Label::Positive) < 0.15);
        assert!(SynthConfig { min_posts: 5, max_posts: 4, ..SynthConfig::default() }.validate().is_err());
    }
}
