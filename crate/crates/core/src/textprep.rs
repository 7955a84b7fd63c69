//! Text normalization, vocabulary building and fixed-length tokenization.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::escape::{escape_field, unescape_field};
use crate::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";

/// Negations whose apostrophe has been dropped; each becomes `not`.
const NEGATIONS: &[&str] = &[
    "aint", "arent", "cant", "cannot", "couldnt", "darent", "didnt", "doesnt", "dont", "hadnt",
    "hasnt", "havent", "isnt", "mightnt", "mustnt", "neednt", "shant", "shouldnt", "wasnt",
    "werent", "wont", "wouldnt",
];

/// Emoticon and slang expansions, loaded from `token<TAB>replacement` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpansionTable {
    map: HashMap<String, String>,
}

impl ExpansionTable {
    /// The table shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../data/expansions.tsv"), Path::new("expansions.tsv"))
            .expect("builtin expansion table is valid")
    }

    pub fn parse(src: &str, path: &Path) -> Result<Self> {
        Self::from_lines(src.as_bytes(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_lines(std::io::BufReader::new(f), path)
    }

    fn from_lines<R: BufRead>(input: R, path: &Path) -> Result<Self> {
        let mut map = HashMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, i + 1, "expected token<TAB>replacement"))?;
            let key = key.trim().to_lowercase();
            if key.is_empty() {
                return Err(Error::format(path, i + 1, "empty token"));
            }
            map.insert(key, value.trim().to_lowercase());
        }
        let table = ExpansionTable { map };
        // Replacements must already be normal form, or normalization would
        // not be idempotent.
        for (k, v) in &table.map {
            let plain = normalize_text(v, &ExpansionTable::default());
            if plain != *v || v.split(' ').any(|w| table.map.contains_key(w)) {
                return Err(Error::format(
                    path,
                    0,
                    format!("replacement for `{k}` is not normalized plain words: `{v}`"),
                ));
            }
        }
        Ok(table)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let src: String = pairs
            .into_iter()
            .map(|(k, v)| format!("{k}\t{v}\n"))
            .collect();
        Self::parse(&src, Path::new("<pairs>"))
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.map.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

fn push_word(out: &mut Vec<String>, word: &str, table: &ExpansionTable) {
    if word.chars().all(char::is_numeric) {
        return;
    }
    if let Some(rep) = table.get(word) {
        out.extend(rep.split(' ').filter(|w| !w.is_empty()).map(str::to_string));
    } else if NEGATIONS.contains(&word) {
        out.push("not".to_string());
    } else {
        out.push(word.to_string());
    }
}

/// Lowercases, drops URLs, mentions and standalone numbers, rewrites
/// contracted negations to `not`, expands table entries and strips
/// punctuation. Idempotent.
pub fn normalize_text(raw: &str, table: &ExpansionTable) -> String {
    let lowered = raw.to_lowercase();
    let mut words = Vec::new();
    for token in lowered.split_whitespace() {
        if is_url(token) || token.starts_with('@') {
            continue;
        }
        if let Some(rep) = table.get(token) {
            words.extend(rep.split(' ').filter(|w| !w.is_empty()).map(str::to_string));
            continue;
        }
        let cleaned: String = token
            .chars()
            .filter(|&c| c != '\'' && c != '\u{2019}')
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        for word in cleaned.split_whitespace() {
            push_word(&mut words, word, table);
        }
    }
    words.join(" ")
}

/// Optional rule-based suffix stripper for the classic baselines.
pub fn stem(word: &str) -> &str {
    const SUFFIXES: &[&str] = &["ingly", "edly", "ing", "ness", "ment", "ies", "ed", "ly", "es", "s"];
    for suf in SUFFIXES {
        if let Some(base) = word.strip_suffix(suf) {
            if base.chars().count() >= 3 {
                return base;
            }
        }
    }
    word
}

/// Dense token ids with `<pad>` = 0 and `<unk>` = 1 reserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    max_size: usize,
}

impl Vocabulary {
    /// Keeps the `max_size − 2` most frequent tokens of the training texts,
    /// ties broken lexicographically.
    pub fn build<'a, I>(training_texts: I, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary max_size {max_size} < 2 reserved tokens"
            )));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for text in training_texts {
            for w in text.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| *w != PAD_TOKEN && *w != OOV_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_size - 2);
        let tokens = [PAD_TOKEN, OOV_TOKEN]
            .into_iter()
            .chain(ranked.into_iter().map(|(w, _)| w))
            .map(str::to_string)
            .collect();
        Ok(Self::from_tokens(tokens, max_size))
    }

    fn from_tokens(tokens: Vec<String>, max_size: usize) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            ids,
            max_size,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `token<TAB>id` lines.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{}\t{i}", escape_field(t))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, path: &Path) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.starts_with('#') && tokens.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::format(path, i + 1, m);
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| bad("expected token<TAB>id"))?;
            let id: usize = id.parse().map_err(|_| bad("id is not an integer"))?;
            if id != tokens.len() {
                return Err(bad("ids must be dense and ascending"));
            }
            tokens.push(unescape_field(tok).ok_or_else(|| bad("bad escape"))?);
        }
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != OOV_TOKEN {
            return Err(Error::format(path, 1, "reserved tokens missing"));
        }
        let n = tokens.len();
        Ok(Self::from_tokens(tokens, n))
    }
}

/// Post-padded token ids. Positions at or beyond `length` hold [`PAD_ID`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub length: usize,
}

impl TokenSequence {
    pub fn capacity(&self) -> usize {
        self.ids.len()
    }
}

pub fn tokenize_pad(text: &str, vocab: &Vocabulary, capacity: usize) -> TokenSequence {
    let mut ids: Vec<u32> = text
        .split_whitespace()
        .take(capacity)
        .map(|w| vocab.id(w))
        .collect();
    let length = ids.len();
    ids.resize(capacity, PAD_ID);
    TokenSequence { ids, length }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn smile() -> ExpansionTable {
        ExpansionTable::from_pairs([(":)", "smile")]).unwrap()
    }

    #[test]
    fn negation_is_emphasized() {
        let t = ExpansionTable::default();
        assert_eq!(normalize_text("I don't feel good", &t), "i not feel good");
        assert_eq!(normalize_text("It isn’t OK, I CANT", &t), "it not ok i not");
    }

    #[test]
    fn noise_removal_and_expansion() {
        assert_eq!(normalize_text("", &smile()), "");
        assert_eq!(normalize_text("great :) http://x.co 123!", &smile()), "great smile");
        assert_eq!(
            normalize_text("@bob   #Tired... www.a.com 4u", &smile()),
            "tired 4u"
        );
    }

    #[test]
    fn slang_inside_punctuation_is_expanded() {
        let t = ExpansionTable::from_pairs([("lol", "laughing"), ("u", "you")]).unwrap();
        assert_eq!(normalize_text("lol!! see u,later", &t), "laughing see you later");
    }

    #[test]
    fn table_rejects_unnormalized_replacements() {
        assert!(ExpansionTable::from_pairs([(":(", "sad!")]).is_err());
        assert!(ExpansionTable::from_pairs([("a", "b"), ("b", "c")]).is_err());
    }

    #[test]
    fn builtin_table_loads() {
        let t = ExpansionTable::builtin();
        assert!(t.len() >= 40);
        assert_eq!(normalize_text("omg :(", &t), "oh my god sad");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[ a-zA-Z0-9:;()'’!.,@#/<3-]{0,60}") {
            let t = ExpansionTable::builtin();
            let once = normalize_text(&s, &t);
            prop_assert_eq!(normalize_text(&once, &t), once.clone());
        }

        #[test]
        fn normalize_is_idempotent_on_any_unicode(s in "\\PC{0,40}") {
            let t = ExpansionTable::builtin();
            let once = normalize_text(&s, &t);
            prop_assert_eq!(normalize_text(&once, &t), once.clone());
        }

        #[test]
        fn tokenize_length(words in proptest::collection::vec("[a-c]{1,2}", 0..12), cap in 0usize..10) {
            let text = words.join(" ");
            let v = Vocabulary::build([text.as_str()], 5).unwrap();
            let seq = tokenize_pad(&text, &v, cap);
            prop_assert_eq!(seq.length, words.len().min(cap));
            prop_assert_eq!(seq.ids.len(), cap);
            prop_assert!(seq.ids[seq.length..].iter().all(|&i| i == PAD_ID));
        }
    }

    #[test]
    fn vocab_frequency_then_lexicographic() {
        let v = Vocabulary::build(["a b a", "b c"], 4).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.id("c"), OOV_ID);
        let reserved = Vocabulary::build(["a b a"], 2).unwrap();
        assert_eq!(reserved.len(), 2);
        assert!(Vocabulary::build(["a"], 1).is_err());
        let empty = Vocabulary::build(std::iter::empty(), 10).unwrap();
        assert_eq!(empty.len(), 2);
    }

    #[test]
    fn vocab_is_order_independent() {
        let a = Vocabulary::build(["x y", "y z z"], 10).unwrap();
        let b = Vocabulary::build(["z y", "z", "x y"], 10).unwrap();
        assert_eq!(a.tokens(), b.tokens());
    }

    #[test]
    fn vocab_export_roundtrip() {
        let v = Vocabulary::build(["a b a", "b c"], 10).unwrap();
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("<pad>\t0\n<unk>\t1\na\t2\n"));
        let back = Vocabulary::read(&buf[..], Path::new("v")).unwrap();
        assert_eq!(back.tokens(), v.tokens());
    }

    #[test]
    fn tokenize_examples() {
        let v = Vocabulary::build(["a a b"], 4).unwrap();
        assert_eq!((v.id("a"), v.id("b")), (2, 3));
        let s = tokenize_pad("a b", &v, 4);
        assert_eq!(s.ids, vec![2, 3, 0, 0]);
        assert_eq!(s.length, 2);
        let e = tokenize_pad("", &v, 3);
        assert_eq!((e.ids, e.length), (vec![0, 0, 0], 0));
        let u = tokenize_pad("zzz", &v, 3);
        assert_eq!((u.ids, u.length), (vec![1, 0, 0], 1));
    }

    #[test]
    fn stemmer_strips_common_suffixes() {
        assert_eq!(stem("feelings"), "feeling");
        assert_eq!(stem("crying"), "cry");
        assert_eq!(stem("is"), "is");
    }
}
