//! Artifact file names, provenance stamps and the row file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use persona_core::corpus::Label;
use persona_core::escape::{escape_field, unescape_field};
use persona_core::tabular::TabularVector;
use persona_core::textprep::{TokenSequence, PAD_ID};
use persona_core::train::Example;
use persona_core::{Dataset64, Error, Scalar};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CORPUS: &str = "corpus.tsv";
pub const BALANCE: &str = "balance.json";
pub const PROFILES_TRAIN: &str = "profiles_train.txt";
pub const PROFILES_VAL: &str = "profiles_val.txt";
pub const PROFILES_TEST: &str = "profiles_test.txt";
pub const VOCAB: &str = "vocab.tsv";
pub const TRANSFORM: &str = "transform.tsv";
pub const ROWS_TRAIN: &str = "rows_train.tsv";
pub const ROWS_VAL: &str = "rows_val.tsv";
pub const ROWS_TEST: &str = "rows_test.tsv";
pub const CHECKPOINT: &str = "model.ckpt";
pub const HISTORY: &str = "history.csv";
pub const METRICS: &str = "metrics.json";
pub const PERSONAS: &str = "profiles_test_annotated.txt";
pub const ATTRIBUTIONS: &str = "attributions.json";
pub const SHAP_SUMMARY: &str = "shap_summary.csv";
pub const CORRELATION: &str = "correlation.csv";
pub const ABLATION: &str = "ablation.csv";
pub const REPORT: &str = "report.json";

/// Provenance block at the top of every JSON artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
}

/// Fails with the missing-artifact error unless `path` exists.
pub fn require(path: &Path) -> Result<&Path, CliError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Missing(path.to_path_buf()))
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    let f = File::open(require(path)?).map_err(|e| CliError::io("read", path, e))?;
    Ok(BufReader::new(f))
}

/// Writes through a buffered file, then flushes.
pub fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> persona_core::Result<()>,
) -> persona_core::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> persona_core::Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// `(config_hash, seed)` from an artifact: the `meta` object of a JSON file,
/// or a `config_hash=` / `seed=` pair within the first lines of a text file.
pub fn read_stamp(path: &Path) -> Result<(String, u64), CliError> {
    let text = std::fs::read_to_string(require(path)?).map_err(|e| CliError::io("read", path, e))?;
    let bad = || CliError::Runtime {
        stage: "report",
        message: format!("{}: no config_hash stamp", path.display()),
    };
    if text.trim_start().starts_with('{') {
        #[derive(Deserialize)]
        struct Stamped {
            meta: Meta,
        }
        let s: Stamped = serde_json::from_str(&text).map_err(|_| bad())?;
        return Ok((s.meta.config_hash, s.meta.seed));
    }
    for line in text.lines().take(3) {
        let mut hash = None;
        let mut seed = None;
        for tok in line.split(|c: char| c.is_whitespace()) {
            if let Some(h) = tok.strip_prefix("config_hash=") {
                hash = Some(h.to_string());
            } else if let Some(s) = tok.strip_prefix("seed=") {
                seed = s.parse().ok();
            }
        }
        if let (Some(h), Some(s)) = (hash, seed) {
            return Ok((h, s));
        }
    }
    Err(bad())
}

pub struct Workdir(pub PathBuf);

impl Workdir {
    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

const ROW_HEADER: &str = "user_id\tlabel\tlength\ttokens\tc\tn\ttext";

fn join<D: std::fmt::Display>(xs: impl IntoIterator<Item = D>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// One example per line; token ids stop at the sequence length and the
/// padding is restored on read.
pub fn write_rows<W: Write>(data: &Dataset64, mut out: W, stamp: &str) -> persona_core::Result<()> {
    writeln!(out, "# {stamp}")?;
    writeln!(out, "{ROW_HEADER}")?;
    for (e, text) in data.examples.iter().zip(&data.texts) {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            escape_field(&e.user_id),
            e.label.index(),
            e.tokens.length,
            join(&e.tokens.ids[..e.tokens.length]),
            join(&e.tab.c),
            join(&e.tab.n),
            escape_field(text)
        )?;
    }
    Ok(())
}

pub fn read_rows<R: BufRead>(input: R, path: &Path, capacity: usize) -> persona_core::Result<Dataset64> {
    let mut data = Dataset64 {
        examples: Vec::new(),
        texts: Vec::new(),
    };
    let mut header_seen = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let bad = |m: &str| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: m.to_string(),
        };
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !header_seen {
            if line != ROW_HEADER {
                return Err(bad("unexpected row header"));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 tab-separated fields"));
        }
        let nums = |s: &str| -> persona_core::Result<Vec<f64>> {
            s.split_whitespace()
                .map(|x| x.parse().map_err(|_| bad("bad number")))
                .collect()
        };
        let length: usize = f[2].parse().map_err(|_| bad("bad length"))?;
        let mut ids: Vec<u32> = f[3]
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| bad("bad token id")))
            .collect::<persona_core::Result<_>>()?;
        if ids.len() != length || length > capacity {
            return Err(bad("token count disagrees with length or capacity"));
        }
        ids.resize(capacity, PAD_ID);
        let label = f[1]
            .parse::<usize>()
            .ok()
            .and_then(Label::from_index)
            .ok_or_else(|| bad("label must be 0 or 1"))?;
        data.examples.push(Example {
            user_id: unescape_field(f[0]).ok_or_else(|| bad("bad escape"))?,
            tokens: TokenSequence { ids, length },
            tab: TabularVector {
                c: nums(f[4])?,
                n: nums(f[5])?,
            },
            label,
        });
        data.texts.push(unescape_field(f[6]).ok_or_else(|| bad("bad escape"))?);
    }
    Ok(data)
}

/// Column names of the flat `[c ‖ n]` vector: `name=category` for one-hot
/// columns, the feature name for numerical ones.
pub fn column_names<T: Scalar>(t: &persona_core::tabular::FittedTransform<T>) -> Vec<String> {
    t.categorical
        .iter()
        .flat_map(|c| c.categories.iter().map(move |k| format!("{}={k}", c.name)))
        .chain(t.numerical.iter().map(|n| n.name.clone()))
        .collect()
}
