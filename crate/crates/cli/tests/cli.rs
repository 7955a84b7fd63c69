use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

fn persona(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_persona"))
        .args(args)
        .env_remove("PERSONA_WORKDIR")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The fixture config with absolute paths, a private workdir and `edit`
/// applied to its text.
fn config(dir: &TempDir, corpus: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let fx = fixtures();
    let src = std::fs::read_to_string(fx.join("pipeline.toml")).unwrap();
    let src = src
        .replace("\"synthetic_2k.csv\"", &format!("{:?}", corpus))
        .replace("workdir = \"work\"", &format!("workdir = {:?}", dir.path().join("work")))
        .replace("\"../crates/", &format!("\"{}/../crates/", fx.display()));
    let path = dir.path().join("persona.toml");
    std::fs::write(&path, edit(src)).unwrap();
    path
}

fn fixture_config(dir: &TempDir, edit: impl Fn(String) -> String) -> PathBuf {
    config(dir, &fixtures().join("synthetic_2k.csv"), edit)
}

fn run(stage: &str, cfg: &Path) -> Output {
    persona(&[stage, "--config", cfg.to_str().unwrap()])
}

#[test]
fn validate_accepts_the_fixture() {
    let o = persona(&["validate", "--config", fixtures().join("pipeline.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok: config_hash="));
}

#[test]
fn missing_lexicon_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture_config(&dir, |s| s.replace("lexicon_based.tsv", "no_such_lexicon.tsv"));
    let o = run("validate", &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("paths.lexicon_primary"), "{}", stderr(&o));
}

#[test]
fn out_of_range_threshold_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture_config(&dir, |s| s.replace("threshold = 0.05", "threshold = 1.5"));
    let o = run("ingest", &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("balance.threshold"), "{}", stderr(&o));
    assert!(!dir.path().join("work").exists());
}

#[test]
fn unknown_key_is_reported_with_its_section() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture_config(&dir, |s| s.replace("[filter]\n", "[filter]\nmin_post = 3\n"));
    let o = run("validate", &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("filter"), "{}", stderr(&o));
}

#[test]
fn explain_before_train_reports_the_missing_artifact() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture_config(&dir, |s| s);
    let o = run("explain", &cfg);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing artifact"), "{}", stderr(&o));
}

#[test]
fn workdir_env_overrides_config() {
    let dir = TempDir::new().unwrap();
    let other = TempDir::new().unwrap();
    let cfg = fixture_config(&dir, |s| s);
    let o = Command::new(env!("CARGO_BIN_EXE_persona"))
        .args(["ingest", "--config", cfg.to_str().unwrap()])
        .env("PERSONA_WORKDIR", other.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(other.path().join("corpus.tsv").exists());
    assert!(!dir.path().join("work").exists());
}

#[test]
fn report_refuses_artifacts_from_another_config() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("small.csv");
    let o = persona(&[
        "synth", "--seed", "5", "--users", "40", "--min-posts", "12", "--max-posts", "20", "-o",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cfg = config(&dir, &corpus, |s| s.replace("epochs = 8", "epochs = 1"));
    for stage in ["ingest", "featurize", "train", "eval"] {
        let o = run(stage, &cfg);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }
    let stamp = std::fs::read_to_string(dir.path().join("work/history.csv")).unwrap();
    assert!(stamp.starts_with("# config_hash="), "{stamp}");

    let o = run("report", &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let changed = config(&dir, &corpus, |s| s.replace("epochs = 8", "epochs = 1").replace("seed = 7", "seed = 8"));
    let o = run("report", &changed);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("config_hash"), "{}", stderr(&o));
}
