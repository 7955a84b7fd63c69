//! The pipeline stages. Each reads only files written by earlier stages.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use persona_core::corpus::{
    balance_classes, parse_corpus, partition_min_posts, read_canonical, split_by_user, write_canonical, BalanceReport,
    Corpus, Label, ParseStats,
};
use persona_core::dataset::FeaturePipeline;
use persona_core::explain::{
    global_summary, groups_from_layout, model_output_fn, pearson_matrix, shapley_exact, write_correlation_csv,
    write_summary_csv, Background, GlobalSummary,
};
use persona_core::harness::{run_ablation, setup_predictions, train_transformer, write_ablation_csv, Learner, Setup};
use persona_core::model::{read_checkpoint, write_checkpoint, FusionMode};
use persona_core::profiles::ProfileStore;
use persona_core::textprep::Vocabulary;
use persona_core::train::{paired_significance, predict_labels, write_history, MetricsReport};
use persona_core::{Attribution64, Dataset64, FittedTransform64, ModelParams64};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifacts::{self as art, read_rows, write_file, write_json, write_rows, Meta, Workdir};
use crate::config::CandidatePool;
use crate::{CliError, LoadedConfig, StageResult};

pub const STAGES: [&str; 7] = ["ingest", "featurize", "train", "eval", "explain", "ablate", "report"];

fn workdir(lc: &LoadedConfig, stage: &'static str) -> Result<Workdir, CliError> {
    let w = lc.workdir();
    std::fs::create_dir_all(&w).map_err(|e| CliError::io(stage, &w, e))?;
    Ok(Workdir(w))
}

fn meta(lc: &LoadedConfig, stage: &str) -> Meta {
    Meta {
        stage: stage.to_string(),
        config_hash: lc.hash.clone(),
        seed: lc.config.seed,
    }
}

/// Warns when an input was written under a different config.
fn check_stamp(lc: &LoadedConfig, path: &Path) -> Result<(), CliError> {
    let (hash, _) = art::read_stamp(path)?;
    if hash != lc.hash {
        log::warn!("{} was written under config {hash}, current is {}", path.display(), lc.hash);
    }
    Ok(())
}

fn load_rows(lc: &LoadedConfig, path: &Path, stage: &'static str) -> Result<Dataset64, CliError> {
    check_stamp(lc, path)?;
    read_rows(art::open(path)?, path, lc.config.text.capacity).stage(stage)
}

fn load_model(lc: &LoadedConfig, w: &Workdir, stage: &'static str) -> Result<ModelParams64, CliError> {
    let p = w.path(art::CHECKPOINT);
    check_stamp(lc, &p)?;
    read_checkpoint(art::open(&p)?, &p).stage(stage)
}

fn load_transform(lc: &LoadedConfig, w: &Workdir, stage: &'static str) -> Result<FittedTransform64, CliError> {
    let p = w.path(art::TRANSFORM);
    check_stamp(lc, &p)?;
    FittedTransform64::read(art::open(&p)?, &p).stage(stage)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BalanceArtifact {
    pub meta: Meta,
    pub parse: ParseStats,
    pub users_parsed: usize,
    pub users_core: usize,
    pub users_candidates: usize,
    pub report: BalanceReport,
}

/// Raw file → canonical corpus, filtered and balanced.
pub fn ingest(lc: &LoadedConfig) -> Result<(), CliError> {
    const S: &str = "ingest";
    let c = &lc.config;
    let w = workdir(lc, S)?;
    let src = lc.resolve(&c.paths.corpus);
    let (corpus, stats) = parse_corpus(art::open(&src)?, &c.corpus).stage(S)?;
    let (core, excluded) = partition_min_posts(&corpus, c.filter.min_posts);
    let candidates = match c.balance.candidate_pool {
        CandidatePool::Excluded => excluded,
        CandidatePool::None => Corpus::new(),
    };
    let (balanced, report) = balance_classes(&core, &candidates, c.balance.threshold, c.balance.budget).stage(S)?;
    if report.unmet {
        log::warn!(
            "imbalance {:.4} still above {} after balancing",
            report.imbalance,
            report.threshold
        );
    }
    log::info!(
        "ingest: {} posts parsed, {} users kept, {} re-admitted, imbalance {:.4}",
        stats.accepted,
        core.n_users(),
        report.users_added.len(),
        report.imbalance
    );
    let stamp = lc.stamp();
    write_file(&w.path(art::CORPUS), |f| write_canonical(&balanced, f, Some(&stamp))).stage(S)?;
    write_json(
        &w.path(art::BALANCE),
        &BalanceArtifact {
            meta: meta(lc, S),
            parse: stats,
            users_parsed: corpus.n_users(),
            users_core: core.n_users(),
            users_candidates: candidates.n_users(),
            report,
        },
    )
    .stage(S)
}

/// Splits by user, profiles each split and fits the vocabulary and tabular
/// transform on the training users.
pub fn featurize(lc: &LoadedConfig) -> Result<(), CliError> {
    const S: &str = "featurize";
    let c = &lc.config;
    let w = workdir(lc, S)?;
    let cp = w.path(art::CORPUS);
    check_stamp(lc, &cp)?;
    let corpus = read_canonical(art::open(&cp)?, &cp).stage(S)?;
    let (train, test) = split_by_user(&corpus, c.split.train_fraction, c.seed).stage(S)?;
    let (train, val) = if c.split.validation_fraction > 0.0 {
        split_by_user(&train, 1.0 - c.split.validation_fraction, c.seed.wrapping_add(1)).stage(S)?
    } else {
        (train, Corpus::new())
    };
    log::info!(
        "featurize: {} train / {} validation / {} test users",
        train.n_users(),
        val.n_users(),
        test.n_users()
    );
    let pipe: FeaturePipeline = lc.feature_pipeline().stage(S)?;
    let stamp = lc.stamp();
    let splits = [
        ("train", &train, art::PROFILES_TRAIN, art::ROWS_TRAIN),
        ("validation", &val, art::PROFILES_VAL, art::ROWS_VAL),
        ("test", &test, art::PROFILES_TEST, art::ROWS_TEST),
    ];
    let prepared = splits
        .iter()
        .map(|(name, corpus, ..)| pipe.prepare(corpus, *name == "train"))
        .collect::<persona_core::Result<Vec<_>>>()
        .stage(S)?;
    let fitted = pipe.fit::<f64>(&prepared[0]).stage(S)?;

    write_file(&w.path(art::VOCAB), |f| {
        writeln!(f, "# {stamp}")?;
        fitted.vocab.write(f)
    })
    .stage(S)?;
    write_file(&w.path(art::TRANSFORM), |f| {
        writeln!(f, "# {stamp}")?;
        fitted.transform.write(f)
    })
    .stage(S)?;
    for ((name, _, profiles, rows), split) in splits.iter().zip(prepared) {
        let mut store = split.store.clone();
        store.metadata.insert("config_hash".into(), lc.hash.clone());
        store.metadata.insert("seed".into(), c.seed.to_string());
        store.metadata.insert("split".into(), name.to_string());
        store.save_path(&w.path(profiles)).stage(S)?;
        let data = pipe.dataset(&fitted, &split).stage(S)?;
        write_file(&w.path(rows), |f| write_rows(&data, f, &stamp)).stage(S)?;
    }
    Ok(())
}

pub fn train(lc: &LoadedConfig) -> Result<(), CliError> {
    const S: &str = "train";
    let w = workdir(lc, S)?;
    let vp = w.path(art::VOCAB);
    check_stamp(lc, &vp)?;
    let vocab = Vocabulary::read(art::open(&vp)?, &vp).stage(S)?;
    let train_set = load_rows(lc, &w.path(art::ROWS_TRAIN), S)?;
    let vpath = w.path(art::ROWS_VAL);
    let val_set = if vpath.is_file() {
        Some(load_rows(lc, &vpath, S)?).filter(|v| !v.is_empty())
    } else {
        None
    };
    let out = train_transformer(
        &train_set,
        val_set.as_ref(),
        vocab.len(),
        &lc.harness_config(),
        lc.config.train.mode,
        lc.config.seed,
    )
    .stage(S)?;
    if let Some(last) = out.history.last() {
        log::info!("train: final loss {:.5} after {} epochs", last.train_loss, last.epoch);
    }
    let stamp = lc.stamp();
    write_file(&w.path(art::CHECKPOINT), |f| write_checkpoint(&out.params, f, Some(&stamp))).stage(S)?;
    write_file(&w.path(art::HISTORY), |f| write_history(&out.history, f, Some(&stamp))).stage(S)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BaselineResult {
    pub setup: Setup,
    pub learner: Learner,
    pub report: MetricsReport,
    /// Paired bootstrap p-value of the macro-F1 difference to the model.
    pub p_value_vs_model: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub meta: Meta,
    pub mode: FusionMode,
    pub n_test: usize,
    pub model: MetricsReport,
    pub table: String,
    pub baselines: Vec<BaselineResult>,
}

/// Scores the checkpoint and the classical baselines on the test split and
/// writes per-user persona annotations into a copy of the test profiles.
pub fn eval(lc: &LoadedConfig) -> Result<(), CliError> {
    const S: &str = "eval";
    let c = &lc.config;
    let w = workdir(lc, S)?;
    let params = load_model(lc, &w, S)?;
    let test = load_rows(lc, &w.path(art::ROWS_TEST), S)?;
    let train_set = load_rows(lc, &w.path(art::ROWS_TRAIN), S)?;
    let pp = w.path(art::PROFILES_TEST);
    check_stamp(lc, &pp)?;
    let mut store = ProfileStore::load(art::open(&pp)?, &pp).stage(S)?;

    let truth = test.labels();
    let pred = predict_labels(&params, &test.examples, c.train.mode).stage(S)?;
    let report = MetricsReport::from_labels(&truth, &pred).stage(S)?;
    let hc = lc.harness_config();
    let mut baselines = Vec::new();
    for setup in Setup::ALL {
        for learner in [Learner::Nb, Learner::Dt] {
            let bp = setup_predictions(setup, learner, &train_set, &test, &hc, c.seed).stage(S)?;
            baselines.push(BaselineResult {
                setup,
                learner,
                report: MetricsReport::from_labels(&truth, &bp).stage(S)?,
                p_value_vs_model: paired_significance(&truth, &pred, &bp, c.baselines.bootstrap_resamples, c.seed)
                    .stage(S)?,
            });
        }
    }
    let table = report.render_table();
    println!("{table}");

    // Majority predicted class per user; ties read as negative.
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (e, p) in test.examples.iter().zip(&pred) {
        let v = votes.entry(e.user_id.as_str()).or_default();
        match p {
            Label::Negative => v.0 += 1,
            Label::Positive => v.1 += 1,
        }
    }
    let cycle = store.cycle() + 1;
    for (user, (neg, pos)) in votes {
        let persona = if pos > neg { Label::Positive } else { Label::Negative };
        let ts = store
            .node(user)
            .and_then(|n| n.posts.last())
            .map(|p| p.timestamp)
            .ok_or_else(|| CliError::Runtime {
                stage: S,
                message: format!("user `{user}` missing from {}", pp.display()),
            })?;
        store.annotate_persona(user, persona.name(), cycle, ts).stage(S)?;
    }
    store.metadata.insert("config_hash".into(), lc.hash.clone());
    store.metadata.insert("seed".into(), c.seed.to_string());
    store.save_path(&w.path(art::PERSONAS)).stage(S)?;

    write_json(
        &w.path(art::METRICS),
        &MetricsArtifact {
            meta: meta(lc, S),
            mode: c.train.mode,
            n_test: test.len(),
            model: report,
            table,
            baselines,
        },
    )
    .stage(S)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AttributionArtifact {
    pub meta: Meta,
    pub mode: FusionMode,
    pub features: Vec<String>,
    pub background_rows: usize,
    pub summary: GlobalSummary,
    pub attributions: Vec<Attribution64>,
}

/// Exact Shapley values for the first test rows, plus the feature/target
/// correlation matrix on the training rows.
pub fn explain(lc: &LoadedConfig) -> Result<(), CliError> {
    const S: &str = "explain";
    let c = &lc.config;
    let w = workdir(lc, S)?;
    let params = load_model(lc, &w, S)?;
    let transform = load_transform(lc, &w, S)?;
    let train_set = load_rows(lc, &w.path(art::ROWS_TRAIN), S)?;
    let test = load_rows(lc, &w.path(art::ROWS_TEST), S)?;

    let groups = groups_from_layout(&transform.layout(), transform.c_dim());
    let train_rows = train_set.tabular_rows();
    let background = Background::from_rows_capped(&train_rows, c.explain.background_cap, c.seed).stage(S)?;
    let attributions = test
        .examples
        .iter()
        .enumerate()
        .take(c.explain.instances)
        .map(|(i, e)| {
            let f = model_output_fn(&params, &e.tokens, c.train.mode)?;
            shapley_exact(f, &format!("{}#{i}", e.user_id), &e.tab.flat(), &background, &groups)
        })
        .collect::<persona_core::Result<Vec<_>>>()
        .stage(S)?;
    let summary = global_summary(&attributions).stage(S)?;

    let names = art::column_names(&transform);
    let target: Vec<f64> = train_set.labels().iter().map(|l| l.index() as f64).collect();
    let corr = pearson_matrix(&names, &train_rows, &target).stage(S)?;
    if !corr.constant.is_empty() {
        log::warn!("constant columns in the correlation matrix: {}", corr.constant.join(", "));
    }

    let stamp = lc.stamp();
    write_file(&w.path(art::SHAP_SUMMARY), |f| write_summary_csv(&summary, f, Some(&stamp))).stage(S)?;
    write_file(&w.path(art::CORRELATION), |f| write_correlation_csv(&corr, f, Some(&stamp))).stage(S)?;
    write_json(
        &w.path(art::ATTRIBUTIONS),
        &AttributionArtifact {
            meta: meta(lc, S),
            mode: c.train.mode,
            features: groups.iter().map(|g| g.name.clone()).collect(),
            background_rows: background.rows_used,
            summary,
            attributions,
        },
    )
    .stage(S)
}

pub fn ablate(lc: &LoadedConfig) -> Result<(), CliError> {
    const S: &str = "ablate";
    let w = workdir(lc, S)?;
    let transform = load_transform(lc, &w, S)?;
    let train_set = load_rows(lc, &w.path(art::ROWS_TRAIN), S)?;
    let test = load_rows(lc, &w.path(art::ROWS_TEST), S)?;
    let rows = run_ablation(
        &lc.ablation_plan(),
        &train_set,
        &test,
        &transform.layout(),
        &lc.harness_config(),
    )
    .stage(S)?;
    for r in &rows {
        println!("{:<24} f1 {:.4} ± {:.4}", r.variant, r.f1.mean, r.f1.std);
    }
    let stamp = lc.stamp();
    write_file(&w.path(art::ABLATION), |f| write_ablation_csv(&rows, f, Some(&stamp))).stage(S)
}

/// Artifacts the report needs, then the optional ones.
const REQUIRED: [&str; 13] = [
    art::CORPUS,
    art::BALANCE,
    art::PROFILES_TRAIN,
    art::PROFILES_VAL,
    art::PROFILES_TEST,
    art::VOCAB,
    art::TRANSFORM,
    art::ROWS_TRAIN,
    art::ROWS_VAL,
    art::ROWS_TEST,
    art::CHECKPOINT,
    art::HISTORY,
    art::METRICS,
];
const OPTIONAL: [&str; 5] = [
    art::PERSONAS,
    art::ATTRIBUTIONS,
    art::SHAP_SUMMARY,
    art::CORRELATION,
    art::ABLATION,
];

/// Data lines of a stamped CSV as header-keyed records.
fn csv_records(path: &Path) -> Result<Vec<BTreeMap<String, Value>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io("report", path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let header: Vec<&str> = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
    Ok(lines
        .map(|l| {
            header
                .iter()
                .zip(l.split(','))
                .map(|(k, v)| {
                    let value = match v.parse::<f64>() {
                        Ok(x) if x.is_finite() => json!(x),
                        _ => json!(v),
                    };
                    (k.to_string(), value)
                })
                .collect()
        })
        .collect())
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io("report", path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime {
        stage: "report",
        message: format!("{}: {e}", path.display()),
    })
}

/// Merges every artifact's summary into one JSON file. Refuses when any
/// artifact was written under another config hash.
pub fn report(lc: &LoadedConfig) -> Result<(), CliError> {
    const S: &str = "report";
    let w = workdir(lc, S)?;
    let mut present = Vec::new();
    for name in REQUIRED {
        art::require(&w.path(name))?;
        present.push(name);
    }
    present.extend(OPTIONAL.into_iter().filter(|n| w.path(n).is_file()));

    let mut stamps = BTreeMap::new();
    let mut mismatched = Vec::new();
    for name in &present {
        let (hash, seed) = art::read_stamp(&w.path(name))?;
        if hash != lc.hash {
            mismatched.push(format!("{name} (config_hash={hash})"));
        }
        stamps.insert(name.to_string(), json!({ "config_hash": hash, "seed": seed }));
    }
    if !mismatched.is_empty() {
        return Err(CliError::Runtime {
            stage: S,
            message: format!(
                "artifacts written under a different config than {}: {}",
                lc.hash,
                mismatched.join(", ")
            ),
        });
    }

    let balance = read_json(&w.path(art::BALANCE))?;
    let metrics = read_json(&w.path(art::METRICS))?;
    let history = csv_records(&w.path(art::HISTORY))?;
    let mut out = json!({
        "meta": meta(lc, S),
        "artifacts": stamps,
        "ingest": {
            "parse": balance["parse"],
            "users_parsed": balance["users_parsed"],
            "users_core": balance["users_core"],
            "neg_count": balance["report"]["neg_count"],
            "pos_count": balance["report"]["pos_count"],
            "initial_imbalance": balance["report"]["initial_imbalance"],
            "imbalance": balance["report"]["imbalance"],
            "users_added": balance["report"]["users_added"].as_array().map_or(0, Vec::len),
            "unmet": balance["report"]["unmet"],
        },
        "train": {
            "epochs": history.len(),
            "final": history.last(),
        },
        "eval": {
            "mode": metrics["mode"],
            "n_test": metrics["n_test"],
            "accuracy": metrics["model"]["accuracy"],
            "macro_f1": metrics["model"]["macro_avg"]["f1_score"],
            "weighted_f1": metrics["model"]["weighted_avg"]["f1_score"],
            "baselines": metrics["baselines"].as_array().map(|bs| bs.iter().map(|b| json!({
                "setup": b["setup"],
                "learner": b["learner"],
                "accuracy": b["report"]["accuracy"],
                "macro_f1": b["report"]["macro_avg"]["f1_score"],
                "p_value_vs_model": b["p_value_vs_model"],
            })).collect::<Vec<_>>()),
        },
    });
    if w.path(art::SHAP_SUMMARY).is_file() {
        out["explain"] = json!({
            "importance": csv_records(&w.path(art::SHAP_SUMMARY))?,
        });
        if w.path(art::CORRELATION).is_file() {
            let target: Vec<Value> = csv_records(&w.path(art::CORRELATION))?
                .into_iter()
                .filter_map(|r| {
                    let target = r.get(persona_core::explain::TARGET_NAME)?;
                    Some(json!({ "feature": r.get("feature")?, "target": target }))
                })
                .collect();
            out["explain"]["target_correlation"] = Value::Array(target);
        }
    }
    if w.path(art::ABLATION).is_file() {
        out["ablation"] = json!(csv_records(&w.path(art::ABLATION))?);
    }
    write_json(&w.path(art::REPORT), &out).stage(S)?;
    println!("{}", w.path(art::REPORT).display());
    Ok(())
}

pub fn run_stage(name: &str, lc: &LoadedConfig) -> Result<(), CliError> {
    match name {
        "ingest" => ingest(lc),
        "featurize" => featurize(lc),
        "train" => train(lc),
        "eval" => eval(lc),
        "explain" => explain(lc),
        "ablate" => ablate(lc),
        "report" => report(lc),
        other => Err(CliError::Runtime {
            stage: "cli",
            message: format!("unknown stage `{other}`"),
        }),
    }
}
