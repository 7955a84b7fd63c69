use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use persona_cli::{config, load_valid, stages, CliError, StageResult};
use persona_core::synth::{generate, write_sentiment140, SynthConfig};

/// Hybrid text-tabular persona pipeline.
///
/// Exit codes: 0 ok, 2 invalid config, 3 missing artifact, 4 runtime failure.
/// `PERSONA_WORKDIR` overrides `paths.workdir`; `RUST_LOG` sets the log level.
#[derive(Parser)]
#[command(name = "persona", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config and referenced files without touching the workdir.
    Validate(ConfigArg),
    /// Parse, filter and balance the raw corpus.
    Ingest(ConfigArg),
    /// Split by user, profile, fit vocabulary and tabular transform.
    Featurize(ConfigArg),
    /// Train the fusion model.
    Train(ConfigArg),
    /// Score the model and the baselines on the test split.
    Eval(ConfigArg),
    /// Shapley attributions and the correlation matrix.
    Explain(ConfigArg),
    /// Ablation over fusion mode and tabular features.
    Ablate(ConfigArg),
    /// Merge all artifact summaries into report.json.
    Report(ConfigArg),
    /// Every stage in order.
    Run(ConfigArg),
    /// Write a seeded synthetic corpus in the Sentiment140 layout.
    Synth(SynthArgs),
}

#[derive(clap::Args)]
struct ConfigArg {
    #[arg(short, long, default_value = "persona.toml")]
    config: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 40% of posts labelled only through posting hours.
    ContextMix,
    /// All signal in the text, 10% label noise.
    TextOnly,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "context-mix")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    min_posts: Option<usize>,
    #[arg(long)]
    max_posts: Option<usize>,
    #[arg(long)]
    context_share: Option<f64>,
    #[arg(short, long)]
    out: PathBuf,
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = match a.preset {
        Preset::ContextMix => SynthConfig::context_mix(a.seed),
        Preset::TextOnly => SynthConfig::text_only(a.seed),
    };
    cfg.n_users = a.users.unwrap_or(cfg.n_users);
    cfg.min_posts = a.min_posts.unwrap_or(cfg.min_posts);
    cfg.max_posts = a.max_posts.unwrap_or(cfg.max_posts);
    cfg.context_share = a.context_share.unwrap_or(cfg.context_share);
    let corpus = generate(&cfg).stage("synth")?;
    persona_cli::artifacts::write_file(&a.out, |w| write_sentiment140(&corpus, w)).stage("synth")?;
    println!("{} posts from {} users -> {}", corpus.len(), corpus.n_users(), a.out.display());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let (stage, arg) = match cmd {
        Command::Synth(a) => return synth(&a),
        Command::Validate(a) => {
            let lc = config::load(&a.config).map_err(CliError::Config)?;
            let v = config::validate(&lc);
            if !v.is_empty() {
                return Err(CliError::Config(v));
            }
            println!("ok: config_hash={}", lc.hash);
            return Ok(());
        }
        Command::Run(a) => {
            let lc = load_valid(&a.config)?;
            for s in stages::STAGES {
                log::info!("stage {s}");
                stages::run_stage(s, &lc)?;
            }
            return Ok(());
        }
        Command::Ingest(a) => ("ingest", a),
        Command::Featurize(a) => ("featurize", a),
        Command::Train(a) => ("train", a),
        Command::Eval(a) => ("eval", a),
        Command::Explain(a) => ("explain", a),
        Command::Ablate(a) => ("ablate", a),
        Command::Report(a) => ("report", a),
    };
    let lc = load_valid(&arg.config)?;
    stages::run_stage(stage, &lc)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
