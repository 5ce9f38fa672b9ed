use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use genvc::audio::write_wav;
use genvc::config::RunConfig;
use genvc::corpus::{write_toy_corpus, ToyCorpusOptions};
use genvc::error::{Error, Result};
use genvc::eval::{save_report, ReportLine};
use genvc::lm::SamplingParams;
use genvc::manifest::Manifest;
use genvc::pipeline::{
    duration_report, eer_report, load_audio, load_corpus, load_lm, similarity, train_phase, Converter, Phase,
};

#[derive(Parser)]
#[command(name = "genvc", version, about = "Token-based zero-shot voice conversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// CSV manifest with path,speaker,duration columns.
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint directory, also searched for earlier phases.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DvaeKind {
    Phonetic,
    Acoustic,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Similarity,
    Eer,
    Duration,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic two-speaker corpus, its manifest and a toy config.
    MakeToyCorpus {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    TrainDvae {
        #[arg(long, value_enum)]
        kind: DvaeKind,
        #[command(flatten)]
        train: TrainArgs,
    },
    TrainLm(TrainArgs),
    TrainVocoder(TrainArgs),
    /// Speaks the source content in the target voice.
    Convert {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Output WAV; metadata goes to the same path with a .json extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes a JSON-lines report.
    Eval {
        #[arg(value_enum)]
        mode: EvalMode,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// similarity: two recordings to compare.
        #[arg(long, num_args = 2)]
        pair: Option<Vec<PathBuf>>,
        /// eer: trial list; duration: `source converted` pairs.
        #[arg(long)]
        list: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(c: &Common) -> Result<RunConfig> {
    match &c.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn train(phase: Phase, a: &TrainArgs) -> Result<()> {
    let cfg = config(&a.common)?;
    let corpus = load_corpus(&Manifest::load(&a.manifest)?, &cfg)?;
    let out = train_phase(phase, &corpus, &cfg, a.common.seed, &a.out)?;
    println!(
        "{}: final loss {:.6}, checkpoint {}, curve {}",
        phase.name(),
        out.final_loss,
        out.checkpoint.display(),
        out.curve.display()
    );
    Ok(())
}

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Config(format!("this mode needs --{flag}")))
}

fn lm_and_config(dir: &Path, c: &Common) -> Result<(genvc::lm::LanguageModel, RunConfig)> {
    let lm = load_lm(dir)?;
    let ck_cfg = genvc::checkpoint::Checkpoint::load(&Phase::Lm.checkpoint_path(dir))?.header.config;
    let cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => ck_cfg,
    };
    Ok((lm, cfg))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeToyCorpus { seed, out } => {
            let m = write_toy_corpus(&out, &ToyCorpusOptions::default(), seed)?;
            println!("{} utterances in {}", m.entries.len(), out.display());
        }
        Command::TrainDvae { kind, train: a } => {
            let phase = match kind {
                DvaeKind::Phonetic => Phase::DvaePhonetic,
                DvaeKind::Acoustic => Phase::DvaeAcoustic,
            };
            train(phase, &a)?;
        }
        Command::TrainLm(a) => train(Phase::Lm, &a)?,
        Command::TrainVocoder(a) => train(Phase::Vocoder, &a)?,
        Command::Convert {
            common,
            checkpoints,
            source,
            target,
            out,
        } => {
            let mut conv = Converter::load(&checkpoints)?;
            if common.config.is_some() {
                conv = conv.with_config(config(&common)?)?;
            }
            let params = SamplingParams::from_run(&conv.config);
            let c = conv.convert(&load_audio(&source)?, &load_audio(&target)?, &params, common.seed)?;
            write_wav(&c.wav, &out)?;
            let meta_path = out.with_extension("json");
            let json = serde_json::to_string_pretty(&c.meta).map_err(|e| Error::Internal(e.to_string()))?;
            std::fs::write(&meta_path, json + "\n").map_err(|e| Error::Io {
                path: meta_path.clone(),
                source: e,
            })?;
            println!(
                "{} acoustic tokens, {:.2}s, duration ratio {:.3}{}",
                c.meta.acoustic_tokens,
                c.meta.output_secs,
                c.meta.duration_ratio,
                if c.meta.truncated { " (truncated)" } else { "" }
            );
        }
        Command::Eval {
            mode,
            common,
            checkpoints,
            pair,
            list,
            out,
        } => {
            let lines = match mode {
                EvalMode::Similarity => {
                    let (lm, cfg) = lm_and_config(need(&checkpoints, "checkpoints")?, &common)?;
                    let p = need(&pair, "pair")?;
                    let s = similarity(&lm, &cfg, &load_audio(&p[0])?, &load_audio(&p[1])?)?;
                    vec![ReportLine::new("similarity", s, 1)]
                }
                EvalMode::Eer => {
                    let (lm, cfg) = lm_and_config(need(&checkpoints, "checkpoints")?, &common)?;
                    eer_report(&lm, &cfg, need(&list, "list")?)?
                }
                EvalMode::Duration => duration_report(need(&list, "list")?)?,
            };
            save_report(&lines, &out)?;
            for l in &lines {
                println!("{} {:.6} (n={})", l.metric, l.value, l.count);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
