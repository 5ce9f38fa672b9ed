//! Generates the synthetic corpus, trains every phase on the toy preset and
//! reports the overfit metrics.
//!
//! cargo run --release --example toy_pipeline -- [work_dir]

use std::path::PathBuf;
use std::time::Instant;

use genvc::audio::FeatureKind;
use genvc::config::RunConfig;
use genvc::corpus::{write_toy_corpus, ToyCorpusOptions};
use genvc::eval::mean_and_variance;
use genvc::lm::SamplingParams;
use genvc::manifest::Manifest;
use genvc::pipeline::{
    load_corpus, load_dvae, reconstruction_ratio, self_conversion_l1, style_cosines, teacher_forced_acoustic_loss,
    tokenize_corpus, train_phase, Converter, Phase,
};

fn main() -> genvc::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("genvc-toy"));
    let seed = 7;
    write_toy_corpus(&dir, &ToyCorpusOptions::default(), seed)?;
    let cfg = RunConfig::toy();
    let corpus = load_corpus(&Manifest::load(&dir.join("manifest.csv"))?, &cfg)?;
    let ck = dir.join("checkpoints");
    for phase in Phase::ALL {
        let t = Instant::now();
        let out = train_phase(phase, &corpus, &cfg, seed, &ck)?;
        println!("{:<14} final loss {:.4}  {:.1}s", phase.name(), out.final_loss, t.elapsed().as_secs_f64());
    }

    let dvae = load_dvae(&ck, FeatureKind::Acoustic)?;
    println!("dvae recon mse / variance: {:.4}", reconstruction_ratio(&dvae, &corpus)?);

    let conv = Converter::load(&ck)?;
    let tokens = tokenize_corpus(&corpus, &ck)?;
    println!("teacher-forced L_acoustic: {:.4}", teacher_forced_acoustic_loss(&conv.lm, &corpus, &tokens)?);

    for penalty in [1.0, cfg.repetition_penalty] {
        let params = SamplingParams {
            repetition_penalty: penalty,
            ..SamplingParams::from_run(&cfg)
        };
        let l1 = self_conversion_l1(&conv, &corpus, &params, 100)?;
        println!("self-conversion mel L1 (repetition penalty {penalty}): {:.4}", mean_and_variance(&l1).0);
    }

    let (same, cross) = style_cosines(&conv.lm, &corpus)?;
    println!("style cosine same {same:.4} cross {cross:.4}");
    Ok(())
}
