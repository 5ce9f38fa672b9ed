//! Trains a small acoustic DVAE on synthetic speech and tokenizes a clip.
//!
//! cargo run --release --example dvae_tokenize

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genvc::config::RunConfig;
use genvc::corpus::{toy_corpus, ToyCorpusOptions};
use genvc::dvae::{train_dvae, DvaeConfig, DvaeModel, DvaeTrainOptions};
use genvc::eval::mel_mse;
use genvc::pipeline::acoustic_features;

fn main() -> genvc::Result<()> {
    let cfg = RunConfig::toy();
    let opts = ToyCorpusOptions {
        scripts: 2,
        ..Default::default()
    };
    let mels = toy_corpus(&opts, 3)?
        .iter()
        .map(|(_, _, w)| acoustic_features(w, &cfg))
        .collect::<genvc::Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut dvae = DvaeModel::new(DvaeConfig::acoustic(&cfg), &mut rng);
    let train = DvaeTrainOptions {
        steps: 300,
        ..DvaeTrainOptions::from_config(&cfg)
    };
    let report = train_dvae(&mut dvae, &mels, &train, &mut rng)?;
    println!(
        "loss {:.4} -> {:.4}, {} codes in use",
        report.losses[0],
        report.losses[report.losses.len() - 1],
        report.codes_used
    );

    let tokens = dvae.encode(&mels[0])?;
    println!("{} frames -> {} tokens at {} Hz", mels[0].num_frames(), tokens.len(), tokens.rate());
    println!("first ids: {:?}", &tokens.ids()[..tokens.len().min(16)]);
    let decoded = dvae.decode(&tokens)?;
    println!("decoded mel mse {:.4}", mel_mse(mels[0].frames(), decoded.frames())?);
    Ok(())
}
