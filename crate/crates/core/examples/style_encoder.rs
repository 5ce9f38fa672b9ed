//! Perceiver style embeddings of prompts from two synthetic speakers.
//!
//! The encoder is untrained here; the printed cosines show the fixed-size
//! output and its dependence on the prompt, not speaker discrimination.
//!
//! cargo run --release --example style_encoder

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genvc::config::RunConfig;
use genvc::corpus::{toy_corpus, ToyCorpusOptions};
use genvc::eval::cosine_similarity;
use genvc::lm::LanguageModel;
use genvc::pipeline::acoustic_features;

fn main() -> genvc::Result<()> {
    let cfg = RunConfig::toy();
    let opts = ToyCorpusOptions {
        scripts: 2,
        ..Default::default()
    };
    let corpus = toy_corpus(&opts, 5)?;
    let lm = LanguageModel::from_run(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let mut embeddings = Vec::new();
    for (id, _, w) in &corpus {
        let e = lm.encode_style(&acoustic_features(w, &cfg)?)?;
        println!("{id}: {:.2}s prompt -> style {:?}", w.duration_secs(), e.shape());
        embeddings.push(e);
    }
    for i in 0..corpus.len() {
        for j in i + 1..corpus.len() {
            let c = cosine_similarity(embeddings[i].flatten(), embeddings[j].flatten())?;
            println!("cos({}, {}) = {c:.4}", corpus[i].0, corpus[j].0);
        }
    }
    Ok(())
}
