//! How each sampling control reshapes a next-token distribution.
//!
//! cargo run --release --example lm_sampling

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genvc::lm::{sample_next, sampling_distribution, SamplingParams};

fn show(label: &str, logits: &[f64], history: &[usize], p: &SamplingParams) -> genvc::Result<()> {
    let d = sampling_distribution(logits, history, p)?;
    let shown: Vec<String> = d.iter().map(|x| format!("{x:.3}")).collect();
    println!("{label:<28} [{}]", shown.join(", "));
    Ok(())
}

fn main() -> genvc::Result<()> {
    let probs = [0.5f64, 0.3, 0.15, 0.05];
    let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
    let base = SamplingParams::unfiltered(1.0, probs.len());
    show("plain", &logits, &[], &base)?;
    show("temperature 0.5", &logits, &[], &SamplingParams { temperature: 0.5, ..base.clone() })?;
    show("top_k 2", &logits, &[], &SamplingParams { top_k: 2, ..base.clone() })?;
    show("top_p 0.8", &logits, &[], &SamplingParams { top_p: 0.8, ..base.clone() })?;
    show(
        "repetition 2.0, history [0]",
        &logits,
        &[0],
        &SamplingParams {
            repetition_penalty: 2.0,
            ..base.clone()
        },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws: Vec<usize> = (0..20)
        .map(|_| sample_next(&logits, &[], &base, &mut rng))
        .collect::<genvc::Result<_>>()?;
    println!("20 draws: {draws:?}");
    Ok(())
}
