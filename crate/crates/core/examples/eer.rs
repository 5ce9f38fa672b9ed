//! Equal error rate of a small verification trial set.
//!
//! cargo run --release --example eer

use genvc::eval::eer_from_scores;

fn main() -> genvc::Result<()> {
    let genuine = [0.91, 0.84, 0.77, 0.52, 0.66];
    let impostor = [0.12, 0.35, 0.58, 0.21, 0.49, 0.05];
    let e = eer_from_scores(&genuine, &impostor)?;
    println!("EER {:.4} at threshold {:.4}", e.eer, e.threshold);

    let e = eer_from_scores(&[0.9, 0.8, 0.4], &[0.6, 0.2, 0.1])?;
    println!("three against three: EER {:.4}", e.eer);
    Ok(())
}
