//! Renders a synthetic utterance and extracts both feature streams.
//!
//! cargo run --release --example audio_features -- [out.gvfd]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genvc::audio::{export_feature_dump, mel_spectrogram, pseudo_phonetic, resample, PhoneticConfig, PHONETIC_RATE};
use genvc::corpus::{synthesize, Script, Voice};

fn main() -> genvc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let script = Script::random(&mut rng, 2.0);
    let wav = synthesize(&script, &Voice::toy_speakers()[0], &mut rng)?;
    println!("{:.3}s at {} Hz", wav.duration_secs(), wav.sample_rate());

    let mel = mel_spectrogram(&wav)?;
    println!("log-mel: {} frames x {} bins at {} Hz", mel.num_frames(), mel.dim(), mel.frame_rate());

    let phon = pseudo_phonetic(&resample(&wav, PHONETIC_RATE)?, &PhoneticConfig::default())?;
    println!("content features: {} frames x {} dims at {} Hz", phon.num_frames(), phon.dim(), phon.frame_rate());

    if let Some(path) = std::env::args().nth(1) {
        export_feature_dump(&phon, path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
