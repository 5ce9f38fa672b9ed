//! Fits the vocoder to a single chunk of synthetic speech and writes the result.
//!
//! cargo run --release --example vocoder -- [out.wav]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genvc::audio::{mel_spectrogram, write_wav, Waveform, ACOUSTIC_RATE};
use genvc::corpus::{synthesize, Script, Voice};
use genvc::eval::mel_l1;
use genvc::lm::LmHidden;
use genvc::vocoder::{interpolate_hidden, train_vocoder, VocoderConfig, VocoderExample, VocoderModel, VocoderTrainOptions};

fn main() -> genvc::Result<()> {
    let d = 8;
    // 10 hidden rows at the token rate become 40 conditioning frames
    let hidden = LmHidden::new((0..10 * d).map(|i| ((i * 7 % 11) as f64 / 11.0) - 0.5).collect(), d)?;
    let cond = interpolate_hidden(&hidden)?;
    // two phones of the higher synthetic voice, padded to the conditioning length
    let script = Script {
        phones: vec![(0, 0.2), (3, 0.22)],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut samples = synthesize(&script, &Voice::toy_speakers()[1], &mut rng)?.samples().to_vec();
    samples.resize(cond.rows() * 256, 0.0);
    let target = Waveform::new(samples.clone(), ACOUSTIC_RATE)?;

    let config = VocoderConfig {
        d_model: d,
        channels: 32,
        upsample: vec![8, 8, 4],
    };
    let mut voc = VocoderModel::new(config, &mut rng);
    let opts = VocoderTrainOptions {
        steps: 1500,
        lr: 2e-3,
        final_lr_scale: 1.0,
        weight_decay: 0.0,
        mel_weight: 10.0,
        chunk_frames: cond.rows(),
        batch_size: 1,
        grad_clip: 1.0,
    };
    let data = [VocoderExample {
        cond: cond.clone(),
        samples,
    }];
    let report = train_vocoder(&mut voc, &data, &opts, &mut rng)?;
    println!("mel L1 {:.3} -> {:.3}", report.mel_l1[0], report.mel_l1[report.mel_l1.len() - 1]);

    let out = voc.vocode(&cond)?;
    let l1 = mel_l1(mel_spectrogram(&target)?.frames(), mel_spectrogram(&out)?.frames())?;
    println!("{} samples, full-clip mel L1 {l1:.3}", out.len());
    if let Some(path) = std::env::args().nth(1) {
        write_wav(&out, path.as_ref())?;
        println!("wrote {path}");
    }
    Ok(())
}
