use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use genvc::audio::{log_mel_frames, MelConfig, Waveform, ACOUSTIC_RATE};
use genvc::corpus::{synthesize, Script, Voice};
use genvc::eval::mel_l1;
use genvc::numerics::NdArray;
use genvc::vocoder::{train_vocoder, VocoderConfig, VocoderExample, VocoderModel, VocoderTrainOptions};

const FRAMES: usize = 60;
const D: usize = 8;

/// One 0.64 s chunk of synthetic speech with fixed random conditioning.
fn chunk() -> VocoderExample {
    let script = Script {
        phones: vec![(0, 0.3), (3, 0.34)],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = synthesize(&script, &Voice::toy_speakers()[1], &mut rng).unwrap();
    let mut samples = w.samples().to_vec();
    samples.resize(FRAMES * 256, 0.0);
    let cond = NdArray::new(&[FRAMES, D], (0..FRAMES * D).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    VocoderExample { cond, samples }
}

fn model(seed: u64) -> VocoderModel {
    let cfg = VocoderConfig {
        d_model: D,
        channels: 32,
        upsample: vec![8, 8, 4],
    };
    VocoderModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn options(steps: usize) -> VocoderTrainOptions {
    VocoderTrainOptions {
        steps,
        lr: 2e-3,
        final_lr_scale: 1.0,
        weight_decay: 0.0,
        mel_weight: 10.0,
        chunk_frames: FRAMES,
        batch_size: 1,
        grad_clip: 1.0,
    }
}

fn chunk_l1(v: &VocoderModel, ex: &VocoderExample) -> f64 {
    let cfg = MelConfig::acoustic();
    let out = v.vocode(&ex.cond).unwrap();
    let target = Waveform::new(ex.samples.clone(), ACOUSTIC_RATE).unwrap();
    mel_l1(&log_mel_frames(target.samples(), &cfg), &log_mel_frames(out.samples(), &cfg)).unwrap()
}

#[test]
fn single_chunk_overfits_below_a_tenth_within_5k_steps() {
    let ex = chunk();
    let data = [ex.clone()];
    let mut v = model(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut l1 = chunk_l1(&v, &ex);
    let mut steps = 0;
    while l1 >= 0.1 && steps < 5000 {
        train_vocoder(&mut v, &data, &options(250), &mut rng).unwrap();
        steps += 250;
        l1 = chunk_l1(&v, &ex);
    }
    assert!(l1 < 0.1, "mel L1 {l1} after {steps} steps");
}

#[test]
fn smoothed_loss_on_a_frozen_batch_decreases() {
    let data = [chunk()];
    let mut v = model(2);
    let rep = train_vocoder(&mut v, &data, &options(1000), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let windows: Vec<f64> = rep.losses.chunks(100).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    for w in windows.windows(2) {
        assert!(w[1] < w[0], "{windows:?}");
    }
}
