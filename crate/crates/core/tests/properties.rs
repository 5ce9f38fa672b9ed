use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use genvc::audio::{FeatureKind, FeatureSeq};
use genvc::checkpoint::Checkpoint;
use genvc::config::RunConfig;
use genvc::dvae::{DvaeConfig, DvaeModel};
use genvc::lm::LanguageModel;
use genvc::numerics::NdArray;
use genvc::vocoder::{VocoderConfig, VocoderModel};

fn small_run() -> RunConfig {
    RunConfig {
        k_phonetic: 8,
        k_acoustic: 8,
        code_dim: 4,
        dvae_hidden: 8,
        dvae_resblocks: 1,
        d_model: 8,
        lm_layers: 1,
        lm_heads: 2,
        perceiver_blocks: 1,
        perceiver_heads: 2,
        perceiver_head_dim: 4,
        max_positions: 64,
        vocoder_channels: 8,
        ..RunConfig::toy()
    }
}

fn wave(rows: usize, cols: usize, phase: f64) -> NdArray {
    NdArray::new(&[rows, cols], (0..rows * cols).map(|i| (i as f64 * 0.37 + phase).sin()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vocoder_output_is_256_samples_per_frame(frames in 1usize..12, phase in -3.0f64..3.0) {
        let v = VocoderModel::new(
            VocoderConfig { d_model: 4, channels: 8, upsample: vec![8, 8, 4] },
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let w = v.vocode(&wave(frames, 4, phase)).unwrap();
        prop_assert_eq!(w.len(), 256 * frames);
        prop_assert!(w.samples().iter().all(|s| s.abs() <= 1.0));
    }

    #[test]
    fn dvae_round_trip_keeps_whole_token_spans(frames in 4usize..40) {
        let cfg = small_run();
        let m = DvaeModel::new(DvaeConfig::acoustic(&cfg), &mut ChaCha8Rng::seed_from_u64(1));
        let f = FeatureSeq::new(wave(frames, cfg.mel_bins, 0.5), 93.75, FeatureKind::Acoustic).unwrap();
        let t = m.encode(&f).unwrap();
        prop_assert_eq!(t.len(), frames / 4);
        prop_assert_eq!(m.decode(&t).unwrap().num_frames(), 4 * (frames / 4));
    }

    #[test]
    fn style_shape_is_fixed_for_any_prompt_length(frames in 1usize..30) {
        let cfg = small_run();
        let lm = LanguageModel::from_run(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let prompt = FeatureSeq::new(wave(frames, cfg.mel_bins, 1.0), 93.75, FeatureKind::Acoustic).unwrap();
        prop_assert_eq!(lm.encode_style(&prompt).unwrap().shape(), (32, 8));
    }
}

#[test]
fn vocoder_checkpoint_reload_gives_identical_audio() {
    let cfg = small_run();
    let save_load = |v: &VocoderModel| {
        let mut buf = Vec::new();
        v.to_checkpoint(&cfg).write_to(&mut buf).unwrap();
        VocoderModel::from_checkpoint(&Checkpoint::read_from(&buf[..]).unwrap()).unwrap()
    };
    let once = save_load(&VocoderModel::from_run(&cfg, &mut ChaCha8Rng::seed_from_u64(3)));
    let twice = save_load(&once);
    let cond = wave(6, cfg.d_model, 0.2);
    assert_eq!(once.vocode(&cond).unwrap(), twice.vocode(&cond).unwrap());
}
