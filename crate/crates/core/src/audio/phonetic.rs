use super::mel::{log_mel_frames, MelConfig};
use super::{FeatureKind, FeatureSeq, Waveform, PHONETIC_RATE};
use crate::error::{Error, Result};
use crate::numerics::NdArray;

/// Settings of the speaker-attenuated content feature extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneticConfig {
    pub dim: usize,
}

impl Default for PhoneticConfig {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

impl PhoneticConfig {
    /// 16 kHz, 25 ms Hann window, 20 ms hop, `dim` bands over 0-8 kHz.
    pub fn mel(&self) -> MelConfig {
        MelConfig {
            sample_rate: PHONETIC_RATE,
            n_fft: 512,
            win_length: 400,
            hop: 320,
            n_mels: self.dim,
            fmin: 0.0,
            fmax: 8_000.0,
            centered: false,
        }
    }
}

/// Content features at 50 frames/s: 16 kHz log-mel with per-utterance
/// mean/variance normalization of every dimension.
pub fn pseudo_phonetic(w: &Waveform, cfg: &PhoneticConfig) -> Result<FeatureSeq> {
    w.expect_rate(PHONETIC_RATE)?;
    let mel = cfg.mel();
    if w.len() < mel.hop {
        return Err(Error::Length(format!(
            "{} samples is shorter than one 20 ms frame",
            w.len()
        )));
    }
    let raw = log_mel_frames(w.samples(), &mel);
    let (t, d) = (raw.rows(), raw.cols());
    let mut out = raw.into_data();
    for j in 0..d {
        let mean = (0..t).map(|i| out[i * d + j]).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (out[i * d + j] - mean).powi(2)).sum::<f64>() / t as f64;
        let inv = 1.0 / (var + 1e-10).sqrt();
        for i in 0..t {
            out[i * d + j] = (out[i * d + j] - mean) * inv;
        }
    }
    FeatureSeq::new(
        NdArray::new(&[t, d], out)?,
        mel.frame_rate(),
        FeatureKind::Phonetic,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn voiced(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                let f0 = 140.0 + 30.0 * (3.0 * t).sin();
                let mut s = 0.0;
                for h in 1..30 {
                    s += (2.0 * PI * f0 * h as f64 * t).sin() / h as f64;
                }
                0.2 * s * (1.0 + 0.5 * (5.0 * t).sin()) + 0.01 * ((i * 7919 % 101) as f64 / 50.0 - 1.0)
            })
            .collect()
    }

    #[test]
    fn fifty_frames_per_second() {
        let w = Waveform::peak_normalized(voiced(32_000), 16_000, 0.9).unwrap();
        let f = pseudo_phonetic(&w, &PhoneticConfig::default()).unwrap();
        assert_eq!(f.num_frames(), 100);
        assert_eq!(f.dim(), 64);
        assert_eq!(f.frame_rate(), 50.0);
    }

    #[test]
    fn per_dimension_standardized() {
        let w = Waveform::peak_normalized(voiced(32_000), 16_000, 0.9).unwrap();
        let f = pseudo_phonetic(&w, &PhoneticConfig::default()).unwrap();
        let (t, d) = (f.num_frames(), f.dim());
        let x = f.frames().data();
        for j in 0..d {
            let mean = (0..t).map(|i| x[i * d + j]).sum::<f64>() / t as f64;
            let var = (0..t).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>() / t as f64;
            assert!(mean.abs() < 1e-4, "dim {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "dim {j} var {var}");
        }
    }

    #[test]
    fn global_gain_cancels() {
        let s = voiced(32_000);
        let a = Waveform::peak_normalized(s.clone(), 16_000, 0.9).unwrap();
        let b = Waveform::new(a.samples().iter().map(|v| v * 0.5).collect(), 16_000).unwrap();
        let fa = pseudo_phonetic(&a, &PhoneticConfig::default()).unwrap();
        let fb = pseudo_phonetic(&b, &PhoneticConfig::default()).unwrap();
        assert!(fa.frames().max_abs_diff(fb.frames()) < 1e-3);
    }

    #[test]
    fn wrong_rate_rejected() {
        let w = Waveform::new(vec![0.0; 24_000], 24_000).unwrap();
        assert!(matches!(
            pseudo_phonetic(&w, &PhoneticConfig::default()),
            Err(Error::Rate { .. })
        ));
    }
}
