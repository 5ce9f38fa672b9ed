use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureKind, FeatureSeq, Waveform, ACOUSTIC_RATE};
use crate::error::{Error, Result};
use crate::numerics::NdArray;

/// Floor applied to mel magnitudes before the natural log.
pub const LOG_FLOOR: f64 = 1e-5;

/// STFT and mel filterbank settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// `true`: frame `i` is centered on sample `i * hop` and there are
    /// `floor(T / hop) + 1` frames. `false`: centered on `i * hop + hop / 2`
    /// with `floor(T / hop)` frames.
    pub centered: bool,
}

impl MelConfig {
    /// 24 kHz, 1024-sample Hann window, hop 256, 80 bands over 0-12 kHz.
    pub fn acoustic() -> Self {
        Self {
            sample_rate: ACOUSTIC_RATE,
            n_fft: 1024,
            win_length: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 12_000.0,
            centered: true,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples / self.hop + usize::from(self.centered)
    }

    /// Zero-padded periodic Hann window of length `n_fft`.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let off = (self.n_fft - self.win_length) / 2;
        for i in 0..self.win_length {
            w[off + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / self.win_length as f64).cos();
        }
        w
    }
}

fn reflect(mut i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Flat sample indices (`frames × n_fft`, reflection padded) of every STFT frame.
pub fn frame_indices(num_samples: usize, cfg: &MelConfig) -> (usize, Vec<usize>) {
    let frames = cfg.num_frames(num_samples);
    let center_off = if cfg.centered { 0 } else { cfg.hop / 2 } as isize;
    let half = (cfg.n_fft / 2) as isize;
    let mut idx = Vec::with_capacity(frames * cfg.n_fft);
    for f in 0..frames {
        let start = (f * cfg.hop) as isize + center_off - half;
        for n in 0..cfg.n_fft as isize {
            idx.push(reflect(start + n, num_samples));
        }
    }
    (frames, idx)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular (peak 1) filters on the HTK mel scale, shape `[n_mels, n_bins]`.
pub fn mel_filterbank(cfg: &MelConfig) -> NdArray {
    let bins = cfg.n_bins();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = NdArray::zeros(&[cfg.n_mels, bins]);
    let data = fb.data_mut();
    for m in 0..cfg.n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            data[m * bins + k] = w;
        }
    }
    fb
}

/// Log mel magnitudes `[frames, n_mels]` of raw samples under `cfg`.
pub fn log_mel_frames(samples: &[f64], cfg: &MelConfig) -> NdArray {
    let (frames, idx) = frame_indices(samples.len(), cfg);
    let window = cfg.window();
    let fb = mel_filterbank(cfg);
    let bins = cfg.n_bins();
    let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut mag = vec![0.0; bins];
    let mut out = vec![0.0; frames * cfg.n_mels];
    for f in 0..frames {
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(samples[idx[f * cfg.n_fft + n]] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (m, b) in mag.iter_mut().zip(&buf) {
            *m = b.norm();
        }
        for m in 0..cfg.n_mels {
            let e: f64 = fb.row(m).iter().zip(&mag).map(|(w, a)| w * a).sum();
            out[f * cfg.n_mels + m] = e.max(LOG_FLOOR).ln();
        }
    }
    NdArray::new(&[frames, cfg.n_mels], out).expect("frames > 0")
}

/// 80-band log-mel spectrogram of a 24 kHz waveform at 93.75 frames/s.
pub fn mel_spectrogram(w: &Waveform) -> Result<FeatureSeq> {
    w.expect_rate(ACOUSTIC_RATE)?;
    let cfg = MelConfig::acoustic();
    if w.len() < cfg.win_length {
        return Err(Error::Length(format!(
            "{} samples is shorter than one {}-sample window",
            w.len(),
            cfg.win_length
        )));
    }
    FeatureSeq::new(
        log_mel_frames(w.samples(), &cfg),
        cfg.frame_rate(),
        FeatureKind::Acoustic,
    )
}
