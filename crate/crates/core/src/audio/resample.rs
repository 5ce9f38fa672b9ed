use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

const ZERO_CROSSINGS: f64 = 16.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// Output length is `round(len * target / source)`. Taps are renormalized per
/// output sample, so a constant signal stays constant up to the clamp at `±1`.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Rate {
            expected: 1,
            actual: 0,
        });
    }
    let src_rate = w.sample_rate();
    if src_rate == target_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / src_rate as f64;
    let n_out = ((w.len() as f64 * ratio).round() as usize).max(1);
    let cutoff = ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let x = w.samples();
    let n_in = x.len() as isize;
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let t = j as f64 / ratio;
        let lo = (t - half_width).ceil().max(0.0) as isize;
        let hi = ((t + half_width).floor() as isize).min(n_in - 1);
        let (mut acc, mut norm) = (0.0, 0.0);
        for i in lo..=hi {
            let d = i as f64 - t;
            let win = 0.5 + 0.5 * (PI * d / half_width).cos();
            let h = cutoff * sinc(cutoff * d) * win;
            acc += h * x[i as usize];
            norm += h;
        }
        out.push(if norm.abs() > 1e-12 { acc / norm } else { 0.0 });
    }
    Waveform::clamped(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_follows_rate_ratio() {
        let w = Waveform::new(vec![0.1; 24_000], 24_000).unwrap();
        assert_eq!(resample(&w, 16_000).unwrap().len(), 16_000);
    }

    #[test]
    fn identity_rate_is_a_copy() {
        let w = Waveform::new((0..100).map(|i| (i as f64 * 0.01).sin()).collect(), 16_000).unwrap();
        assert_eq!(resample(&w, 16_000).unwrap(), w);
    }

    #[test]
    fn dc_survives() {
        let w = Waveform::new(vec![0.37; 4800], 24_000).unwrap();
        for rate in [16_000, 48_000, 22_050] {
            let r = resample(&w, rate).unwrap();
            assert!(r.samples().iter().all(|v| (v - 0.37).abs() < 1e-3));
        }
    }

    #[test]
    fn low_tone_is_preserved_downsampling() {
        let f = 440.0;
        let src: Vec<f64> = (0..24_000)
            .map(|i| 0.5 * (2.0 * PI * f * i as f64 / 24_000.0).sin())
            .collect();
        let r = resample(&Waveform::new(src, 24_000).unwrap(), 16_000).unwrap();
        for (j, v) in r.samples().iter().enumerate().skip(200).take(15_000) {
            let expect = 0.5 * (2.0 * PI * f * j as f64 / 16_000.0).sin();
            assert!((v - expect).abs() < 2e-3, "sample {j}: {v} vs {expect}");
        }
    }
}
