//! Synthetic speech-like corpus: formant-filtered glottal pulse trains with a
//! per-speaker pitch class and vocal-tract scale.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav, Waveform, ACOUSTIC_RATE};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestEntry};

/// Vowel-like targets: first three formants in Hz and relative level.
const PHONES: [([f64; 3], f64); 6] = [
    ([730.0, 1090.0, 2440.0], 1.0),
    ([270.0, 2290.0, 3010.0], 0.8),
    ([300.0, 870.0, 2240.0], 0.8),
    ([530.0, 1840.0, 2480.0], 0.9),
    ([570.0, 840.0, 2410.0], 0.9),
    ([250.0, 1000.0, 2200.0], 0.35),
];
const BANDWIDTHS: [f64; 3] = [80.0, 100.0, 150.0];
/// Seconds over which formants glide between neighbouring phones.
const GLIDE_SECS: f64 = 0.04;

/// One speaker's voice parameters. Pitch is held constant so each speaker is
/// a single pitch class.
#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub name: String,
    pub f0: f64,
    /// Multiplies every formant frequency (shorter tract, higher formants).
    pub formant_scale: f64,
    /// One-pole low-pass coefficient on the source; larger is darker.
    pub tilt: f64,
}

impl Voice {
    /// The two toy speakers: a low and a high pitch class.
    pub fn toy_speakers() -> Vec<Voice> {
        vec![
            Voice {
                name: "spk_low".into(),
                f0: 46.875,
                formant_scale: 1.0,
                tilt: 0.85,
            },
            Voice {
                name: "spk_high".into(),
                f0: 93.75,
                formant_scale: 1.15,
                tilt: 0.6,
            },
        ]
    }
}

/// A sequence of phones with durations, shared by every speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub phones: Vec<(usize, f64)>,
}

impl Script {
    pub fn random(rng: &mut impl Rng, min_secs: f64) -> Self {
        let mut phones = Vec::new();
        let mut total = 0.0;
        let mut prev = usize::MAX;
        while total < min_secs {
            let mut p = rng.gen_range(0..PHONES.len());
            if p == prev {
                p = (p + 1) % PHONES.len();
            }
            let d = rng.gen_range(0.18..0.32);
            phones.push((p, d));
            total += d;
            prev = p;
        }
        Self { phones }
    }

    pub fn duration_secs(&self) -> f64 {
        self.phones.iter().map(|p| p.1).sum()
    }

    /// Formant targets and level at time `t`, gliding across phone boundaries.
    fn targets(&self, t: f64) -> ([f64; 3], f64) {
        let mut start = 0.0;
        for (i, &(p, d)) in self.phones.iter().enumerate() {
            let end = start + d;
            if t < end || i + 1 == self.phones.len() {
                let (f, a) = PHONES[p];
                let into_next = end - t;
                if into_next < GLIDE_SECS && i + 1 < self.phones.len() {
                    let (fn_, an) = PHONES[self.phones[i + 1].0];
                    let w = 0.5 * (1.0 - into_next / GLIDE_SECS);
                    let mix = |x: f64, y: f64| x + w * (y - x);
                    return ([mix(f[0], fn_[0]), mix(f[1], fn_[1]), mix(f[2], fn_[2])], mix(a, an));
                }
                let from_prev = t - start;
                if from_prev < GLIDE_SECS && i > 0 {
                    let (fp, ap) = PHONES[self.phones[i - 1].0];
                    let w = 0.5 * (1.0 - from_prev / GLIDE_SECS);
                    let mix = |x: f64, y: f64| x + w * (y - x);
                    return ([mix(f[0], fp[0]), mix(f[1], fp[1]), mix(f[2], fp[2])], mix(a, ap));
                }
                return (f, a);
            }
            start = end;
        }
        unreachable!("scripts are nonempty")
    }
}

/// Two-pole resonator with unit gain at its centre frequency.
#[derive(Debug, Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64, sr: f64) -> f64 {
        let r = (-PI * bw / sr).exp();
        let theta = 2.0 * PI * freq / sr;
        let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
        let gain = (1.0 - r) * (1.0 + r * r - 2.0 * r * (2.0 * theta).cos()).sqrt();
        let y = gain * x + a1 * self.y1 + a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Renders `script` in `voice` at 24 kHz, peak-normalized to 0.5; `rng` only
/// drives the low-level noise floor.
pub fn synthesize(script: &Script, voice: &Voice, rng: &mut impl Rng) -> Result<Waveform> {
    let sr = ACOUSTIC_RATE as f64;
    let n = (script.duration_secs() * sr).round() as usize;
    if n == 0 {
        return Err(Error::Length("empty script".into()));
    }
    let nyquist_guard = 0.45 * sr;
    let mut phase = 0.0;
    let mut lp = 0.0;
    let mut res: [Resonator; 3] = Default::default();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        phase = (phase + voice.f0 / sr).fract();
        // band-limited sawtooth: harmonics up to the guard band
        let harmonics = (nyquist_guard / voice.f0) as usize;
        let mut src = 0.0;
        for h in 1..=harmonics {
            src += (2.0 * PI * h as f64 * phase).sin() / h as f64;
        }
        lp = (1.0 - voice.tilt) * src + voice.tilt * lp;
        let (formants, level) = script.targets(t);
        let mut y = 0.0;
        for ((r, f), bw) in res.iter_mut().zip(formants).zip(BANDWIDTHS) {
            y += r.step(lp, f * voice.formant_scale, bw * voice.formant_scale, sr);
        }
        let edge = (t / 0.02).min((script.duration_secs() - t) / 0.02).clamp(0.0, 1.0);
        out.push(level * edge * y);
    }
    let peak = out.iter().fold(0.0f64, |a, s| a.max(s.abs())).max(1e-12);
    let floor = 1e-4;
    let samples = out
        .into_iter()
        .map(|s| 0.5 * s / peak + floor * rng.gen_range(-1.0..1.0))
        .collect();
    Waveform::clamped(samples, ACOUSTIC_RATE)
}

#[derive(Debug, Clone)]
pub struct ToyCorpusOptions {
    pub scripts: usize,
    pub min_secs: f64,
    pub voices: Vec<Voice>,
}

impl Default for ToyCorpusOptions {
    fn default() -> Self {
        Self {
            scripts: 5,
            min_secs: 2.2,
            voices: Voice::toy_speakers(),
        }
    }
}

/// Every script rendered by every voice, with speaker labels.
pub fn toy_corpus(opts: &ToyCorpusOptions, seed: u64) -> Result<Vec<(String, String, Waveform)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scripts: Vec<Script> = (0..opts.scripts).map(|_| Script::random(&mut rng, opts.min_secs)).collect();
    let mut out = Vec::new();
    for v in &opts.voices {
        for (i, s) in scripts.iter().enumerate() {
            let w = synthesize(s, v, &mut rng)?;
            out.push((format!("{}_s{i}", v.name), v.name.clone(), w));
        }
    }
    Ok(out)
}

/// Writes WAVs under `dir/wavs`, `dir/manifest.csv` and a `dir/toy.toml` run
/// configuration sized for the corpus.
pub fn write_toy_corpus(dir: &Path, opts: &ToyCorpusOptions, seed: u64) -> Result<Manifest> {
    let wav_dir = dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut entries = Vec::new();
    for (id, speaker, w) in toy_corpus(opts, seed)? {
        let rel = Path::new("wavs").join(format!("{id}.wav"));
        write_wav(&w, &dir.join(&rel))?;
        entries.push(ManifestEntry {
            path: rel,
            speaker,
            duration: w.duration_secs(),
        });
    }
    let manifest = Manifest::new(dir.to_path_buf(), entries);
    manifest.save(&dir.join("manifest.csv"))?;
    let cfg_path = dir.join("toy.toml");
    std::fs::write(&cfg_path, RunConfig::toy().to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::mel_spectrogram;

    #[test]
    fn corpus_shape_and_determinism() {
        let opts = ToyCorpusOptions {
            scripts: 2,
            min_secs: 0.5,
            ..Default::default()
        };
        let a = toy_corpus(&opts, 3).unwrap();
        let b = toy_corpus(&opts, 3).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        for (_, _, w) in &a {
            assert!(w.duration_secs() >= 0.5);
            let peak = w.samples().iter().fold(0.0f64, |m, s| m.max(s.abs()));
            assert!(peak > 0.4 && peak <= 0.51);
        }
        // same script, different speakers: same length
        assert_eq!(a[0].2.len(), a[2].2.len());
    }

    #[test]
    fn pitch_class_shows_in_the_spectrum() {
        let script = Script {
            phones: vec![(0, 0.5)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let voices = Voice::toy_speakers();
        let low = synthesize(&script, &voices[0], &mut rng).unwrap();
        let high = synthesize(&script, &voices[1], &mut rng).unwrap();
        // zero crossings of the low-passed signal track the fundamental
        let crossings = |w: &Waveform| {
            let mut lp = 0.0;
            let mut prev = 0.0;
            let mut n = 0;
            for &s in w.samples() {
                lp = 0.02 * s + 0.98 * lp;
                if prev <= 0.0 && lp > 0.0 {
                    n += 1;
                }
                prev = lp;
            }
            n
        };
        assert!(crossings(&high) > crossings(&low));
        let m = mel_spectrogram(&low).unwrap();
        assert!(m.frames().data().iter().all(|v| v.is_finite()));
    }
}
