//! Differentiable STFT magnitudes and log-mel spectra on the tape.

use crate::audio::{frame_indices, mel_filterbank, MelConfig, LOG_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{NdArray, Tape, Var};

/// Keeps the magnitude differentiable at zero without measurably moving it.
const MAG_EPS: f64 = 1e-20;

/// STFT settings for one resolution, optionally with a mel filterbank.
#[derive(Debug, Clone)]
pub struct StftBasis {
    pub cfg: MelConfig,
    window: Vec<f64>,
    /// `[bins, n_mels]`, present when mel output is wanted.
    mel_t: Option<NdArray>,
}

impl StftBasis {
    pub fn new(cfg: &MelConfig, with_mel: bool) -> Self {
        let mel_t = with_mel.then(|| mel_filterbank(cfg).transpose());
        Self {
            cfg: cfg.clone(),
            window: cfg.window(),
            mel_t,
        }
    }

    /// Magnitude spectrogram `[frames, bins]` of a waveform node holding `len` samples.
    pub fn magnitude(&self, tape: &mut Tape, wav: Var) -> Result<Var> {
        let len = tape.value(wav).len();
        if len < 2 {
            return Err(Error::Length("need at least two samples for an STFT".into()));
        }
        let (frames, idx) = frame_indices(len, &self.cfg);
        let framed = tape.index_select(wav, idx, &[frames, self.cfg.n_fft])?;
        let spec = tape.windowed_dft(framed, &self.window)?;
        let bins = self.cfg.n_bins();
        let re = tape.slice_cols(spec, 0, bins)?;
        let im = tape.slice_cols(spec, bins, bins)?;
        let re2 = tape.square(re);
        let im2 = tape.square(im);
        let p = tape.add(re2, im2)?;
        let p = tape.affine(p, 1.0, MAG_EPS);
        Ok(tape.sqrt(p))
    }

    /// Natural-log mel spectrogram `[frames, n_mels]` with the shared floor.
    pub fn log_mel(&self, tape: &mut Tape, wav: Var) -> Result<Var> {
        let mel_t = self
            .mel_t
            .as_ref()
            .ok_or_else(|| Error::Internal("basis built without a mel filterbank".into()))?;
        let mag = self.magnitude(tape, wav)?;
        let fb = tape.constant(mel_t.clone());
        let mel = tape.matmul(mag, fb)?;
        Ok(tape.log_clamp(mel, LOG_FLOOR))
    }
}

/// Spectral convergence plus mean absolute log-magnitude difference, averaged
/// over several resolutions.
#[derive(Debug, Clone)]
pub struct MultiResolutionStft {
    pub bases: Vec<StftBasis>,
}

impl MultiResolutionStft {
    /// Hann windows of 256, 512 and 1024 samples with quarter-window hops.
    pub fn standard(sample_rate: u32) -> Self {
        let bases = [256usize, 512, 1024]
            .iter()
            .map(|&n| {
                let cfg = MelConfig {
                    sample_rate,
                    n_fft: n,
                    win_length: n,
                    hop: n / 4,
                    ..MelConfig::acoustic()
                };
                StftBasis::new(&cfg, false)
            })
            .collect();
        Self { bases }
    }

    pub fn loss(&self, tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
        let mut total = None;
        let target_arr = NdArray::new(&[1, target.len()], target.to_vec())?;
        for b in &self.bases {
            let tgt = tape.constant(target_arr.clone());
            let tm = b.magnitude(tape, tgt)?;
            let tm = tape.detach(tm);
            let pm = b.magnitude(tape, pred)?;
            let norm = tape.value(tm).data().iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-6);
            let diff = tape.sub(tm, pm)?;
            let sq = tape.square(diff);
            let ss = tape.sum(sq);
            let ss = tape.affine(ss, 1.0, 1e-12);
            let sc = tape.sqrt(ss);
            let sc = tape.scale(sc, 1.0 / norm);
            let lt = tape.log_clamp(tm, LOG_FLOOR);
            let lp = tape.log_clamp(pm, LOG_FLOOR);
            let lm = tape.l1(lp, lt)?;
            let term = tape.add(sc, lm)?;
            total = Some(match total {
                None => term,
                Some(t) => tape.add(t, term)?,
            });
        }
        let t = total.ok_or_else(|| Error::Internal("no STFT resolutions".into()))?;
        Ok(tape.scale(t, 1.0 / self.bases.len() as f64))
    }
}
