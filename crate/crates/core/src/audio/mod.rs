//! Waveforms, feature sequences and the extractors that produce them.

mod dump;
mod mel;
mod phonetic;
mod resample;
mod wav;

pub use dump::{export_feature_dump, import_feature_dump, read_feature_dump, write_feature_dump};
pub use mel::{
    frame_indices, log_mel_frames, mel_filterbank, mel_spectrogram, MelConfig, LOG_FLOOR,
};
pub use phonetic::{pseudo_phonetic, PhoneticConfig};
pub use resample::resample;
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};
use crate::numerics::NdArray;

/// Sample rate of the acoustic path (mel, vocoder output).
pub const ACOUSTIC_RATE: u32 = 24_000;
/// Sample rate of the phonetic feature extractor.
pub const PHONETIC_RATE: u32 = 16_000;

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Length("empty waveform".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Rate {
                expected: 1,
                actual: 0,
            });
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Numeric(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Scales so the peak magnitude is `peak` (silence is left untouched).
    pub fn peak_normalized(mut samples: Vec<f64>, sample_rate: u32, peak: f64) -> Result<Self> {
        let m = samples.iter().fold(0.0f64, |a, s| a.max(s.abs()));
        if m > 0.0 {
            let g = peak.min(1.0) / m;
            samples.iter_mut().for_each(|s| *s *= g);
        }
        Self::new(samples, sample_rate)
    }

    /// Clamps samples into `[-1, 1]` before validating.
    pub fn clamped(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(
            samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
            sample_rate,
        )
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sub-range `[start, start + len)` in samples, clamped to the waveform.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self> {
        let start = start.min(self.samples.len().saturating_sub(1));
        let end = (start + len).min(self.samples.len());
        Self::new(self.samples[start..end].to_vec(), self.sample_rate)
    }

    pub(crate) fn expect_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::Rate {
                expected: rate,
                actual: self.sample_rate,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Acoustic,
    Phonetic,
}

/// Time-major matrix of feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeq {
    frames: NdArray,
    frame_rate: f64,
    kind: FeatureKind,
}

impl FeatureSeq {
    pub fn new(frames: NdArray, frame_rate: f64, kind: FeatureKind) -> Result<Self> {
        if frames.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "feature frames must be 2-D, got {:?}",
                frames.shape()
            )));
        }
        if !frames.is_finite() {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::Parse(format!("frame rate {frame_rate}")));
        }
        Ok(Self {
            frames,
            frame_rate,
            kind,
        })
    }

    pub fn frames(&self) -> &NdArray {
        &self.frames
    }

    pub fn into_frames(self) -> NdArray {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    /// Frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.num_frames() {
            return Err(Error::Length(format!(
                "frames {start}..{} of {}",
                start + len,
                self.num_frames()
            )));
        }
        let d = self.dim();
        let data = self.frames.data()[start * d..(start + len) * d].to_vec();
        Self::new(NdArray::new(&[len, d], data)?, self.frame_rate, self.kind)
    }
}
