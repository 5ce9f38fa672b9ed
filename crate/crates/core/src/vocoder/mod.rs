//! Waveform generator conditioned on language-model hidden states.

mod spectral;
mod train;

pub use spectral::{MultiResolutionStft, StftBasis};
pub use train::{train_vocoder, VocoderExample, VocoderTrainOptions, VocoderTrainReport};

use rand::Rng;

use crate::audio::{Waveform, ACOUSTIC_RATE};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::lm::LmHidden;
use crate::numerics::layers::{Conv1d, ConvTranspose1d};
use crate::numerics::{NdArray, ParamStore, Tape, Var};

pub const CHECKPOINT_NAME: &str = "vocoder";
/// Conditioning frames per hidden-state row.
pub const HIDDEN_UPSAMPLE: usize = 4;
const LEAK: f64 = 0.1;

/// Linear interpolation in time from `m` rows to `4m` rows; the first and last
/// rows are reproduced exactly.
pub fn interpolate_hidden(h: &LmHidden) -> Result<NdArray> {
    let m = h.rows();
    if m == 0 {
        return Err(Error::Length("no hidden states to interpolate".into()));
    }
    let d = h.d_model();
    let n = HIDDEN_UPSAMPLE * m;
    let mut out = vec![0.0; n * d];
    for t in 0..n {
        let row = &mut out[t * d..(t + 1) * d];
        if m == 1 {
            row.copy_from_slice(h.row(0));
            continue;
        }
        // source position t * (m - 1) / (n - 1), split into integer and fraction
        let num = t * (m - 1);
        let (i, rem) = (num / (n - 1), num % (n - 1));
        if rem == 0 {
            row.copy_from_slice(h.row(i));
            continue;
        }
        let f = rem as f64 / (n - 1) as f64;
        for ((o, a), b) in row.iter_mut().zip(h.row(i)).zip(h.row(i + 1)) {
            *o = a + f * (b - a);
        }
    }
    NdArray::new(&[n, d], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderConfig {
    pub d_model: usize,
    pub channels: usize,
    pub upsample: Vec<usize>,
}

impl VocoderConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            d_model: cfg.d_model,
            channels: cfg.vocoder_channels,
            upsample: cfg.vocoder_upsample.clone(),
        }
    }

    pub fn hop(&self) -> usize {
        self.upsample.iter().product()
    }
}

#[derive(Debug, Clone)]
struct Stage {
    up: ConvTranspose1d,
    res: Vec<Conv1d>,
}

/// Input conv, transposed-conv upsampling stages each followed by residual
/// dilated convs, and a tanh output conv.
#[derive(Debug, Clone)]
pub struct VocoderModel {
    pub config: VocoderConfig,
    pub store: ParamStore,
    conv_in: Conv1d,
    stages: Vec<Stage>,
    conv_out: Conv1d,
}

impl VocoderModel {
    pub fn new(config: VocoderConfig, rng: &mut impl Rng) -> Self {
        let mut s = ParamStore::new();
        let mut ch = config.channels;
        let conv_in = Conv1d::same(&mut s, "conv_in", config.d_model, ch, 7, 1, rng);
        let mut stages = Vec::new();
        for (i, &r) in config.upsample.iter().enumerate() {
            let next = (ch / 2).max(4);
            let up = ConvTranspose1d::upsampler(&mut s, &format!("up{i}"), ch, next, r, rng);
            let res = [1usize, 3, 9]
                .iter()
                .map(|&dil| Conv1d::same(&mut s, &format!("up{i}.res_d{dil}"), next, next, 3, dil, rng))
                .collect();
            stages.push(Stage { up, res });
            ch = next;
        }
        let conv_out = Conv1d::same(&mut s, "conv_out", ch, 1, 7, 1, rng);
        Self {
            config,
            store: s,
            conv_in,
            stages,
            conv_out,
        }
    }

    pub fn from_run(cfg: &RunConfig, rng: &mut impl Rng) -> Self {
        Self::new(VocoderConfig::from_run(cfg), rng)
    }

    /// Conditioning `[T, d_model]` to samples `[1, hop * T]`.
    pub fn forward(&self, tape: &mut Tape, cond: Var) -> Result<Var> {
        let shape = tape.shape(cond).to_vec();
        if shape.len() != 2 || shape[1] != self.config.d_model {
            return Err(Error::Dimension(format!(
                "conditioning {shape:?}, vocoder expects [_, {}]",
                self.config.d_model
            )));
        }
        let s = &self.store;
        let x = tape.transpose(cond)?;
        let mut h = self.conv_in.forward(tape, s, x)?;
        for st in &self.stages {
            h = tape.leaky_relu(h, LEAK);
            h = st.up.forward(tape, s, h)?;
            for c in &st.res {
                let a = tape.leaky_relu(h, LEAK);
                let a = c.forward(tape, s, a)?;
                h = tape.add(h, a)?;
            }
        }
        h = tape.leaky_relu(h, LEAK);
        let y = self.conv_out.forward(tape, s, h)?;
        Ok(tape.tanh(y))
    }

    /// Synthesizes 24 kHz audio from conditioning frames at the mel frame rate.
    pub fn vocode(&self, cond: &NdArray) -> Result<Waveform> {
        let mut tape = Tape::new();
        let c = tape.constant(cond.clone());
        let y = self.forward(&mut tape, c)?;
        Waveform::clamped(tape.value(y).data().to_vec(), ACOUSTIC_RATE)
    }

    /// Interpolates hidden states ×4 and vocodes them.
    pub fn vocode_hidden(&self, h: &LmHidden) -> Result<Waveform> {
        self.vocode(&interpolate_hidden(h)?)
    }

    pub fn to_checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint::from_store(CHECKPOINT_NAME, cfg, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_model(CHECKPOINT_NAME)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut m = Self::from_run(&ck.header.config, &mut rng);
        m.store.load_values(&ck.params)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hidden(rows: &[Vec<f64>]) -> LmHidden {
        LmHidden::from_array(&NdArray::from_rows(rows).unwrap())
    }

    #[test]
    fn interpolation_length_and_constant() {
        let h = hidden(&vec![vec![0.5, -2.0]; 10]);
        let c = interpolate_hidden(&h).unwrap();
        assert_eq!(c.shape(), &[40, 2]);
        assert!(c.data().chunks(2).all(|r| r == [0.5, -2.0]));
        assert!(interpolate_hidden(&LmHidden::new(vec![], 2).unwrap()).is_err());
    }

    #[test]
    fn interpolation_of_ramp_is_ramp_with_exact_endpoints() {
        let m = 7;
        let h = hidden(&(0..m).map(|i| vec![i as f64 / (m - 1) as f64, 3.0]).collect::<Vec<_>>());
        let c = interpolate_hidden(&h).unwrap();
        let n = 4 * m;
        for t in 0..n {
            assert!((c.get2(t, 0) - t as f64 / (n - 1) as f64).abs() < 1e-6);
        }
        assert_eq!(c.row(0), h.row(0));
        assert_eq!(c.row(n - 1), h.row(m - 1));
    }

    #[test]
    fn output_length_and_bound() {
        let cfg = VocoderConfig {
            d_model: 8,
            channels: 16,
            upsample: vec![8, 8, 4],
        };
        let v = VocoderModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let w = v.vocode(&NdArray::zeros(&[40, 8])).unwrap();
        assert_eq!(w.len(), 10240);
        assert!(w.samples().iter().all(|s| s.abs() <= 1.0));
        let big = NdArray::full(&[3, 8], 50.0);
        let w = v.vocode(&big).unwrap();
        assert_eq!(w.len(), 768);
        assert!(w.samples().iter().all(|s| s.abs() <= 1.0));
        assert!(v.vocode(&NdArray::zeros(&[3, 7])).is_err());
    }
}
