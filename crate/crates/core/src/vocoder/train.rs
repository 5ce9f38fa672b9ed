use rand::seq::SliceRandom;
use rand::Rng;

use super::spectral::{MultiResolutionStft, StftBasis};
use super::VocoderModel;
use crate::audio::{log_mel_frames, MelConfig, ACOUSTIC_RATE};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::{Adam, NdArray, Tape};

/// Conditioning frames at the mel frame rate paired with the waveform they describe.
#[derive(Debug, Clone)]
pub struct VocoderExample {
    /// `[frames, d_model]`.
    pub cond: NdArray,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VocoderTrainOptions {
    pub steps: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr`, approached linearly.
    pub final_lr_scale: f64,
    pub weight_decay: f64,
    /// Weight of the mel L1 term; the STFT term has weight 1.
    pub mel_weight: f64,
    pub chunk_frames: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
}

impl VocoderTrainOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            steps: cfg.vocoder_steps,
            lr: cfg.vocoder_lr,
            final_lr_scale: cfg.vocoder_final_lr_scale,
            weight_decay: cfg.vocoder_weight_decay,
            mel_weight: cfg.vocoder_mel_weight,
            chunk_frames: cfg.vocoder_chunk_frames(),
            batch_size: cfg.batch_size,
            grad_clip: cfg.grad_clip,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct VocoderTrainReport {
    /// Total loss per step.
    pub losses: Vec<f64>,
    /// Mel L1 term per step.
    pub mel_l1: Vec<f64>,
}

/// Random aligned chunk: conditioning rows and the matching samples (zero
/// padded when the waveform ends early).
fn chunk(ex: &VocoderExample, frames: usize, hop: usize, rng: &mut impl Rng) -> Result<(NdArray, Vec<f64>)> {
    let total = ex.cond.rows();
    let c = frames.min(total);
    let f0 = rng.gen_range(0..=total - c);
    let cond = NdArray::new(
        &[c, ex.cond.cols()],
        ex.cond.data()[f0 * ex.cond.cols()..(f0 + c) * ex.cond.cols()].to_vec(),
    )?;
    let mut wav = vec![0.0; c * hop];
    let s0 = f0 * hop;
    if s0 < ex.samples.len() {
        let end = (s0 + c * hop).min(ex.samples.len());
        wav[..end - s0].copy_from_slice(&ex.samples[s0..end]);
    }
    Ok((cond, wav))
}

/// Weighted mel L1 plus multi-resolution STFT loss on random chunks, AdamW
/// with a linear learning-rate ramp down to `final_lr_scale`.
pub fn train_vocoder(
    model: &mut VocoderModel,
    data: &[VocoderExample],
    opts: &VocoderTrainOptions,
    rng: &mut impl Rng,
) -> Result<VocoderTrainReport> {
    if data.is_empty() {
        return Err(Error::Length("no vocoder training examples".into()));
    }
    let hop = model.config.hop();
    let mel_cfg = MelConfig {
        hop,
        ..MelConfig::acoustic()
    };
    let mel = StftBasis::new(&mel_cfg, true);
    let mr = MultiResolutionStft::standard(ACOUSTIC_RATE);
    let mut adam = Adam::adamw(opts.lr, opts.weight_decay);
    let mut report = VocoderTrainReport::default();
    for step in 0..opts.steps {
        let progress = step as f64 / (opts.steps.max(2) - 1) as f64;
        adam.lr = opts.lr * (1.0 - progress * (1.0 - opts.final_lr_scale));
        let mut tape = Tape::new();
        let mut total = None;
        let mut mel_sum = 0.0;
        for _ in 0..opts.batch_size {
            let ex = data.choose(rng).expect("nonempty");
            let (cond, wav) = chunk(ex, opts.chunk_frames, hop, rng)?;
            let c = tape.constant(cond);
            let y = model.forward(&mut tape, c)?;
            let pred_mel = mel.log_mel(&mut tape, y)?;
            let target_mel = tape.constant(log_mel_frames(&wav, &mel_cfg));
            let l_mel = tape.l1(pred_mel, target_mel)?;
            mel_sum += tape.scalar(l_mel);
            let l_stft = mr.loss(&mut tape, y, &wav)?;
            let weighted = tape.scale(l_mel, opts.mel_weight);
            let l = tape.add(weighted, l_stft)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let b = opts.batch_size as f64;
        let loss = tape.scale(total.expect("batch_size > 0"), 1.0 / b);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!("vocoder loss became {value}"),
            });
        }
        model.store.zero_grad();
        tape.backward(loss, &mut model.store)
            .map_err(|e| Error::Training { step, detail: e.to_string() })?;
        if opts.grad_clip > 0.0 {
            model.store.clip_grad_norm(opts.grad_clip);
        }
        adam.step(&mut model.store);
        report.losses.push(value);
        report.mel_l1.push(mel_sum / b);
    }
    Ok(report)
}
