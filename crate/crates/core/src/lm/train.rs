use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::model::LanguageModel;
use crate::audio::FeatureSeq;
use crate::config::RunConfig;
use crate::dvae::{feature_stats, TokenSeq};
use crate::error::{Error, Result};
use crate::numerics::{Adam, StepDecay, Tape};

/// One training utterance: its mel frames and both token streams.
#[derive(Debug, Clone)]
pub struct LmExample {
    pub mel: FeatureSeq,
    pub phonetic: TokenSeq,
    pub acoustic: TokenSeq,
}

#[derive(Debug, Clone)]
pub struct LmTrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every_epochs: usize,
    /// Steps per epoch; zero means one pass over the corpus at `batch_size`.
    pub epoch_steps: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub prompt_secs: (f64, f64),
    pub clip_secs: (f64, f64),
}

impl LmTrainOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            steps: cfg.lm_steps,
            lr: cfg.lm_lr,
            lr_decay: cfg.lm_lr_decay,
            decay_every_epochs: cfg.lm_decay_every_epochs,
            epoch_steps: cfg.lm_epoch_steps,
            batch_size: cfg.batch_size,
            grad_clip: cfg.grad_clip,
            prompt_secs: (cfg.prompt_min_secs, cfg.prompt_max_secs),
            clip_secs: (cfg.clip_min_secs, cfg.clip_max_secs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub gen: f64,
    pub phonetic: f64,
    pub acoustic: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LmTrainReport {
    pub rows: Vec<LossRow>,
}

impl LmTrainReport {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Parse(format!("writing loss curve: {e}"));
        w.write_record(["step", "L_gen", "L_phonetic", "L_acoustic"]).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                r.gen.to_string(),
                r.phonetic.to_string(),
                r.acoustic.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

/// A prompt window and an aligned clip (phonetic and acoustic tokens covering
/// the same time span) drawn from one utterance.
#[derive(Debug, Clone)]
pub struct Segmented {
    pub prompt: FeatureSeq,
    pub phonetic: TokenSeq,
    pub acoustic: TokenSeq,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Draws prompt and clip windows; both are clamped to the utterance.
pub fn segment(ex: &LmExample, opts: &LmTrainOptions, rng: &mut impl Rng) -> Result<Segmented> {
    let frames = ex.mel.num_frames();
    let want = (uniform(rng, opts.prompt_secs) * ex.mel.frame_rate()).round() as usize;
    let p_len = want.clamp(1, frames);
    let p_start = rng.gen_range(0..=frames - p_len);
    let prompt = ex.mel.slice(p_start, p_len)?;

    let total = ex.phonetic.duration_secs().min(ex.acoustic.duration_secs());
    let dur = uniform(rng, opts.clip_secs).min(total);
    let t0 = if total > dur { rng.gen_range(0.0..=total - dur) } else { 0.0 };
    let span = |t: &TokenSeq| {
        let start = ((t0 * t.rate()).floor() as usize).min(t.len().saturating_sub(1));
        let len = ((dur * t.rate()).round() as usize).clamp(1, t.len() - start);
        t.slice(start, len)
    };
    Ok(Segmented {
        prompt,
        phonetic: span(&ex.phonetic)?,
        acoustic: span(&ex.acoustic)?,
    })
}

/// Optimizes `L_gen` over the Perceiver and language model jointly.
pub fn train_lm(
    model: &mut LanguageModel,
    corpus: &[LmExample],
    opts: &LmTrainOptions,
    rng: &mut impl Rng,
) -> Result<LmTrainReport> {
    let usable: Vec<&LmExample> = corpus
        .iter()
        .filter(|e| !e.phonetic.is_empty() && !e.acoustic.is_empty())
        .collect();
    if usable.is_empty() {
        return Err(Error::Length("no utterance has both token streams".into()));
    }
    let mels: Vec<FeatureSeq> = usable.iter().map(|e| e.mel.clone()).collect();
    let (mean, std) = feature_stats(&mels)?;
    model.perceiver.set_normalization(&mut model.store, &mean, &std)?;

    let epoch_steps = if opts.epoch_steps > 0 {
        opts.epoch_steps
    } else {
        usable.len().div_ceil(opts.batch_size.max(1))
    };
    let schedule = StepDecay {
        base_lr: opts.lr,
        gamma: opts.lr_decay,
        every: opts.decay_every_epochs.max(1),
    };
    let mut adam = Adam::new(opts.lr);
    let mut report = LmTrainReport::default();
    for step in 0..opts.steps {
        adam.lr = schedule.lr_at_epoch(step / epoch_steps);
        let mut tape = Tape::new();
        let (mut gen, mut sums) = (None, (0.0, 0.0, 0.0));
        for _ in 0..opts.batch_size {
            let ex = usable.choose(rng).expect("nonempty");
            let seg = segment(ex, opts, rng)?;
            let l = model
                .training_loss(&mut tape, &seg.prompt, &seg.phonetic, &seg.acoustic)
                .map_err(|e| match e {
                    Error::Numeric(d) => Error::Training { step, detail: d },
                    other => other,
                })?;
            sums.0 += tape.scalar(l.gen);
            sums.1 += tape.scalar(l.phonetic);
            sums.2 += tape.scalar(l.acoustic);
            gen = Some(match gen {
                None => l.gen,
                Some(g) => tape.add(g, l.gen)?,
            });
        }
        let b = opts.batch_size as f64;
        let loss = tape.scale(gen.expect("batch_size > 0"), 1.0 / b);
        model.store.zero_grad();
        tape.backward(loss, &mut model.store)
            .map_err(|e| Error::Training { step, detail: e.to_string() })?;
        if opts.grad_clip > 0.0 {
            model.store.clip_grad_norm(opts.grad_clip);
        }
        adam.step(&mut model.store);
        if !model.store.iter().all(|p| p.value.is_finite()) {
            return Err(Error::Training {
                step,
                detail: "parameters became non-finite".into(),
            });
        }
        report.rows.push(LossRow {
            step,
            gen: sums.0 / b,
            phonetic: sums.1 / b,
            acoustic: sums.2 / b,
        });
    }
    Ok(report)
}
