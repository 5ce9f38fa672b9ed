use rand::seq::SliceRandom;
use rand::Rng;

use super::model::{DvaeModel, DOWNSAMPLE};
use crate::audio::FeatureSeq;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::{Adam, NdArray, Tape};

#[derive(Debug, Clone)]
pub struct DvaeTrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_clip_secs: f64,
    pub grad_clip: f64,
    /// Codes unused over this many steps are moved onto recent encoder
    /// outputs (during the first half of training only). Zero disables.
    pub restart_every: usize,
}

impl DvaeTrainOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            steps: cfg.dvae_steps,
            lr: cfg.dvae_lr,
            batch_size: cfg.batch_size,
            max_clip_secs: cfg.dvae_max_clip_secs,
            grad_clip: cfg.grad_clip,
            restart_every: 100,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DvaeTrainReport {
    /// Total loss per step.
    pub losses: Vec<f64>,
    /// Reconstruction term per step.
    pub recon: Vec<f64>,
    /// Distinct codes used on the training corpus after training.
    pub codes_used: usize,
}

/// Per-dimension mean and standard deviation over every frame of a corpus.
pub fn feature_stats(corpus: &[FeatureSeq]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = corpus
        .first()
        .ok_or_else(|| Error::Length("empty feature corpus".into()))?;
    let d = first.dim();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut n = 0usize;
    for f in corpus {
        if f.dim() != d {
            return Err(Error::Dimension(format!("feature widths {} and {d}", f.dim())));
        }
        for row in f.frames().data().chunks(d) {
            for j in 0..d {
                sum[j] += row[j];
                sq[j] += row[j] * row[j];
            }
        }
        n += f.num_frames();
    }
    let n = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
        .collect();
    Ok((mean, std))
}

fn random_window(f: &FeatureSeq, max_frames: usize, rng: &mut impl Rng) -> Option<NdArray> {
    let t = f.num_frames().min(max_frames) / DOWNSAMPLE * DOWNSAMPLE;
    if t == 0 {
        return None;
    }
    let start = rng.gen_range(0..=f.num_frames() - t);
    Some(f.slice(start, t).ok()?.into_frames())
}

fn all_latents(model: &DvaeModel, corpus: &[FeatureSeq]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for f in corpus.iter().filter(|f| f.num_frames() >= DOWNSAMPLE) {
        let z = model.encode_latents(f)?;
        out.extend((0..z.rows()).map(|i| z.row(i).to_vec()));
    }
    Ok(out)
}

/// Places every codebook entry on a (jittered) encoder output.
fn init_codebook(model: &mut DvaeModel, corpus: &[FeatureSeq], rng: &mut impl Rng) -> Result<()> {
    let latents = all_latents(model, corpus)?;
    if latents.is_empty() {
        return Ok(());
    }
    let id = model.codebook_id();
    let mut cb = model.store.value(id).clone();
    let (n, d) = (cb.rows(), cb.cols());
    let scale = latents.iter().flatten().map(|v| v.abs()).sum::<f64>() / (latents.len() * d) as f64;
    for (k, row) in cb.data_mut().chunks_mut(d).enumerate() {
        let src = if n <= latents.len() {
            &latents[k * latents.len() / n]
        } else {
            &latents[rng.gen_range(0..latents.len())]
        };
        for (r, s) in row.iter_mut().zip(src) {
            *r = s + 0.01 * scale * rng.gen_range(-1.0..1.0);
        }
    }
    model.store.get_mut(id).value = cb;
    Ok(())
}

/// Trains a DVAE on feature sequences; the model's normalization buffers are
/// set from the corpus before the first step.
pub fn train_dvae(
    model: &mut DvaeModel,
    corpus: &[FeatureSeq],
    opts: &DvaeTrainOptions,
    rng: &mut impl Rng,
) -> Result<DvaeTrainReport> {
    let usable: Vec<&FeatureSeq> = corpus
        .iter()
        .filter(|f| f.num_frames() >= DOWNSAMPLE)
        .collect();
    if usable.is_empty() {
        return Err(Error::Length("no utterance long enough to train on".into()));
    }
    let (mean, std) = feature_stats(corpus)?;
    model.set_normalization(&mean, &std)?;
    init_codebook(model, corpus, rng)?;

    let max_frames = ((opts.max_clip_secs * model.config.frame_rate) as usize).max(DOWNSAMPLE);
    let mut adam = Adam::new(opts.lr);
    let mut report = DvaeTrainReport::default();
    let k = model.config.num_codes;
    let mut hits = vec![0usize; k];
    let mut recent: Vec<Vec<f64>> = Vec::new();

    for step in 0..opts.steps {
        let mut tape = Tape::new();
        let mut totals = Vec::new();
        let mut recons = Vec::new();
        for _ in 0..opts.batch_size {
            let f = usable.choose(rng).expect("nonempty");
            let Some(window) = random_window(f, max_frames, rng) else {
                continue;
            };
            let l = model.loss(&mut tape, &window)?;
            for &i in &l.ids {
                hits[i] += 1;
            }
            totals.push(l.total);
            recons.push(tape.scalar(l.recon));
        }
        let mut loss = totals[0];
        for &t in &totals[1..] {
            loss = tape.add(loss, t)?;
        }
        let loss = tape.scale(loss, 1.0 / totals.len() as f64);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!("loss became {value}"),
            });
        }
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
        report.losses.push(value);
        report.recon.push(recons.iter().sum::<f64>() / recons.len() as f64);

        if opts.restart_every > 0 && step < opts.steps / 2 {
            if recent.len() < 4 * k {
                let f = usable.choose(rng).expect("nonempty");
                let z = model.encode_latents(f)?;
                recent.extend((0..z.rows()).map(|i| z.row(i).to_vec()));
            }
            if (step + 1) % opts.restart_every == 0 {
                restart_dead_codes(model, &hits, &recent, rng);
                hits.iter_mut().for_each(|h| *h = 0);
                recent.clear();
            }
        }
    }

    let mut used = vec![false; k];
    for f in &usable {
        for i in model.encode(f)?.ids() {
            used[*i] = true;
        }
    }
    report.codes_used = used.iter().filter(|&&u| u).count();
    Ok(report)
}

fn restart_dead_codes(model: &mut DvaeModel, hits: &[usize], recent: &[Vec<f64>], rng: &mut impl Rng) {
    if recent.is_empty() {
        return;
    }
    let id = model.codebook_id();
    let mut cb = model.store.value(id).clone();
    let d = cb.cols();
    // only move codes when some live code is overloaded; otherwise the spare
    // entries are simply unused capacity
    let live = hits.iter().filter(|&&h| h > 0).count().max(1);
    let total: usize = hits.iter().sum();
    let busiest = hits.iter().copied().max().unwrap_or(0);
    if busiest * live <= 2 * total {
        return;
    }
    for (k, &h) in hits.iter().enumerate() {
        if h == 0 {
            let src = &recent[rng.gen_range(0..recent.len())];
            cb.data_mut()[k * d..(k + 1) * d].copy_from_slice(src);
        }
    }
    model.store.get_mut(id).value = cb;
}
