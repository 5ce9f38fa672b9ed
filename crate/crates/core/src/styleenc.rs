//! Perceiver prompt encoder: a fixed set of learned latent queries
//! cross-attends to a variable-length mel prompt and yields a fixed-shape
//! style embedding.

use rand::Rng;

use crate::audio::{FeatureKind, FeatureSeq};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::numerics::{NdArray, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct PerceiverConfig {
    pub in_dim: usize,
    pub d_model: usize,
    pub latents: usize,
    pub blocks: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl PerceiverConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            in_dim: cfg.mel_bins,
            d_model: cfg.d_model,
            latents: cfg.style_latents,
            blocks: cfg.perceiver_blocks,
            heads: cfg.perceiver_heads,
            head_dim: cfg.perceiver_head_dim,
        }
    }
}

/// `T_s x d_model` style representation of a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmbedding(NdArray);

impl StyleEmbedding {
    pub fn new(m: NdArray) -> Result<Self> {
        if m.shape().len() != 2 || !m.is_finite() {
            return Err(Error::Dimension(format!(
                "style embedding must be a finite matrix, got {:?}",
                m.shape()
            )));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &NdArray {
        &self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.0.rows(), self.0.cols())
    }

    /// Row-major flattening, the vector used for similarity scoring.
    pub fn flatten(&self) -> &[f64] {
        self.0.data()
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln_q: LayerNorm,
    ln_kv: LayerNorm,
    attn: MultiHeadAttention,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

/// Perceiver parameters; they live in a caller-owned store so the encoder can
/// be optimized jointly with the language model.
#[derive(Debug, Clone)]
pub struct Perceiver {
    pub config: PerceiverConfig,
    latents: ParamId,
    proj: Linear,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    feat_mean: ParamId,
    feat_std: ParamId,
}

/// Output of a traced forward pass.
pub struct PerceiverTrace {
    pub style: Var,
    /// `weights[block][head]`, each `[T_s, T_s + T_prompt]`.
    pub weights: Vec<Vec<Var>>,
}

impl Perceiver {
    pub fn new(store: &mut ParamStore, name: &str, config: PerceiverConfig, rng: &mut impl Rng) -> Self {
        let d = config.d_model;
        let latents = store.add_uniform(format!("{name}.latents"), &[config.latents, d], 1, 1.0, rng);
        let proj = Linear::new(store, &format!("{name}.proj"), config.in_dim, d, true, rng);
        let blocks = (0..config.blocks)
            .map(|i| {
                let n = format!("{name}.block{i}");
                Block {
                    ln_q: LayerNorm::new(store, &format!("{n}.ln_q"), d),
                    ln_kv: LayerNorm::new(store, &format!("{n}.ln_kv"), d),
                    attn: MultiHeadAttention::new(
                        store,
                        &format!("{n}.attn"),
                        d,
                        config.heads,
                        config.head_dim,
                        rng,
                    ),
                    ln_ff: LayerNorm::new(store, &format!("{n}.ln_ff"), d),
                    ff: FeedForward::new(store, &format!("{n}.ff"), d, 4 * d, rng),
                }
            })
            .collect();
        let ln_out = LayerNorm::new(store, &format!("{name}.ln_out"), d);
        let feat_mean = store.add_frozen(format!("{name}.feat.mean"), NdArray::zeros(&[config.in_dim]));
        let feat_std = store.add_frozen(format!("{name}.feat.std"), NdArray::full(&[config.in_dim], 1.0));
        Self {
            config,
            latents,
            proj,
            blocks,
            ln_out,
            feat_mean,
            feat_std,
        }
    }

    pub fn latents_id(&self) -> ParamId {
        self.latents
    }

    pub fn proj(&self) -> &Linear {
        &self.proj
    }

    pub fn set_normalization(&self, store: &mut ParamStore, mean: &[f64], std: &[f64]) -> Result<()> {
        let d = self.config.in_dim;
        if mean.len() != d || std.len() != d {
            return Err(Error::Dimension(format!("normalization of width {} for {d} mel bins", mean.len())));
        }
        store.get_mut(self.feat_mean).value = NdArray::new(&[d], mean.to_vec())?;
        store.get_mut(self.feat_std).value =
            NdArray::new(&[d], std.iter().map(|s| s.max(1e-5)).collect())?;
        Ok(())
    }

    /// Standardized copy of a prompt's frames, validated for kind and width.
    pub fn prepare(&self, store: &ParamStore, prompt: &FeatureSeq) -> Result<NdArray> {
        if prompt.kind() != FeatureKind::Acoustic {
            return Err(Error::Dimension("style prompts must be mel features".into()));
        }
        if prompt.dim() != self.config.in_dim {
            return Err(Error::Dimension(format!(
                "prompt of width {}, encoder expects {}",
                prompt.dim(),
                self.config.in_dim
            )));
        }
        if prompt.num_frames() == 0 {
            return Err(Error::Length("empty style prompt".into()));
        }
        let mean = store.value(self.feat_mean).data();
        let std = store.value(self.feat_std).data();
        let d = mean.len();
        let mut x = prompt.frames().clone();
        for row in x.data_mut().chunks_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - mean[j]) / std[j];
            }
        }
        Ok(x)
    }

    /// Traced forward pass on standardized prompt frames `[T, in_dim]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, prompt: Var) -> Result<PerceiverTrace> {
        let p = self.proj.forward(tape, store, prompt)?;
        let mut h = tape.param(store, self.latents);
        let mut weights = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let q = b.ln_q.forward(tape, store, h)?;
            let kv_prompt = b.ln_kv.forward(tape, store, p)?;
            let kv = tape.concat_rows(&[q, kv_prompt])?;
            let a = b.attn.forward(tape, store, q, kv, false)?;
            h = tape.add(h, a.out)?;
            let f = b.ln_ff.forward(tape, store, h)?;
            let f = b.ff.forward(tape, store, f)?;
            h = tape.add(h, f)?;
            weights.push(a.weights);
        }
        let style = self.ln_out.forward(tape, store, h)?;
        Ok(PerceiverTrace { style, weights })
    }

    /// Style embedding of a mel prompt of any length >= 1.
    pub fn encode_style(&self, store: &ParamStore, prompt: &FeatureSeq) -> Result<StyleEmbedding> {
        let x = self.prepare(store, prompt)?;
        let mut tape = Tape::new();
        let x = tape.constant(x);
        let out = self.forward(&mut tape, store, x)?;
        StyleEmbedding::new(tape.value(out.style).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(blocks: usize) -> (ParamStore, Perceiver) {
        let mut store = ParamStore::new();
        let cfg = PerceiverConfig {
            in_dim: 5,
            d_model: 8,
            latents: 32,
            blocks,
            heads: 2,
            head_dim: 4,
        };
        let p = Perceiver::new(&mut store, "perceiver", cfg, &mut ChaCha8Rng::seed_from_u64(3));
        (store, p)
    }

    fn prompt(t: usize, seed: u64) -> FeatureSeq {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t * 5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        FeatureSeq::new(NdArray::new(&[t, 5], data).unwrap(), 93.75, FeatureKind::Acoustic).unwrap()
    }

    #[test]
    fn output_shape_is_fixed() {
        let (store, p) = small(2);
        assert_eq!(p.encode_style(&store, &prompt(300, 1)).unwrap().shape(), (32, 8));
        assert_eq!(p.encode_style(&store, &prompt(1, 2)).unwrap().shape(), (32, 8));
    }

    #[test]
    fn wrong_kind_or_width_rejected() {
        let (store, p) = small(1);
        let ph = FeatureSeq::new(NdArray::zeros(&[4, 5]), 50.0, FeatureKind::Phonetic).unwrap();
        assert!(p.encode_style(&store, &ph).is_err());
        let wide = FeatureSeq::new(NdArray::zeros(&[4, 6]), 93.75, FeatureKind::Acoustic).unwrap();
        assert!(matches!(p.encode_style(&store, &wide), Err(Error::Dimension(_))));
    }

    #[test]
    fn attention_rows_are_stochastic_over_latents_and_prompt() {
        let (store, p) = small(2);
        let mut tape = Tape::new();
        let x = tape.constant(prompt(17, 4).into_frames());
        let tr = p.forward(&mut tape, &store, x).unwrap();
        for block in &tr.weights {
            for &w in block {
                let w = tape.value(w);
                assert_eq!(w.shape(), &[32, 32 + 17]);
                for i in 0..w.rows() {
                    assert!((w.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn prompt_changes_the_embedding() {
        let (store, p) = small(2);
        let a = p.encode_style(&store, &prompt(20, 5)).unwrap();
        let b = p.encode_style(&store, &prompt(20, 6)).unwrap();
        assert!(a.matrix().max_abs_diff(b.matrix()) > 1e-6);
    }

    #[test]
    fn gradients_reach_latents_and_projection() {
        let (mut store, p) = small(1);
        let frames = prompt(6, 7).into_frames();
        let err = grad_check(&mut store, 1e-5, |tape, s| {
            let x = tape.constant(frames.clone());
            let tr = p.forward(tape, s, x)?;
            let sq = tape.square(tr.style);
            let w = tape.constant(NdArray::new(&[32, 8], (0..256).map(|i| (i as f64 * 0.37).sin()).collect())?);
            let y = tape.mul(sq, w)?;
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(err < 1e-3, "max relative error {err}");

        let mut tape = Tape::new();
        let x = tape.constant(frames);
        let tr = p.forward(&mut tape, &store, x).unwrap();
        let loss = tape.sum(tr.style);
        let sq = tape.square(tr.style);
        let loss2 = tape.sum(sq);
        let total = tape.add(loss, loss2).unwrap();
        store.zero_grad();
        tape.backward(total, &mut store).unwrap();
        assert!(store.get(p.latents_id()).grad.data().iter().any(|g| g.abs() > 0.0));
        assert!(store.get(p.proj().w).grad.data().iter().any(|g| g.abs() > 0.0));
    }
}
