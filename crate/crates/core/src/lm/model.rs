use rand::Rng;

use crate::audio::FeatureSeq;
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dvae::{TokenKind, TokenSeq};
use crate::error::{Error, Result};
use crate::numerics::layers::{Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::numerics::{NdArray, ParamId, ParamStore, Tape, Var};
use crate::styleenc::{Perceiver, PerceiverConfig, StyleEmbedding};

pub const CHECKPOINT_NAME: &str = "lm";

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Phonetic codebook size `K_o` (sentinels excluded).
    pub k_phonetic: usize,
    /// Acoustic codebook size `K_a` (sentinels excluded).
    pub k_acoustic: usize,
    pub style_len: usize,
    pub max_positions: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl LmConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            d_model: cfg.d_model,
            n_layers: cfg.lm_layers,
            n_heads: cfg.lm_heads,
            k_phonetic: cfg.k_phonetic,
            k_acoustic: cfg.k_acoustic,
            style_len: cfg.style_latents,
            max_positions: cfg.max_positions,
            alpha: cfg.alpha,
            beta: cfg.beta,
        }
    }

    /// `alpha * l_phonetic + beta * l_acoustic`.
    pub fn weighted(&self, l_phonetic: f64, l_acoustic: f64) -> f64 {
        self.alpha * l_phonetic + self.beta * l_acoustic
    }

    pub fn vocab_phonetic(&self) -> usize {
        self.k_phonetic + 2
    }

    pub fn vocab_acoustic(&self) -> usize {
        self.k_acoustic + 2
    }

    pub fn o_start(&self) -> usize {
        self.k_phonetic
    }

    pub fn o_end(&self) -> usize {
        self.k_phonetic + 1
    }

    pub fn a_start(&self) -> usize {
        self.k_acoustic
    }

    pub fn a_end(&self) -> usize {
        self.k_acoustic + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Style,
    Phonetic,
    Acoustic,
}

/// `[style rows][o_s o_1..o_n o_e][a_s a_1..a_m a_e]`.
#[derive(Debug, Clone)]
pub struct PackedSequence {
    pub style: StyleEmbedding,
    /// Phonetic ids including both sentinels.
    pub phonetic: Vec<usize>,
    /// Acoustic ids including both sentinels.
    pub acoustic: Vec<usize>,
}

impl PackedSequence {
    pub fn style_len(&self) -> usize {
        self.style.shape().0
    }

    pub fn len(&self) -> usize {
        self.style_len() + self.phonetic.len() + self.acoustic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut s = vec![Segment::Style; self.style_len()];
        s.extend(std::iter::repeat(Segment::Phonetic).take(self.phonetic.len()));
        s.extend(std::iter::repeat(Segment::Acoustic).take(self.acoustic.len()));
        s
    }
}

/// Inserts sentinels and checks vocabularies and the position budget.
pub fn pack(
    cfg: &LmConfig,
    style: StyleEmbedding,
    phonetic: &TokenSeq,
    acoustic: &TokenSeq,
) -> Result<PackedSequence> {
    if style.shape() != (cfg.style_len, cfg.d_model) {
        return Err(Error::Dimension(format!(
            "style embedding {:?}, model expects ({}, {})",
            style.shape(),
            cfg.style_len,
            cfg.d_model
        )));
    }
    let (phonetic, acoustic) = packed_ids(cfg, phonetic, acoustic)?;
    Ok(PackedSequence {
        style,
        phonetic,
        acoustic,
    })
}

/// Sentinel-wrapped id lists for both segments, validated against `cfg`.
pub fn packed_ids(cfg: &LmConfig, phonetic: &TokenSeq, acoustic: &TokenSeq) -> Result<(Vec<usize>, Vec<usize>)> {
    if phonetic.kind() != TokenKind::Phonetic || phonetic.vocab() != cfg.k_phonetic {
        return Err(Error::Index(format!(
            "phonetic tokens over {} codes, model expects {}",
            phonetic.vocab(),
            cfg.k_phonetic
        )));
    }
    if acoustic.kind() != TokenKind::Acoustic || acoustic.vocab() != cfg.k_acoustic {
        return Err(Error::Index(format!(
            "acoustic tokens over {} codes, model expects {}",
            acoustic.vocab(),
            cfg.k_acoustic
        )));
    }
    if phonetic.is_empty() {
        return Err(Error::Length("no phonetic tokens to condition on".into()));
    }
    let total = cfg.style_len + phonetic.len() + 2 + acoustic.len() + 2;
    if total > cfg.max_positions {
        return Err(Error::Length(format!(
            "packed length {total} exceeds {} positions",
            cfg.max_positions
        )));
    }
    let mut p = Vec::with_capacity(phonetic.len() + 2);
    p.push(cfg.o_start());
    p.extend_from_slice(phonetic.ids());
    p.push(cfg.o_end());
    let mut a = Vec::with_capacity(acoustic.len() + 2);
    a.push(cfg.a_start());
    a.extend_from_slice(acoustic.ids());
    a.push(cfg.a_end());
    Ok((p, a))
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff: FeedForward,
}

/// Perceiver plus causal transformer with separate phonetic and acoustic
/// embeddings and prediction heads, all in one parameter store.
#[derive(Debug, Clone)]
pub struct LanguageModel {
    pub config: LmConfig,
    pub store: ParamStore,
    pub perceiver: Perceiver,
    phon_emb: Embedding,
    acou_emb: Embedding,
    style_pos: ParamId,
    phon_pos: ParamId,
    acou_pos: ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    head_p: Linear,
    head_a: Linear,
}

/// The three loss terms as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct LmLoss {
    pub gen: Var,
    pub phonetic: Var,
    pub acoustic: Var,
}

/// Traced trunk output.
pub struct Trunk {
    /// Final-layer-normalized states `[L, d_model]`.
    pub hidden: Var,
    /// `weights[layer][head]`, each `[L, L]`.
    pub weights: Vec<Vec<Var>>,
}

fn head(store: &mut ParamStore, name: &str, d: usize, v: usize, rng: &mut impl Rng) -> Linear {
    // small output weights keep the initial prediction close to uniform
    let w = store.add_uniform(format!("{name}.weight"), &[d, v], d, 0.1, rng);
    let b = Some(store.add(format!("{name}.bias"), NdArray::zeros(&[v])));
    Linear { w, b }
}

impl LanguageModel {
    pub fn new(config: LmConfig, perceiver: PerceiverConfig, rng: &mut impl Rng) -> Self {
        let mut s = ParamStore::new();
        let d = config.d_model;
        assert_eq!(perceiver.d_model, d, "perceiver width must match the LM");
        assert_eq!(perceiver.latents, config.style_len, "style length mismatch");
        let perceiver = Perceiver::new(&mut s, "perceiver", perceiver, rng);
        let emb_scale = 1.0 / (d as f64).sqrt();
        let phon_emb = Embedding::new(&mut s, "emb.phonetic", config.vocab_phonetic(), d, emb_scale, rng);
        let acou_emb = Embedding::new(&mut s, "emb.acoustic", config.vocab_acoustic(), d, emb_scale, rng);
        let style_pos = s.add_uniform("pos.style", &[config.style_len, d], 1, 0.1, rng);
        let phon_pos = s.add_uniform("pos.phonetic", &[config.max_positions, d], 1, 0.1, rng);
        let acou_pos = s.add_uniform("pos.acoustic", &[config.max_positions, d], 1, 0.1, rng);
        let head_dim = d / config.n_heads;
        let blocks = (0..config.n_layers)
            .map(|i| Block {
                ln1: LayerNorm::new(&mut s, &format!("layer{i}.ln1"), d),
                attn: MultiHeadAttention::new(&mut s, &format!("layer{i}.attn"), d, config.n_heads, head_dim, rng),
                ln2: LayerNorm::new(&mut s, &format!("layer{i}.ln2"), d),
                ff: FeedForward::new(&mut s, &format!("layer{i}.ff"), d, 4 * d, rng),
            })
            .collect();
        let ln_f = LayerNorm::new(&mut s, "ln_f", d);
        let head_p = head(&mut s, "head.phonetic", d, config.vocab_phonetic(), rng);
        let head_a = head(&mut s, "head.acoustic", d, config.vocab_acoustic(), rng);
        Self {
            config,
            store: s,
            perceiver,
            phon_emb,
            acou_emb,
            style_pos,
            phon_pos,
            acou_pos,
            blocks,
            ln_f,
            head_p,
            head_a,
        }
    }

    pub fn from_run(cfg: &RunConfig, rng: &mut impl Rng) -> Self {
        Self::new(LmConfig::from_run(cfg), PerceiverConfig::from_run(cfg), rng)
    }

    pub fn head_acoustic(&self) -> &Linear {
        &self.head_a
    }

    pub fn head_phonetic(&self) -> &Linear {
        &self.head_p
    }

    pub fn encode_style(&self, prompt: &FeatureSeq) -> Result<StyleEmbedding> {
        self.perceiver.encode_style(&self.store, prompt)
    }

    /// Style rows on the tape, computed from a mel prompt.
    pub fn style_var(&self, tape: &mut Tape, prompt: &FeatureSeq) -> Result<Var> {
        let x = self.perceiver.prepare(&self.store, prompt)?;
        let x = tape.constant(x);
        Ok(self.perceiver.forward(tape, &self.store, x)?.style)
    }

    fn positions(&self, tape: &mut Tape, table: ParamId, len: usize) -> Result<Var> {
        let t = tape.param(&self.store, table);
        tape.slice_rows(t, 0, len)
    }

    /// Causal trunk over `[style; phonetic ids; acoustic ids]`.
    pub fn trunk(&self, tape: &mut Tape, style: Var, phonetic: &[usize], acoustic: &[usize]) -> Result<Trunk> {
        let total = self.config.style_len + phonetic.len() + acoustic.len();
        if total > self.config.max_positions {
            return Err(Error::Length(format!(
                "sequence of {total} exceeds {} positions",
                self.config.max_positions
            )));
        }
        let s = &self.store;
        let sp = tape.param(s, self.style_pos);
        let xs = tape.add(style, sp)?;
        let mut parts = vec![xs];
        if !phonetic.is_empty() {
            let e = self.phon_emb.forward(tape, s, phonetic)?;
            let p = self.positions(tape, self.phon_pos, phonetic.len())?;
            parts.push(tape.add(e, p)?);
        }
        if !acoustic.is_empty() {
            let e = self.acou_emb.forward(tape, s, acoustic)?;
            let p = self.positions(tape, self.acou_pos, acoustic.len())?;
            parts.push(tape.add(e, p)?);
        }
        let mut h = tape.concat_rows(&parts)?;
        let mut weights = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let x = b.ln1.forward(tape, s, h)?;
            let a = b.attn.forward(tape, s, x, x, true)?;
            h = tape.add(h, a.out)?;
            let x = b.ln2.forward(tape, s, h)?;
            let f = b.ff.forward(tape, s, x)?;
            h = tape.add(h, f)?;
            weights.push(a.weights);
        }
        let hidden = self.ln_f.forward(tape, s, h)?;
        Ok(Trunk { hidden, weights })
    }

    pub fn phonetic_logits(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        self.head_p.forward(tape, &self.store, h)
    }

    pub fn acoustic_logits(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        self.head_a.forward(tape, &self.store, h)
    }

    /// Weighted next-token losses given style rows already on the tape.
    pub fn loss_with_style(
        &self,
        tape: &mut Tape,
        style: Var,
        phonetic: &[usize],
        acoustic: &[usize],
    ) -> Result<LmLoss> {
        let ts = self.config.style_len;
        let (n2, m2) = (phonetic.len(), acoustic.len());
        if n2 < 3 || m2 < 2 {
            return Err(Error::Length("packed segments are missing tokens or sentinels".into()));
        }
        let tr = self.trunk(tape, style, phonetic, acoustic)?;
        let hp = tape.slice_rows(tr.hidden, ts, n2 - 1)?;
        let lp = self.phonetic_logits(tape, hp)?;
        let phon = tape.cross_entropy(lp, &phonetic[1..])?;
        let ha = tape.slice_rows(tr.hidden, ts + n2, m2 - 1)?;
        let la = self.acoustic_logits(tape, ha)?;
        let acou = tape.cross_entropy(la, &acoustic[1..])?;
        let wp = tape.scale(phon, self.config.alpha);
        let wa = tape.scale(acou, self.config.beta);
        let gen = tape.add(wp, wa)?;
        let v = tape.scalar(gen);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("language model loss is {v}")));
        }
        Ok(LmLoss {
            gen,
            phonetic: phon,
            acoustic: acou,
        })
    }

    /// Losses on a packed sequence whose style is treated as a constant.
    pub fn forward_loss(&self, tape: &mut Tape, packed: &PackedSequence) -> Result<LmLoss> {
        let style = tape.constant(packed.style.matrix().clone());
        self.loss_with_style(tape, style, &packed.phonetic, &packed.acoustic)
    }

    /// Losses with the style computed from a mel prompt on the same tape, so
    /// gradients reach the Perceiver.
    pub fn training_loss(
        &self,
        tape: &mut Tape,
        prompt: &FeatureSeq,
        phonetic: &TokenSeq,
        acoustic: &TokenSeq,
    ) -> Result<LmLoss> {
        let (p, a) = packed_ids(&self.config, phonetic, acoustic)?;
        let style = self.style_var(tape, prompt)?;
        self.loss_with_style(tape, style, &p, &a)
    }

    /// Loss values `(L_gen, L_phonetic, L_acoustic)` without gradients.
    pub fn evaluate(&self, packed: &PackedSequence) -> Result<(f64, f64, f64)> {
        let mut tape = Tape::new();
        let l = self.forward_loss(&mut tape, packed)?;
        Ok((tape.scalar(l.gen), tape.scalar(l.phonetic), tape.scalar(l.acoustic)))
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
