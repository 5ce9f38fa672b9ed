use rand::Rng;

use super::quantize::nearest_codes;
use super::tokens::{TokenKind, TokenSeq};
use crate::audio::{FeatureKind, FeatureSeq};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::layers::{Conv1d, ConvTranspose1d};
use crate::numerics::{NdArray, ParamId, ParamStore, Tape, Var};

/// Temporal compression of the encoder (two stride-2 stages).
pub const DOWNSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DvaeConfig {
    pub kind: FeatureKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub code_dim: usize,
    pub num_codes: usize,
    pub resblocks: usize,
    pub commitment_weight: f64,
    /// Frame rate of the input features.
    pub frame_rate: f64,
}

impl DvaeConfig {
    pub fn phonetic(cfg: &RunConfig) -> Self {
        Self {
            kind: FeatureKind::Phonetic,
            in_dim: cfg.phonetic_dim,
            hidden: cfg.dvae_hidden,
            code_dim: cfg.code_dim,
            num_codes: cfg.k_phonetic,
            resblocks: cfg.dvae_resblocks,
            commitment_weight: cfg.commitment_weight,
            frame_rate: 50.0,
        }
    }

    pub fn acoustic(cfg: &RunConfig) -> Self {
        Self {
            kind: FeatureKind::Acoustic,
            in_dim: cfg.mel_bins,
            hidden: cfg.dvae_hidden,
            code_dim: cfg.code_dim,
            num_codes: cfg.k_acoustic,
            resblocks: cfg.dvae_resblocks,
            commitment_weight: cfg.commitment_weight,
            frame_rate: cfg.mel().frame_rate(),
        }
    }

    pub fn token_kind(&self) -> TokenKind {
        match self.kind {
            FeatureKind::Phonetic => TokenKind::Phonetic,
            FeatureKind::Acoustic => TokenKind::Acoustic,
        }
    }

    pub fn token_rate(&self) -> f64 {
        self.frame_rate / DOWNSAMPLE as f64
    }

    pub fn checkpoint_name(&self) -> &'static str {
        match self.kind {
            FeatureKind::Phonetic => "dvae-phonetic",
            FeatureKind::Acoustic => "dvae-acoustic",
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    c1: Conv1d,
    c2: Conv1d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            c1: Conv1d::same(store, &format!("{name}.c1"), ch, ch, 3, 1, rng),
            c2: Conv1d::same(store, &format!("{name}.c2"), ch, ch, 3, 1, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = tape.relu(x);
        let h = self.c1.forward(tape, store, h)?;
        let h = tape.relu(h);
        let h = self.c2.forward(tape, store, h)?;
        tape.add(x, h)
    }
}

/// Convolutional encoder, nearest-neighbor codebook and mirrored decoder.
#[derive(Debug, Clone)]
pub struct DvaeModel {
    pub config: DvaeConfig,
    pub store: ParamStore,
    enc_in: [Conv1d; 2],
    enc_res: Vec<ResBlock>,
    enc_out: Conv1d,
    codebook: ParamId,
    dec_in: Conv1d,
    dec_res: Vec<ResBlock>,
    dec_up: [ConvTranspose1d; 2],
    feat_mean: ParamId,
    feat_std: ParamId,
}

/// Loss terms of one training forward pass.
pub struct DvaeLoss {
    pub total: Var,
    pub recon: Var,
    pub commitment: Var,
    pub codebook: Var,
    pub ids: Vec<usize>,
}

impl DvaeModel {
    pub fn new(config: DvaeConfig, rng: &mut impl Rng) -> Self {
        let mut s = ParamStore::new();
        let (d, h, c) = (config.in_dim, config.hidden, config.code_dim);
        let enc_in = [
            Conv1d::new(&mut s, "enc.in0", d, h, 3, 2, 1, 1, rng),
            Conv1d::new(&mut s, "enc.in1", h, h, 3, 2, 1, 1, rng),
        ];
        let enc_res = (0..config.resblocks)
            .map(|i| ResBlock::new(&mut s, &format!("enc.res{i}"), h, rng))
            .collect();
        let enc_out = Conv1d::new(&mut s, "enc.out", h, c, 1, 1, 0, 1, rng);
        let cb_data = (0..config.num_codes * c)
            .map(|_| rng.gen_range(-1.0..1.0) / (c as f64).sqrt())
            .collect();
        let codebook = s.add(
            "codebook",
            NdArray::new(&[config.num_codes, c], cb_data).expect("shape"),
        );
        let dec_in = Conv1d::new(&mut s, "dec.in", c, h, 1, 1, 0, 1, rng);
        let dec_res = (0..config.resblocks)
            .map(|i| ResBlock::new(&mut s, &format!("dec.res{i}"), h, rng))
            .collect();
        let dec_up = [
            ConvTranspose1d::upsampler(&mut s, "dec.up0", h, h, 2, rng),
            ConvTranspose1d::upsampler(&mut s, "dec.up1", h, d, 2, rng),
        ];
        let feat_mean = s.add_frozen("feat.mean", NdArray::zeros(&[d]));
        let feat_std = s.add_frozen("feat.std", NdArray::full(&[d], 1.0));
        Self {
            config,
            store: s,
            enc_in,
            enc_res,
            enc_out,
            codebook,
            dec_in,
            dec_res,
            dec_up,
            feat_mean,
            feat_std,
        }
    }

    pub fn codebook(&self) -> &NdArray {
        self.store.value(self.codebook)
    }

    pub fn codebook_id(&self) -> ParamId {
        self.codebook
    }

    /// Per-dimension statistics used to standardize encoder input.
    pub fn set_normalization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let d = self.config.in_dim;
        if mean.len() != d || std.len() != d {
            return Err(Error::Dimension(format!(
                "normalization of width {} for {d} features",
                mean.len()
            )));
        }
        self.store.get_mut(self.feat_mean).value = NdArray::new(&[d], mean.to_vec())?;
        let std = std.iter().map(|s| s.max(1e-5)).collect();
        self.store.get_mut(self.feat_std).value = NdArray::new(&[d], std)?;
        Ok(())
    }

    fn normalize(&self, frames: &NdArray) -> NdArray {
        let mean = self.store.value(self.feat_mean).data();
        let std = self.store.value(self.feat_std).data();
        let d = mean.len();
        let mut out = frames.clone();
        for row in out.data_mut().chunks_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - mean[j]) / std[j];
            }
        }
        out
    }

    fn denormalize(&self, frames: &NdArray) -> NdArray {
        let mean = self.store.value(self.feat_mean).data();
        let std = self.store.value(self.feat_std).data();
        let d = mean.len();
        let mut out = frames.clone();
        for row in out.data_mut().chunks_mut(d) {
            for j in 0..d {
                row[j] = row[j] * std[j] + mean[j];
            }
        }
        out
    }

    fn usable_frames(&self, frames: &NdArray) -> Result<NdArray> {
        let (t, d) = (frames.rows(), frames.cols());
        if d != self.config.in_dim {
            return Err(Error::Dimension(format!(
                "features of width {d}, model expects {}",
                self.config.in_dim
            )));
        }
        if t < DOWNSAMPLE {
            return Err(Error::Length(format!(
                "{t} frames is fewer than the {DOWNSAMPLE} needed for one token"
            )));
        }
        let keep = t / DOWNSAMPLE * DOWNSAMPLE;
        NdArray::new(&[keep, d], frames.data()[..keep * d].to_vec())
    }

    /// Encoder on standardized time-major frames `[T, d]`, returns `[T/4, D]`.
    pub fn encoder(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let s = &self.store;
        let mut h = tape.transpose(x)?;
        h = self.enc_in[0].forward(tape, s, h)?;
        h = tape.relu(h);
        h = self.enc_in[1].forward(tape, s, h)?;
        for r in &self.enc_res {
            h = r.forward(tape, s, h)?;
        }
        h = tape.relu(h);
        h = self.enc_out.forward(tape, s, h)?;
        tape.transpose(h)
    }

    /// Decoder from quantized rows `[t, D]` to standardized frames `[4t, d]`.
    pub fn decoder(&self, tape: &mut Tape, q: Var) -> Result<Var> {
        let s = &self.store;
        let mut h = tape.transpose(q)?;
        h = self.dec_in.forward(tape, s, h)?;
        for r in &self.dec_res {
            h = r.forward(tape, s, h)?;
        }
        h = tape.relu(h);
        h = self.dec_up[0].forward(tape, s, h)?;
        h = tape.relu(h);
        h = self.dec_up[1].forward(tape, s, h)?;
        tape.transpose(h)
    }

    /// Continuous encoder outputs `[floor(T/4), D]` before quantization.
    pub fn encode_latents(&self, f: &FeatureSeq) -> Result<NdArray> {
        self.check_kind(f)?;
        let frames = self.usable_frames(f.frames())?;
        let mut tape = Tape::new();
        let x = tape.constant(self.normalize(&frames));
        let z = self.encoder(&mut tape, x)?;
        Ok(tape.value(z).clone())
    }

    fn check_kind(&self, f: &FeatureSeq) -> Result<()> {
        if f.kind() != self.config.kind {
            return Err(Error::Dimension(format!(
                "{:?} features given to the {:?} DVAE",
                f.kind(),
                self.config.kind
            )));
        }
        Ok(())
    }

    /// Tokens for `floor(T/4)` frame groups (input right-truncated to a multiple of 4).
    pub fn encode(&self, f: &FeatureSeq) -> Result<TokenSeq> {
        let z = self.encode_latents(f)?;
        let ids = nearest_codes(self.codebook(), &z);
        TokenSeq::new(
            ids,
            self.config.num_codes,
            f.frame_rate() / DOWNSAMPLE as f64,
            self.config.token_kind(),
        )
    }

    /// Reconstructs `4 * len` feature frames from tokens.
    pub fn decode(&self, t: &TokenSeq) -> Result<FeatureSeq> {
        if t.is_empty() {
            return Err(Error::Length("cannot decode zero tokens".into()));
        }
        if let Some(&bad) = t.ids().iter().find(|&&i| i >= self.config.num_codes) {
            return Err(Error::Index(format!(
                "token {bad} for codebook of {}",
                self.config.num_codes
            )));
        }
        let mut tape = Tape::new();
        let cb = tape.param(&self.store, self.codebook);
        let q = tape.gather(cb, t.ids())?;
        let y = self.decoder(&mut tape, q)?;
        let frames = self.denormalize(tape.value(y));
        FeatureSeq::new(frames, t.rate() * DOWNSAMPLE as f64, self.config.kind)
    }

    /// `decode(encode(f))`.
    pub fn reconstruct(&self, f: &FeatureSeq) -> Result<FeatureSeq> {
        self.decode(&self.encode(f)?)
    }

    /// Reconstruction + codebook + weighted commitment loss on raw frames `[T, d]`
    /// (`T` a multiple of 4). Reconstruction is measured on standardized features.
    pub fn loss(&self, tape: &mut Tape, frames: &NdArray) -> Result<DvaeLoss> {
        let frames = self.usable_frames(frames)?;
        let x = tape.constant(self.normalize(&frames));
        let z = self.encoder(tape, x)?;
        let ids = nearest_codes(self.codebook(), tape.value(z));
        let cb = tape.param(&self.store, self.codebook);
        let q = tape.gather(cb, &ids)?;
        // straight-through: forward value q, gradient passed to z unchanged
        let diff = tape.sub(q, z)?;
        let diff = tape.detach(diff);
        let st = tape.add(z, diff)?;
        let recon_out = self.decoder(tape, st)?;
        let recon = tape.mse(recon_out, x)?;
        let z_sg = tape.detach(z);
        let codebook = tape.mse(q, z_sg)?;
        let q_sg = tape.detach(q);
        let commitment = tape.mse(z, q_sg)?;
        let c = tape.scale(commitment, self.config.commitment_weight);
        let t1 = tape.add(recon, codebook)?;
        let total = tape.add(t1, c)?;
        Ok(DvaeLoss {
            total,
            recon,
            commitment,
            codebook,
            ids,
        })
    }

    pub fn to_checkpoint(&self, cfg: &RunConfig) -> Checkpoint {
        Checkpoint::from_store(self.config.checkpoint_name(), cfg, &self.store)
    }

    pub fn from_checkpoint(ck: &Checkpoint, kind: FeatureKind) -> Result<Self> {
        let cfg = &ck.header.config;
        let config = match kind {
            FeatureKind::Phonetic => DvaeConfig::phonetic(cfg),
            FeatureKind::Acoustic => DvaeConfig::acoustic(cfg),
        };
        ck.expect_model(config.checkpoint_name())?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut m = Self::new(config, &mut rng);
        m.store.load_values(&ck.params)?;
        Ok(m)
    }
}
