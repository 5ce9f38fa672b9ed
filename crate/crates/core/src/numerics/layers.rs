//! Parameterized building blocks shared by the learned modules.

use rand::Rng;

use super::array::NdArray;
use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// `y = x W + b` over rows of `x: [N, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.weight"), &[d_in, d_out], d_in, 1.0, rng);
        let b = bias.then(|| store.add(format!("{name}.bias"), NdArray::zeros(&[d_out])));
        Self { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Row-wise layer normalization with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), NdArray::full(&[d], 1.0)),
            shift: store.add(format!("{name}.shift"), NdArray::zeros(&[d])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.layer_norm(x);
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.shift);
        let y = tape.mul_row(n, g)?;
        tape.add_row(y, b)
    }
}

/// Channel-major 1-D convolution layer, `[C_in, T] -> [C_out, T']`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(
            format!("{name}.weight"),
            &[c_out, c_in, kernel],
            c_in * kernel,
            1.0,
            rng,
        );
        let b = store.add(format!("{name}.bias"), NdArray::zeros(&[c_out]));
        Self {
            w,
            b,
            stride,
            padding,
            dilation,
        }
    }

    /// Stride 1 with "same" padding for odd kernels.
    pub fn same(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let padding = dilation * (kernel - 1) / 2;
        Self::new(store, name, c_in, c_out, kernel, 1, padding, dilation, rng)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv1d(x, w, Some(b), self.stride, self.padding, self.dilation)
    }
}

/// Transposed convolution that upsamples time by `stride`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose1d {
    /// Kernel `2 * stride` with padding `stride / 2`: output length is exactly
    /// `stride * T` for even strides.
    pub fn upsampler(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(stride % 2 == 0, "upsampler stride must be even");
        let kernel = 2 * stride;
        // fan-in of a transposed conv is C_in * K / stride per output sample
        let w = store.add_uniform(
            format!("{name}.weight"),
            &[c_in, c_out, kernel],
            c_in * kernel / stride,
            1.0,
            rng,
        );
        let b = store.add(format!("{name}.bias"), NdArray::zeros(&[c_out]));
        Self {
            w,
            b,
            stride,
            padding: stride / 2,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.conv_transpose1d(x, w, Some(b), self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        d: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let data = (0..vocab * d).map(|_| rng.gen_range(-scale..scale)).collect();
        let table = store.add(
            format!("{name}.table"),
            NdArray::new(&[vocab, d], data).expect("shape"),
        );
        Self { table }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        let t = tape.param(store, self.table);
        tape.gather(t, ids)
    }
}

/// Multi-head scaled dot-product attention with separate query and key/value inputs.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
    pub head_dim: usize,
}

/// Attention output plus per-head weight matrices (rows: queries, cols: keys).
pub struct AttentionOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        head_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let inner = n_heads * head_dim;
        Self {
            q: Linear::new(store, &format!("{name}.q"), d_model, inner, true, rng),
            k: Linear::new(store, &format!("{name}.k"), d_model, inner, true, rng),
            v: Linear::new(store, &format!("{name}.v"), d_model, inner, true, rng),
            o: Linear::new(store, &format!("{name}.o"), inner, d_model, true, rng),
            n_heads,
            head_dim,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        queries: Var,
        keys_values: Var,
        causal: bool,
    ) -> Result<AttentionOutput> {
        let q = self.q.forward(tape, store, queries)?;
        let k = self.k.forward(tape, store, keys_values)?;
        let v = self.v.forward(tape, store, keys_values)?;
        let kt = tape.transpose(k)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let off = h * self.head_dim;
            let qh = tape.slice_cols(q, off, self.head_dim)?;
            let kh = tape.slice_rows(kt, off, self.head_dim)?;
            let vh = tape.slice_cols(v, off, self.head_dim)?;
            let scores = tape.matmul(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let w = if causal {
                tape.causal_softmax(scores)
            } else {
                tape.softmax(scores)
            };
            heads.push(tape.matmul(w, vh)?);
            weights.push(w);
        }
        let merged = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let out = self.o.forward(tape, store, merged)?;
        Ok(AttentionOutput { out, weights })
    }
}

/// Two-layer GELU feed-forward block.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), d_model, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, d_model, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, store, h)
    }
}
