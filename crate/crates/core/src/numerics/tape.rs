//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to apply its vector-Jacobian product. [`Tape::backward`] walks the
//! nodes in reverse insertion order, which is a valid reverse topological
//! order because inputs are always recorded before their consumers.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::array::{gemm, MatRef, NdArray};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    LayerNorm {
        x: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    Gelu(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sqrt(Var),
    LogClamp(Var, f64),
    Abs(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    IndexSelect {
        x: Var,
        idx: Vec<usize>,
    },
    WindowedDft {
        x: Var,
        window: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    c_out: usize,
    t_in: usize,
    t_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
}

#[derive(Debug)]
struct Node {
    value: NdArray,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Output length of a 1-D convolution, or `None` when it would be nonpositive.
pub fn conv1d_out_len(
    t_in: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = t_in + 2 * padding;
    if padded < span || stride == 0 {
        return None;
    }
    Some((padded - span) / stride + 1)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: NdArray, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Records a parameter leaf; its gradient is routed back by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Differentiable leaf not tied to a parameter.
    pub fn input(&mut self, value: NdArray) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: NdArray) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies a value into a gradient-blocking leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = NdArray::new(va.shape(), data).expect("same shape");
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    fn row_broadcast(&self, x: Var, r: Var, what: &str) -> Result<usize> {
        let d = self.value(x).cols();
        if self.value(r).len() != d {
            return Err(Error::Dimension(format!(
                "{what} of {:?} with row vector {:?}",
                self.shape(x),
                self.shape(r)
            )));
        }
        Ok(d)
    }

    /// `x + b` with `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = self.row_broadcast(x, b, "add_row")?;
        let bv = self.value(b).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(d) {
            row.iter_mut().zip(&bv).for_each(|(v, b)| *v += b);
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(value, Op::AddRow(x, b), rg))
    }

    /// `x * g` with `g` broadcast over the rows of `x`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let d = self.row_broadcast(x, g, "mul_row")?;
        let gv = self.value(g).data().to_vec();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(d) {
            row.iter_mut().zip(&gv).for_each(|(v, g)| *v *= g);
        }
        let rg = self.rg(&[x, g]);
        Ok(self.push(value, Op::MulRow(x, g), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `s * x + shift`.
    pub fn affine(&mut self, x: Var, s: f64, shift: f64) -> Var {
        self.unary(x, Op::Affine(x, s), |v| s * v + shift)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::array::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::Dimension(format!(
                "transpose of {:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).transpose();
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// 1-D convolution of `x: [C_in, T]` with `w: [C_out, C_in, K]` and optional bias `[C_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] {
            return Err(Error::Dimension(format!(
                "conv1d input {xs:?} with kernel {ws:?}"
            )));
        }
        let (c_in, t_in, c_out, kernel) = (xs[0], xs[1], ws[0], ws[2]);
        let t_out = conv1d_out_len(t_in, kernel, stride, padding, dilation).ok_or_else(|| {
            Error::Dimension(format!(
                "conv1d output length nonpositive: T={t_in}, kernel={kernel}, stride={stride}, padding={padding}, dilation={dilation}"
            ))
        })?;
        let geom = ConvGeom {
            c_in,
            c_out,
            t_in,
            t_out,
            kernel,
            stride,
            padding,
            dilation,
        };
        let xv = self.value(x).data();
        let rows = c_in * kernel;
        let mut cols = vec![0.0; rows * t_out];
        for ci in 0..c_in {
            for k in 0..kernel {
                let r = ci * kernel + k;
                for t in 0..t_out {
                    let src = (t * stride + k * dilation) as isize - padding as isize;
                    if src >= 0 && (src as usize) < t_in {
                        cols[r * t_out + t] = xv[ci * t_in + src as usize];
                    }
                }
            }
        }
        let mut out = vec![0.0; c_out * t_out];
        gemm(
            MatRef::new(self.value(w).data(), c_out, rows),
            MatRef::new(&cols, rows, t_out),
            &mut out,
            0.0,
        );
        if let Some(b) = b {
            self.add_bias_channels(&mut out, b, c_out, t_out)?;
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        let value = NdArray::new(&[c_out, t_out], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                cols,
            },
            rg,
        ))
    }

    fn add_bias_channels(&self, out: &mut [f64], b: Var, c: usize, t: usize) -> Result<()> {
        let bv = self.value(b).data();
        if bv.len() != c {
            return Err(Error::Dimension(format!(
                "bias {:?} for {c} channels",
                self.shape(b)
            )));
        }
        for (ch, row) in out.chunks_mut(t).enumerate() {
            row.iter_mut().for_each(|v| *v += bv[ch]);
        }
        Ok(())
    }

    /// Transposed 1-D convolution of `x: [C_in, T]` with `w: [C_in, C_out, K]`.
    /// Output length is `(T - 1) * stride - 2 * padding + K`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 2 || ws.len() != 3 || ws[0] != xs[0] {
            return Err(Error::Dimension(format!(
                "conv_transpose1d input {xs:?} with kernel {ws:?}"
            )));
        }
        let (c_in, t_in, c_out, kernel) = (xs[0], xs[1], ws[1], ws[2]);
        let full = (t_in - 1) * stride + kernel;
        if full <= 2 * padding {
            return Err(Error::Dimension(format!(
                "conv_transpose1d output length nonpositive for T={t_in}"
            )));
        }
        let t_out = full - 2 * padding;
        let geom = ConvGeom {
            c_in,
            c_out,
            t_in,
            t_out,
            kernel,
            stride,
            padding,
            dilation: 1,
        };
        let rows = c_out * kernel;
        let mut cols = vec![0.0; rows * t_in];
        gemm(
            MatRef::new(self.value(w).data(), c_in, rows).t(),
            MatRef::new(self.value(x).data(), c_in, t_in),
            &mut cols,
            0.0,
        );
        let mut out = vec![0.0; c_out * t_out];
        for co in 0..c_out {
            for k in 0..kernel {
                let r = co * kernel + k;
                for t in 0..t_in {
                    let dst = (t * stride + k) as isize - padding as isize;
                    if dst >= 0 && (dst as usize) < t_out {
                        out[co * t_out + dst as usize] += cols[r * t_in + t];
                    }
                }
            }
        }
        if let Some(b) = b {
            self.add_bias_channels(&mut out, b, c_out, t_out)?;
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        let value = NdArray::new(&[c_out, t_out], out)?;
        Ok(self.push(value, Op::ConvTranspose1d { x, w, b, geom }, rg))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.cols();
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for (r, row) in xv.data().chunks(d).enumerate() {
            // shifting by the first element keeps constant rows exactly zero
            let x0 = row[0];
            let mean = x0 + row.iter().map(|v| v - x0).sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for (o, v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let value = NdArray::new(xv.shape(), xhat.clone()).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(value, Op::LayerNorm { x, xhat, rstd }, rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        self.softmax_impl(x, false)
    }

    /// Row-wise softmax where row `i` only sees columns `j <= i + (cols - rows)`.
    pub fn causal_softmax(&mut self, x: Var) -> Var {
        self.softmax_impl(x, true)
    }

    fn softmax_impl(&mut self, x: Var, causal: bool) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let r = xv.len() / c;
        let offset = c as isize - r as isize;
        let mut out = vec![0.0; xv.len()];
        for (i, row) in xv.data().chunks(c).enumerate() {
            let limit = if causal {
                ((i as isize + offset + 1).clamp(1, c as isize)) as usize
            } else {
                c
            };
            let o = &mut out[i * c..(i + 1) * c];
            softmax_into(&row[..limit], &mut o[..limit]);
        }
        let value = NdArray::new(xv.shape(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(value, Op::Softmax(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), |v| {
            0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), move |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    /// `ln(max(x, floor))`; gradient is zero where the floor is active.
    pub fn log_clamp(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, Op::LogClamp(x, floor), move |v| v.max(floor).ln())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("same shape")
    }

    /// Embedding lookup: rows `ids` of `table: [V, D]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        if ids.is_empty() {
            return Err(Error::Length("gather with no ids".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index(format!("id {id} for table of {v} rows")));
            }
            out.extend_from_slice(tv.row(id));
        }
        let value = NdArray::new(&[ids.len(), d], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Flat gather: `out.flat[j] = x.flat[idx[j]]`, reshaped to `shape`.
    pub fn index_select(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x).data();
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.len()) {
            return Err(Error::Index(format!("flat index {bad} of {}", xv.len())));
        }
        let data = idx.iter().map(|&i| xv[i]).collect();
        let value = NdArray::new(shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::IndexSelect { x, idx }, rg))
    }

    /// Real DFT of each windowed row of `x: [F, n]`, giving `[F, 2 * (n/2 + 1)]`
    /// with real parts first and imaginary parts second.
    pub fn windowed_dft(&mut self, x: Var, window: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        let n = window.len();
        if xv.shape().len() != 2 || xv.cols() != n || n == 0 {
            return Err(Error::Dimension(format!(
                "windowed DFT of {:?} with a {n}-point window",
                xv.shape()
            )));
        }
        let bins = n / 2 + 1;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut out = Vec::with_capacity(xv.rows() * 2 * bins);
        for row in xv.data().chunks(n) {
            for ((b, &v), &w) in buf.iter_mut().zip(row).zip(window) {
                *b = Complex::new(v * w, 0.0);
            }
            fft.process(&mut buf);
            out.extend(buf[..bins].iter().map(|c| c.re));
            out.extend(buf[..bins].iter().map(|c| c.im));
        }
        let value = NdArray::new(&[xv.rows(), 2 * bins], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(
            value,
            Op::WindowedDft {
                x,
                window: window.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let d = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.cols() != d {
                return Err(Error::Dimension(format!(
                    "concat_rows of width {d} with {:?}",
                    v.shape()
                )));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = NdArray::new(&[rows, d], data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() || len == 0 {
            return Err(Error::Index(format!(
                "rows {start}..{} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let d = xv.cols();
        let data = xv.data()[start * d..(start + len) * d].to_vec();
        let value = NdArray::new(&[len, d], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceRows { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(Error::Dimension("concat_cols with differing row counts".into()));
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p).data();
            for i in 0..r {
                data[i * total + off..i * total + off + w].copy_from_slice(&v[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let value = NdArray::new(&[r, total], data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if start + len > c || len == 0 {
            return Err(Error::Index(format!(
                "cols {start}..{} of {:?}",
                start + len,
                xv.shape()
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in xv.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let value = NdArray::new(&[r, len], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SliceCols { x, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = NdArray::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = NdArray::scalar(self.value(x).mean());
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// Mean over rows of `-log softmax(logits[i])[targets[i]]`, max-subtracted.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let v = lv.cols();
        let n = lv.len() / v;
        if targets.len() != n {
            return Err(Error::Dimension(format!(
                "{} targets for {n} logit rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index(format!("target {bad} for vocabulary of {v}")));
        }
        let mut probs = vec![0.0; lv.len()];
        let mut total = 0.0;
        for (i, row) in lv.data().chunks(v).enumerate() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[targets[i]];
            for (p, x) in probs[i * v..(i + 1) * v].iter_mut().zip(row) {
                *p = (x - lse).exp();
            }
        }
        let value = NdArray::scalar(total / n as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let ab = self.abs(d);
        Ok(self.mean(ab))
    }

    /// Back-propagates from a scalar `loss`, accumulating into the gradients
    /// of every parameter leaf, and returns all node gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Grads> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.0) {
            if let (Some(pid), Some(g)) = (node.param, g) {
                let p = store.get_mut(pid);
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
        }
        Ok(grads)
    }

    /// Gradients of a scalar `loss` with respect to every node.
    pub fn gradients(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {}", lv.data()[0])));
        }
        let mut grads: Vec<Option<NdArray>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(NdArray::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads(grads))
    }

    fn backprop_node(&self, i: usize, g: &NdArray, grads: &mut [Option<NdArray>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, delta: NdArray| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, vb, |g, y| g * y));
                acc(*b, zip_map(g, va, |g, x| g * x));
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                let d = self.value(*b).len();
                let mut gb = vec![0.0; d];
                for row in gd.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                acc(*b, NdArray::new(self.shape(*b), gb).expect("shape"));
            }
            Op::MulRow(x, r) => {
                let rv = self.value(*r).data();
                let d = rv.len();
                let xv = self.value(*x).data();
                let mut gx = g.clone();
                for row in gx.data_mut().chunks_mut(d) {
                    row.iter_mut().zip(rv).for_each(|(v, s)| *v *= s);
                }
                acc(*x, gx);
                let mut gr = vec![0.0; d];
                for (grow, xrow) in gd.chunks(d).zip(xv.chunks(d)) {
                    for j in 0..d {
                        gr[j] += grow[j] * xrow[j];
                    }
                }
                acc(*r, NdArray::new(self.shape(*r), gr).expect("shape"));
            }
            Op::Affine(x, s) => acc(*x, g.map(|v| v * s)),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        MatRef::new(gd, m, n),
                        MatRef::new(vb.data(), k, n).t(),
                        &mut ga,
                        0.0,
                    );
                    acc(*a, NdArray::new(&[m, k], ga).expect("shape"));
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        MatRef::new(va.data(), m, k).t(),
                        MatRef::new(gd, m, n),
                        &mut gb,
                        0.0,
                    );
                    acc(*b, NdArray::new(&[k, n], gb).expect("shape"));
                }
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::Reshape(x) => acc(*x, g.clone().reshape(self.shape(*x)).expect("shape")),
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let ConvGeom {
                    c_in,
                    c_out,
                    t_in,
                    t_out,
                    kernel,
                    stride,
                    padding,
                    dilation,
                } = *geom;
                let rows = c_in * kernel;
                if self.nodes[w.0].requires_grad {
                    let mut gw = vec![0.0; c_out * rows];
                    gemm(
                        MatRef::new(gd, c_out, t_out),
                        MatRef::new(cols, rows, t_out).t(),
                        &mut gw,
                        0.0,
                    );
                    acc(*w, NdArray::new(self.shape(*w), gw).expect("shape"));
                }
                if self.nodes[x.0].requires_grad {
                    let mut gcols = vec![0.0; rows * t_out];
                    gemm(
                        MatRef::new(self.value(*w).data(), c_out, rows).t(),
                        MatRef::new(gd, c_out, t_out),
                        &mut gcols,
                        0.0,
                    );
                    let mut gx = vec![0.0; c_in * t_in];
                    for ci in 0..c_in {
                        for k in 0..kernel {
                            let r = ci * kernel + k;
                            for t in 0..t_out {
                                let src = (t * stride + k * dilation) as isize - padding as isize;
                                if src >= 0 && (src as usize) < t_in {
                                    gx[ci * t_in + src as usize] += gcols[r * t_out + t];
                                }
                            }
                        }
                    }
                    acc(*x, NdArray::new(&[c_in, t_in], gx).expect("shape"));
                }
                if let Some(b) = b {
                    acc(*b, channel_sums(gd, c_out, t_out, self.shape(*b)));
                }
            }
            Op::ConvTranspose1d { x, w, b, geom } => {
                let ConvGeom {
                    c_in,
                    c_out,
                    t_in,
                    t_out,
                    kernel,
                    stride,
                    padding,
                    ..
                } = *geom;
                let rows = c_out * kernel;
                let mut gcols = vec![0.0; rows * t_in];
                for co in 0..c_out {
                    for k in 0..kernel {
                        let r = co * kernel + k;
                        for t in 0..t_in {
                            let dst = (t * stride + k) as isize - padding as isize;
                            if dst >= 0 && (dst as usize) < t_out {
                                gcols[r * t_in + t] = gd[co * t_out + dst as usize];
                            }
                        }
                    }
                }
                if self.nodes[x.0].requires_grad {
                    let mut gx = vec![0.0; c_in * t_in];
                    gemm(
                        MatRef::new(self.value(*w).data(), c_in, rows),
                        MatRef::new(&gcols, rows, t_in),
                        &mut gx,
                        0.0,
                    );
                    acc(*x, NdArray::new(&[c_in, t_in], gx).expect("shape"));
                }
                if self.nodes[w.0].requires_grad {
                    let mut gw = vec![0.0; c_in * rows];
                    gemm(
                        MatRef::new(self.value(*x).data(), c_in, t_in),
                        MatRef::new(&gcols, rows, t_in).t(),
                        &mut gw,
                        0.0,
                    );
                    acc(*w, NdArray::new(self.shape(*w), gw).expect("shape"));
                }
                if let Some(b) = b {
                    acc(*b, channel_sums(gd, c_out, t_out, self.shape(*b)));
                }
            }
            Op::LayerNorm { x, xhat, rstd } => {
                let d = g.cols();
                let mut gx = vec![0.0; gd.len()];
                for (r, s) in rstd.iter().enumerate() {
                    let gr = &gd[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = s * (gr[j] - mg - xr[j] * mgx);
                    }
                }
                acc(*x, NdArray::new(g.shape(), gx).expect("shape"));
            }
            Op::Softmax(x) => {
                let p = node.value.data();
                let c = g.cols();
                let mut gx = vec![0.0; gd.len()];
                for r in 0..gd.len() / c {
                    let pr = &p[r * c..(r + 1) * c];
                    let gr = &gd[r * c..(r + 1) * c];
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[r * c + j] = pr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, NdArray::new(g.shape(), gx).expect("shape"));
            }
            Op::Gelu(x) => acc(
                *x,
                zip_map(g, self.value(*x), |g, v| {
                    let u = GELU_C * (v + 0.044715 * v * v * v);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                    g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                }),
            ),
            Op::Relu(x) => acc(
                *x,
                zip_map(g, self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 }),
            ),
            Op::LeakyRelu(x, slope) => acc(
                *x,
                zip_map(g, self.value(*x), |g, v| if v > 0.0 { g } else { g * slope }),
            ),
            Op::Tanh(x) => acc(*x, zip_map(g, &node.value, |g, y| g * (1.0 - y * y))),
            Op::Sqrt(x) => acc(*x, zip_map(g, &node.value, |g, y| g / (2.0 * y))),
            Op::LogClamp(x, floor) => acc(
                *x,
                zip_map(g, self.value(*x), |g, v| if v > *floor { g / v } else { 0.0 }),
            ),
            Op::Abs(x) => acc(*x, zip_map(g, self.value(*x), |g, v| g * sign(v))),
            Op::Gather { table, ids } => {
                let d = g.cols();
                let mut gt = NdArray::zeros(self.shape(*table));
                let gtd = gt.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gtd[id * d + j] += gd[r * d + j];
                    }
                }
                acc(*table, gt);
            }
            Op::IndexSelect { x, idx } => {
                let mut gx = NdArray::zeros(self.shape(*x));
                let gxd = gx.data_mut();
                for (&i, &v) in idx.iter().zip(gd) {
                    gxd[i] += v;
                }
                acc(*x, gx);
            }
            Op::WindowedDft { x, window } => {
                // d/dx[t] = w[t] * Re(sum_k (g_re[k] + i g_im[k]) e^{+2 pi i t k / n})
                let n = window.len();
                let bins = n / 2 + 1;
                let ifft = FftPlanner::new().plan_fft_inverse(n);
                let mut buf = vec![Complex::new(0.0, 0.0); n];
                let mut gx = Vec::with_capacity(self.value(*x).len());
                for row in gd.chunks(2 * bins) {
                    buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
                    for k in 0..bins {
                        buf[k] = Complex::new(row[k], row[bins + k]);
                    }
                    ifft.process(&mut buf);
                    gx.extend(buf.iter().zip(window).map(|(c, w)| c.re * w));
                }
                acc(*x, NdArray::new(self.shape(*x), gx).expect("shape"));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(
                        p,
                        NdArray::new(self.shape(p), gd[off..off + n].to_vec()).expect("shape"),
                    );
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let d = g.cols();
                let mut gx = NdArray::zeros(self.shape(*x));
                gx.data_mut()[start * d..start * d + gd.len()].copy_from_slice(gd);
                acc(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let r = g.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        gp.extend_from_slice(&gd[i * total + off..i * total + off + w]);
                    }
                    acc(p, NdArray::new(self.shape(p), gp).expect("shape"));
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xs = self.value(*x);
                let (r, c) = (xs.rows(), xs.cols());
                let w = g.cols();
                let mut gx = NdArray::zeros(xs.shape());
                let gxd = gx.data_mut();
                for i in 0..r {
                    gxd[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                acc(*x, gx);
            }
            Op::Sum(x) => acc(*x, NdArray::full(self.shape(*x), gd[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                acc(*x, NdArray::full(self.shape(*x), gd[0] / n));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                let v = probs.len() / n;
                let s = gd[0] / n as f64;
                let mut gl = probs.iter().map(|p| p * s).collect::<Vec<_>>();
                for (i, &t) in targets.iter().enumerate() {
                    gl[i * v + t] -= s;
                }
                acc(*logits, NdArray::new(self.shape(*logits), gl).expect("shape"));
            }
        }
    }
}

/// Gradients produced by [`Tape::gradients`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads(Vec<Option<NdArray>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&NdArray> {
        self.0.get(v.0).and_then(Option::as_ref)
    }
}

fn zip_map(g: &NdArray, other: &NdArray, f: impl Fn(f64, f64) -> f64) -> NdArray {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    NdArray::new(g.shape(), data).expect("same shape")
}

fn channel_sums(gd: &[f64], c: usize, t: usize, shape: &[usize]) -> NdArray {
    let sums = (0..c).map(|ch| gd[ch * t..(ch + 1) * t].iter().sum()).collect();
    NdArray::new(shape, sums).expect("shape")
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Max-subtracted softmax of `logits` written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Standalone softmax cross-entropy of one logit vector against `target`.
pub fn softmax_xent(logits: &NdArray, target: usize) -> Result<f64> {
    let v = logits.len();
    if target >= v {
        return Err(Error::Index(format!("target {target} for vocabulary of {v}")));
    }
    let d = logits.data();
    let m = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + d.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    Ok(lse - d[target])
}

#[cfg(test)]
#[path = "tape_tests.rs"]
mod tests;
