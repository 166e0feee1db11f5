use rand::Rng;

use super::kernels::{self, ConvGeom};
use super::{axis_split, Graph, Op, Unary, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(g: &Graph, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

fn matrix_dims(g: &Graph, v: Var, what: &str) -> Result<(usize, usize)> {
    match g.shape(v) {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{what}: expected a matrix, got {s:?}"))),
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("op produced a consistent shape")
}

impl Graph {
    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(self, a, b, what)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(tensor(va.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.emit(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.emit(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.emit(t, Op::Mul(a, b), &[a, b]))
    }

    /// `x[.., n] + b[n]`, broadcasting the bias over every leading index.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.value(b).len() != n {
            return Err(Error::dim(format!(
                "add_bias: input {:?} vs bias {:?}",
                self.shape(x),
                self.shape(b)
            )));
        }
        let bias = self.value(b).data();
        let vx = self.value(x);
        let data = vx
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(v, b)| v + b))
            .collect();
        let t = tensor(vx.shape().to_vec(), data);
        Ok(self.emit(t, Op::AddBias(x, b), &[x, b]))
    }

    /// `x[m, n] * s[m]`: scales row `i` by `s[i]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = matrix_dims(self, x, "scale_rows")?;
        if self.value(s).len() != m {
            return Err(Error::dim(format!(
                "scale_rows: input {:?} vs scales {:?}",
                self.shape(x),
                self.shape(s)
            )));
        }
        let sv = self.value(s).data();
        let vx = self.value(x).data();
        let data = (0..m * n).map(|i| vx[i] * sv[i / n]).collect();
        let t = tensor(vec![m, n], data);
        Ok(self.emit(t, Op::ScaleRows(x, s), &[x, s]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self, a, "matmul")?;
        let (k2, n) = matrix_dims(self, b, "matmul")?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner dimensions disagree for {:?} × {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.emit(tensor(vec![m, n], out), Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = matrix_dims(self, x, "transpose")?;
        let data = kernels::transpose(self.value(x).data(), r, c);
        Ok(self.emit(tensor(vec![c, r], data), Op::Transpose(x), &[x]))
    }

    fn unary(&mut self, x: Var, u: Unary) -> Var {
        let vx = self.value(x);
        let f: Box<dyn Fn(f64) -> f64> = match u {
            Unary::Relu => Box::new(|v: f64| v.max(0.0)),
            Unary::Gelu => Box::new(gelu),
            Unary::Sigmoid => Box::new(sigmoid),
            Unary::Tanh => Box::new(f64::tanh),
            Unary::Log => Box::new(f64::ln),
            Unary::Exp => Box::new(f64::exp),
            Unary::Pow(p) => Box::new(move |v: f64| v.powf(p)),
            Unary::Scale(c) => Box::new(move |v: f64| v * c),
            Unary::Shift(c) => Box::new(move |v: f64| v + c),
            Unary::Clamp(lo, hi) => Box::new(move |v: f64| v.clamp(lo, hi)),
        };
        let data = vx.data().iter().map(|v| f(*v)).collect();
        let t = tensor(vx.shape().to_vec(), data);
        self.emit(t, Op::Unary(x, u), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    /// Elementwise `x^p`; inputs must be positive unless `p` is a whole number.
    pub fn powf(&mut self, x: Var, p: f64) -> Var {
        self.unary(x, Unary::Pow(p))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::Scale(c))
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::Shift(c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Scale(-1.0))
    }

    /// `c - x`
    pub fn rsub_scalar(&mut self, c: f64, x: Var) -> Var {
        let n = self.neg(x);
        self.shift(n, c)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Unary::Clamp(lo, hi))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("identical shapes")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.emit(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn max(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let flat = self.reshape(x, vec![n]).expect("same element count");
        self.max_axis(flat, 0).expect("axis 0 exists")
    }

    fn check_axis(&self, x: Var, axis: usize, what: &str) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(Error::dim(format!(
                "{what}: axis {axis} out of range for {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s = shape.to_vec();
        s.remove(axis);
        s
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "sum_axis")?;
        let vx = self.value(x);
        let (outer, n, inner) = axis_split(vx.shape(), axis);
        let d = vx.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * n + a) * inner + i];
                }
            }
        }
        let t = tensor(Self::reduced_shape(vx.shape(), axis), out);
        Ok(self.emit(t, Op::SumAxis { x, axis }, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "mean_axis")?;
        let n = self.shape(x)[axis] as f64;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n))
    }

    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "max_axis")?;
        let vx = self.value(x);
        let (outer, n, inner) = axis_split(vx.shape(), axis);
        let d = vx.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                for i in 0..inner {
                    let src = (o * n + a) * inner + i;
                    let dst = o * inner + i;
                    if d[src] > out[dst] {
                        out[dst] = d[src];
                        argmax[dst] = src;
                    }
                }
            }
        }
        let t = tensor(Self::reduced_shape(vx.shape(), axis), out);
        Ok(self.emit(t, Op::MaxAxis { x, argmax }, &[x]))
    }

    /// Global average pooling of a `[channels, length]` map to `[channels]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        matrix_dims(self, x, "global_avg_pool")?;
        self.mean_axis(x, 1)
    }

    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        matrix_dims(self, x, "global_max_pool")?;
        self.max_axis(x, 1)
    }

    /// Numerically shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis, "softmax")?;
        let vx = self.value(x);
        let (outer, n, inner) = axis_split(vx.shape(), axis);
        let d = vx.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let m = (0..n).map(|a| d[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..n {
                    let e = (d[at(a)] - m).exp();
                    out[at(a)] = e;
                    z += e;
                }
                for a in 0..n {
                    out[at(a)] /= z;
                }
            }
        }
        let t = tensor(vx.shape().to_vec(), out);
        Ok(self.emit(t, Op::Softmax { x, axis }, &[x]))
    }

    /// Row softmax of a `[queries, keys]` score matrix restricted to valid
    /// keys. Masked keys get exactly zero weight; masked query rows are all
    /// zero.
    pub fn masked_softmax(&mut self, x: Var, query_mask: &[bool], key_mask: &[bool]) -> Result<Var> {
        let (m, n) = matrix_dims(self, x, "masked_softmax")?;
        if query_mask.len() != m || key_mask.len() != n {
            return Err(Error::dim(format!(
                "masked_softmax: scores {m}×{n} vs masks {}×{}",
                query_mask.len(),
                key_mask.len()
            )));
        }
        let mask: Vec<bool> = (0..m * n).map(|i| query_mask[i / n] && key_mask[i % n]).collect();
        self.masked_softmax_entries(x, &mask)
    }

    /// Row softmax of a matrix over the entries where `mask` (row-major,
    /// same shape) is true. Rows with no valid entry are all zero.
    pub fn masked_softmax_entries(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = matrix_dims(self, x, "masked_softmax")?;
        if mask.len() != m * n {
            return Err(Error::dim(format!("masked_softmax: scores {m}×{n} vs mask of {}", mask.len())));
        }
        let d = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &d[r * n..(r + 1) * n];
            let keep = &mask[r * n..(r + 1) * n];
            let mx = row
                .iter()
                .zip(keep)
                .filter(|(_, k)| **k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if mx == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for c in 0..n {
                if keep[c] {
                    let e = (row[c] - mx).exp();
                    out[r * n + c] = e;
                    z += e;
                }
            }
            for c in 0..n {
                out[r * n + c] /= z;
            }
        }
        Ok(self.emit(tensor(vec![m, n], out), Op::MaskedSoftmax { x }, &[x]))
    }

    /// Normalizes over the last axis, then applies `gain * x̂ + bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| Error::dim("layernorm of a scalar"))?;
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::dim(format!(
                "layernorm: input {shape:?} vs gain {:?} / bias {:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let d = self.value(x).data();
        let gv = self.value(gain).data();
        let bv = self.value(bias).data();
        let rows = d.len() / n;
        let mut xhat = vec![0.0; d.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mu) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = gv[c] * h + bv[c];
            }
        }
        let t = tensor(shape, out);
        Ok(self.emit(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Cross-correlation of `x[c_in, len]` with `w[c_out, c_in, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c_in, len) = matrix_dims(self, x, "conv1d input")?;
        let (c_out, wc, k) = match self.shape(w) {
            [a, b, c] => (*a, *b, *c),
            s => return Err(Error::dim(format!("conv1d: kernels must be 3-d, got {s:?}"))),
        };
        if wc != c_in {
            return Err(Error::dim(format!(
                "conv1d: input has {c_in} channels, kernels expect {wc}"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv1d: stride must be positive"));
        }
        if k > len + 2 * padding {
            return Err(Error::dim(format!(
                "conv1d: kernel width {k} exceeds padded input length {}",
                len + 2 * padding
            )));
        }
        let out_len = (len + 2 * padding - k) / stride + 1;
        let geom = ConvGeom {
            c_in,
            len,
            c_out,
            k,
            stride,
            padding,
            out_len,
        };
        let out = kernels::conv1d_forward(self.value(x).data(), self.value(w).data(), &geom);
        let t = tensor(vec![c_out, out_len], out);
        Ok(self.emit(
            t,
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            },
            &[x, w],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat: axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim(format!("concat: {s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let n = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = tensor(shape, out);
        Ok(self.emit(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| Error::dim("slice of a scalar"))?;
        if start >= end || end > n {
            return Err(Error::dim(format!("slice {start}..{end} out of range for {shape:?}")));
        }
        let w = end - start;
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let mut s = shape;
        *s.last_mut().expect("non-empty") = w;
        Ok(self.emit(tensor(s, data), Op::SliceLast { x, start }, &[x]))
    }

    /// Gathers rows of a matrix (or entries of a vector); repeats allowed.
    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        if idx.is_empty() {
            return Err(Error::dim("select_rows with no indices"));
        }
        let shape = self.shape(x).to_vec();
        let (rows, width, out_shape) = match shape.as_slice() {
            [r] => (*r, 1, vec![idx.len()]),
            [r, c] => (*r, *c, vec![idx.len(), *c]),
            s => return Err(Error::dim(format!("select_rows on shape {s:?}"))),
        };
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(format!("row index {bad} out of range for {shape:?}")));
        }
        let d = self.value(x).data();
        let data = idx
            .iter()
            .flat_map(|&i| d[i * width..(i + 1) * width].iter().copied())
            .collect();
        Ok(self.emit(
            tensor(out_shape, data),
            Op::SelectRows {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        ))
    }

    /// Looks up rows of a learnable `[vocab, dim]` table by categorical index.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        self.select_rows(table, idx)
    }

    /// Inverted dropout; identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let vx = self.value(x);
        let data = vx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = tensor(vx.shape().to_vec(), data);
        Ok(self.emit(t, Op::Dropout { x, mask }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let mut t = t;
        t.set_requires_grad(false);
        t.zero_grad();
        Ok(self.emit(t, Op::Reshape(x), &[x]))
    }
}
