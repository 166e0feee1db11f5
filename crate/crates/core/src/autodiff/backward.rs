use super::kernels::{self, ConvGeom};
use super::ops::{gelu_grad, sigmoid};
use super::{axis_split, Graph, Op, Unary, Var};
use crate::error::{Error, Result};

struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    fn slot(&mut self, v: Var, len: usize) -> &mut Vec<f64> {
        self.0[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn add(&mut self, v: Var, g: &[f64]) {
        let buf = self.slot(v, g.len());
        buf.iter_mut().zip(g).for_each(|(b, x)| *b += x);
    }
}

impl Graph {
    /// Back-propagates from a scalar `loss` into every leaf that requires
    /// gradients. Gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads = Grads(vec![None; loss.0 + 1]);
        grads.0[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads.0[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                self.nodes[idx].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut Grads) {
        let out = self.nodes[idx].value.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.rg(*a) {
                    grads.add(*a, g);
                }
                if self.rg(*b) {
                    grads.add(*b, g);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    grads.add(*a, g);
                }
                if self.rg(*b) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    grads.add(*b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga: Vec<f64> = g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect();
                    grads.add(*a, &ga);
                }
                if self.rg(*b) {
                    let gb: Vec<f64> = g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect();
                    grads.add(*b, &gb);
                }
            }
            Op::AddBias(x, b) => {
                if self.rg(*x) {
                    grads.add(*x, g);
                }
                if self.rg(*b) {
                    let n = self.data(*b).len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                    }
                    grads.add(*b, &gb);
                }
            }
            Op::ScaleRows(x, s) => {
                let sv = self.data(*s);
                let m = sv.len();
                let n = g.len() / m;
                if self.rg(*x) {
                    let gx: Vec<f64> = (0..m * n).map(|i| g[i] * sv[i / n]).collect();
                    grads.add(*x, &gx);
                }
                if self.rg(*s) {
                    let xv = self.data(*x);
                    let gs: Vec<f64> = (0..m)
                        .map(|r| (0..n).map(|c| g[r * n + c] * xv[r * n + c]).sum())
                        .collect();
                    grads.add(*s, &gs);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.rg(*a) {
                    let ga = grads.slot(*a, m * k);
                    kernels::matmul_bt_acc(g, self.data(*b), ga, m, n, k);
                }
                if self.rg(*b) {
                    let gb = grads.slot(*b, k * n);
                    kernels::matmul_at_acc(self.data(*a), g, gb, m, k, n);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gx = kernels::transpose(g, c, r);
                grads.add(*x, &gx);
            }
            Op::Unary(x, u) => {
                let xv = self.data(*x);
                let gx: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .zip(out)
                    .map(|((g, &x), &y)| {
                        g * match u {
                            Unary::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Gelu => gelu_grad(x),
                            Unary::Sigmoid => {
                                let s = sigmoid(x);
                                s * (1.0 - s)
                            }
                            Unary::Tanh => 1.0 - y * y,
                            Unary::Log => 1.0 / x,
                            Unary::Exp => y,
                            Unary::Pow(p) => {
                                if *p == 0.0 {
                                    0.0
                                } else {
                                    p * x.powf(p - 1.0)
                                }
                            }
                            Unary::Scale(c) => *c,
                            Unary::Shift(_) => 1.0,
                            Unary::Clamp(lo, hi) => {
                                if x >= *lo && x <= *hi {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        }
                    })
                    .collect();
                grads.add(*x, &gx);
            }
            Op::Sum(x) => {
                let n = self.data(*x).len();
                grads.add(*x, &vec![g[0]; n]);
            }
            Op::SumAxis { x, axis } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let gx = grads.slot(*x, outer * n * inner);
                for o in 0..outer {
                    for a in 0..n {
                        for i in 0..inner {
                            gx[(o * n + a) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
            Op::MaxAxis { x, argmax, .. } => {
                let len = self.data(*x).len();
                let gx = grads.slot(*x, len);
                for (dst, src) in argmax.iter().enumerate() {
                    gx[*src] += g[dst];
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let gx = grads.slot(*x, outer * n * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |a: usize| (o * n + a) * inner + i;
                        let dot: f64 = (0..n).map(|a| g[at(a)] * out[at(a)]).sum();
                        for a in 0..n {
                            gx[at(a)] += out[at(a)] * (g[at(a)] - dot);
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x } => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let gx = grads.slot(*x, m * n);
                for r in 0..m {
                    let row = r * n..(r + 1) * n;
                    let dot: f64 = row.clone().map(|i| g[i] * out[i]).sum();
                    for i in row {
                        gx[i] += out[i] * (g[i] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.data(*gain);
                let n = gv.len();
                if self.rg(*x) {
                    let gx = grads.slot(*x, g.len());
                    for (r, is) in inv_std.iter().enumerate() {
                        let base = r * n;
                        let dxh: Vec<f64> = (0..n).map(|c| g[base + c] * gv[c]).collect();
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().enumerate().map(|(c, d)| d * xhat[base + c]).sum();
                        for c in 0..n {
                            gx[base + c] += is / n as f64
                                * (n as f64 * dxh[c] - s1 - xhat[base + c] * s2);
                        }
                    }
                }
                if self.rg(*gain) {
                    let mut gg = vec![0.0; n];
                    for (i, gi) in g.iter().enumerate() {
                        gg[i % n] += gi * xhat[i];
                    }
                    grads.add(*gain, &gg);
                }
                if self.rg(*bias) {
                    let mut gb = vec![0.0; n];
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % n] += gi;
                    }
                    grads.add(*bias, &gb);
                }
            }
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            } => {
                let (c_in, len) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (c_out, k) = (self.shape(*w)[0], self.shape(*w)[2]);
                let geom = ConvGeom {
                    c_in,
                    len,
                    c_out,
                    k,
                    stride: *stride,
                    padding: *padding,
                    out_len: g.len() / c_out,
                };
                let xv = self.data(*x);
                let wv = self.data(*w);
                if self.rg(*x) {
                    let gx = grads.slot(*x, c_in * len);
                    for o in 0..c_out {
                        for t in 0..geom.out_len {
                            let go = g[o * geom.out_len + t];
                            for c in 0..c_in {
                                for j in 0..k {
                                    if let Some(s) = geom.src(t, j) {
                                        gx[c * len + s] += go * wv[(o * c_in + c) * k + j];
                                    }
                                }
                            }
                        }
                    }
                }
                if self.rg(*w) {
                    let gw = grads.slot(*w, c_out * c_in * k);
                    for o in 0..c_out {
                        for t in 0..geom.out_len {
                            let go = g[o * geom.out_len + t];
                            for c in 0..c_in {
                                for j in 0..k {
                                    if let Some(s) = geom.src(t, j) {
                                        gw[(o * c_in + c) * k + j] += go * xv[c * len + s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[idx].value.shape();
                let (outer, total, inner) = axis_split(out_shape, *axis);
                let mut offset = 0;
                for p in parts {
                    let n = self.shape(*p)[*axis];
                    if self.rg(*p) {
                        let mut gp = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[start..start + n * inner]);
                        }
                        grads.add(*p, &gp);
                    }
                    offset += n;
                }
            }
            Op::SliceLast { x, start } => {
                let n = *self.shape(*x).last().expect("non-scalar");
                let w = *self.nodes[idx].value.shape().last().expect("non-scalar");
                let gx = grads.slot(*x, self.data(*x).len());
                for (r, row) in g.chunks(w).enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        gx[r * n + start + c] += v;
                    }
                }
            }
            Op::SelectRows { x, idx: rows } => {
                let width = g.len() / rows.len();
                let gx = grads.slot(*x, self.data(*x).len());
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..width {
                        gx[r * width + c] += g[k * width + c];
                    }
                }
            }
            Op::Dropout { x, mask } => {
                let gx: Vec<f64> = g.iter().zip(mask).map(|(a, b)| a * b).collect();
                grads.add(*x, &gx);
            }
            Op::Reshape(x) => grads.add(*x, g),
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::autodiff::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let xt = g.transpose(x).unwrap();
        let q = g.matmul(xt, x).unwrap();
        let q = g.sum(q);
        g.backward(q).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![3.0]).unwrap());
        let y = g.square(x);
        let y = g.sum(y);
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[12.0]);
        g.zero_grad();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn shared_subexpression_sums_paths() {
        // f = (x*x) + (x*x) reusing one node vs. built twice.
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.5, -0.5]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let f = g.add(sq, sq).unwrap();
        let f = g.sum(f);
        g.backward(f).unwrap();
        let shared = g.grad(x).unwrap().to_vec();

        let mut h = Graph::new();
        let a = h.param(Tensor::vector(vec![1.5, -0.5]).unwrap());
        let b = h.param(Tensor::vector(vec![1.5, -0.5]).unwrap());
        let sa = h.mul(a, a).unwrap();
        let sb = h.mul(b, b).unwrap();
        let f = h.add(sa, sb).unwrap();
        let f = h.sum(f);
        h.backward(f).unwrap();
        let pathwise: Vec<f64> = h
            .grad(a)
            .unwrap()
            .iter()
            .zip(h.grad(b).unwrap())
            .map(|(p, q)| p + q)
            .collect();
        assert_eq!(shared, pathwise);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0]).unwrap());
        let c = g.constant(Tensor::vector(vec![2.0]).unwrap());
        let y = g.mul(x, c).unwrap();
        let y = g.sum(y);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
        assert!(g.grad(c).is_none());
    }
}
