use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

use super::config::{Activation, TransformerSpec};
use super::params::Init;

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, n_in: usize, n_out: usize) -> Self {
        Linear {
            w: init.weight(format!("{name}.weight"), &[n_in, n_out], n_in, n_out),
            b: init.bias(format!("{name}.bias"), n_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w])?;
        g.add_bias(y, p[self.b])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, n: usize, eps: f64) -> Self {
        LayerNorm {
            gain: init.norm(format!("{name}.gain"), n, 1.0),
            bias: init.norm(format!("{name}.bias"), n, 0.0),
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        g.layernorm(x, p[self.gain], p[self.bias], self.eps)
    }
}

pub(crate) fn activate(g: &mut Graph, act: Activation, x: Var) -> Var {
    match act {
        Activation::Gelu => g.gelu(x),
        Activation::Relu => g.relu(x),
    }
}

/// Sequences of equal padded length `n` stacked as `[batch * n, d]`, with
/// a validity flag per row.
#[derive(Clone, Debug)]
pub(crate) struct Packed {
    pub x: Var,
    pub n: usize,
    pub valid: Vec<bool>,
}

impl Packed {
    pub fn batch(&self) -> usize {
        self.valid.len() / self.n
    }

    pub fn mask(&self, b: usize) -> &[bool] {
        &self.valid[b * self.n..(b + 1) * self.n]
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    fn new(init: &mut Init, name: &str, d: usize, heads: usize) -> Self {
        Attention {
            q: Linear::new(init, &format!("{name}.q"), d, d),
            k: Linear::new(init, &format!("{name}.k"), d, d),
            v: Linear::new(init, &format!("{name}.v"), d, d),
            o: Linear::new(init, &format!("{name}.out"), d, d),
            heads,
        }
    }

    fn forward(&self, g: &mut Graph, p: &[Var], x: Var, packed: &Packed) -> Result<Var> {
        let d = g.shape(x)[1];
        let dh = d / self.heads;
        let q = self.q.forward(g, p, x)?;
        let q = g.scale(q, 1.0 / (dh as f64).sqrt());
        let k = self.k.forward(g, p, x)?;
        let v = self.v.forward(g, p, x)?;
        let n = packed.n;
        let mut per_seq = Vec::with_capacity(packed.batch());
        for b in 0..packed.batch() {
            let mask = packed.mask(b);
            let (qb, kb, vb) = if packed.batch() == 1 {
                (q, k, v)
            } else {
                let rows: Vec<usize> = (b * n..(b + 1) * n).collect();
                (g.select_rows(q, &rows)?, g.select_rows(k, &rows)?, g.select_rows(v, &rows)?)
            };
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let (qh, kh, vh) = if self.heads == 1 {
                    (qb, kb, vb)
                } else {
                    (g.slice_last(qb, lo, hi)?, g.slice_last(kb, lo, hi)?, g.slice_last(vb, lo, hi)?)
                };
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let a = g.masked_softmax(scores, mask, mask)?;
                heads.push(g.matmul(a, vh)?);
            }
            per_seq.push(if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? });
        }
        let cat = if per_seq.len() == 1 { per_seq[0] } else { g.concat(&per_seq, 0)? };
        self.o.forward(g, p, cat)
    }
}

/// Pre-norm encoder block: `x + Attn(LN(x))`, then `h + FFN(LN(h))`.
#[derive(Clone, Debug)]
pub(crate) struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    pub blocks: Vec<Block>,
    pub act: Activation,
    pub dropout: f64,
}

impl Encoder {
    pub fn new(init: &mut Init, name: &str, d: usize, spec: TransformerSpec, ffn_mult: usize, act: Activation, dropout: f64, eps: f64) -> Self {
        let blocks = (0..spec.layers)
            .map(|l| {
                let n = format!("{name}.{l}");
                Block {
                    ln1: LayerNorm::new(init, &format!("{n}.ln1"), d, eps),
                    attn: Attention::new(init, &format!("{n}.attn"), d, spec.heads),
                    ln2: LayerNorm::new(init, &format!("{n}.ln2"), d, eps),
                    ff1: Linear::new(init, &format!("{n}.ff1"), d, ffn_mult * d),
                    ff2: Linear::new(init, &format!("{n}.ff2"), ffn_mult * d, d),
                }
            })
            .collect();
        Encoder { blocks, act, dropout }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], packed: &Packed) -> Result<Var> {
        let mut x = packed.x;
        for b in &self.blocks {
            let h = b.ln1.forward(g, p, x)?;
            let h = b.attn.forward(g, p, h, packed)?;
            let h = g.dropout(h, self.dropout)?;
            x = g.add(x, h)?;
            let h = b.ln2.forward(g, p, x)?;
            let h = b.ff1.forward(g, p, h)?;
            let h = activate(g, self.act, h);
            let h = b.ff2.forward(g, p, h)?;
            let h = g.dropout(h, self.dropout)?;
            x = g.add(x, h)?;
        }
        Ok(x)
    }
}

/// Row-averaging matrix `[out, n]` with the usual adaptive-pooling bins:
/// output `i` covers `floor(i n / out) .. ceil((i + 1) n / out)`.
pub(crate) fn adaptive_pool_matrix(n: usize, out: usize) -> Tensor {
    let mut m = vec![0.0; out * n];
    for i in 0..out {
        let lo = i * n / out;
        let hi = ((i + 1) * n).div_ceil(out);
        let w = 1.0 / (hi - lo) as f64;
        for j in lo..hi {
            m[i * n + j] = w;
        }
    }
    Tensor::new(vec![out, n], m).expect("pool matrix shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_bins() {
        let m = adaptive_pool_matrix(5, 2);
        assert_eq!(m.row(0), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0]);
        assert_eq!(m.row(1), &[0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        let id = adaptive_pool_matrix(3, 3);
        assert_eq!(id.row(1), &[0.0, 1.0, 0.0]);
    }
}
