use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::omics::Modality;
use crate::smiles::schema::{ATOM_SLOTS, ATOM_VOCAB, BOND_SLOTS, BOND_VOCAB};
use crate::smiles::DrugGraph;
use crate::tensor::Tensor;

use super::config::{Activation, ModelConfig};
use super::layers::{activate, adaptive_pool_matrix, LayerNorm, Linear};
use super::params::Init;

#[derive(Clone, Debug)]
struct Scale {
    kernel: usize,
    w: usize,
    b: usize,
    out_len: usize,
}

/// Convolutional tokenizer for one omics segment.
#[derive(Clone, Debug)]
struct Segment {
    width: usize,
    scales: Vec<Scale>,
    gate1: Linear,
    gate2: Linear,
    proj: Linear,
    n_raw: usize,
    n_tokens: usize,
}

fn conv_len(len: usize, k: usize) -> usize {
    let pad = (k - 1) / 2;
    (len + 2 * pad - k) / k + 1
}

/// Per-segment channel gates from the last forward pass, for inspection.
pub type GateWeights = Vec<Vec<f64>>;

#[derive(Clone, Debug)]
pub(crate) struct OmicsEncoder {
    segments: Vec<Segment>,
    positions: Option<usize>,
    act: Activation,
    pub n_tokens: usize,
}

impl OmicsEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let d = cfg.token_dim;
        let c = cfg.conv_channels;
        let budget = cfg.tokens_per_segment();
        let segments: Vec<Segment> = cfg
            .segments
            .iter()
            .map(|&(m, width)| {
                let name = format!("omics.{}", m.key());
                let scales: Vec<Scale> = cfg
                    .kernel_sizes
                    .iter()
                    .map(|&k| Scale {
                        kernel: k,
                        w: init.weight(format!("{name}.conv{k}.weight"), &[c, 1, k], k, c * k),
                        b: init.bias(format!("{name}.conv{k}.bias"), c),
                        out_len: conv_len(width, k),
                    })
                    .collect();
                let sc = c * scales.len();
                let n_raw: usize = scales.iter().map(|s| s.out_len).sum();
                Segment {
                    width,
                    gate1: Linear::new(init, &format!("{name}.gate1"), sc, cfg.gate_hidden),
                    gate2: Linear::new(init, &format!("{name}.gate2"), cfg.gate_hidden, sc),
                    proj: Linear::new(init, &format!("{name}.proj"), c, d),
                    scales,
                    n_raw,
                    n_tokens: n_raw.min(budget),
                }
            })
            .collect();
        let n_tokens = segments.iter().map(|s| s.n_tokens).sum();
        let positions = cfg
            .omics_positions
            .then(|| init.embedding("omics.positions".into(), n_tokens, d));
        OmicsEncoder {
            segments,
            positions,
            n_tokens,
            act: cfg.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.segments.iter().map(|s| s.width).sum()
    }

    /// Tokens `[n_tokens, d]` for one stacked omics vector, plus the channel
    /// gate values of each segment.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: &[f64]) -> Result<(Var, GateWeights)> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "omics vector has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite omics input (impute before encoding)".into()));
        }
        let mut parts = Vec::with_capacity(self.segments.len());
        let mut gates = Vec::with_capacity(self.segments.len());
        let mut at = 0;
        for seg in &self.segments {
            let xs = g.constant(Tensor::new(vec![1, seg.width], x[at..at + seg.width].to_vec())?);
            at += seg.width;
            // channel maps as [positions, channels]
            let mut maps = Vec::with_capacity(seg.scales.len());
            let mut pooled = Vec::with_capacity(seg.scales.len());
            for s in &seg.scales {
                let y = g.conv1d(xs, p[s.w], s.kernel, (s.kernel - 1) / 2)?;
                let y = g.transpose(y)?;
                let y = g.add_bias(y, p[s.b])?;
                pooled.push(g.mean_axis(y, 0)?);
                maps.push(y);
            }
            let sc = g.concat(&pooled, 0)?;
            let n = g.value(sc).len();
            let sc = g.reshape(sc, vec![1, n])?;
            let h = seg.gate1.forward(g, p, sc)?;
            let h = activate(g, self.act, h);
            let h = seg.gate2.forward(g, p, h)?;
            let a = g.sigmoid(h);
            let a = g.reshape(a, vec![n])?;
            gates.push(g.value(a).data().to_vec());
            let c = n / seg.scales.len();
            let mut toks = Vec::with_capacity(maps.len());
            for (i, y) in maps.into_iter().enumerate() {
                // Rescaling channels before the projection equals rescaling
                // the projection's input rows.
                let a_i = if seg.scales.len() == 1 { a } else { g.slice_last(a, i * c, (i + 1) * c)? };
                let w = g.scale_rows(p[seg.proj.w], a_i)?;
                let t = g.matmul(y, w)?;
                toks.push(g.add_bias(t, p[seg.proj.b])?);
            }
            let t = if toks.len() == 1 { toks[0] } else { g.concat(&toks, 0)? };
            let t = if seg.n_tokens < seg.n_raw {
                let pool = g.constant(adaptive_pool_matrix(seg.n_raw, seg.n_tokens));
                g.matmul(pool, t)?
            } else {
                t
            };
            parts.push(t);
        }
        let mut tokens = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 0)? };
        if let Some(pos) = self.positions {
            tokens = g.add(tokens, p[pos])?;
        }
        Ok((tokens, gates))
    }
}

#[derive(Clone, Debug)]
struct MessageLayer {
    phi: Linear,
    phi_ln: LayerNorm,
    psi1: Linear,
    psi_ln: LayerNorm,
    psi2: Linear,
}

/// Message-passing encoder over OGB-featurized molecular graphs.
#[derive(Clone, Debug)]
pub(crate) struct Gnn {
    atom_emb: Vec<usize>,
    bond_emb: Vec<usize>,
    layers: Vec<MessageLayer>,
    act: Activation,
}

impl Gnn {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Self {
        let d = cfg.token_dim;
        let eps = cfg.ln_eps;
        let atom_emb = (0..ATOM_SLOTS)
            .map(|s| init.embedding(format!("gnn.atom_emb{s}"), ATOM_VOCAB[s], d))
            .collect();
        let bond_emb = (0..BOND_SLOTS)
            .map(|s| init.embedding(format!("gnn.bond_emb{s}"), BOND_VOCAB[s], d))
            .collect();
        let layers = (0..cfg.gnn_layers)
            .map(|l| {
                let n = format!("gnn.{l}");
                MessageLayer {
                    phi: Linear::new(init, &format!("{n}.phi"), 3 * d, d),
                    phi_ln: LayerNorm::new(init, &format!("{n}.phi_ln"), d, eps),
                    psi1: Linear::new(init, &format!("{n}.psi1"), 2 * d, d),
                    psi_ln: LayerNorm::new(init, &format!("{n}.psi_ln"), d, eps),
                    psi2: Linear::new(init, &format!("{n}.psi2"), d, d),
                }
            })
            .collect();
        Gnn {
            atom_emb,
            bond_emb,
            layers,
            act: cfg.activation,
        }
    }

    /// Node tokens of the disjoint union of `drugs`, one row per atom in
    /// drug order.
    pub fn forward(&self, g: &mut Graph, p: &[Var], drugs: &[&DrugGraph]) -> Result<Var> {
        let mut atoms: Vec<[usize; ATOM_SLOTS]> = Vec::new();
        let mut bonds: Vec<[usize; BOND_SLOTS]> = Vec::new();
        let mut edges: Vec<[usize; 2]> = Vec::new();
        for dg in drugs {
            if dg.n_atoms() == 0 {
                return Err(Error::data(format!("drug {} has an empty graph", dg.drug_id)));
            }
            if dg.edge_index.len() != dg.edge_features.len() {
                return Err(Error::data(format!("drug {}: edge index and features differ in length", dg.drug_id)));
            }
            let off = atoms.len();
            for f in &dg.node_features {
                if let Some(s) = (0..ATOM_SLOTS).find(|&s| f[s] >= ATOM_VOCAB[s]) {
                    return Err(Error::data(format!("drug {}: atom feature slot {s} out of vocabulary", dg.drug_id)));
                }
                atoms.push(*f);
            }
            for (e, f) in dg.edge_index.iter().zip(&dg.edge_features) {
                if e[0] >= dg.n_atoms() || e[1] >= dg.n_atoms() {
                    return Err(Error::data(format!("drug {}: edge endpoint out of range", dg.drug_id)));
                }
                if let Some(s) = (0..BOND_SLOTS).find(|&s| f[s] >= BOND_VOCAB[s]) {
                    return Err(Error::data(format!("drug {}: bond feature slot {s} out of vocabulary", dg.drug_id)));
                }
                edges.push([e[0] + off, e[1] + off]);
                bonds.push(*f);
            }
        }
        let n = atoms.len();
        let mut h = self.embed_sum(g, p, &self.atom_emb, &atoms)?;
        let d = g.shape(h)[1];
        let edge_ctx = if edges.is_empty() {
            None
        } else {
            let e = self.embed_sum(g, p, &self.bond_emb, &bonds)?;
            let mut inc = vec![0.0; n * edges.len()];
            for (k, [u, _]) in edges.iter().enumerate() {
                inc[u * edges.len() + k] = 1.0;
            }
            let inc = g.constant(Tensor::new(vec![n, edges.len()], inc)?);
            let src: Vec<usize> = edges.iter().map(|e| e[0]).collect();
            let dst: Vec<usize> = edges.iter().map(|e| e[1]).collect();
            Some((e, inc, src, dst))
        };
        for layer in &self.layers {
            let m = match &edge_ctx {
                // m_u = sum over directed edges (u, v) of phi(h_u, h_v, e_uv)
                Some((e, inc, src, dst)) => {
                    let hu = g.select_rows(h, src)?;
                    let hv = g.select_rows(h, dst)?;
                    let cat = g.concat(&[hu, hv, *e], 1)?;
                    let msg = layer.phi.forward(g, p, cat)?;
                    let msg = layer.phi_ln.forward(g, p, msg)?;
                    let msg = activate(g, self.act, msg);
                    g.matmul(*inc, msg)?
                }
                None => g.constant(Tensor::zeros(&[n, d])),
            };
            let cat = g.concat(&[h, m], 1)?;
            let u = layer.psi1.forward(g, p, cat)?;
            let u = layer.psi_ln.forward(g, p, u)?;
            let u = activate(g, self.act, u);
            let u = layer.psi2.forward(g, p, u)?;
            h = g.add(h, u)?;
        }
        Ok(h)
    }

    fn embed_sum<const S: usize>(&self, g: &mut Graph, p: &[Var], tables: &[usize], codes: &[[usize; S]]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (s, &t) in tables.iter().enumerate() {
            let idx: Vec<usize> = codes.iter().map(|c| c[s]).collect();
            let e = g.embedding(p[t], &idx)?;
            acc = Some(match acc {
                Some(a) => g.add(a, e)?,
                None => e,
            });
        }
        Ok(acc.expect("at least one slot"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModalityTokens {
    pub modality: Modality,
    pub tokens: usize,
}

impl OmicsEncoder {
    pub fn layout(&self, cfg: &ModelConfig) -> Vec<ModalityTokens> {
        cfg.segments
            .iter()
            .zip(&self.segments)
            .map(|((m, _), s)| ModalityTokens {
                modality: *m,
                tokens: s.n_tokens,
            })
            .collect()
    }
}
