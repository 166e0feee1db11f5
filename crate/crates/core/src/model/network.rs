use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::smiles::DrugGraph;
use crate::tensor::Tensor;

use super::config::{ModelConfig, Pooling};
use super::encoders::{GateWeights, Gnn, ModalityTokens, OmicsEncoder};
use super::layers::{activate, Encoder, Linear, Packed};
use super::loss::{total_loss, LossWeights};
use super::params::{Init, ParamKind, ParamStore};

/// A micro-batch of (cell line, drug) pairs. Cells and drugs are listed
/// once each; pairs index into them.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub cells: Vec<&'a [f64]>,
    pub drugs: Vec<&'a DrugGraph>,
    pub pairs: Vec<(usize, usize)>,
}

impl<'a> Batch<'a> {
    pub fn single(cell: &'a [f64], drug: &'a DrugGraph) -> Self {
        Batch {
            cells: vec![cell],
            drugs: vec![drug],
            pairs: vec![(0, 0)],
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Tape handles produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[pairs]`
    pub y_hat: Var,
    /// `[pairs]`
    pub p_hat: Var,
    /// `[pairs, d]`
    pub z: Var,
    /// Per pair, pooling weight of every real joint token (omics first).
    pub pool_weights: Vec<Vec<f64>>,
    /// Per cell, per omics segment channel gates.
    pub gates: Vec<GateWeights>,
    /// Per drug, its node tokens after the drug transformer.
    pub drug_tokens: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutput {
    pub y_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    omics: OmicsEncoder,
    omics_tf: Encoder,
    gnn: Gnn,
    drug_tf: Encoder,
    fusion_tf: Encoder,
    pool_query: Option<usize>,
    reg1: Linear,
    reg2: Linear,
    cls1: Linear,
    cls2: Linear,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    let w = *t.shape().last().unwrap_or(&1);
    t.data().chunks(w).map(<[f64]>::to_vec).collect()
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let c = &config;
        let d = c.token_dim;
        let enc = |init: &mut Init, name: &str, spec| Encoder::new(init, name, d, spec, c.ffn_mult, c.activation, c.dropout, c.ln_eps);
        let omics = OmicsEncoder::new(&mut init, c);
        let omics_tf = enc(&mut init, "omics_tf", c.omics);
        let gnn = Gnn::new(&mut init, c);
        let drug_tf = enc(&mut init, "drug_tf", c.drug);
        let fusion_tf = enc(&mut init, "fusion_tf", c.fusion);
        let pool_query = (c.pooling == Pooling::Attention).then(|| init.weight("pool.query".into(), &[d, 1], d, 1));
        let reg1 = Linear::new(&mut init, "head.reg1", d, c.head_hidden);
        let reg2 = Linear::new(&mut init, "head.reg2", c.head_hidden, 1);
        let cls1 = Linear::new(&mut init, "head.cls1", d, c.head_hidden);
        let cls2 = Linear::new(&mut init, "head.cls2", c.head_hidden, 1);
        Ok(Model {
            config,
            params: store,
            omics,
            omics_tf,
            gnn,
            drug_tf,
            fusion_tf,
            pool_query,
            reg1,
            reg2,
            cls1,
            cls2,
        })
    }

    pub fn n_omics_tokens(&self) -> usize {
        self.omics.n_tokens
    }

    pub fn omics_layout(&self) -> Vec<ModalityTokens> {
        self.omics.layout(&self.config)
    }

    pub fn input_dim(&self) -> usize {
        self.omics.input_dim()
    }

    /// Puts the parameters on `g`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    /// Omics tokens `[n_c, d]` before the omics transformer.
    pub fn encode_omics(&self, g: &mut Graph, p: &[Var], x: &[f64]) -> Result<(Var, GateWeights)> {
        self.omics.forward(g, p, x)
    }

    /// Node tokens of the union of `drugs` before the drug transformer.
    pub fn gnn_encode(&self, g: &mut Graph, p: &[Var], drugs: &[&DrugGraph]) -> Result<Var> {
        self.gnn.forward(g, p, drugs)
    }

    /// Omics transformer over one `[n_c, d]` sequence.
    pub fn omics_transformer(&self, g: &mut Graph, p: &[Var], h0: Var) -> Result<Var> {
        let n = g.shape(h0)[0];
        self.omics_tf.forward(g, p, &Packed { x: h0, n, valid: vec![true; n] })
    }

    /// Drug transformer over one unpadded `[n_atoms, d]` sequence.
    pub fn drug_transformer(&self, g: &mut Graph, p: &[Var], h0: Var) -> Result<Var> {
        let n = g.shape(h0)[0];
        self.drug_tf.forward(g, p, &Packed { x: h0, n, valid: vec![true; n] })
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], batch: &Batch) -> Result<ForwardVars> {
        if p.len() != self.params.len() {
            return Err(Error::Contract(format!("{} parameter handles for {} parameters", p.len(), self.params.len())));
        }
        if batch.is_empty() || batch.cells.is_empty() || batch.drugs.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if let Some(&(c, dr)) = batch.pairs.iter().find(|(c, dr)| *c >= batch.cells.len() || *dr >= batch.drugs.len()) {
            return Err(Error::Contract(format!("pair ({c}, {dr}) indexes outside the batch")));
        }
        let d = self.config.token_dim;
        let n_c = self.omics.n_tokens;

        // omics branch, one sequence per distinct cell line
        let mut toks = Vec::with_capacity(batch.cells.len());
        let mut gates = Vec::with_capacity(batch.cells.len());
        for x in &batch.cells {
            let (t, gw) = self.omics.forward(g, p, x)?;
            toks.push(t);
            gates.push(gw);
        }
        let x = if toks.len() == 1 { toks[0] } else { g.concat(&toks, 0)? };
        let omics_out = self.omics_tf.forward(
            g,
            p,
            &Packed {
                x,
                n: n_c,
                valid: vec![true; n_c * batch.cells.len()],
            },
        )?;

        // drug branch, padded to the largest molecule
        let h = self.gnn.forward(g, p, &batch.drugs)?;
        let total_atoms = g.shape(h)[0];
        let n_d = batch.drugs.iter().map(|dg| dg.n_atoms()).max().unwrap_or(1);
        let zero = g.constant(Tensor::zeros(&[1, d]));
        let src = g.concat(&[h, zero], 0)?;
        let mut idx = Vec::with_capacity(batch.drugs.len() * n_d);
        let mut valid = Vec::with_capacity(batch.drugs.len() * n_d);
        let mut off = 0;
        for dg in &batch.drugs {
            let n = dg.n_atoms();
            for j in 0..n_d {
                idx.push(if j < n { off + j } else { total_atoms });
                valid.push(j < n);
            }
            off += n;
        }
        let x = g.select_rows(src, &idx)?;
        let drug_out = self.drug_tf.forward(g, p, &Packed { x, n: n_d, valid })?;
        let drug_tokens = {
            let v = g.value(drug_out);
            batch
                .drugs
                .iter()
                .enumerate()
                .map(|(k, dg)| (0..dg.n_atoms()).map(|j| v.row(k * n_d + j).to_vec()).collect())
                .collect()
        };

        // joint sequences, one per pair
        let omics_rows = n_c * batch.cells.len();
        let drug_rows = n_d * batch.drugs.len();
        let zero_row = omics_rows + drug_rows;
        let src = g.concat(&[omics_out, drug_out, zero], 0)?;
        let max_atoms = batch.pairs.iter().map(|&(_, dr)| batch.drugs[dr].n_atoms()).max().unwrap_or(1);
        let n_f = n_c + max_atoms;
        let mut idx = Vec::with_capacity(batch.len() * n_f);
        let mut valid = Vec::with_capacity(batch.len() * n_f);
        for &(c, dr) in &batch.pairs {
            idx.extend(c * n_c..(c + 1) * n_c);
            valid.extend(std::iter::repeat_n(true, n_c));
            let n = batch.drugs[dr].n_atoms();
            for j in 0..max_atoms {
                idx.push(if j < n { omics_rows + dr * n_d + j } else { zero_row });
                valid.push(j < n);
            }
        }
        let x = g.select_rows(src, &idx)?;
        let packed = Packed { x, n: n_f, valid };
        let joint = self.fusion_tf.forward(g, p, &packed)?;

        let n_pairs = batch.len();
        let (z, pool_weights) = match self.pool_query {
            Some(q) => {
                let s = g.matmul(joint, p[q])?;
                let s = g.scale(s, 1.0 / (d as f64).sqrt());
                let s = g.reshape(s, vec![n_pairs, n_f])?;
                let w = g.masked_softmax_entries(s, &packed.valid)?;
                let weights = rows_of(g.value(w))
                    .into_iter()
                    .zip(packed.valid.chunks(n_f))
                    .map(|(r, m)| r.into_iter().zip(m).filter(|(_, k)| **k).map(|(v, _)| v).collect())
                    .collect();
                let w = g.reshape(w, vec![n_pairs * n_f])?;
                let xw = g.scale_rows(joint, w)?;
                let mut sum = vec![0.0; n_pairs * n_pairs * n_f];
                for b in 0..n_pairs {
                    for t in 0..n_f {
                        sum[b * n_pairs * n_f + b * n_f + t] = 1.0;
                    }
                }
                let sum = g.constant(Tensor::new(vec![n_pairs, n_pairs * n_f], sum)?);
                (g.matmul(sum, xw)?, weights)
            }
            None => {
                let mut avg = vec![0.0; n_pairs * n_pairs * n_f];
                let mut weights = Vec::with_capacity(n_pairs);
                for (b, m) in packed.valid.chunks(n_f).enumerate() {
                    let n = m.iter().filter(|v| **v).count();
                    for (t, _) in m.iter().enumerate().filter(|(_, v)| **v) {
                        avg[b * n_pairs * n_f + b * n_f + t] = 1.0 / n as f64;
                    }
                    weights.push(vec![1.0 / n as f64; n]);
                }
                let avg = g.constant(Tensor::new(vec![n_pairs, n_pairs * n_f], avg)?);
                (g.matmul(avg, joint)?, weights)
            }
        };

        let r = self.reg1.forward(g, p, z)?;
        let r = activate(g, self.config.activation, r);
        let r = self.reg2.forward(g, p, r)?;
        let y_hat = g.reshape(r, vec![n_pairs])?;
        let c = self.cls1.forward(g, p, z)?;
        let c = activate(g, self.config.activation, c);
        let c = self.cls2.forward(g, p, c)?;
        let c = g.sigmoid(c);
        let p_hat = g.reshape(c, vec![n_pairs])?;
        Ok(ForwardVars {
            y_hat,
            p_hat,
            z,
            pool_weights,
            gates,
            drug_tokens,
        })
    }

    /// Total objective for a forward pass against targets `y` and labels `t`.
    pub fn loss(&self, g: &mut Graph, p: &[Var], fwd: &ForwardVars, y: &[f64], t: &[u8]) -> Result<Var> {
        let reg: Vec<Var> = self
            .params
            .iter()
            .zip(p)
            .filter(|(prm, _)| prm.kind.regularized())
            .map(|(_, v)| *v)
            .collect();
        total_loss(g, fwd.y_hat, y, fwd.p_hat, t, &reg, &self.weights())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.config.alpha,
            beta: self.config.beta,
            lambda: self.config.lambda,
            gamma: self.config.gamma,
        }
    }

    /// Evaluation-mode forward pass without gradients.
    pub fn predict(&self, batch: &Batch) -> Result<BatchOutput> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let f = self.forward(&mut g, &p, batch)?;
        g.ensure_finite(f.y_hat, "regression output")?;
        g.ensure_finite(f.p_hat, "classification output")?;
        Ok(BatchOutput {
            y_hat: g.value(f.y_hat).data().to_vec(),
            // keep probabilities off the endpoints where the sigmoid saturates
            p_hat: g
                .value(f.p_hat)
                .data()
                .iter()
                .map(|v| v.clamp(f64::EPSILON, 1.0 - f64::EPSILON))
                .collect(),
            z: rows_of(g.value(f.z)),
        })
    }

    /// Names and kinds of all parameters, in registration order.
    pub fn param_kinds(&self) -> Vec<(String, ParamKind)> {
        self.params.iter().map(|p| (p.name.clone(), p.kind)).collect()
    }
}
