use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[FOCAL_EPS, 1 - FOCAL_EPS]` before logs.
pub const FOCAL_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            lambda: 0.0,
            gamma: 2.0,
        }
    }
}

fn targets(g: &mut Graph, v: Var, t: &[f64], what: &str) -> Result<Var> {
    if g.value(v).len() != t.len() {
        return Err(Error::dim(format!("{what}: {} predictions vs {} targets", g.value(v).len(), t.len())));
    }
    let shape = g.shape(v).to_vec();
    Ok(g.constant(Tensor::new(shape, t.to_vec())?))
}

/// Mean squared error.
pub fn mse_loss(g: &mut Graph, y_hat: Var, y: &[f64]) -> Result<Var> {
    let yt = targets(g, y_hat, y, "mse")?;
    let diff = g.sub(y_hat, yt)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// `-(1/N) sum[(1-p)^γ t log p + p^γ (1-t) log(1-p)]`
pub fn focal_loss(g: &mut Graph, p_hat: Var, t: &[u8], gamma: f64) -> Result<Var> {
    if !(gamma >= 0.0) {
        return Err(Error::config(format!("focal gamma must be non-negative, got {gamma}")));
    }
    if let Some(bad) = t.iter().find(|v| **v > 1) {
        return Err(Error::data(format!("binary label {bad} is not 0 or 1")));
    }
    let tf: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
    let pos = targets(g, p_hat, &tf, "focal")?;
    let neg_t: Vec<f64> = tf.iter().map(|v| 1.0 - v).collect();
    let neg = targets(g, p_hat, &neg_t, "focal")?;
    let p = g.clamp(p_hat, FOCAL_EPS, 1.0 - FOCAL_EPS);
    let q = g.rsub_scalar(1.0, p);
    let log_p = g.log(p);
    let log_q = g.log(q);
    let wp = g.powf(q, gamma);
    let wq = g.powf(p, gamma);
    let a = g.mul(wp, log_p)?;
    let a = g.mul(a, pos)?;
    let b = g.mul(wq, log_q)?;
    let b = g.mul(b, neg)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    Ok(g.neg(m))
}

/// `α MSE + β FL + λ Σ‖θ‖²` over the given regularized parameters.
pub fn total_loss(
    g: &mut Graph,
    y_hat: Var,
    y: &[f64],
    p_hat: Var,
    t: &[u8],
    regularized: &[Var],
    w: &LossWeights,
) -> Result<Var> {
    for (name, v) in [("alpha", w.alpha), ("beta", w.beta), ("lambda", w.lambda)] {
        if !(v >= 0.0) {
            return Err(Error::config(format!("{name} must be non-negative, got {v}")));
        }
    }
    let mse = mse_loss(g, y_hat, y)?;
    let fl = focal_loss(g, p_hat, t, w.gamma)?;
    let a = g.scale(mse, w.alpha);
    let b = g.scale(fl, w.beta);
    let mut total = g.add(a, b)?;
    if w.lambda > 0.0 {
        for &p in regularized {
            let sq = g.square(p);
            let s = g.sum(sq);
            let s = g.scale(s, w.lambda);
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}
