use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::omics::FeatureGroup;
use crate::train::mix_seed;

use super::in_pool;

/// Largest group count the exact estimator will enumerate.
pub const MAX_EXACT_GROUPS: usize = 20;

/// Composite rows evaluated per model call.
const CHUNK_ROWS: usize = 512;

/// Reference inputs that absent groups are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub rows: Vec<Vec<f64>>,
    /// Seed that selected the rows, kept for the record.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorInfo {
    Exact,
    Sampled {
        n_permutations: usize,
        seed: u64,
        /// `f(x) - phi_0 - sum(phi)` before redistribution.
        residual: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapAttribution {
    pub sample_id: String,
    /// Group labels, aligned with `phi`.
    pub groups: Vec<String>,
    /// Value with every group taken from the background.
    pub phi_0: f64,
    pub phi: Vec<f64>,
    /// Model output on the explained sample.
    pub f_x: f64,
    pub background: BackgroundSpec,
    pub estimator: EstimatorInfo,
}

impl ShapAttribution {
    /// `f(x) - phi_0 - sum(phi)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.f_x - self.phi_0 - self.phi.iter().sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub id: &'a str,
    pub x: &'a [f64],
}

/// Coalitional game over feature groups. `f` maps a batch of input rows
/// to one output per row. Coordinates outside every group always come
/// from the sample.
pub struct Explainer<'a, F> {
    f: &'a F,
    background: &'a Background,
    groups: &'a [FeatureGroup],
    workers: usize,
}

impl<'a, F> Explainer<'a, F>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>> + Sync,
{
    pub fn new(f: &'a F, background: &'a Background, groups: &'a [FeatureGroup]) -> Result<Self> {
        let Some(first) = background.rows.first() else {
            return Err(Error::data("empty background"));
        };
        let width = first.len();
        for r in &background.rows {
            if r.len() != width {
                return Err(Error::dim(format!("background rows of width {} and {width}", r.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::data("non-finite value in background"));
            }
        }
        let mut seen = vec![false; width];
        for g in groups {
            for &j in &g.features {
                if j >= width {
                    return Err(Error::dim(format!("group '{}' refers to feature {j} of {width}", g.gene)));
                }
                if seen[j] {
                    return Err(Error::data(format!("feature {j} belongs to more than one group")));
                }
                seen[j] = true;
            }
        }
        Ok(Explainer {
            f,
            background,
            groups,
            workers: 1,
        })
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    fn check(&self, sample: &Sample) -> Result<()> {
        let width = self.background.rows[0].len();
        if sample.x.len() != width {
            return Err(Error::dim(format!("sample of width {} against background width {width}", sample.x.len())));
        }
        if sample.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite input for sample '{}'", sample.id)));
        }
        Ok(())
    }

    /// `v(S)` for every coalition, each given as a membership mask.
    fn values(&self, x: &[f64], coalitions: &[Vec<bool>]) -> Result<Vec<f64>> {
        let nb = self.background.rows.len();
        let per_chunk = (CHUNK_ROWS / nb).max(1);
        let chunks: Vec<&[Vec<bool>]> = coalitions.chunks(per_chunk).collect();
        let eval = |c: &[Vec<bool>]| -> Result<Vec<f64>> {
            let mut rows = Vec::with_capacity(c.len() * nb);
            for mask in c {
                for b in &self.background.rows {
                    rows.push(self.composite(x, b, mask));
                }
            }
            let out = (self.f)(&rows)?;
            if out.len() != rows.len() {
                return Err(Error::Contract(format!("model returned {} outputs for {} rows", out.len(), rows.len())));
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite model output during attribution".into()));
            }
            Ok(out.chunks(nb).map(|o| o.iter().sum::<f64>() / nb as f64).collect())
        };
        let parts: Vec<Vec<f64>> = if self.workers > 1 && chunks.len() > 1 {
            in_pool(self.workers, || chunks.par_iter().map(|c| eval(c)).collect())?
        } else {
            chunks.iter().map(|c| eval(c)).collect::<Result<_>>()?
        };
        Ok(parts.concat())
    }

    fn composite(&self, x: &[f64], b: &[f64], mask: &[bool]) -> Vec<f64> {
        let mut row = x.to_vec();
        for (g, &on) in self.groups.iter().zip(mask) {
            if !on {
                for &j in &g.features {
                    row[j] = b[j];
                }
            }
        }
        row
    }

    fn f_x(&self, x: &[f64]) -> Result<f64> {
        let out = (self.f)(&[x.to_vec()])?;
        match out.first() {
            Some(v) if v.is_finite() => Ok(*v),
            Some(_) => Err(Error::Numeric("non-finite model output on the sample".into())),
            None => Err(Error::Contract("model returned no output".into())),
        }
    }

    fn labels(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.gene.clone()).collect()
    }

    fn spec(&self) -> BackgroundSpec {
        BackgroundSpec {
            n_samples: self.background.rows.len(),
            seed: self.background.seed,
        }
    }

    /// Enumerates all `2^n` coalitions.
    pub fn exact(&self, sample: &Sample) -> Result<ShapAttribution> {
        self.check(sample)?;
        let n = self.groups.len();
        if n > MAX_EXACT_GROUPS {
            return Err(Error::Capacity(format!(
                "{n} groups exceed the exact limit of {MAX_EXACT_GROUPS}; use sampled_shapley"
            )));
        }
        let masks: Vec<Vec<bool>> = (0..1usize << n).map(|s| (0..n).map(|j| s >> j & 1 == 1).collect()).collect();
        let v = self.values(sample.x, &masks)?;
        // w(s) = s! (n-s-1)! / n!
        let w: Vec<f64> = (0..n).map(|s| 1.0 / (n as f64 * binom(n - 1, s))).collect();
        let mut phi = vec![0.0; n];
        for (j, pj) in phi.iter_mut().enumerate() {
            let bit = 1usize << j;
            for s in 0..1usize << n {
                if s & bit == 0 {
                    *pj += w[s.count_ones() as usize] * (v[s | bit] - v[s]);
                }
            }
        }
        Ok(ShapAttribution {
            sample_id: sample.id.to_string(),
            groups: self.labels(),
            phi_0: v[0],
            phi,
            f_x: self.f_x(sample.x)?,
            background: self.spec(),
            estimator: EstimatorInfo::Exact,
        })
    }

    /// Monte Carlo over random group orderings. Permutation `k` draws from
    /// its own stream of `seed`, so the estimate does not depend on the
    /// worker count.
    pub fn sampled(&self, sample: &Sample, n_permutations: usize, seed: u64) -> Result<ShapAttribution> {
        self.check(sample)?;
        if n_permutations == 0 {
            return Err(Error::config("n_permutations must be at least 1"));
        }
        let n = self.groups.len();
        let ends = self.values(sample.x, &[vec![false; n], vec![true; n]])?;
        let (v_empty, v_full) = (ends[0], ends[1]);
        let orders: Vec<Vec<usize>> = (0..n_permutations)
            .map(|k| {
                let mut o: Vec<usize> = (0..n).collect();
                o.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64)));
                o
            })
            .collect();
        let mut masks = Vec::with_capacity(n_permutations * n.saturating_sub(1));
        for o in &orders {
            let mut m = vec![false; n];
            for &j in &o[..n.saturating_sub(1)] {
                m[j] = true;
                masks.push(m.clone());
            }
        }
        let v = self.values(sample.x, &masks)?;
        let mut phi = vec![0.0; n];
        let step = n.saturating_sub(1);
        for (k, o) in orders.iter().enumerate() {
            let mut prev = v_empty;
            for (i, &j) in o.iter().enumerate() {
                let cur = if i + 1 == n { v_full } else { v[k * step + i] };
                phi[j] += cur - prev;
                prev = cur;
            }
        }
        for p in &mut phi {
            *p /= n_permutations as f64;
        }
        let f_x = self.f_x(sample.x)?;
        let residual = f_x - v_empty - phi.iter().sum::<f64>();
        spread_residual(&mut phi, residual);
        Ok(ShapAttribution {
            sample_id: sample.id.to_string(),
            groups: self.labels(),
            phi_0: v_empty,
            phi,
            f_x,
            background: self.spec(),
            estimator: EstimatorInfo::Sampled {
                n_permutations,
                seed,
                residual,
            },
        })
    }
}

/// Adds `residual` to `phi` in proportion to `|phi_j|`, or evenly when
/// every entry is zero.
fn spread_residual(phi: &mut [f64], residual: f64) {
    if phi.is_empty() || residual == 0.0 {
        return;
    }
    let total: f64 = phi.iter().map(|p| p.abs()).sum();
    let n = phi.len() as f64;
    for p in phi.iter_mut() {
        *p += if total > 0.0 { residual * p.abs() / total } else { residual / n };
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn exact_shapley<F>(f: &F, sample: &Sample, background: &Background, groups: &[FeatureGroup]) -> Result<ShapAttribution>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>> + Sync,
{
    Explainer::new(f, background, groups)?.exact(sample)
}

pub fn sampled_shapley<F>(
    f: &F,
    sample: &Sample,
    background: &Background,
    groups: &[FeatureGroup],
    n_permutations: usize,
    seed: u64,
) -> Result<ShapAttribution>
where
    F: Fn(&[Vec<f64>]) -> Result<Vec<f64>> + Sync,
{
    Explainer::new(f, background, groups)?.sampled(sample, n_permutations, seed)
}
