use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::mix_seed;

use super::in_pool;
use super::shapley::ShapAttribution;

/// Genes ordered by signed score, descending. Equal scores are ordered by
/// gene symbol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneRanking {
    entries: Vec<(String, f64)>,
}

impl GeneRanking {
    pub fn new(mut entries: Vec<(String, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (g, s) in &entries {
            if !s.is_finite() {
                return Err(Error::data(format!("non-finite score for gene '{g}'")));
            }
            if !seen.insert(g.as_str()) {
                return Err(Error::data(format!("gene '{g}' ranked twice")));
            }
        }
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(GeneRanking { entries })
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top(&self, m: usize) -> &[(String, f64)] {
        &self.entries[..m.min(self.entries.len())]
    }

    /// The last `m` entries, most negative first.
    pub fn bottom(&self, m: usize) -> Vec<(String, f64)> {
        self.entries.iter().rev().take(m).cloned().collect()
    }
}

/// Mean signed contribution per gene over `attributions`. Groups mapping
/// to the same gene are summed within an attribution first.
pub fn aggregate_signed(attributions: &[ShapAttribution], gene_map: &HashMap<String, String>) -> Result<GeneRanking> {
    let Some(first) = attributions.first() else {
        return Err(Error::data("no attributions to aggregate"));
    };
    let mut genes = Vec::with_capacity(first.groups.len());
    for g in &first.groups {
        let Some(sym) = gene_map.get(g) else {
            return Err(Error::data(format!("group '{g}' has no gene symbol")));
        };
        genes.push(sym.as_str());
    }
    let mut sum: BTreeMap<&str, f64> = BTreeMap::new();
    for a in attributions {
        if a.groups != first.groups {
            return Err(Error::Contract(format!(
                "attribution '{}' uses a different group space",
                a.sample_id
            )));
        }
        for (g, p) in genes.iter().zip(&a.phi) {
            *sum.entry(g).or_default() += p;
        }
    }
    let n = attributions.len() as f64;
    GeneRanking::new(sum.into_iter().map(|(g, s)| (g.to_string(), s / n)).collect())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneSet {
    pub name: String,
    pub description: String,
    pub genes: Vec<String>,
}

/// One set per line: name, description, then gene symbols, tab separated.
/// Repeated symbols within a set are dropped.
pub fn parse_gmt(text: &str) -> Result<Vec<GeneSet>> {
    let mut sets = Vec::new();
    let mut names = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split('\t');
        let name = f.next().unwrap_or("").trim();
        let Some(description) = f.next() else {
            return Err(Error::data(format!("gmt line {}: expected name and description", i + 1)));
        };
        if name.is_empty() {
            return Err(Error::data(format!("gmt line {}: empty set name", i + 1)));
        }
        if !names.insert(name.to_string()) {
            return Err(Error::data(format!("gmt line {}: duplicate set '{name}'", i + 1)));
        }
        let mut seen = HashSet::new();
        let genes = f
            .map(str::trim)
            .filter(|g| !g.is_empty() && seen.insert(*g))
            .map(String::from)
            .collect();
        sets.push(GeneSet {
            name: name.to_string(),
            description: description.trim().to_string(),
            genes,
        });
    }
    Ok(sets)
}

pub fn read_gmt(path: &Path) -> Result<Vec<GeneSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_gmt(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GseaConfig {
    /// Exponent on `|score|` for hit increments; 0 gives the unweighted
    /// Kolmogorov-Smirnov walk.
    pub weight: f64,
    pub n_perm: usize,
    pub seed: u64,
    pub min_size: usize,
    pub workers: usize,
}

impl Default for GseaConfig {
    fn default() -> Self {
        GseaConfig {
            weight: 1.0,
            n_perm: 1000,
            seed: 0,
            min_size: 5,
            workers: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Sensitivity,
    Resistance,
    None,
}

impl Direction {
    pub fn of(es: f64) -> Self {
        if es > 0.0 {
            Direction::Sensitivity
        } else if es < 0.0 {
            Direction::Resistance
        } else {
            Direction::None
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Sensitivity => "sensitivity",
            Direction::Resistance => "resistance",
            Direction::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GseaResult {
    pub name: String,
    pub size: usize,
    pub es: f64,
    pub direction: Direction,
    pub p_value: f64,
    pub nes: f64,
    /// NES had no same-signed null scores to normalize by.
    pub nes_fallback: bool,
    /// Ranking positions of the set's genes, ascending.
    pub hits: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSet {
    pub name: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GseaOutput {
    pub results: Vec<GseaResult>,
    pub skipped: Vec<SkippedSet>,
}

/// Peaks closer than this count as tied; ties resolve to the positive
/// peak. Equal peaks are common (both are often multiples of
/// `1 / misses`) and would otherwise be split by rounding.
pub const ES_TIE_TOL: f64 = 1e-12;

/// Running-sum value after position `pos` given the hit weight seen so
/// far. Shared by the sparse and dense evaluations so both round alike.
#[inline]
fn walk_value(hit_sum: f64, total: f64, misses: usize, n_miss: usize) -> f64 {
    hit_sum / total - misses as f64 / n_miss as f64
}

/// Hit weights `|score|^p` along the ranking. All-zero hit weights fall
/// back to equal weights.
fn hit_weights(weights: &[f64], hits: &[usize]) -> (Vec<f64>, f64) {
    let w: Vec<f64> = hits.iter().map(|&i| weights[i]).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        (w, total)
    } else {
        (vec![1.0; hits.len()], hits.len() as f64)
    }
}

/// Signed extremum of the running sum for sorted hit positions among `n`
/// ranked genes. Only the values just before and just after each hit can
/// be extreme, so the walk visits hits only.
pub fn enrichment_score(weights: &[f64], hits: &[usize]) -> f64 {
    let n = weights.len();
    let n_miss = n - hits.len();
    let (w, total) = hit_weights(weights, hits);
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    let mut hit_sum = 0.0;
    for (i, (&q, wi)) in hits.iter().zip(&w).enumerate() {
        let misses = q - i;
        if q > 0 {
            lo = lo.min(walk_value(hit_sum, total, misses, n_miss));
        }
        hit_sum += wi;
        hi = hi.max(walk_value(hit_sum, total, misses, n_miss));
    }
    if hi + lo >= -ES_TIE_TOL {
        hi
    } else {
        lo
    }
}

/// The running sum at every position, for plotting and for checking the
/// sparse walk.
pub fn running_sum(weights: &[f64], hits: &[usize]) -> Vec<f64> {
    let n = weights.len();
    let n_miss = n - hits.len();
    let (w, total) = hit_weights(weights, hits);
    let mut out = Vec::with_capacity(n);
    let mut hit_sum = 0.0;
    let mut k = 0;
    for pos in 0..n {
        if k < hits.len() && hits[k] == pos {
            hit_sum += w[k];
            k += 1;
        }
        out.push(walk_value(hit_sum, total, pos + 1 - k, n_miss));
    }
    out
}

/// Pre-ranked enrichment of every gene set against `ranking`, with
/// significance from gene-label permutations.
pub fn gsea_preranked(ranking: &GeneRanking, sets: &[GeneSet], cfg: &GseaConfig) -> Result<GseaOutput> {
    if !(cfg.weight.is_finite() && cfg.weight >= 0.0) {
        return Err(Error::config(format!("weight exponent must be finite and >= 0, got {}", cfg.weight)));
    }
    if cfg.n_perm == 0 {
        return Err(Error::config("n_perm must be at least 1"));
    }
    let n = ranking.len();
    let weights: Vec<f64> = ranking.entries.iter().map(|(_, s)| s.abs().powf(cfg.weight)).collect();
    let pos: HashMap<&str, usize> = ranking.entries.iter().enumerate().map(|(i, (g, _))| (g.as_str(), i)).collect();

    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for (si, set) in sets.iter().enumerate() {
        let mut hits: Vec<usize> = set.genes.iter().filter_map(|g| pos.get(g.as_str()).copied()).collect();
        hits.sort_unstable();
        let reason = if hits.is_empty() {
            Some("no genes in the ranking".to_string())
        } else if hits.len() < cfg.min_size {
            Some(format!("{} ranked genes, below the minimum of {}", hits.len(), cfg.min_size))
        } else if hits.len() == n {
            Some("set covers the whole ranking".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => skipped.push(SkippedSet {
                name: set.name.clone(),
                reason,
            }),
            None => jobs.push((si, hits)),
        }
    }

    let score = |(si, hits): &(usize, Vec<usize>)| -> GseaResult {
        let es = enrichment_score(&weights, hits);
        let set_seed = mix_seed(cfg.seed, *si as u64);
        let null: Vec<f64> = (0..cfg.n_perm)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(set_seed, k as u64));
                let mut h = index::sample(&mut rng, n, hits.len()).into_vec();
                h.sort_unstable();
                enrichment_score(&weights, &h)
            })
            .collect();
        let extreme = null.iter().filter(|v| v.abs() >= es.abs()).count();
        let (nes, nes_fallback) = normalize(es, &null);
        GseaResult {
            name: sets[*si].name.clone(),
            size: hits.len(),
            es,
            direction: Direction::of(es),
            p_value: (1 + extreme) as f64 / (1 + cfg.n_perm) as f64,
            nes,
            nes_fallback,
            hits: hits.clone(),
        }
    };
    let results = if cfg.workers > 1 {
        in_pool(cfg.workers, || Ok(jobs.par_iter().map(score).collect()))?
    } else {
        jobs.iter().map(score).collect()
    };
    Ok(GseaOutput { results, skipped })
}

/// `ES / mean(|null|)` over null scores of the same sign, falling back to
/// all null scores, then to ES itself.
fn normalize(es: f64, null: &[f64]) -> (f64, bool) {
    let same: Vec<f64> = null
        .iter()
        .filter(|v| if es >= 0.0 { **v >= 0.0 } else { **v < 0.0 })
        .map(|v| v.abs())
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    if !same.is_empty() && mean(&same) > 0.0 {
        return (es / mean(&same), false);
    }
    let all: Vec<f64> = null.iter().map(|v| v.abs()).collect();
    if !all.is_empty() && mean(&all) > 0.0 {
        (es / mean(&all), true)
    } else {
        (es, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmt_round_trip() {
        let sets = parse_gmt("A\tdesc\tX\tY\tX\n\nB\t\tZ\r\n").unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].genes, vec!["X", "Y"]);
        assert_eq!(sets[1].description, "");
        assert!(parse_gmt("lonely\n").is_err());
        assert!(parse_gmt("A\td\tX\nA\td\tY\n").is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_symbol() {
        let r = GeneRanking::new(vec![("b".into(), 1.0), ("a".into(), 1.0), ("c".into(), 2.0)]).unwrap();
        let order: Vec<&str> = r.entries().iter().map(|e| e.0.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
        assert!(GeneRanking::new(vec![("a".into(), 1.0), ("a".into(), 2.0)]).is_err());
    }
}
