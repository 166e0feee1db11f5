use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, Model};
use crate::omics::{Dataset, FeatureGroup, Modality, ModalitySet};
use crate::train::{mix_seed, FoldInputs};

use super::gsea::{aggregate_signed, gsea_preranked, GeneRanking, GeneSet, GseaConfig, GseaOutput, GseaResult};
use super::in_pool;
use super::shapley::{Background, BackgroundSpec, Explainer, Sample, ShapAttribution};

const PREDICT_ROWS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Classification,
    Regression,
}

impl Target {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Target::Classification),
            "regression" => Ok(Target::Regression),
            _ => Err(Error::config(format!("unknown explanation target '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Classification => "classification",
            Target::Regression => "regression",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    /// Exact up to `exact_max_groups` groups, sampled beyond.
    Auto,
    Exact,
    Sampled,
}

impl EstimatorChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(EstimatorChoice::Auto),
            "exact" => Ok(EstimatorChoice::Exact),
            "sampled" => Ok(EstimatorChoice::Sampled),
            _ => Err(Error::config(format!("unknown estimator '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorChoice::Auto => "auto",
            EstimatorChoice::Exact => "exact",
            EstimatorChoice::Sampled => "sampled",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub n_background: usize,
    pub estimator: EstimatorChoice,
    pub exact_max_groups: usize,
    pub n_permutations: usize,
    /// Cap on explained pairs per (cancer type, drug) cell.
    pub per_cell: Option<usize>,
    pub top_m: usize,
    pub target: Target,
    /// Modalities whose entries are toggled together per gene.
    pub grouped: Vec<Modality>,
    pub gsea: GseaConfig,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            n_background: 32,
            estimator: EstimatorChoice::Auto,
            exact_max_groups: 12,
            n_permutations: 200,
            per_cell: None,
            top_m: 20,
            target: Target::Classification,
            grouped: vec![Modality::Ge, Modality::Mut, Modality::Cnv],
            gsea: GseaConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub target: Target,
    pub estimator: EstimatorChoice,
    pub background: BackgroundSpec,
    pub background_cells: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub attributions: Vec<ShapAttribution>,
    pub ranking: GeneRanking,
    pub top_positive: Vec<(String, f64)>,
    pub top_negative: Vec<(String, f64)>,
    pub gsea: GseaOutput,
    /// ES > 0, by NES descending.
    pub positive_sets: Vec<GseaResult>,
    /// ES < 0, by NES ascending.
    pub negative_sets: Vec<GseaResult>,
}

/// Up to `n` profile indices from `pool`, allotted to cancer types in
/// proportion to their share of the pool (largest remainder).
pub fn stratified_background(ds: &Dataset, pool: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::data("empty background pool"));
    }
    let mut by_type: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &c in pool {
        let p = ds
            .profiles
            .get(c)
            .ok_or_else(|| Error::data(format!("background cell index {c} out of range")))?;
        by_type.entry(p.cancer_type.as_str()).or_default().push(c);
    }
    let n = n.min(pool.len());
    let total = pool.len() as f64;
    let mut quota: Vec<(usize, f64, &str)> = by_type
        .iter()
        .map(|(t, v)| {
            let exact = n as f64 * v.len() as f64 / total;
            (exact.floor() as usize, exact - exact.floor(), *t)
        })
        .collect();
    let mut left = n - quota.iter().map(|q| q.0).sum::<usize>();
    let mut order: Vec<usize> = (0..quota.len()).collect();
    order.sort_by(|&a, &b| quota[b].1.total_cmp(&quota[a].1).then_with(|| quota[a].2.cmp(quota[b].2)));
    for i in order {
        if left == 0 {
            break;
        }
        quota[i].0 += 1;
        left -= 1;
    }
    let mut out = Vec::with_capacity(n);
    for (k, ((_, cells), (q, _, _))) in by_type.iter().zip(&quota).enumerate() {
        let mut cells = cells.clone();
        cells.sort_unstable();
        cells.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, k as u64)));
        out.extend(cells.into_iter().take(*q));
    }
    Ok(out)
}

/// Keeps at most `per_cell` pairs per (cancer type, drug), chosen by a
/// seeded shuffle. Output keeps the input order.
pub fn cap_per_cell(ds: &Dataset, pairs: &[usize], per_cell: Option<usize>, seed: u64) -> Vec<usize> {
    let Some(cap) = per_cell else {
        return pairs.to_vec();
    };
    let types: HashMap<&str, &str> = ds
        .profiles
        .iter()
        .map(|p| (p.cell_id.as_str(), p.cancer_type.as_str()))
        .collect();
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut count: HashMap<(&str, &str), usize> = HashMap::new();
    let mut keep: Vec<usize> = shuffled
        .into_iter()
        .filter(|&i| {
            let p = &ds.pairs[i];
            let t = types.get(p.cell_id.as_str()).copied().unwrap_or("");
            let c = count.entry((t, p.drug_id.as_str())).or_default();
            *c += 1;
            *c <= cap
        })
        .collect();
    let rank: HashMap<usize, usize> = pairs.iter().enumerate().map(|(r, &i)| (i, r)).collect();
    keep.sort_by_key(|i| rank[i]);
    keep
}

/// Attributes the chosen output for every pair in `pairs`, aggregates a
/// signed gene ranking and runs pre-ranked enrichment on `gene_sets`.
/// `background_pool` lists candidate background profiles, normally the
/// training cells.
pub fn explain_report(
    model: &Model,
    ds: &Dataset,
    inputs: &FoldInputs,
    pairs: &[usize],
    background_pool: &[usize],
    gene_sets: &[GeneSet],
    cfg: &ExplainConfig,
) -> Result<ExplainReport> {
    if pairs.is_empty() {
        return Err(Error::data("no pairs to explain"));
    }
    if let Some(&i) = pairs.iter().find(|&&i| i >= ds.pairs.len()) {
        return Err(Error::data(format!("pair index {i} out of range")));
    }
    let mods = ModalitySet::new(model.config.segments.iter().map(|s| s.0).collect())?;
    let groups = ds.gene_groups(&mods, &cfg.grouped)?;
    if groups.is_empty() {
        return Err(Error::config("no gene-aligned features to attribute"));
    }
    let bg_cells = stratified_background(ds, background_pool, cfg.n_background, cfg.seed)?;
    let background = Background {
        rows: bg_cells.iter().map(|&c| inputs.cells[c].clone()).collect(),
        seed: cfg.seed,
    };
    let exact = match cfg.estimator {
        EstimatorChoice::Exact => true,
        EstimatorChoice::Sampled => false,
        EstimatorChoice::Auto => groups.len() <= cfg.exact_max_groups,
    };
    let chosen = cap_per_cell(ds, pairs, cfg.per_cell, cfg.seed);

    let explain_one = |i: usize| -> Result<ShapAttribution> {
        let (c, d) = inputs.pairs[i];
        let drug = &ds.drugs[d];
        let f = |rows: &[Vec<f64>]| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(rows.len());
            for chunk in rows.chunks(PREDICT_ROWS) {
                let batch = Batch {
                    cells: chunk.iter().map(Vec::as_slice).collect(),
                    drugs: vec![drug],
                    pairs: (0..chunk.len()).map(|r| (r, 0)).collect(),
                };
                let o = model.predict(&batch)?;
                out.extend(match cfg.target {
                    Target::Classification => o.p_hat,
                    Target::Regression => o.y_hat,
                });
            }
            Ok(out)
        };
        let ex = Explainer::new(&f, &background, &groups)?;
        let id = format!("{}|{}", ds.pairs[i].cell_id, ds.pairs[i].drug_id);
        let sample = Sample {
            id: &id,
            x: &inputs.cells[c],
        };
        if exact {
            ex.exact(&sample)
        } else {
            ex.sampled(&sample, cfg.n_permutations, mix_seed(cfg.seed, i as u64))
        }
    };
    let attributions: Vec<ShapAttribution> = if cfg.workers > 1 {
        in_pool(cfg.workers, || chosen.par_iter().map(|&i| explain_one(i)).collect())?
    } else {
        chosen.iter().map(|&i| explain_one(i)).collect::<Result<_>>()?
    };

    let gene_map: HashMap<String, String> = groups.iter().map(|g| (g.gene.clone(), g.gene.clone())).collect();
    let ranking = aggregate_signed(&attributions, &gene_map)?;
    let gsea = gsea_preranked(&ranking, gene_sets, &cfg.gsea)?;
    let mut positive_sets: Vec<GseaResult> = gsea.results.iter().filter(|r| r.es > 0.0).cloned().collect();
    positive_sets.sort_by(|a, b| b.nes.total_cmp(&a.nes).then_with(|| a.name.cmp(&b.name)));
    let mut negative_sets: Vec<GseaResult> = gsea.results.iter().filter(|r| r.es < 0.0).cloned().collect();
    negative_sets.sort_by(|a, b| a.nes.total_cmp(&b.nes).then_with(|| a.name.cmp(&b.name)));
    Ok(ExplainReport {
        target: cfg.target,
        estimator: if exact { EstimatorChoice::Exact } else { EstimatorChoice::Sampled },
        background: BackgroundSpec {
            n_samples: bg_cells.len(),
            seed: cfg.seed,
        },
        background_cells: bg_cells.iter().map(|&c| ds.profiles[c].cell_id.clone()).collect(),
        groups,
        attributions,
        top_positive: ranking.top(cfg.top_m).iter().filter(|e| e.1 > 0.0).cloned().collect(),
        top_negative: ranking.bottom(cfg.top_m).into_iter().filter(|e| e.1 < 0.0).collect(),
        ranking,
        gsea,
        positive_sets,
        negative_sets,
    })
}

/// Writes `report.json` and the four plot tables.
pub fn write_report(report: &ExplainReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Serialization(e.to_string()))?;
    let path = dir.join("report.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    write_genes(&dir.join("genes_positive.csv"), &report.top_positive)?;
    write_genes(&dir.join("genes_negative.csv"), &report.top_negative)?;
    write_sets(&dir.join("pathways_positive.csv"), &report.positive_sets)?;
    write_sets(&dir.join("pathways_negative.csv"), &report.negative_sets)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serialization(format!("{other:?}")),
    }
}

fn write_genes(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["gene", "score"]).map_err(|e| csv_err(path, e))?;
    for (g, s) in rows {
        w.write_record([g.as_str(), &s.to_string()]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_sets(path: &Path, rows: &[GseaResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["pathway", "es", "nes", "p_value", "direction", "size"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.name.as_str(),
            &r.es.to_string(),
            &r.nes.to_string(),
            &r.p_value.to_string(),
            r.direction.label(),
            &r.size.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
