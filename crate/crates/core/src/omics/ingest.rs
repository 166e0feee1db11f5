use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    assemble_pairs, filter_methylation, retain_cancer_types, FoldSplit, Dataset, DatasetStats, Exclusion,
    MethCluster, Modality, OmicsProfile, MIN_LINES_PER_TYPE,
};
use crate::error::{Error, Result};
use crate::smiles::{filter_drugs, read_drug_csv, DrugRejection};

/// Input file locations. Paths in a manifest file are relative to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cells: PathBuf,
    pub responses: PathBuf,
    pub drugs: PathBuf,
    pub ge: Option<PathBuf>,
    pub mutation: Option<PathBuf>,
    pub cnv: Option<PathBuf>,
    pub prot: Option<PathBuf>,
    pub healthy_prot: Option<PathBuf>,
    pub meth: Option<PathBuf>,
    /// One gene per line; restricts MUT and CNV columns.
    pub gene_whitelist: Option<PathBuf>,
}

const MANIFEST_KEYS: [&str; 10] = [
    "cells",
    "responses",
    "drugs",
    "ge",
    "mut",
    "cnv",
    "prot",
    "healthy_prot",
    "meth",
    "gene_whitelist",
];

/// Reads a `key = path` manifest; `#` starts a comment.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut kv: BTreeMap<String, PathBuf> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::config(format!("{}:{}: expected key = path", path.display(), i + 1)));
        };
        let k = k.trim();
        if !MANIFEST_KEYS.contains(&k) {
            return Err(Error::config(format!(
                "{}:{}: unknown manifest key '{k}' (expected one of {})",
                path.display(),
                i + 1,
                MANIFEST_KEYS.join(", ")
            )));
        }
        if kv.insert(k.to_string(), base.join(v.trim())).is_some() {
            return Err(Error::config(format!("{}:{}: duplicate key '{k}'", path.display(), i + 1)));
        }
    }
    let mut req = |k: &str| {
        kv.remove(k)
            .ok_or_else(|| Error::config(format!("{}: manifest lacks required key '{k}'", path.display())))
    };
    let cells = req("cells")?;
    let responses = req("responses")?;
    let drugs = req("drugs")?;
    let m = Manifest {
        cells,
        responses,
        drugs,
        ge: kv.remove("ge"),
        mutation: kv.remove("mut"),
        cnv: kv.remove("cnv"),
        prot: kv.remove("prot"),
        healthy_prot: kv.remove("healthy_prot"),
        meth: kv.remove("meth"),
        gene_whitelist: kv.remove("gene_whitelist"),
    };
    if m.ge.is_none() && m.mutation.is_none() && m.cnv.is_none() && m.prot.is_none() && m.meth.is_none() {
        return Err(Error::config(format!("{}: manifest names no omics matrix", path.display())));
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub min_lines_per_type: usize,
    /// Restrict PROT to proteins observed in every retained cell line.
    pub prot_complete_only: bool,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            min_lines_per_type: MIN_LINES_PER_TYPE,
            prot_complete_only: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellExclusion {
    pub cell_id: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct PrepareOutput {
    pub dataset: Dataset,
    pub stats: DatasetStats,
    pub cell_exclusions: Vec<CellExclusion>,
    pub drug_rejections: Vec<DrugRejection>,
    pub pair_exclusions: Vec<Exclusion>,
    pub dropped_types: BTreeMap<String, usize>,
    pub methylation_clusters_kept: Option<(usize, usize)>,
}

struct Matrix {
    columns: Vec<String>,
    rows: BTreeMap<String, Vec<Option<f64>>>,
}

fn is_missing(tok: &str) -> bool {
    matches!(tok, "" | "NA" | "NaN" | "nan" | "N/A" | "null")
}

fn parse_number(tok: &str, path: &Path, line: u64, col: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| {
        Error::data(format!(
            "{}: line {line}, column '{col}': cannot parse '{tok}' as a number",
            path.display()
        ))
    })
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::data(format!("{}: matrix needs an id column and at least one feature", path.display())));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut uniq = HashSet::new();
    if let Some(dup) = columns.iter().find(|c| !uniq.insert(c.as_str())) {
        return Err(Error::data(format!("{}: duplicate feature column '{dup}'", path.display())));
    }
    let mut rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        let vals = rec
            .iter()
            .skip(1)
            .zip(&columns)
            .map(|(tok, col)| {
                if is_missing(tok) {
                    Ok(None)
                } else {
                    parse_number(tok, path, line, col).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.insert(id.clone(), vals).is_some() {
            return Err(Error::data(format!("{}: line {line}: duplicate row for '{id}'", path.display())));
        }
    }
    Ok(Matrix { columns, rows })
}

fn require_complete(m: &Matrix, path: &Path) -> Result<()> {
    for (id, row) in &m.rows {
        if let Some(j) = row.iter().position(Option::is_none) {
            return Err(Error::data(format!(
                "{}: row '{id}', column '{}': missing value",
                path.display(),
                m.columns[j]
            )));
        }
    }
    Ok(())
}

fn check_values(m: &Matrix, path: &Path, allowed: &[f64], what: &str) -> Result<()> {
    for (id, row) in &m.rows {
        for (j, v) in row.iter().enumerate() {
            if let Some(v) = v {
                if !allowed.contains(v) {
                    return Err(Error::data(format!(
                        "{}: row '{id}', column '{}': {what} value {v} not in {allowed:?}",
                        path.display(),
                        m.columns[j]
                    )));
                }
            }
        }
    }
    Ok(())
}

fn restrict_columns(m: &mut Matrix, keep: impl Fn(&str) -> bool) {
    let idx: Vec<usize> = (0..m.columns.len()).filter(|&j| keep(&m.columns[j])).collect();
    m.columns = idx.iter().map(|&j| m.columns[j].clone()).collect();
    for row in m.rows.values_mut() {
        *row = idx.iter().map(|&j| row[j]).collect();
    }
}

/// Min-max over all rows per column; GE profiles carry values in [0,1].
/// Fold scaling refits on training rows, and min-max is invariant to any
/// prior per-column affine map, so this pass leaks nothing into training.
fn unit_range(m: &mut Matrix) {
    for j in 0..m.columns.len() {
        let vals = m.rows.values().filter_map(|r| r[j]);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let span = hi - lo;
        for row in m.rows.values_mut() {
            if let Some(v) = row[j].as_mut() {
                *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
            }
        }
    }
}

fn read_cells(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(Error::data(format!(
                "{}: line {line}: expected 2 columns (cell_id, cancer_type), found {}",
                path.display(),
                rec.len()
            )));
        }
        if rec[0].is_empty() {
            return Err(Error::data(format!("{}: line {line}: empty cell_id", path.display())));
        }
        if !seen.insert(rec[0].to_string()) {
            return Err(Error::data(format!("{}: line {line}: duplicate cell_id '{}'", path.display(), &rec[0])));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

fn read_responses(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("{}: header lacks column '{name}'", path.display())))
    };
    let (d, c, y) = (col("drug_id")?, col("cell_id")?, col("log_ic50")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let tok = &rec[y];
        let v = if is_missing(tok) {
            f64::NAN
        } else {
            parse_number(tok, path, line, "log_ic50")?
        };
        out.push((rec[d].to_string(), rec[c].to_string(), v));
    }
    Ok(out)
}

/// Long format: `cell_id, cluster_id, value, total_depth, n_cpg`.
fn read_methylation(path: &Path) -> Result<(Vec<String>, BTreeMap<String, BTreeMap<String, MethCluster>>)> {
    let mut rdr = reader(path)?;
    let mut clusters = Vec::new();
    let mut known = HashSet::new();
    let mut by_cell: BTreeMap<String, BTreeMap<String, MethCluster>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 5 {
            return Err(Error::data(format!(
                "{}: line {line}: expected 5 columns (cell_id, cluster_id, value, total_depth, n_cpg), found {}",
                path.display(),
                rec.len()
            )));
        }
        let value = parse_number(&rec[2], path, line, "value")?;
        let depth = parse_number(&rec[3], path, line, "total_depth")?;
        let n_cpg: u32 = rec[4].parse().map_err(|_| {
            Error::data(format!("{}: line {line}: n_cpg '{}' is not a non-negative integer", path.display(), &rec[4]))
        })?;
        if n_cpg == 0 {
            return Err(Error::data(format!(
                "{}: line {line}: cluster '{}' has n_cpg = 0",
                path.display(),
                &rec[1]
            )));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::data(format!("{}: line {line}: beta value {value} outside [0,1]", path.display())));
        }
        let cluster = rec[1].to_string();
        if known.insert(cluster.clone()) {
            clusters.push(cluster.clone());
        }
        by_cell
            .entry(rec[0].to_string())
            .or_default()
            .insert(cluster, MethCluster::new(value, depth, n_cpg));
    }
    Ok((clusters, by_cell))
}

fn read_whitelist(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn dense(row: &[Option<f64>]) -> Vec<f64> {
    row.iter().map(|v| v.expect("completeness checked")).collect()
}

/// Runs the whole preprocessing chain and assembles the dataset.
pub fn prepare(manifest: &Manifest, opts: &PrepareOptions) -> Result<PrepareOutput> {
    let cells = read_cells(&manifest.cells)?;
    let whitelist = manifest.gene_whitelist.as_deref().map(read_whitelist).transpose()?;

    let mut matrices: BTreeMap<Modality, Matrix> = BTreeMap::new();
    let simple = [
        (Modality::Ge, &manifest.ge),
        (Modality::Mut, &manifest.mutation),
        (Modality::Cnv, &manifest.cnv),
        (Modality::Prot, &manifest.prot),
    ];
    for (m, path) in simple {
        let Some(path) = path else { continue };
        let mut mat = read_matrix(path)?;
        match m {
            Modality::Ge => {
                require_complete(&mat, path)?;
                unit_range(&mut mat);
            }
            Modality::Mut => {
                require_complete(&mat, path)?;
                check_values(&mat, path, &[0.0, 1.0], "MUT")?;
            }
            Modality::Cnv => {
                require_complete(&mat, path)?;
                check_values(&mat, path, &[-1.0, 0.0, 1.0], "CNV")?;
            }
            _ => {}
        }
        if let (Some(wl), Modality::Mut | Modality::Cnv) = (&whitelist, m) {
            restrict_columns(&mut mat, |c| wl.contains(c));
        }
        matrices.insert(m, mat);
    }

    let healthy = match (&manifest.prot, &manifest.healthy_prot) {
        (None, Some(_)) => {
            return Err(Error::config("manifest names healthy_prot without a prot matrix"));
        }
        (Some(_), Some(path)) => {
            let h = read_matrix(path)?;
            if h.rows.len() != 1 {
                return Err(Error::data(format!("{}: healthy reference must have exactly one row", path.display())));
            }
            let row = h.rows.values().next().expect("one row");
            Some(h.columns.iter().cloned().zip(row.iter().copied()).collect::<BTreeMap<_, _>>())
        }
        _ => None,
    };

    let meth = manifest.meth.as_deref().map(read_methylation).transpose()?;

    // Cells need metadata and a row in every supplied modality.
    let mut cell_exclusions = Vec::new();
    let mut profiled = Vec::new();
    for (id, ty) in &cells {
        let mut missing = matrices
            .iter()
            .filter(|(_, mat)| !mat.rows.contains_key(id))
            .map(|(m, _)| m.key().to_uppercase())
            .collect::<Vec<_>>();
        if let Some((_, by_cell)) = &meth {
            if !by_cell.contains_key(id) {
                missing.push("METH".into());
            }
        }
        if missing.is_empty() {
            profiled.push((id.clone(), ty.clone()));
        } else {
            cell_exclusions.push(CellExclusion {
                cell_id: id.clone(),
                reason: format!("missing {} profile", missing.join(", ")),
            });
        }
    }

    let (retained, dropped_types) = retain_cancer_types(&profiled, opts.min_lines_per_type);
    for (id, ty) in &profiled {
        if dropped_types.contains_key(ty) {
            cell_exclusions.push(CellExclusion {
                cell_id: id.clone(),
                reason: format!("cancer type '{ty}' has fewer than {} cell lines", opts.min_lines_per_type),
            });
        }
    }
    if retained.is_empty() {
        return Err(Error::data("no cell lines remain after profile and cancer-type filtering"));
    }

    if opts.prot_complete_only {
        if let Some(mat) = matrices.get_mut(&Modality::Prot) {
            let keep: BTreeSet<usize> = (0..mat.columns.len())
                .filter(|&j| retained.iter().all(|(c, _)| mat.rows[c][j].is_some()))
                .collect();
            let names: HashSet<String> = keep.iter().map(|&j| mat.columns[j].clone()).collect();
            restrict_columns(mat, |c| names.contains(c));
        }
    }

    let meth_kept = match &meth {
        Some((clusters, by_cell)) => {
            // A cluster absent from a line cannot pass there.
            let absent = MethCluster::new(0.0, 0.0, 1);
            let lines: Vec<Vec<MethCluster>> = retained
                .iter()
                .map(|(c, _)| clusters.iter().map(|k| by_cell[c].get(k).copied().unwrap_or(absent)).collect())
                .collect();
            let (kept, values) = filter_methylation(&lines)?;
            let names: Vec<String> = kept.iter().map(|&i| clusters[i].clone()).collect();
            Some((names, values, clusters.len()))
        }
        None => None,
    };

    let mut profiles = Vec::with_capacity(retained.len());
    for (i, (id, ty)) in retained.iter().enumerate() {
        let row = |m: Modality| matrices.get(&m).map(|mat| mat.rows[id].clone()).unwrap_or_default();
        let prot = row(Modality::Prot);
        let dprot = match (&healthy, matrices.get(&Modality::Prot)) {
            (Some(h), Some(mat)) => mat
                .columns
                .iter()
                .zip(&prot)
                .map(|(name, p)| match h.get(name) {
                    Some(Some(r)) => p.map(|p| p - r),
                    _ => None,
                })
                .collect(),
            _ => prot.iter().map(|p| p.map(|_| 0.0)).collect(),
        };
        let profile = OmicsProfile {
            cell_id: id.clone(),
            cancer_type: ty.clone(),
            ge: dense(&row(Modality::Ge)),
            mutation: dense(&row(Modality::Mut)),
            cnv: dense(&row(Modality::Cnv)),
            prot,
            dprot,
            meth: meth_kept.as_ref().map(|(_, v, _)| v[i].clone()).unwrap_or_default(),
        };
        profile.check()?;
        profiles.push(profile);
    }

    let mut feature_names: BTreeMap<Modality, Vec<String>> =
        matrices.into_iter().map(|(m, mat)| (m, mat.columns)).collect();
    if let Some((names, _, _)) = &meth_kept {
        feature_names.insert(Modality::Meth, names.clone());
    }

    let raw_drugs = read_drug_csv(&manifest.drugs)?;
    let drug_report = filter_drugs(&raw_drugs);
    let drug_ids: BTreeSet<String> = drug_report.kept.iter().map(|d| d.drug_id.clone()).collect();

    let responses = read_responses(&manifest.responses)?;
    // Folds come from the split stage; until then every pair sits in fold 0.
    let placeholder = FoldSplit::single(&retained);
    let (pairs, pair_exclusions) =
        assemble_pairs(&responses, &profiled, &drug_ids, &placeholder, opts.min_lines_per_type);

    let dataset = Dataset {
        feature_names,
        profiles,
        drugs: drug_report.kept,
        pairs,
        folds: None,
    };
    let stats = dataset.stats();
    Ok(PrepareOutput {
        dataset,
        stats,
        cell_exclusions,
        drug_rejections: drug_report.rejected,
        pair_exclusions,
        dropped_types,
        methylation_clusters_kept: meth_kept.map(|(n, _, total)| (n.len(), total)),
    })
}
