use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::json_hash;
use crate::error::{Error, Result};

/// Cell-line level fold assignment stratified by cancer type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    pub fold_of: BTreeMap<String, usize>,
    pub cancer_type: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct FoldEntry<'a> {
    train: Vec<&'a str>,
    test: Vec<&'a str>,
}

impl FoldSplit {
    /// Every cell in fold 0; used before a real split exists.
    pub fn single(cells: &[(String, String)]) -> Self {
        FoldSplit {
            k: 1,
            seed: 0,
            fold_of: cells.iter().map(|(c, _)| (c.clone(), 0)).collect(),
            cancer_type: cells.iter().cloned().collect(),
        }
    }

    pub fn fold(&self, cell_id: &str) -> Option<usize> {
        self.fold_of.get(cell_id).copied()
    }

    pub fn test_ids(&self, fold: usize) -> Vec<&str> {
        self.fold_of
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    pub fn train_ids(&self, fold: usize) -> Vec<&str> {
        self.fold_of
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    pub fn n_cells(&self) -> usize {
        self.fold_of.len()
    }

    /// Checks that train and test are disjoint and together cover every
    /// cell for each fold.
    pub fn audit(&self) -> Result<()> {
        for f in 0..self.k {
            let test: BTreeSet<&str> = self.test_ids(f).into_iter().collect();
            let train: BTreeSet<&str> = self.train_ids(f).into_iter().collect();
            if let Some(c) = test.intersection(&train).next() {
                return Err(Error::Contract(format!("fold {f}: cell {c} in both train and test")));
            }
            if test.len() + train.len() != self.n_cells() {
                return Err(Error::Contract(format!("fold {f}: train and test do not cover all cells")));
            }
        }
        Ok(())
    }

    /// `{"k", "seed", "folds": {"0": {"train": [...], "test": [...]}, ...}, "content_hash"}`
    pub fn manifest_json(&self) -> serde_json::Value {
        let folds: BTreeMap<String, FoldEntry> = (0..self.k)
            .map(|f| {
                (
                    f.to_string(),
                    FoldEntry {
                        train: self.train_ids(f),
                        test: self.test_ids(f),
                    },
                )
            })
            .collect();
        let hash = json_hash(&folds);
        serde_json::json!({
            "k": self.k,
            "seed": self.seed,
            "folds": folds,
            "content_hash": hash,
        })
    }

    pub fn content_hash(&self) -> String {
        self.manifest_json()["content_hash"].as_str().unwrap_or_default().to_string()
    }
}

fn group_by_type<'a>(cells: &'a [(String, String)]) -> Result<BTreeMap<&'a str, Vec<&'a str>>> {
    let mut seen = BTreeSet::new();
    let mut by_type: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, ty) in cells {
        if !seen.insert(id.as_str()) {
            return Err(Error::data(format!("duplicate cell id '{id}'")));
        }
        by_type.entry(ty.as_str()).or_default().push(id.as_str());
    }
    for ids in by_type.values_mut() {
        ids.sort_unstable();
    }
    Ok(by_type)
}

/// Within each cancer type (sorted by name), cells are shuffled with the
/// seed and dealt round-robin; the dealing position carries over between
/// types so small types do not all land in fold 0.
pub fn make_folds(cells: &[(String, String)], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    if cells.len() < k {
        return Err(Error::config(format!("{} cell lines cannot fill {k} folds", cells.len())));
    }
    let by_type = group_by_type(cells)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = BTreeMap::new();
    let mut next = 0;
    for ids in by_type.values() {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        for id in ids {
            fold_of.insert(id.to_string(), next % k);
            next += 1;
        }
    }
    let cancer_type = cells.iter().cloned().collect();
    Ok(FoldSplit {
        k,
        seed,
        fold_of,
        cancer_type,
    })
}

/// Splits training cells into (train, validation), taking `fraction` of
/// the cells (at least one) proportionally from each cancer type.
pub fn carve_validation(cells: &[(String, String)], fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::config(format!("validation fraction must lie in [0,1), got {fraction}")));
    }
    if fraction == 0.0 {
        let mut all: Vec<String> = cells.iter().map(|(c, _)| c.clone()).collect();
        all.sort();
        return Ok((all, Vec::new()));
    }
    if cells.len() < 2 {
        return Err(Error::config("validation carve-out needs at least 2 training cell lines"));
    }
    let by_type = group_by_type(cells)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Order cells by their fractional rank inside their type, so any prefix
    // is close to proportional across types.
    let mut ranked: Vec<(f64, &str, &str)> = Vec::with_capacity(cells.len());
    for (ty, ids) in &by_type {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        let n = ids.len() as f64;
        for (i, id) in ids.into_iter().enumerate() {
            ranked.push(((i as f64 + 0.5) / n, ty, id));
        }
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let n_val = ((cells.len() as f64 * fraction).round() as usize).clamp(1, cells.len() - 1);
    let mut val: Vec<String> = ranked[..n_val].iter().map(|r| r.2.to_string()).collect();
    let mut train: Vec<String> = ranked[n_val..].iter().map(|r| r.2.to_string()).collect();
    val.sort();
    train.sort();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(types: &[(&str, usize)]) -> Vec<(String, String)> {
        types
            .iter()
            .flat_map(|(t, n)| (0..*n).map(move |i| (format!("{t}_{i:02}"), t.to_string())))
            .collect()
    }

    #[test]
    fn ten_cells_two_per_fold() {
        let s = make_folds(&cells(&[("A", 10)]), 5, 1).unwrap();
        for f in 0..5 {
            assert_eq!(s.test_ids(f).len(), 2);
        }
        s.audit().unwrap();
    }

    #[test]
    fn deterministic() {
        let c = cells(&[("A", 13), ("B", 7)]);
        assert_eq!(make_folds(&c, 5, 9).unwrap(), make_folds(&c, 5, 9).unwrap());
        assert_ne!(make_folds(&c, 5, 9).unwrap(), make_folds(&c, 5, 10).unwrap());
    }

    #[test]
    fn errors() {
        assert!(matches!(make_folds(&cells(&[("A", 3)]), 5, 0), Err(Error::Config(_))));
        assert!(matches!(make_folds(&cells(&[("A", 10)]), 1, 0), Err(Error::Config(_))));
        let mut c = cells(&[("A", 6)]);
        c.push(c[0].clone());
        assert!(matches!(make_folds(&c, 5, 0), Err(Error::Data(_))));
    }

    #[test]
    fn manifest_has_hash() {
        let s = make_folds(&cells(&[("A", 10)]), 5, 1).unwrap();
        let m = s.manifest_json();
        assert_eq!(m["folds"]["0"]["test"].as_array().unwrap().len(), 2);
        assert_eq!(m["content_hash"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn validation_is_stratified() {
        let c = cells(&[("A", 40), ("B", 20), ("C", 10)]);
        let (train, val) = carve_validation(&c, 0.1, 3).unwrap();
        assert_eq!(val.len(), 7);
        assert_eq!(train.len() + val.len(), 70);
        let count = |t: &str| val.iter().filter(|v| v.starts_with(t)).count();
        assert_eq!((count("A"), count("B"), count("C")), (4, 2, 1));
    }
}
