use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{binarize_response, FoldSplit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub cell_id: String,
    pub drug_id: String,
    pub log_ic50: f64,
    pub label: u8,
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub drug_id: String,
    pub cell_id: String,
    pub reason: String,
}

/// Keeps cell lines whose cancer type has at least `min_lines` members.
/// Returns kept `(cell_id, cancer_type)` and the dropped types with counts.
pub fn retain_cancer_types(
    cells: &[(String, String)],
    min_lines: usize,
) -> (Vec<(String, String)>, BTreeMap<String, usize>) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, t) in cells {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let kept = cells
        .iter()
        .filter(|(_, t)| counts[t.as_str()] >= min_lines)
        .cloned()
        .collect();
    let dropped = counts
        .into_iter()
        .filter(|(_, n)| *n < min_lines)
        .map(|(t, n)| (t.to_string(), n))
        .collect();
    (kept, dropped)
}

/// Labels each `(drug_id, cell_id, log_ic50)` response and tags it with its
/// cell line's fold. `cells` lists every cell line with omics, before the
/// cancer-type retention rule; pairs are excluded (with a reason) when the
/// drug was filtered, the cell is unknown or its type is too small, the
/// value is not finite, or the pair repeats.
pub fn assemble_pairs(
    responses: &[(String, String, f64)],
    cells: &[(String, String)],
    drugs: &BTreeSet<String>,
    folds: &FoldSplit,
    min_lines_per_type: usize,
) -> (Vec<PairSample>, Vec<Exclusion>) {
    let type_of: BTreeMap<&str, &str> = cells.iter().map(|(c, t)| (c.as_str(), t.as_str())).collect();
    let mut per_type: BTreeMap<&str, usize> = BTreeMap::new();
    for t in type_of.values() {
        *per_type.entry(t).or_default() += 1;
    }

    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    let mut seen = HashSet::new();
    for (drug, cell, y) in responses {
        let reason = if !drugs.contains(drug) {
            Some("drug filtered".to_string())
        } else if let Some(t) = type_of.get(cell.as_str()) {
            if per_type[t] < min_lines_per_type {
                Some(format!("cancer type '{t}' has fewer than {min_lines_per_type} cell lines"))
            } else if folds.fold(cell).is_none() {
                Some("cell line not in fold split".to_string())
            } else {
                None
            }
        } else {
            Some("cell line filtered".to_string())
        };
        let reason = reason.or_else(|| (!y.is_finite()).then(|| "non-finite log(IC50)".to_string()));
        let reason = reason.or_else(|| (!seen.insert((drug.as_str(), cell.as_str()))).then(|| "duplicate pair".to_string()));
        match reason {
            Some(reason) => excluded.push(Exclusion {
                drug_id: drug.clone(),
                cell_id: cell.clone(),
                reason,
            }),
            None => pairs.push(PairSample {
                cell_id: cell.clone(),
                drug_id: drug.clone(),
                log_ic50: *y,
                label: binarize_response(*y).expect("finite value"),
                fold: folds.fold(cell).expect("checked above"),
            }),
        }
    }
    (pairs, excluded)
}
