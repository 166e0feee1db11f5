//! SMILES → attributed molecular graph.
//!
//! Supported grammar: organic-subset atoms (`B C N O P S F Cl Br I`),
//! aromatic lowercase atoms, bracket atoms with chirality (`@`, `@@`),
//! hydrogen count and charge, bonds `- = # :`, branches, ring closures
//! (`1`–`9`, `%nn`) and `.` component separators. Isotopes, wildcards,
//! directional bonds and atom classes are rejected with a positioned error.

mod elements;
mod parser;
mod perceive;
pub mod schema;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use schema::{ATOM_SLOTS, BOND_SLOTS};

/// Molecules heavier than this are dropped by [`filter_drugs`].
pub const MAX_MOLECULAR_WEIGHT: f64 = 1000.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmilesError {
    pub offset: usize,
    pub reason: String,
}

impl fmt::Display for SmilesError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SMILES parse error at byte {}: {}", self.offset, self.reason)
    }
}

impl std::error::Error for SmilesError {}

/// Molecular graph with OGB-style categorical features. Every bond is
/// stored twice, once per direction, with identical features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrugGraph {
    pub drug_id: String,
    pub node_features: Vec<[usize; ATOM_SLOTS]>,
    pub edge_index: Vec<[usize; 2]>,
    pub edge_features: Vec<[usize; BOND_SLOTS]>,
}

impl DrugGraph {
    pub fn n_atoms(&self) -> usize {
        self.node_features.len()
    }

    pub fn n_directed_edges(&self) -> usize {
        self.edge_index.len()
    }

    /// `{"nodes": [[9 codes]...], "edges": [[u, v, 3 codes]...]}`
    pub fn to_json(&self) -> serde_json::Value {
        let edges: Vec<Vec<usize>> = self
            .edge_index
            .iter()
            .zip(&self.edge_features)
            .map(|(uv, f)| uv.iter().chain(f.iter()).copied().collect())
            .collect();
        serde_json::json!({ "nodes": self.node_features, "edges": edges })
    }

    /// Relabels atoms so that old atom `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> DrugGraph {
        let mut nodes = vec![[0; ATOM_SLOTS]; self.n_atoms()];
        for (i, f) in self.node_features.iter().enumerate() {
            nodes[perm[i]] = *f;
        }
        DrugGraph {
            drug_id: self.drug_id.clone(),
            node_features: nodes,
            edge_index: self.edge_index.iter().map(|[u, v]| [perm[*u], perm[*v]]).collect(),
            edge_features: self.edge_features.clone(),
        }
    }
}

pub fn parse_smiles(smiles: &str) -> std::result::Result<DrugGraph, SmilesError> {
    parse_drug("", smiles)
}

pub fn parse_drug(drug_id: &str, smiles: &str) -> std::result::Result<DrugGraph, SmilesError> {
    let syn = parser::parse(smiles)?;
    let mol = perceive::perceive(syn)?;

    let node_features = mol
        .atoms
        .iter()
        .map(|a| {
            [
                schema::atomic_num_code(a.z),
                a.chirality.code(),
                schema::degree_code(a.heavy_degree + usize::from(a.h_total)),
                schema::formal_charge_code(a.charge),
                schema::num_h_code(usize::from(a.h_total)),
                schema::radical_code(usize::from(a.radicals)),
                a.hybridization.code(),
                usize::from(a.aromatic),
                usize::from(a.in_ring),
            ]
        })
        .collect();

    let mut edge_index = Vec::with_capacity(mol.bonds.len() * 2);
    let mut edge_features = Vec::with_capacity(mol.bonds.len() * 2);
    for b in &mol.bonds {
        let f = [b.order.code(), 0, usize::from(b.conjugated)];
        edge_index.push([b.a, b.b]);
        edge_features.push(f);
        edge_index.push([b.b, b.a]);
        edge_features.push(f);
    }

    Ok(DrugGraph {
        drug_id: drug_id.to_string(),
        node_features,
        edge_index,
        edge_features,
    })
}

/// Sum of standard atomic weights, implicit hydrogens included.
pub fn molecular_weight(graph: &DrugGraph) -> f64 {
    let h = elements::weight(1);
    graph
        .node_features
        .iter()
        .map(|f| {
            let heavy = schema::decode_atomic_num(f[schema::ATOM_ATOMIC_NUM]).map_or(0.0, elements::weight);
            let n_h = schema::decode_num_h(f[schema::ATOM_NUM_H]).unwrap_or(0);
            heavy + n_h as f64 * h
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrugRejection {
    pub drug_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DrugFilterReport {
    pub kept: Vec<DrugGraph>,
    pub rejected: Vec<DrugRejection>,
}

/// Parses every `(id, smiles)` pair and keeps drug-like molecules: a
/// non-empty unique id, a parseable structure and weight ≤ 1000 g/mol.
pub fn filter_drugs(drugs: &[(String, String)]) -> DrugFilterReport {
    let mut report = DrugFilterReport::default();
    let mut seen = HashSet::new();
    for (id, smiles) in drugs {
        let id = id.trim();
        let reject = |reason: String| DrugRejection {
            drug_id: id.to_string(),
            reason,
        };
        if id.is_empty() {
            report.rejected.push(reject("missing drug id".into()));
            continue;
        }
        if !seen.insert(id.to_string()) {
            report.rejected.push(reject("duplicate drug id".into()));
            continue;
        }
        match parse_drug(id, smiles.trim()) {
            Err(e) => report.rejected.push(reject(e.to_string())),
            Ok(g) => {
                let mw = molecular_weight(&g);
                if mw > MAX_MOLECULAR_WEIGHT {
                    report.rejected.push(reject(format!("MW>1000 ({mw:.2} g/mol)")));
                } else {
                    report.kept.push(g);
                }
            }
        }
    }
    report
}

/// Reads a `drug_id,smiles` CSV with a header row.
pub fn read_drug_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() != 2 {
            let line = rec.position().map_or(0, |p| p.line());
            return Err(Error::Data(format!(
                "{}: line {line}: expected 2 columns (drug_id, smiles), found {}",
                path.display(),
                rec.len()
            )));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}
