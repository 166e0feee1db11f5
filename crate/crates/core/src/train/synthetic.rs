//! Generated datasets with a known response function, for overfit,
//! determinism and split-contrast runs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::omics::{binarize_response, make_folds, Dataset, Modality, OmicsProfile, PairSample};
use crate::smiles::parse_drug;

const SMILES: [&str; 8] = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "c1ccc2c(c1)cc[nH]2",
    "OCC(O)CO",
    "Clc1ccc(cc1)C#N",
    "CCN(CC)CC",
    "O=C1NC(=O)C=C1",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Response {
    /// `y = -2 + 3 (ge0 - ge1) + drug offset`: linear in GE, noiseless.
    Linear,
    /// A nonlinear function of many GE features, identical for every drug.
    CellOnly,
    /// `y = -2 - 4 (mean(ge0..ge4) - 0.5)`: the first five genes drive
    /// sensitivity together.
    Pathway,
}

/// Genes that drive [`Response::Pathway`].
pub const PATHWAY_GENES: usize = 5;

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub n_cells: usize,
    pub n_types: usize,
    pub n_genes: usize,
    pub n_mut: usize,
    pub n_drugs: usize,
    pub response: Response,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_cells: 8,
            n_types: 2,
            n_genes: 8,
            n_mut: 4,
            n_drugs: 8,
            response: Response::Linear,
            folds: 2,
            seed: 0,
        }
    }
}

/// Dataset with GE and MUT profiles, every (cell, drug) pair labeled, and
/// cell-line folds applied.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    let min_genes = match spec.response {
        Response::Linear => 2,
        Response::CellOnly => 1,
        Response::Pathway => PATHWAY_GENES,
    };
    if spec.n_genes < min_genes {
        return Err(crate::Error::config(format!("response needs at least {min_genes} genes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_drugs = spec.n_drugs.min(SMILES.len());
    let drugs = SMILES[..n_drugs]
        .iter()
        .enumerate()
        .map(|(i, s)| parse_drug(&format!("D{i:02}"), s).map_err(crate::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let offsets: Vec<f64> = (0..n_drugs).map(|i| (i as f64 / n_drugs.max(2) as f64) - 0.5).collect();
    let proj: Vec<f64> = (0..spec.n_genes).map(|_| rng.random_range(-1.0..1.0)).collect();
    let profiles: Vec<OmicsProfile> = (0..spec.n_cells)
        .map(|c| OmicsProfile {
            cell_id: format!("C{c:03}"),
            cancer_type: format!("T{}", c % spec.n_types.max(1)),
            ge: (0..spec.n_genes).map(|_| rng.random_range(0.0..1.0)).collect(),
            mutation: (0..spec.n_mut).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect(),
            cnv: Vec::new(),
            prot: Vec::new(),
            dprot: Vec::new(),
            meth: Vec::new(),
        })
        .collect();
    let mut pairs = Vec::new();
    for p in &profiles {
        for (d, dg) in drugs.iter().enumerate() {
            let y = match spec.response {
                Response::Linear => -2.0 + 3.0 * (p.ge[0] - p.ge[1]) + offsets[d],
                Response::CellOnly => {
                    let u: f64 = p.ge.iter().zip(&proj).map(|(a, b)| a * b).sum();
                    -2.0 + 2.5 * (4.0 * u).sin()
                }
                Response::Pathway => {
                    let m = p.ge[..PATHWAY_GENES].iter().sum::<f64>() / PATHWAY_GENES as f64;
                    -2.0 - 4.0 * (m - 0.5)
                }
            };
            pairs.push(PairSample {
                cell_id: p.cell_id.clone(),
                drug_id: dg.drug_id.clone(),
                log_ic50: y,
                label: binarize_response(y)?,
                fold: 0,
            });
        }
    }
    let mut feature_names = BTreeMap::new();
    feature_names.insert(Modality::Ge, (0..spec.n_genes).map(|j| format!("G{j}")).collect());
    feature_names.insert(Modality::Mut, (0..spec.n_mut).map(|j| format!("G{j}")).collect());
    let mut ds = Dataset {
        feature_names,
        profiles,
        drugs,
        pairs,
        folds: None,
    };
    if spec.folds >= 2 {
        let split = make_folds(&ds.cells(), spec.folds, spec.seed)?;
        ds.apply_split(split)?;
    }
    Ok(ds)
}
