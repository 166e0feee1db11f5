use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FoldSplit, Modality, ModalitySet, OmicsProfile, PairSample};
use crate::error::{Error, Result};
use crate::smiles::DrugGraph;

const BUNDLE_FORMAT: &str = "deepdtf-dataset/1";

/// Everything the model needs after preprocessing: profiles of retained
/// cell lines, parsed drugs, labeled pairs and their fold assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Feature names per available modality, in column order.
    pub feature_names: BTreeMap<Modality, Vec<String>>,
    pub profiles: Vec<OmicsProfile>,
    pub drugs: Vec<DrugGraph>,
    pub pairs: Vec<PairSample>,
    /// Set by the split stage.
    pub folds: Option<FoldSplit>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pairs: usize,
    pub cells: usize,
    pub drugs: usize,
    pub cancer_types: usize,
    pub sensitive: usize,
    pub modality_dims: BTreeMap<String, usize>,
}

/// Input coordinates (into a stacked omics vector) that belong to one gene.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub gene: String,
    pub features: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    format: String,
    dataset: Dataset,
}

impl Dataset {
    pub fn available(&self) -> Vec<Modality> {
        self.feature_names.keys().copied().collect()
    }

    pub fn check_modalities(&self, mods: &ModalitySet) -> Result<()> {
        for m in mods.iter() {
            if !self.feature_names.contains_key(&m) {
                return Err(Error::config(format!(
                    "modality '{}' is enabled but the dataset has no {} matrix",
                    m.key(),
                    m.key()
                )));
            }
        }
        Ok(())
    }

    /// `(modality, width)` for each enabled modality in stacking order.
    pub fn segments(&self, mods: &ModalitySet) -> Result<Vec<(Modality, usize)>> {
        self.check_modalities(mods)?;
        Ok(mods.iter().map(|m| (m, self.feature_names[&m].len())).collect())
    }

    pub fn profile_index(&self) -> HashMap<&str, usize> {
        self.profiles.iter().enumerate().map(|(i, p)| (p.cell_id.as_str(), i)).collect()
    }

    pub fn drug_index(&self) -> HashMap<&str, usize> {
        self.drugs.iter().enumerate().map(|(i, d)| (d.drug_id.as_str(), i)).collect()
    }

    /// Stacked raw omics rows, one per profile, in profile order.
    pub fn stacked_rows(&self, mods: &ModalitySet) -> Result<Vec<Vec<f64>>> {
        self.check_modalities(mods)?;
        self.profiles.iter().map(|p| p.stacked(mods)).collect()
    }

    /// Marks columns of discrete modalities, which fold scaling leaves alone.
    pub fn passthrough_mask(&self, mods: &ModalitySet) -> Result<Vec<bool>> {
        Ok(self
            .segments(mods)?
            .into_iter()
            .flat_map(|(m, w)| std::iter::repeat_n(!m.is_continuous(), w))
            .collect())
    }

    /// Groups stacked-vector coordinates by feature name across the
    /// modalities in `grouped`. Coordinates of other modalities belong to
    /// no group.
    pub fn gene_groups(&self, mods: &ModalitySet, grouped: &[Modality]) -> Result<Vec<FeatureGroup>> {
        let mut by_gene: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        let mut offset = 0;
        for (m, w) in self.segments(mods)? {
            if grouped.contains(&m) {
                for (j, name) in self.feature_names[&m].iter().enumerate() {
                    by_gene.entry(name.as_str()).or_default().push(offset + j);
                }
            }
            offset += w;
        }
        Ok(by_gene
            .into_iter()
            .map(|(g, features)| FeatureGroup {
                gene: g.to_string(),
                features,
            })
            .collect())
    }

    /// Replaces the fold assignment and retags every pair.
    pub fn apply_split(&mut self, split: FoldSplit) -> Result<()> {
        for p in &mut self.pairs {
            p.fold = split.fold(&p.cell_id).ok_or_else(|| {
                Error::data(format!("split does not assign cell line '{}'", p.cell_id))
            })?;
        }
        self.folds = Some(split);
        Ok(())
    }

    pub fn split(&self) -> Result<&FoldSplit> {
        self.folds
            .as_ref()
            .ok_or_else(|| Error::Prerequisite("dataset has no fold assignment; run `deepdtf split` first".into()))
    }

    /// `(cell_id, cancer_type)` for every profile.
    pub fn cells(&self) -> Vec<(String, String)> {
        self.profiles.iter().map(|p| (p.cell_id.clone(), p.cancer_type.clone())).collect()
    }

    pub fn stats(&self) -> DatasetStats {
        let cells: BTreeSet<&str> = self.pairs.iter().map(|p| p.cell_id.as_str()).collect();
        let drugs: BTreeSet<&str> = self.pairs.iter().map(|p| p.drug_id.as_str()).collect();
        let idx = self.profile_index();
        let types: BTreeSet<&str> = cells
            .iter()
            .filter_map(|c| idx.get(c).map(|&i| self.profiles[i].cancer_type.as_str()))
            .collect();
        DatasetStats {
            pairs: self.pairs.len(),
            cells: cells.len(),
            drugs: drugs.len(),
            cancer_types: types.len(),
            sensitive: self.pairs.iter().filter(|p| p.label == 1).count(),
            modality_dims: self
                .feature_names
                .iter()
                .map(|(m, names)| (m.key().to_string(), names.len()))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bundle = Bundle {
            format: BUNDLE_FORMAT.into(),
            dataset: self.clone(),
        };
        let bytes = bincode::serialize(&bundle)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bundle: Bundle = bincode::deserialize(&bytes)?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(Error::Serialization(format!(
                "{}: unsupported dataset format '{}'",
                path.display(),
                bundle.format
            )));
        }
        Ok(bundle.dataset)
    }
}
