//! Multi-omics preprocessing, labeled pair assembly and cold-start folds.

mod dataset;
mod folds;
mod ingest;
mod pairs;
mod scale;

pub use dataset::{Dataset, DatasetStats, FeatureGroup};
pub use folds::{carve_validation, make_folds, FoldSplit};
pub use ingest::{load_manifest, prepare, Manifest, PrepareOptions, PrepareOutput};
pub use pairs::{assemble_pairs, retain_cancer_types, Exclusion, PairSample};
pub use scale::{scale_features, ColumnScaler};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label threshold on log(IC50): strictly below means sensitive.
pub const SENSITIVE_BELOW: f64 = -2.0;
/// Minimum read depth per CpG for a methylation cluster to be trusted.
pub const MIN_METH_COVERAGE: f64 = 10.0;
pub const MIN_LINES_PER_TYPE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Ge,
    Mut,
    Cnv,
    Prot,
    Meth,
}

impl Modality {
    /// Stacking order of the omics input vector.
    pub const ALL: [Modality; 5] = [Modality::Ge, Modality::Mut, Modality::Cnv, Modality::Prot, Modality::Meth];

    pub fn key(self) -> &'static str {
        match self {
            Modality::Ge => "ge",
            Modality::Mut => "mut",
            Modality::Cnv => "cnv",
            Modality::Prot => "prot",
            Modality::Meth => "meth",
        }
    }

    pub fn from_key(s: &str) -> Option<Modality> {
        Modality::ALL.into_iter().find(|m| m.key() == s)
    }

    /// Continuous modalities get fold-fitted min-max scaling; MUT and CNV
    /// keep their discrete encodings.
    pub fn is_continuous(self) -> bool {
        matches!(self, Modality::Ge | Modality::Prot | Modality::Meth)
    }
}

/// Which modalities feed the model. The named presets mirror the
/// MUT+CNV, MUT+CNV+GE and all-omics settings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalitySet(Vec<Modality>);

impl ModalitySet {
    pub fn new(mut mods: Vec<Modality>) -> Result<Self> {
        mods.sort();
        mods.dedup();
        if mods.is_empty() {
            return Err(Error::config("at least one omics modality must be enabled"));
        }
        Ok(ModalitySet(mods))
    }

    pub fn all() -> Self {
        ModalitySet(Modality::ALL.to_vec())
    }

    /// Accepts `all`, `mut+cnv`, `mut+cnv+ge` or any `+`/`,` separated list.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "all" {
            return Ok(Self::all());
        }
        let mods = s
            .split(['+', ','])
            .map(|k| {
                Modality::from_key(k.trim())
                    .ok_or_else(|| Error::config(format!("unknown modality '{k}' (expected ge, mut, cnv, prot, meth or all)")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mods)
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.0.contains(&m)
    }

    pub fn iter(&self) -> impl Iterator<Item = Modality> + '_ {
        self.0.iter().copied()
    }

    pub fn label(&self) -> String {
        if self.0.len() == Modality::ALL.len() {
            return "all".into();
        }
        self.0.iter().map(|m| m.key()).collect::<Vec<_>>().join("+")
    }
}

/// Per-cell-line omics. `prot` entries may be missing; `dprot` is PROT minus
/// the healthy reference and shares its missingness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmicsProfile {
    pub cell_id: String,
    pub cancer_type: String,
    pub ge: Vec<f64>,
    pub mutation: Vec<f64>,
    pub cnv: Vec<f64>,
    pub prot: Vec<Option<f64>>,
    pub dprot: Vec<Option<f64>>,
    pub meth: Vec<f64>,
}

impl OmicsProfile {
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::data(format!("cell {}: {what}", self.cell_id)));
        if self.ge.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("GE value outside [0,1]");
        }
        if self.mutation.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return bad("MUT value outside {0,1}");
        }
        if self.cnv.iter().any(|v| *v != -1.0 && *v != 0.0 && *v != 1.0) {
            return bad("CNV value outside {-1,0,1}");
        }
        if self.meth.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("METH value outside [0,1]");
        }
        if self.prot.len() != self.dprot.len() {
            return bad("PROT and dPROT dimensions differ");
        }
        Ok(())
    }

    /// Integrated proteomics via additive shift weighting.
    pub fn prot_asw(&self) -> Result<Vec<Option<f64>>> {
        asw_integrate(&self.prot, &self.dprot)
    }

    /// Stacked model input in [`Modality::ALL`] order; missing PROT entries
    /// become NaN until a fold scaler imputes them.
    pub fn stacked(&self, mods: &ModalitySet) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for m in mods.iter() {
            match m {
                Modality::Ge => out.extend_from_slice(&self.ge),
                Modality::Mut => out.extend_from_slice(&self.mutation),
                Modality::Cnv => out.extend_from_slice(&self.cnv),
                Modality::Prot => out.extend(self.prot_asw()?.into_iter().map(|v| v.unwrap_or(f64::NAN))),
                Modality::Meth => out.extend_from_slice(&self.meth),
            }
        }
        Ok(out)
    }

    pub fn dim(&self, m: Modality) -> usize {
        match m {
            Modality::Ge => self.ge.len(),
            Modality::Mut => self.mutation.len(),
            Modality::Cnv => self.cnv.len(),
            Modality::Prot => self.prot.len(),
            Modality::Meth => self.meth.len(),
        }
    }
}

/// Elementwise `prot + dprot`; a missing entry on either side stays missing.
pub fn asw_integrate(prot: &[Option<f64>], dprot: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    if prot.len() != dprot.len() {
        return Err(Error::dim(format!(
            "ASW integration: prot has {} entries, dprot has {}",
            prot.len(),
            dprot.len()
        )));
    }
    Ok(prot
        .iter()
        .zip(dprot)
        .map(|(p, d)| Some((*p)? + (*d)?))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethCluster {
    pub value: f64,
    pub total_depth: f64,
    pub n_cpg: u32,
}

impl MethCluster {
    pub fn new(value: f64, total_depth: f64, n_cpg: u32) -> Self {
        MethCluster {
            value,
            total_depth,
            n_cpg,
        }
    }

    /// Coverage `total_depth / n_cpg ≥ 10`, evaluated without division so
    /// the inclusive boundary is exact.
    pub fn passes(&self) -> Result<bool> {
        if self.n_cpg == 0 {
            return Err(Error::data("methylation cluster has zero CpGs"));
        }
        Ok(self.total_depth >= MIN_METH_COVERAGE * f64::from(self.n_cpg))
    }
}

/// Coverage filter across cell lines. Every line lists the same clusters
/// in the same order; a cluster is kept only if it passes in every line.
/// Returns the kept cluster indices and the per-line values.
pub fn filter_methylation(lines: &[Vec<MethCluster>]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let Some(first) = lines.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let n = first.len();
    let mut keep = vec![true; n];
    for (li, line) in lines.iter().enumerate() {
        if line.len() != n {
            return Err(Error::dim(format!(
                "methylation line {li} has {} clusters, expected {n}",
                line.len()
            )));
        }
        for (ci, c) in line.iter().enumerate() {
            let ok = c
                .passes()
                .map_err(|_| Error::data(format!("methylation cluster {ci} of line {li} has n_cpg = 0")))?;
            keep[ci] &= ok;
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    let values = lines
        .iter()
        .map(|line| kept.iter().map(|&i| line[i].value).collect())
        .collect();
    Ok((kept, values))
}

/// 1 iff `log_ic50 < -2.0`.
pub fn binarize_response(log_ic50: f64) -> Result<u8> {
    if log_ic50.is_nan() {
        return Err(Error::data("log(IC50) is NaN"));
    }
    Ok(u8::from(log_ic50 < SENSITIVE_BELOW))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asw_examples() {
        assert_eq!(asw_integrate(&[Some(0.5)], &[Some(0.1)]).unwrap(), vec![Some(0.6)]);
        let p = [Some(0.3), None, Some(-1.0)];
        assert_eq!(asw_integrate(&p, &[Some(0.0); 3]).unwrap(), p.to_vec());
        assert_eq!(
            asw_integrate(&[Some(1.0), Some(-0.2)], &[Some(-1.0), Some(0.2)]).unwrap(),
            vec![Some(0.0), Some(0.0)]
        );
        assert!(matches!(asw_integrate(&[Some(1.0)], &[]), Err(Error::Dimension(_))));
    }

    #[test]
    fn methylation_boundaries() {
        assert!(MethCluster::new(0.7, 100.0, 5).passes().unwrap());
        assert!(!MethCluster::new(0.3, 9.0, 1).passes().unwrap());
        assert!(MethCluster::new(0.5, 10.0, 1).passes().unwrap());
        assert!(MethCluster::new(0.5, 10.0, 0).passes().is_err());
    }

    #[test]
    fn methylation_intersection() {
        let a = vec![MethCluster::new(0.1, 50.0, 1), MethCluster::new(0.2, 50.0, 1), MethCluster::new(0.3, 5.0, 1)];
        let b = vec![MethCluster::new(0.4, 50.0, 1), MethCluster::new(0.5, 1.0, 1), MethCluster::new(0.6, 50.0, 1)];
        let (kept, vals) = filter_methylation(&[a, b]).unwrap();
        assert_eq!(kept, vec![0]);
        assert_eq!(vals, vec![vec![0.1], vec![0.4]]);
    }

    #[test]
    fn binarize_boundary() {
        assert_eq!(binarize_response(-2.5).unwrap(), 1);
        assert_eq!(binarize_response(-2.0).unwrap(), 0);
        assert_eq!(binarize_response(3.1).unwrap(), 0);
        assert!(matches!(binarize_response(f64::NAN), Err(Error::Data(_))));
    }

    #[test]
    fn modality_presets() {
        assert_eq!(ModalitySet::parse("MUT+CNV").unwrap().label(), "mut+cnv");
        assert_eq!(ModalitySet::parse("ge,cnv,mut").unwrap().label(), "ge+mut+cnv");
        assert_eq!(ModalitySet::parse("all").unwrap(), ModalitySet::all());
        assert!(ModalitySet::parse("rna").is_err());
    }
}
