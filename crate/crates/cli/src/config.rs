//! Flat `key = value` run configuration. Values resolve from built-in
//! defaults, then the config file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use deepdtf::interpret::{EstimatorChoice, ExplainConfig, GseaConfig, Target};
use deepdtf::model::{Activation, ModelConfig, Pooling, TransformerSpec};
use deepdtf::omics::{ModalitySet, PrepareOptions};
use deepdtf::train::{SplitMode, TrainConfig};
use deepdtf::{Error, Result};

pub struct Key {
    pub name: &'static str,
    pub default: String,
    pub help: &'static str,
}

fn key(name: &'static str, default: impl Display, help: &'static str) -> Key {
    Key {
        name,
        default: default.to_string(),
        help,
    }
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn join<T: Display>(v: &[T], sep: &str) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

/// Every configurable key with its default, in output order.
pub fn keys() -> Vec<Key> {
    let m = ModelConfig::new(Vec::new());
    let t = TrainConfig::default();
    let e = ExplainConfig::default();
    let p = PrepareOptions::default();
    vec![
        key("out", "out", "output directory shared by all commands"),
        key("seed", 0, "master seed"),
        key("workers", 1, "worker threads"),
        key("manifest", "", "data manifest for prepare"),
        key("min_lines_per_type", p.min_lines_per_type, "drop cancer types with fewer cell lines"),
        key("prot_complete_only", p.prot_complete_only, "keep only proteins observed in every cell line"),
        key("folds", 5, "number of cell-line folds"),
        key("modalities", t.modalities.label(), "omics modalities, e.g. mut+cnv, mut+cnv+ge or all"),
        key("split_mode", t.split_mode.name(), "cell_line or random_pair"),
        key("run_folds", "all", "folds to train: all or a comma list"),
        key("epochs", t.epochs, "training epochs"),
        key("batch_size", t.batch_size, "pairs per optimizer step"),
        key("lr", t.lr, "learning rate"),
        key("weight_decay", t.weight_decay, "L2 weight decay added to gradients"),
        key("val_fraction", t.val_fraction, "fraction of training cell lines held out for validation"),
        key("threshold", t.threshold, "decision threshold on the sensitivity probability"),
        key("max_steps", opt(t.max_steps), "stop after this many steps (none for no limit)"),
        key("token_dim", m.token_dim, "token width d"),
        key("kernel_sizes", join(&m.kernel_sizes, ","), "omics convolution kernel sizes"),
        key("conv_channels", m.conv_channels, "channels per omics convolution"),
        key("gate_hidden", m.gate_hidden, "hidden width of the channel gate"),
        key("max_omics_tokens", m.max_omics_tokens, "upper bound on omics tokens"),
        key("omics_layers", m.omics.layers, "omics transformer layers"),
        key("omics_heads", m.omics.heads, "omics transformer heads"),
        key("drug_layers", m.drug.layers, "drug transformer layers"),
        key("drug_heads", m.drug.heads, "drug transformer heads"),
        key("fusion_layers", m.fusion.layers, "fusion transformer layers"),
        key("fusion_heads", m.fusion.heads, "fusion transformer heads"),
        key("ffn_mult", m.ffn_mult, "feed-forward width multiplier"),
        key("gnn_layers", m.gnn_layers, "message passing rounds"),
        key("pooling", m.pooling.name(), "attention or mean"),
        key("head_hidden", m.head_hidden, "hidden width of the prediction heads"),
        key("activation", m.activation.name(), "gelu or relu"),
        key("dropout", m.dropout, "dropout rate"),
        key("omics_positions", m.omics_positions, "learned omics token positions"),
        key("alpha", m.alpha, "regression loss weight"),
        key("beta", m.beta, "focal loss weight"),
        key("lambda", m.lambda, "L2 penalty weight in the loss"),
        key("gamma", m.gamma, "focal loss focusing parameter"),
        key("ln_eps", m.ln_eps, "layer norm epsilon"),
        key("eval_set", "test", "pairs scored by eval: test, train or all"),
        key("explain_fold", 0, "fold whose checkpoint explain uses"),
        key("gene_sets", "", "GMT file for enrichment"),
        key("cancer_type", "", "restrict explained pairs to one cancer type"),
        key("target", e.target.name(), "classification or regression output"),
        key("estimator", e.estimator.name(), "auto, exact or sampled"),
        key("exact_max_groups", e.exact_max_groups, "auto uses exact Shapley up to this many genes"),
        key("n_permutations", e.n_permutations, "permutations for sampled Shapley"),
        key("n_background", e.n_background, "background cell lines"),
        key("per_cell", opt(e.per_cell), "explained pairs per (cancer type, drug); none for all"),
        key("top_m", e.top_m, "genes listed per direction"),
        key("grouped", "ge+mut+cnv", "modalities merged per gene"),
        key("gsea_weight", e.gsea.weight, "enrichment weight exponent"),
        key("gsea_perm", e.gsea.n_perm, "enrichment permutations"),
        key("gsea_min_size", e.gsea.min_size, "smallest gene set tested"),
    ]
}

/// Resolved values for every key.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    order: Vec<&'static str>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("{}:{}: expected key = value", path.display(), i + 1)));
        };
        let k = k.trim().to_string();
        if out.iter().any(|(x, _)| *x == k) {
            return Err(Error::Config(format!("{}:{}: duplicate key '{k}'", path.display(), i + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<Self> {
        let ks = keys();
        let mut values: BTreeMap<String, String> = ks.iter().map(|k| (k.name.to_string(), k.default.clone())).collect();
        for (k, v) in file.iter().chain(flags) {
            match values.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => return Err(Error::Config(format!("unknown config key '{k}'"))),
            }
        }
        let rc = RunConfig {
            values,
            order: ks.iter().map(|k| k.name).collect(),
        };
        // surface type errors before any command runs
        rc.train()?;
        rc.model()?;
        rc.explain()?;
        rc.prepare()?;
        rc.get::<usize>("folds")?;
        rc.get::<usize>("explain_fold")?;
        rc.run_folds()?;
        rc.eval_set()?;
        Ok(rc)
    }

    pub fn str(&self, k: &str) -> &str {
        self.values.get(k).map(String::as_str).unwrap_or_default()
    }

    pub fn get<T: FromStr>(&self, k: &str) -> Result<T> {
        let v = self.str(k);
        v.parse()
            .map_err(|_| Error::Config(format!("invalid value '{v}' for {k}")))
    }

    fn optional<T: FromStr>(&self, k: &str) -> Result<Option<T>> {
        match self.str(k) {
            "none" | "" => Ok(None),
            _ => self.get(k).map(Some),
        }
    }

    pub fn path(&self, k: &str) -> Option<PathBuf> {
        let v = self.str(k);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.str("out"))
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn workers(&self) -> Result<usize> {
        let w: usize = self.get("workers")?;
        if w == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(w)
    }

    /// `key = value` lines in declaration order.
    pub fn render(&self) -> String {
        self.order.iter().map(|k| format!("{k} = {}\n", self.str(k))).collect()
    }

    pub fn prepare(&self) -> Result<PrepareOptions> {
        Ok(PrepareOptions {
            min_lines_per_type: self.get("min_lines_per_type")?,
            prot_complete_only: self.get("prot_complete_only")?,
        })
    }

    pub fn modalities(&self) -> Result<ModalitySet> {
        ModalitySet::parse(self.str("modalities"))
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            epochs: self.get("epochs")?,
            batch_size: self.get("batch_size")?,
            lr: self.get("lr")?,
            weight_decay: self.get("weight_decay")?,
            val_fraction: self.get("val_fraction")?,
            threshold: self.get("threshold")?,
            max_steps: self.optional("max_steps")?,
            modalities: self.modalities()?,
            split_mode: SplitMode::parse(self.str("split_mode"))?,
            workers: self.workers()?,
        };
        t.validate()?;
        Ok(t)
    }

    /// Model template; omics segments are filled in from the dataset.
    pub fn model(&self) -> Result<ModelConfig> {
        let spec = |p: &str| -> Result<TransformerSpec> {
            Ok(TransformerSpec {
                layers: self.get(&format!("{p}_layers"))?,
                heads: self.get(&format!("{p}_heads"))?,
            })
        };
        let kernel_sizes = self
            .str("kernel_sizes")
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid kernel size '{s}'")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let m = ModelConfig {
            token_dim: self.get("token_dim")?,
            segments: Vec::new(),
            kernel_sizes,
            conv_channels: self.get("conv_channels")?,
            gate_hidden: self.get("gate_hidden")?,
            max_omics_tokens: self.get("max_omics_tokens")?,
            omics: spec("omics")?,
            drug: spec("drug")?,
            fusion: spec("fusion")?,
            ffn_mult: self.get("ffn_mult")?,
            gnn_layers: self.get("gnn_layers")?,
            pooling: Pooling::parse(self.str("pooling"))?,
            head_hidden: self.get("head_hidden")?,
            activation: Activation::parse(self.str("activation"))?,
            dropout: self.get("dropout")?,
            omics_positions: self.get("omics_positions")?,
            alpha: self.get("alpha")?,
            beta: self.get("beta")?,
            lambda: self.get("lambda")?,
            gamma: self.get("gamma")?,
            ln_eps: self.get("ln_eps")?,
        };
        Ok(m)
    }

    pub fn explain(&self) -> Result<ExplainConfig> {
        Ok(ExplainConfig {
            n_background: self.get("n_background")?,
            estimator: EstimatorChoice::parse(self.str("estimator"))?,
            exact_max_groups: self.get("exact_max_groups")?,
            n_permutations: self.get("n_permutations")?,
            per_cell: self.optional("per_cell")?,
            top_m: self.get("top_m")?,
            target: Target::parse(self.str("target"))?,
            grouped: ModalitySet::parse(self.str("grouped"))?.iter().collect(),
            gsea: GseaConfig {
                weight: self.get("gsea_weight")?,
                n_perm: self.get("gsea_perm")?,
                seed: self.seed()?,
                min_size: self.get("gsea_min_size")?,
                workers: self.workers()?,
            },
            seed: self.seed()?,
            workers: self.workers()?,
        })
    }

    pub fn run_folds(&self) -> Result<Option<Vec<usize>>> {
        let v = self.str("run_folds");
        if v == "all" {
            return Ok(None);
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid fold '{s}' in run_folds")))
            })
            .collect::<Result<Vec<usize>>>()
            .map(Some)
    }

    pub fn eval_set(&self) -> Result<&str> {
        match self.str("eval_set") {
            s @ ("test" | "train" | "all") => Ok(s),
            s => Err(Error::Config(format!("eval_set must be test, train or all, got '{s}'"))),
        }
    }
}
