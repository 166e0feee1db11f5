use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{Batch, Model, ModelConfig};
use crate::omics::{carve_validation, ColumnScaler, Dataset, ModalitySet};

use super::metrics::{aggregate, rmse, MetricReport};
use super::optim::Adam;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Folds over cell lines: test cell lines are never seen in training.
    CellLine,
    /// Folds over pairs, for contrast only.
    RandomPair,
}

impl SplitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cell_line" | "cell-line" => Ok(SplitMode::CellLine),
            "random_pair" | "random-pair" => Ok(SplitMode::RandomPair),
            _ => Err(Error::config(format!("unknown split mode '{s}' (cell_line or random_pair)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitMode::CellLine => "cell_line",
            SplitMode::RandomPair => "random_pair",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub val_fraction: f64,
    pub threshold: f64,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub modalities: ModalitySet,
    pub split_mode: SplitMode,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 3e-4,
            val_fraction: 0.1,
            threshold: 0.5,
            max_steps: None,
            modalities: ModalitySet::all(),
            split_mode: SplitMode::CellLine,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.workers == 0 {
            return Err(Error::config("workers must be at least 1"));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pair indices of one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPlan {
    /// Test pairs of fold `fold` and a cell-level validation carve-out of
    /// the remaining cell lines.
    pub fn cell_line(ds: &Dataset, fold: usize, val_fraction: f64, seed: u64) -> Result<Self> {
        let split = ds.split()?;
        if fold >= split.k {
            return Err(Error::config(format!("fold {fold} out of range for {} folds", split.k)));
        }
        let train_cells: Vec<(String, String)> = split
            .train_ids(fold)
            .into_iter()
            .map(|c| (c.to_string(), split.cancer_type[c].clone()))
            .collect();
        let (_, val_cells) = carve_validation(&train_cells, val_fraction, mix_seed(seed, fold as u64))?;
        let val_cells: BTreeSet<&str> = val_cells.iter().map(String::as_str).collect();
        let mut plan = FoldPlan {
            fold,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for (i, p) in ds.pairs.iter().enumerate() {
            let f = split
                .fold(&p.cell_id)
                .ok_or_else(|| Error::data(format!("cell line '{}' has no fold", p.cell_id)))?;
            if f == fold {
                plan.test.push(i);
            } else if val_cells.contains(p.cell_id.as_str()) {
                plan.val.push(i);
            } else {
                plan.train.push(i);
            }
        }
        plan.require_nonempty()?;
        Ok(plan)
    }

    /// `k` folds over shuffled pairs, ignoring cell identity.
    pub fn random_pairs(ds: &Dataset, k: usize, val_fraction: f64, seed: u64) -> Result<Vec<Self>> {
        if k < 2 || ds.pairs.len() < k {
            return Err(Error::config(format!("cannot split {} pairs into {k} folds", ds.pairs.len())));
        }
        let mut idx: Vec<usize> = (0..ds.pairs.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        (0..k)
            .map(|fold| {
                let test: Vec<usize> = idx.iter().enumerate().filter(|(j, _)| j % k == fold).map(|(_, i)| *i).collect();
                let mut rest: Vec<usize> = idx.iter().enumerate().filter(|(j, _)| j % k != fold).map(|(_, i)| *i).collect();
                let n_val = if val_fraction > 0.0 {
                    ((rest.len() as f64 * val_fraction).round() as usize).clamp(1, rest.len() - 1)
                } else {
                    0
                };
                let val = rest.split_off(rest.len() - n_val);
                let plan = FoldPlan {
                    fold,
                    train: sorted(rest),
                    val: sorted(val),
                    test: sorted(test),
                };
                plan.require_nonempty()?;
                Ok(plan)
            })
            .collect()
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::config(format!("fold {} has no training pairs", self.fold)));
        }
        if self.test.is_empty() {
            return Err(Error::config(format!("fold {} has no test pairs", self.fold)));
        }
        Ok(())
    }

    /// Fails if a test cell line also occurs among training or validation
    /// pairs.
    pub fn audit_cells(&self, ds: &Dataset) -> Result<()> {
        let cells = |idx: &[usize]| -> BTreeSet<&str> { idx.iter().map(|&i| ds.pairs[i].cell_id.as_str()).collect() };
        let (train, val, test) = (cells(&self.train), cells(&self.val), cells(&self.test));
        for (name, other) in [("training", &train), ("validation", &val)] {
            if let Some(c) = test.intersection(other).next() {
                return Err(Error::Contract(format!(
                    "fold {}: test cell line {c} also appears in {name} pairs",
                    self.fold
                )));
            }
        }
        if let Some(c) = train.intersection(&val).next() {
            return Err(Error::Contract(format!("fold {}: cell line {c} in both training and validation", self.fold)));
        }
        Ok(())
    }
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

/// Model inputs for one fold: omics rows scaled with statistics of the
/// training cell lines only.
#[derive(Clone, Debug)]
pub struct FoldInputs {
    pub cells: Vec<Vec<f64>>,
    pub scaler: ColumnScaler,
    /// `(profile index, drug index)` per dataset pair.
    pub pairs: Vec<(usize, usize)>,
    pub y: Vec<f64>,
    pub t: Vec<u8>,
}

impl FoldInputs {
    pub fn new(ds: &Dataset, mods: &ModalitySet, train_pairs: &[usize]) -> Result<Self> {
        let pairs = Self::index_pairs(ds)?;
        let raw = ds.stacked_rows(mods)?;
        let train_cells: BTreeSet<usize> = train_pairs.iter().map(|&i| pairs[i].0).collect();
        let fit_rows: Vec<Vec<f64>> = train_cells.iter().map(|&c| raw[c].clone()).collect();
        let scaler = ColumnScaler::fit_masked(&fit_rows, &ds.passthrough_mask(mods)?)?;
        Self::assemble(ds, &raw, scaler, pairs)
    }

    fn index_pairs(ds: &Dataset) -> Result<Vec<(usize, usize)>> {
        let prof = ds.profile_index();
        let drug = ds.drug_index();
        let pairs = ds
            .pairs
            .iter()
            .map(|p| {
                let c = *prof
                    .get(p.cell_id.as_str())
                    .ok_or_else(|| Error::data(format!("pair refers to unknown cell line '{}'", p.cell_id)))?;
                let d = *drug
                    .get(p.drug_id.as_str())
                    .ok_or_else(|| Error::data(format!("pair refers to unknown drug '{}'", p.drug_id)))?;
                Ok((c, d))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(pairs)
    }

    /// Inputs under a scaler fitted earlier, e.g. loaded beside a checkpoint.
    pub fn with_scaler(ds: &Dataset, mods: &ModalitySet, scaler: ColumnScaler) -> Result<Self> {
        let raw = ds.stacked_rows(mods)?;
        let pairs = Self::index_pairs(ds)?;
        Self::assemble(ds, &raw, scaler, pairs)
    }

    fn assemble(ds: &Dataset, raw: &[Vec<f64>], scaler: ColumnScaler, pairs: Vec<(usize, usize)>) -> Result<Self> {
        Ok(FoldInputs {
            cells: scaler.transform(raw)?,
            scaler,
            y: ds.pairs.iter().map(|p| p.log_ic50).collect(),
            t: ds.pairs.iter().map(|p| p.label).collect(),
            pairs,
        })
    }

    /// Batch over the given pair indices with each cell and drug once.
    pub fn batch<'a>(&'a self, ds: &'a Dataset, idx: &[usize]) -> Batch<'a> {
        let mut cell_slot: HashMap<usize, usize> = HashMap::new();
        let mut drug_slot: HashMap<usize, usize> = HashMap::new();
        let mut batch = Batch {
            cells: Vec::new(),
            drugs: Vec::new(),
            pairs: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            let (c, d) = self.pairs[i];
            let cs = *cell_slot.entry(c).or_insert_with(|| {
                batch.cells.push(&self.cells[c]);
                batch.cells.len() - 1
            });
            let ds_ = *drug_slot.entry(d).or_insert_with(|| {
                batch.drugs.push(&ds.drugs[d]);
                batch.drugs.len() - 1
            });
            batch.pairs.push((cs, ds_));
        }
        batch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub cell_id: String,
    pub drug_id: String,
    pub log_ic50: f64,
    pub label: u8,
    pub y_hat: f64,
    pub p_hat: f64,
}

/// Evaluation-mode predictions for `idx`, computed in batches spread over
/// `workers` threads. Output order follows `idx`.
pub fn predict_pairs(model: &Model, ds: &Dataset, inputs: &FoldInputs, idx: &[usize], batch_size: usize, workers: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let chunks: Vec<&[usize]> = idx.chunks(batch_size.max(1)).collect();
    let run = || -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        chunks
            .par_iter()
            .map(|c| {
                let out = model.predict(&inputs.batch(ds, c))?;
                Ok((out.y_hat, out.p_hat))
            })
            .collect()
    };
    let parts = if workers > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(run)?
    } else {
        chunks
            .iter()
            .map(|c| {
                let out = model.predict(&inputs.batch(ds, c))?;
                Ok((out.y_hat, out.p_hat))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut y = Vec::with_capacity(idx.len());
    let mut p = Vec::with_capacity(idx.len());
    for (a, b) in parts {
        y.extend(a);
        p.extend(b);
    }
    Ok((y, p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub best_val_rmse: Option<f64>,
    pub best_epoch: usize,
    pub best_step: u64,
    /// Best validation RMSE so far, after every epoch.
    pub best_history: Vec<f64>,
}

pub struct FoldResult {
    pub fold: usize,
    pub state: TrainState,
    pub test: MetricReport,
    /// Parameters of the selected checkpoint.
    pub model: Model,
    pub optimizer: Adam,
    pub scaler: ColumnScaler,
    pub log: Vec<LogRow>,
    pub predictions: Vec<Prediction>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,epoch,train_loss,val_rmse\n");
    for r in rows {
        let v = r.val_rmse.map(|v| format!("{v}")).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, r.train_loss, v));
    }
    s
}

/// Model config with the omics segments of `ds` under `mods`.
pub fn fit_config(template: &ModelConfig, ds: &Dataset, mods: &ModalitySet) -> Result<ModelConfig> {
    let mut cfg = template.clone();
    cfg.segments = ds.segments(mods)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Trains on `plan.train`, keeps the parameters with the lowest validation
/// RMSE seen at epoch ends (the last epoch when there is no validation
/// set), and reports metrics on `plan.test`.
pub fn train_fold(ds: &Dataset, plan: &FoldPlan, template: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<FoldResult> {
    cfg.validate()?;
    plan.require_nonempty()?;
    let model_cfg = fit_config(template, ds, &cfg.modalities)?;
    let inputs = FoldInputs::new(ds, &cfg.modalities, &plan.train)?;
    let fold_seed = mix_seed(seed, plan.fold as u64);
    let mut model = Model::new(model_cfg, fold_seed)?;
    let mut opt = Adam::new(&model.params, cfg.lr, cfg.weight_decay);
    let mut best = model.params.clone();
    let mut state = TrainState {
        step: 0,
        epoch: 0,
        best_val_rmse: None,
        best_epoch: 0,
        best_step: 0,
        best_history: Vec::new(),
    };
    let mut log = Vec::new();
    let mut order = plan.train.clone();
    let mut done = false;
    for epoch in 0..cfg.epochs {
        state.epoch = epoch + 1;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(fold_seed, 1 << 40 | epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            let batch = inputs.batch(ds, chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| inputs.y[i]).collect();
            let t: Vec<u8> = chunk.iter().map(|&i| inputs.t[i]).collect();
            let mut g = Graph::training(mix_seed(fold_seed, state.step));
            let p = model.bind(&mut g, true);
            let f = model.forward(&mut g, &p, &batch)?;
            let loss = model.loss(&mut g, &p, &f, &y, &t)?;
            g.ensure_finite(loss, "training loss")?;
            let lv = g.item(loss);
            g.backward(loss)?;
            let grads: Vec<Vec<f64>> = p
                .iter()
                .zip(model.params.iter())
                .map(|(v, prm)| g.grad(*v).map_or_else(|| vec![0.0; prm.value.len()], <[f64]>::to_vec))
                .collect();
            opt.step(&mut model.params, &grads)?;
            state.step += 1;
            log.push(LogRow {
                step: state.step,
                epoch: state.epoch,
                train_loss: lv,
                val_rmse: None,
            });
            if cfg.max_steps.is_some_and(|m| state.step >= m) {
                done = true;
                break;
            }
        }
        if plan.val.is_empty() {
            best = model.params.clone();
            state.best_epoch = state.epoch;
            state.best_step = state.step;
        } else {
            let (yh, _) = predict_pairs(&model, ds, &inputs, &plan.val, cfg.batch_size, cfg.workers)?;
            let yv: Vec<f64> = plan.val.iter().map(|&i| inputs.y[i]).collect();
            let v = if yv.len() >= 2 { rmse(&yh, &yv)? } else { (yh[0] - yv[0]).abs() };
            if let Some(last) = log.last_mut() {
                last.val_rmse = Some(v);
            }
            if state.best_val_rmse.is_none_or(|b| v < b) {
                state.best_val_rmse = Some(v);
                state.best_epoch = state.epoch;
                state.best_step = state.step;
                best = model.params.clone();
            }
            state.best_history.push(state.best_val_rmse.unwrap_or(v));
        }
        if done {
            break;
        }
    }
    model.params = best;
    let (y_hat, p_hat) = predict_pairs(&model, ds, &inputs, &plan.test, cfg.batch_size, cfg.workers)?;
    let y: Vec<f64> = plan.test.iter().map(|&i| inputs.y[i]).collect();
    let t: Vec<u8> = plan.test.iter().map(|&i| inputs.t[i]).collect();
    let test = MetricReport::evaluate(&y_hat, &y, &p_hat, &t, cfg.threshold)?;
    let predictions = plan
        .test
        .iter()
        .zip(y_hat.iter().zip(&p_hat))
        .map(|(&i, (yh, ph))| {
            let p = &ds.pairs[i];
            Prediction {
                cell_id: p.cell_id.clone(),
                drug_id: p.drug_id.clone(),
                log_ic50: p.log_ic50,
                label: p.label,
                y_hat: *yh,
                p_hat: *ph,
            }
        })
        .collect();
    Ok(FoldResult {
        fold: plan.fold,
        state,
        test,
        model,
        optimizer: opt,
        scaler: inputs.scaler,
        log,
        predictions,
        n_train: plan.train.len(),
        n_val: plan.val.len(),
        n_test: plan.test.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub metrics: MetricReport,
    pub best_val_rmse: Option<f64>,
    pub best_epoch: usize,
    pub steps: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub split_mode: SplitMode,
    pub folds: Vec<FoldSummary>,
    pub mean: MetricReport,
    pub sd: MetricReport,
}

/// Fold plans for every fold, each audited before any training starts.
pub fn plan_folds(ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Vec<FoldPlan>> {
    let plans = match cfg.split_mode {
        SplitMode::CellLine => {
            let split = ds.split()?;
            split.audit()?;
            (0..split.k)
                .map(|f| FoldPlan::cell_line(ds, f, cfg.val_fraction, seed))
                .collect::<Result<Vec<_>>>()?
        }
        SplitMode::RandomPair => {
            let k = ds.split().map_or(5, |s| s.k);
            FoldPlan::random_pairs(ds, k, cfg.val_fraction, seed)?
        }
    };
    if cfg.split_mode == SplitMode::CellLine {
        for p in &plans {
            p.audit_cells(ds)?;
        }
    }
    Ok(plans)
}

pub fn summarize(results: &[FoldResult], mode: SplitMode) -> CvReport {
    let folds: Vec<FoldSummary> = results
        .iter()
        .map(|r| FoldSummary {
            fold: r.fold,
            metrics: r.test.clone(),
            best_val_rmse: r.state.best_val_rmse,
            best_epoch: r.state.best_epoch,
            steps: r.state.step,
            n_train: r.n_train,
            n_val: r.n_val,
            n_test: r.n_test,
        })
        .collect();
    let reports: Vec<MetricReport> = folds.iter().map(|f| f.metrics.clone()).collect();
    let (mean, sd) = aggregate(&reports);
    CvReport {
        split_mode: mode,
        folds,
        mean,
        sd,
    }
}

/// Runs every fold (optionally only `only`), returning per-fold results and
/// the aggregate report.
pub fn cross_validate(ds: &Dataset, template: &ModelConfig, cfg: &TrainConfig, seed: u64, only: Option<&[usize]>) -> Result<(Vec<FoldResult>, CvReport)> {
    let plans = plan_folds(ds, cfg, seed)?;
    let chosen: Vec<&FoldPlan> = match only {
        Some(f) => {
            if let Some(bad) = f.iter().find(|&&x| x >= plans.len()) {
                return Err(Error::config(format!("fold {bad} out of range for {} folds", plans.len())));
            }
            plans.iter().filter(|p| f.contains(&p.fold)).collect()
        }
        None => plans.iter().collect(),
    };
    let results: Vec<FoldResult> = if cfg.workers > 1 && chosen.len() > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(|| chosen.par_iter().map(|plan| train_fold(ds, plan, template, cfg, seed)).collect::<Result<_>>())?
    } else {
        chosen.iter().map(|plan| train_fold(ds, plan, template, cfg, seed)).collect::<Result<_>>()?
    };
    let report = summarize(&results, cfg.split_mode);
    Ok((results, report))
}

/// Sorted map of the cell lines per role in a plan, for audit output.
pub fn plan_cells(ds: &Dataset, plan: &FoldPlan) -> BTreeMap<&'static str, BTreeSet<String>> {
    let cells = |idx: &[usize]| idx.iter().map(|&i| ds.pairs[i].cell_id.clone()).collect();
    BTreeMap::from([("train", cells(&plan.train)), ("val", cells(&plan.val)), ("test", cells(&plan.test))])
}
