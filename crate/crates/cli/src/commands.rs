use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use deepdtf::digest::sha256_hex;
use deepdtf::interpret::{explain_report, read_gmt, write_report};
use deepdtf::model::{Checkpoint, Model};
use deepdtf::omics::{load_manifest, make_folds, prepare, ColumnScaler, Dataset, FoldSplit, ModalitySet};
use deepdtf::smiles::parse_smiles;
use deepdtf::train::{
    aggregate, cross_validate, log_csv, plan_folds, predict_pairs, FoldInputs, FoldPlan, MetricReport, Prediction,
};
use deepdtf::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

const DATASET: &str = "dataset/dataset.bin";
const SPLIT: &str = "split/split.json";
const TRAIN: &str = "train";

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serialization(e.to_string()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write(path, &to_json(v)?)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn hash_file(path: &Path) -> Result<String> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| Error::io(path, e))
}

fn require(path: &Path, what: &str, command: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Prerequisite(format!(
            "no {what} at {}; run `deepdtf {command}` first",
            path.display()
        )))
    }
}

/// Writes the resolved config and the content hash of every input beside
/// a command's outputs.
fn record_run(dir: &Path, cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), hash_file(p)?);
    }
    write(&dir.join("config.txt"), &cfg.render())?;
    write_json(&dir.join("inputs.json"), &hashes)
}

pub fn cmd_prepare(cfg: &RunConfig) -> Result<String> {
    let Some(manifest_path) = cfg.path("manifest") else {
        return Err(Error::Config("prepare needs --manifest".into()));
    };
    let manifest = load_manifest(&manifest_path)?;
    let out = prepare(&manifest, &cfg.prepare()?)?;
    let dir = cfg.out().join("dataset");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    out.dataset.save(&dir.join("dataset.bin"))?;
    write_json(&dir.join("stats.json"), &out.stats)?;
    write_json(
        &dir.join("exclusions.json"),
        &json!({
            "cells": out.cell_exclusions,
            "drugs": out.drug_rejections,
            "pairs": out.pair_exclusions,
            "dropped_cancer_types": out.dropped_types,
            "methylation_clusters_kept": out.methylation_clusters_kept,
        }),
    )?;
    let inputs: Vec<PathBuf> = [
        Some(manifest_path.clone()),
        Some(manifest.cells.clone()),
        Some(manifest.responses.clone()),
        Some(manifest.drugs.clone()),
        manifest.ge.clone(),
        manifest.mutation.clone(),
        manifest.cnv.clone(),
        manifest.prot.clone(),
        manifest.healthy_prot.clone(),
        manifest.meth.clone(),
        manifest.gene_whitelist.clone(),
    ]
    .into_iter()
    .flatten()
    .collect();
    record_run(&dir, cfg, &inputs)?;
    let s = &out.stats;
    Ok(format!(
        "{} pairs, {} cell lines, {} drugs, {} cancer types",
        s.pairs, s.cells, s.drugs, s.cancer_types
    ))
}

fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, PathBuf)> {
    let path = cfg.out().join(DATASET);
    require(&path, "dataset", "prepare")?;
    Ok((Dataset::load(&path)?, path))
}

fn load_split(cfg: &RunConfig, ds: &mut Dataset) -> Result<PathBuf> {
    let path = cfg.out().join(SPLIT);
    require(&path, "fold split", "split")?;
    let split: FoldSplit =
        serde_json::from_str(&read(&path)?).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
    ds.apply_split(split)?;
    Ok(path)
}

pub fn cmd_split(cfg: &RunConfig) -> Result<String> {
    let (mut ds, ds_path) = load_dataset(cfg)?;
    let split = make_folds(&ds.cells(), cfg.get("folds")?, cfg.seed()?)?;
    split.audit()?;
    let dir = cfg.out().join("split");
    write_json(&dir.join("split.json"), &split)?;
    write_json(&dir.join("folds.json"), &split.manifest_json())?;
    record_run(&dir, cfg, &[ds_path])?;
    let hash = split.content_hash();
    ds.apply_split(split)?;
    Ok(format!("{} folds over {} cell lines ({hash})", ds.split()?.k, ds.profiles.len()))
}

fn fold_dir(cfg: &RunConfig, fold: usize) -> PathBuf {
    cfg.out().join(TRAIN).join(format!("fold_{fold}"))
}

fn predictions_csv(rows: &[Prediction]) -> String {
    let mut s = String::from("cell_id,drug_id,log_ic50,label,y_hat,p_hat\n");
    for p in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.cell_id, p.drug_id, p.log_ic50, p.label, p.y_hat, p.p_hat
        ));
    }
    s
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let (mut ds, ds_path) = load_dataset(cfg)?;
    let split_path = load_split(cfg, &mut ds)?;
    let tc = cfg.train()?;
    let seed = cfg.seed()?;
    let only = cfg.run_folds()?;
    let plans = plan_folds(&ds, &tc, seed)?;
    let (results, report) = cross_validate(&ds, &cfg.model()?, &tc, seed, only.as_deref())?;
    for r in &results {
        let dir = fold_dir(cfg, r.fold);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Checkpoint::from_model(&r.model, seed, r.state.step).save(&dir.join("model.json"))?;
        write_json(&dir.join("scaler.json"), &r.scaler)?;
        write_json(&dir.join("plan.json"), &plans[r.fold])?;
        write_json(&dir.join("metrics.json"), &r.test)?;
        write(&dir.join("log.csv"), &log_csv(&r.log))?;
        write(&dir.join("predictions.csv"), &predictions_csv(&r.predictions))?;
    }
    let dir = cfg.out().join(TRAIN);
    write_json(&dir.join("results.json"), &report)?;
    record_run(&dir, cfg, &[ds_path, split_path])?;
    let m = &report.mean;
    let show = |v: Option<f64>| v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"));
    Ok(format!(
        "{} folds: rmse {} r2 {} pcc {} auc {}",
        report.folds.len(),
        show(m.rmse),
        show(m.r2),
        show(m.pcc),
        show(m.auc)
    ))
}

struct Trained {
    model: Model,
    inputs: FoldInputs,
    plan: FoldPlan,
    files: Vec<PathBuf>,
}

fn load_fold(cfg: &RunConfig, ds: &Dataset, fold: usize) -> Result<Trained> {
    let dir = fold_dir(cfg, fold);
    let model_path = dir.join("model.json");
    require(&model_path, &format!("checkpoint for fold {fold}"), "train")?;
    let model = Checkpoint::load(&model_path)?.into_model()?;
    let scaler_path = dir.join("scaler.json");
    let plan_path = dir.join("plan.json");
    let de = |p: &Path, e: serde_json::Error| Error::Serialization(format!("{}: {e}", p.display()));
    let scaler: ColumnScaler = serde_json::from_str(&read(&scaler_path)?).map_err(|e| de(&scaler_path, e))?;
    let plan: FoldPlan = serde_json::from_str(&read(&plan_path)?).map_err(|e| de(&plan_path, e))?;
    if plan.train.iter().chain(&plan.val).chain(&plan.test).any(|&i| i >= ds.pairs.len()) {
        return Err(Error::Data(format!("{} does not match the dataset", plan_path.display())));
    }
    let mods = ModalitySet::new(model.config.segments.iter().map(|s| s.0).collect())?;
    let inputs = FoldInputs::with_scaler(ds, &mods, scaler)?;
    Ok(Trained {
        model,
        inputs,
        plan,
        files: vec![model_path, scaler_path, plan_path],
    })
}

/// Folds that `train` wrote, in order.
fn trained_folds(cfg: &RunConfig) -> Result<Vec<usize>> {
    let path = cfg.out().join(TRAIN).join("results.json");
    require(&path, "training results", "train")?;
    let v: serde_json::Value =
        serde_json::from_str(&read(&path)?).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
    let folds = v["folds"]
        .as_array()
        .ok_or_else(|| Error::Data(format!("{} lists no folds", path.display())))?;
    folds
        .iter()
        .map(|f| {
            f["fold"]
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| Error::Data(format!("{}: malformed fold entry", path.display())))
        })
        .collect()
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let (mut ds, ds_path) = load_dataset(cfg)?;
    let split_path = load_split(cfg, &mut ds)?;
    let tc = cfg.train()?;
    let set = cfg.eval_set()?;
    let dir = cfg.out().join("eval");
    let mut inputs = vec![ds_path, split_path];
    let mut per_fold = Vec::new();
    for fold in trained_folds(cfg)? {
        let t = load_fold(cfg, &ds, fold)?;
        let idx: Vec<usize> = match set {
            "test" => t.plan.test.clone(),
            "train" => t.plan.train.clone(),
            _ => t.plan.train.iter().chain(&t.plan.val).chain(&t.plan.test).copied().collect(),
        };
        let (y_hat, p_hat) = predict_pairs(&t.model, &ds, &t.inputs, &idx, tc.batch_size, tc.workers)?;
        let y: Vec<f64> = idx.iter().map(|&i| t.inputs.y[i]).collect();
        let labels: Vec<u8> = idx.iter().map(|&i| t.inputs.t[i]).collect();
        let report = MetricReport::evaluate(&y_hat, &y, &p_hat, &labels, tc.threshold)?;
        let preds: Vec<Prediction> = idx
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
        write(&dir.join(format!("predictions_fold_{fold}.csv")), &predictions_csv(&preds))?;
        per_fold.push((fold, idx.len(), report));
        inputs.extend(t.files);
    }
    let reports: Vec<MetricReport> = per_fold.iter().map(|f| f.2.clone()).collect();
    let (mean, sd) = aggregate(&reports);
    let folds: Vec<serde_json::Value> = per_fold
        .iter()
        .map(|(f, n, m)| json!({ "fold": f, "n_pairs": n, "metrics": m }))
        .collect();
    write_json(
        &dir.join("metrics.json"),
        &json!({ "eval_set": set, "folds": folds, "mean": mean, "sd": sd }),
    )?;
    record_run(&dir, cfg, &inputs)?;
    let show = |v: Option<f64>| v.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"));
    Ok(format!(
        "{set} set over {} folds: rmse {} acc {} auc {}",
        per_fold.len(),
        show(mean.rmse),
        show(mean.acc),
        show(mean.auc)
    ))
}

pub fn cmd_explain(cfg: &RunConfig) -> Result<String> {
    let Some(gmt) = cfg.path("gene_sets") else {
        return Err(Error::Config("explain needs --gene_sets (a GMT file)".into()));
    };
    let (mut ds, ds_path) = load_dataset(cfg)?;
    let split_path = load_split(cfg, &mut ds)?;
    let fold: usize = cfg.get("explain_fold")?;
    let t = load_fold(cfg, &ds, fold)?;
    let sets = read_gmt(&gmt)?;
    let types: BTreeMap<&str, &str> = ds
        .profiles
        .iter()
        .map(|p| (p.cell_id.as_str(), p.cancer_type.as_str()))
        .collect();
    let wanted = cfg.str("cancer_type");
    let pairs: Vec<usize> = t
        .plan
        .test
        .iter()
        .copied()
        .filter(|&i| wanted.is_empty() || types.get(ds.pairs[i].cell_id.as_str()) == Some(&wanted))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data(format!("no test pairs of cancer type '{wanted}' in fold {fold}")));
    }
    let train_cells: BTreeSet<usize> = t.plan.train.iter().map(|&i| t.inputs.pairs[i].0).collect();
    let pool: Vec<usize> = train_cells.into_iter().collect();
    let report = explain_report(&t.model, &ds, &t.inputs, &pairs, &pool, &sets, &cfg.explain()?)?;
    let dir = cfg.out().join("explain");
    write_report(&report, &dir)?;
    let mut inputs = vec![ds_path, split_path, gmt];
    inputs.extend(t.files);
    record_run(&dir, cfg, &inputs)?;
    Ok(format!(
        "{} attributions over {} genes; {} sensitivity and {} resistance gene sets",
        report.attributions.len(),
        report.groups.len(),
        report.positive_sets.len(),
        report.negative_sets.len()
    ))
}

pub fn cmd_parse_smiles(smiles: &str) -> Result<String> {
    let g = parse_smiles(smiles)?;
    serde_json::to_string_pretty(&g.to_json()).map_err(|e| Error::Serialization(e.to_string()))
}
