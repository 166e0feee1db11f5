use std::collections::BTreeSet;

use deepdtf::digest::json_hash;
use deepdtf::model::ModelConfig;
use deepdtf::omics::ModalitySet;
use deepdtf::train::synthetic::{synthetic_dataset, Response, SyntheticSpec};
use deepdtf::train::{
    auc, classification_metrics, cross_validate, pcc, r2, rmse, train_fold, FoldPlan, SplitMode, TrainConfig,
};
use deepdtf::Error;
use proptest::prelude::*;

fn tiny() -> ModelConfig {
    ModelConfig::tiny(Vec::new(), 16)
}

fn fast(epochs: usize, batch: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        modalities: ModalitySet::parse("ge+mut").unwrap(),
        ..TrainConfig::default()
    }
}

#[test]
fn metric_examples() {
    let y = [0.0, 1.0, 2.0];
    assert_eq!(rmse(&y, &y).unwrap(), 0.0);
    assert_eq!(r2(&y, &y).unwrap(), 1.0);
    assert!((pcc(&y, &y).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(r2(&[1.0; 3], &y).unwrap(), 0.0);
    assert!((rmse(&[0.0, 1.0, 4.0], &y).unwrap() - 1.1547005383792515).abs() < 1e-15);
    assert!(matches!(pcc(&[1.0; 3], &y), Err(Error::UndefinedMetric(_))));
    assert!(matches!(r2(&y, &[2.0; 3]), Err(Error::UndefinedMetric(_))));

    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auc(&[0.4; 5], &[0, 1, 1, 0, 1]).unwrap(), 0.5);
    assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert!(matches!(auc(&[0.1, 0.4], &[0, 0]), Err(Error::UndefinedMetric(_))));

    let (acc, sen, spec) = classification_metrics(&[0.9, 0.2, 0.6, 0.4], &[1, 1, 0, 0], 0.5).unwrap();
    assert_eq!((acc, sen, spec), (0.5, 0.5, 0.5));
    assert!(matches!(classification_metrics(&[0.9], &[1], 0.5), Err(Error::UndefinedMetric(_))));
}

fn brute_auc(p: &[f64], t: &[u8]) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            if t[i] == 1 && t[j] == 0 {
                n += 1.0;
                s += if p[i] > p[j] {
                    1.0
                } else if p[i] == p[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    s / n
}

proptest! {
    #[test]
    fn auc_matches_pairwise(
        v in prop::collection::vec((0u8..20, any::<bool>()), 2..300)
    ) {
        // coarse scores force many ties
        let p: Vec<f64> = v.iter().map(|(s, _)| f64::from(*s) / 20.0).collect();
        let t: Vec<u8> = v.iter().map(|(_, l)| u8::from(*l)).collect();
        prop_assume!(t.contains(&0) && t.contains(&1));
        prop_assert!((auc(&p, &t).unwrap() - brute_auc(&p, &t)).abs() < 1e-12);
    }

    #[test]
    fn regression_metrics_match_formulas(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..200)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let n = a.len() as f64;
        let mse: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
        prop_assert!((rmse(&a, &b).unwrap() - mse.sqrt()).abs() < 1e-12);
        let mb = b.iter().sum::<f64>() / n;
        let tot: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        prop_assert!((r2(&a, &b).unwrap() - (1.0 - mse * n / tot)).abs() < 1e-12);
        let ma = a.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let sa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>().sqrt();
        let r = cov / (sa * tot.sqrt());
        prop_assert!((pcc(&a, &b).unwrap() - r).abs() < 1e-12);
    }
}

#[test]
fn overfits_sixty_four_pairs() {
    let ds = synthetic_dataset(&SyntheticSpec::default()).unwrap();
    assert_eq!(ds.pairs.len(), 64);
    let all: Vec<usize> = (0..64).collect();
    let plan = FoldPlan {
        fold: 0,
        train: all.clone(),
        val: vec![],
        test: all,
    };
    let cfg = TrainConfig {
        max_steps: Some(2000),
        ..fast(2000, 64)
    };
    let r = train_fold(&ds, &plan, &tiny(), &cfg, 1).unwrap();
    assert!(r.log.iter().all(|l| l.train_loss.is_finite()));
    let rmse = r.test.rmse.unwrap();
    let acc = r.test.acc.unwrap();
    println!("overfit: steps {} rmse {rmse:.4} acc {acc}", r.state.step);
    assert!(r.state.step <= 2000);
    assert!(rmse < 0.1 && acc == 1.0, "rmse {rmse} acc {acc}");
}

fn linear_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_cells: 16,
        n_types: 2,
        n_genes: 2,
        n_mut: 1,
        n_drugs: 4,
        folds: 2,
        ..SyntheticSpec::default()
    }
}

#[test]
fn linear_response_generalizes_to_unseen_cells() {
    // one drug per cell so all 64 pairs carry distinct GE profiles
    let ds = synthetic_dataset(&SyntheticSpec {
        n_cells: 64,
        n_drugs: 1,
        ..linear_spec()
    })
    .unwrap();
    assert_eq!(ds.pairs.len(), 64);
    let plan = FoldPlan::cell_line(&ds, 0, 0.1, 0).unwrap();
    let cfg = TrainConfig {
        modalities: ModalitySet::parse("ge").unwrap(),
        ..fast(60, 4)
    };
    let r = train_fold(&ds, &plan, &tiny(), &cfg, 0).unwrap();
    let rmse = r.test.rmse.unwrap();
    println!("linear cold-start: rmse {rmse:.4} after {} epochs", r.state.epoch);
    assert!(r.state.epoch <= 60);
    assert!(rmse < 0.15, "rmse {rmse}");
    let h = &r.state.best_history;
    assert!(h.windows(2).all(|w| w[1] <= w[0]));
    assert!(r.log.iter().all(|l| l.train_loss.is_finite()));
}

#[test]
fn same_seed_same_result() {
    let ds = synthetic_dataset(&linear_spec()).unwrap();
    let plan = FoldPlan::cell_line(&ds, 1, 0.1, 5).unwrap();
    let cfg = fast(3, 16);
    let a = train_fold(&ds, &plan, &tiny(), &cfg, 5).unwrap();
    let b = train_fold(&ds, &plan, &tiny(), &cfg, 5).unwrap();
    assert_eq!(a.test, b.test);
    assert_eq!(json_hash(&a.model.params), json_hash(&b.model.params));
    assert_eq!(a.log, b.log);
    let c = train_fold(&ds, &plan, &tiny(), &cfg, 6).unwrap();
    assert_ne!(json_hash(&a.model.params), json_hash(&c.model.params));

    // parallel evaluation does not change anything
    let par = TrainConfig { workers: 3, batch_size: 5, ..cfg.clone() };
    let d = train_fold(&ds, &plan, &tiny(), &TrainConfig { batch_size: 5, ..cfg }, 5).unwrap();
    let e = train_fold(&ds, &plan, &tiny(), &par, 5).unwrap();
    assert_eq!(d.test, e.test);
}

#[test]
fn cross_validation_aggregates_and_never_leaks() {
    let ds = synthetic_dataset(&SyntheticSpec {
        n_cells: 12,
        folds: 3,
        n_drugs: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let (results, report) = cross_validate(&ds, &tiny(), &fast(2, 16), 9, None).unwrap();
    assert_eq!(report.folds.len(), 3);
    let rm: Vec<f64> = report.folds.iter().map(|f| f.metrics.rmse.unwrap()).collect();
    assert!((report.mean.rmse.unwrap() - rm.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    let split = ds.split().unwrap();
    for r in &results {
        let plan = FoldPlan::cell_line(&ds, r.fold, 0.1, 9).unwrap();
        let seen: BTreeSet<&str> = plan
            .train
            .iter()
            .chain(&plan.val)
            .map(|&i| ds.pairs[i].cell_id.as_str())
            .collect();
        for p in &r.predictions {
            assert!(!seen.contains(p.cell_id.as_str()));
            assert_eq!(split.fold(&p.cell_id), Some(r.fold));
        }
    }
    let (only, _) = cross_validate(&ds, &tiny(), &fast(1, 16), 9, Some(&[2])).unwrap();
    assert_eq!(only.len(), 1);
    assert_eq!(only[0].fold, 2);
}

#[test]
fn empty_folds_are_config_errors() {
    let ds = synthetic_dataset(&linear_spec()).unwrap();
    let plan = FoldPlan {
        fold: 0,
        train: vec![],
        val: vec![],
        test: vec![0, 1],
    };
    assert!(matches!(train_fold(&ds, &plan, &tiny(), &fast(1, 8), 0), Err(Error::Config(_))));
    let mut unsplit = ds.clone();
    unsplit.folds = None;
    assert!(matches!(FoldPlan::cell_line(&unsplit, 0, 0.1, 0), Err(Error::Prerequisite(_))));
}

#[test]
fn cold_start_is_harder_than_random_pairs() {
    let ds = synthetic_dataset(&SyntheticSpec {
        n_cells: 30,
        n_types: 3,
        n_genes: 12,
        n_mut: 2,
        n_drugs: 6,
        response: Response::CellOnly,
        folds: 3,
        seed: 2,
    })
    .unwrap();
    let run = |mode| {
        let cfg = TrainConfig {
            split_mode: mode,
            ..fast(25, 32)
        };
        let (_, rep) = cross_validate(&ds, &tiny(), &cfg, 4, Some(&[0])).unwrap();
        rep.mean.r2.unwrap()
    };
    let cold = run(SplitMode::CellLine);
    let warm = run(SplitMode::RandomPair);
    println!("cold-start r2 {cold:.3}, random-pair r2 {warm:.3}");
    assert!(cold < warm, "cold {cold} warm {warm}");
}
