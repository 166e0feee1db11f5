use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deepdtf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepdtf")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = deepdtf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    deepdtf(args).status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn toy_dir(dir: &Path) {
    write(dir, "cells.csv", "cell_id,cancer_type\nc1,LUAD\nc2,LUAD\nc3,BRCA\nc4,BRCA\n");
    write(dir, "ge.csv", "cell_id,TP53,EGFR\nc1,2.0,8.0\nc2,4.0,6.0\nc3,6.0,4.0\n");
    write(dir, "mut.csv", "cell_id,TP53,KRAS\nc1,1,0\nc2,0,0\nc3,1,1\n");
    write(dir, "drugs.csv", "drug_id,smiles\nd1,CC(=O)O\nd2,c1ccccc1\nd3,C1CC\n");
    write(
        dir,
        "responses.csv",
        "drug_id,cell_id,log_ic50\nd1,c1,-3.0\nd1,c2,0.5\nd2,c1,-2.0\nd2,c3,-2.5\nd1,c3,1.0\nd3,c2,0.0\n",
    );
    write(
        dir,
        "manifest.txt",
        "cells = cells.csv\nresponses = responses.csv\ndrugs = drugs.csv\nge = ge.csv\nmut = mut.csv\n",
    );
}

/// 64 cell lines, one drug, response linear in the first two genes.
fn linear_dir(dir: &Path) {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    let mut unif = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let genes = ["G0", "G1", "G2", "G3", "G4", "G5"];
    let mut cells = String::from("cell_id,cancer_type\n");
    let mut ge = format!("cell_id,{}\n", genes.join(","));
    let mut mt = String::from("cell_id,G0,G1\n");
    let mut resp = String::from("drug_id,cell_id,log_ic50\n");
    for i in 0..64 {
        let id = format!("c{i:02}");
        cells.push_str(&format!("{id},{}\n", if i % 2 == 0 { "LUAD" } else { "BRCA" }));
        let row: Vec<f64> = genes.iter().map(|_| unif()).collect();
        // pin the column ranges so ingest scaling leaves the values unchanged
        let row: Vec<f64> = match i {
            0 => vec![0.0; 6],
            1 => vec![1.0; 6],
            _ => row,
        };
        ge.push_str(&format!("{id},{}\n", row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")));
        mt.push_str(&format!("{id},{},{}\n", i % 3 == 0, i % 5 == 0).replace("true", "1").replace("false", "0"));
        resp.push_str(&format!("d1,{id},{}\n", -2.0 + 3.0 * (row[0] - row[1])));
    }
    write(dir, "cells.csv", &cells);
    write(dir, "ge.csv", &ge);
    write(dir, "mut.csv", &mt);
    write(dir, "drugs.csv", "drug_id,smiles\nd1,CC(=O)Nc1ccc(O)cc1\n");
    write(dir, "responses.csv", &resp);
    write(
        dir,
        "manifest.txt",
        "cells = cells.csv\nresponses = responses.csv\ndrugs = drugs.csv\nge = ge.csv\nmut = mut.csv\n",
    );
    write(dir, "sets.gmt", "DRIVERS\tplanted\tG0\tG1\nOTHERS\tbackground\tG2\tG3\tG4\tG5\n");
    write(
        dir,
        "run.conf",
        "# small model for the tests\nmodalities = ge\nfolds = 2\nrun_folds = 0\nepochs = 60\nbatch_size = 4\nval_fraction = 0.1\n\
         token_dim = 16\nconv_channels = 4\ngate_hidden = 4\nmax_omics_tokens = 8\nhead_hidden = 16\ndropout = 0\n\
         omics_layers = 1\nomics_heads = 2\ndrug_layers = 1\ndrug_heads = 2\nfusion_layers = 1\nfusion_heads = 2\ngnn_layers = 2\n",
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn parse_smiles_prints_graph() {
    let out = ok(&["parse-smiles", "c1ccccc1"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 6);
    assert_eq!(v["edges"].as_array().unwrap().len(), 12);
    assert_eq!(code(&["parse-smiles", "C1CC"]), 3);
}

#[test]
fn prepare_toy_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    toy_dir(tmp.path());
    let out = tmp.path().join("out");
    let manifest = tmp.path().join("manifest.txt");
    let msg = ok(&["prepare", "--manifest", s(&manifest), "--out", s(&out), "--min_lines_per_type", "1"]);
    assert!(msg.starts_with("5 pairs, 3 cell lines, 2 drugs"), "{msg}");
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("dataset/stats.json")).unwrap()).unwrap();
    assert_eq!((stats["pairs"].as_u64(), stats["cells"].as_u64(), stats["drugs"].as_u64()), (Some(5), Some(3), Some(2)));
    let excl: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("dataset/exclusions.json")).unwrap()).unwrap();
    assert_eq!(excl["drugs"].as_array().unwrap().len(), 1);
    let inputs = fs::read_to_string(out.join("dataset/inputs.json")).unwrap();
    assert!(inputs.contains("ge.csv") && inputs.contains("responses.csv"));
    assert!(fs::read_to_string(out.join("dataset/config.txt")).unwrap().contains("min_lines_per_type = 1\n"));

    // default retention empties the toy cohort
    assert_eq!(code(&["prepare", "--manifest", s(&manifest), "--out", s(&out)]), 3);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&["train", "--no_such_key", "1"]), 2);
    assert_eq!(code(&["train", "--epochs", "many", "--out", s(&out)]), 2);
    assert_eq!(code(&["prepare", "--out", s(&out)]), 2);
    assert_eq!(code(&[]), 2);
    let conf = tmp.path().join("bad.conf");
    write(tmp.path(), "bad.conf", "epochs = 3\nnot_a_key = 1\n");
    assert_eq!(code(&["train", "--config", s(&conf)]), 2);

    let missing = deepdtf(&["split", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("deepdtf prepare"));
    assert_eq!(code(&["prepare", "--manifest", s(&tmp.path().join("nope.txt")), "--out", s(&out)]), 5);
}

#[test]
fn pipeline_on_linear_response() {
    let tmp = tempfile::tempdir().unwrap();
    linear_dir(tmp.path());
    let out = tmp.path().join("out");
    let conf = tmp.path().join("run.conf");
    let base = ["--config", s(&conf), "--out", s(&out)];
    let run = |cmd: &str, extra: &[&str]| ok(&[&[cmd][..], &base[..], extra].concat());

    assert_eq!(code(&[&["train"][..], &base[..]].concat()), 5);
    run("prepare", &["--manifest", s(&tmp.path().join("manifest.txt")), "--min_lines_per_type", "1"]);
    let missing = deepdtf(&[&["train"][..], &base[..]].concat());
    assert_eq!(missing.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("deepdtf split"));
    run("split", &[]);
    let folds: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("split/folds.json")).unwrap()).unwrap();
    assert!(folds.is_object());

    run("train", &[]);
    for f in ["model.json", "scaler.json", "plan.json", "log.csv", "predictions.csv", "metrics.json"] {
        assert!(out.join("train/fold_0").join(f).exists(), "{f}");
    }
    assert!(!out.join("train/fold_1").exists());

    run("eval", &["--eval_set", "train"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval/metrics.json")).unwrap()).unwrap();
    let rmse = m["mean"]["rmse"].as_f64().unwrap();
    assert!(rmse < 0.15, "train rmse {rmse}");
    assert!(out.join("eval/predictions_fold_0.csv").exists());

    assert_eq!(code(&[&["explain"][..], &base[..]].concat()), 2);
    run(
        "explain",
        &[
            "--gene_sets",
            s(&tmp.path().join("sets.gmt")),
            "--grouped",
            "ge",
            "--target",
            "regression",
            "--n_background",
            "8",
            "--gsea_min_size",
            "2",
            "--gsea_perm",
            "99",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("explain/report.json")).unwrap()).unwrap();
    assert_eq!(report["groups"].as_array().unwrap().len(), 6);
    let genes = fs::read_to_string(out.join("explain/genes_positive.csv")).unwrap();
    assert!(genes.starts_with("gene,score\n"));
    assert!(out.join("explain/pathways_negative.csv").exists());
}

#[test]
fn train_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    linear_dir(tmp.path());
    let conf = tmp.path().join("run.conf");
    let manifest = tmp.path().join("manifest.txt");
    let mut results = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let base = ["--config", s(&conf), "--out", s(&out), "--seed", "7", "--epochs", "3"];
        ok(&[&["prepare"][..], &base[..], &["--manifest", s(&manifest), "--min_lines_per_type", "1"]].concat());
        ok(&[&["split"][..], &base[..]].concat());
        ok(&[&["train"][..], &base[..], &["--run_folds", "all", "--workers", "2"]].concat());
        results.push(fs::read(out.join("train/results.json")).unwrap());
        assert!(out.join("train/fold_1/model.json").exists());
    }
    assert_eq!(results[0], results[1]);
}
