use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use demix_core::dataio::{read_cube, read_dict, unfold, write_cube, write_dict, write_labels, HsCube, LabelMap};
use demix_core::Mat;
use serde_json::Value;
use tempfile::TempDir;

fn demix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demix")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = demix(dir, args);
    assert!(
        out.status.success(),
        "demix {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "summary should be one line: {stdout:?}");
    stdout
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out-prefix", "t"];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn synth_defaults_read_back() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), &[]);
    let m = read_cube(dir.path().join("t_m.hsc")).unwrap();
    assert_eq!(m.dims(), (1, 400, 50));
    let d = read_dict(dir.path().join("t_dict.hsd")).unwrap();
    assert_eq!((d.mat().rows(), d.atoms()), (50, 10));
    let s = unfold(&read_cube(dir.path().join("t_s.hsc")).unwrap());
    assert_eq!(s.count_above(0.0), 40);
    let l = unfold(&read_cube(dir.path().join("t_l.hsc")).unwrap());
    assert_eq!(unfold(&m), l.add(&d.mat().matmul(&s).unwrap()).unwrap());
}

#[test]
fn synth_column_sparsity_counts_columns() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), &["--mode", "column", "--sparsity", "5"]);
    let s = unfold(&read_cube(dir.path().join("t_s.hsc")).unwrap());
    assert_eq!(s.column_norms().iter().filter(|&&n| n > 0.0).count(), 5);
    let labels = demix_core::dataio::read_labels(dir.path().join("t_labels.hsl")).unwrap();
    assert_eq!(labels.members(1).len(), 5);
    assert_eq!(labels.members(2).len(), 395);
}

#[test]
fn synth_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    synth(a.path(), &["--seed", "7"]);
    synth(b.path(), &["--seed", "7"]);
    for f in ["t_m.hsc", "t_l.hsc", "t_s.hsc", "t_dict.hsd", "t_labels.hsl"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn infeasible_synth_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = demix(dir.path(), &["synth", "--f", "5", "--d", "10", "--r", "3", "--construction", "separated"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zero_data_gives_zero_solution() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    write_cube(p.join("z.hsc"), &HsCube::new(2, 3, 4, vec![0.0; 24]).unwrap()).unwrap();
    write_dict(p.join("d.hsd"), &Mat::identity(4).leading_columns(2)).unwrap();
    ok(p, &["demix", "--data", "z.hsc", "--dict", "d.hsd", "--lambda", "0.3", "--out", "r.json", "--save-prefix", "z"]);
    let l = read_cube(p.join("z_l.hsc")).unwrap();
    let s = read_cube(p.join("z_s.hsc")).unwrap();
    assert!(l.voxels().iter().chain(s.voxels()).all(|&x| x == 0.0));
    let r = json(p.join("r.json"));
    assert_eq!(r["best_lambda"], 0.3);
}

#[test]
fn demix_sweep_recovers_acceptance_instance() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synth(p, &["--construction", "separated", "--seed", "1"]);
    let summary = ok(
        p,
        &["demix", "--data", "t_m.hsc", "--dict", "t_dict.hsd", "--labels", "t_labels.hsl", "--sweep", "20", "--out", "r.json", "--save-prefix", "best"],
    );
    assert!(summary.contains("auc"));
    let r = json(p.join("r.json"));
    assert!(r["auc"].as_f64().unwrap() >= 0.99);
    assert_eq!(r["lambda_grid"].as_array().unwrap().len(), 20);
    assert_eq!(r["rows"].as_array().unwrap().len(), 20);
    assert!(r["metadata"]["operating_point_rule"].as_str().unwrap().starts_with("youden"));
    let csv = std::fs::read_to_string(p.join("best_roc.csv")).unwrap();
    assert!(csv.starts_with("threshold,tpr,fpr"));
}

#[test]
fn missing_dict_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = demix(dir.path(), &["demix", "--data", "x.hsc", "--lambda", "0.1", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_without_labels_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), &["--nm", "40", "--sparsity", "4"]);
    let out = demix(dir.path(), &["demix", "--data", "t_m.hsc", "--dict", "t_dict.hsd", "--sweep", "3", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = demix(dir.path(), &["demix", "--data", "x.hsc", "--dict", "y.hsd", "--lambda", "0.1", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("x.hsc"));
}

#[test]
fn singular_dictionary_is_a_numeric_failure() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synth(p, &["--f", "6", "--d", "2", "--nm", "20", "--r", "1", "--sparsity", "3"]);
    let e1 = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let d = Mat::from_columns(6, &[e1.clone(), e1]).unwrap();
    write_dict(p.join("dup.hsd"), &d).unwrap();
    let out = demix(p, &["baseline", "--method", "rpca-pinv", "--data", "t_m.hsc", "--dict", "dup.hsd", "--lambda", "0.1", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(4));
}

fn learn_fixture(p: &Path) {
    synth(p, &["--f", "12", "--d", "3", "--nm", "60", "--r", "2", "--sparsity", "20"]);
}

#[test]
fn learn_dict_names_an_absent_class() {
    let dir = TempDir::new().unwrap();
    learn_fixture(dir.path());
    let out = demix(
        dir.path(),
        &["learn-dict", "--data", "t_m.hsc", "--labels", "t_labels.hsl", "--class", "9", "--atoms", "2", "--rho", "0.1", "--out", "d.hsd"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("class 9"));
}

#[test]
fn learn_dict_accepts_listed_rhos_and_writes_unit_columns() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    learn_fixture(p);
    for rho in ["0.01", "0.1", "0.5"] {
        ok(
            p,
            &["learn-dict", "--data", "t_m.hsc", "--labels", "t_labels.hsl", "--class", "1", "--atoms", "3", "--rho", rho, "--max-alternations", "10", "--out", "d.hsd"],
        );
        let d = read_dict(p.join("d.hsd")).unwrap();
        assert_eq!((d.mat().rows(), d.atoms()), (12, 3));
        assert!(d.unit_columns());
    }
}

#[test]
fn matched_filter_scores_are_in_unit_interval() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synth(p, &["--nm", "80", "--sparsity", "10"]);
    for method in ["mf", "mf-pinv"] {
        ok(p, &["baseline", "--method", method, "--data", "t_m.hsc", "--dict", "t_dict.hsd", "--labels", "t_labels.hsl", "--out", "r.json"]);
        let r = json(p.join("r.json"));
        let scores = r["scores"].as_array().unwrap();
        assert_eq!(scores.len(), 80);
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(&s.as_f64().unwrap())));
        assert!(r["auc"].as_f64().unwrap() >= 0.5);
    }
}

#[test]
fn rpca_pinv_with_identity_matches_demix() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synth(p, &["--f", "10", "--d", "3", "--nm", "60", "--r", "2", "--sparsity", "12"]);
    write_dict(p.join("eye.hsd"), &Mat::identity(10)).unwrap();
    for extra in [&["--sweep", "4"][..], &["--lambda", "0.2"][..]] {
        let mut common = vec!["--data", "t_m.hsc", "--dict", "eye.hsd", "--labels", "t_labels.hsl", "--out"];
        let mut a = vec!["demix"];
        a.extend(&common);
        a.push("a.json");
        a.extend(extra);
        ok(p, &a);
        let mut b = vec!["baseline", "--method", "rpca-pinv"];
        common.push("b.json");
        b.extend(&common);
        b.extend(extra);
        ok(p, &b);
        let (mut ja, mut jb) = (json(p.join("a.json")), json(p.join("b.json")));
        ja["method"] = Value::Null;
        jb["method"] = Value::Null;
        assert_eq!(ja, jb);
    }
}

#[test]
fn op_pinv_loses_to_demix_when_rank_exceeds_atoms() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synth(p, &["--mode", "column", "--r", "12", "--sparsity", "20", "--seed", "4", "--l-scale", "30"]);
    let common = ["--data", "t_m.hsc", "--dict", "t_dict.hsd", "--labels", "t_labels.hsl", "--sweep", "10"];
    let mut a = vec!["demix", "--mode", "column", "--out", "a.json"];
    a.extend(common);
    ok(p, &a);
    let mut b = vec!["baseline", "--method", "op-pinv", "--out", "b.json"];
    b.extend(common);
    ok(p, &b);
    let ours = json(p.join("a.json"))["auc"].as_f64().unwrap();
    let theirs = json(p.join("b.json"))["auc"].as_f64().unwrap();
    assert!(ours > theirs, "demix {ours} vs op-pinv {theirs}");
}

#[test]
fn baseline_rejects_a_contradicting_mode() {
    let dir = TempDir::new().unwrap();
    synth(dir.path(), &["--nm", "40", "--sparsity", "4"]);
    let out = demix(
        dir.path(),
        &["baseline", "--method", "op-pinv", "--mode", "entry", "--data", "t_m.hsc", "--dict", "t_dict.hsd", "--lambda", "0.1", "--out", "r.json"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diagnose_acceptance_instance_holds() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synth(p, &["--construction", "separated", "--seed", "1"]);
    ok(p, &["diagnose", "--dict", "t_dict.hsd", "--gt-l", "t_l.hsc", "--gt-s", "t_s.hsc", "--out", "r.json"]);
    let r = json(p.join("r.json"));
    assert_eq!(r["theorem_holds"], true);
    assert_eq!(r["mu_kind"], "exact");
}

#[test]
fn diagnose_reports_mu_one_with_reason() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    // D spans the column space of L, so μ = 1
    let u: Vec<f64> = (0..6).map(|i| if i < 2 { 0.5f64.sqrt() } else { 0.0 }).collect();
    let v: Vec<f64> = (0..8).map(|j| (j as f64 + 1.0) / 10.0).collect();
    let l = Mat::from_fn(6, 8, |i, j| u[i] * v[j]).unwrap();
    let mut s = Mat::zeros(1, 8);
    s.set(0, 3, 1.0);
    write_cube(p.join("l.hsc"), &HsCube::new(1, 8, 6, l.as_slice().to_vec()).unwrap()).unwrap();
    write_cube(p.join("s.hsc"), &HsCube::new(1, 8, 1, s.as_slice().to_vec()).unwrap()).unwrap();
    write_dict(p.join("d.hsd"), &Mat::from_columns(6, &[u]).unwrap()).unwrap();
    ok(p, &["diagnose", "--dict", "d.hsd", "--gt-l", "l.hsc", "--gt-s", "s.hsc", "--mode", "column", "--out", "r.json"]);
    let r = json(p.join("r.json"));
    assert_eq!(r["mu"], 1.0);
    assert_eq!(r["theorem_holds"], false);
    let reasons: Vec<&str> = r["failure_reasons"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(reasons.contains(&"mu is not below 1"), "{reasons:?}");
}

#[test]
fn diagnose_without_ground_truth_labels_the_bound() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synth(p, &["--nm", "60", "--sparsity", "8"]);
    ok(p, &["diagnose", "--data", "t_m.hsc", "--dict", "t_dict.hsd", "--out", "r.json"]);
    let r = json(p.join("r.json"));
    assert_eq!(r["mu_kind"], "upper_bound");
    assert!(r["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("estimated")));

    let out = demix(p, &["diagnose", "--dict", "t_dict.hsd", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn labels_must_match_the_cube() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synth(p, &["--nm", "40", "--sparsity", "4"]);
    write_labels(p.join("bad.hsl"), &LabelMap::new(1, 39, vec![1; 39]).unwrap()).unwrap();
    let out = demix(p, &["demix", "--data", "t_m.hsc", "--dict", "t_dict.hsd", "--labels", "bad.hsl", "--lambda", "0.1", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(3));
}
