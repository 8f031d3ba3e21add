//! End-to-end runs of the installed binary against a generated toy dataset.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn write_toy_graph(dir: &Path) {
    // two 8-node cliques bridged by one edge, plus a ring for connectivity
    let n = 16;
    let mut edges = Vec::new();
    for block in 0..2 {
        let off = block * 8;
        for i in 0..8 {
            for j in (i + 1)..8 {
                edges.push((off + i, off + j));
            }
        }
    }
    edges.push((7, 8));
    let mut lines: Vec<String> = edges.iter().map(|(i, j)| format!("{i} {j}")).collect();
    lines.push(String::from("# trailing comment"));
    fs::write(dir.join("edges.tsv"), lines.join("\n")).unwrap();

    let feats: Vec<String> = (0..n)
        .map(|i| {
            let a = if i < 8 { 1.0 } else { 0.0 };
            format!("{a},{},{}", 1.0 - a, (i as f64) / 16.0)
        })
        .collect();
    fs::write(dir.join("features.csv"), feats.join("\n")).unwrap();

    let labels: Vec<String> = (0..n)
        .map(|i| format!("{i} {}", if i < 8 { 0 } else { 1 }))
        .collect();
    fs::write(dir.join("labels.tsv"), labels.join("\n")).unwrap();

    fs::write(
        dir.join("splits.json"),
        r#"{"train": [0, 1, 8, 9], "validation": [2, 10], "test": [3, 4, 5, 6, 11, 12, 13, 14]}"#,
    )
    .unwrap();
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowrank"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report_of(output: &Output) -> serde_json::Value {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is a JSON report")
}

#[test]
fn lp_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_graph(dir.path());
    let edges = dir.path().join("edges.tsv");
    let args = [
        "lp",
        "--edges",
        edges.to_str().unwrap(),
        "--rank",
        "4",
        "--lambda",
        "0.02",
        "--C",
        "2",
        "--hits-k",
        "3",
        "--seed",
        "11",
    ];
    let first = report_of(&run(&args));
    let second = report_of(&run(&args));
    assert_eq!(first["metrics"], second["metrics"]);
    let auc = first["metrics"]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(auc > 0.8, "cliques should rank above the bridge: {auc}");
    assert_eq!(first["version"], 1);
    assert_eq!(first["config"]["task"], "link-predict");
    // counters must reconcile: every cacheable request either hits or misses
    let hits = first["counters"]["cache_hits"].as_u64().unwrap();
    let misses = first["counters"]["cache_misses"].as_u64().unwrap();
    assert!(hits + misses > 0);
    assert!(first["id_map"].as_array().unwrap().len() == 16);
}

#[test]
fn lp_supports_precomputed_splits_and_finetune() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_graph(dir.path());
    fs::write(
        dir.path().join("lp_splits.json"),
        r#"{"test_pos": [[0, 2], [8, 10]], "test_neg": [[0, 12], [3, 15]]}"#,
    )
    .unwrap();
    let report = report_of(&run(&[
        "lp",
        "--edges",
        dir.path().join("edges.tsv").to_str().unwrap(),
        "--splits",
        dir.path().join("lp_splits.json").to_str().unwrap(),
        "--rank",
        "4",
        "--finetune-kernel",
        "--finetune-steps",
        "10",
        "--seed",
        "5",
    ]));
    assert!(report["metrics"]["auc_finetuned"].is_number());
    let initial = report["metrics"]["finetune_loss_initial"].as_f64().unwrap();
    let final_ = report["metrics"]["finetune_loss_final"].as_f64().unwrap();
    assert!(final_ <= initial);
}

#[test]
fn nc_classifies_the_toy_communities() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_graph(dir.path());
    let report_path = dir.path().join("report.json");
    let model_path = dir.path().join("model.json");
    let report = report_of(&run(&[
        "nc",
        "--graph",
        dir.path().to_str().unwrap(),
        "--layers",
        "2",
        "--rank",
        "4",
        "--verify-splitrelu-init",
        "--seed",
        "13",
        "--report",
        report_path.to_str().unwrap(),
        "--save-model",
        model_path.to_str().unwrap(),
    ]));
    let acc = report["metrics"]["test_accuracy"].as_f64().unwrap();
    assert!(acc >= 0.9, "two cliques should be separable: {acc}");
    let diff = report["metrics"]["splitrelu_max_abs_diff"].as_f64().unwrap();
    assert!(diff <= 1e-8);

    // the report file matches stdout, and the saved model reloads
    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(on_disk, report);
    let model = lowrank::models::SavedModel::from_json(&fs::read_to_string(&model_path).unwrap())
        .unwrap();
    assert!(model.nc.is_some());
}

#[test]
fn nc_with_addons_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_graph(dir.path());
    let report = report_of(&run(&[
        "nc",
        "--graph",
        dir.path().to_str().unwrap(),
        "--layers",
        "2",
        "--rank",
        "6",
        "--label-reuse",
        "--dropout",
        "0.5",
        "--ne-augment",
        "--ne-rank",
        "4",
        "--pca-dims",
        "6",
        "--lambda",
        "0.05",
        "--C",
        "2",
        "--seed",
        "17",
    ]));
    assert!(report["metrics"]["test_accuracy"].is_number());
    assert_eq!(report["config"]["nc"]["label_reuse"], true);
}

#[test]
fn svd_dumps_factors_matching_a_dense_check() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_graph(dir.path());
    fs::write(
        dir.path().join("spec.json"),
        r#"{"edges": "edges.tsv", "design": {"ne": {"lambda": 0.0, "C": 1, "symmetric": false}}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("factors");
    let report = report_of(&run(&[
        "svd",
        "--spec",
        dir.path().join("spec.json").to_str().unwrap(),
        "--rank",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "23",
    ]));
    assert_eq!(report["counters"]["rows"], 16);

    let parse = |name: &str| -> Vec<Vec<f64>> {
        fs::read_to_string(out_dir.join(name))
            .unwrap()
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let u = parse("U.csv");
    let s = parse("S.csv");
    let v = parse("V.csv");
    assert_eq!(u.len(), 16);
    assert_eq!(s.len(), 3);
    assert_eq!(v.len(), 16);
    // factor columns are unit length
    for t in 0..3 {
        let norm: f64 = u.iter().map(|row| row[t] * row[t]).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-8);
    }
    // singular values are non-increasing and positive for a walk design
    assert!(s[0][0] >= s[1][0] && s[1][0] >= s[2][0]);
    assert!(s[2][0] > 0.0);

    // dense oracle: the design with lambda 0 and window 1 is the
    // row-normalized adjacency; the dumped factors must reproduce its best
    // rank-3 approximation
    let n = 16;
    let mut dense = nalgebra::DMatrix::zeros(n, n);
    for line in fs::read_to_string(dir.path().join("edges.tsv")).unwrap().lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let i: usize = it.next().unwrap().parse().unwrap();
        let j: usize = it.next().unwrap().parse().unwrap();
        dense[(i, j)] = 1.0;
        dense[(j, i)] = 1.0;
    }
    for mut row in dense.row_iter_mut() {
        let deg: f64 = row.iter().sum();
        row /= deg;
    }
    let oracle = dense.clone().svd(true, true);
    let mut truncation = nalgebra::DMatrix::zeros(n, n);
    for t in 0..3 {
        let uo = oracle.u.as_ref().unwrap().column(t);
        let vo = oracle.v_t.as_ref().unwrap().row(t);
        truncation += oracle.singular_values[t] * uo * vo;
    }
    let mut product = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            product[(i, j)] = (0..3).map(|t| u[i][t] * s[t][0] * v[j][t]).sum();
        }
    }
    for t in 0..3 {
        assert!((s[t][0] - oracle.singular_values[t]).abs() < 1e-6);
    }
    // clique symmetry makes singular values degenerate, so the truncation is
    // only unique up to rotations; the approximation error is what must match
    let err = (&product - &dense).norm();
    let optimal = (&truncation - &dense).norm();
    assert!(
        (err - optimal).abs() < 1e-6,
        "rank-3 error {err} vs optimal {optimal}"
    );
}

#[test]
fn bench_reports_all_four_configurations() {
    let report = report_of(&run(&[
        "bench", "--nodes", "200", "--edges", "1000", "--rank", "8", "--iterations", "2",
        "--seed", "29",
    ]));
    for key in [
        "svd_qr_nocache",
        "svd_qr_cache",
        "svd_cholesky_nocache",
        "svd_cholesky_cache",
    ] {
        assert!(report["timing_ms"][key].is_number(), "missing {key}");
    }
    // caching must save leaf multiplications
    let cached = report["counters"]["leaf_multiplications_cholesky_cache"]
        .as_u64()
        .unwrap();
    let plain = report["counters"]["leaf_multiplications_cholesky_nocache"]
        .as_u64()
        .unwrap();
    assert!(cached < plain);
}

#[test]
fn missing_files_fail_with_nonzero_exit() {
    let out = run(&["lp", "--edges", "/nonexistent/edges.tsv"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nonexistent"), "stderr: {err}");
}

#[test]
fn env_seed_matches_explicit_flag() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_graph(dir.path());
    let edges = dir.path().join("edges.tsv");
    let with_flag = report_of(&run(&[
        "lp",
        "--edges",
        edges.to_str().unwrap(),
        "--rank",
        "4",
        "--seed",
        "77",
    ]));
    let with_env = {
        let out = Command::new(env!("CARGO_BIN_EXE_lowrank"))
            .args(["lp", "--edges", edges.to_str().unwrap(), "--rank", "4"])
            .env("LOWRANK_SEED", "77")
            .output()
            .unwrap();
        report_of(&out)
    };
    assert_eq!(with_flag["metrics"], with_env["metrics"]);
}
