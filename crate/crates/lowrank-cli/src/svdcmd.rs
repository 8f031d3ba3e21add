//! Standalone decomposition of a design matrix described by a spec file.
//!
//! The spec is JSON: data paths plus a design recipe, e.g.
//! `{"edges": "g.tsv", "design": {"ne": {"lambda": 0.05, "C": 3}}}` or
//! `{"edges": "g.tsv", "features": "x.csv", "design": {"nc": {"L": 2}}}`.
//! Paths resolve relative to the spec file. Factors land in the output
//! directory as `U.csv`, `S.csv`, `V.csv`.

use crate::config::RunConfig;
use crate::report::Report;
use anyhow::{bail, Context};
use lowrank::design::{add_label_reuse, build_nc, build_ne, sym_norm_adj, DesignSpec};
use lowrank::graph::{masked_labels, Splits};
use lowrank::io::load_graph;
use lowrank::linop::LinOp;
use lowrank::rsvd::isvd_with_report;
use nalgebra::DMatrix;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Deserialize)]
struct SpecFile {
    edges: PathBuf,
    #[serde(default)]
    directed: bool,
    #[serde(default)]
    features: Option<PathBuf>,
    #[serde(default)]
    labels: Option<PathBuf>,
    #[serde(default)]
    splits: Option<PathBuf>,
    design: DesignSpec,
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> anyhow::Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn run(cfg: RunConfig) -> anyhow::Result<()> {
    let total = Instant::now();
    let spec_path = cfg.paths.spec.clone().context("svd needs --spec <json>")?;
    let text = std::fs::read_to_string(&spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: SpecFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", spec_path.display()))?;
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &PathBuf| base.join(p);

    let loaded = load_graph(
        &resolve(&spec.edges),
        spec.features.as_ref().map(resolve).as_deref(),
        spec.labels.as_ref().map(resolve).as_deref(),
        spec.splits.as_ref().map(resolve).as_deref(),
        spec.directed,
    )?;
    let graph = &loaded.data;

    let op: LinOp = match &spec.design {
        DesignSpec::Ne(ne) => build_ne(&graph.adjacency, ne)?,
        DesignSpec::Nc(nc) => {
            let x = graph
                .features
                .as_ref()
                .context("nc design needs a feature file in the spec")?;
            let mut op = build_nc(&sym_norm_adj(&graph.adjacency), x, nc.layers)?;
            if nc.label_reuse {
                let labels = graph
                    .labels
                    .as_ref()
                    .context("label re-use needs a label file in the spec")?;
                let train = match &graph.splits {
                    Some(Splits::Nodes { train, .. }) if !train.is_empty() => train.clone(),
                    _ => bail!("label re-use needs a split file with a train set"),
                };
                op = add_label_reuse(&op, &graph.adjacency, &masked_labels(labels, &train))?;
            }
            op
        }
    };

    let mut report = Report::new(cfg.clone());
    report.warnings = loaded.warnings.clone();
    report.id_map = Some(loaded.id_map.clone());
    report.counter("nodes", graph.n() as u64);
    report.counter("rows", op.rows() as u64);
    report.counter("cols", op.cols() as u64);

    let mut svd_cfg = cfg.svd_for("svd");
    svd_cfg.rank = svd_cfg.rank.min(op.rows().min(op.cols()));
    let started = Instant::now();
    let (result, svd_report) = isvd_with_report(&op, &svd_cfg)?;
    report.timing("decompose", started.elapsed().as_secs_f64() * 1e3);
    report.counter("leaf_multiplications", svd_report.leaf_multiplications);
    report.counter("cache_hits", svd_report.cache_hits);
    report.counter("cache_misses", svd_report.cache_misses);
    report.metric("top_singular_value", result.s[0]);

    let out_dir = cfg
        .paths
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("svd_out"));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write_matrix_csv(&out_dir.join("U.csv"), &result.u)?;
    write_matrix_csv(
        &out_dir.join("S.csv"),
        &DMatrix::from_vec(result.s.len(), 1, result.s.clone()),
    )?;
    write_matrix_csv(&out_dir.join("V.csv"), &result.v)?;

    report.timing("total", total.elapsed().as_secs_f64() * 1e3);
    report.emit(cfg.paths.report.as_deref())
}
