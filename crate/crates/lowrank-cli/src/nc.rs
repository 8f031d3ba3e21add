//! Node-classification pipeline: optional structural feature augmentation,
//! propagation design with add-ons, least-norm solve, accuracy.

use crate::config::RunConfig;
use crate::report::Report;
use anyhow::{bail, Context};
use lowrank::design::{
    add_label_reuse, build_nc, build_ne, pseudo_dropout, sym_norm_adj, NcSpec, PdSpec,
};
use lowrank::graph::{masked_labels, Splits};
use lowrank::io::load_graph;
use lowrank::metrics::accuracy;
use lowrank::models::{
    pca, predictions, solve_nc, splitrelu_forward, splitrelu_init, SavedModel,
};
use lowrank::models::train_ne;
use nalgebra::DMatrix;
use std::time::Instant;

pub fn run(cfg: RunConfig) -> anyhow::Result<()> {
    let total = Instant::now();
    let dir = cfg
        .paths
        .graph_dir
        .clone()
        .context("node classification needs --graph <dir>")?;
    let feature_path = dir.join("features.csv");
    let label_path = dir.join("labels.tsv");
    let split_path = dir.join("splits.json");
    let started = Instant::now();
    let loaded = load_graph(
        &dir.join("edges.tsv"),
        feature_path.exists().then_some(feature_path.as_path()),
        Some(&label_path),
        Some(&split_path),
        cfg.directed,
    )?;
    let load_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut report = Report::new(cfg.clone());
    report.warnings = loaded.warnings.clone();
    report.id_map = Some(loaded.id_map.clone());
    let graph = &loaded.data;
    let n = graph.n();
    report.counter("nodes", n as u64);
    report.counter("adjacency_nonzeros", graph.adjacency.nnz() as u64);

    let labels = graph.labels.as_ref().context("labels.tsv is required")?;
    let (train, validation, test) = match &graph.splits {
        Some(Splits::Nodes {
            train,
            validation,
            test,
        }) => (train.clone(), validation.clone(), test.clone()),
        _ => bail!("splits.json must hold train/validation/test node sets"),
    };
    if train.is_empty() || test.is_empty() {
        bail!("train and test splits must be non-empty");
    }

    // features: given, optionally augmented with embedding coordinates and
    // compressed back down
    let started = Instant::now();
    let features = if cfg.augment.enabled {
        let ne_design = build_ne(&graph.adjacency, &cfg.ne)?;
        let mut ne_cfg = cfg.svd_for("ne-augment");
        ne_cfg.rank = cfg.augment.ne_rank.min(n);
        let ne_model = train_ne(&ne_design, &ne_cfg)?;
        let l = ne_model.embedding_l();
        let r = ne_model.embedding_r();
        let base_cols = graph.features.as_ref().map_or(0, |x| x.ncols());
        let mut stacked = DMatrix::zeros(n, base_cols + 2 * ne_cfg.rank);
        if let Some(x) = &graph.features {
            stacked.columns_mut(0, base_cols).copy_from(x);
        }
        stacked.columns_mut(base_cols, ne_cfg.rank).copy_from(&l);
        stacked
            .columns_mut(base_cols + ne_cfg.rank, ne_cfg.rank)
            .copy_from(&r);

        let mut pca_cfg = cfg.svd_for("pca");
        pca_cfg.rank = cfg.augment.pca_dims;
        pca_cfg.iterations = cfg.augment.pca_iterations;
        pca_cfg.oversample_factor = 1;
        pca(&stacked, &pca_cfg)?
    } else {
        graph
            .features
            .clone()
            .context("features.csv is required unless --ne-augment is set")?
    };
    let augment_ms = started.elapsed().as_secs_f64() * 1e3;
    report.counter("feature_width", features.ncols() as u64);

    // assemble the design: propagation blocks, then add-ons
    let started = Instant::now();
    let a_hat = sym_norm_adj(&graph.adjacency);
    let mut base_op = build_nc(&a_hat, &features, cfg.nc.layers)?;
    if cfg.nc.label_reuse {
        let y_train = masked_labels(labels, &train);
        base_op = add_label_reuse(&base_op, &graph.adjacency, &y_train)?;
    }
    let pd_spec = match cfg.nc.dropout {
        Some(rate) => PdSpec::On {
            rate,
            seed: cfg.stream("dropout"),
        },
        None => PdSpec::Off,
    };
    let spec = NcSpec {
        layers: cfg.nc.layers,
        label_reuse: cfg.nc.label_reuse,
        pseudo_dropout: pd_spec.clone(),
    };

    let (train_op, y_for_solve, train_rows) = match &pd_spec {
        PdSpec::On { rate, seed } => {
            let (stacked, map) = pseudo_dropout(&base_op, *rate, *seed)?;
            let mut y2 = DMatrix::zeros(2 * n, labels.ncols());
            y2.rows_mut(0, n).copy_from(labels);
            y2.rows_mut(n, n).copy_from(labels);
            let rows = map.duplicate_indices(&train);
            (stacked, y2, rows)
        }
        PdSpec::Off => (base_op.clone(), labels.clone(), train.clone()),
    };

    let mut svd_cfg = cfg.svd_for("solve");
    svd_cfg.rank = svd_cfg.rank.min(train_rows.len().min(train_op.cols()));
    let model = solve_nc(&train_op, &y_for_solve, &train_rows, spec, &svd_cfg)?;
    let train_ms = started.elapsed().as_secs_f64() * 1e3;

    let started = Instant::now();
    let logits = lowrank::linop::evaluate(&base_op, &model.w_star)?;
    let pred = predictions(&logits);
    let truth = predictions(labels);
    let infer_ms = started.elapsed().as_secs_f64() * 1e3;

    report.metric("train_accuracy", accuracy(&pred, &truth, &train)?);
    if !validation.is_empty() {
        report.metric("validation_accuracy", accuracy(&pred, &truth, &validation)?);
    }
    report.metric("test_accuracy", accuracy(&pred, &truth, &test)?);

    if cfg.verify_splitrelu {
        if cfg.nc.label_reuse {
            bail!("--verify-splitrelu-init needs a plain propagation design (drop --label-reuse)");
        }
        let net = splitrelu_init(&model.w_star, features.ncols(), cfg.nc.layers)?;
        let deep = splitrelu_forward(&net, &a_hat, &features)?;
        let diff = (&deep - &logits).abs().max();
        report.metric("splitrelu_max_abs_diff", diff);
        if diff > 1e-8 {
            bail!("split-relu initialization deviates from the linear model: {diff}");
        }
    }

    if let Some(path) = &cfg.paths.save_model {
        let saved = SavedModel {
            ne: None,
            nc: Some(model),
            kernel: None,
        };
        std::fs::write(path, saved.to_json())
            .with_context(|| format!("writing model to {}", path.display()))?;
    }

    report.timing("load", load_ms);
    report.timing("augment", augment_ms);
    report.timing("train", train_ms);
    report.timing("infer", infer_ms);
    report.timing("total", total.elapsed().as_secs_f64() * 1e3);
    report.emit(cfg.paths.report.as_deref())
}
