//! Link-prediction pipeline: embedding design, implicit SVD, spectral edge
//! scores, optional kernel fine-tune, ranking metrics.

use crate::config::RunConfig;
use crate::report::Report;
use anyhow::{bail, Context};
use lowrank::design::build_ne;
use lowrank::graph::{GraphData, Splits};
use lowrank::io::{load_graph, sample_negatives, split_edges};
use lowrank::metrics::{hits_at_k, roc_auc, RankedScores};
use lowrank::models::{finetune_kernel, kernel_spectrum, train_ne, NeModel, SavedModel};
use lowrank::rsvd::isvd_with_report;
use lowrank::sparse::CsrMatrix;
use rayon::prelude::*;
use std::time::Instant;

/// Candidate ranks tried by `--rank-search` on half the training edges.
const RANK_CANDIDATES: [usize; 5] = [8, 16, 32, 128, 256];

pub fn score_edges(
    model: &NeModel,
    pairs: &[(usize, usize)],
    spectrum: Option<&[f64]>,
) -> Vec<f64> {
    pairs
        .par_iter()
        .map(|&(i, j)| match spectrum {
            Some(sp) => model.score_with_spectrum(i, j, sp),
            None => model.score(i, j),
        })
        .collect()
}

fn undirected_pairs(a: &CsrMatrix) -> Vec<(usize, usize)> {
    a.iter().filter(|&(i, j, _)| i < j).map(|(i, j, _)| (i, j)).collect()
}

fn auc_for_rank(
    model: &NeModel,
    rank: usize,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> anyhow::Result<f64> {
    let truncated = NeModel {
        svd: lowrank::rsvd::SvdResult {
            u: model.svd.u.columns(0, rank).into_owned(),
            s: model.svd.s[..rank].to_vec(),
            v: model.svd.v.columns(0, rank).into_owned(),
        },
    };
    let scores = RankedScores::new(
        score_edges(&truncated, pos, None),
        score_edges(&truncated, neg, None),
    );
    Ok(roc_auc(&scores)?)
}

/// Picks the best rank out of [`RANK_CANDIDATES`] by factoring half of the
/// training edges and scoring the held-back half against sampled negatives.
fn rank_search(cfg: &RunConfig, train_adj: &CsrMatrix, report: &mut Report) -> anyhow::Result<usize> {
    let (half_adj, held_out) = split_edges(train_adj, 0.5, cfg.stream("rank-search-split"));
    if held_out.is_empty() {
        bail!("rank search needs a cyclic training graph to hold edges out");
    }
    let graph = GraphData::new(train_adj.clone(), None, None, None)?;
    let negatives = sample_negatives(
        &graph,
        held_out.len(),
        cfg.stream("rank-search-negatives"),
        &[],
    )?;

    let max_rank = *RANK_CANDIDATES.iter().max().unwrap();
    let mut svd_cfg = cfg.svd_for("rank-search-svd");
    svd_cfg.rank = max_rank.min(half_adj.nrows());
    let design = build_ne(&half_adj, &cfg.ne)?;
    let model = train_ne(&design, &svd_cfg)?;

    let mut best = (RANK_CANDIDATES[0], f64::NEG_INFINITY);
    for &rank in RANK_CANDIDATES.iter().filter(|&&r| r <= svd_cfg.rank) {
        let auc = auc_for_rank(&model, rank, &held_out, &negatives)?;
        report.metric(&format!("rank_search_auc_{rank}"), auc);
        if auc > best.1 {
            best = (rank, auc);
        }
    }
    Ok(best.0)
}

pub fn run(mut cfg: RunConfig) -> anyhow::Result<()> {
    let total = Instant::now();
    let edges = cfg
        .paths
        .edges
        .clone()
        .context("link prediction needs --edges")?;
    if !(0.0..1.0).contains(&cfg.eval.test_fraction) {
        bail!("--test-fraction must lie in [0, 1)");
    }
    let started = Instant::now();
    let loaded = load_graph(
        &edges,
        None,
        None,
        cfg.paths.splits.as_deref(),
        cfg.directed,
    )?;
    let load_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut report = Report::new(cfg.clone());
    report.warnings = loaded.warnings.clone();
    report.id_map = Some(loaded.id_map.clone());
    report.counter("nodes", loaded.data.n() as u64);
    report.counter("adjacency_nonzeros", loaded.data.adjacency.nnz() as u64);

    // held-out edges: either provided, or split off while preserving
    // training-graph connectivity
    let (train_adj, test_pos, mut test_neg) = match &loaded.data.splits {
        Some(Splits::Edges { test_pos, test_neg }) => (
            loaded.data.adjacency.clone(),
            test_pos.clone(),
            test_neg.clone(),
        ),
        Some(Splits::Nodes { .. }) => bail!("link prediction expects edge splits, not node sets"),
        None => {
            let (train, test) = split_edges(
                &loaded.data.adjacency,
                cfg.eval.test_fraction,
                cfg.stream("split"),
            );
            (train, test, Vec::new())
        }
    };
    if test_pos.is_empty() {
        bail!("no test edges: provide --splits or a graph with removable cycles");
    }
    if test_neg.is_empty() {
        let want = ((test_pos.len() as f64) * cfg.eval.neg_ratio).round() as usize;
        test_neg = sample_negatives(
            &loaded.data,
            want.max(1),
            cfg.stream("negatives"),
            &test_pos,
        )?;
    }
    report.counter("test_positives", test_pos.len() as u64);
    report.counter("test_negatives", test_neg.len() as u64);

    if cfg.rank_search {
        let chosen = rank_search(&cfg, &train_adj, &mut report)?;
        report.counter("rank_search_chosen", chosen as u64);
        cfg.svd.rank = chosen;
        report.config.svd.rank = chosen;
    }

    let started = Instant::now();
    let design = build_ne(&train_adj, &cfg.ne)?;
    let mut svd_cfg = cfg.svd_for("svd");
    svd_cfg.rank = svd_cfg.rank.min(train_adj.nrows());
    let (svd, svd_report) = isvd_with_report(&design, &svd_cfg)?;
    let model = NeModel { svd };
    let train_ms = started.elapsed().as_secs_f64() * 1e3;
    report.counter("leaf_multiplications", svd_report.leaf_multiplications);
    report.counter("cache_hits", svd_report.cache_hits);
    report.counter("cache_misses", svd_report.cache_misses);

    let started = Instant::now();
    let scores = RankedScores::new(
        score_edges(&model, &test_pos, None),
        score_edges(&model, &test_neg, None),
    );
    let score_ms = started.elapsed().as_secs_f64() * 1e3;
    let auc = roc_auc(&scores)?;
    report.metric("auc", auc);
    match hits_at_k(&scores, cfg.eval.hits_k) {
        Ok(hits) => {
            report.metric(&format!("hits_at_{}", cfg.eval.hits_k), hits);
        }
        Err(err) => report.warnings.push(format!("hits@k skipped: {err}")),
    }

    let mut kernel = None;
    if cfg.finetune.enabled {
        let started = Instant::now();
        let train_pos = undirected_pairs(&train_adj);
        let train_graph = GraphData::new(train_adj.clone(), None, None, None)?;
        let want = ((train_pos.len() as f64) * cfg.finetune.k_n).round() as usize;
        let train_neg = sample_negatives(
            &train_graph,
            want.max(1),
            cfg.stream("finetune-negatives"),
            &[],
        )?;
        let (params, trace) = finetune_kernel(
            &model,
            &train_pos,
            &train_neg,
            cfg.finetune.k_n,
            cfg.finetune.steps,
            cfg.finetune.lr,
        )?;
        let spectrum = kernel_spectrum(&model.svd.s, &params);
        let tuned = RankedScores::new(
            score_edges(&model, &test_pos, Some(&spectrum)),
            score_edges(&model, &test_neg, Some(&spectrum)),
        );
        report.metric("auc_finetuned", roc_auc(&tuned)?);
        if let Ok(hits) = hits_at_k(&tuned, cfg.eval.hits_k) {
            report.metric(&format!("hits_at_{}_finetuned", cfg.eval.hits_k), hits);
        }
        report.metric("finetune_loss_initial", trace[0]);
        report.metric("finetune_loss_final", *trace.last().unwrap());
        report.metric("kernel_mu", params.mu);
        report.metric("kernel_s_bar", params.s_bar);
        report.timing("finetune", started.elapsed().as_secs_f64() * 1e3);
        kernel = Some(params);
    }

    if let Some(path) = &cfg.paths.save_model {
        let saved = SavedModel {
            ne: Some(model),
            nc: None,
            kernel,
        };
        std::fs::write(path, saved.to_json())
            .with_context(|| format!("writing model to {}", path.display()))?;
    }

    report.timing("load", load_ms);
    report.timing("train", train_ms);
    report.timing("score", score_ms);
    report.timing("total", total.elapsed().as_secs_f64() * 1e3);
    report.emit(cfg.paths.report.as_deref())
}
