//! Runtime comparison across the four decomposition configurations:
//! lazy caching on/off crossed with Cholesky/QR orthonormalization, on a
//! synthetic embedding design.

use crate::config::RunConfig;
use crate::report::Report;
use lowrank::design::build_ne;
use lowrank::models::train_ne;
use lowrank::rsvd::{isvd_with_report, Orthonorm};
use lowrank::sparse::CsrMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::time::Instant;

pub fn synthetic_graph(n: usize, m: usize, seed: u64) -> CsrMatrix {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(2 * m + 2 * n);
    // ring backbone keeps the graph connected
    for i in 0..n {
        let j = (i + 1) % n;
        triplets.push((i, j, 1.0));
        triplets.push((j, i, 1.0));
    }
    for _ in 0..m.saturating_sub(n) {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i != j {
            triplets.push((i, j, 1.0));
            triplets.push((j, i, 1.0));
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets).expect("indices in bounds")
}

pub fn run(cfg: RunConfig, nodes: usize, edges: usize) -> anyhow::Result<()> {
    let total = Instant::now();
    let adjacency = synthetic_graph(nodes, edges, cfg.stream("bench-graph"));
    let design = build_ne(&adjacency, &cfg.ne)?;

    let mut report = Report::new(cfg.clone());
    report.counter("nodes", nodes as u64);
    report.counter("adjacency_nonzeros", adjacency.nnz() as u64);

    let mut baseline_ms = None;
    for (label, use_cache, orthonorm) in [
        ("qr_nocache", false, Orthonorm::Qr),
        ("qr_cache", true, Orthonorm::Qr),
        ("cholesky_nocache", false, Orthonorm::Cholesky),
        ("cholesky_cache", true, Orthonorm::Cholesky),
    ] {
        let mut svd_cfg = cfg.svd_for("svd");
        svd_cfg.rank = svd_cfg.rank.min(nodes);
        svd_cfg.use_cache = use_cache;
        svd_cfg.orthonorm = orthonorm;
        let started = Instant::now();
        let (_, svd_report) = isvd_with_report(&design, &svd_cfg)?;
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        report.timing(&format!("svd_{label}"), elapsed);
        report.counter(
            &format!("leaf_multiplications_{label}"),
            svd_report.leaf_multiplications,
        );
        report.counter(&format!("cache_hits_{label}"), svd_report.cache_hits);
        // ratios against the common default: QR without caching
        match baseline_ms {
            None => baseline_ms = Some(elapsed),
            Some(base) => {
                report.metric(&format!("speed_ratio_{label}"), elapsed / base);
            }
        }
    }

    // one full factorization for reference quality numbers
    let mut svd_cfg = cfg.svd_for("svd");
    svd_cfg.rank = svd_cfg.rank.min(nodes);
    let model = train_ne(&design, &svd_cfg)?;
    report.metric("top_singular_value", model.svd.s[0]);

    report.timing("total", total.elapsed().as_secs_f64() * 1e3);
    report.emit(cfg.paths.report.as_deref())
}
