//! Command-line pipelines over the lowrank library.
//!
//! Subcommands: `lp` (link prediction), `nc` (node classification), `svd`
//! (decompose a design matrix from a spec file), `bench` (runtime comparison
//! of caching and orthonormalization choices). Every run prints a JSON report
//! with the full configuration echoed back.
//!
//! Environment: `LOWRANK_SEED` overrides the default root seed and
//! `LOWRANK_THREADS` caps the scoring thread pool.

mod bench;
mod config;
mod lp;
mod nc;
mod report;
mod svdcmd;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use config::{parse_orthonorm, RunConfig, Task};
use lowrank::design::NeSpec;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "lowrank", version, about = "Closed-form graph learning via implicit SVD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SvdArgs {
    /// Truncation rank of the decomposition.
    #[arg(long, default_value_t = 32)]
    rank: usize,
    /// Subspace iterations; more buys accuracy.
    #[arg(long, default_value_t = 8)]
    iterations: usize,
    /// Working rank = oversample * rank.
    #[arg(long, default_value_t = 2)]
    oversample: usize,
    /// Orthonormalization routine: cholesky or qr.
    #[arg(long, default_value = "cholesky", value_parser = parse_orthonorm)]
    orthonorm: lowrank::rsvd::Orthonorm,
    /// Disable lazy caching of intermediate products.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Root seed; per-purpose streams derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct NeArgs {
    /// Non-edge penalty coefficient.
    #[arg(long, default_value_t = 0.05)]
    lambda: f64,
    /// Random-walk context window.
    #[arg(long = "context", visible_alias = "C", default_value_t = 3)]
    context: u32,
    /// Use the symmetrically normalized walk basis.
    #[arg(long)]
    symmetric: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Link prediction: factor the embedding design and rank held-out edges.
    Lp {
        /// Edge list (`src dst [weight]` per line).
        #[arg(long)]
        edges: PathBuf,
        /// JSON file with test_pos/test_neg edge lists.
        #[arg(long)]
        splits: Option<PathBuf>,
        /// Keep edge direction (no symmetrization).
        #[arg(long)]
        directed: bool,
        #[command(flatten)]
        ne: NeArgs,
        #[command(flatten)]
        svd: SvdArgs,
        /// Held-out fraction when no split file is given.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Sampled negatives per test positive when the split has none.
        #[arg(long, default_value_t = 1.0)]
        neg_ratio: f64,
        /// Ranking cutoff for hits@k.
        #[arg(long, default_value_t = 20)]
        hits_k: usize,
        /// Fine-tune the spectral kernel on the training edges.
        #[arg(long)]
        finetune_kernel: bool,
        /// Gradient steps for the kernel fine-tune.
        #[arg(long, default_value_t = 100)]
        finetune_steps: usize,
        /// Step size for the kernel fine-tune.
        #[arg(long, default_value_t = 1e-2)]
        finetune_lr: f64,
        /// Negative-to-positive weight in the fine-tune objective.
        #[arg(long, default_value_t = 10.0)]
        kn: f64,
        /// Pick the rank on half the training edges before the final run.
        #[arg(long)]
        rank_search: bool,
        /// Write the trained model (JSON container) here.
        #[arg(long)]
        save_model: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Semi-supervised node classification in closed form.
    Nc {
        /// Directory with edges.tsv, labels.tsv, splits.json and optionally
        /// features.csv.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        directed: bool,
        /// Propagation depth of the design matrix.
        #[arg(long, default_value_t = 15)]
        layers: usize,
        #[command(flatten)]
        svd: SvdArgs,
        /// Augment features with embedding coordinates before solving.
        #[arg(long)]
        ne_augment: bool,
        #[command(flatten)]
        ne: NeArgs,
        /// Embedding rank used by the augmentation.
        #[arg(long, default_value_t = 64)]
        ne_rank: usize,
        /// Output dimensionality of the principal-component reduction.
        #[arg(long, default_value_t = 1000)]
        pca_dims: usize,
        /// Subspace iterations for the reduction step.
        #[arg(long, default_value_t = 2)]
        pca_iterations: usize,
        /// Append leak-free propagated-label columns.
        #[arg(long)]
        label_reuse: bool,
        /// Pseudo-dropout rate for row augmentation.
        #[arg(long)]
        dropout: Option<f64>,
        /// Check that the split-relu network at initialization reproduces the
        /// linear model.
        #[arg(long)]
        verify_splitrelu_init: bool,
        #[arg(long)]
        save_model: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Decompose a design matrix described by a JSON spec file.
    Svd {
        /// Spec file: data paths plus a design recipe.
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        svd: SvdArgs,
        /// Directory for U.csv / S.csv / V.csv (default svd_out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare cache and orthonormalization configurations on a synthetic
    /// design.
    Bench {
        #[arg(long, default_value_t = 2000)]
        nodes: usize,
        #[arg(long, default_value_t = 20000)]
        edges: usize,
        #[command(flatten)]
        ne: NeArgs,
        #[command(flatten)]
        svd: SvdArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn env_seed() -> u64 {
    std::env::var("LOWRANK_SEED")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn apply_svd_args(cfg: &mut RunConfig, args: &SvdArgs) {
    cfg.svd.rank = args.rank;
    cfg.svd.iterations = args.iterations;
    cfg.svd.oversample_factor = args.oversample;
    cfg.svd.orthonorm = args.orthonorm;
    cfg.svd.use_cache = !args.no_cache;
}

fn apply_common(cfg: &mut RunConfig, common: &CommonArgs) {
    cfg.seed = common.seed.unwrap_or_else(env_seed);
    cfg.paths.report = common.report.clone();
}

fn main() -> anyhow::Result<()> {
    if let Ok(threads) = std::env::var("LOWRANK_THREADS") {
        let threads: usize = threads
            .parse()
            .context("LOWRANK_THREADS must be a thread count")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("initializing thread pool")?;
    }

    match Cli::parse().command {
        Command::Lp {
            edges,
            splits,
            directed,
            ne,
            svd,
            test_fraction,
            neg_ratio,
            hits_k,
            finetune_kernel,
            finetune_steps,
            finetune_lr,
            kn,
            rank_search,
            save_model,
            common,
        } => {
            let mut cfg = RunConfig::new(Task::LinkPredict);
            cfg.paths.edges = Some(edges);
            cfg.paths.splits = splits;
            cfg.paths.save_model = save_model;
            cfg.directed = directed;
            cfg.ne = NeSpec {
                lambda: ne.lambda,
                context: ne.context,
                symmetric: ne.symmetric,
            };
            apply_svd_args(&mut cfg, &svd);
            cfg.eval.test_fraction = test_fraction;
            cfg.eval.neg_ratio = neg_ratio;
            cfg.eval.hits_k = hits_k;
            cfg.finetune.enabled = finetune_kernel;
            cfg.finetune.steps = finetune_steps;
            cfg.finetune.lr = finetune_lr;
            cfg.finetune.k_n = kn;
            cfg.rank_search = rank_search;
            apply_common(&mut cfg, &common);
            lp::run(cfg)
        }
        Command::Nc {
            graph,
            directed,
            layers,
            svd,
            ne_augment,
            ne,
            ne_rank,
            pca_dims,
            pca_iterations,
            label_reuse,
            dropout,
            verify_splitrelu_init,
            save_model,
            common,
        } => {
            let mut cfg = RunConfig::new(Task::NodeClassify);
            cfg.paths.graph_dir = Some(graph);
            cfg.paths.save_model = save_model;
            cfg.directed = directed;
            cfg.nc.layers = layers;
            cfg.nc.label_reuse = label_reuse;
            cfg.nc.dropout = dropout;
            cfg.ne = NeSpec {
                lambda: ne.lambda,
                context: ne.context,
                symmetric: ne.symmetric,
            };
            apply_svd_args(&mut cfg, &svd);
            cfg.augment.enabled = ne_augment;
            cfg.augment.ne_rank = ne_rank;
            cfg.augment.pca_dims = pca_dims;
            cfg.augment.pca_iterations = pca_iterations;
            cfg.verify_splitrelu = verify_splitrelu_init;
            apply_common(&mut cfg, &common);
            nc::run(cfg)
        }
        Command::Svd {
            spec,
            svd,
            out,
            common,
        } => {
            let mut cfg = RunConfig::new(Task::SvdOnly);
            cfg.paths.spec = Some(spec);
            cfg.paths.out_dir = out;
            apply_svd_args(&mut cfg, &svd);
            apply_common(&mut cfg, &common);
            svdcmd::run(cfg)
        }
        Command::Bench {
            nodes,
            edges,
            ne,
            svd,
            common,
        } => {
            let mut cfg = RunConfig::new(Task::Bench);
            cfg.ne = NeSpec {
                lambda: ne.lambda,
                context: ne.context,
                symmetric: ne.symmetric,
            };
            apply_svd_args(&mut cfg, &svd);
            apply_common(&mut cfg, &common);
            bench::run(cfg, nodes, edges)
        }
    }
}
