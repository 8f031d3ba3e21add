//! Run configuration: everything a pipeline needs, serializable both ways so
//! a report's `config` block can replay the run exactly.

use lowrank::design::NeSpec;
use lowrank::rsvd::{Orthonorm, SvdConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    LinkPredict,
    NodeClassify,
    SvdOnly,
    Bench,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edges: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splits: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub save_model: Option<PathBuf>,
}

/// Classification design knobs (the embedding ones live in [`NeSpec`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcParams {
    pub layers: usize,
    pub label_reuse: bool,
    /// Pseudo-dropout rate; row augmentation is off when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneParams {
    pub enabled: bool,
    pub steps: usize,
    pub lr: f64,
    pub k_n: f64,
}

impl Default for FinetuneParams {
    fn default() -> Self {
        Self {
            enabled: false,
            steps: 100,
            lr: 1e-2,
            k_n: 10.0,
        }
    }
}

/// Structural feature augmentation for classification: embed, concatenate,
/// reduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub enabled: bool,
    pub ne_rank: usize,
    pub pca_dims: usize,
    pub pca_iterations: usize,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            enabled: false,
            ne_rank: 64,
            pca_dims: 1000,
            pca_iterations: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    /// Held-out fraction for the fallback edge splitter.
    pub test_fraction: f64,
    /// Sampled negatives per test positive when the split has none.
    pub neg_ratio: f64,
    pub hits_k: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            neg_ratio: 1.0,
            hits_k: 20,
        }
    }
}

/// One flat, lossless description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub paths: Paths,
    pub directed: bool,
    pub ne: NeSpec,
    pub nc: NcParams,
    pub svd: SvdConfig,
    pub finetune: FinetuneParams,
    pub augment: AugmentParams,
    pub eval: EvalParams,
    pub rank_search: bool,
    pub verify_splitrelu: bool,
    /// Root seed; per-purpose streams are derived from it by label.
    pub seed: u64,
}

impl RunConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            paths: Paths::default(),
            directed: false,
            ne: NeSpec::new(0.05, 3),
            nc: NcParams {
                layers: 15,
                label_reuse: false,
                dropout: None,
            },
            svd: SvdConfig::new(32),
            finetune: FinetuneParams::default(),
            augment: AugmentParams::default(),
            eval: EvalParams::default(),
            rank_search: false,
            verify_splitrelu: false,
            seed: 0,
        }
    }

    /// SVD settings with the seed fanned out for the given purpose.
    pub fn svd_for(&self, label: &str) -> SvdConfig {
        let mut cfg = self.svd.clone();
        cfg.seed = lowrank::io::substream_seed(self.seed, label);
        cfg
    }

    pub fn stream(&self, label: &str) -> u64 {
        lowrank::io::substream_seed(self.seed, label)
    }
}

pub fn parse_orthonorm(name: &str) -> Result<Orthonorm, String> {
    match name {
        "cholesky" => Ok(Orthonorm::Cholesky),
        "qr" => Ok(Orthonorm::Qr),
        other => Err(format!("unknown orthonorm `{other}` (use cholesky or qr)")),
    }
}
