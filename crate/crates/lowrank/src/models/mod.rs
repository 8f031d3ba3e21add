//! Closed-form model training on top of the implicit SVD.
//!
//! Embedding models factor the embedding design matrix and score node pairs
//! through the singular values; classification models recover the least-norm
//! weight matrix from the pseudoinverse of a row-gathered design. Both train
//! without gradients. The spectral edge kernel and the Split-ReLu network that
//! reuse these factors live in the submodules.

mod kernel;
mod splitrelu;

pub use kernel::{finetune_kernel, kernel_loss_and_grad, kernel_spectrum, KernelParams};
pub use splitrelu::{splitrelu_forward, splitrelu_init, SplitReluNet};

use crate::design::{assemble_nc, DesignError, NcSpec};
use crate::graph::GraphData;
use crate::linop::{evaluate, LinOp, LinOpError};
use crate::rsvd::{isvd, SvdConfig, SvdError, SvdResult};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Relative cutoff under which a singular value is treated as zero when the
/// spectrum is reciprocated.
pub const PINV_RTOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("embedding design matrix must be square, got {rows}x{cols}")]
    NonSquareDesign { rows: usize, cols: usize },
    #[error("training index set is empty")]
    EmptyTrainSet,
    #[error("label matrix has {got} rows but the design has {expected}")]
    LabelRows { expected: usize, got: usize },
    #[error("design matrix is degenerate: every singular value is numerically zero")]
    DegenerateDesign,
    #[error("feature width {got} does not match the trained width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("weight matrix with {got} rows cannot split into {layers}+1 blocks of {d}")]
    BlockMismatch { got: usize, d: usize, layers: usize },
    #[error("loss became non-finite at step {step} (mu={mu}, s_bar={s_bar})")]
    NonFiniteLoss { step: usize, mu: f64, s_bar: f64 },
    #[error("negative-pair list is empty")]
    NoNegatives,
    #[error("unsupported model format tag: {0}")]
    UnsupportedFormat(String),
    #[error("model deserialization failed: {0}")]
    Deserialize(String),
    #[error(transparent)]
    Svd(#[from] SvdError),
    #[error(transparent)]
    Operator(#[from] LinOpError),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// Trained network-embedding model: the truncated factors of the embedding
/// design matrix. Row and column embeddings are `U S^½` and `V S^½`.
#[derive(Debug, Clone)]
pub struct NeModel {
    pub svd: SvdResult,
}

impl NeModel {
    /// Pair affinity `⟨U_i, V_j⟩_S = U_iᵀ diag(s) V_j`.
    pub fn score(&self, i: usize, j: usize) -> f64 {
        let u = self.svd.u.row(i);
        let v = self.svd.v.row(j);
        self.svd
            .s
            .iter()
            .enumerate()
            .map(|(t, &s)| u[t] * s * v[t])
            .sum()
    }

    /// Pair affinity under a reweighted spectrum (see [`kernel_spectrum`]).
    pub fn score_with_spectrum(&self, i: usize, j: usize, spectrum: &[f64]) -> f64 {
        let u = self.svd.u.row(i);
        let v = self.svd.v.row(j);
        spectrum
            .iter()
            .enumerate()
            .map(|(t, &s)| u[t] * s * v[t])
            .sum()
    }

    /// Row embeddings `L = U S^½`.
    pub fn embedding_l(&self) -> DMatrix<f64> {
        scale_columns(&self.svd.u, &self.svd.s, f64::sqrt)
    }

    /// Column embeddings `R = V S^½`.
    pub fn embedding_r(&self) -> DMatrix<f64> {
        scale_columns(&self.svd.v, &self.svd.s, f64::sqrt)
    }
}

fn scale_columns(m: &DMatrix<f64>, s: &[f64], f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, &sv) in s.iter().enumerate() {
        out.column_mut(j).scale_mut(f(sv));
    }
    out
}

/// Factors the (square, implicit) embedding design matrix.
pub fn train_ne(m_ne: &LinOp, cfg: &SvdConfig) -> Result<NeModel, ModelError> {
    if m_ne.rows() != m_ne.cols() {
        return Err(ModelError::NonSquareDesign {
            rows: m_ne.rows(),
            cols: m_ne.cols(),
        });
    }
    Ok(NeModel {
        svd: isvd(m_ne, cfg)?,
    })
}

/// Trained node-classification model: the least-norm weight matrix together
/// with the design recipe needed to rebuild the operator at inference time.
#[derive(Debug, Clone)]
pub struct NcModel {
    pub w_star: DMatrix<f64>,
    pub spec: NcSpec,
}

impl NcModel {
    pub fn classes(&self) -> usize {
        self.w_star.ncols()
    }

    /// Width of the per-block feature matrix the model was trained on.
    pub fn feature_dim(&self) -> usize {
        let f = self.w_star.nrows();
        let lr_cols = if self.spec.label_reuse {
            2 * self.classes()
        } else {
            0
        };
        (f - lr_cols) / (self.spec.layers + 1)
    }
}

/// Solves `min ‖M_[train] W − Y_[train]‖_F` in closed form through the
/// truncated pseudoinverse: gathers the training rows implicitly, factors the
/// gathered operator, and returns `W* = V S⁺ Uᵀ Y`, multiplied right to left.
/// When the gathered system is underdetermined with independent rows and the
/// rank covers it, `W*` is the least-Frobenius-norm exact solution.
pub fn solve_nc(
    m_nc: &LinOp,
    y: &DMatrix<f64>,
    train_idx: &[usize],
    spec: NcSpec,
    cfg: &SvdConfig,
) -> Result<NcModel, ModelError> {
    if train_idx.is_empty() {
        return Err(ModelError::EmptyTrainSet);
    }
    if y.nrows() != m_nc.rows() {
        return Err(ModelError::LabelRows {
            expected: m_nc.rows(),
            got: y.nrows(),
        });
    }
    let gathered = m_nc.gather_rows(train_idx)?;
    let svd = isvd(&gathered, cfg)?;

    let s_max = svd.s.first().copied().unwrap_or(0.0);
    if s_max <= 0.0 {
        return Err(ModelError::DegenerateDesign);
    }

    let mut y_train = DMatrix::zeros(train_idx.len(), y.ncols());
    for (r, &i) in train_idx.iter().enumerate() {
        y_train.row_mut(r).copy_from(&y.row(i));
    }

    // right-to-left: (k x h)(h x y), scale rows, then (F x k)(k x y)
    let mut ut_y = svd.u.tr_mul(&y_train);
    for (t, &s) in svd.s.iter().enumerate() {
        let inv = if s > PINV_RTOL * s_max { 1.0 / s } else { 0.0 };
        ut_y.row_mut(t).scale_mut(inv);
    }
    let w_star = &svd.v * ut_y;
    Ok(NcModel { w_star, spec })
}

/// Rebuilds the design matrix for `graph` from the trained recipe and returns
/// the dense logits `M̂ W*`. Dropout rows are a training-time augmentation and
/// are not rebuilt here.
pub fn infer_nc(model: &NcModel, graph: &GraphData) -> Result<DMatrix<f64>, ModelError> {
    if let Some(x) = &graph.features {
        if x.ncols() != model.feature_dim() {
            return Err(ModelError::WidthMismatch {
                expected: model.feature_dim(),
                got: x.ncols(),
            });
        }
    }
    let (op, _) = assemble_nc(graph, &model.spec, false)?;
    if op.cols() != model.w_star.nrows() {
        return Err(ModelError::WidthMismatch {
            expected: model.w_star.nrows(),
            got: op.cols(),
        });
    }
    Ok(evaluate(&op, &model.w_star)?)
}

/// Row-wise argmax of a logits matrix.
pub fn predictions(logits: &DMatrix<f64>) -> Vec<usize> {
    (0..logits.nrows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Principal-component scores of a dense matrix: columns are mean-centered and
/// the centered leaf is factored with the implicit SVD, so this is a thin
/// wrapper rather than a separate decomposition. Returns `U diag(s)` with
/// `cfg.rank` columns (clamped to the matrix extent).
pub fn pca(x: &DMatrix<f64>, cfg: &SvdConfig) -> Result<DMatrix<f64>, ModelError> {
    let mut centered = x.clone();
    for j in 0..centered.ncols() {
        let mean = centered.column(j).sum() / centered.nrows() as f64;
        centered.column_mut(j).add_scalar_mut(-mean);
    }
    let mut cfg = cfg.clone();
    cfg.rank = cfg.rank.min(x.nrows().min(x.ncols()));
    let svd = isvd(&LinOp::leaf_dense(centered)?, &cfg)?;
    Ok(scale_columns(&svd.u, &svd.s, |s| s))
}

// ---------------------------------------------------------------------------
// serialization container

const FORMAT_TAG: &str = "lowrank-model/v1";

#[derive(Serialize, Deserialize)]
struct MatrixData {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixData {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl MatrixData {
    fn to_matrix(&self) -> Result<DMatrix<f64>, ModelError> {
        if self.data.len() != self.rows * self.cols {
            return Err(ModelError::Deserialize(format!(
                "matrix payload holds {} entries for a {}x{} shape",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct NeModelData {
    u: MatrixData,
    s: Vec<f64>,
    v: MatrixData,
}

#[derive(Serialize, Deserialize)]
struct NcModelData {
    w_star: MatrixData,
    spec: NcSpec,
}

#[derive(Serialize, Deserialize)]
struct SavedModelData {
    format: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    ne: Option<NeModelData>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nc: Option<NcModelData>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<KernelParams>,
}

/// Versioned on-disk container for any combination of trained artifacts.
#[derive(Debug, Clone, Default)]
pub struct SavedModel {
    pub ne: Option<NeModel>,
    pub nc: Option<NcModel>,
    pub kernel: Option<KernelParams>,
}

impl SavedModel {
    pub fn to_json(&self) -> String {
        let data = SavedModelData {
            format: FORMAT_TAG.to_string(),
            ne: self.ne.as_ref().map(|m| NeModelData {
                u: (&m.svd.u).into(),
                s: m.svd.s.clone(),
                v: (&m.svd.v).into(),
            }),
            nc: self.nc.as_ref().map(|m| NcModelData {
                w_star: (&m.w_star).into(),
                spec: m.spec.clone(),
            }),
            kernel: self.kernel.clone(),
        };
        serde_json::to_string(&data).expect("model serialization is infallible")
    }

    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let data: SavedModelData =
            serde_json::from_str(json).map_err(|e| ModelError::Deserialize(e.to_string()))?;
        if data.format != FORMAT_TAG {
            return Err(ModelError::UnsupportedFormat(data.format));
        }
        Ok(Self {
            ne: data
                .ne
                .map(|m| {
                    Ok::<_, ModelError>(NeModel {
                        svd: SvdResult {
                            u: m.u.to_matrix()?,
                            s: m.s,
                            v: m.v.to_matrix()?,
                        },
                    })
                })
                .transpose()?,
            nc: data
                .nc
                .map(|m| {
                    Ok::<_, ModelError>(NcModel {
                        w_star: m.w_star.to_matrix()?,
                        spec: m.spec,
                    })
                })
                .transpose()?,
            kernel: data.kernel,
        })
    }
}
