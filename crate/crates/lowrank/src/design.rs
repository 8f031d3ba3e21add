//! Implicit design matrices for the two training tasks.
//!
//! The embedding design combines decaying random-walk powers of a normalized
//! adjacency with a rank-one penalty on non-edges; the classification design
//! column-concatenates propagated feature blocks. Both come back as operator
//! DAGs: the quadratic-size pieces (the all-ones matrix, the walk powers) are
//! never materialized, and repeated powers share one basis node so cached
//! evaluation touches each sparse factor once per batch.

use crate::graph::{GraphData, Splits};
use crate::linop::{Kind, LinOp, LinOpError};
use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DesignError {
    #[error("context window must be at least 1")]
    ZeroContext,
    #[error("negative-sample coefficient must be non-negative")]
    NegativeLambda,
    #[error("feature matrix must be non-empty")]
    EmptyFeatures,
    #[error("feature matrix has {got} rows but the graph has {expected} nodes")]
    FeatureRows { expected: usize, got: usize },
    #[error("label matrix has {got} rows but the graph has {expected} nodes")]
    LabelRows { expected: usize, got: usize },
    #[error("dropout rate must lie strictly between 0 and 1, got {0}")]
    DropoutRate(f64),
    #[error("graph has no feature matrix")]
    MissingFeatures,
    #[error("label re-use requires labels and a training split")]
    MissingLabels,
    #[error(transparent)]
    Operator(#[from] LinOpError),
}

/// Network-embedding design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeSpec {
    pub lambda: f64,
    #[serde(rename = "C")]
    pub context: u32,
    /// Use the symmetrically normalized adjacency instead of the transition
    /// matrix as the walk basis.
    #[serde(default)]
    pub symmetric: bool,
}

impl NeSpec {
    pub fn new(lambda: f64, context: u32) -> Self {
        Self {
            lambda,
            context,
            symmetric: false,
        }
    }
}

/// Pseudo-dropout configuration for the classification design.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdSpec {
    #[default]
    Off,
    On { rate: f64, seed: u64 },
}

/// Node-classification design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcSpec {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(default)]
    pub label_reuse: bool,
    #[serde(default)]
    pub pseudo_dropout: PdSpec,
}

impl NcSpec {
    pub fn new(layers: usize) -> Self {
        Self {
            layers,
            label_reuse: false,
            pseudo_dropout: PdSpec::Off,
        }
    }
}

/// Serializable recipe for either design, so runs can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DesignSpec {
    #[serde(rename = "ne")]
    Ne(NeSpec),
    #[serde(rename = "nc")]
    Nc(NcSpec),
}

/// Row-normalized transition matrix `D⁻¹A` as a sparse leaf. Rows of isolated
/// nodes stay zero (the pseudo-inverse convention `0⁻¹ → 0`).
pub fn transition(a: &CsrMatrix) -> LinOp {
    let factors: Vec<f64> = a
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 0.0 })
        .collect();
    LinOp::leaf_sparse(a.scale_rows(&factors)).expect("finite adjacency")
}

/// Symmetrically normalized adjacency with self-connections,
/// `(D+I)^{-1/2}(A+I)(D+I)^{-1/2}`, as a sparse leaf.
pub fn sym_norm_adj(a: &CsrMatrix) -> LinOp {
    let inv_sqrt: Vec<f64> = a
        .row_sums()
        .into_iter()
        .map(|d| 1.0 / (d + 1.0).sqrt())
        .collect();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz() + a.nrows());
    for (i, j, v) in a.iter() {
        triplets.push((i, j, v * inv_sqrt[i] * inv_sqrt[j]));
    }
    for (i, &scale) in inv_sqrt.iter().enumerate() {
        triplets.push((i, i, scale * scale));
    }
    let m = CsrMatrix::from_triplets(a.nrows(), a.ncols(), &triplets).expect("indices in bounds");
    LinOp::leaf_sparse(m).expect("finite adjacency")
}

/// Decaying context weights: `w_q ∝ C − q + 1`, normalized to sum to one.
pub fn context_weights(context: u32) -> Result<Vec<f64>, DesignError> {
    if context == 0 {
        return Err(DesignError::ZeroContext);
    }
    let c = context as f64;
    let norm = c * (c + 1.0) / 2.0;
    Ok((1..=context).map(|q| (c - q as f64 + 1.0) / norm).collect())
}

/// Network-embedding design matrix: decaying walk powers minus a rank-one
/// penalty on the graph complement,
/// `Σ_q w_q B^q − λ(1·1ᵀ − A)` with `B` the transition matrix (or its
/// symmetric counterpart). The all-ones term is a product of two ones-vector
/// leaves and is never stored.
pub fn build_ne(a: &CsrMatrix, spec: &NeSpec) -> Result<LinOp, DesignError> {
    if spec.lambda < 0.0 {
        return Err(DesignError::NegativeLambda);
    }
    let n = a.nrows();
    let basis = if spec.symmetric {
        sym_norm_adj(a)
    } else {
        transition(a)
    };
    let weights = context_weights(spec.context)?;
    let mut terms: Vec<LinOp> = Vec::with_capacity(spec.context as usize + 1);
    for (q, &w) in (1..=spec.context).zip(&weights) {
        terms.push(basis.pow(q)?.scale(w));
    }
    if spec.lambda > 0.0 {
        let ones_col = LinOp::leaf_dense(DMatrix::from_element(n, 1, 1.0))?;
        let ones_row = LinOp::leaf_dense(DMatrix::from_element(1, n, 1.0))?;
        let complement = ones_col * ones_row - LinOp::leaf_sparse(a.clone())?;
        terms.push(complement.scale(-spec.lambda));
    }
    Ok(LinOp::sum(terms)?)
}

/// Node-classification design matrix `[X | ÂX | Â²X | … | Â^L X]` as an
/// implicit `n x d(L+1)` operator. Blocks are nested products sharing one
/// propagation node, so cached evaluation reuses each `Â`-application across
/// blocks.
pub fn build_nc(a_hat: &LinOp, x: &DMatrix<f64>, layers: usize) -> Result<LinOp, DesignError> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(DesignError::EmptyFeatures);
    }
    if x.nrows() != a_hat.cols() {
        return Err(DesignError::FeatureRows {
            expected: a_hat.cols(),
            got: x.nrows(),
        });
    }
    let mut blocks = Vec::with_capacity(layers + 1);
    blocks.push(LinOp::leaf_dense(x.clone())?);
    for _ in 0..layers {
        let prev = blocks.last().unwrap().clone();
        blocks.push(LinOp::product(vec![a_hat.clone(), prev])?);
    }
    Ok(LinOp::concat_cols(blocks)?)
}

/// Appends two leak-free label-propagation blocks,
/// `(Â − (D+I)⁻¹)Y` and `(Â − (D+I)⁻¹)²Y`, to the classification design.
/// Subtracting `(D+I)⁻¹` zeroes the diagonal of the propagation operator, so
/// a node's own (training) label never reaches its design row. `y_train` must
/// hold zero rows for unlabeled nodes.
pub fn add_label_reuse(
    m_nc: &LinOp,
    a: &CsrMatrix,
    y_train: &DMatrix<f64>,
) -> Result<LinOp, DesignError> {
    let n = a.nrows();
    if y_train.nrows() != n {
        return Err(DesignError::LabelRows {
            expected: n,
            got: y_train.nrows(),
        });
    }
    let inv_diag: Vec<f64> = a.row_sums().into_iter().map(|d| 1.0 / (d + 1.0)).collect();
    let propagate = sym_norm_adj(a) - LinOp::leaf_sparse(CsrMatrix::from_diagonal(&inv_diag))?;
    let y_leaf = LinOp::leaf_dense(y_train.clone())?;
    let block1 = LinOp::product(vec![propagate.clone(), y_leaf])?;
    let block2 = LinOp::product(vec![propagate, block1.clone()])?;

    let mut blocks: Vec<LinOp> = match m_nc.kind() {
        Kind::ConcatCols => m_nc.children().to_vec(),
        _ => vec![m_nc.clone()],
    };
    blocks.push(block1);
    blocks.push(block2);
    Ok(LinOp::concat_cols(blocks)?)
}

/// Row index bookkeeping for a row-duplicated design.
#[derive(Debug, Clone)]
pub struct RowAugmentation {
    pub original_rows: usize,
    /// Per-column-block keep mask applied to the replica.
    pub keep_mask: Vec<bool>,
}

impl RowAugmentation {
    /// `[idx | idx]ᵀ`: every original row index plus its replica.
    pub fn duplicate_indices(&self, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .copied()
            .chain(indices.iter().map(|&i| i + self.original_rows))
            .collect()
    }
}

/// Pseudo-dropout augmentation: row-concatenates the design with a replica
/// whose column blocks are zeroed independently with probability `rate`.
/// Width is unchanged; the row count doubles. Masks are drawn once from the
/// seed, so the same (operator, rate, seed) always builds the same replica.
pub fn pseudo_dropout(
    m: &LinOp,
    rate: f64,
    seed: u64,
) -> Result<(LinOp, RowAugmentation), DesignError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(DesignError::DropoutRate(rate));
    }
    let blocks: Vec<LinOp> = match m.kind() {
        Kind::ConcatCols => m.children().to_vec(),
        _ => vec![m.clone()],
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let keep_mask: Vec<bool> = blocks.iter().map(|_| rng.gen::<f64>() >= rate).collect();
    let masked: Vec<LinOp> = blocks
        .iter()
        .zip(&keep_mask)
        .map(|(b, &keep)| b.scale(if keep { 1.0 } else { 0.0 }))
        .collect();
    let replica = LinOp::concat_cols(masked)?;
    let stacked = LinOp::concat_rows(vec![m.clone(), replica])?;
    Ok((
        stacked,
        RowAugmentation {
            original_rows: m.rows(),
            keep_mask,
        },
    ))
}

/// Assembles the full classification design for a graph: propagation blocks,
/// optional label re-use columns, and (for training) optional pseudo-dropout
/// row augmentation. Dropout rows are a training-time data augmentation, so
/// inference callers pass `include_dropout = false` and keep the base rows.
pub fn assemble_nc(
    graph: &GraphData,
    spec: &NcSpec,
    include_dropout: bool,
) -> Result<(LinOp, Option<RowAugmentation>), DesignError> {
    let x = graph.features.as_ref().ok_or(DesignError::MissingFeatures)?;
    let a_hat = sym_norm_adj(&graph.adjacency);
    let mut op = build_nc(&a_hat, x, spec.layers)?;
    if spec.label_reuse {
        let labels = graph.labels.as_ref().ok_or(DesignError::MissingLabels)?;
        let train = match &graph.splits {
            Some(Splits::Nodes { train, .. }) if !train.is_empty() => train,
            _ => return Err(DesignError::MissingLabels),
        };
        let y_train = crate::graph::masked_labels(labels, train);
        op = add_label_reuse(&op, &graph.adjacency, &y_train)?;
    }
    if include_dropout {
        if let PdSpec::On { rate, seed } = spec.pseudo_dropout {
            let (stacked, map) = pseudo_dropout(&op, rate, seed)?;
            return Ok((stacked, Some(map)));
        }
    }
    Ok((op, None))
}
