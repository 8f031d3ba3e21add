//! Symbolic linear operators composed as a directed acyclic graph.
//!
//! A [`LinOp`] either explicitly holds a matrix (dense or sparse leaf) or
//! implicitly represents one as a combination of other operators. No combinator
//! performs numeric work at construction time; the only way to touch numbers is
//! [`evaluate`](crate::linop::evaluate), which right-multiplies the operator by
//! an explicit dense matrix and recurses down to the leaves.
//!
//! Operators `+`, `-`, `*` (both scalar and operator-operator) are overloaded
//! so expressions read like the matrix algebra they stand for. The overloads
//! panic on shape mismatch, matching the convention of `nalgebra`; fallible
//! construction is available through the named constructors.

mod eval;

pub use eval::{evaluate, evaluate_with, EvalCache, EvalStats};

use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Row/column extent of an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LinOpError {
    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: &'static str,
        expected: Shape,
        got: Shape,
    },
    #[error("combinator requires at least one child")]
    EmptyChildren,
    #[error("leaf matrices must have finite entries")]
    NonFiniteEntry,
    #[error("power exponent must be at least 1")]
    ZeroExponent,
    #[error("power requires a square operator, got {got}")]
    NonSquarePower { got: Shape },
    #[error("gather index {index} out of range for extent {bound}")]
    GatherIndexOutOfRange { index: usize, bound: usize },
    #[error("right-hand matrix has {got} rows but operator expects {expected}")]
    OperandRows { expected: usize, got: usize },
    #[error("evaluation cache was populated for a different right-hand matrix")]
    CacheFingerprintMismatch,
}

/// What a DAG node is. Leaves hold explicit storage; every other kind holds
/// none and defers to its children.
#[derive(Debug)]
pub enum Kind {
    LeafDense(DMatrix<f64>),
    LeafSparse(CsrMatrix),
    /// Transpose of a leaf. Combinator transposes are rewritten structurally
    /// by [`LinOp::t`], so this wrapper only ever holds a leaf child and
    /// multiplies through the leaf's storage in the transposed direction.
    Transpose,
    Sum,
    Product,
    ScalarTimes(f64),
    Power(u32),
    ConcatRows,
    ConcatCols,
    GatherRows(Vec<usize>),
    GatherCols(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    id: u64,
    kind: Kind,
    children: Vec<LinOp>,
    shape: Shape,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a node of the operator DAG. Cloning is cheap and shares the
/// underlying node, so common subexpressions keep a single identity, which the
/// evaluation cache relies on.
#[derive(Clone)]
pub struct LinOp(Arc<Node>);

impl fmt::Debug for LinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LinOp#{}[{:?} {}]", self.0.id, variant(self), self.shape())
    }
}

fn variant(op: &LinOp) -> &'static str {
    match op.kind() {
        Kind::LeafDense(_) => "dense",
        Kind::LeafSparse(_) => "sparse",
        Kind::Transpose => "transpose",
        Kind::Sum => "sum",
        Kind::Product => "product",
        Kind::ScalarTimes(_) => "scalar",
        Kind::Power(_) => "power",
        Kind::ConcatRows => "concat_rows",
        Kind::ConcatCols => "concat_cols",
        Kind::GatherRows(_) => "gather_rows",
        Kind::GatherCols(_) => "gather_cols",
    }
}

impl LinOp {
    fn build(kind: Kind, children: Vec<LinOp>, shape: Shape) -> Self {
        LinOp(Arc::new(Node {
            id: fresh_id(),
            kind,
            children,
            shape,
        }))
    }

    /// Construction-order serial number; stable for the life of the node.
    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn kind(&self) -> &Kind {
        &self.0.kind
    }

    pub fn children(&self) -> &[LinOp] {
        &self.0.children
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn rows(&self) -> usize {
        self.0.shape.rows
    }

    pub fn cols(&self) -> usize {
        self.0.shape.cols
    }

    /// Leaf holding an explicit dense matrix.
    pub fn leaf_dense(m: DMatrix<f64>) -> Result<Self, LinOpError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LinOpError::NonFiniteEntry);
        }
        let shape = Shape::new(m.nrows(), m.ncols());
        Ok(Self::build(Kind::LeafDense(m), vec![], shape))
    }

    /// Leaf holding an explicit sparse matrix.
    pub fn leaf_sparse(m: CsrMatrix) -> Result<Self, LinOpError> {
        if m.iter().any(|(_, _, v)| !v.is_finite()) {
            return Err(LinOpError::NonFiniteEntry);
        }
        let shape = Shape::new(m.nrows(), m.ncols());
        Ok(Self::build(Kind::LeafSparse(m), vec![], shape))
    }

    pub fn sum(children: Vec<LinOp>) -> Result<Self, LinOpError> {
        let first = children.first().ok_or(LinOpError::EmptyChildren)?.shape();
        for c in &children {
            if c.shape() != first {
                return Err(LinOpError::ShapeMismatch {
                    context: "sum children must share one shape",
                    expected: first,
                    got: c.shape(),
                });
            }
        }
        Ok(Self::build(Kind::Sum, children, first))
    }

    pub fn product(children: Vec<LinOp>) -> Result<Self, LinOpError> {
        if children.is_empty() {
            return Err(LinOpError::EmptyChildren);
        }
        for pair in children.windows(2) {
            if pair[0].cols() != pair[1].rows() {
                return Err(LinOpError::ShapeMismatch {
                    context: "product children must chain",
                    expected: Shape::new(pair[0].cols(), pair[1].cols()),
                    got: pair[1].shape(),
                });
            }
        }
        let shape = Shape::new(children[0].rows(), children.last().unwrap().cols());
        Ok(Self::build(Kind::Product, children, shape))
    }

    pub fn scale(&self, scalar: f64) -> Self {
        assert!(scalar.is_finite(), "scalar must be finite");
        Self::build(
            Kind::ScalarTimes(scalar),
            vec![self.clone()],
            self.shape(),
        )
    }

    pub fn pow(&self, exponent: u32) -> Result<Self, LinOpError> {
        if exponent == 0 {
            return Err(LinOpError::ZeroExponent);
        }
        if self.rows() != self.cols() {
            return Err(LinOpError::NonSquarePower { got: self.shape() });
        }
        Ok(Self::build(
            Kind::Power(exponent),
            vec![self.clone()],
            self.shape(),
        ))
    }

    pub fn concat_rows(children: Vec<LinOp>) -> Result<Self, LinOpError> {
        let first = children.first().ok_or(LinOpError::EmptyChildren)?.shape();
        let mut rows = 0;
        for c in &children {
            if c.cols() != first.cols {
                return Err(LinOpError::ShapeMismatch {
                    context: "concat_rows children must share column count",
                    expected: first,
                    got: c.shape(),
                });
            }
            rows += c.rows();
        }
        Ok(Self::build(
            Kind::ConcatRows,
            children,
            Shape::new(rows, first.cols),
        ))
    }

    pub fn concat_cols(children: Vec<LinOp>) -> Result<Self, LinOpError> {
        let first = children.first().ok_or(LinOpError::EmptyChildren)?.shape();
        let mut cols = 0;
        for c in &children {
            if c.rows() != first.rows {
                return Err(LinOpError::ShapeMismatch {
                    context: "concat_cols children must share row count",
                    expected: first,
                    got: c.shape(),
                });
            }
            cols += c.cols();
        }
        Ok(Self::build(
            Kind::ConcatCols,
            children,
            Shape::new(first.rows, cols),
        ))
    }

    /// Row slice `self[indices, :]` as an implicit operator.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Self, LinOpError> {
        for &i in indices {
            if i >= self.rows() {
                return Err(LinOpError::GatherIndexOutOfRange {
                    index: i,
                    bound: self.rows(),
                });
            }
        }
        Ok(Self::build(
            Kind::GatherRows(indices.to_vec()),
            vec![self.clone()],
            Shape::new(indices.len(), self.cols()),
        ))
    }

    /// Column slice `self[:, indices]` as an implicit operator.
    pub fn gather_cols(&self, indices: &[usize]) -> Result<Self, LinOpError> {
        for &i in indices {
            if i >= self.cols() {
                return Err(LinOpError::GatherIndexOutOfRange {
                    index: i,
                    bound: self.cols(),
                });
            }
        }
        Ok(Self::build(
            Kind::GatherCols(indices.to_vec()),
            vec![self.clone()],
            Shape::new(self.rows(), indices.len()),
        ))
    }

    /// Transpose, rewritten structurally: products reverse and transpose their
    /// children, concatenations swap axis, gathers swap direction, and only
    /// leaves end up wrapped in a [`Kind::Transpose`] node that multiplies
    /// through the original storage. A double transpose returns the original
    /// node, identity included.
    pub fn t(&self) -> LinOp {
        match self.kind() {
            Kind::LeafDense(_) | Kind::LeafSparse(_) => Self::build(
                Kind::Transpose,
                vec![self.clone()],
                Shape::new(self.cols(), self.rows()),
            ),
            Kind::Transpose => self.children()[0].clone(),
            Kind::Sum => {
                let kids = self.children().iter().map(LinOp::t).collect();
                Self::sum(kids).expect("transpose preserves sum compatibility")
            }
            Kind::Product => {
                let kids = self.children().iter().rev().map(LinOp::t).collect();
                Self::product(kids).expect("transpose preserves chain compatibility")
            }
            Kind::ScalarTimes(s) => self.children()[0].t().scale(*s),
            Kind::Power(q) => self.children()[0]
                .t()
                .pow(*q)
                .expect("transpose preserves squareness"),
            Kind::ConcatRows => {
                let kids = self.children().iter().map(LinOp::t).collect();
                Self::concat_cols(kids).expect("transpose swaps concat axis")
            }
            Kind::ConcatCols => {
                let kids = self.children().iter().map(LinOp::t).collect();
                Self::concat_rows(kids).expect("transpose swaps concat axis")
            }
            Kind::GatherRows(idx) => self.children()[0]
                .t()
                .gather_cols(idx)
                .expect("transpose swaps gather direction"),
            Kind::GatherCols(idx) => self.children()[0]
                .t()
                .gather_rows(idx)
                .expect("transpose swaps gather direction"),
        }
    }

    /// One-shot uncached product with a dense right factor.
    pub fn dot(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>, LinOpError> {
        evaluate(self, g)
    }
}

impl std::ops::Add for LinOp {
    type Output = LinOp;
    fn add(self, rhs: LinOp) -> LinOp {
        LinOp::sum(vec![self, rhs]).expect("operator addition requires equal shapes")
    }
}

impl std::ops::Add for &LinOp {
    type Output = LinOp;
    fn add(self, rhs: &LinOp) -> LinOp {
        self.clone() + rhs.clone()
    }
}

impl std::ops::Sub for LinOp {
    type Output = LinOp;
    fn sub(self, rhs: LinOp) -> LinOp {
        LinOp::sum(vec![self, rhs.scale(-1.0)])
            .expect("operator subtraction requires equal shapes")
    }
}

impl std::ops::Sub for &LinOp {
    type Output = LinOp;
    fn sub(self, rhs: &LinOp) -> LinOp {
        self.clone() - rhs.clone()
    }
}

impl std::ops::Neg for LinOp {
    type Output = LinOp;
    fn neg(self) -> LinOp {
        self.scale(-1.0)
    }
}

impl std::ops::Mul for LinOp {
    type Output = LinOp;
    fn mul(self, rhs: LinOp) -> LinOp {
        LinOp::product(vec![self, rhs]).expect("operator product requires chained shapes")
    }
}

impl std::ops::Mul for &LinOp {
    type Output = LinOp;
    fn mul(self, rhs: &LinOp) -> LinOp {
        self.clone() * rhs.clone()
    }
}

impl std::ops::Mul<f64> for LinOp {
    type Output = LinOp;
    fn mul(self, rhs: f64) -> LinOp {
        self.scale(rhs)
    }
}

impl std::ops::Mul<LinOp> for f64 {
    type Output = LinOp;
    fn mul(self, rhs: LinOp) -> LinOp {
        rhs.scale(self)
    }
}

impl std::ops::Mul<&LinOp> for f64 {
    type Output = LinOp;
    fn mul(self, rhs: &LinOp) -> LinOp {
        rhs.scale(self)
    }
}
