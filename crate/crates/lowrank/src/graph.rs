//! Graph dataset container: adjacency, optional features and labels, splits.

use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("adjacency must be square, got {rows}x{cols}")]
    NonSquareAdjacency { rows: usize, cols: usize },
    #[error("adjacency entries must be non-negative")]
    NegativeAdjacency,
    #[error("feature matrix has {got} rows, expected {expected}")]
    FeatureRows { expected: usize, got: usize },
    #[error("label matrix has {got} rows, expected {expected}")]
    LabelRows { expected: usize, got: usize },
    #[error("split index {index} out of range for {n} nodes")]
    SplitIndexOutOfRange { index: usize, n: usize },
    #[error("node splits must be disjoint (index {index} appears twice)")]
    OverlappingSplits { index: usize },
    #[error("edge split endpoint {index} out of range for {n} nodes")]
    EdgeEndpointOutOfRange { index: usize, n: usize },
}

/// Node index sets for semi-supervised classification, or held-out edge lists
/// for link prediction.
#[derive(Debug, Clone)]
pub enum Splits {
    Nodes {
        train: Vec<usize>,
        validation: Vec<usize>,
        test: Vec<usize>,
    },
    Edges {
        test_pos: Vec<(usize, usize)>,
        test_neg: Vec<(usize, usize)>,
    },
}

#[derive(Debug, Clone)]
pub struct GraphData {
    pub adjacency: CsrMatrix,
    pub features: Option<DMatrix<f64>>,
    /// One-hot rows for labeled nodes, zero rows elsewhere.
    pub labels: Option<DMatrix<f64>>,
    pub splits: Option<Splits>,
}

impl GraphData {
    pub fn new(
        adjacency: CsrMatrix,
        features: Option<DMatrix<f64>>,
        labels: Option<DMatrix<f64>>,
        splits: Option<Splits>,
    ) -> Result<Self, GraphError> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(GraphError::NonSquareAdjacency {
                rows: adjacency.nrows(),
                cols: adjacency.ncols(),
            });
        }
        if adjacency.iter().any(|(_, _, v)| v < 0.0) {
            return Err(GraphError::NegativeAdjacency);
        }
        if let Some(x) = &features {
            if x.nrows() != n {
                return Err(GraphError::FeatureRows {
                    expected: n,
                    got: x.nrows(),
                });
            }
        }
        if let Some(y) = &labels {
            if y.nrows() != n {
                return Err(GraphError::LabelRows {
                    expected: n,
                    got: y.nrows(),
                });
            }
        }
        if let Some(splits) = &splits {
            match splits {
                Splits::Nodes {
                    train,
                    validation,
                    test,
                } => {
                    let mut seen = vec![false; n];
                    for &i in train.iter().chain(validation).chain(test) {
                        if i >= n {
                            return Err(GraphError::SplitIndexOutOfRange { index: i, n });
                        }
                        if seen[i] {
                            return Err(GraphError::OverlappingSplits { index: i });
                        }
                        seen[i] = true;
                    }
                }
                Splits::Edges { test_pos, test_neg } => {
                    for &(i, j) in test_pos.iter().chain(test_neg) {
                        if i >= n || j >= n {
                            return Err(GraphError::EdgeEndpointOutOfRange {
                                index: i.max(j),
                                n,
                            });
                        }
                    }
                }
            }
        }
        Ok(Self {
            adjacency,
            features,
            labels,
            splits,
        })
    }

    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn train_nodes(&self) -> Option<&[usize]> {
        match &self.splits {
            Some(Splits::Nodes { train, .. }) => Some(train),
            _ => None,
        }
    }

    pub fn test_nodes(&self) -> Option<&[usize]> {
        match &self.splits {
            Some(Splits::Nodes { test, .. }) => Some(test),
            _ => None,
        }
    }
}

/// Copy of `labels` with every row outside `keep` zeroed. The result is the
/// leak-safe label matrix used for label re-use columns and for solves.
pub fn masked_labels(labels: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(labels.nrows(), labels.ncols());
    for &i in keep {
        out.row_mut(i).copy_from(&labels.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 2, 1.0),
                (2, 1, 1.0),
                (0, 2, 1.0),
                (2, 0, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn dimension_checks() {
        let a = triangle();
        assert!(GraphData::new(a.clone(), Some(DMatrix::zeros(2, 4)), None, None).is_err());
        assert!(GraphData::new(a.clone(), None, Some(DMatrix::zeros(4, 2)), None).is_err());
        assert!(GraphData::new(a, Some(DMatrix::zeros(3, 4)), None, None).is_ok());
    }

    #[test]
    fn split_validation() {
        let a = triangle();
        let bad = Splits::Nodes {
            train: vec![0],
            validation: vec![],
            test: vec![5],
        };
        assert!(matches!(
            GraphData::new(a.clone(), None, None, Some(bad)),
            Err(GraphError::SplitIndexOutOfRange { index: 5, .. })
        ));
        let overlapping = Splits::Nodes {
            train: vec![0, 1],
            validation: vec![1],
            test: vec![],
        };
        assert!(matches!(
            GraphData::new(a, None, None, Some(overlapping)),
            Err(GraphError::OverlappingSplits { index: 1 })
        ));
    }

    #[test]
    fn negative_adjacency_rejected() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, -1.0)]).unwrap();
        assert!(matches!(
            GraphData::new(a, None, None, None),
            Err(GraphError::NegativeAdjacency)
        ));
    }

    #[test]
    fn masked_labels_zero_unlabeled_rows() {
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let masked = masked_labels(&y, &[1]);
        assert_eq!(masked.row(0).iter().sum::<f64>(), 0.0);
        assert_eq!(masked[(1, 1)], 1.0);
        assert_eq!(masked.row(2).iter().sum::<f64>(), 0.0);
    }
}
