//! Ranking and classification metrics.

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("score lists must be non-empty")]
    EmptyScores,
    #[error("hits@k needs at least {k} negatives, got {negatives}")]
    TooFewNegatives { k: usize, negatives: usize },
    #[error("prediction and truth lengths differ ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("evaluation mask is empty")]
    EmptyMask,
    #[error("scores contain non-finite values")]
    NonFiniteScore,
}

/// Scores of held-out positive pairs and sampled negative pairs.
#[derive(Debug, Clone, Default)]
pub struct RankedScores {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl RankedScores {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        Self {
            positives,
            negatives,
        }
    }
}

/// Probability that a random positive outranks a random negative; ties count
/// one half. Computed from midranks, so it is exact for tied scores.
pub fn roc_auc(scores: &RankedScores) -> Result<f64, MetricError> {
    let np = scores.positives.len();
    let nn = scores.negatives.len();
    if np == 0 || nn == 0 {
        return Err(MetricError::EmptyScores);
    }
    if scores
        .positives
        .iter()
        .chain(&scores.negatives)
        .any(|v| !v.is_finite())
    {
        return Err(MetricError::NonFiniteScore);
    }
    let mut all: Vec<(f64, bool)> = scores
        .positives
        .iter()
        .map(|&s| (s, true))
        .chain(scores.negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // averaged 1-based rank for the tie group [i, j)
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (np * (np + 1)) as f64 / 2.0;
    Ok(u / (np as f64 * nn as f64))
}

/// Fraction of positives scored strictly above the k-th highest negative.
pub fn hits_at_k(scores: &RankedScores, k: usize) -> Result<f64, MetricError> {
    if scores.positives.is_empty() || scores.negatives.is_empty() {
        return Err(MetricError::EmptyScores);
    }
    if scores.negatives.len() < k || k == 0 {
        return Err(MetricError::TooFewNegatives {
            k,
            negatives: scores.negatives.len(),
        });
    }
    let mut negs = scores.negatives.clone();
    negs.sort_by(|a, b| b.total_cmp(a));
    let threshold = negs[k - 1];
    let above = scores.positives.iter().filter(|&&s| s > threshold).count();
    Ok(above as f64 / scores.positives.len() as f64)
}

/// Fraction of `mask` positions where prediction equals truth.
pub fn accuracy(pred: &[usize], truth: &[usize], mask: &[usize]) -> Result<f64, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if mask.is_empty() {
        return Err(MetricError::EmptyMask);
    }
    let correct = mask.iter().filter(|&&i| pred[i] == truth[i]).count();
    Ok(correct as f64 / mask.len() as f64)
}
