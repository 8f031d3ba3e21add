//! Operator evaluation: recursive right-multiplication with optional lazy
//! caching of intermediate products.
//!
//! Products are applied right-to-left, so `A*B*C` on `G` computes
//! `A*(B*(C*G))` and never forms an operator-operator product. With a cache,
//! every intermediate is stored under the ordered list of node serials that
//! have been applied to the right-hand matrix so far. Chains that share a
//! suffix (say `T*G` inside both `T^2` and `T^3`) are then computed once per
//! batch. A cache is only valid for a single right-hand matrix; it records a
//! fingerprint of the first matrix it sees and rejects any other.

use super::{Kind, LinOp, LinOpError};
use nalgebra::DMatrix;
use std::collections::HashMap;

/// One applied operation inside a cache key. Transposed leaves are identified
/// by the leaf's own serial plus a flag, so every transpose of one leaf shares
/// cache entries no matter how many wrapper nodes exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum KeyTok {
    Node(u64),
    LeafT(u64),
    /// Row block `index` of the right-hand matrix, split off by a concat node.
    Block(u64, u32),
    /// Scatter of the right-hand matrix performed by a column gather.
    Scatter(u64),
}

type Key = Vec<KeyTok>;

/// Memo of intermediate products for one right-hand matrix.
#[derive(Debug, Default)]
pub struct EvalCache {
    entries: HashMap<Key, DMatrix<f64>>,
    fingerprint: Option<u64>,
    hits: u64,
    misses: u64,
}

impl EvalCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops all entries and the fingerprint so the cache can serve a new
    /// right-hand matrix. Hit/miss counters are cumulative across batches.
    pub fn clear(&mut self) {
        self.entries.clear();
        self.fingerprint = None;
    }
}

/// Evaluation counters. Leaf multiplications only count work actually done:
/// a cache hit that skips a leaf product does not increment.
#[derive(Debug, Default, Clone)]
pub struct EvalStats {
    pub leaf_mults: u64,
}

fn fingerprint(g: &DMatrix<f64>) -> u64 {
    // FNV-1a over the dimensions and raw bit patterns
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut mix = |word: u64| {
        h ^= word;
        h = h.wrapping_mul(PRIME);
    };
    mix(g.nrows() as u64);
    mix(g.ncols() as u64);
    for v in g.iter() {
        mix(v.to_bits());
    }
    h
}

struct Ctx<'a> {
    cache: Option<&'a mut EvalCache>,
    stats: &'a mut EvalStats,
}

/// Computes `op * g` without caching.
pub fn evaluate(op: &LinOp, g: &DMatrix<f64>) -> Result<DMatrix<f64>, LinOpError> {
    let mut stats = EvalStats::default();
    evaluate_with(op, g, None, &mut stats)
}

/// Computes `op * g`, optionally reusing and populating `cache`. The cache
/// must be empty or previously used with a bit-identical `g`.
pub fn evaluate_with(
    op: &LinOp,
    g: &DMatrix<f64>,
    cache: Option<&mut EvalCache>,
    stats: &mut EvalStats,
) -> Result<DMatrix<f64>, LinOpError> {
    if op.cols() != g.nrows() {
        return Err(LinOpError::OperandRows {
            expected: op.cols(),
            got: g.nrows(),
        });
    }
    if let Some(cache) = &cache {
        let fp = fingerprint(g);
        match cache.fingerprint {
            Some(stored) if stored != fp => return Err(LinOpError::CacheFingerprintMismatch),
            _ => {}
        }
    }
    let mut ctx = Ctx { cache, stats };
    if let Some(c) = ctx.cache.as_deref_mut() {
        if c.fingerprint.is_none() {
            c.fingerprint = Some(fingerprint(g));
        }
    }
    apply(op, g, &[], &mut ctx)
}

/// Key prefix contributed by applying `op`. Products and powers flatten into
/// the prefixes of their factors in application order (rightmost factor is
/// applied first and therefore sits at the tail of the key).
fn prefix(op: &LinOp) -> Key {
    match op.kind() {
        Kind::LeafDense(_) | Kind::LeafSparse(_) => vec![KeyTok::Node(op.id())],
        Kind::Transpose => vec![KeyTok::LeafT(op.children()[0].id())],
        Kind::Product => {
            let mut key = Key::new();
            for child in op.children() {
                key.extend(prefix(child));
            }
            key
        }
        Kind::Power(q) => {
            let inner = prefix(&op.children()[0]);
            let mut key = Key::with_capacity(inner.len() * *q as usize);
            for _ in 0..*q {
                key.extend(inner.iter().copied());
            }
            key
        }
        _ => vec![KeyTok::Node(op.id())],
    }
}

fn prefixed(op: &LinOp, input_key: &[KeyTok]) -> Key {
    let mut key = prefix(op);
    key.extend_from_slice(input_key);
    key
}

fn apply(
    op: &LinOp,
    g: &DMatrix<f64>,
    g_key: &[KeyTok],
    ctx: &mut Ctx<'_>,
) -> Result<DMatrix<f64>, LinOpError> {
    // chains cache per application step inside `compute`; a wrapper entry
    // would duplicate the final step's key
    let chains = matches!(op.kind(), Kind::Product | Kind::Power(_));
    let out_key = if ctx.cache.is_some() && !chains {
        let key = prefixed(op, g_key);
        if let Some(cache) = ctx.cache.as_deref_mut() {
            if let Some(hit) = cache.entries.get(&key) {
                cache.hits += 1;
                return Ok(hit.clone());
            }
            cache.misses += 1;
        }
        Some(key)
    } else {
        None
    };

    let out = compute(op, g, g_key, ctx)?;

    if let (Some(key), Some(cache)) = (out_key, ctx.cache.as_deref_mut()) {
        cache.entries.insert(key, out.clone());
    }
    Ok(out)
}

fn compute(
    op: &LinOp,
    g: &DMatrix<f64>,
    g_key: &[KeyTok],
    ctx: &mut Ctx<'_>,
) -> Result<DMatrix<f64>, LinOpError> {
    match op.kind() {
        Kind::LeafDense(m) => {
            ctx.stats.leaf_mults += 1;
            Ok(m * g)
        }
        Kind::LeafSparse(m) => {
            ctx.stats.leaf_mults += 1;
            Ok(m.mul_dense(g))
        }
        Kind::Transpose => {
            ctx.stats.leaf_mults += 1;
            match op.children()[0].kind() {
                Kind::LeafDense(m) => Ok(m.tr_mul(g)),
                Kind::LeafSparse(m) => Ok(m.tr_mul_dense(g)),
                _ => unreachable!("transpose nodes only wrap leaves"),
            }
        }
        Kind::Sum => {
            let kids = op.children();
            let mut acc = apply(&kids[0], g, g_key, ctx)?;
            for child in &kids[1..] {
                acc += apply(child, g, g_key, ctx)?;
            }
            Ok(acc)
        }
        Kind::Product => {
            let mut acc: Option<DMatrix<f64>> = None;
            let mut acc_key = g_key.to_vec();
            for child in op.children().iter().rev() {
                let input = acc.as_ref().unwrap_or(g);
                let out = apply(child, input, &acc_key, ctx)?;
                acc_key = prefixed(child, &acc_key);
                acc = Some(out);
            }
            Ok(acc.expect("product has at least one child"))
        }
        Kind::Power(q) => {
            let child = &op.children()[0];
            let mut acc: Option<DMatrix<f64>> = None;
            let mut acc_key = g_key.to_vec();
            for _ in 0..*q {
                let input = acc.as_ref().unwrap_or(g);
                let out = apply(child, input, &acc_key, ctx)?;
                acc_key = prefixed(child, &acc_key);
                acc = Some(out);
            }
            Ok(acc.expect("power exponent is at least one"))
        }
        Kind::ScalarTimes(s) => Ok(apply(&op.children()[0], g, g_key, ctx)? * *s),
        Kind::ConcatRows => {
            let mut out = DMatrix::zeros(op.rows(), g.ncols());
            let mut offset = 0;
            for child in op.children() {
                let block = apply(child, g, g_key, ctx)?;
                out.rows_mut(offset, child.rows()).copy_from(&block);
                offset += child.rows();
            }
            Ok(out)
        }
        Kind::ConcatCols => {
            let mut acc: Option<DMatrix<f64>> = None;
            let mut offset = 0;
            for (q, child) in op.children().iter().enumerate() {
                let block = g.rows(offset, child.cols()).into_owned();
                offset += child.cols();
                let mut block_key = vec![KeyTok::Block(op.id(), q as u32)];
                block_key.extend_from_slice(g_key);
                let term = apply(child, &block, &block_key, ctx)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => a + term,
                });
            }
            Ok(acc.expect("concat has at least one child"))
        }
        Kind::GatherRows(indices) => {
            let full = apply(&op.children()[0], g, g_key, ctx)?;
            let mut out = DMatrix::zeros(indices.len(), g.ncols());
            for (r, &i) in indices.iter().enumerate() {
                out.row_mut(r).copy_from(&full.row(i));
            }
            Ok(out)
        }
        Kind::GatherCols(indices) => {
            let child = &op.children()[0];
            let mut scattered = DMatrix::zeros(child.cols(), g.ncols());
            for (r, &i) in indices.iter().enumerate() {
                let mut row = scattered.row_mut(i);
                row += g.row(r);
            }
            let mut key = vec![KeyTok::Scatter(op.id())];
            key.extend_from_slice(g_key);
            apply(child, &scattered, &key, ctx)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_dense(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Independent oracle: materializes the expression with plain dense
    /// algebra, never touching the matrix-free evaluation path.
    fn materialize(op: &LinOp) -> DMatrix<f64> {
        match op.kind() {
            Kind::LeafDense(m) => m.clone(),
            Kind::LeafSparse(m) => m.to_dense(),
            Kind::Transpose => materialize(&op.children()[0]).transpose(),
            Kind::Sum => {
                let mut acc = materialize(&op.children()[0]);
                for c in &op.children()[1..] {
                    acc += materialize(c);
                }
                acc
            }
            Kind::Product => {
                let mut acc = materialize(&op.children()[0]);
                for c in &op.children()[1..] {
                    acc *= materialize(c);
                }
                acc
            }
            Kind::ScalarTimes(s) => materialize(&op.children()[0]) * *s,
            Kind::Power(q) => {
                let base = materialize(&op.children()[0]);
                let mut acc = base.clone();
                for _ in 1..*q {
                    acc = &acc * &base;
                }
                acc
            }
            Kind::ConcatRows => {
                let blocks: Vec<_> = op.children().iter().map(materialize).collect();
                let cols = blocks[0].ncols();
                let rows = blocks.iter().map(|b| b.nrows()).sum();
                let mut out = DMatrix::zeros(rows, cols);
                let mut off = 0;
                for b in blocks {
                    out.rows_mut(off, b.nrows()).copy_from(&b);
                    off += b.nrows();
                }
                out
            }
            Kind::ConcatCols => {
                let blocks: Vec<_> = op.children().iter().map(materialize).collect();
                let rows = blocks[0].nrows();
                let cols = blocks.iter().map(|b| b.ncols()).sum();
                let mut out = DMatrix::zeros(rows, cols);
                let mut off = 0;
                for b in blocks {
                    out.columns_mut(off, b.ncols()).copy_from(&b);
                    off += b.ncols();
                }
                out
            }
            Kind::GatherRows(idx) => {
                let full = materialize(&op.children()[0]);
                let mut out = DMatrix::zeros(idx.len(), full.ncols());
                for (r, &i) in idx.iter().enumerate() {
                    out.row_mut(r).copy_from(&full.row(i));
                }
                out
            }
            Kind::GatherCols(idx) => {
                let full = materialize(&op.children()[0]);
                let mut out = DMatrix::zeros(full.nrows(), idx.len());
                for (c, &i) in idx.iter().enumerate() {
                    out.column_mut(c).copy_from(&full.column(i));
                }
                out
            }
        }
    }

    #[test]
    fn identity_leaf_returns_input() {
        let eye = LinOp::leaf_dense(DMatrix::identity(3, 3)).unwrap();
        let g = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(evaluate(&eye, &g).unwrap(), g);
    }

    #[test]
    fn dense_leaf_materializes_through_identity() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let m = rand_dense(&mut rng, 6, 6);
        let leaf = LinOp::leaf_dense(m.clone()).unwrap();
        let out = evaluate(&leaf, &DMatrix::identity(6, 6)).unwrap();
        assert_relative_eq!(out, m, epsilon = 1e-12);
    }

    #[test]
    fn sum_of_op_and_negation_is_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let a = LinOp::leaf_dense(rand_dense(&mut rng, 4, 4)).unwrap();
        let g = rand_dense(&mut rng, 4, 3);
        let zero = LinOp::sum(vec![a.clone(), a.scale(-1.0)]).unwrap();
        let out = evaluate(&zero, &g).unwrap();
        assert_relative_eq!(out, DMatrix::zeros(4, 3), epsilon = 1e-12);
    }

    #[test]
    fn rank_one_ones_product_broadcasts_column_sums() {
        let n = 5;
        let col = LinOp::leaf_dense(DMatrix::from_element(n, 1, 1.0)).unwrap();
        let row = LinOp::leaf_dense(DMatrix::from_element(1, n, 1.0)).unwrap();
        let ones = col * row;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let g = rand_dense(&mut rng, n, 2);
        let out = evaluate(&ones, &g).unwrap();
        for j in 0..2 {
            let colsum: f64 = g.column(j).iter().sum();
            for i in 0..n {
                assert_relative_eq!(out[(i, j)], colsum, epsilon = 1e-12);
            }
        }
        // and it matches the explicit all-ones matrix
        let explicit = DMatrix::from_element(n, n, 1.0) * &g;
        assert_relative_eq!(out, explicit, epsilon = 1e-12);
    }

    #[test]
    fn stochastic_power_matches_dense_cube() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let mut t = rand_dense(&mut rng, 5, 5).map(|v| v.abs());
        for mut row in t.row_iter_mut() {
            let s: f64 = row.iter().sum();
            row /= s;
        }
        let leaf = LinOp::leaf_sparse(CsrMatrix::from_dense(&t)).unwrap();
        let cubed = leaf.pow(3).unwrap();
        let g = rand_dense(&mut rng, 5, 4);
        let dense_cube = &t * &t * &t;
        assert_relative_eq!(
            evaluate(&cubed, &g).unwrap(),
            dense_cube * &g,
            epsilon = 1e-10
        );
    }

    #[test]
    fn mixed_dag_matches_materialization_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let a = LinOp::leaf_dense(rand_dense(&mut rng, 5, 5)).unwrap();
        let b = LinOp::leaf_sparse(CsrMatrix::from_dense(&rand_dense(&mut rng, 5, 5))).unwrap();
        let c = LinOp::leaf_dense(rand_dense(&mut rng, 5, 3)).unwrap();
        // depth-4 expression mixing kinds
        let expr = LinOp::concat_cols(vec![
            (&(&a + &b) * &c).scale(0.5),
            (&a.pow(2).unwrap().t().t() * &c).gather_rows(&[0, 1, 2, 3, 4]).unwrap(),
        ])
        .unwrap();
        let g = rand_dense(&mut rng, 6, 2);
        let out = evaluate(&expr, &g).unwrap();
        assert_relative_eq!(out, materialize(&expr) * &g, epsilon = 1e-10);
    }

    #[test]
    fn gather_rows_and_cols_match_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let a = LinOp::leaf_dense(rand_dense(&mut rng, 6, 5)).unwrap();
        let gr = a.gather_rows(&[4, 0, 0, 2]).unwrap();
        let gc = a.gather_cols(&[1, 1, 3]).unwrap();
        let g5 = rand_dense(&mut rng, 5, 3);
        let g3 = rand_dense(&mut rng, 3, 2);
        assert_relative_eq!(
            evaluate(&gr, &g5).unwrap(),
            materialize(&gr) * &g5,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            evaluate(&gc, &g3).unwrap(),
            materialize(&gc) * &g3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn transpose_evaluates_like_materialized_transpose() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let a = LinOp::leaf_dense(rand_dense(&mut rng, 4, 6)).unwrap();
        let b = LinOp::leaf_sparse(CsrMatrix::from_dense(&rand_dense(&mut rng, 6, 3))).unwrap();
        let expr = &a * &b;
        let tr = expr.t();
        let h = rand_dense(&mut rng, 4, 2);
        assert_relative_eq!(
            evaluate(&tr, &h).unwrap(),
            materialize(&expr).transpose() * &h,
            epsilon = 1e-12
        );
    }

    #[test]
    fn operand_rows_checked() {
        let a = LinOp::leaf_dense(DMatrix::identity(3, 3)).unwrap();
        let g = DMatrix::zeros(4, 2);
        assert!(matches!(
            evaluate(&a, &g),
            Err(LinOpError::OperandRows { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn cached_equals_uncached_bitwise_and_counts_drop() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let t_dense = rand_dense(&mut rng, 6, 6);
        let t = LinOp::leaf_sparse(CsrMatrix::from_dense(&t_dense)).unwrap();
        let c = 4u32;
        let kids: Vec<LinOp> = (1..=c)
            .map(|q| t.pow(q).unwrap().scale(1.0 / q as f64))
            .collect();
        let expr = LinOp::sum(kids).unwrap();
        let g = rand_dense(&mut rng, 6, 2);

        let mut plain_stats = EvalStats::default();
        let plain = evaluate_with(&expr, &g, None, &mut plain_stats).unwrap();

        let mut cache = EvalCache::new();
        let mut cached_stats = EvalStats::default();
        let cached = evaluate_with(&expr, &g, Some(&mut cache), &mut cached_stats).unwrap();

        // bit-identical, not merely close
        assert_eq!(plain.as_slice(), cached.as_slice());
        assert_eq!(plain_stats.leaf_mults, (c * (c + 1) / 2) as u64);
        assert_eq!(cached_stats.leaf_mults, c as u64);
        assert!(cache.hits() > 0);
    }

    #[test]
    fn cache_rejects_new_right_hand_matrix() {
        let a = LinOp::leaf_dense(DMatrix::identity(3, 3)).unwrap();
        let g1 = DMatrix::from_element(3, 1, 1.0);
        let g2 = DMatrix::from_element(3, 1, 2.0);
        let mut cache = EvalCache::new();
        let mut stats = EvalStats::default();
        evaluate_with(&a, &g1, Some(&mut cache), &mut stats).unwrap();
        assert!(matches!(
            evaluate_with(&a, &g2, Some(&mut cache), &mut stats),
            Err(LinOpError::CacheFingerprintMismatch)
        ));
        cache.clear();
        assert!(evaluate_with(&a, &g2, Some(&mut cache), &mut stats).is_ok());
    }

    #[test]
    fn cache_hit_miss_counters_cover_all_requests() {
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let t = LinOp::leaf_dense(rand_dense(&mut rng, 4, 4)).unwrap();
        let expr = LinOp::sum(vec![t.pow(1).unwrap(), t.pow(2).unwrap(), t.pow(3).unwrap()])
            .unwrap();
        let g = rand_dense(&mut rng, 4, 2);
        let mut cache = EvalCache::new();
        let mut stats = EvalStats::default();
        evaluate_with(&expr, &g, Some(&mut cache), &mut stats).unwrap();
        // every product request performs exactly one lookup, and every miss
        // inserts exactly one entry
        assert_eq!(cache.misses() as usize, cache.len());
        assert!(cache.hits() > 0);
        assert_eq!(stats.leaf_mults, 3);
    }

    #[test]
    fn shared_subexpression_reuses_across_branches() {
        // [X | A@X | A@(A@X)] built with shared nested children: evaluating the
        // transpose walks A^T chains that the cache collapses
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        let a = LinOp::leaf_sparse(CsrMatrix::from_dense(&rand_dense(&mut rng, 5, 5))).unwrap();
        let x = LinOp::leaf_dense(rand_dense(&mut rng, 5, 3)).unwrap();
        let b1 = &a * &x;
        let b2 = &a * &b1;
        let design = LinOp::concat_cols(vec![x.clone(), b1, b2]).unwrap();
        let design_t = design.t();
        let h = rand_dense(&mut rng, 5, 2);

        let mut cache = EvalCache::new();
        let mut stats = EvalStats::default();
        let cached = evaluate_with(&design_t, &h, Some(&mut cache), &mut stats).unwrap();
        let plain = evaluate(&design_t, &h).unwrap();
        assert_eq!(cached.as_slice(), plain.as_slice());
        // a^T applied twice for the q=2 block reuses the q=1 product: 2 sparse
        // transposes + 3 x^T multiplies instead of 3 + 3
        assert_eq!(stats.leaf_mults, 5);
    }
}
