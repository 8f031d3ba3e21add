//! Split-ReLu message-passing network.
//!
//! Each layer computes `[X W_p]₊ − [X W_n]₊`: twice the parameters of a
//! fully-connected ReLu layer, recovering it at `W_n = 0`, and exactly linear
//! in `X` on the hyperplane `W_p = −W_n`. Initializing the layer weights to
//! `±I` and the output taps to `±W*` therefore puts the network on that
//! hyperplane, where its forward pass reproduces the linear model it was
//! initialized from; fine-tuning moves it off.

use super::ModelError;
use crate::linop::{evaluate, LinOp};
use nalgebra::DMatrix;

/// Per-layer split weights plus one output tap per depth.
#[derive(Debug, Clone)]
pub struct SplitReluNet {
    /// `W_p` for layers 1..=L, each d x d.
    pub w_p: Vec<DMatrix<f64>>,
    /// `W_n` for layers 1..=L, each d x d.
    pub w_n: Vec<DMatrix<f64>>,
    /// Output taps `W_op` for depths 0..=L, each d x y.
    pub w_op: Vec<DMatrix<f64>>,
    /// Output taps `W_on` for depths 0..=L, each d x y.
    pub w_on: Vec<DMatrix<f64>>,
}

impl SplitReluNet {
    pub fn layers(&self) -> usize {
        self.w_p.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.w_op[0].nrows()
    }

    pub fn classes(&self) -> usize {
        self.w_op[0].ncols()
    }
}

/// Splits a solved weight matrix into the network initialization:
/// message-passing weights `W_p = I`, `W_n = −I`, and output taps
/// `W_op = W*[dl..d(l+1)]`, `W_on = −W_op` for each depth `l`.
pub fn splitrelu_init(
    w_star: &DMatrix<f64>,
    d: usize,
    layers: usize,
) -> Result<SplitReluNet, ModelError> {
    if d == 0 || w_star.nrows() != d * (layers + 1) {
        return Err(ModelError::BlockMismatch {
            got: w_star.nrows(),
            d,
            layers,
        });
    }
    let eye = DMatrix::identity(d, d);
    let w_p = vec![eye.clone(); layers];
    let w_n = vec![-eye; layers];
    let mut w_op = Vec::with_capacity(layers + 1);
    let mut w_on = Vec::with_capacity(layers + 1);
    for l in 0..=layers {
        let block = w_star.rows(d * l, d).into_owned();
        w_on.push(-&block);
        w_op.push(block);
    }
    Ok(SplitReluNet { w_p, w_n, w_op, w_on })
}

fn relu(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

/// Forward pass: `H⁰ = X`, `H^{l+1} = [ÂH^l W_p]₊ − [ÂH^l W_n]₊`, output
/// `Σ_l [H^l W_op]₊ − [H^l W_on]₊`.
pub fn splitrelu_forward(
    net: &SplitReluNet,
    a_hat: &LinOp,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>, ModelError> {
    if x.ncols() != net.feature_dim() {
        return Err(ModelError::WidthMismatch {
            expected: net.feature_dim(),
            got: x.ncols(),
        });
    }
    let mut h = x.clone();
    let mut out = relu(&(&h * &net.w_op[0])) - relu(&(&h * &net.w_on[0]));
    for l in 0..net.layers() {
        let propagated = evaluate(a_hat, &h)?;
        h = relu(&(&propagated * &net.w_p[l])) - relu(&(&propagated * &net.w_n[l]));
        out += relu(&(&h * &net.w_op[l + 1])) - relu(&(&h * &net.w_on[l + 1]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_nc, sym_norm_adj};
    use crate::sparse::CsrMatrix;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn rand_dense(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn rand_graph(seed: u64, n: usize) -> CsrMatrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut triplets = vec![(0, 1, 1.0), (1, 0, 1.0)];
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < 0.4 {
                    triplets.push((i, j, 1.0));
                    triplets.push((j, i, 1.0));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &triplets).unwrap()
    }

    #[test]
    fn init_blocks_cancel_pairwise() {
        let w_star = rand_dense(1, 9, 2);
        let net = splitrelu_init(&w_star, 3, 2).unwrap();
        for l in 0..2 {
            assert_relative_eq!(&net.w_p[l] + &net.w_n[l], DMatrix::zeros(3, 3));
        }
        for l in 0..=2 {
            assert_relative_eq!(&net.w_op[l] + &net.w_on[l], DMatrix::zeros(3, 2));
        }
        assert_relative_eq!(net.w_op[1], w_star.rows(3, 3).into_owned());
    }

    #[test]
    fn zero_depth_has_single_tap() {
        let w_star = rand_dense(2, 4, 3);
        let net = splitrelu_init(&w_star, 4, 0).unwrap();
        assert_eq!(net.layers(), 0);
        assert_eq!(net.w_op.len(), 1);
        assert_relative_eq!(net.w_op[0], w_star);
    }

    #[test]
    fn row_count_mismatch_rejected() {
        let w_star = rand_dense(3, 10, 2);
        assert!(matches!(
            splitrelu_init(&w_star, 3, 2),
            Err(ModelError::BlockMismatch { .. })
        ));
    }

    #[test]
    fn initialized_forward_equals_linear_design_product() {
        for seed in 0..5u64 {
            let n = 7;
            let d = 3;
            let layers = 2;
            let a = rand_graph(10 + seed, n);
            let x = rand_dense(20 + seed, n, d);
            let w_star = rand_dense(30 + seed, d * (layers + 1), 2);
            let a_hat = sym_norm_adj(&a);

            let net = splitrelu_init(&w_star, d, layers).unwrap();
            let forward = splitrelu_forward(&net, &a_hat, &x).unwrap();

            let design = build_nc(&a_hat, &x, layers).unwrap();
            let linear = evaluate(&design, &w_star).unwrap();
            assert_relative_eq!(forward, linear, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_negative_weights_recover_fc_relu() {
        let n = 6;
        let d = 3;
        let a = rand_graph(40, n);
        let x = rand_dense(41, n, d);
        let a_hat = sym_norm_adj(&a);
        let w1 = rand_dense(42, d, d);
        let tap0 = rand_dense(43, d, 2);
        let tap1 = rand_dense(44, d, 2);
        let net = SplitReluNet {
            w_p: vec![w1.clone()],
            w_n: vec![DMatrix::zeros(d, d)],
            w_op: vec![tap0.clone(), tap1.clone()],
            w_on: vec![DMatrix::zeros(d, 2), DMatrix::zeros(d, 2)],
        };
        let got = splitrelu_forward(&net, &a_hat, &x).unwrap();

        // plain ReLu pipeline
        let ah = evaluate(&a_hat, &DMatrix::identity(n, n)).unwrap();
        let h1 = relu(&(&ah * &x * &w1));
        let expected = relu(&(&x * &tap0)) + relu(&(&h1 * &tap1));
        assert_relative_eq!(got, expected, epsilon = 1e-10);
    }

    #[test]
    fn perturbed_weights_match_entrywise_reference() {
        let n = 5;
        let d = 2;
        let layers = 1;
        let a = rand_graph(50, n);
        let x = rand_dense(51, n, d);
        let a_hat = sym_norm_adj(&a);
        let mut net = splitrelu_init(&rand_dense(52, d * 2, 2), d, layers).unwrap();
        // push the weights off the linear hyperplane
        net.w_p[0] += rand_dense(53, d, d) * 0.3;
        net.w_on[1] += rand_dense(54, d, 2) * 0.3;

        let got = splitrelu_forward(&net, &a_hat, &x).unwrap();

        // naive per-entry oracle with scalar loops
        let ah = evaluate(&a_hat, &DMatrix::identity(n, n)).unwrap();
        let matmul = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(a.nrows(), b.ncols());
            for i in 0..a.nrows() {
                for j in 0..b.ncols() {
                    let mut acc = 0.0;
                    for t in 0..a.ncols() {
                        acc += a[(i, t)] * b[(t, j)];
                    }
                    out[(i, j)] = acc;
                }
            }
            out
        };
        let relu_scalar = |m: &DMatrix<f64>| m.map(|v| if v > 0.0 { v } else { 0.0 });
        let mut h = x.clone();
        let mut expected = &relu_scalar(&matmul(&h, &net.w_op[0]))
            - &relu_scalar(&matmul(&h, &net.w_on[0]));
        for l in 0..layers {
            let p = matmul(&ah, &h);
            h = &relu_scalar(&matmul(&p, &net.w_p[l])) - &relu_scalar(&matmul(&p, &net.w_n[l]));
            expected += &relu_scalar(&matmul(&h, &net.w_op[l + 1]))
                - &relu_scalar(&matmul(&h, &net.w_on[l + 1]));
        }
        assert_relative_eq!(got, expected, epsilon = 1e-10);
    }
}
