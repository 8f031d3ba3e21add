//! Spectral edge kernel: reweights the singular values as the expectation of
//! `s^x` under a truncated normal over exponents.
//!
//! The integral over the exponent window `Ω = [0.5, 2]` is discretized on a
//! fixed 301-point grid and the truncated-normal density becomes a softmax of
//! `−(x−μ)² e^{s̄}`, where the concentration is parametrized through
//! `s̄ = log(1/(2s²))`. Two scalars are all that is trained, by plain gradient
//! descent on a weighted cross-entropy over edge and non-edge scores. At
//! `μ = 1` with `s̄` large, the mass collapses onto the grid point `x = 1`,
//! so the kernel is a no-op and scores equal the plain spectral scores.

use super::{ModelError, NeModel};
use serde::{Deserialize, Serialize};

/// Grid lower edge of the exponent window.
pub const OMEGA_LO: f64 = 0.5;
/// Grid upper edge of the exponent window.
pub const OMEGA_HI: f64 = 2.0;
/// Number of grid points, spacing 0.005.
pub const OMEGA_POINTS: usize = 301;

/// Concentration used at initialization: effectively a delta at `x = μ`
/// while keeping usable gradients (`s ≈ 0.058`).
pub const INIT_S_BAR: f64 = 5.0;

/// The fixed exponent grid, endpoints exactly [`OMEGA_LO`] and [`OMEGA_HI`].
pub fn omega_grid() -> Vec<f64> {
    let grid: Vec<f64> = (0..OMEGA_POINTS)
        .map(|i| OMEGA_LO + i as f64 / 200.0)
        .collect();
    debug_assert_eq!(*grid.last().unwrap(), OMEGA_HI);
    grid
}

/// The two trained scalars plus the fixed discretization grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelParams {
    pub mu: f64,
    pub s_bar: f64,
    #[serde(skip, default = "omega_grid")]
    pub grid: Vec<f64>,
}

impl KernelParams {
    pub fn new(mu: f64, s_bar: f64) -> Self {
        Self {
            mu,
            s_bar,
            grid: omega_grid(),
        }
    }

    /// Initialization at the no-op point.
    pub fn noop() -> Self {
        Self::new(1.0, INIT_S_BAR)
    }

    /// Softmax weights over the grid for the current parameters.
    fn weights(&self) -> Vec<f64> {
        let conc = self.s_bar.exp();
        let logits: Vec<f64> = self
            .grid
            .iter()
            .map(|&x| -(x - self.mu) * (x - self.mu) * conc)
            .collect();
        softmax(&logits)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&a| (a - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `s_t^x` for every grid exponent, with `0^x = 0`.
fn power_table(s: &[f64], grid: &[f64]) -> Vec<Vec<f64>> {
    s.iter()
        .map(|&sv| {
            grid.iter()
                .map(|&x| if sv > 0.0 { (x * sv.ln()).exp() } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Reweighted spectrum `κ_t = Σ_x softmax_x(−(x−μ)² e^{s̄}) · s_t^x`, the
/// discretized `E_x[s^x]`.
pub fn kernel_spectrum(s: &[f64], params: &KernelParams) -> Vec<f64> {
    let w = params.weights();
    power_table(s, &params.grid)
        .iter()
        .map(|row| row.iter().zip(&w).map(|(&p, &wx)| p * wx).sum())
        .collect()
}

fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted cross-entropy over edge scores and its analytic gradient in
/// `(μ, s̄)`:
/// `L = −mean_pos log σ(f) − k_n · mean_neg log(1−σ(f))` with
/// `f(i,j) = U_iᵀ diag(κ) V_j` and `κ` the kernelized spectrum.
pub fn kernel_loss_and_grad(
    ne: &NeModel,
    params: &KernelParams,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    k_n: f64,
) -> (f64, f64, f64) {
    let s = &ne.svd.s;
    let grid = &params.grid;
    let conc = params.s_bar.exp();
    let w = params.weights();
    let table = power_table(s, grid);

    // softmax logit derivatives: da/dμ = 2(x−μ)e^{s̄}, da/ds̄ = a
    let da_mu: Vec<f64> = grid.iter().map(|&x| 2.0 * (x - params.mu) * conc).collect();
    let da_sb: Vec<f64> = grid
        .iter()
        .map(|&x| -(x - params.mu) * (x - params.mu) * conc)
        .collect();
    let mean_mu: f64 = w.iter().zip(&da_mu).map(|(&wx, &d)| wx * d).sum();
    let mean_sb: f64 = w.iter().zip(&da_sb).map(|(&wx, &d)| wx * d).sum();

    let k = s.len();
    let mut kappa = vec![0.0; k];
    let mut dk_mu = vec![0.0; k];
    let mut dk_sb = vec![0.0; k];
    for t in 0..k {
        for (g, &wx) in w.iter().enumerate() {
            let p = table[t][g];
            kappa[t] += wx * p;
            dk_mu[t] += wx * (da_mu[g] - mean_mu) * p;
            dk_sb[t] += wx * (da_sb[g] - mean_sb) * p;
        }
    }

    let mut loss = 0.0;
    let mut g_mu = 0.0;
    let mut g_sb = 0.0;
    let mut accumulate = |pairs: &[(usize, usize)], positive: bool, weight: f64| {
        for &(i, j) in pairs {
            let u = ne.svd.u.row(i);
            let v = ne.svd.v.row(j);
            let mut f = 0.0;
            let mut df_mu = 0.0;
            let mut df_sb = 0.0;
            for t in 0..k {
                let p = u[t] * v[t];
                f += p * kappa[t];
                df_mu += p * dk_mu[t];
                df_sb += p * dk_sb[t];
            }
            let (l, dl_df) = if positive {
                (softplus(-f), sigmoid(f) - 1.0)
            } else {
                (softplus(f), sigmoid(f))
            };
            loss += weight * l;
            g_mu += weight * dl_df * df_mu;
            g_sb += weight * dl_df * df_sb;
        }
    };
    if !pos.is_empty() {
        accumulate(pos, true, 1.0 / pos.len() as f64);
    }
    if !neg.is_empty() {
        accumulate(neg, false, k_n / neg.len() as f64);
    }
    (loss, g_mu, g_sb)
}

/// Fits `(μ, s̄)` by full-batch gradient descent from the no-op
/// initialization. Returns the final parameters and the loss trace, whose
/// first entry is the loss at initialization. Positive and negative pair
/// lists are fixed for the whole run; `k_n` weighs the negative term.
pub fn finetune_kernel(
    ne: &NeModel,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    k_n: f64,
    steps: usize,
    lr: f64,
) -> Result<(KernelParams, Vec<f64>), ModelError> {
    if neg.is_empty() {
        return Err(ModelError::NoNegatives);
    }
    let mut params = KernelParams::noop();
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (loss, g_mu, g_sb) = kernel_loss_and_grad(ne, &params, pos, neg, k_n);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                step,
                mu: params.mu,
                s_bar: params.s_bar,
            });
        }
        trace.push(loss);
        if step == steps {
            break;
        }
        params.mu -= lr * g_mu;
        params.s_bar -= lr * g_sb;
    }
    Ok((params, trace))
}
