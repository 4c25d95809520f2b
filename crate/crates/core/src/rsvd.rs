//! Randomized SVD: Gaussian range finder with power iterations, then an exact
//! SVD of the small projected matrix.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::linalg::{qr_factorize, svd, Matrix, SvdFactors};
use crate::sketching::gaussian_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RsvdParams {
    /// Target rank `t`; the output has `2t` factors.
    pub rank: usize,
    /// Power iterations `q`.
    pub power_iterations: usize,
    pub seed: u64,
}

impl RsvdParams {
    pub fn new(rank: usize, power_iterations: usize, seed: u64) -> Self {
        Self {
            rank,
            power_iterations,
            seed,
        }
    }
}

/// `q = max(⌈ln(d/ε)⌉, ⌈ln(sk/ε)⌉)`, floored at zero.
pub fn default_power_iterations(d: usize, s: usize, k: usize, eps: f64) -> usize {
    let a = (d as f64 / eps).ln().ceil();
    let b = ((s * k) as f64 / eps).ln().ceil();
    a.max(b).max(0.0) as usize
}

/// Randomized SVD of `a` (`ℓ × d`) returning `2t` factors.
///
/// `Ω` is `ℓ × 2t`, the range estimate is `Y = (AᵀA)^q AᵀΩ`, computed as
/// subspace iteration with a QR after every application of `AᵀA`. If `Y` loses rank
/// the Householder `Q` still has `2t` orthonormal columns, so the output
/// shape never changes.
pub fn randomized_svd(a: &Matrix, p: &RsvdParams) -> Result<SvdFactors> {
    let m = a.rows().min(a.cols());
    if p.rank == 0 {
        return param_err("randomized svd needs rank >= 1");
    }
    let width = 2 * p.rank;
    if width > m {
        return param_err(format!(
            "2t = {width} exceeds min(rows, cols) = {m} for randomized svd"
        ));
    }
    let at = a.transpose();
    let omega = gaussian_matrix(a.rows(), width, p.seed);
    let mut q = qr_factorize(&at.matmul(&omega)?).0;
    // orthonormalize on the small d × 2t side after each AᵀA; A may be tall
    // and sparse, so the ℓ-side product is only multiplied, never factored
    for _ in 0..p.power_iterations {
        q = qr_factorize(&at.matmul(&a.matmul(&q)?)?).0;
    }
    let b = a.matmul(&q)?;
    let f = svd(&b)?;
    Ok(SvdFactors {
        u: f.u,
        sigma: f.sigma,
        v: q.matmul(&f.v)?,
    })
}
