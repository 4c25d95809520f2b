//! Seeded synthetic data: prescribed spectra, Gaussian mixtures,
//! low-rank-plus-noise and sparse matrices with decaying column scales.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::linalg::{qr_factorize, Matrix};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sketching::gaussian_matrix;

/// `rows × cols` matrix with orthonormal columns, Haar-ish via QR of a Gaussian.
pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> Matrix {
    assert!(cols <= rows, "need cols <= rows");
    qr_factorize(&gaussian_matrix(rows, cols, seed)).0
}

/// `σ_i = i^{-exponent}` for `i = 1..=m`.
pub fn power_spectrum(m: usize, exponent: f64) -> Vec<f64> {
    (1..=m).map(|i| (i as f64).powf(-exponent)).collect()
}

/// `U diag(σ) Vᵀ` with random orthonormal `U` (`n × m`), `V` (`d × m`).
pub fn with_spectrum(n: usize, d: usize, sigma: &[f64], seed: u64) -> Matrix {
    let m = sigma.len();
    assert!(m >= 1 && m <= n.min(d), "spectrum length must be in 1..=min(n, d)");
    let u = random_orthonormal(n, m, derive_seed(seed, 1));
    let v = random_orthonormal(d, m, derive_seed(seed, 2));
    u.scale_columns(sigma).matmul_t(&v).expect("shapes agree")
}

/// `n` points around `k` centers. Centers are `N(0, separation² I)`, points
/// add `N(0, spread² I)` noise. Labels are uniform.
pub fn gaussian_mixture(n: usize, d: usize, k: usize, separation: f64, spread: f64, seed: u64) -> (Matrix, Vec<usize>) {
    let centers = gaussian_matrix(k, d, derive_seed(seed, 1)).scale(separation);
    let mut rng = rng_from_seed(derive_seed(seed, 2));
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let c = rng.random_range(0..k);
        labels.push(c);
        for &x in centers.row(c) {
            let z: f64 = rng.sample(StandardNormal);
            data.push(x + spread * z);
        }
    }
    (Matrix::from_vec(n, d, data).expect("finite"), labels)
}

/// A rank-`rank` signal with spectrum `i^{-decay}` (scaled so the top value
/// is `sqrt(n)`) plus i.i.d. `N(0, noise²)` entries.
pub fn low_rank_plus_noise(n: usize, d: usize, rank: usize, decay: f64, noise: f64, seed: u64) -> Matrix {
    let top = (n as f64).sqrt();
    let sigma: Vec<f64> = power_spectrum(rank, decay).into_iter().map(|s| s * top).collect();
    let signal = with_spectrum(n, d, &sigma, derive_seed(seed, 1));
    let e = gaussian_matrix(n, d, derive_seed(seed, 2)).scale(noise);
    signal.add(&e).expect("same shape")
}

/// Sparse matrix with about `density · n · d` non-zeros. Every row gets
/// `max(1, round(density · d))` distinct columns with `N(0,1)` values scaled
/// by `(j+1)^{-1/2}` for column `j`, which gives a decaying spectrum.
pub fn sparse_decaying(n: usize, d: usize, density: f64, seed: u64) -> Matrix {
    let per_row = ((density * d as f64).round() as usize).clamp(1, d);
    let mut rng = rng_from_seed(seed);
    let mut data = vec![0.0; n * d];
    for i in 0..n {
        for j in sample(&mut rng, d, per_row) {
            let z: f64 = rng.sample(StandardNormal);
            data[i * d + j] = z / ((j + 1) as f64).sqrt();
        }
    }
    Matrix::from_vec(n, d, data).expect("finite")
}

/// `features · coef + N(0, noise²)`.
pub fn linear_targets(features: &Matrix, coef: &[f64], noise: f64, seed: u64) -> Vec<f64> {
    assert_eq!(features.cols(), coef.len());
    let mut rng = rng_from_seed(seed);
    features
        .row_iter()
        .map(|r| {
            let z: f64 = rng.sample(StandardNormal);
            r.iter().zip(coef).map(|(x, c)| x * c).sum::<f64>() + noise * z
        })
        .collect()
}
