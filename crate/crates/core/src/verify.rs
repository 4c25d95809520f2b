//! Self-checks of the approximation guarantees on synthetic data. Each check
//! reports pass/fail with the measured quantities; the CLI `verify`
//! subcommand runs [`run_suite`].

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clustering::kmeans_cost;
use crate::error::Result;
use crate::linalg::{dist_sq, svd, Matrix, Subspace};
use crate::protocol::{dispca, expected_words, partition_powerlaw, projected_dataset, verify_close_projection, DisPcaParams, SketchParams};
use crate::rng::{derive_seed, rng_from_seed};
use crate::rsvd::default_power_iterations;
use crate::sketching::{gaussian_matrix, sketch_rows_for};
use crate::synth::{power_spectrum, random_orthonormal, with_spectrum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// `(1−ε)·base − slack ≤ mid ≤ (1+ε)·base + slack`.
pub fn sandwich_holds(base: f64, mid: f64, eps: f64, slack: f64) -> bool {
    (1.0 - eps) * base - slack <= mid && mid <= (1.0 + eps) * base + slack
}

/// `|a² − b²| ≤ 3(a−b)²/ε + 2ε a²`.
pub fn weak_triangle_holds(a: f64, b: f64, eps: f64) -> bool {
    (a * a - b * b).abs() <= 3.0 * (a - b).powi(2) / eps + 2.0 * eps * a * a + 1e-12 * (a * a + b * b)
}

/// `k` centers: random rows of `p` plus Gaussian noise at the data's RMS
/// row scale.
pub fn random_centers(p: &Matrix, k: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let scale = (p.frobenius_sq() / (p.rows() * p.cols()) as f64).sqrt();
    let noise = gaussian_matrix(k, p.cols(), derive_seed(seed, 1)).scale(scale);
    let rows: Vec<usize> = (0..k).map(|_| rng.random_range(0..p.rows())).collect();
    p.select_rows(&rows).add(&noise).expect("same shape")
}

/// `t = k + ⌈c·k/ε⌉ − 1` style thresholds.
pub fn threshold(k: usize, c: f64, eps_pow: f64) -> usize {
    k + (c * k as f64 / eps_pow).ceil() as usize - 1
}

/// Fast-pipeline parameters: `t = max(⌈k/ε²⌉, ⌈ln(s/δ)⌉)`, `ℓ = ⌈d²/ε²⌉`,
/// `q = max(⌈ln(d/ε)⌉, ⌈ln(sk/ε)⌉)`.
pub fn fast_params(d: usize, s: usize, k: usize, eps: f64, delta: f64, seed: u64) -> DisPcaParams {
    let t = ((k as f64 / (eps * eps)).ceil() as usize)
        .max((s as f64 / delta).ln().ceil() as usize)
        .min(d);
    let sketch = SketchParams {
        ell: sketch_rows_for(d, eps),
        eps,
        delta: Some(delta),
    };
    DisPcaParams::fast(t, t, sketch, default_power_iterations(d, s, k, eps), seed)
}

fn ratio_check(seed: u64) -> Result<CheckOutcome> {
    let (r, eps, s) = (3, 0.5, 5);
    let p = with_spectrum(500, 40, &power_spectrum(40, 1.0), seed);
    let t1 = threshold(r, 4.0, eps);
    let data = partition_powerlaw(&p, s, 2.0, derive_seed(seed, 1))?;
    let res = dispca(&data, &DisPcaParams::exact(t1, r, seed))?;
    let best = Subspace::new(svd(&p)?.v.leading_columns(r))?;
    let ratio = dist_sq(&p, &res.subspace)? / dist_sq(&p, &best)?;
    let words_ok = res.transcript.total_words() == expected_words(s, 40, t1, r, false);
    Ok(CheckOutcome::new(
        "low-rank ratio",
        ratio <= 1.0 + eps && words_ok,
        format!("ratio {ratio:.6} (limit {}), words exact: {words_ok}", 1.0 + eps),
    ))
}

fn close_projection_check(seed: u64) -> Result<CheckOutcome> {
    let (k, eps) = (2, 0.5);
    let p = with_spectrum(500, 40, &power_spectrum(40, 1.0), seed);
    let t = threshold(k, 8.0, eps);
    let data = partition_powerlaw(&p, 5, 2.0, derive_seed(seed, 1))?;
    let res = dispca(&data, &DisPcaParams::exact(t, t, seed))?;
    let pt = projected_dataset(&data, &res.subspace)?.stacked();
    let p = data.stacked();
    let mut failures = 0;
    for j in 0..50 {
        let x = Subspace::new(random_orthonormal(40, k, derive_seed(seed, 100 + j)))?;
        if !verify_close_projection(&p, &pt, &x, eps)?.exact_pass {
            failures += 1;
        }
    }
    Ok(CheckOutcome::new("close projection", failures == 0, format!("{failures}/50 subspaces out of bounds")))
}

fn sandwich_check(seed: u64) -> Result<CheckOutcome> {
    let (k, eps) = (3, 0.3);
    let t = threshold(k, 4.0, eps * eps);
    let p = with_spectrum(1000, 160, &power_spectrum(160, 1.0), seed);
    let data = partition_powerlaw(&p, 5, 2.0, derive_seed(seed, 1))?;
    let res = dispca(&data, &DisPcaParams::exact(t, t, seed))?;
    let pt = projected_dataset(&data, &res.subspace)?.stacked();
    let p = data.stacked();
    let c0 = p.frobenius_sq() - pt.frobenius_sq();
    let mut failures = 0;
    for j in 0..50 {
        let x = random_centers(&p, k, derive_seed(seed, 200 + j));
        if !sandwich_holds(kmeans_cost(&p, &x)?, kmeans_cost(&pt, &x)? + c0, eps, 1e-6) {
            failures += 1;
        }
    }
    Ok(CheckOutcome::new(
        "k-means sandwich",
        failures == 0 && c0 >= -1e-10,
        format!("{failures}/50 center sets out of bounds, c0 = {c0:.3e}"),
    ))
}

fn fast_sandwich_check(seed: u64) -> Result<CheckOutcome> {
    let (n, d, s, k, eps) = (2000, 30, 8, 3, 0.4);
    let p = with_spectrum(n, d, &power_spectrum(d, 1.0), seed);
    let data = partition_powerlaw(&p, s, 2.0, derive_seed(seed, 1))?;
    let params = fast_params(d, s, k, eps, 0.1, seed);
    let res = dispca(&data, &params)?;
    let pt = projected_dataset(&data, &res.subspace)?.stacked();
    let p = data.stacked();
    let c0 = p.frobenius_sq() - pt.frobenius_sq();
    let mut failures = 0;
    for j in 0..50 {
        let x = random_centers(&p, k, derive_seed(seed, 300 + j));
        let px = Subspace::span_of_rows(&x)?;
        let slack = eps * p.matmul(px.basis())?.frobenius_sq();
        if !sandwich_holds(kmeans_cost(&p, &x)?, kmeans_cost(&pt, &x)? + c0, eps, slack) {
            failures += 1;
        }
    }
    let words_ok = res.transcript.total_words() == expected_words(s, d, params.t1, params.t2, false);
    Ok(CheckOutcome::new(
        "fast-pipeline relaxed sandwich",
        failures == 0 && words_ok,
        format!("{failures}/50 center sets out of bounds, words exact: {words_ok}"),
    ))
}

/// Runs every check with the given seed.
pub fn run_suite(seed: u64) -> Vec<CheckOutcome> {
    let checks: [(&str, fn(u64) -> Result<CheckOutcome>); 4] = [
        ("low-rank ratio", ratio_check),
        ("close projection", close_projection_check),
        ("k-means sandwich", sandwich_check),
        ("fast-pipeline relaxed sandwich", fast_sandwich_check),
    ];
    checks
        .iter()
        .map(|(name, f)| f(seed).unwrap_or_else(|e| CheckOutcome::new(name, false, format!("error: {e}"))))
        .collect()
}
