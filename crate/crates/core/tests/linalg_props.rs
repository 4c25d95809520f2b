use nalgebra::DMatrix;
use proptest::prelude::*;

use dispca::linalg::{center, dist_sq, project, qr_factorize, spectral_norm, svd, truncate, Matrix, Subspace};
use dispca::sketching::gaussian_matrix;
use dispca::synth::{random_orthonormal, with_spectrum};
use dispca::verify::weak_triangle_holds;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn shape_and_seed() -> impl Strategy<Value = (usize, usize, u64)> {
    (1usize..14, 1usize..10, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_contract((n, d, seed) in shape_and_seed()) {
        let a = gaussian_matrix(n, d, seed);
        let f = svd(&a).unwrap();
        let m = n.min(d);
        prop_assert_eq!(f.sigma.len(), m);
        prop_assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]) && f.sigma.iter().all(|&s| s >= 0.0));
        prop_assert!(f.u.orthonormality_error() <= 1e-10 * m as f64);
        prop_assert!(f.v.orthonormality_error() <= 1e-10 * m as f64);
        let err = f.reconstruct().sub(&a).unwrap().frobenius_sq().sqrt();
        prop_assert!(err <= 1e-8 * a.frobenius_sq().sqrt());
        // sign convention: largest-magnitude entry of each v column is non-negative
        for j in 0..m {
            let col = f.v.column(j);
            let big = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            prop_assert!(big >= 0.0);
        }
    }

    #[test]
    fn eckart_young(seed in any::<u64>(), t in 1usize..=6) {
        let a = gaussian_matrix(12, 6, seed);
        let f = svd(&a).unwrap();
        let tail: f64 = f.sigma[t..].iter().map(|s| s * s).sum();
        let err = truncate(&f, t).unwrap().reconstruct().sub(&a).unwrap().frobenius_sq();
        prop_assert!((err - tail).abs() <= 1e-8 * a.frobenius_sq());
    }

    #[test]
    fn pythagorean(seed in any::<u64>(), t in 1usize..=5) {
        let a = gaussian_matrix(9, 5, seed);
        let b = Subspace::new(random_orthonormal(5, t, seed ^ 1)).unwrap();
        let inside = project(&a, &b).unwrap().frobenius_sq();
        let total = a.frobenius_sq();
        prop_assert!(rel_close(total, inside + dist_sq(&a, &b).unwrap(), 1e-8));
        let ab = a.matmul(b.basis()).unwrap().frobenius_sq();
        prop_assert!((dist_sq(&a, &b).unwrap() - (total - ab)).abs() <= 1e-8 * total);
    }

    #[test]
    fn projection_idempotent(seed in any::<u64>(), t in 1usize..=4) {
        let a = gaussian_matrix(6, 4, seed);
        let b = Subspace::new(random_orthonormal(4, t, seed ^ 2)).unwrap();
        let once = project(&a, &b).unwrap();
        let twice = project(&once, &b).unwrap();
        prop_assert!(once.sub(&twice).unwrap().max_abs() <= 1e-10);
    }

    // truncating A to its top t right singular vectors barely moves any
    // r-dimensional projection
    #[test]
    fn truncation_bound_orthonormal(seed in any::<u64>()) {
        let (r, eps) = (2usize, 0.5);
        let a = gaussian_matrix(10, 8, seed);
        let t = (r + (4.0 * r as f64 / eps).ceil() as usize - 1).min(7);
        let f = svd(&a).unwrap();
        let vt = Subspace::new(f.v.leading_columns(t)).unwrap();
        let ahat = project(&a, &vt).unwrap();
        let x = Subspace::new(random_orthonormal(8, r, seed ^ 3)).unwrap();
        let gap = a.matmul(x.basis()).unwrap().frobenius_sq() - ahat.matmul(x.basis()).unwrap().frobenius_sq();
        let bound = eps * dist_sq(&a, &x).unwrap();
        prop_assert!(gap >= -1e-10 && gap <= bound + 1e-10, "gap {gap} bound {bound}");
    }

    #[test]
    fn truncation_bound_general_x(seed in any::<u64>(), r in 1usize..=3, eps in 0.1f64..=1.0, scale in 0.05f64..=1.0) {
        let (n, d) = (14, 9);
        let a = gaussian_matrix(n, d, seed);
        let f = svd(&a).unwrap();
        let t = r + (r as f64 / eps).ceil() as usize - 1;
        prop_assume!(t < d);
        let vt = Subspace::new(f.v.leading_columns(t)).unwrap();
        let ahat = project(&a, &vt).unwrap();
        let raw = gaussian_matrix(d, 4, seed ^ 4);
        let x = raw.scale((r as f64 * scale / raw.frobenius_sq()).sqrt());
        let diff = a.sub(&ahat).unwrap().matmul(&x).unwrap().frobenius_sq();
        let gap = a.matmul(&x).unwrap().frobenius_sq() - ahat.matmul(&x).unwrap().frobenius_sq();
        let tail: f64 = f.sigma[r..].iter().map(|s| s * s).sum();
        prop_assert!((diff - gap).abs() <= 1e-8 * a.frobenius_sq());
        prop_assert!(gap <= eps * tail + 1e-10);
    }

    #[test]
    fn weak_triangle(a in -100.0f64..100.0, b in -100.0f64..100.0, eps in 0.001f64..0.999) {
        prop_assert!(weak_triangle_holds(a, b, eps));
    }

    #[test]
    fn centering_zeroes_means((n, d, seed) in shape_and_seed()) {
        let a = gaussian_matrix(n, d, seed).scale(50.0);
        let c = center(&a);
        for j in 0..d {
            let col = c.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            let max = a.column(j).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(mean.abs() <= 1e-12 * max.max(1.0));
        }
    }

    #[test]
    fn qr_contract((n, d, seed) in shape_and_seed()) {
        let a = gaussian_matrix(n, d, seed);
        let (q, r) = qr_factorize(&a);
        prop_assert!(q.orthonormality_error() <= 1e-10 * q.cols() as f64);
        let err = q.matmul(&r).unwrap().sub(&a).unwrap().frobenius_sq().sqrt();
        prop_assert!(err <= 1e-8 * a.frobenius_sq().sqrt().max(1e-300));
    }
}

#[test]
fn svd_examples() {
    assert_eq!(svd(&Matrix::identity(2)).unwrap().sigma, vec![1.0, 1.0]);
    let s = svd(&Matrix::from_diag(&[3.0, 2.0])).unwrap().sigma;
    assert!((s[0] - 3.0).abs() < 1e-14 && (s[1] - 2.0).abs() < 1e-14);
    // eigenvalues of AᵀA are 15 ± √221
    let s = svd(&Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()).unwrap().sigma;
    let want = [(15.0 + 221f64.sqrt()).sqrt(), (15.0 - 221f64.sqrt()).sqrt()];
    assert!((s[0] - want[0]).abs() < 1e-12 && (s[1] - want[1]).abs() < 1e-12);
    assert!((want[0] - 5.46499).abs() < 1e-5 && (want[1] - 0.36597).abs() < 1e-5);
}

#[test]
fn truncate_examples() {
    let f = svd(&Matrix::from_diag(&[3.0, 2.0, 1.0])).unwrap();
    assert_eq!(truncate(&f, 2).unwrap().sigma, vec![3.0, 2.0]);
    assert_eq!(truncate(&f, 3).unwrap(), f);
    assert!(truncate(&f, 0).is_err() && truncate(&f, 4).is_err());
    let rank1 = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
    let one = truncate(&svd(&rank1).unwrap(), 1).unwrap().reconstruct();
    assert!(one.sub(&rank1).unwrap().max_abs() < 1e-12);
}

#[test]
fn own_singular_subspace_is_exact() {
    let a = with_spectrum(20, 7, &[3.0, 2.0, 1.0], 11);
    let f = svd(&a).unwrap();
    let top = Subspace::new(f.v.leading_columns(3)).unwrap();
    assert!(project(&a, &top).unwrap().sub(&a).unwrap().max_abs() < 1e-12);
    let full = Subspace::new(f.v.clone()).unwrap();
    assert!(dist_sq(&a, &full).unwrap() < 1e-24);
}

#[test]
fn dist_sq_matches_row_residuals() {
    let a = gaussian_matrix(10, 5, 17);
    for r in 1..=4 {
        let axes: Vec<usize> = (0..r).collect();
        let s = Subspace::coordinate_axes(5, &axes).unwrap();
        let brute: f64 = (0..10).map(|i| (r..5).map(|j| a[(i, j)] * a[(i, j)]).sum::<f64>()).sum();
        assert!((dist_sq(&a, &s).unwrap() - brute).abs() < 1e-12);
    }
}

#[test]
fn spectral_norm_matches_oracle() {
    for seed in 0..10 {
        let a = gaussian_matrix(15, 6, seed);
        let na = DMatrix::from_row_slice(15, 6, a.as_slice());
        let want = na.svd(false, false).singular_values.max();
        assert!((spectral_norm(&a) - want).abs() <= 1e-6 * want);
    }
}
