//! Dense matrix kernel: exact SVD, truncation, projections and the
//! squared point-to-subspace distance that every guarantee is stated in.

mod decomp;
mod matrix;

pub use decomp::{
    complete_basis, orthonormal_basis, qr_factorize, spectral_norm, svd, svd_right, truncate,
    RightFactors, SvdFactors, ORTHONORMAL_TOL, RECONSTRUCTION_TOL,
};
pub use matrix::{frobenius_sq, matmul, transpose, Matrix};

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

/// A linear subspace of `R^d`, held as a `d × t` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    /// Wraps `basis`, checking `basisᵀ basis = I` to [`ORTHONORMAL_TOL`]
    /// scaled by the number of columns.
    pub fn new(basis: Matrix) -> Result<Self> {
        let err = basis.orthonormality_error();
        if err > ORTHONORMAL_TOL * (basis.cols() as f64).max(1.0) {
            return param_err(format!("basis columns are not orthonormal (error {err:e})"));
        }
        if basis.cols() > basis.rows() {
            return param_err("subspace dimension exceeds ambient dimension");
        }
        Ok(Self { basis })
    }

    /// The whole of `R^d`.
    pub fn full(d: usize) -> Self {
        Self {
            basis: Matrix::identity(d),
        }
    }

    /// Span of the given coordinate axes.
    pub fn coordinate_axes(d: usize, axes: &[usize]) -> Result<Self> {
        let cols: Vec<Vec<f64>> = axes
            .iter()
            .map(|&a| {
                let mut e = vec![0.0; d];
                e[a] = 1.0;
                e
            })
            .collect();
        Self::new(Matrix::from_columns(&cols)?)
    }

    /// Span of the rows of `points` (each a vector in `R^d`). Directions with
    /// singular value below 1e-12 of the largest are dropped.
    pub fn span_of_rows(points: &Matrix) -> Result<Self> {
        let f = svd(points)?;
        let smax = f.sigma.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return Err(Error::RankDeficient("span of all-zero points".into()));
        }
        let keep = f.sigma.iter().filter(|&&s| s > 1e-12 * smax).count();
        Self::new(f.v.leading_columns(keep))
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn into_basis(self) -> Matrix {
        self.basis
    }

    /// Ambient dimension `d`.
    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    /// Subspace dimension `t`.
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    /// The span of the first `t` basis vectors.
    pub fn leading(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.dim() {
            return param_err(format!("leading({t}) outside 1..={}", self.dim()));
        }
        Ok(Self {
            basis: self.basis.leading_columns(t),
        })
    }
}

fn check_compat(a: &Matrix, s: &Subspace, op: &'static str) -> Result<()> {
    if a.cols() != s.ambient_dim() {
        return Err(Error::DimensionMismatch {
            op,
            left: a.shape(),
            right: s.basis.shape(),
        });
    }
    Ok(())
}

/// Subtracts the column means.
pub fn center(points: &Matrix) -> Matrix {
    let n = points.rows() as f64;
    let d = points.cols();
    let mut out = points.clone();
    // two passes: the second removes the rounding left by the first
    for _ in 0..2 {
        let mut means = vec![0.0; d];
        for r in out.row_iter() {
            means.iter_mut().zip(r).for_each(|(m, x)| *m += x);
        }
        means.iter_mut().for_each(|m| *m /= n);
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&means).for_each(|(x, m)| *x -= m);
        }
    }
    out
}

/// `A · B · Bᵀ`: rows of `a` projected onto `s`, in original coordinates.
pub fn project(a: &Matrix, s: &Subspace) -> Result<Matrix> {
    check_compat(a, s, "project")?;
    a.matmul(&s.basis)?.matmul_t(&s.basis)
}

/// Coordinates of the rows of `a` in the basis of `s` (`A · B`).
pub fn coordinates(a: &Matrix, s: &Subspace) -> Result<Matrix> {
    check_compat(a, s, "coordinates")?;
    a.matmul(&s.basis)
}

/// `Σ_i d²(a_i, span B) = ‖A − A B Bᵀ‖²_F`.
pub fn dist_sq(a: &Matrix, s: &Subspace) -> Result<f64> {
    let p = project(a, s)?;
    Ok(a.sub(&p)?.frobenius_sq())
}

/// Smallest `t` (1-based) with `σ_t² ≤ (ε/r) Σ_{i>r} σ_i²`, or `min(n, d)`
/// when no `t` in range qualifies. Singular values below a relative
/// `m·ε_mach` are treated as exact zeros.
pub fn tau(a: &Matrix, r: usize, eps: f64) -> Result<usize> {
    let m = a.rows().min(a.cols());
    if r == 0 || r >= m {
        return param_err(format!("rank {r} outside 1..{m}"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return param_err(format!("eps {eps} outside (0, 1]"));
    }
    let f = svd_right(a)?;
    Ok(tau_from_spectrum(&f.sigma, r, eps))
}

/// [`tau`] on a precomputed, non-increasing spectrum.
pub fn tau_from_spectrum(sigma: &[f64], r: usize, eps: f64) -> usize {
    let m = sigma.len();
    let smax = sigma.first().copied().unwrap_or(0.0);
    let cutoff = smax * f64::EPSILON * (m.max(1) as f64) * 4.0;
    let sq: Vec<f64> = sigma
        .iter()
        .map(|&s| if s <= cutoff { 0.0 } else { s * s })
        .collect();
    let tail: f64 = sq[r..].iter().sum();
    let threshold = eps / r as f64 * tail;
    (1..=m).find(|&t| sq[t - 1] <= threshold).unwrap_or(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_examples() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [3.0, 3.0]]).unwrap();
        assert_eq!(center(&a).as_slice(), &[-1.0, -1.0, 1.0, 1.0]);
        let z = Matrix::zeros(3, 2);
        assert_eq!(center(&z), z);
        let c = Matrix::from_rows(&[[2.0], [4.0], [6.0]]).unwrap();
        assert_eq!(center(&c).as_slice(), &[-2.0, 0.0, 2.0]);
    }

    #[test]
    fn project_examples() {
        let a = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let e1 = Subspace::coordinate_axes(2, &[0]).unwrap();
        assert_eq!(project(&a, &e1).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(project(&a, &Subspace::full(2)).unwrap(), a);
        assert!(project(&Matrix::zeros(1, 3), &e1).is_err());
        let b = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_eq!(dist_sq(&b, &e1).unwrap(), 1.0);
    }

    #[test]
    fn subspace_rejects_non_orthonormal() {
        let m = Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(Subspace::new(m).is_err());
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau(&Matrix::from_diag(&[2.0, 1.0, 1.0, 1.0]), 1, 1.0).unwrap(), 2);
        assert_eq!(tau(&Matrix::identity(5), 2, 0.5).unwrap(), 5);
        // exact rank 2 in a 6x5 matrix
        let rank2 = Matrix::from_vec(6, 5, (0..30).map(|i| ((i % 5) as f64) * (1.0 + (i / 5) as f64) + if i % 5 == 0 { (i / 5) as f64 } else { 0.0 }).collect()).unwrap();
        let f = svd(&rank2).unwrap();
        assert!(f.sigma[2] < 1e-10 * f.sigma[0]);
        assert_eq!(tau(&rank2, 2, 0.5).unwrap(), 3);
        assert!(tau(&Matrix::identity(3), 3, 0.5).is_err());
        assert!(tau(&Matrix::identity(3), 1, 0.0).is_err());
    }
}
