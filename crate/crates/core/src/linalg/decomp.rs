//! Householder QR and a one-sided Jacobi SVD.
//!
//! Tall inputs are first reduced with QR so that the Jacobi sweeps run on the
//! small triangular factor. Columns are kept contiguous (column-major scratch)
//! because both algorithms work column by column.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{param_err, Error, Result};
use crate::par;

/// Orthonormality tolerance used across the crate.
pub const ORTHONORMAL_TOL: f64 = 1e-10;
/// Relative reconstruction tolerance used across the crate.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

const JACOBI_MAX_SWEEPS: usize = 80;

/// `(U, σ, V)` with σ sorted non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    /// Number of factors `m`.
    pub fn rank_capacity(&self) -> usize {
        self.sigma.len()
    }

    /// `U · diag(σ) · Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.u
            .scale_columns(&self.sigma)
            .matmul_t(&self.v)
            .expect("factor shapes agree")
    }
}

/// Singular values and right singular vectors only. This is what a node
/// actually needs (and sends) in the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RightFactors {
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Householder reflectors of a QR factorization, kept in compact form.
struct Householder {
    rows: usize,
    /// `vectors[k]` acts on rows `k..`; `None` means the reflector is the identity.
    vectors: Vec<Option<Vec<f64>>>,
    /// Column-major working copy; holds R in its upper triangle.
    r: Vec<Vec<f64>>,
}

fn householder(a: &Matrix) -> Householder {
    let n = a.rows();
    let d = a.cols();
    let steps = n.min(d);
    let mut work = a.to_columns();
    let mut vectors = Vec::with_capacity(steps);
    for k in 0..steps {
        let x = &work[k][k..];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            vectors.push(None);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = dot(&v, &v).sqrt();
        if vnorm == 0.0 {
            vectors.push(None);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);
        {
            let col = &mut work[k];
            col[k] = alpha;
            col[k + 1..].iter_mut().for_each(|x| *x = 0.0);
        }
        let rest = &mut work[k + 1..];
        let work_size = rest.len() * (n - k);
        par::for_each_mut(rest, work_size, |col| {
            let tail = &mut col[k..];
            let s = 2.0 * dot(&v, tail);
            if s != 0.0 {
                tail.iter_mut().zip(&v).for_each(|(t, vi)| *t -= s * vi);
            }
        });
        vectors.push(Some(v));
    }
    Householder {
        rows: n,
        vectors,
        r: work,
    }
}

impl Householder {
    /// Applies `Q = H_0 H_1 ... H_{m-1}` to the columns of `x` (each of length `rows`).
    fn apply_q(&self, x: &mut [Vec<f64>]) {
        let work = x.len() * self.rows * self.vectors.len();
        par::for_each_mut(x, work, |col| {
            for (k, v) in self.vectors.iter().enumerate().rev() {
                if let Some(v) = v {
                    let tail = &mut col[k..];
                    let s = 2.0 * dot(v, tail);
                    if s != 0.0 {
                        tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= s * vi);
                    }
                }
            }
        });
    }

    fn thin_q(&self) -> Vec<Vec<f64>> {
        let m = self.vectors.len();
        let mut q: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let mut e = vec![0.0; self.rows];
                e[j] = 1.0;
                e
            })
            .collect();
        self.apply_q(&mut q);
        q
    }

    /// Upper-trapezoidal `R` (`m × d`, `m = min(n, d)`).
    fn r_matrix(&self) -> Matrix {
        let m = self.vectors.len();
        let cols: Vec<Vec<f64>> = self.r.iter().map(|c| c[..m].to_vec()).collect();
        let mut r = Matrix::from_columns(&cols).expect("finite R");
        for j in 0..r.cols() {
            for i in (j + 1)..m {
                r[(i, j)] = 0.0;
            }
        }
        r
    }
}

/// Thin QR: `a = Q R` with `Q` (`n × m`) orthonormal and `R` (`m × d`)
/// upper trapezoidal, `m = min(n, d)`.
pub fn qr_factorize(a: &Matrix) -> (Matrix, Matrix) {
    let h = householder(a);
    let q = Matrix::from_columns(&h.thin_q()).expect("finite Q");
    (q, h.r_matrix())
}

/// Orthonormal basis for the column space of `a` (`n × min(n, d)`), padded
/// with arbitrary orthonormal directions when `a` is rank deficient.
pub fn orthonormal_basis(a: &Matrix) -> Matrix {
    qr_factorize(a).0
}

/// One-sided Jacobi on the columns of `w`, accumulating the rotations into
/// `v`. On return the columns of `w` are mutually orthogonal.
fn jacobi_sweeps(w: &mut [Vec<f64>], v: &mut [Vec<f64>]) -> Result<()> {
    let d = w.len();
    if d < 2 {
        return Ok(());
    }
    let rows = w[0].len();
    let tol = f64::EPSILON * (rows.max(d) as f64).sqrt();
    // Round-robin tournament: every round is a perfect matching of columns, so
    // its rotations touch disjoint columns and can run in any order.
    let players = d + (d % 2);
    let mut order: Vec<usize> = (0..players).collect();
    let mut last_residual = f64::INFINITY;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut residual: f64 = 0.0;
        let mut rotated = false;
        for _round in 0..players - 1 {
            let mut pairs: Vec<(usize, usize)> = (0..players / 2)
                .map(|i| (order[i], order[players - 1 - i]))
                .filter(|&(p, q)| p < d && q < d)
                .map(|(p, q)| (p.min(q), p.max(q)))
                .collect();
            pairs.sort_unstable();
            let mut jobs: Vec<(usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = pairs
                .iter()
                .map(|&(p, q)| {
                    (
                        p,
                        q,
                        std::mem::take(&mut w[p]),
                        std::mem::take(&mut w[q]),
                        std::mem::take(&mut v[p]),
                        std::mem::take(&mut v[q]),
                    )
                })
                .collect();
            let work = jobs.len() * rows * 6;
            let results: Vec<f64> = {
                let mut out = vec![0.0; jobs.len()];
                let mut zipped: Vec<_> = jobs.iter_mut().zip(out.iter_mut()).collect();
                par::for_each_mut(&mut zipped, work, |((_, _, wp, wq, vp, vq), res)| {
                    **res = rotate_pair(wp, wq, vp, vq, tol);
                });
                out
            };
            for ((p, q, wp, wq, vp, vq), r) in jobs.into_iter().zip(results) {
                w[p] = wp;
                w[q] = wq;
                v[p] = vp;
                v[q] = vq;
                if r > 0.0 {
                    rotated = true;
                }
                residual = residual.max(r);
            }
            // rotate all but the first player
            let last = order.pop().expect("non-empty");
            order.insert(1, last);
        }
        last_residual = residual;
        if !rotated {
            return Ok(());
        }
    }
    Err(Error::NoConvergence {
        op: "jacobi svd",
        iterations: JACOBI_MAX_SWEEPS,
        residual: last_residual,
    })
}

/// Orthogonalizes columns `wp`, `wq`; returns the pre-rotation normalized
/// correlation when a rotation was applied, 0 otherwise.
fn rotate_pair(wp: &mut [f64], wq: &mut [f64], vp: &mut [f64], vq: &mut [f64], tol: f64) -> f64 {
    let alpha = dot(wp, wp);
    let beta = dot(wq, wq);
    if alpha == 0.0 || beta == 0.0 {
        return 0.0;
    }
    let gamma = dot(wp, wq);
    let corr = gamma.abs() / (alpha * beta).sqrt();
    if corr <= tol || gamma == 0.0 {
        return 0.0;
    }
    let zeta = (beta - alpha) / (2.0 * gamma);
    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = c * t;
    for (a, b) in wp.iter_mut().zip(wq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
    for (a, b) in vp.iter_mut().zip(vq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
    corr
}

/// Extends orthonormal `basis` (columns of length `dim`) to `target` columns
/// with directions from the standard basis, orthogonalized twice.
pub(crate) fn complete_columns(basis: &mut Vec<Vec<f64>>, dim: usize, target: usize) {
    let mut candidate = 0;
    while basis.len() < target && candidate < dim {
        let mut e = vec![0.0; dim];
        e[candidate] = 1.0;
        candidate += 1;
        for _ in 0..2 {
            for b in basis.iter() {
                let s = dot(b, &e);
                e.iter_mut().zip(b).for_each(|(x, bi)| *x -= s * bi);
            }
        }
        let norm = dot(&e, &e).sqrt();
        if norm > 1e-6 {
            e.iter_mut().for_each(|x| *x /= norm);
            basis.push(e);
        }
    }
    assert_eq!(basis.len(), target, "cannot extend beyond the ambient dimension");
}

/// Extends the orthonormal columns of `m` to `target` orthonormal columns.
pub fn complete_basis(m: &Matrix, target: usize) -> Matrix {
    assert!(target <= m.rows(), "cannot hold {target} orthonormal columns in R^{}", m.rows());
    let mut cols = m.to_columns();
    if cols.len() >= target {
        cols.truncate(target);
    } else {
        complete_columns(&mut cols, m.rows(), target);
    }
    Matrix::from_columns(&cols).expect("finite basis")
}

struct TallSvd {
    sigma: Vec<f64>,
    /// Left factor of the square/triangular core, before applying `Q`.
    core_u: Option<Vec<Vec<f64>>>,
    v: Vec<Vec<f64>>,
}

/// SVD of a matrix with `rows >= cols`, optionally producing U.
fn tall_svd(a: &Matrix, want_u: bool) -> Result<(Vec<f64>, Option<Matrix>, Matrix)> {
    let n = a.rows();
    let d = a.cols();
    debug_assert!(n >= d);
    let (h, core) = if n > d {
        let h = householder(a);
        let r = h.r_matrix();
        (Some(h), r)
    } else {
        (None, a.clone())
    };
    let ts = core_svd(&core, want_u)?;
    let TallSvd { sigma, core_u, v } = ts;
    let u = core_u.map(|mut cu| {
        if let Some(h) = &h {
            for c in cu.iter_mut() {
                c.resize(n, 0.0);
            }
            h.apply_q(&mut cu);
        }
        Matrix::from_columns(&cu).expect("finite U")
    });
    let v = Matrix::from_columns(&v).expect("finite V");
    Ok((sigma, u, v))
}

/// Jacobi SVD of a square core matrix (`rows == cols` or generally `rows >= cols`).
fn core_svd(core: &Matrix, want_u: bool) -> Result<TallSvd> {
    let d = core.cols();
    let rows = core.rows();
    let mut w = core.to_columns();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            e
        })
        .collect();
    jacobi_sweeps(&mut w, &mut v)?;
    let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let zero_tol = smax * f64::EPSILON * (rows.max(d) as f64);
    let mut sigma = Vec::with_capacity(d);
    let mut v_sorted = Vec::with_capacity(d);
    let mut u_sorted: Vec<Vec<f64>> = Vec::new();
    let mut need_completion = false;
    for &j in &order {
        let s = norms[j];
        let mut vj = std::mem::take(&mut v[j]);
        // sign convention: largest-magnitude entry of each right vector is non-negative
        let pivot = vj
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
            .0;
        let flip = vj[pivot] < 0.0;
        if flip {
            vj.iter_mut().for_each(|x| *x = -*x);
        }
        if want_u && !need_completion {
            if s > zero_tol {
                let sign = if flip { -1.0 } else { 1.0 };
                let mut uj: Vec<f64> = w[j].iter().map(|x| sign * x / s).collect();
                if s < 1e-6 * smax {
                    // small singular values lose orthogonality to rounding
                    for _ in 0..2 {
                        for b in u_sorted.iter() {
                            let c = dot(b, &uj);
                            uj.iter_mut().zip(b).for_each(|(x, bi)| *x -= c * bi);
                        }
                    }
                    let nrm = dot(&uj, &uj).sqrt();
                    if nrm > 0.5 {
                        uj.iter_mut().for_each(|x| *x /= nrm);
                        u_sorted.push(uj);
                    } else {
                        need_completion = true;
                    }
                } else {
                    u_sorted.push(uj);
                }
            } else {
                need_completion = true;
            }
        }
        sigma.push(s);
        v_sorted.push(vj);
    }
    let core_u = if want_u {
        if need_completion {
            complete_columns(&mut u_sorted, rows, d);
        }
        Some(u_sorted)
    } else {
        None
    };
    Ok(TallSvd {
        sigma,
        core_u,
        v: v_sorted,
    })
}

fn check_finite(a: &Matrix) -> Result<()> {
    if let Some(pos) = a.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / a.cols(),
            col: pos % a.cols(),
        });
    }
    Ok(())
}

/// Full thin SVD with `m = min(rows, cols)` factors.
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    check_finite(a)?;
    if a.rows() >= a.cols() {
        let (sigma, u, v) = tall_svd(a, true)?;
        Ok(SvdFactors {
            u: u.expect("requested U"),
            sigma,
            v,
        })
    } else {
        // A = U S Vᵀ  <=>  Aᵀ = V S Uᵀ
        let (sigma, u_t, v_t) = tall_svd(&a.transpose(), true)?;
        let mut v = u_t.expect("requested U");
        let mut u = v_t;
        normalize_signs(&mut v, &mut u);
        Ok(SvdFactors { u, sigma, v })
    }
}

/// Singular values and right singular vectors (`m = min(rows, cols)` of them)
/// without forming U.
pub fn svd_right(a: &Matrix) -> Result<RightFactors> {
    check_finite(a)?;
    if a.rows() >= a.cols() {
        let (sigma, _, v) = tall_svd(a, false)?;
        Ok(RightFactors { sigma, v })
    } else {
        let f = svd(a)?;
        Ok(RightFactors {
            sigma: f.sigma,
            v: f.v,
        })
    }
}

/// Flips column pairs so each column of `v` has a non-negative entry of
/// largest magnitude.
fn normalize_signs(v: &mut Matrix, u: &mut Matrix) {
    for j in 0..v.cols() {
        let mut best = 0.0f64;
        let mut val = 0.0;
        for i in 0..v.rows() {
            let x = v[(i, j)];
            if x.abs() > best {
                best = x.abs();
                val = x;
            }
        }
        if val < 0.0 {
            for i in 0..v.rows() {
                v[(i, j)] = -v[(i, j)];
            }
            for i in 0..u.rows() {
                u[(i, j)] = -u[(i, j)];
            }
        }
    }
}

/// Leading-`t` slices `(U^(t), Σ^(t), V^(t))`.
pub fn truncate(f: &SvdFactors, t: usize) -> Result<SvdFactors> {
    let m = f.sigma.len();
    if t == 0 || t > m {
        return param_err(format!("truncation level {t} outside 1..={m}"));
    }
    Ok(SvdFactors {
        u: f.u.leading_columns(t),
        sigma: f.sigma[..t].to_vec(),
        v: f.v.leading_columns(t),
    })
}

/// Largest singular value, estimated by power iteration on `AᵀA`.
/// Relative accuracy is about 1e-6 for spectra that are not pathologically
/// flat at the top.
pub fn spectral_norm(a: &Matrix) -> f64 {
    let d = a.cols();
    let mut x: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64).collect();
    let mut estimate = 0.0;
    for _ in 0..1000 {
        let norm = dot(&x, &x).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let ax: Vec<f64> = a.row_iter().map(|r| dot(r, &x)).collect();
        let mut atax = vec![0.0; d];
        for (r, &s) in a.row_iter().zip(&ax) {
            atax.iter_mut().zip(r).for_each(|(o, &ri)| *o += ri * s);
        }
        let next = dot(&ax, &ax).sqrt();
        x = atax;
        if (next - estimate).abs() <= 1e-10 * next.max(f64::MIN_POSITIVE) {
            return next;
        }
        estimate = next;
    }
    estimate
}
