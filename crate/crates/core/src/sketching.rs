//! Sparse subspace embeddings (CountSketch), Gaussian probe matrices and the
//! cross-validation booster that lifts a constant-probability embedding to
//! success probability `1 − δ` without growing the sketch.
//!
//! A CountSketch `H = ΦΣ` maps row `i` of the input to bucket `h(i)` with a
//! random sign. It is never materialized: applying it is a signed
//! scatter-add over the non-zero entries of the input.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::linalg::{svd, svd_right, Matrix, RightFactors};
use crate::par;
use crate::rng::{derive_seed, rng_from_seed};

/// Bucket and sign assignment of a CountSketch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSketchPlan {
    input_rows: usize,
    output_rows: usize,
    bucket_of: Vec<usize>,
    sign_of: Vec<i8>,
    seed: Option<u64>,
}

impl CountSketchPlan {
    /// Builds a plan from explicit maps. Buckets must lie in `0..output_rows`
    /// and signs must be ±1.
    pub fn from_parts(output_rows: usize, bucket_of: Vec<usize>, sign_of: Vec<i8>) -> Result<Self> {
        if output_rows == 0 || bucket_of.is_empty() {
            return param_err("count sketch needs at least one input and one output row");
        }
        if bucket_of.len() != sign_of.len() {
            return param_err("bucket and sign maps differ in length");
        }
        if let Some(b) = bucket_of.iter().find(|&&b| b >= output_rows) {
            return param_err(format!("bucket {b} outside 0..{output_rows}"));
        }
        if sign_of.iter().any(|&s| s != 1 && s != -1) {
            return param_err("signs must be +1 or -1");
        }
        Ok(Self {
            input_rows: bucket_of.len(),
            output_rows,
            bucket_of,
            sign_of,
            seed: None,
        })
    }

    /// The plan with `bucket_of(i) = i` and all signs `+1` (`H = I`).
    pub fn identity(n: usize) -> Self {
        Self::from_parts(n, (0..n).collect(), vec![1; n]).expect("valid identity plan")
    }

    pub fn input_rows(&self) -> usize {
        self.input_rows
    }

    pub fn output_rows(&self) -> usize {
        self.output_rows
    }

    pub fn bucket_of(&self) -> &[usize] {
        &self.bucket_of
    }

    pub fn sign_of(&self) -> &[i8] {
        &self.sign_of
    }

    /// Seed the plan was drawn from, `None` for hand-built plans.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Buckets that receive at least one input row, ascending.
    pub fn occupied_buckets(&self) -> Vec<usize> {
        let mut hit = vec![false; self.output_rows];
        for &b in &self.bucket_of {
            hit[b] = true;
        }
        (0..self.output_rows).filter(|&b| hit[b]).collect()
    }
}

/// Draws a CountSketch plan: every row gets a uniform bucket in `0..ell` and
/// an independent fair sign.
pub fn plan_countsketch(n: usize, ell: usize, seed: u64) -> CountSketchPlan {
    assert!(n >= 1 && ell >= 1, "count sketch needs n >= 1 and ell >= 1");
    let mut rng = rng_from_seed(seed);
    let mut bucket_of = Vec::with_capacity(n);
    let mut sign_of = Vec::with_capacity(n);
    for _ in 0..n {
        bucket_of.push(rng.random_range(0..ell));
        sign_of.push(if rng.random::<bool>() { 1 } else { -1 });
    }
    CountSketchPlan {
        input_rows: n,
        output_rows: ell,
        bucket_of,
        sign_of,
        seed: Some(seed),
    }
}

fn check_rows(plan: &CountSketchPlan, a: &Matrix) -> Result<()> {
    if a.rows() != plan.input_rows {
        return Err(Error::DimensionMismatch {
            op: "apply_countsketch",
            left: (plan.output_rows, plan.input_rows),
            right: a.shape(),
        });
    }
    Ok(())
}

/// `H · A` as an `ell × d` matrix. Only non-zero entries of `A` are touched.
pub fn apply_countsketch(plan: &CountSketchPlan, a: &Matrix) -> Result<Matrix> {
    check_rows(plan, a)?;
    let d = a.cols();
    let mut out = Matrix::zeros(plan.output_rows, d);
    for (i, row) in a.row_iter().enumerate() {
        let sign = plan.sign_of[i] as f64;
        let target = out.row_mut(plan.bucket_of[i]);
        for (t, &x) in target.iter_mut().zip(row) {
            if x != 0.0 {
                *t += sign * x;
            }
        }
    }
    Ok(out)
}

/// `H · A` restricted to the buckets that receive at least one row.
///
/// The dropped rows are identically zero, so singular values and right
/// singular vectors equal those of the full product, and the result never
/// has more rows than `A`. This is the form the protocol keeps in memory when
/// `ell` is large.
pub fn apply_countsketch_compact(plan: &CountSketchPlan, a: &Matrix) -> Result<Matrix> {
    check_rows(plan, a)?;
    let occupied = plan.occupied_buckets();
    let mut slot = vec![usize::MAX; plan.output_rows];
    for (k, &b) in occupied.iter().enumerate() {
        slot[b] = k;
    }
    let mut out = Matrix::zeros(occupied.len(), a.cols());
    for (i, row) in a.row_iter().enumerate() {
        let sign = plan.sign_of[i] as f64;
        let target = out.row_mut(slot[plan.bucket_of[i]]);
        for (t, &x) in target.iter_mut().zip(row) {
            if x != 0.0 {
                *t += sign * x;
            }
        }
    }
    Ok(out)
}

/// Sketch size `⌈d²/ε²⌉` for a target accuracy `eps`.
pub fn sketch_rows_for(d: usize, eps: f64) -> usize {
    ((d * d) as f64 / (eps * eps)).ceil() as usize
}

/// Candidate count `max(2, ⌈6 ln(1/δ)⌉)` used by the booster.
pub fn booster_candidates(delta: f64) -> usize {
    ((6.0 * (1.0 / delta).ln()).ceil() as usize).max(2)
}

/// `n × d` matrix of i.i.d. standard normals.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite gaussian sample")
}

fn unit_gaussian_vector(d: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = y.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return y.into_iter().map(|x| x / n).collect();
        }
    }
}

fn mat_vec(a: &Matrix, y: &[f64]) -> Vec<f64> {
    a.row_iter()
        .map(|r| r.iter().zip(y).map(|(x, z)| x * z).sum())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest `|‖HAy‖/‖Ay‖ − 1|` over `probes` random unit directions `y`.
/// Directions with `Ay = 0` are skipped; returns 0 when all are skipped.
pub fn distortion(plan: &CountSketchPlan, a: &Matrix, probes: usize, seed: u64) -> Result<f64> {
    if probes == 0 {
        return param_err("distortion needs at least one probe");
    }
    let ha = apply_countsketch_compact(plan, a)?;
    Ok(probe_ratio_distortion(a, &ha, probes, seed))
}

/// Largest `|‖By‖/‖Ay‖ − 1|` over random unit `y`, skipping `Ay = 0`.
pub fn probe_ratio_distortion(a: &Matrix, b: &Matrix, probes: usize, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let scale = a.max_abs();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let y = unit_gaussian_vector(a.cols(), &mut rng);
        let ay = norm(&mat_vec(a, &y));
        if ay <= scale * 1e-14 {
            continue;
        }
        let by = norm(&mat_vec(b, &y));
        worst = worst.max((by / ay - 1.0).abs());
    }
    worst
}

/// Exact subspace-embedding distortion: `max_i |σ_i(H Q) − 1|` where `Q` is
/// an orthonormal basis of the column space of `A`. This is the supremum that
/// [`distortion`] estimates by sampling.
pub fn exact_distortion(plan: &CountSketchPlan, a: &Matrix) -> Result<f64> {
    check_rows(plan, a)?;
    let f = svd(a)?;
    let smax = f.sigma.first().copied().unwrap_or(0.0);
    let rank = f.sigma.iter().filter(|&&s| s > 1e-12 * smax).count();
    if rank == 0 {
        return Ok(0.0);
    }
    let q = f.u.leading_columns(rank);
    let hq = apply_countsketch_compact(plan, &q)?;
    let s = svd_right(&hq)?.sigma;
    let mut worst: f64 = 0.0;
    for i in 0..rank {
        let si = s.get(i).copied().unwrap_or(0.0);
        worst = worst.max((si - 1.0).abs());
    }
    Ok(worst)
}

/// One sketched copy of `A` together with its SVD.
#[derive(Debug, Clone)]
pub struct EmbeddingCandidate {
    pub plan: CountSketchPlan,
    /// `H_j A`, with all-zero bucket rows removed.
    pub embedded: Matrix,
    pub factors: RightFactors,
}

impl EmbeddingCandidate {
    pub fn new(plan: CountSketchPlan, embedded: Matrix) -> Result<Self> {
        let factors = svd_right(&embedded)?;
        Ok(Self {
            plan,
            embedded,
            factors,
        })
    }

    /// Whether some singular value is zero relative to the largest, i.e.
    /// `Σ_j` cannot be inverted.
    pub fn is_rank_deficient(&self) -> bool {
        let s = &self.factors.sigma;
        let smax = s.first().copied().unwrap_or(0.0);
        s.len() < self.factors.v.rows() || smax == 0.0 || s.iter().any(|&x| x <= 1e-12 * smax)
    }
}

/// Singular values of `Σ_{j'} V_{j'}ᵀ V_j Σ_j⁻¹`.
pub fn pair_singular_values(j: &EmbeddingCandidate, other: &EmbeddingCandidate) -> Result<Vec<f64>> {
    let inv: Vec<f64> = j.factors.sigma.iter().map(|s| 1.0 / s).collect();
    let m = other
        .factors
        .v
        .t_matmul(&j.factors.v)?
        .scale_columns(&inv);
    // left-multiply by Σ_{j'}
    let mut scaled = m;
    for (i, &s) in other.factors.sigma.iter().enumerate() {
        scaled.row_mut(i).iter_mut().for_each(|x| *x *= s);
    }
    Ok(svd_right(&scaled)?.sigma)
}

/// Whether all singular values of the pair matrix lie in `[1 − ε/3, 1 + ε/3]`.
pub fn pair_passes(j: &EmbeddingCandidate, other: &EmbeddingCandidate, eps: f64) -> Result<bool> {
    if other.is_rank_deficient() {
        return Ok(false);
    }
    let s = pair_singular_values(j, other)?;
    let band = eps / 3.0;
    Ok(s.len() == j.factors.v.rows() && s.iter().all(|&x| (x - 1.0).abs() <= band))
}

/// Result of the booster.
#[derive(Debug, Clone)]
pub struct BoostOutcome {
    pub plan: CountSketchPlan,
    /// Chosen embedding, zero bucket rows removed.
    pub embedded: Matrix,
    /// Number of candidates `j` that were tested against the others.
    pub candidates_examined: usize,
    pub candidate_count: usize,
    pub chosen_index: usize,
}

/// Booster settings. `ell = None` sizes each candidate for accuracy `eps/9`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostConfig {
    pub eps: f64,
    pub delta: f64,
    pub ell: Option<usize>,
    pub seed: u64,
}

/// Tests candidates in a seeded random order and returns the first `j` that
/// agrees with at least half of the other candidates. Rank-deficient
/// candidates are never selected.
pub fn select_embedding(
    candidates: Vec<EmbeddingCandidate>,
    eps: f64,
    order_seed: u64,
) -> Result<BoostOutcome> {
    let r = candidates.len();
    if r < 2 {
        return param_err("the booster needs at least two candidates");
    }
    let mut order: Vec<usize> = (0..r).collect();
    order.shuffle(&mut rng_from_seed(order_seed));
    let needed = (r - 1).div_ceil(2);
    let mut examined = 0;
    for &j in &order {
        if candidates[j].is_rank_deficient() {
            continue;
        }
        examined += 1;
        let mut passes = 0;
        let mut fails = 0;
        for (jp, other) in candidates.iter().enumerate() {
            if jp == j {
                continue;
            }
            if pair_passes(&candidates[j], other, eps)? {
                passes += 1;
                if passes >= needed {
                    break;
                }
            } else {
                fails += 1;
                if fails > (r - 1) - needed {
                    break;
                }
            }
        }
        if passes >= needed {
            let chosen = candidates.into_iter().nth(j).expect("index in range");
            return Ok(BoostOutcome {
                plan: chosen.plan,
                embedded: chosen.embedded,
                candidates_examined: examined,
                candidate_count: r,
                chosen_index: j,
            });
        }
    }
    Err(Error::BoostFailure { candidates: r })
}

/// Builds `max(2, ⌈6 ln(1/δ)⌉)` independent CountSketch candidates of `a`
/// (in parallel, each from its own derived seed) and selects one with
/// [`select_embedding`].
pub fn boost_embedding_with(a: &Matrix, cfg: &BoostConfig) -> Result<BoostOutcome> {
    if !(cfg.eps > 0.0 && cfg.eps <= 0.5) {
        return param_err(format!("booster eps {} outside (0, 1/2]", cfg.eps));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return param_err(format!("booster delta {} outside (0, 1)", cfg.delta));
    }
    if a.rows() <= a.cols() {
        return param_err("booster expects more rows than columns");
    }
    let ell = cfg
        .ell
        .unwrap_or_else(|| sketch_rows_for(a.cols(), cfg.eps / 9.0));
    if ell == 0 {
        return param_err("sketch size must be positive");
    }
    let r = booster_candidates(cfg.delta);
    let built: Vec<Result<EmbeddingCandidate>> = par::map_range(r, |j| {
        let plan = plan_countsketch(a.rows(), ell, derive_seed(cfg.seed, j as u64 + 1));
        let embedded = apply_countsketch_compact(&plan, a)?;
        EmbeddingCandidate::new(plan, embedded)
    });
    let candidates = built.into_iter().collect::<Result<Vec<_>>>()?;
    select_embedding(candidates, cfg.eps, derive_seed(cfg.seed, 0))
}

/// Boosted embedding of `a` with per-candidate accuracy `eps/9`.
/// Returns the chosen plan and the full `ell × d` product `H·A`.
pub fn boost_embedding(a: &Matrix, eps: f64, delta: f64, seed: u64) -> Result<(CountSketchPlan, Matrix)> {
    let out = boost_embedding_with(
        a,
        &BoostConfig {
            eps,
            delta,
            ell: None,
            seed,
        },
    )?;
    let full = apply_countsketch(&out.plan, a)?;
    Ok((out.plan, full))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, d: usize, seed: u64) -> Matrix {
        gaussian_matrix(n, d, seed)
    }

    #[test]
    fn identity_plan_is_identity() {
        let a = sample(4, 3, 1);
        let plan = CountSketchPlan::identity(4);
        assert_eq!(apply_countsketch(&plan, &a).unwrap(), a);
        assert_eq!(distortion(&plan, &a, 20, 3).unwrap(), 0.0);
    }

    #[test]
    fn single_row_plan() {
        let p = plan_countsketch(1, 1, 42);
        assert_eq!(p.bucket_of(), &[0]);
        assert!(p.sign_of()[0] == 1 || p.sign_of()[0] == -1);
    }

    #[test]
    fn same_seed_same_plan() {
        assert_eq!(plan_countsketch(50, 7, 9), plan_countsketch(50, 7, 9));
        assert_ne!(plan_countsketch(50, 7, 9), plan_countsketch(50, 7, 10));
    }

    #[test]
    fn signed_row_sum() {
        let plan = CountSketchPlan::from_parts(1, vec![0, 0], vec![1, -1]).unwrap();
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(apply_countsketch(&plan, &a).unwrap().as_slice(), &[-2.0, -2.0]);
    }

    #[test]
    fn zero_input_and_mismatch() {
        let plan = plan_countsketch(5, 3, 1);
        let z = Matrix::zeros(5, 2);
        assert_eq!(apply_countsketch(&plan, &z).unwrap(), Matrix::zeros(3, 2));
        assert_eq!(distortion(&plan, &z, 10, 1).unwrap(), 0.0);
        assert!(apply_countsketch(&plan, &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn bad_parts_rejected() {
        assert!(CountSketchPlan::from_parts(2, vec![2], vec![1]).is_err());
        assert!(CountSketchPlan::from_parts(2, vec![0], vec![0]).is_err());
        assert!(CountSketchPlan::from_parts(2, vec![0, 1], vec![1]).is_err());
    }

    #[test]
    fn compact_matches_full_spectrum() {
        let a = sample(40, 3, 5);
        let plan = plan_countsketch(40, 400, 6);
        let full = svd_right(&apply_countsketch(&plan, &a).unwrap()).unwrap();
        let compact = svd_right(&apply_countsketch_compact(&plan, &a).unwrap()).unwrap();
        for (x, y) in full.sigma.iter().zip(&compact.sigma) {
            assert!((x - y).abs() < 1e-10 * x.max(1.0));
        }
    }

    #[test]
    fn gaussian_shape_and_determinism() {
        let g = gaussian_matrix(3, 5, 11);
        assert_eq!(g.shape(), (3, 5));
        assert_eq!(g, gaussian_matrix(3, 5, 11));
        let big = gaussian_matrix(10_000, 1, 12);
        let mean = big.as_slice().iter().sum::<f64>() / 10_000.0;
        let var = big.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9_999.0;
        assert!(mean.abs() <= 0.05, "mean {mean}");
        assert!((0.9..=1.1).contains(&var), "var {var}");
    }

    #[test]
    fn identical_candidates_all_pass() {
        let a = sample(60, 3, 2);
        let plan = plan_countsketch(60, 200, 77);
        let emb = apply_countsketch_compact(&plan, &a).unwrap();
        let cands: Vec<_> = (0..4)
            .map(|_| EmbeddingCandidate::new(plan.clone(), emb.clone()).unwrap())
            .collect();
        for s in pair_singular_values(&cands[0], &cands[1]).unwrap() {
            assert!((s - 1.0).abs() < 1e-10);
        }
        let out = select_embedding(cands, 0.3, 1).unwrap();
        assert_eq!(out.candidates_examined, 1);
        assert_eq!(out.plan, plan);
    }

    #[test]
    fn scaled_candidates_fail() {
        let a = sample(60, 3, 2);
        let plan = plan_countsketch(60, 200, 77);
        let emb = apply_countsketch_compact(&plan, &a).unwrap();
        let c1 = EmbeddingCandidate::new(plan.clone(), emb.clone()).unwrap();
        let c2 = EmbeddingCandidate::new(plan, emb.scale(2.0)).unwrap();
        let s = pair_singular_values(&c1, &c2).unwrap();
        assert!(s.iter().all(|x| (x - 2.0).abs() < 1e-10));
        let s = pair_singular_values(&c2, &c1).unwrap();
        assert!(s.iter().all(|x| (x - 0.5).abs() < 1e-10));
        assert!(matches!(
            select_embedding(vec![c1, c2], 1.0, 3),
            Err(Error::BoostFailure { candidates: 2 })
        ));
    }

    #[test]
    fn rank_deficient_candidate_excluded() {
        let a = sample(30, 3, 8);
        // every row lands in one bucket: rank one
        let collapsed = CountSketchPlan::from_parts(5, vec![0; 30], vec![1; 30]).unwrap();
        let emb = apply_countsketch_compact(&collapsed, &a).unwrap();
        let bad = EmbeddingCandidate::new(collapsed, emb).unwrap();
        assert!(bad.is_rank_deficient());
        let good_plan = CountSketchPlan::identity(30);
        let good = EmbeddingCandidate::new(good_plan.clone(), a.clone()).unwrap();
        let res = select_embedding(vec![bad, good.clone(), good], 0.3, 0).unwrap();
        assert_ne!(res.chosen_index, 0);
    }

    #[test]
    fn booster_rejects_bad_parameters() {
        let a = sample(30, 3, 8);
        assert!(boost_embedding(&a, 0.0, 0.1, 1).is_err());
        assert!(boost_embedding(&a, 0.6, 0.1, 1).is_err());
        assert!(boost_embedding(&a, 0.3, 1.0, 1).is_err());
        assert!(boost_embedding(&sample(3, 3, 1), 0.3, 0.1, 1).is_err());
    }

    #[test]
    fn candidate_count_formula() {
        assert_eq!(booster_candidates(0.05), 18);
        assert_eq!(booster_candidates(0.9), 2);
        assert_eq!(sketch_rows_for(4, 0.1), 1600);
    }
}
