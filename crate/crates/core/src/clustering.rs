//! k-means (plain and weighted Lloyd with k-means++ or Forgy seeding), the
//! distributed k-means pipeline on top of disPCA, and principal component
//! regression.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::linalg::{coordinates, dist_sq, svd, Matrix, Subspace};
use crate::par;
use crate::protocol::{dispca, Backend, DisPcaParams, MessageKind, PartitionedDataset, SketchParams, Transcript, COORDINATOR};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSolution {
    /// `k × d`.
    pub centers: Matrix,
    pub assignment: Vec<usize>,
    /// `Σ_i w_i min_j ‖p_i − c_j‖²`.
    pub cost: f64,
    /// Cost after seeding and after every Lloyd step.
    pub history: Vec<f64>,
}

/// Points with positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoints {
    points: Matrix,
    weights: Vec<f64>,
}

impl WeightedPoints {
    pub fn new(points: Matrix, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != points.rows() {
            return param_err(format!("{} weights for {} points", weights.len(), points.rows()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return param_err(format!("weight {w} is not positive"));
        }
        Ok(Self { points, weights })
    }

    pub fn unit(points: Matrix) -> Self {
        let weights = vec![1.0; points.rows()];
        Self { points, weights }
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    #[default]
    KMeansPlusPlus,
    Forgy,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center and squared distance for every row; ties go to the lower
/// center index.
pub fn assign(p: &Matrix, centers: &Matrix) -> Result<(Vec<usize>, Vec<f64>)> {
    if centers.cols() != p.cols() {
        return Err(Error::DimensionMismatch {
            op: "assign",
            left: p.shape(),
            right: centers.shape(),
        });
    }
    let nearest = par::map_range(p.rows(), |i| {
        let row = p.row(i);
        let mut best = (0, f64::INFINITY);
        for (j, c) in centers.row_iter().enumerate() {
            let d = sq_dist(row, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    });
    Ok(nearest.into_iter().unzip())
}

/// `d²(P, 𝒳)` for point centers.
pub fn kmeans_cost(p: &Matrix, centers: &Matrix) -> Result<f64> {
    Ok(assign(p, centers)?.1.iter().sum())
}

pub fn weighted_kmeans_cost(wp: &WeightedPoints, centers: &Matrix) -> Result<f64> {
    let (_, d) = assign(&wp.points, centers)?;
    Ok(d.iter().zip(&wp.weights).map(|(d, w)| d * w).sum())
}

/// `d²(P, 𝒳)` when each center is a subspace: every point pays its squared
/// distance to the nearest one.
pub fn subspace_clustering_cost(p: &Matrix, centers: &[Subspace]) -> Result<f64> {
    if centers.is_empty() {
        return param_err("no centers");
    }
    let mut best = vec![f64::INFINITY; p.rows()];
    for c in centers {
        for (i, b) in best.iter_mut().enumerate() {
            let row = Matrix::from_vec(1, p.cols(), p.row(i).to_vec())?;
            *b = b.min(dist_sq(&row, c)?);
        }
    }
    Ok(best.iter().sum())
}

fn seed_centers(wp: &WeightedPoints, k: usize, init: Init, rng: &mut Rng) -> Vec<usize> {
    let n = wp.len();
    match init {
        Init::Forgy => sample(rng, n, k).into_vec(),
        Init::KMeansPlusPlus => {
            let first = WeightedIndex::new(&wp.weights).expect("positive weights").sample(rng);
            let mut chosen = vec![first];
            let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(wp.points.row(i), wp.points.row(first))).collect();
            // greedy variant: a few candidates per step, keep the one that
            // lowers the potential most
            let trials = 2 + (k as f64).ln().floor() as usize;
            while chosen.len() < k {
                let scores: Vec<f64> = d2.iter().zip(&wp.weights).map(|(d, w)| d * w).collect();
                let candidates: Vec<usize> = match WeightedIndex::new(&scores) {
                    Ok(dist) => (0..trials).map(|_| dist.sample(rng)).collect(),
                    // every point coincides with a chosen center
                    Err(_) => vec![(0..n).find(|i| !chosen.contains(i)).expect("k <= n")],
                };
                let mut best: Option<(f64, usize, Vec<f64>)> = None;
                for c in candidates {
                    let nd: Vec<f64> = (0..n).map(|i| d2[i].min(sq_dist(wp.points.row(i), wp.points.row(c)))).collect();
                    let pot: f64 = nd.iter().zip(&wp.weights).map(|(d, w)| d * w).sum();
                    if best.as_ref().is_none_or(|b| pot < b.0) {
                        best = Some((pot, c, nd));
                    }
                }
                let (_, next, nd) = best.expect("at least one candidate");
                chosen.push(next);
                d2 = nd;
            }
            chosen
        }
    }
}

/// Weighted means of the clusters. Empty clusters move to the points that
/// are currently farthest from their center.
fn update_centers(wp: &WeightedPoints, k: usize, assignment: &[usize], d2: &[f64], old: &Matrix) -> Matrix {
    let d = wp.points.cols();
    let mut sums = Matrix::zeros(k, d);
    let mut mass = vec![0.0; k];
    for (i, &c) in assignment.iter().enumerate() {
        let w = wp.weights[i];
        mass[c] += w;
        sums.row_mut(c).iter_mut().zip(wp.points.row(i)).for_each(|(s, x)| *s += w * x);
    }
    let mut far: Vec<usize> = (0..wp.len()).collect();
    far.sort_by(|&a, &b| d2[b].total_cmp(&d2[a]).then(a.cmp(&b)));
    let mut far = far.into_iter();
    for c in 0..k {
        if mass[c] > 0.0 {
            sums.row_mut(c).iter_mut().for_each(|s| *s /= mass[c]);
        } else if let Some(i) = far.next() {
            sums.row_mut(c).copy_from_slice(wp.points.row(i));
        } else {
            sums.row_mut(c).copy_from_slice(old.row(c));
        }
    }
    sums
}

/// Lloyd's method on weighted points.
pub fn weighted_lloyd(wp: &WeightedPoints, k: usize, init: Init, max_iters: usize, seed: u64) -> Result<ClusteringSolution> {
    if k == 0 || k > wp.len() {
        return param_err(format!("k = {k} outside 1..={}", wp.len()));
    }
    let mut rng = rng_from_seed(seed);
    let mut centers = wp.points.select_rows(&seed_centers(wp, k, init, &mut rng));
    let (mut assignment, mut d2) = assign(&wp.points, &centers)?;
    let wcost = |d2: &[f64]| d2.iter().zip(&wp.weights).map(|(d, w)| d * w).sum::<f64>();
    let mut history = vec![wcost(&d2)];
    for _ in 0..max_iters {
        let next = update_centers(wp, k, &assignment, &d2, &centers);
        let (a, nd) = assign(&wp.points, &next)?;
        centers = next;
        history.push(wcost(&nd));
        let fixed = a == assignment;
        assignment = a;
        d2 = nd;
        if fixed {
            break;
        }
    }
    Ok(ClusteringSolution {
        centers,
        assignment,
        cost: wcost(&d2),
        history,
    })
}

/// Lloyd's method with unit weights.
pub fn lloyd(p: &Matrix, k: usize, init: Init, max_iters: usize, seed: u64) -> Result<ClusteringSolution> {
    weighted_lloyd(&WeightedPoints::unit(p.clone()), k, init, max_iters, seed)
}

/// Cheapest of `restarts` Lloyd runs with derived seeds.
pub fn best_lloyd(p: &Matrix, k: usize, init: Init, max_iters: usize, restarts: usize, seed: u64) -> Result<ClusteringSolution> {
    let runs = par::map_range(restarts.max(1), |r| lloyd(p, k, init, max_iters, derive_seed(seed, r as u64)));
    let mut best: Option<ClusteringSolution> = None;
    for r in runs {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.cost < b.cost) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Default Lloyd iteration cap.
pub const LLOYD_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistKMeansConfig {
    pub k: usize,
    pub eps: f64,
    /// Total number of sampled points across all nodes.
    pub coreset_size: usize,
    pub seed: u64,
    /// Overrides `t1 = t2 = k + ⌈4k/ε²⌉ − 1` (which is clamped to `d`).
    pub projection_dim: Option<usize>,
    pub backend: Backend,
    pub sketch: Option<SketchParams>,
    pub rsvd_q: usize,
    pub init: Init,
    pub max_iters: usize,
}

impl DistKMeansConfig {
    pub fn new(k: usize, eps: f64, coreset_size: usize, seed: u64) -> Self {
        Self {
            k,
            eps,
            coreset_size,
            seed,
            projection_dim: None,
            backend: Backend::Exact,
            sketch: None,
            rsvd_q: 0,
            init: Init::KMeansPlusPlus,
            max_iters: LLOYD_MAX_ITERS,
        }
    }

    /// `min(d, k + ⌈4k/ε²⌉ − 1)` unless overridden.
    pub fn projection_dim_for(&self, d: usize) -> usize {
        self.projection_dim
            .unwrap_or(self.k + (4.0 * self.k as f64 / (self.eps * self.eps)).ceil() as usize - 1)
            .min(d)
    }
}

#[derive(Debug, Clone)]
pub struct DistKMeansOutcome {
    /// Centers in `R^d` (inside span E), evaluated on the global data in its
    /// original row order.
    pub solution: ClusteringSolution,
    pub transcript: Transcript,
    pub subspace: Subspace,
    /// Per node: (centers sent, sampled points sent).
    pub shipped: Vec<(usize, usize)>,
}

/// Splits `budget` proportionally to `costs` (largest remainder), never
/// exceeding `caps`. Leftover budget from capped nodes is re-split among the
/// rest.
pub fn allocate_samples(budget: usize, costs: &[f64], caps: &[usize]) -> Vec<usize> {
    let s = costs.len();
    let mut out = vec![0usize; s];
    let mut left = budget;
    loop {
        let open: Vec<usize> = (0..s).filter(|&i| out[i] < caps[i] && costs[i] > 0.0).collect();
        let total: f64 = open.iter().map(|&i| costs[i]).sum();
        if left == 0 || open.is_empty() || total <= 0.0 {
            return out;
        }
        let shares: Vec<f64> = open.iter().map(|&i| left as f64 * costs[i] / total).collect();
        let mut give: Vec<usize> = shares.iter().map(|x| x.floor() as usize).collect();
        let mut rest = left - give.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..open.len()).collect();
        order.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())).then(a.cmp(&b)));
        for &j in order.iter().cycle().take(open.len()) {
            if rest == 0 {
                break;
            }
            give[j] += 1;
            rest -= 1;
        }
        let mut placed = 0;
        for (j, &i) in open.iter().enumerate() {
            let g = give[j].min(caps[i] - out[i]);
            out[i] += g;
            placed += g;
        }
        left -= placed;
        if placed == 0 {
            return out;
        }
    }
}

struct NodeSummary {
    centers: Matrix,
    center_weights: Vec<f64>,
    local: ClusteringSolution,
    d2: Vec<f64>,
}

/// Projects every block onto disPCA's subspace `E`, clusters each node
/// locally, and merges local centers plus cost-proportional samples at the
/// coordinator with weighted Lloyd.
///
/// Messages beyond disPCA (which includes the broadcast of `E`): each node
/// sends its local cost (1 word) and receives its sample quota (1 word),
/// then sends its local centers and its samples at `t + 1` words per point
/// (coordinates plus weight). A node whose quota covers all of its points
/// sends those points with weight 1 and no centers.
pub fn distributed_kmeans(data: &PartitionedDataset, cfg: &DistKMeansConfig) -> Result<DistKMeansOutcome> {
    if cfg.k == 0 {
        return param_err("k must be at least 1");
    }
    if !(cfg.eps > 0.0 && cfg.eps < 1.0 / 3.0) {
        return param_err(format!("eps {} outside (0, 1/3)", cfg.eps));
    }
    let d = data.dim();
    let t = cfg.projection_dim_for(d);
    let params = DisPcaParams {
        t1: t,
        t2: t,
        backend: cfg.backend,
        sketch: cfg.sketch,
        rsvd_q: cfg.rsvd_q,
        seed: derive_seed(cfg.seed, 1),
        broadcast: true,
    };
    let pca = dispca(data, &params)?;
    let mut transcript = pca.transcript;
    let e = pca.subspace;
    let s = data.num_nodes();

    let summaries = par::map_slice(data.blocks(), |i, b| -> Result<NodeSummary> {
        let c = coordinates(b, &e)?;
        let k_i = cfg.k.min(c.rows());
        let local = lloyd(&c, k_i, cfg.init, cfg.max_iters, derive_seed(cfg.seed, 100 + i as u64))?;
        let (_, d2) = assign(&c, &local.centers)?;
        let mut sizes = vec![0.0; k_i];
        for &a in &local.assignment {
            sizes[a] += 1.0;
        }
        let keep: Vec<usize> = (0..k_i).filter(|&j| sizes[j] > 0.0).collect();
        Ok(NodeSummary {
            centers: local.centers.select_rows(&keep),
            center_weights: keep.iter().map(|&j| sizes[j]).collect(),
            local,
            d2,
        })
    });
    let summaries = summaries.into_iter().collect::<Result<Vec<_>>>()?;

    let costs: Vec<f64> = summaries.iter().map(|n| n.local.cost).collect();
    let caps = data.block_sizes();
    let quota = allocate_samples(cfg.coreset_size, &costs, &caps);
    for i in 0..s {
        transcript.push(i + 1, COORDINATOR, MessageKind::Other, 1);
    }
    for i in 0..s {
        transcript.push(COORDINATOR, i + 1, MessageKind::Other, 1);
    }

    let point_words = (t + 1) as u64;
    let mut rows: Vec<Matrix> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut shipped = Vec::with_capacity(s);
    for (i, node) in summaries.iter().enumerate() {
        let coords = coordinates(&data.blocks()[i], &e)?;
        let n_i = coords.rows();
        if quota[i] >= n_i {
            rows.push(coords);
            weights.extend(std::iter::repeat_n(1.0, n_i));
            transcript.push(i + 1, COORDINATOR, MessageKind::CoresetPoints, n_i as u64 * point_words);
            shipped.push((0, n_i));
            continue;
        }
        let k_i = node.centers.rows();
        rows.push(node.centers.clone());
        weights.extend(&node.center_weights);
        transcript.push(i + 1, COORDINATOR, MessageKind::CoresetPoints, k_i as u64 * point_words);
        let m = quota[i];
        if m > 0 {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, 200 + i as u64));
            let pick = WeightedIndex::new(&node.d2).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let total = node.local.cost;
            let idx: Vec<usize> = (0..m).map(|_| pick.sample(&mut rng)).collect();
            rows.push(coords.select_rows(&idx));
            weights.extend(idx.iter().map(|&j| total / (m as f64 * node.d2[j])));
            transcript.push(i + 1, COORDINATOR, MessageKind::CoresetPoints, m as u64 * point_words);
        }
        shipped.push((k_i, m));
    }

    let union = WeightedPoints::new(Matrix::vstack(&rows)?, weights)?;
    let k = cfg.k.min(union.len());
    let merged = weighted_lloyd(&union, k, cfg.init, cfg.max_iters, derive_seed(cfg.seed, 2))?;
    let lifted = merged.centers.matmul_t(e.basis())?;
    let p = data.reconstruct();
    let (assignment, d2) = assign(&p, &lifted)?;
    let cost = d2.iter().sum();
    Ok(DistKMeansOutcome {
        solution: ClusteringSolution {
            centers: lifted,
            assignment,
            cost,
            history: merged.history,
        },
        transcript,
        subspace: e,
        shipped,
    })
}

/// Least-squares fit in subspace coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcrFit {
    /// Coefficients on `features · B`.
    pub coefficients: Vec<f64>,
    /// `B · coefficients`, usable directly on the original features.
    pub lifted: Vec<f64>,
    /// Root-mean-square residual.
    pub fit_error: f64,
}

/// Relative singular-value cutoff of the PCR solve.
pub const PCR_RCOND: f64 = 1e-12;

/// Regresses `targets` on `features · B` with optional ridge penalty. The
/// (ridge-augmented) design is solved in the minimum-norm sense, so a
/// subspace wider than the data's rank is fine.
pub fn pcr(features: &Matrix, targets: &[f64], sub: &Subspace, ridge: f64) -> Result<PcrFit> {
    if targets.len() != features.rows() {
        return param_err(format!("{} targets for {} rows", targets.len(), features.rows()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return param_err(format!("ridge {ridge} must be non-negative"));
    }
    let z = coordinates(features, sub)?;
    let (n, t) = z.shape();
    let (design, rhs) = if ridge > 0.0 {
        let aug = Matrix::from_diag(&vec![ridge.sqrt(); t]);
        let mut y = targets.to_vec();
        y.resize(n + t, 0.0);
        (Matrix::vstack(&[z.clone(), aug])?, y)
    } else {
        (z.clone(), targets.to_vec())
    };
    // minimum-norm least squares; directions the data never reaches get
    // coefficient zero
    let f = svd(&design)?;
    let cutoff = PCR_RCOND * f.sigma.first().copied().unwrap_or(0.0);
    let mut coef = vec![0.0; t];
    for (j, &sj) in f.sigma.iter().enumerate() {
        if sj <= cutoff || sj == 0.0 {
            continue;
        }
        let uty: f64 = (0..design.rows()).map(|i| f.u[(i, j)] * rhs[i]).sum::<f64>() / sj;
        for (c, l) in coef.iter_mut().zip(0..t) {
            *c += f.v[(l, j)] * uty;
        }
    }
    let mse = z
        .row_iter()
        .zip(targets)
        .map(|(row, y)| {
            let f: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
            (y - f) * (y - f)
        })
        .sum::<f64>()
        / n as f64;
    let b = sub.basis();
    let lifted = (0..b.rows())
        .map(|i| b.row(i).iter().zip(&coef).map(|(a, c)| a * c).sum())
        .collect();
    Ok(PcrFit {
        coefficients: coef,
        lifted,
        fit_error: mse.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketching::gaussian_matrix;

    fn pairs() -> Matrix {
        Matrix::from_rows(&[[0.0, 0.0], [0.0, 2.0], [10.0, 0.0], [10.0, 2.0]]).unwrap()
    }

    #[test]
    fn cost_examples() {
        let p = pairs();
        let c = Matrix::from_rows(&[[0.0, 1.0], [10.0, 1.0]]).unwrap();
        assert_eq!(kmeans_cost(&p, &c).unwrap(), 4.0);
        assert_eq!(kmeans_cost(&p, &p).unwrap(), 0.0);
        let mean = Matrix::from_rows(&[[5.0, 1.0]]).unwrap();
        assert_eq!(kmeans_cost(&p, &mean).unwrap(), 4.0 * 26.0);
    }

    #[test]
    fn ties_go_low() {
        let p = Matrix::from_rows(&[[0.0]]).unwrap();
        let c = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        assert_eq!(assign(&p, &c).unwrap().0, vec![0]);
    }

    #[test]
    fn lloyd_pairs_every_seed() {
        for seed in 0..100 {
            let sol = lloyd(&pairs(), 2, Init::KMeansPlusPlus, 50, seed).unwrap();
            assert_eq!(sol.cost, 4.0, "seed {seed}");
        }
    }

    #[test]
    fn k_equals_n() {
        let p = gaussian_matrix(7, 3, 1);
        let sol = lloyd(&p, 7, Init::KMeansPlusPlus, 10, 1).unwrap();
        assert_eq!(sol.cost, 0.0);
        assert!(lloyd(&p, 8, Init::Forgy, 10, 1).is_err());
    }

    #[test]
    fn history_non_increasing() {
        let p = gaussian_matrix(200, 3, 4);
        for seed in 0..10 {
            let sol = lloyd(&p, 5, Init::KMeansPlusPlus, 100, seed).unwrap();
            for w in sol.history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
            }
            let direct = kmeans_cost(&p, &sol.centers).unwrap();
            assert!((direct - sol.cost).abs() <= 1e-8 * direct);
        }
    }

    #[test]
    fn allocation() {
        assert_eq!(allocate_samples(10, &[1.0, 1.0], &[100, 100]), vec![5, 5]);
        assert_eq!(allocate_samples(10, &[1.0, 3.0], &[100, 2]), vec![8, 2]);
        assert_eq!(allocate_samples(10, &[0.0, 0.0], &[5, 5]), vec![0, 0]);
        assert_eq!(allocate_samples(3, &[1.0, 1.0, 1.0, 1.0], &[9; 4]).iter().sum::<usize>(), 3);
        assert_eq!(allocate_samples(100, &[1.0, 1.0], &[3, 4]), vec![3, 4]);
    }

    #[test]
    fn weighted_rejects_bad_weights() {
        assert!(WeightedPoints::new(pairs(), vec![1.0; 3]).is_err());
        assert!(WeightedPoints::new(pairs(), vec![1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn pcr_first_feature() {
        let x = gaussian_matrix(30, 4, 2);
        let y = x.column(0);
        let sub = Subspace::coordinate_axes(4, &[0]).unwrap();
        let fit = pcr(&x, &y, &sub, 0.0).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!(fit.fit_error < 1e-12);
        assert_eq!(fit.lifted.len(), 4);
    }

    #[test]
    fn pcr_singular_design() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]).unwrap();
        let y = vec![1.0, 2.0, 3.0];
        let fit = pcr(&x, &y, &Subspace::full(2), 0.0).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12 && fit.coefficients[1] == 0.0);
        assert!(fit.fit_error < 1e-12);
        assert!(pcr(&x, &y, &Subspace::full(2), 0.1).unwrap().fit_error > 0.0);
    }

    #[test]
    fn subspace_cost_matches_kmeans_for_points_at_origin() {
        let p = gaussian_matrix(10, 3, 3);
        let axis = Subspace::coordinate_axes(3, &[0]).unwrap();
        let got = subspace_clustering_cost(&p, std::slice::from_ref(&axis)).unwrap();
        assert!((got - dist_sq(&p, &axis).unwrap()).abs() < 1e-12);
    }
}
