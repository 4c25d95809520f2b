use proptest::prelude::*;

use dispca::linalg::Matrix;
use dispca::sketching::{
    apply_countsketch, boost_embedding, distortion, gaussian_matrix, pair_passes, plan_countsketch, probe_ratio_distortion,
    EmbeddingCandidate,
};
use dispca::synth::sparse_decaying;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear(n in 1usize..40, d in 1usize..6, ell in 1usize..30, seed in any::<u64>()) {
        let plan = plan_countsketch(n, ell, seed);
        let a = gaussian_matrix(n, d, seed ^ 1);
        let b = gaussian_matrix(n, d, seed ^ 2);
        let lhs = apply_countsketch(&plan, &a.add(&b).unwrap()).unwrap();
        let rhs = apply_countsketch(&plan, &a).unwrap().add(&apply_countsketch(&plan, &b).unwrap()).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-12 * (1.0 + lhs.max_abs()));
    }

    #[test]
    fn never_adds_nonzeros(n in 1usize..200, d in 1usize..20, ell in 1usize..300, seed in any::<u64>()) {
        let plan = plan_countsketch(n, ell, seed);
        let a = sparse_decaying(n, d, 0.1, seed ^ 3);
        prop_assert!(apply_countsketch(&plan, &a).unwrap().nnz() <= a.nnz());
    }

    #[test]
    fn plan_is_well_formed(n in 1usize..100, ell in 1usize..50, seed in any::<u64>()) {
        let plan = plan_countsketch(n, ell, seed);
        prop_assert_eq!(plan.bucket_of().len(), n);
        prop_assert!(plan.bucket_of().iter().all(|&b| b < ell));
        prop_assert!(plan.sign_of().iter().all(|&s| s == 1 || s == -1));
        prop_assert_eq!(plan.seed(), Some(seed));
        prop_assert_eq!(plan, plan_countsketch(n, ell, seed));
    }
}

#[test]
fn unbiased_in_expectation() {
    let (n, d, eps) = (200, 4, 0.5);
    let ell = ((d * d) as f64 / (eps * eps)).ceil() as usize;
    let a = gaussian_matrix(n, d, 1);
    let y = [0.3, -0.5, 0.8, 0.1];
    let ay: Vec<f64> = a.row_iter().map(|r| r.iter().zip(&y).map(|(x, z)| x * z).sum()).collect();
    let target: f64 = ay.iter().map(|v| v * v).sum();
    let mut mean = 0.0;
    for seed in 0..500 {
        let plan = plan_countsketch(n, ell, 100 + seed);
        let col = Matrix::from_vec(n, 1, ay.clone()).unwrap();
        mean += apply_countsketch(&plan, &col).unwrap().frobenius_sq();
    }
    mean /= 500.0;
    assert!((mean - target).abs() <= 0.05 * target, "mean {mean} vs {target}");
}

#[test]
fn distortion_at_sized_sketch() {
    let (n, d, eps) = (200, 4, 0.1);
    let ell = ((d * d) as f64 / (eps * eps)).ceil() as usize;
    assert_eq!(ell, 1600);
    let mut ok = 0;
    for trial in 0..100 {
        let a = gaussian_matrix(n, d, 500 + trial);
        let plan = plan_countsketch(n, ell, 700 + trial);
        if distortion(&plan, &a, 100, 900 + trial).unwrap() <= eps {
            ok += 1;
        }
    }
    assert!(ok >= 95, "{ok}/100");
}

// the singular-value band test agrees with probing the ratio of the two
// embeddings over many directions
#[test]
fn band_test_matches_probing() {
    let (n, d, eps) = (120, 3, 0.6);
    let a = gaussian_matrix(n, d, 42);
    let cands: Vec<EmbeddingCandidate> = (0..12)
        .map(|j| {
            let plan = plan_countsketch(n, 40 + 15 * j as usize, 1000 + j);
            let emb = apply_countsketch(&plan, &a).unwrap();
            EmbeddingCandidate::new(plan, emb).unwrap()
        })
        .collect();
    let mut checked = 0;
    for i in 0..cands.len() {
        for j in 0..cands.len() {
            if i == j || cands[i].is_rank_deficient() || cands[j].is_rank_deficient() {
                continue;
            }
            let band = pair_passes(&cands[i], &cands[j], eps).unwrap();
            let ratio = probe_ratio_distortion(&cands[i].embedded, &cands[j].embedded, 200, 77);
            // probes can only under-estimate the max; both sides of the slack
            let probed_pass = ratio <= eps / 3.0 + 0.02;
            if band {
                assert!(probed_pass, "band passed but probes saw {ratio}");
            } else if ratio < eps / 3.0 - 0.02 {
                panic!("band failed but probes saw only {ratio}");
            }
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn boosted_distortion() {
    let (n, d, eps, delta) = (300, 3, 0.3, 0.05);
    let mut ok = 0;
    for trial in 0..50 {
        let a = gaussian_matrix(n, d, 3000 + trial);
        let (plan, full) = boost_embedding(&a, eps, delta, 4000 + trial).unwrap();
        assert_eq!(full.rows(), plan.output_rows());
        if distortion(&plan, &a, 100, 5000 + trial).unwrap() <= eps {
            ok += 1;
        }
    }
    assert!(ok >= 47, "{ok}/50");
}
