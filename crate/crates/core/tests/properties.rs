use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ptl::estimator::{fit_ptl_with_basis, SourceBasis};
use ptl::{decompose, gram_products, make_folds, DataSet, PtlConfig};

fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
}

fn spd(p: usize, seed: u64) -> DMatrix<f64> {
    let a = gaussian(p, p, seed);
    a.tr_mul(&a) / p as f64 + DMatrix::identity(p, p) * 0.5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition(n in 2usize..200, f in 2usize..12, seed in any::<u64>()) {
        prop_assume!(f <= n);
        let folds = make_folds(n, f, seed).unwrap();
        let mut seen = vec![0usize; n];
        for k in 0..f {
            for i in folds.held_out(k) {
                seen[i] += 1;
            }
            prop_assert_eq!(folds.held_out(k).len() + folds.training(k).len(), n);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = (0..f).map(|k| folds.held_out(k).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn gram_matches_naive(n in 1usize..50, p in 1usize..50, seed in any::<u64>()) {
        let x = gaussian(n, p, seed) * 3.0;
        let y = gaussian(n, 1, seed ^ 1).column(0).into_owned();
        let g = gram_products(&x, &y).unwrap();
        for a in 0..p {
            let mut c = 0.0;
            for i in 0..n {
                c += x[(i, a)] * y[i];
            }
            c /= n as f64;
            prop_assert!((g.xty[a] - c).abs() <= 1e-12 * (1.0 + c.abs()));
            for b in 0..p {
                let mut s = 0.0;
                for i in 0..n {
                    s += x[(i, a)] * x[(i, b)];
                }
                s /= n as f64;
                prop_assert!((g.xtx[(a, b)] - s).abs() <= 1e-12 * (1.0 + s.abs()));
            }
        }
    }

    #[test]
    fn decompose_idempotent(seed in any::<u64>(), k in 1usize..4) {
        let p = 8;
        let b = gaussian(p, k, seed);
        let sigma = spd(p, seed ^ 7);
        let raw = gaussian(p, 1, seed ^ 9).column(0).into_owned();
        let (_, delta) = decompose(&raw, &b, &sigma).unwrap();
        let w0 = gaussian(k, 1, seed ^ 11).column(0).into_owned();
        let beta = &b * &w0 + &delta;
        let (w, d) = decompose(&beta, &b, &sigma).unwrap();
        prop_assert!((&w - &w0).amax() <= 1e-8);
        prop_assert!((&d - &delta).amax() <= 1e-8);
    }

    #[test]
    fn decompose_shift_invariant(seed in any::<u64>(), shift in proptest::collection::vec(-3.0f64..3.0, 3)) {
        let (p, k) = (10, 3);
        let b = gaussian(p, k, seed);
        let sigma = spd(p, seed ^ 3);
        let w = gaussian(k, 1, seed ^ 5).column(0).into_owned();
        let delta = gaussian(p, 1, seed ^ 6).column(0).into_owned();
        let c = DVector::from_vec(shift);
        let beta_a = &b * &w + &delta;
        let beta_b = &b * (&w - &c) + (&delta + &b * &c);
        let (wa, da) = decompose(&beta_a, &b, &sigma).unwrap();
        let (wb, db) = decompose(&beta_b, &b, &sigma).unwrap();
        prop_assert!((&wa - &wb).amax() <= 1e-8);
        prop_assert!((&da - &db).amax() <= 1e-8);
    }
}

fn permutation_case(seed: u64) {
    let (n, p) = (60, 12);
    let x = gaussian(n, p, seed);
    let b = DMatrix::from_fn(p, 2, |j, k| if (j + k) % 3 == 0 { 1.0 } else { 0.0 });
    let mut delta = DVector::zeros(p);
    delta[p - 1] = 0.7;
    let noise = gaussian(n, 1, seed ^ 2).column(0) * 0.3;
    let y = &x * (&b * DVector::from_vec(vec![1.0, -0.5]) + &delta) + noise;
    let config = PtlConfig { seed: 5, ..PtlConfig::default() };
    let fit = fit_ptl_with_basis(SourceBasis::from_matrix(b.clone()).unwrap(), &DataSet::new(x.clone(), y.clone()).unwrap(), &config).unwrap();

    let perm: Vec<usize> = (0..p).rev().collect();
    let xp = x.select_columns(&perm);
    let bp = b.select_rows(&perm);
    let fit_p = fit_ptl_with_basis(SourceBasis::from_matrix(bp).unwrap(), &DataSet::new(xp, y).unwrap(), &config).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert!((fit_p.beta_hat[new] - fit.beta_hat[old]).abs() < 1e-6);
    }
}

#[test]
fn ptl_permutation_equivariant() {
    for seed in 0..5 {
        permutation_case(seed);
    }
}

#[test]
fn assembly_identity_is_exact() {
    for seed in 0..5 {
        let x = gaussian(40, 15, seed);
        let b = gaussian(15, 3, seed ^ 1);
        let y = gaussian(40, 1, seed ^ 2).column(0).into_owned();
        let fit = fit_ptl_with_basis(SourceBasis::from_matrix(b.clone()).unwrap(), &DataSet::new(x, y).unwrap(), &PtlConfig::default()).unwrap();
        assert_eq!(fit.beta_hat, &b * &fit.w_hat + &fit.delta_hat);
    }
}

/// Dense grid over `w` minimising `‖Σ^{1/2}(β − Bw)‖²`.
#[test]
fn decompose_matches_grid_search() {
    for seed in 0..4 {
        let (p, k) = (6, 2);
        let b = gaussian(p, k, 100 + seed);
        let sigma = spd(p, 200 + seed);
        let beta = gaussian(p, 1, 300 + seed).column(0).into_owned();
        let (w, _) = decompose(&beta, &b, &sigma).unwrap();

        let objective = |cand: &DVector<f64>| {
            let r = &beta - &b * cand;
            r.dot(&(&sigma * &r))
        };
        let search = |centre: [f64; 2], half: i32, step: f64| {
            let mut best = (f64::INFINITY, DVector::zeros(k));
            for i in -half..=half {
                for j in -half..=half {
                    let cand = DVector::from_vec(vec![centre[0] + i as f64 * step, centre[1] + j as f64 * step]);
                    let q = objective(&cand);
                    if q < best.0 {
                        best = (q, cand);
                    }
                }
            }
            best.1
        };
        let coarse = search([0.0, 0.0], 200, 0.05);
        let step = 0.001;
        let best = search([coarse[0], coarse[1]], 100, step);
        assert!((&best - &w).amax() <= step, "grid {best:?} vs {w:?}");
    }
}
