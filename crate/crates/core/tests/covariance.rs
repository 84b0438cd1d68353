mod common;

use common::{normal_matrix, normal_vector, random_panel, random_spd, rng, sym_eigenvalues};
use lcap::covariance::{
    build_h, sample_covariance, shrink_covariances, shrinkage_stats, shrinkage_stats_projected,
    BlockShrinkage, CovarianceSet, ShrinkageStats,
};
use lcap::data::VisitBlock;
use lcap::likelihood::ModelParams;
use lcap::panel::{BlockDesign, Design, Panel};
use lcap::LcapError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn centered_block(rows: DMatrix<f64>) -> VisitBlock {
    let q = DVector::zeros(0);
    let mut b = VisitBlock::new("a", 1, rows, q);
    b.centered = true;
    b
}

#[test]
fn sample_covariance_small_cases() {
    let s = sample_covariance(&centered_block(DMatrix::from_row_slice(
        2,
        2,
        &[-1.0, -1.0, 1.0, 1.0],
    )))
    .unwrap();
    assert_eq!(s, DMatrix::from_element(2, 2, 1.0));

    let r = 2f64.sqrt();
    let s = sample_covariance(&centered_block(DMatrix::from_row_slice(
        2,
        2,
        &[r, 0.0, 0.0, r],
    )))
    .unwrap();
    assert!((s - DMatrix::identity(2, 2)).amax() < 1e-15);
}

#[test]
fn sample_covariance_matches_double_loop() {
    let mut r = rng(1);
    let mut block = VisitBlock::new("a", 1, normal_matrix(5, 3, &mut r), DVector::zeros(0));
    block.center();
    let y = &block.observations;
    let mut expected = DMatrix::zeros(3, 3);
    for t in 0..5 {
        for a in 0..3 {
            for b in 0..3 {
                expected[(a, b)] += y[(t, a)] * y[(t, b)] / 5.0;
            }
        }
    }
    let s = sample_covariance(&block).unwrap();
    assert!((s - expected).amax() < 1e-12);
}

#[test]
fn uncentered_block_is_rejected() {
    let b = VisitBlock::new("a", 1, DMatrix::identity(3, 2), DVector::zeros(0));
    assert!(matches!(
        sample_covariance(&b),
        Err(LcapError::Precondition(_))
    ));
}

fn two_subject_panel(s1: DMatrix<f64>, s2: DMatrix<f64>, x: [f64; 2]) -> Panel {
    let blocks = vec![
        BlockDesign {
            subject: 0,
            visit: 1,
            t: 4,
            x: DVector::from_vec(vec![x[0]]),
        },
        BlockDesign {
            subject: 1,
            visit: 1,
            t: 4,
            x: DVector::from_vec(vec![x[1]]),
        },
    ];
    let design = Design::new(blocks, vec!["a".into(), "b".into()], 1).unwrap();
    Panel::new(design, vec![s1, s2]).unwrap()
}

#[test]
fn shrinkage_matches_scalar_oracle() {
    let s1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let s2 = DMatrix::from_row_slice(2, 2, &[0.5, -0.2, -0.2, 3.0]);
    let panel = two_subject_panel(s1.clone(), s2.clone(), [0.4, -1.0]);
    let params = ModelParams {
        gamma: DVector::from_vec(vec![0.6, -0.9]),
        beta0: 0.1,
        beta1: DVector::from_vec(vec![0.7]),
        beta0i: DVector::from_vec(vec![0.2, -0.3]),
        sigma2: 0.5,
    };
    let stats = shrinkage_stats(&panel, &panel.sample, &params).unwrap();

    // every displayed formula, one scalar at a time
    let g = [0.6, -0.9];
    let gg = g[0] * g[0] + g[1] * g[1];
    let quad = |s: &DMatrix<f64>| {
        g[0] * g[0] * s[(0, 0)] + 2.0 * g[0] * g[1] * s[(0, 1)] + g[1] * g[1] * s[(1, 1)]
    };
    let q = [quad(&s1), quad(&s2)];
    let fitted = [(0.2f64 + 0.7 * 0.4).exp(), (-0.3f64 - 0.7).exp()];
    let mu = (fitted[0] + fitted[1]) / (2.0 * gg);
    let mut d = [0.0; 2];
    let mut ps = [0.0; 2];
    let mut ph = [0.0; 2];
    for k in 0..2 {
        let delta = (q[k] - mu * gg).powi(2);
        let psi = ((q[k] - fitted[k]).powi(2) / 4.0).min(delta);
        d[k] = delta;
        ps[k] = psi;
        ph[k] = delta - psi;
    }
    let delta2 = (d[0] + d[1]) / 2.0;
    let psi2 = (ps[0] + ps[1]) / 2.0;
    let phi2 = (ph[0] + ph[1]) / 2.0;

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
    assert!(close(stats.mu, mu));
    assert!(close(stats.delta2, delta2));
    assert!(close(stats.psi2, psi2));
    assert!(close(stats.phi2, phi2));
    assert!(close(stats.rho, psi2 / delta2));
    for k in 0..2 {
        assert!(close(stats.per_block[k].delta2, d[k]));
        assert!(close(stats.per_block[k].psi2, ps[k]));
        assert!(close(stats.per_block[k].phi2, ph[k]));
    }
}

#[test]
fn exact_fit_gives_zero_shrinkage() {
    let s1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
    let s2 = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
    let panel = two_subject_panel(s1, s2, [0.0, 0.0]);
    let params = ModelParams {
        gamma: DVector::from_vec(vec![1.0, 0.0]),
        beta0: 0.0,
        beta1: DVector::from_vec(vec![0.0]),
        beta0i: DVector::from_vec(vec![2f64.ln(), 3f64.ln()]),
        sigma2: 1.0,
    };
    let stats = shrinkage_stats(&panel, &panel.sample, &params).unwrap();
    assert!(stats.psi2 < 1e-28);
    assert!(stats.rho < 1e-28);
    let shrunk = shrink_covariances(&panel.sample, &stats);
    assert!((shrunk.matrix(0) - panel.sample.matrix(0)).amax() < 1e-12);
}

#[test]
fn zero_dispersion_sets_rho_to_zero() {
    let design = Design::new(
        vec![BlockDesign {
            subject: 0,
            visit: 1,
            t: 3,
            x: DVector::zeros(0),
        }],
        vec!["a".into()],
        0,
    )
    .unwrap();
    let stats = shrinkage_stats_projected(&design, &[1.0], 1.0, &[0.0]).unwrap();
    assert_eq!(stats.mu, 1.0);
    assert_eq!(stats.delta2, 0.0);
    assert_eq!(stats.rho, 0.0);
}

#[test]
fn zero_projection_is_degenerate() {
    let panel = random_panel(&[1, 1], 5, 2, 1, 3);
    let params = ModelParams {
        gamma: DVector::zeros(2),
        beta0: 0.0,
        beta1: DVector::zeros(1),
        beta0i: DVector::zeros(2),
        sigma2: 1.0,
    };
    assert!(matches!(
        shrinkage_stats(&panel, &panel.sample, &params),
        Err(LcapError::DegenerateProjection)
    ));
}

fn stats_with(rho: f64, mu: f64) -> ShrinkageStats {
    ShrinkageStats {
        mu,
        delta2: 1.0,
        psi2: rho,
        phi2: 1.0 - rho,
        per_block: vec![BlockShrinkage {
            delta2: 1.0,
            psi2: rho,
            phi2: 1.0 - rho,
        }],
        rho,
    }
}

#[test]
fn shrink_limits_and_hand_value() {
    let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
    let set = CovarianceSet::sample(vec![s.clone()], vec![5.0]).unwrap();

    let none = shrink_covariances(&set, &stats_with(0.0, 2.0));
    assert_eq!(none.matrix(0), s);

    let full = shrink_covariances(&set, &stats_with(1.0, 2.0));
    assert!((full.matrix(0) - DMatrix::identity(2, 2) * 2.0).amax() < 1e-15);

    let part = shrink_covariances(&set, &stats_with(0.3, 1.5));
    let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.15, 3.25]));
    assert!((part.matrix(0) - expected).amax() < 1e-12);
}

#[test]
fn build_h_weighted_mean() {
    let id = DMatrix::<f64>::identity(3, 3);
    let set = CovarianceSet::sample(vec![id.clone(), id.clone()], vec![7.0, 2.0]).unwrap();
    assert!((build_h(&set).unwrap() - &id).amax() < 1e-15);

    let mut r = rng(9);
    let a = random_spd(3, 0.1, &mut r);
    let b = random_spd(3, 0.1, &mut r);
    let set = CovarianceSet::sample(vec![a.clone(), b.clone()], vec![1.0, 3.0]).unwrap();
    assert!((build_h(&set).unwrap() - (&a + &b * 3.0) / 4.0).amax() < 1e-12);
}

#[test]
fn build_h_matches_direct_sum() {
    let mut r = rng(10);
    let mats: Vec<DMatrix<f64>> = (0..7).map(|_| random_spd(4, 0.1, &mut r)).collect();
    let weights: Vec<f64> = (0..7).map(|k| 3.0 + k as f64).collect();
    let set = CovarianceSet::sample(mats.clone(), weights.clone()).unwrap();
    let total: f64 = weights.iter().sum();
    let mut expected = DMatrix::zeros(4, 4);
    for (m, w) in mats.iter().zip(&weights) {
        for a in 0..4 {
            for b in 0..4 {
                expected[(a, b)] += w * m[(a, b)] / total;
            }
        }
    }
    assert!((build_h(&set).unwrap() - expected).amax() < 1e-12);
}

#[test]
fn singular_h_is_rejected() {
    let v = DVector::from_vec(vec![1.0, 1.0, 0.0]);
    let rank_one = &v * v.transpose();
    let set = CovarianceSet::sample(vec![rank_one.clone(), rank_one], vec![2.0, 2.0]).unwrap();
    assert!(build_h(&set).is_err());
}

fn arb_panel() -> impl Strategy<Value = (Panel, DVector<f64>, Vec<f64>)> {
    (1usize..5, 2usize..5, 2usize..20, any::<u64>()).prop_map(|(n, p, t, seed)| {
        let visits: Vec<usize> = (0..n).map(|i| 1 + (i + seed as usize) % 3).collect();
        let mut r = rng(seed);
        let design = common::random_design(&visits, t, 1, &mut r);
        // rank-deficient sample covariances are allowed here
        let mats = (0..design.n_blocks())
            .map(|_| {
                let y = normal_matrix(t.min(p), p, &mut r);
                y.transpose() * y / t as f64
            })
            .collect();
        let panel = Panel::new(design, mats).unwrap();
        let gamma = normal_vector(p, &mut r);
        let eta = (0..panel.design.n_blocks())
            .map(|_| normal_vector(1, &mut r)[0])
            .collect();
        (panel, gamma, eta)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn shrinkage_identity_and_convexity((panel, gamma, eta) in arb_panel()) {
        let proj = panel.sample.base_projections(&gamma);
        let stats = shrinkage_stats_projected(
            &panel.design, &proj, gamma.norm_squared(), &eta).unwrap();
        prop_assert_eq!(stats.phi2 + stats.psi2, stats.delta2);
        for b in &stats.per_block {
            prop_assert_eq!(b.phi2 + b.psi2, b.delta2);
            prop_assert!(b.psi2 >= 0.0 && b.phi2 >= 0.0);
        }
        prop_assert!((0.0..=1.0).contains(&stats.rho));
        prop_assert!(stats.mu > 0.0);

        let shrunk = shrink_covariances(&panel.sample, &stats);
        for k in 0..shrunk.len() {
            let s = panel.sample.matrix(k);
            let m = shrunk.matrix(k);
            let ev_s = sym_eigenvalues(&s);
            let ev = sym_eigenvalues(&m);
            let scale = 1.0 + ev_s.last().unwrap().abs() + stats.mu;
            let lo = stats.rho * stats.mu + (1.0 - stats.rho) * ev_s[0];
            let hi = stats.rho * stats.mu + (1.0 - stats.rho) * ev_s.last().unwrap();
            prop_assert!(ev[0] >= lo - 1e-10 * scale);
            prop_assert!(*ev.last().unwrap() <= hi + 1e-10 * scale);
            prop_assert!(ev[0] >= stats.rho * stats.mu - 1e-10 * scale);
            let direct = DMatrix::identity(s.nrows(), s.nrows()) * (stats.rho * stats.mu)
                + &s * (1.0 - stats.rho);
            prop_assert!((m - direct).amax() <= 1e-12 * scale);
        }
    }

    #[test]
    fn build_h_is_order_invariant(seed in any::<u64>(), k in 2usize..8, p in 1usize..5) {
        let mut r = rng(seed);
        let mats: Vec<DMatrix<f64>> = (0..k).map(|_| random_spd(p, 0.1, &mut r)).collect();
        let weights: Vec<f64> = (0..k).map(|j| 2.0 + ((seed >> j) % 7) as f64).collect();
        let set = CovarianceSet::sample(mats.clone(), weights.clone()).unwrap();
        let rev = CovarianceSet::sample(
            mats.into_iter().rev().collect(),
            weights.into_iter().rev().collect(),
        ).unwrap();
        let (a, b) = (build_h(&set).unwrap(), build_h(&rev).unwrap());
        prop_assert!((&a - &b).amax() <= 1e-12 * (1.0 + a.amax()));
    }
}
