mod common;

use common::*;
use deconv_core::mixture::*;
use deconv_core::stats::{RngStream, SpdMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn scalar_hyper(mu0: f64, s0: f64) -> HyperParams {
    let mut h = HyperParams::empirical(&[v(&[0.0]), v(&[1.0])], false).unwrap();
    h.mu0 = v(&[mu0]);
    h.sigma0 = SpdMatrix::from_diagonal(&[s0]);
    h.psi0 = SpdMatrix::from_diagonal(&[1.0]);
    h.nu0 = 3.0;
    h
}

#[test]
fn weights_follow_count_augmented_dirichlet() {
    // n = (3, 0, 1), α = 1 → Dir(10/3, 1/3, 4/3), means (α/K + n_k) / (α + n).
    let labels = [0, 0, 0, 2];
    let mut rng = RngStream::new(5, 0);
    let mut acc = [0.0; 3];
    let draws = 100_000;
    for _ in 0..draws {
        let w = update_weights(&labels, 1.0, 3, &mut rng).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for k in 0..3 {
            acc[k] += w[k];
        }
    }
    let target = [10.0 / 15.0, 1.0 / 15.0, 4.0 / 15.0];
    for k in 0..3 {
        let m = acc[k] / draws as f64;
        assert!((m - target[k]).abs() < 0.02 * target[k], "{k}: {m} vs {}", target[k]);
    }
}

#[test]
fn weights_without_data_follow_prior() {
    let mut rng = RngStream::new(6, 0);
    let mut acc = 0.0;
    for _ in 0..100_000 {
        acc += update_weights(&[], 2.0, 4, &mut rng).unwrap()[1];
    }
    assert!((acc / 1e5 - 0.25).abs() < 0.02 * 0.25);
}

fn full_state(weights: Vec<f64>, means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> MixtureState {
    MixtureState {
        weights,
        means,
        cov: Covariances::Full(covs.into_iter().map(|c| SpdMatrix::new(c).unwrap()).collect()),
    }
}

#[test]
fn separated_components_assign_nearest() {
    let s = full_state(vec![0.5, 0.5], vec![v(&[-100.0]), v(&[100.0])], vec![DMatrix::identity(1, 1); 2]);
    let mut rng = RngStream::new(7, 0);
    let pts = vec![v(&[-100.0]); 10_000];
    assert!(update_labels(&pts, &s, &mut rng).unwrap().iter().all(|&c| c == 0));
}

#[test]
fn label_frequencies_match_normalized_responsibilities() {
    let covs = vec![
        DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]),
        DMatrix::from_row_slice(2, 2, &[2.0, -0.4, -0.4, 1.0]),
        DMatrix::identity(2, 2) * 0.7,
    ];
    let means = vec![v(&[0.0, 0.5]), v(&[1.0, -0.5]), v(&[0.4, 0.2])];
    let weights = vec![0.2, 0.5, 0.3];
    let s = full_state(weights.clone(), means.clone(), covs.clone());
    let x = [0.3, 0.1];
    // Direct density formula for the 2×2 case.
    let dens = |m: &DVector<f64>, c: &DMatrix<f64>| {
        let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
        let (a, b) = (x[0] - m[0], x[1] - m[1]);
        let q = (c[(1, 1)] * a * a - 2.0 * c[(0, 1)] * a * b + c[(0, 0)] * b * b) / det;
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    };
    let raw: Vec<f64> = (0..3).map(|k| weights[k] * dens(&means[k], &covs[k])).collect();
    let total: f64 = raw.iter().sum();
    let mut rng = RngStream::new(8, 0);
    let pts = vec![v(&x); 100_000];
    let labels = update_labels(&pts, &s, &mut rng).unwrap();
    let counts = label_counts(&labels, 3).unwrap();
    for k in 0..3 {
        let f = counts[k] as f64 / 1e5;
        assert!((f - raw[k] / total).abs() < 0.01, "{k}: {f} vs {}", raw[k] / total);
    }
}

#[test]
fn empty_component_mean_is_prior_draw() {
    let h = scalar_hyper(3.0, 4.0);
    let mut rng = RngStream::new(9, 0);
    let xs: Vec<f64> = (0..100_000)
        .map(|_| update_means(&[], &[], &[DMatrix::identity(1, 1)], &h.mu0, &h.sigma0, &mut rng).unwrap()[0][0])
        .collect();
    let d = ks_one_sample(xs, |x| phi((x - 3.0) / 2.0));
    assert!(d < ks_critical_one(100_000, 0.001), "KS {d}");
}

#[test]
fn scalar_conjugate_mean_update() {
    // One point x = 2, σ² = 1, prior N(0, 1) → N(1, 1/2).
    let h = scalar_hyper(0.0, 1.0);
    let mut rng = RngStream::new(10, 0);
    let post = mean_posteriors(&[v(&[2.0])], &[0], &[DMatrix::identity(1, 1)], &h.mu0, &h.sigma0).unwrap();
    assert!((post[0].mean[0] - 1.0).abs() < 1e-14);
    assert!((post[0].covariance()[(0, 0)] - 0.5).abs() < 1e-14);
    let xs: Vec<f64> = (0..100_000)
        .map(|_| update_means(&[v(&[2.0])], &[0], &[DMatrix::identity(1, 1)], &h.mu0, &h.sigma0, &mut rng).unwrap()[0][0])
        .collect();
    let d = ks_one_sample(xs, |x| phi((x - 1.0) / 0.5f64.sqrt()));
    assert!(d < ks_critical_one(100_000, 0.001), "KS {d}");
}

#[test]
fn diffuse_prior_mean_tracks_cluster_average() {
    let mut rng = RngStream::new(11, 0);
    let pts: Vec<_> = (0..2000).map(|i| v(&[(i % 7) as f64 * 0.3 + 1.0, (i % 5) as f64 - 2.0])).collect();
    let labels = vec![0; pts.len()];
    let avg = pts.iter().fold(DVector::zeros(2), |a, x| a + x) / pts.len() as f64;
    let sigma0 = SpdMatrix::from_diagonal(&[1e12, 1e12]);
    let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.8]);
    let draws: Vec<DVector<f64>> = (0..4000)
        .map(|_| update_means(&pts, &labels, &[cov.clone()], &DVector::zeros(2), &sigma0, &mut rng).unwrap().remove(0))
        .collect();
    for c in 0..2 {
        let xs: Vec<f64> = draws.iter().map(|d| d[c]).collect();
        let se = (cov[(c, c)] / pts.len() as f64 / xs.len() as f64).sqrt();
        assert!((mean(&xs) - avg[c]).abs() < 5.0 * se, "{c}");
    }
}

#[test]
fn empty_component_covariance_is_prior_draw() {
    // p = 1: IW(ν0, ψ0) is InvGamma(ν0/2, ψ0/2).
    let mut h = scalar_hyper(0.0, 1.0);
    h.nu0 = 5.0;
    h.psi0 = SpdMatrix::from_diagonal(&[2.0]);
    let mut rng = RngStream::new(12, 0);
    let xs: Vec<f64> = (0..50_000)
        .map(|_| update_covs_miw(&[], &[], &[v(&[0.0])], &h, &mut rng).unwrap()[0].as_matrix()[(0, 0)])
        .collect();
    let d = ks_one_sample(xs, |x| statrs::function::gamma::gamma_ur(2.5, 1.0 / x));
    assert!(d < ks_critical_one(50_000, 0.001), "KS {d}");
}

#[test]
fn scalar_covariance_update_matches_inverse_gamma() {
    // Points {1, -2, 0.5} about μ = 0, ν0 = 3, ψ0 = 1 → IG((3 + 3)/2, (1 + 5.25)/2).
    let h = scalar_hyper(0.0, 1.0);
    let pts = [v(&[1.0]), v(&[-2.0]), v(&[0.5])];
    let mut rng = RngStream::new(13, 0);
    let xs: Vec<f64> = (0..50_000)
        .map(|_| update_covs_miw(&pts, &[0, 0, 0], &[v(&[0.0])], &h, &mut rng).unwrap()[0].as_matrix()[(0, 0)])
        .collect();
    let d = ks_one_sample(xs, |x| statrs::function::gamma::gamma_ur(3.0, 6.25 / 2.0 / x));
    assert!(d < ks_critical_one(50_000, 0.001), "KS {d}");
}

#[test]
fn covariance_update_consistent_for_large_cluster() {
    let target = DMatrix::from_row_slice(2, 2, &[1.5, 0.6, 0.6, 1.0]);
    let chol = target.clone().cholesky().unwrap().l();
    let mut rng = RngStream::new(14, 0);
    let pts: Vec<_> = (0..5000).map(|_| &chol * v(&[rng.std_normal(), rng.std_normal()])).collect();
    let labels = vec![0; pts.len()];
    let h = HyperParams::empirical(&pts, false).unwrap();
    let mut acc = DMatrix::zeros(2, 2);
    for _ in 0..200 {
        acc += update_covs_miw(&pts, &labels, &[DVector::zeros(2)], &h, &mut rng).unwrap()[0].as_matrix();
    }
    acc /= 200.0;
    for i in 0..2 {
        for j in 0..2 {
            assert!((acc[(i, j)] - target[(i, j)]).abs() < 0.1 * target[(i, j)], "{i}{j}: {}", acc[(i, j)]);
        }
    }
}

#[test]
fn scalar_loading_matches_regression_oracle() {
    // p = q = 1: λ | η, x ~ N(m, v) with v = 1/(φτ + Σηᵢ²/σ²), m = v Σηᵢxᵢ/σ².
    let mut block = FactorBlock::zeroed(CovarianceModel::Mlfa, 1, 1, 4, &[0.5]);
    block.local_shrink[0][(0, 0)] = 2.0;
    block.global_incr[0] = vec![1.5];
    let etas = [0.3, -1.2, 0.8, 2.0];
    let xs = [0.4, -0.9, 1.1, 1.7];
    for (f, e) in block.factors.iter_mut().zip(etas) {
        *f = v(&[e]);
    }
    let pts: Vec<_> = xs.iter().map(|&x| v(&[x])).collect();
    let prec = 3.0 + etas.iter().map(|e| e * e).sum::<f64>() / 0.5;
    let m = etas.iter().zip(xs).map(|(e, x)| e * x).sum::<f64>() / 0.5 / prec;
    let sd = (1.0 / prec).sqrt();
    let mut rng = RngStream::new(15, 0);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            update_loadings(&pts, &[0; 4], &[v(&[0.0])], &mut block, &mut rng).unwrap();
            block.loadings[0][(0, 0)]
        })
        .collect();
    let d = ks_one_sample(draws, |x| phi((x - m) / sd));
    assert!(d < ks_critical_one(100_000, 0.001), "KS {d}");
}

#[test]
fn factor_covariances_stay_spd_after_updates() {
    let mut rng = RngStream::new(16, 0);
    let pts: Vec<_> = (0..60).map(|i| v(&[(i as f64).sin() * 3.0, (i as f64 * 0.7).cos(), i as f64 * 0.05, 1.0])).collect();
    let h = HyperParams::empirical(&pts, false).unwrap();
    for model in [CovarianceModel::Mlfa, CovarianceModel::Mlfad] {
        let mut state = sample_prior(model, 3, 2, pts.len(), &h, &mut rng).unwrap();
        let mut labels: Vec<usize> = (0..pts.len()).map(|i| i % 3).collect();
        for _ in 0..50 {
            gibbs_sweep(&pts, &mut labels, &mut state, &h, &mut rng).unwrap();
            state.validate().unwrap();
            for c in state.covariances() {
                assert!(c.symmetric_eigenvalues().min() > 0.0);
            }
        }
    }
}

#[test]
fn identical_components_collapse() {
    let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.3]);
    let two = full_state(vec![0.5, 0.5], vec![v(&[1.0, 2.0]); 2], vec![c.clone(); 2]);
    let one = full_state(vec![1.0], vec![v(&[1.0, 2.0])], vec![c]);
    for x in [[0.0, 0.0], [1.0, 2.5], [-3.0, 4.0]] {
        let (a, b) = (mixture_density(&two, &x), mixture_density(&one, &x));
        assert!((a - b).abs() <= 1e-13 * b);
    }
}

#[test]
fn density_integrates_to_one_in_two_dimensions() {
    let mut rng = RngStream::new(17, 0);
    let pts: Vec<_> = (0..30).map(|_| v(&[rng.std_normal(), rng.std_normal()])).collect();
    let h = HyperParams::empirical(&pts, false).unwrap();
    let s = sample_prior(CovarianceModel::Miw, 3, 2, 0, &h, &mut rng).unwrap();
    // Box of ±12 sd around every mean, midpoint rule.
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for k in 0..3 {
        let c = s.covariance(k);
        for d in 0..2 {
            lo[d] = lo[d].min(s.means[k][d] - 12.0 * c[(d, d)].sqrt());
            hi[d] = hi[d].max(s.means[k][d] + 12.0 * c[(d, d)].sqrt());
        }
    }
    let g = 1500;
    let (dx, dy) = ((hi[0] - lo[0]) / g as f64, (hi[1] - lo[1]) / g as f64);
    let mix = GaussianMixture::from_state(&s).unwrap();
    let mut total = 0.0;
    for i in 0..g {
        for j in 0..g {
            total += mix.density(&[lo[0] + (i as f64 + 0.5) * dx, lo[1] + (j as f64 + 0.5) * dy]);
        }
    }
    total *= dx * dy;
    assert!((total - 1.0).abs() < 1e-3, "{total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn density_invariant_under_relabeling(seed in 0u64..10_000, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, mlfa in any::<bool>()) {
        let mut rng = RngStream::new(seed, 1);
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, -1.0]), v(&[-0.5, 2.0])];
        let h = HyperParams::empirical(&pts, false).unwrap();
        let model = if mlfa { CovarianceModel::Mlfa } else { CovarianceModel::Miw };
        let s = sample_prior(model, 4, 2, 0, &h, &mut rng).unwrap();
        let perm = [2, 0, 3, 1];
        let a = mixture_density(&s, &[x0, x1]);
        let b = mixture_density(&s.permuted(&perm), &[x0, x1]);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
    }
}
