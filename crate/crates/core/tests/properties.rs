//! Cross-module invariants checked on random inputs.

#[path = "common/oracles.rs"]
mod oracles;

use mclab::concentration::{closed_form_params, MultiplierFamily};
use mclab::prox::{prox_nuclear_inf, svt, ProxParams};
use mclab::rng::derive_seed;
use mclab::{
    fit, generate_low_rank, sample_observations, Dims, Estimator, EstimatorSpec, NoiseModel,
    SamplingDistribution, SolverConfig,
};
use proptest::prelude::*;

fn weights(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, len)
}

fn product(m1: usize, m2: usize) -> impl Strategy<Value = SamplingDistribution> {
    (weights(m1), weights(m2)).prop_map(|(r, c)| SamplingDistribution::product(&r, &c).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn product_distribution_is_normalized(p in (1usize..6, 1usize..6).prop_flat_map(|(a, b)| product(a, b))) {
        let total: f64 = p.probs().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(p.probs().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn closed_forms_match_dense_oracle(
        p in (2usize..5, 2usize..5).prop_flat_map(|(a, b)| product(a, b)),
        n in 1usize..500,
    ) {
        let fam = MultiplierFamily::rademacher();
        let ours = closed_form_params(&p, &fam, n).unwrap();
        let (gamma, gamma_star, g, r) = oracles::brute_force_params(&p, 1.0, Some(1.0), n);
        prop_assert!(rel(ours.gamma, gamma) < 1e-9, "gamma {} vs {}", ours.gamma, gamma);
        prop_assert!(rel(ours.gamma_star, gamma_star) < 1e-6, "gamma* {} vs {}", ours.gamma_star, gamma_star);
        prop_assert!(rel(ours.g, g) < 1e-6);
        prop_assert!(rel(ours.r, r) < 1e-12);
    }

    #[test]
    fn observations_land_on_support_and_roundtrip(seed in any::<u64>(), n in 1usize..200) {
        let dims = Dims::new(4, 6).unwrap();
        let truth = generate_low_rank(dims, 2, 1.0, seed).unwrap();
        let probs = (0..24).map(|i| if i / 6 == 1 { 0.0 } else { 1.0 / 18.0 }).collect();
        let p = SamplingDistribution::from_probs(dims, probs).unwrap();
        let obs = sample_observations(&truth, &p, &NoiseModel::none(), n, derive_seed(seed, &[1])).unwrap();
        prop_assert_eq!(obs.len(), n);
        for o in obs.records() {
            prop_assert!(o.row != 1);
            prop_assert_eq!(o.y, truth.matrix().get(o.row, o.col));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        obs.write_csv(&path).unwrap();
        let back = mclab::ObservationSet::read_csv(&path, dims).unwrap();
        prop_assert_eq!(back.records(), obs.records());
    }

    #[test]
    fn prox_is_feasible_and_beats_plain_projection(seed in any::<u64>(), lambda in 0.0f64..2.0) {
        let a = generate_low_rank(Dims::new(5, 4).unwrap(), 3, 2.0, seed).unwrap();
        let x = prox_nuclear_inf(a.matrix(), &ProxParams::new(lambda, 1.0)).unwrap().matrix;
        prop_assert!(x.norm_inf() <= 1.0 + 1e-12);
        let clipped = a.matrix().map(|v| v.clamp(-1.0, 1.0));
        let f = |m: &mclab::DenseMatrix| mclab::prox::prox_objective(m, a.matrix(), lambda).unwrap();
        prop_assert!(f(&x) <= f(&clipped) + 1e-8);
    }

    #[test]
    fn svt_shrinks_every_singular_value(seed in any::<u64>(), theta in 0.0f64..3.0) {
        let a = generate_low_rank(Dims::new(4, 5).unwrap(), 4, 1.0, seed).unwrap();
        let before = a.matrix().singular_values().unwrap();
        let after = svt(a.matrix(), theta).unwrap().singular_values().unwrap();
        for (s, t) in before.iter().zip(&after) {
            prop_assert!((t - (s - theta).max(0.0)).abs() <= 1e-9 * (1.0 + s));
        }
    }
}

#[test]
fn fit_is_deterministic_and_feasible() {
    let dims = Dims::square(8).unwrap();
    let truth = generate_low_rank(dims, 2, 1.0, 11).unwrap();
    let p = SamplingDistribution::uniform(dims);
    let noise = NoiseModel::student_t(2.5, 0.5).unwrap();
    let obs = sample_observations(&truth, &p, &noise, 400, 12).unwrap();
    for est in [
        Estimator::LeastSquares,
        Estimator::Huber,
        Estimator::SquareRoot,
    ] {
        let spec = EstimatorSpec::explicit(est, 0.05, Some(0.8), 1.0);
        let a = fit(&obs, &spec, &SolverConfig::default()).unwrap();
        let b = fit(&obs, &spec, &SolverConfig::default()).unwrap();
        assert_eq!(a.estimate, b.estimate, "{est:?}");
        assert!(a.estimate.norm_inf() <= 1.0 + 1e-12);
        assert!(a.converged, "{est:?} kkt {}", a.kkt_residual);
    }
}
