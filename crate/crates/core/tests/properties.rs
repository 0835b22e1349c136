//! Property-based tests: invariants that must hold on randomly generated
//! inputs, not just on the frozen reference points of the unit suite.

use chrono::{Days, NaiveDate};
use proptest::prelude::*;

use crisk_core::engine::{generate_scenarios, EngineConfig, Evaluator, ModelVariant};
use crisk_core::estimation::{fit_mixture_em, EmOptions, ReturnSeries};
use crisk_core::factor::{
    covariance_block, default_time, latent_value, pairwise_correlation, LatentSpec, Regime,
};
use crisk_core::recovery::{calibrate_adjusted_pd, state_lgd, RecoverySpec};
use crisk_core::stats::{
    pairwise_sum, std_norm_cdf, std_norm_inv_cdf, MixtureParams, NormalParams, RngStream,
};

fn prob() -> impl Strategy<Value = f64> {
    1e-4..0.5f64
}

fn loading() -> impl Strategy<Value = f64> {
    -0.99..0.99f64
}

fn mixture() -> impl Strategy<Value = MixtureParams> {
    (
        0.05..0.95f64,
        -3.0..3.0f64,
        -3.0..3.0f64,
        0.05..3.0f64,
        0.05..3.0f64,
    )
        .prop_map(|(omega, m1, m2, s1, s2)| {
            // The wider component is the hectic one by construction.
            let (hectic, quiet) = if s1 >= s2 { ((m1, s1), (m2, s2)) } else { ((m2, s2), (m1, s1)) };
            MixtureParams::new(
                omega,
                NormalParams::new(hectic.0, hectic.1).unwrap(),
                NormalParams::new(quiet.0, quiet.1).unwrap(),
            )
            .unwrap()
        })
}

proptest! {
    #[test]
    fn cdf_is_monotone_and_quantile_inverts_it(
        q1 in 1e-8..=0.99999999f64,
        q2 in 1e-8..=0.99999999f64,
    ) {
        let x1 = std_norm_inv_cdf(q1).unwrap();
        let x2 = std_norm_inv_cdf(q2).unwrap();
        if q1 < q2 {
            prop_assert!(x1 < x2);
        }
        // Round trip within the advertised 1e-10 absolute bound.
        prop_assert!((std_norm_cdf(x1) - q1).abs() <= 1e-10);
    }

    #[test]
    fn posterior_is_a_probability_everywhere(m in mixture(), z in -50.0..50.0f64) {
        let pi = m.posterior_hectic(z);
        prop_assert!((0.0..=1.0).contains(&pi), "posterior {pi} at z={z}");
        prop_assert!(pi.is_finite());
    }

    #[test]
    fn unconditional_moments_match_mixture_arithmetic(m in mixture()) {
        let u = m.unconditional();
        let mean = m.omega() * m.hectic().mean() + (1.0 - m.omega()) * m.quiet().mean();
        let var = m.omega() * m.hectic().variance()
            + (1.0 - m.omega()) * m.quiet().variance()
            + m.omega() * (1.0 - m.omega()) * (m.hectic().mean() - m.quiet().mean()).powi(2);
        prop_assert!((u.mean() - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        prop_assert!((u.variance() - var).abs() <= 1e-12 * var.max(1.0));
    }

    #[test]
    fn calibration_preserves_expected_loss(
        p in prob(),
        r in 0.0..0.95f64,
        frac in 0.0..1.0f64,
    ) {
        let r_bar = r * frac;
        let adjusted = calibrate_adjusted_pd(p, r, r_bar).unwrap();
        // The whole point of the adjustment: (1 - floor)·adjusted repays
        // (1 - base)·p, and the adjusted probability never exceeds the raw.
        let lhs = (1.0 - r_bar) * adjusted;
        let rhs = (1.0 - r) * p;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        prop_assert!(adjusted <= p + 1e-15);
    }

    #[test]
    fn covariance_block_is_positive_semidefinite(
        a_i in loading(),
        a_j in loading(),
        var_z in 0.1..9.0f64,
    ) {
        let m = covariance_block(a_i, a_j, var_z);
        prop_assert!(m[0][0] > 0.0);
        prop_assert!(m[1][1] > 0.0);
        prop_assert!((m[0][1] - m[1][0]).abs() == 0.0);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        prop_assert!(det >= -1e-12, "negative determinant {det}");
        let rho = pairwise_correlation(a_i, a_j, var_z);
        prop_assert!(rho.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn state_lgd_is_bounded_and_decreasing_in_z(
        alpha in 0.01..0.99f64,
        p in prob(),
        r in 0.05..0.9f64,
        frac in 0.0..1.0f64,
        z1 in -30.0..30.0f64,
        dz in 0.01..10.0f64,
    ) {
        let r_bar = r * frac;
        let rs = RecoverySpec::new(r, r_bar, p).unwrap();
        let spec = LatentSpec::new(NormalParams::standard(), alpha, Regime::Unconditional).unwrap();
        let z2 = z1 + dz;
        let g1 = state_lgd(z1, &spec, &rs);
        let g2 = state_lgd(z2, &spec, &rs);
        prop_assert!((0.0..=1.0 - r_bar + 1e-12).contains(&g1), "lgd {g1} out of range");
        prop_assert!(g1 >= g2, "lgd not decreasing: {g1} < {g2} at z={z1}, dz={dz}");
    }

    #[test]
    fn default_time_is_monotone_in_latent_value(
        alpha in loading(),
        p in prob(),
        u1 in -8.0..8.0f64,
        du in 0.001..4.0f64,
    ) {
        let spec = LatentSpec::new(NormalParams::standard(), alpha, Regime::Unconditional).unwrap();
        let rate = -(-p).ln_1p();
        let t1 = default_time("a", u1, rate, &spec).unwrap();
        let t2 = default_time("a", u1 + du, rate, &spec).unwrap();
        prop_assert!(t1.tau() <= t2.tau());
        prop_assert!(t1.tau() > 0.0);
    }

    #[test]
    fn latent_value_splits_into_parts(
        alpha in loading(),
        z in -10.0..10.0f64,
        eps in -10.0..10.0f64,
    ) {
        let spec = LatentSpec::new(NormalParams::standard(), alpha, Regime::Unconditional).unwrap();
        let u = latent_value(&spec, z, eps);
        let expect = alpha * z + (1.0 - alpha * alpha).sqrt() * eps;
        prop_assert!((u - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn pairwise_sum_matches_naive_summation(xs in proptest::collection::vec(-1e6..1e6f64, 0..300)) {
        let naive: f64 = xs.iter().sum();
        let pairwise = pairwise_sum(&xs);
        let scale: f64 = xs.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        prop_assert!((pairwise - naive).abs() <= 1e-9 * scale);
    }

    #[test]
    fn rng_uniforms_stay_in_open_interval(seed in any::<u64>(), substream in 0..1024u64) {
        let mut s = RngStream::new(seed, substream);
        for _ in 0..64 {
            let u = s.next_uniform();
            prop_assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn expected_loss_is_bounded_by_exposure(
        m in mixture(),
        z in -20.0..20.0f64,
        pi in 0.0..1.0f64,
    ) {
        use crisk_core::engine::{Obligor, Portfolio, Scenario};
        use crisk_core::estimation::LoadingSet;
        let rs = RecoverySpec::new(0.4, 0.1, 0.05).unwrap();
        let loadings = LoadingSet::new("a", 0.3, 0.5, 0.2).unwrap();
        let portfolio =
            Portfolio::new(vec![Obligor::new("a", 100.0, rs, loadings).unwrap()]).unwrap();
        let ev = Evaluator::new(&portfolio, &m, &EngineConfig::default()).unwrap();
        let s = Scenario::new(0, z, pi, 0.5, vec![0.0]).unwrap();
        for v in ModelVariant::ALL {
            let el = ev.expected_loss_scenario(v, &s).unwrap();
            prop_assert!((0.0..=100.0).contains(&el), "{v}: {el}");
        }
    }
}

// EM fits are too slow for the default case count.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn em_loglik_trace_never_decreases_on_random_data(
        m in mixture(),
        seed in 0..1000u64,
    ) {
        let mut stream = RngStream::new(seed, 0);
        let n = 300;
        let start = NaiveDate::from_ymd_opt(2003, 1, 1).unwrap();
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let hectic = stream.next_uniform() < m.omega();
                let comp = if hectic { m.hectic() } else { m.quiet() };
                stream.next_normal(comp)
            })
            .collect();
        let series = ReturnSeries::new(
            "prop",
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (start + Days::new(i as u64), v))
                .collect(),
        )
        .unwrap();
        let fit = fit_mixture_em(&series, &EmOptions { tol: 1e-7, max_iter: 60 }).unwrap();
        for w in fit.loglik_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "log-likelihood fell: {} -> {}", w[0], w[1]);
        }
        prop_assert!(fit.params.hectic().std() >= fit.params.quiet().std());
        prop_assert!((0.0..=1.0).contains(&fit.params.omega()));
    }

    #[test]
    fn scenario_panels_are_reproducible_for_any_seed(seed in any::<u64>()) {
        let m = MixtureParams::new(
            0.4132,
            NormalParams::new(-0.08, 1.07).unwrap(),
            NormalParams::new(0.10, 0.43).unwrap(),
        )
        .unwrap();
        let z = NormalParams::from_mean_variance(-0.03, 3.05).unwrap();
        let a = generate_scenarios(&m, &z, 3, 64, seed);
        let b = generate_scenarios(&m, &z, 3, 64, seed);
        for (sa, sb) in a.scenarios().iter().zip(b.scenarios()) {
            prop_assert!(sa.z() == sb.z());
            prop_assert!(sa.regime_u() == sb.regime_u());
            prop_assert!(sa.eps() == sb.eps());
        }
    }
}
