//! The one-factor latent-variable model with a non-standardized systematic
//! factor: latent firm values, the implied pairwise asset correlations,
//! conditional default probabilities given the factor, and default times.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{std_norm_cdf, NormalParams, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum FactorError {
    #[error("factor loading must be finite, got {0}")]
    NonFiniteLoading(f64),
    #[error("default probability must lie strictly inside (0, 1), got {0}")]
    BadProbability(f64),
    #[error("default intensity must be finite and > 0, got {0}")]
    BadIntensity(f64),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Which regime's loading a latent spec carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Hectic,
    Quiet,
    Unconditional,
}

/// The latent-variable law of one obligor: U = alpha·Z + sqrt(1-alpha²)·eps
/// with Z ~ `z_dist` and standard-normal eps. The loading is clipped
/// strictly inside (-1, 1) so the idiosyncratic scale never vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentSpec {
    z_dist: NormalParams,
    loading: f64,
    regime: Regime,
}

impl LatentSpec {
    pub fn new(z_dist: NormalParams, loading: f64, regime: Regime) -> Result<Self, FactorError> {
        if !loading.is_finite() {
            return Err(FactorError::NonFiniteLoading(loading));
        }
        Ok(Self {
            z_dist,
            loading: loading.clamp(-crate::estimation::LOADING_CLIP, crate::estimation::LOADING_CLIP),
            regime,
        })
    }

    pub fn z_dist(&self) -> &NormalParams {
        &self.z_dist
    }

    pub fn loading(&self) -> f64 {
        self.loading
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// sqrt(1 - alpha²), the idiosyncratic scale.
    #[inline]
    pub fn idio_scale(&self) -> f64 {
        (1.0 - self.loading * self.loading).sqrt()
    }

    /// The marginal law of U: mean alpha·mu_Z, std sqrt(alpha²·var_Z + 1-alpha²).
    pub fn latent_cdf_params(&self) -> NormalParams {
        let a = self.loading;
        let mean = a * self.z_dist.mean();
        let var = a * a * self.z_dist.variance() + (1.0 - a * a);
        NormalParams::from_mean_variance(mean, var)
            .expect("latent variance is positive for |alpha| < 1")
    }
}

/// A default time in years, paired with the obligor it belongs to.
/// `tau` is `f64::INFINITY` when the latent value sits so deep in the upper
/// tail that survival is certain at machine precision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefaultTime {
    obligor_id: String,
    tau: f64,
}

impl DefaultTime {
    pub fn obligor_id(&self) -> &str {
        &self.obligor_id
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// 1 iff the obligor defaults within the horizon (boundary inclusive).
    pub fn indicator(&self, horizon_t: f64) -> u8 {
        u8::from(self.tau <= horizon_t)
    }
}

/// Latent firm value u = alpha·z + sqrt(1-alpha²)·eps.
#[inline]
pub fn latent_value(spec: &LatentSpec, z: f64, eps: f64) -> f64 {
    spec.loading() * z + spec.idio_scale() * eps
}

/// Default probability conditional on the factor realization:
/// Phi((q - alpha·z) / sqrt(1-alpha²)) with q the hazard_p-quantile of the
/// marginal latent law.
pub fn conditional_pd(hazard_p: f64, spec: &LatentSpec, z: f64) -> Result<f64, FactorError> {
    if !(hazard_p > 0.0 && hazard_p < 1.0) {
        return Err(FactorError::BadProbability(hazard_p));
    }
    let q = spec.latent_cdf_params().inv_cdf(hazard_p)?;
    Ok(std_norm_cdf((q - spec.loading() * z) / spec.idio_scale()))
}

/// Default time tau = -ln(1 - F(u)) / rate, with F the marginal latent CDF.
/// `rate` is a positive intensity: pass the one-year default probability for
/// the verbatim textbook mapping, or -ln(1 - P) to make the one-year event
/// {tau <= 1} exactly equivalent to {F(u) <= P} (the engine does the
/// latter). F(u) at 1 to machine precision yields tau = +infinity.
pub fn default_time(
    obligor_id: impl Into<String>,
    u: f64,
    rate: f64,
    spec: &LatentSpec,
) -> Result<DefaultTime, FactorError> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(FactorError::BadIntensity(rate));
    }
    let f = spec.latent_cdf_params().cdf(u);
    let tau = if f >= 1.0 {
        f64::INFINITY
    } else {
        // ln_1p keeps precision when F(u) is tiny (tau near zero).
        -(-f).ln_1p() / rate
    };
    Ok(DefaultTime { obligor_id: obligor_id.into(), tau })
}

/// 1 iff tau <= horizon (the boundary itself counts as default).
pub fn default_indicator(tau: &DefaultTime, horizon_t: f64) -> u8 {
    tau.indicator(horizon_t)
}

/// Pairwise latent correlation implied by loadings and the factor variance:
/// rho = a_i·a_j·var_z / (sigma_i·sigma_j) with sigma² = a²(var_z - 1) + 1.
#[inline]
pub fn pairwise_correlation(alpha_i: f64, alpha_j: f64, var_z: f64) -> f64 {
    let si = (alpha_i * alpha_i * (var_z - 1.0) + 1.0).sqrt();
    let sj = (alpha_j * alpha_j * (var_z - 1.0) + 1.0).sqrt();
    alpha_i * alpha_j * var_z / (si * sj)
}

/// The 2x2 latent covariance block for a pair of obligors; symmetric and
/// positive semidefinite by construction.
pub fn covariance_block(alpha_i: f64, alpha_j: f64, var_z: f64) -> [[f64; 2]; 2] {
    let vi = alpha_i * alpha_i * (var_z - 1.0) + 1.0;
    let vj = alpha_j * alpha_j * (var_z - 1.0) + 1.0;
    let off = pairwise_correlation(alpha_i, alpha_j, var_z) * vi.sqrt() * vj.sqrt();
    [[vi, off], [off, vj]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn crisis_z() -> NormalParams {
        NormalParams::from_mean_variance(-0.03, 3.05).unwrap()
    }

    fn spec(z: NormalParams, a: f64) -> LatentSpec {
        LatentSpec::new(z, a, Regime::Unconditional).unwrap()
    }

    // Expected constants below were computed independently with a 50-digit
    // arbitrary-precision evaluation of the closed forms.

    #[test]
    fn latent_value_matches_arithmetic() {
        let s = spec(NormalParams::standard(), 0.6);
        assert_abs_diff_eq!(latent_value(&s, 1.0, 0.5), 1.0, epsilon = 1e-15);
        let pure_idio = spec(NormalParams::standard(), 0.0);
        assert_eq!(latent_value(&pure_idio, 3.0, 0.5), 0.5);
        let near_systematic = spec(NormalParams::standard(), 0.9999);
        // Loading clips to 0.999, so u is dominated by z.
        assert_eq!(near_systematic.loading(), 0.999);
        assert_relative_eq!(
            latent_value(&near_systematic, 2.0, 0.0),
            1.998,
            max_relative = 1e-12
        );
    }

    #[test]
    fn latent_cdf_params_match_reference_values() {
        let s = spec(crisis_z(), 0.5);
        let p = s.latent_cdf_params();
        assert_relative_eq!(p.mean(), -0.015, max_relative = 1e-15);
        assert_relative_eq!(p.std(), 1.2298373876248843, max_relative = 1e-15);
        // Standardized factor: U keeps unit variance for any loading.
        for a in [0.0, 0.3, 0.999] {
            let p = spec(NormalParams::standard(), a).latent_cdf_params();
            assert_abs_diff_eq!(p.mean(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(p.std(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn pairwise_correlation_matches_reference_values() {
        assert_relative_eq!(
            pairwise_correlation(0.5, 0.5, 3.05),
            0.50413223140495868,
            max_relative = 1e-14
        );
        assert_eq!(pairwise_correlation(0.0, 0.7, 3.05), 0.0);
        // Unit factor variance reduces to the loading product.
        assert_abs_diff_eq!(
            pairwise_correlation(0.37, -0.52, 1.0),
            0.37 * -0.52,
            epsilon = 1e-15
        );
    }

    #[test]
    fn covariance_block_matches_reference_values() {
        let m = covariance_block(0.5, 0.3, 3.05);
        assert_relative_eq!(m[0][0], 1.5125, max_relative = 1e-15);
        assert_relative_eq!(m[1][1], 1.1845, max_relative = 1e-15);
        assert_relative_eq!(m[0][1], 0.4575, max_relative = 1e-14);
        assert_eq!(m[0][1], m[1][0]);
        // Eigenvalues of the symmetric 2x2 block, closed form.
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let disc = (tr * tr / 4.0 - det).sqrt();
        assert_relative_eq!(tr / 2.0 + disc, 1.8345064299986164, max_relative = 1e-13);
        assert_relative_eq!(tr / 2.0 - disc, 0.86249357000138362, max_relative = 1e-13);
        let id = covariance_block(0.0, 0.0, 3.05);
        assert_eq!(id, [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn covariance_block_is_psd_for_random_inputs() {
        let mut s = crate::stats::RngStream::new(99, 0);
        for _ in 0..1_000 {
            let ai = 2.0 * s.next_uniform() - 1.0;
            let aj = 2.0 * s.next_uniform() - 1.0;
            let vz = 0.05 + 5.0 * s.next_uniform();
            let m = covariance_block(ai, aj, vz);
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            assert!(tr / 2.0 - disc >= -1e-12, "negative eigenvalue for ({ai},{aj},{vz})");
        }
    }

    #[test]
    fn conditional_pd_matches_reference_values() {
        let s = spec(crisis_z(), 0.426);
        assert_relative_eq!(
            conditional_pd(0.05, &s, -2.0).unwrap(),
            0.11468658933169713,
            max_relative = 1e-13
        );
        assert_relative_eq!(
            conditional_pd(0.05, &s, 0.0).unwrap(),
            0.016028481025123734,
            max_relative = 1e-13
        );
    }

    #[test]
    fn conditional_pd_degenerate_and_limit_behavior() {
        // No systematic channel: the conditional PD is the input for any z.
        let flat = spec(crisis_z(), 0.0);
        for z in [-8.0, -1.0, 0.0, 2.5, 9.0] {
            assert_relative_eq!(
                conditional_pd(0.05, &flat, z).unwrap(),
                0.05,
                max_relative = 1e-12
            );
        }
        // Deep market crash drives default probability to one.
        let s = spec(crisis_z(), 0.426);
        assert!(conditional_pd(0.05, &s, -60.0).unwrap() > 1.0 - 1e-12);
        assert!(conditional_pd(0.05, &s, 60.0).unwrap() < 1e-12);
        // Strictly decreasing in z for a positive loading.
        let grid: Vec<f64> = (0..101).map(|i| -5.0 + 0.1 * i as f64).collect();
        let pds: Vec<f64> = grid
            .iter()
            .map(|&z| conditional_pd(0.05, &s, z).unwrap())
            .collect();
        assert!(pds.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn conditional_pd_rejects_bad_probability() {
        let s = spec(crisis_z(), 0.3);
        for p in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(conditional_pd(p, &s, 0.0).is_err());
        }
    }

    #[test]
    fn default_time_matches_reference_values() {
        let s = spec(crisis_z(), 0.426);
        // Median latent value: tau = ln(2) / rate.
        let u_median = s.latent_cdf_params().mean();
        let t = default_time("obl", u_median, 0.05, &s).unwrap();
        assert_relative_eq!(t.tau(), 13.862943611198906, max_relative = 1e-12);
        assert_eq!(t.obligor_id(), "obl");
        assert_eq!(t.indicator(1.0), 0);

        // F(u) = 1 - exp(-rate) puts the default on the one-year boundary
        // (up to CDF round-trip error). The horizon comparison is inclusive:
        // a default exactly at the horizon counts.
        let f_target = 0.048770575499285991; // 1 - exp(-0.05)
        let u = s.latent_cdf_params().inv_cdf(f_target).unwrap();
        let t = default_time("obl", u, 0.05, &s).unwrap();
        assert_relative_eq!(t.tau(), 1.0, max_relative = 1e-10);
        assert_eq!(t.indicator(t.tau()), 1);
        assert_eq!(t.indicator(t.tau() * (1.0 - 1e-12)), 0);

        // Four standard deviations below the mean defaults almost instantly.
        let p = s.latent_cdf_params();
        let u4 = p.mean() - 4.0 * p.std();
        let t = default_time("obl", u4, 0.05, &s).unwrap();
        assert_relative_eq!(t.tau(), 0.00063343486754978528, max_relative = 1e-12);
        assert!(t.tau() < 1.0);
    }

    #[test]
    fn default_time_is_increasing_in_u_and_handles_saturation() {
        let s = spec(crisis_z(), 0.3);
        let taus: Vec<f64> = (-40..=40)
            .map(|i| default_time("x", 0.1 * i as f64, 0.05, &s).unwrap().tau())
            .collect();
        assert!(taus.windows(2).all(|w| w[1] > w[0]));
        // Far enough in the upper tail the CDF rounds to one: survival forever.
        let t = default_time("x", 1e3, 0.05, &s).unwrap();
        assert!(t.tau().is_infinite());
        assert_eq!(t.indicator(1e12), 0);
    }

    #[test]
    fn default_time_rejects_bad_rate() {
        let s = spec(crisis_z(), 0.3);
        for r in [0.0, -0.05, f64::NAN, f64::INFINITY] {
            assert!(default_time("x", 0.0, r, &s).is_err());
        }
    }

    #[test]
    fn default_indicator_boundary_convention() {
        let half = DefaultTime { obligor_id: "a".into(), tau: 0.5 };
        let exactly_one = DefaultTime { obligor_id: "b".into(), tau: 1.0 };
        let late = DefaultTime { obligor_id: "c".into(), tau: 13.86 };
        assert_eq!(default_indicator(&half, 1.0), 1);
        assert_eq!(default_indicator(&exactly_one, 1.0), 1);
        assert_eq!(default_indicator(&late, 1.0), 0);
    }

    #[test]
    fn loading_clips_but_rejects_non_finite() {
        let z = NormalParams::standard();
        assert_eq!(LatentSpec::new(z, 1.7, Regime::Hectic).unwrap().loading(), 0.999);
        assert_eq!(LatentSpec::new(z, -1.7, Regime::Quiet).unwrap().loading(), -0.999);
        assert!(LatentSpec::new(z, f64::NAN, Regime::Hectic).is_err());
    }
}
