//! State-dependent recovery: loss-given-default driven by the common factor,
//! an expected-loss-preserving calibration of the shifted default
//! probability, and spread-implied hazard rates.

use serde::Serialize;
use thiserror::Error;

use crate::factor::LatentSpec;
use crate::stats::{std_ln_norm_cdf, std_norm_cdf};

#[derive(Debug, Error, PartialEq)]
pub enum RecoveryError {
    #[error(
        "recovery pair out of range: floor {floor} and base {base} must satisfy \
         0 <= floor <= base < 1"
    )]
    BadRecoveryPair { base: f64, floor: f64 },
    #[error("default probability must lie strictly inside (0, 1), got {0}")]
    BadProbability(f64),
    #[error("calibrated adjusted probability {adjusted} is not inside (0, 1); inputs inconsistent")]
    InfeasibleCalibration { adjusted: f64 },
    #[error("spread must be finite and >= 0, got {0}")]
    BadSpread(f64),
    #[error("horizon must be finite and > 0, got {0}")]
    BadHorizon(f64),
}

/// Expected-loss-preserving adjusted default probability:
/// (1-r)·p = (1-r_bar)·p_adj, so p_adj = (1-r)·p / (1-r_bar) <= p.
pub fn calibrate_adjusted_pd(hazard_p: f64, r: f64, r_bar: f64) -> Result<f64, RecoveryError> {
    if !(hazard_p > 0.0 && hazard_p < 1.0) {
        return Err(RecoveryError::BadProbability(hazard_p));
    }
    if !(r.is_finite() && r_bar.is_finite() && 0.0 <= r_bar && r_bar <= r && r < 1.0) {
        return Err(RecoveryError::BadRecoveryPair { base: r, floor: r_bar });
    }
    let adjusted = (1.0 - r) * hazard_p / (1.0 - r_bar);
    if !(adjusted > 0.0 && adjusted < 1.0) {
        return Err(RecoveryError::InfeasibleCalibration { adjusted });
    }
    Ok(adjusted)
}

/// One obligor's recovery calibration: base recovery R, floor recovery
/// R_bar <= R, the one-period default probability P, and the adjusted
/// probability P_adj that keeps (1-R)·P = (1-R_bar)·P_adj.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoverySpec {
    base_recovery: f64,
    floor_recovery: f64,
    shift: f64,
    hazard_p: f64,
    adjusted_p: f64,
}

impl RecoverySpec {
    pub fn new(base_recovery: f64, floor_recovery: f64, hazard_p: f64) -> Result<Self, RecoveryError> {
        let adjusted_p = calibrate_adjusted_pd(hazard_p, base_recovery, floor_recovery)?;
        debug_assert!(
            ((1.0 - base_recovery) * hazard_p - (1.0 - floor_recovery) * adjusted_p).abs() <= 1e-12
        );
        Ok(Self {
            base_recovery,
            floor_recovery,
            shift: base_recovery - floor_recovery,
            hazard_p,
            adjusted_p,
        })
    }

    pub fn base_recovery(&self) -> f64 {
        self.base_recovery
    }

    pub fn floor_recovery(&self) -> f64 {
        self.floor_recovery
    }

    /// R - R_bar, the recovery shift absorbed by the state dependence.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn hazard_p(&self) -> f64 {
        self.hazard_p
    }

    pub fn adjusted_p(&self) -> f64 {
        self.adjusted_p
    }

    /// Constant loss-given-default 1 - R (what the state-independent model
    /// variants charge on default).
    pub fn constant_lgd(&self) -> f64 {
        1.0 - self.base_recovery
    }

    /// The same calibration re-expressed at a different horizon: the
    /// one-period probability is compounded to p_t = 1 - (1-p)^t and the
    /// adjusted probability recalibrated against it. A horizon of exactly
    /// one year returns the spec unchanged (bit-identical probabilities).
    pub fn at_horizon(&self, horizon_t: f64) -> Result<Self, RecoveryError> {
        if !(horizon_t.is_finite() && horizon_t > 0.0) {
            return Err(RecoveryError::BadHorizon(horizon_t));
        }
        if horizon_t == 1.0 {
            return Ok(*self);
        }
        let p_t = 1.0 - (1.0 - self.hazard_p).powf(horizon_t);
        Self::new(self.base_recovery, self.floor_recovery, p_t)
    }
}

/// State-dependent loss-given-default at factor value `z`:
/// (1-R_bar)·Phi(a_adj)/Phi(a) with a = (q - alpha·z)/sqrt(1-alpha²),
/// a_adj likewise at the adjusted threshold. Evaluated via the log-CDF
/// difference once the denominator argument sinks below -8, so the ratio of
/// two underflowing tails stays finite, monotone, and never NaN.
pub fn state_lgd(z: f64, spec: &LatentSpec, rs: &RecoverySpec) -> f64 {
    let latent = spec.latent_cdf_params();
    let q = latent
        .inv_cdf(rs.hazard_p())
        .expect("calibrated hazard_p lies inside (0,1)");
    let q_adj = latent
        .inv_cdf(rs.adjusted_p())
        .expect("calibrated adjusted_p lies inside (0,1)");
    let scale = spec.idio_scale();
    let base = (q - spec.loading() * z) / scale;
    let adj = (q_adj - spec.loading() * z) / scale;
    (1.0 - rs.floor_recovery()) * tail_cdf_ratio(adj, base)
}

/// State-dependent recovery 1 - state_lgd; nondecreasing in z.
pub fn state_recovery(z: f64, spec: &LatentSpec, rs: &RecoverySpec) -> f64 {
    1.0 - state_lgd(z, spec, rs)
}

/// Phi(num)/Phi(den) for num <= den, tail-safe. Exposed to the engine so the
/// per-scenario loss loop shares one code path with `state_lgd`.
#[inline]
pub(crate) fn tail_cdf_ratio(num: f64, den: f64) -> f64 {
    if den >= -8.0 {
        std_norm_cdf(num) / std_norm_cdf(den)
    } else {
        (std_ln_norm_cdf(num) - std_ln_norm_cdf(den)).exp()
    }
}

/// A one-period credit spread quote with the recovery assumption it prices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpreadQuote {
    obligor_id: String,
    spread: f64,
    recovery: f64,
}

impl SpreadQuote {
    pub fn new(
        obligor_id: impl Into<String>,
        spread: f64,
        recovery: f64,
    ) -> Result<Self, RecoveryError> {
        if !(spread.is_finite() && spread >= 0.0) {
            return Err(RecoveryError::BadSpread(spread));
        }
        if !(recovery.is_finite() && (0.0..1.0).contains(&recovery)) {
            return Err(RecoveryError::BadRecoveryPair { base: recovery, floor: 0.0 });
        }
        Ok(Self { obligor_id: obligor_id.into(), spread, recovery })
    }

    pub fn obligor_id(&self) -> &str {
        &self.obligor_id
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }

    pub fn recovery(&self) -> f64 {
        self.recovery
    }
}

/// Spread-implied flat hazard rate kappa = s / (1 - R).
pub fn hazard_from_spread(q: &SpreadQuote) -> f64 {
    q.spread() / (1.0 - q.recovery())
}
