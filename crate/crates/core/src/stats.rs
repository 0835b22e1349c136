//! Distribution primitives shared by the whole engine: the normal
//! density/CDF/quantile (accurate in both tails), a two-state normal mixture
//! with a numerically safe regime posterior, reproducible substreamed random
//! draws, and an order-fixed pairwise summation for parallel reductions.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from distribution construction and evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("standard deviation must be finite and > 0, got {0}")]
    BadStd(f64),
    #[error("variance must be finite and > 0, got {0}")]
    BadVariance(f64),
    #[error("mean must be finite, got {0}")]
    BadMean(f64),
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    BadProbability(f64),
    #[error("mixture weight must lie strictly inside (0, 1), got {0}")]
    BadWeight(f64),
    #[error(
        "hectic std ({hectic}) must be at least the quiet std ({quiet}); \
         components are labelled by dispersion"
    )]
    MislabelledRegimes { hectic: f64, quiet: f64 },
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_74;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

// ---------------------------------------------------------------------------
// Standard-normal kernels
// ---------------------------------------------------------------------------

/// Standard normal density.
#[inline]
pub fn std_norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal CDF via the complementary error function.
#[inline]
pub fn std_norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Log of the standard normal CDF, accurate arbitrarily deep into the lower
/// tail (direct evaluation underflows near x = -38; the scaled complementary
/// error function keeps the tail exact in log space).
pub fn std_ln_norm_cdf(x: f64) -> f64 {
    if x >= -8.0 {
        std_norm_cdf(x).ln()
    } else {
        let t = -x * FRAC_1_SQRT_2;
        erfcx(t).ln() - t * t - std::f64::consts::LN_2
    }
}

/// Standard normal quantile: rational approximation refined by one Newton
/// step against the CDF, giving round-trip error near machine precision.
pub fn std_norm_inv_cdf(q: f64) -> Result<f64, StatsError> {
    if !(q > 0.0 && q < 1.0) || !q.is_finite() {
        return Err(StatsError::BadProbability(q));
    }
    let x = acklam_inv_cdf(q);
    // One Newton step against the CDF. The residual is formed from the tail
    // nearest to q so no precision is lost to 1 - cdf cancellation.
    let (err, slope) = if q < 0.5 {
        (std_norm_cdf(x) - q, std_norm_pdf(x))
    } else {
        ((1.0 - q) - std_norm_cdf(-x), std_norm_pdf(x))
    };
    Ok(x - err / slope)
}

/// Acklam's rational approximation to the standard normal quantile
/// (relative error < 1.2e-9 before refinement).
fn acklam_inv_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    }
}

/// Complementary error function, Cody-style rational approximations
/// (relative error near machine precision on all three regions).
fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf_small(x);
    }
    let r = if y <= 4.0 {
        erfc_mid(y)
    } else {
        erfc_large(y)
    };
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// erf on |x| <= 0.46875.
fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.161_123_743_870_565_6,
        1.138_641_541_510_501_6e2,
        3.774_852_376_853_020_2e2,
        3.209_377_589_138_469_4e3,
        1.857_777_061_846_031_5e-1,
    ];
    const B: [f64; 4] = [
        2.360_129_095_234_412_1e1,
        2.440_246_379_344_441_7e2,
        1.282_616_526_077_372_3e3,
        2.844_236_833_439_171e3,
    ];
    let z = x * x;
    let mut num = A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + A[i]) * z;
        den = (den + B[i]) * z;
    }
    x * (num + A[3]) / (den + B[3])
}

/// erfc on 0.46875 < y <= 4.
fn erfc_mid(y: f64) -> f64 {
    const C: [f64; 9] = [
        5.641_884_969_886_700_9e-1,
        8.883_149_794_388_376,
        6.611_919_063_714_163e1,
        2.986_351_381_974_001_3e2,
        8.819_522_212_417_691e2,
        1.712_047_612_634_070_6e3,
        2.051_078_377_826_071_5e3,
        1.230_339_354_797_997_2e3,
        2.153_115_354_744_038_5e-8,
    ];
    const D: [f64; 8] = [
        1.574_492_611_070_983_5e1,
        1.176_939_508_913_125e2,
        5.371_811_018_620_098_5e2,
        1.621_389_574_566_690_2e3,
        3.290_799_235_733_459_7e3,
        4.362_619_090_143_247e3,
        3.439_367_674_143_721_6e3,
        1.230_339_354_803_749_4e3,
    ];
    let mut num = C[8] * y;
    let mut den = y;
    for i in 0..7 {
        num = (num + C[i]) * y;
        den = (den + D[i]) * y;
    }
    let ratio = (num + C[7]) / (den + D[7]);
    exp_neg_sq(y) * ratio
}

/// erfc for y > 4 (returns 0 beyond the underflow threshold).
fn erfc_large(y: f64) -> f64 {
    const P: [f64; 6] = [
        3.053_266_349_612_323_4e-1,
        3.603_448_999_498_044_4e-1,
        1.257_817_261_112_292_5e-1,
        1.608_378_514_874_227_7e-2,
        6.587_491_615_298_378e-4,
        1.631_538_713_730_209_8e-2,
    ];
    const Q: [f64; 5] = [
        2.568_520_192_289_822_4,
        1.872_952_849_923_460_4,
        5.279_051_029_514_284e-1,
        6.051_834_131_244_132e-2,
        2.335_204_976_268_691_8e-3,
    ];
    if y >= 26.543 {
        return 0.0;
    }
    let z = 1.0 / (y * y);
    let mut num = P[5] * z;
    let mut den = z;
    for i in 0..4 {
        num = (num + P[i]) * z;
        den = (den + Q[i]) * z;
    }
    let poly = z * (num + P[4]) / (den + Q[4]);
    exp_neg_sq(y) * (FRAC_1_SQRT_PI - poly) / y
}

/// exp(-y^2) with the argument split so the rounding of y*y does not cost
/// accuracy (Cody's AINT trick).
#[inline]
fn exp_neg_sq(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

/// Scaled complementary error function exp(t^2)·erfc(t) for t >= ~4, via a
/// continued fraction (modified Lentz); never forms exp(-t^2), so it stays
/// exact arbitrarily deep in the tail.
fn erfcx(t: f64) -> f64 {
    debug_assert!(t > 1.0);
    const TINY: f64 = 1e-300;
    let mut f = t;
    let mut c = f;
    let mut d = 0.0_f64;
    for n in 1..200 {
        let a = n as f64 / 2.0;
        d = t + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = t + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    FRAC_1_SQRT_PI / f
}

// ---------------------------------------------------------------------------
// Normal distribution parameters
// ---------------------------------------------------------------------------

/// A normal distribution N(mean, std^2). `std` is a standard deviation; use
/// [`NormalParams::from_mean_variance`] when the dispersion at hand is a
/// variance — the two are easy to confuse when quoting published parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNormalParams")]
pub struct NormalParams {
    mean: f64,
    std: f64,
}

#[derive(Deserialize)]
struct RawNormalParams {
    mean: f64,
    std: f64,
}

impl TryFrom<RawNormalParams> for NormalParams {
    type Error = StatsError;
    fn try_from(raw: RawNormalParams) -> Result<Self, StatsError> {
        NormalParams::new(raw.mean, raw.std)
    }
}

impl NormalParams {
    pub fn new(mean: f64, std: f64) -> Result<Self, StatsError> {
        if !mean.is_finite() {
            return Err(StatsError::BadMean(mean));
        }
        if !(std.is_finite() && std > 0.0) {
            return Err(StatsError::BadStd(std));
        }
        Ok(Self { mean, std })
    }

    pub fn from_mean_variance(mean: f64, variance: f64) -> Result<Self, StatsError> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(StatsError::BadVariance(variance));
        }
        Self::new(mean, variance.sqrt())
    }

    pub fn standard() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    #[inline]
    pub fn mean(&self) -> f64 {
        self.mean
    }

    #[inline]
    pub fn std(&self) -> f64 {
        self.std
    }

    #[inline]
    pub fn variance(&self) -> f64 {
        self.std * self.std
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        std_norm_pdf((x - self.mean) / self.std) / self.std
    }

    #[inline]
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - LN_SQRT_2PI
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        std_norm_cdf((x - self.mean) / self.std)
    }

    #[inline]
    pub fn ln_cdf(&self, x: f64) -> f64 {
        std_ln_norm_cdf((x - self.mean) / self.std)
    }

    pub fn inv_cdf(&self, q: f64) -> Result<f64, StatsError> {
        Ok(self.mean + self.std * std_norm_inv_cdf(q)?)
    }
}

// ---------------------------------------------------------------------------
// Two-state normal mixture
// ---------------------------------------------------------------------------

/// A two-component normal mixture over the common factor, with components
/// labelled by dispersion: `hectic` is the wide regime, `quiet` the narrow
/// one, and `omega` is the hectic weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixtureParams")]
pub struct MixtureParams {
    omega: f64,
    hectic: NormalParams,
    quiet: NormalParams,
}

#[derive(Deserialize)]
struct RawMixtureParams {
    omega: f64,
    hectic: NormalParams,
    quiet: NormalParams,
}

impl TryFrom<RawMixtureParams> for MixtureParams {
    type Error = StatsError;
    fn try_from(raw: RawMixtureParams) -> Result<Self, StatsError> {
        MixtureParams::new(raw.omega, raw.hectic, raw.quiet)
    }
}

impl MixtureParams {
    pub fn new(omega: f64, hectic: NormalParams, quiet: NormalParams) -> Result<Self, StatsError> {
        if !(omega > 0.0 && omega < 1.0) || !omega.is_finite() {
            return Err(StatsError::BadWeight(omega));
        }
        if hectic.std() < quiet.std() {
            return Err(StatsError::MislabelledRegimes {
                hectic: hectic.std(),
                quiet: quiet.std(),
            });
        }
        Ok(Self { omega, hectic, quiet })
    }

    #[inline]
    pub fn omega(&self) -> f64 {
        self.omega
    }

    #[inline]
    pub fn hectic(&self) -> &NormalParams {
        &self.hectic
    }

    #[inline]
    pub fn quiet(&self) -> &NormalParams {
        &self.quiet
    }

    /// Mixture density omega·phi_hectic + (1-omega)·phi_quiet.
    #[inline]
    pub fn pdf(&self, z: f64) -> f64 {
        self.omega * self.hectic.pdf(z) + (1.0 - self.omega) * self.quiet.pdf(z)
    }

    /// Posterior probability that `z` was generated by the hectic regime.
    /// Evaluated in log space so extreme `z` (where both densities underflow)
    /// still yields a value in [0, 1] rather than NaN.
    pub fn posterior_hectic(&self, z: f64) -> f64 {
        let lh = self.omega.ln() + self.hectic.ln_pdf(z);
        let lq = (1.0 - self.omega).ln() + self.quiet.ln_pdf(z);
        if lh >= lq {
            1.0 / (1.0 + (lq - lh).exp())
        } else {
            let e = (lh - lq).exp();
            e / (1.0 + e)
        }
    }

    /// The single normal with the mixture's first two moments. This is the
    /// calibration-time factor law the engine uses for quantile thresholds.
    pub fn unconditional(&self) -> NormalParams {
        let w = self.omega;
        let mean = w * self.hectic.mean() + (1.0 - w) * self.quiet.mean();
        let dm = self.hectic.mean() - self.quiet.mean();
        let var = w * self.hectic.variance()
            + (1.0 - w) * self.quiet.variance()
            + w * (1.0 - w) * dm * dm;
        NormalParams::new(mean, var.sqrt()).expect("moment-matched normal is always valid")
    }
}

// ---------------------------------------------------------------------------
// Reproducible substreamed draws
// ---------------------------------------------------------------------------

/// One independent random substream. Streams with the same `(seed,
/// substream)` yield bit-identical draw sequences on every platform and under
/// any parallel execution layout, so scenario `i` can always consume
/// substream `i` regardless of worker count or evaluation order.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    substream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, substream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(substream);
        Self { seed, substream, rng }
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn substream(&self) -> u64 {
        self.substream
    }

    /// Uniform draw on the open interval (0, 1); never exactly 0 or 1, so it
    /// is always a valid quantile argument.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// One draw from N(mean, std^2) by inverse-CDF transform (exactly one
    /// uniform consumed per normal, which keeps substream layouts auditable).
    #[inline]
    pub fn next_normal(&mut self, p: &NormalParams) -> f64 {
        let u = self.next_uniform();
        p.mean() + p.std() * std_norm_inv_cdf(u).expect("u is strictly inside (0,1)")
    }

    /// `n` draws from N(mean, std^2).
    pub fn normals(&mut self, p: &NormalParams, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal(p)).collect()
    }
}

// ---------------------------------------------------------------------------
// Order-fixed reduction
// ---------------------------------------------------------------------------

/// Pairwise summation with a fixed index-halving split. The reduction tree
/// depends only on the slice length, so parallel producers that fill the
/// slice in any order still reduce to bit-identical totals.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
