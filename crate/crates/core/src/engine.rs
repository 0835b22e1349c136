//! Monte Carlo scenario generation and portfolio loss evaluation for the
//! four competing model variants:
//!
//! * `FC`   — unconditional loading, constant loss-given-default.
//! * `RFL`  — regime-switching loadings, constant loss-given-default.
//! * `RR`   — unconditional loading, state-dependent recovery.
//! * `RRFL` — regime-switching loadings and state-dependent recovery.
//!
//! Expected losses evaluate both regime branches and weight them by the
//! regime probability (posterior by default); loadings are never
//! arithmetically blended. Realized losses draw the regime Bernoulli from
//! the same weight, so simulation and expectation describe one mixture.
//!
//! Quantile thresholds for every variant are computed under a single
//! calibration-time factor law — the moment-matched normal of the fitted
//! mixture — while scenarios may be drawn from any factor law (e.g. a
//! stressed one). Keeping one calibration measure is what lets the variants
//! differ only through loadings and recovery, and what preserves the exact
//! degenerate equivalences between them.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{percentile_nearest_rank, LoadingSet};
use crate::factor::{LatentSpec, Regime};
use crate::recovery::{tail_cdf_ratio, RecoveryError, RecoverySpec};
use crate::stats::{pairwise_sum, std_norm_cdf, MixtureParams, NormalParams, RngStream};

/// Exposure assigned when a portfolio row leaves the field blank.
pub const DEFAULT_EXPOSURE: f64 = 100_000_000.0;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("portfolio has no obligors")]
    EmptyPortfolio,
    #[error("duplicate obligor id '{id}'")]
    DuplicateObligor { id: String },
    #[error("obligor '{id}' exposure must be finite and > 0, got {exposure}")]
    BadExposure { id: String, exposure: f64 },
    #[error("loading set belongs to '{loadings}' but was attached to obligor '{obligor}'")]
    LoadingsMismatch { obligor: String, loadings: String },
    #[error("scenario set is empty; nothing to evaluate")]
    EmptyScenarios,
    #[error(
        "scenario {index} carries {eps} idiosyncratic draws but the portfolio has {obligors} obligors"
    )]
    ObligorCountMismatch {
        index: usize,
        eps: usize,
        obligors: usize,
    },
    #[error("probability field {name} must lie in [0, 1], got {value}")]
    BadScenarioField { name: &'static str, value: f64 },
    #[error("unknown model variant '{0}' (expected one of: fc, rfl, rr, rrfl)")]
    UnknownVariant(String),
    #[error("unknown regime weight '{0}' (expected 'posterior' or 'mixture')")]
    UnknownRegimeWeight(String),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Factor(#[from] crate::factor::FactorError),
}

// ---------------------------------------------------------------------------
// Variants and configuration
// ---------------------------------------------------------------------------

/// The four competing models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModelVariant {
    Fc,
    Rfl,
    Rr,
    Rrfl,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] = [
        ModelVariant::Fc,
        ModelVariant::Rfl,
        ModelVariant::Rr,
        ModelVariant::Rrfl,
    ];

    /// Regime-switching loadings?
    pub fn regime_loadings(&self) -> bool {
        matches!(self, ModelVariant::Rfl | ModelVariant::Rrfl)
    }

    /// State-dependent recovery?
    pub fn state_recovery(&self) -> bool {
        matches!(self, ModelVariant::Rr | ModelVariant::Rrfl)
    }

    fn index(&self) -> usize {
        match self {
            ModelVariant::Fc => 0,
            ModelVariant::Rfl => 1,
            ModelVariant::Rr => 2,
            ModelVariant::Rrfl => 3,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelVariant::Fc => "FC",
            ModelVariant::Rfl => "RFL",
            ModelVariant::Rr => "RR",
            ModelVariant::Rrfl => "RRFL",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelVariant {
    type Err = EngineError;
    fn from_str(s: &str) -> Result<Self, EngineError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fc" => Ok(ModelVariant::Fc),
            "rfl" => Ok(ModelVariant::Rfl),
            "rr" => Ok(ModelVariant::Rr),
            "rrfl" => Ok(ModelVariant::Rrfl),
            _ => Err(EngineError::UnknownVariant(s.to_string())),
        }
    }
}

/// Which probability weights the two regime branches (and drives the
/// realized-path regime draw).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeWeight {
    /// Scenario-specific posterior pi(z) — the default: the factor value
    /// itself says how hectic the day looks.
    #[default]
    Posterior,
    /// The unconditional mixture weight omega, identical across scenarios.
    Mixture,
}

impl fmt::Display for RegimeWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeWeight::Posterior => "posterior",
            RegimeWeight::Mixture => "mixture",
        })
    }
}

impl FromStr for RegimeWeight {
    type Err = EngineError;
    fn from_str(s: &str) -> Result<Self, EngineError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "posterior" => Ok(RegimeWeight::Posterior),
            "mixture" => Ok(RegimeWeight::Mixture),
            _ => Err(EngineError::UnknownRegimeWeight(s.to_string())),
        }
    }
}

/// Evaluation-time knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    /// Loss horizon in years.
    pub horizon_t: f64,
    /// Regime-branch weighting rule.
    pub regime_weight: RegimeWeight,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { horizon_t: 1.0, regime_weight: RegimeWeight::Posterior }
    }
}

// ---------------------------------------------------------------------------
// Portfolio
// ---------------------------------------------------------------------------

/// One obligor: identity, exposure, recovery calibration, and the fitted
/// factor loadings.
#[derive(Debug, Clone, PartialEq)]
pub struct Obligor {
    id: String,
    exposure: f64,
    recovery: RecoverySpec,
    loadings: LoadingSet,
}

impl Obligor {
    pub fn new(
        id: impl Into<String>,
        exposure: f64,
        recovery: RecoverySpec,
        loadings: LoadingSet,
    ) -> Result<Self, EngineError> {
        let id = id.into();
        if !(exposure.is_finite() && exposure > 0.0) {
            return Err(EngineError::BadExposure { id, exposure });
        }
        if loadings.obligor_id() != id {
            return Err(EngineError::LoadingsMismatch {
                obligor: id,
                loadings: loadings.obligor_id().to_string(),
            });
        }
        Ok(Self { id, exposure, recovery, loadings })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    pub fn recovery(&self) -> &RecoverySpec {
        &self.recovery
    }

    pub fn loadings(&self) -> &LoadingSet {
        &self.loadings
    }
}

/// A non-empty set of obligors with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio {
    obligors: Vec<Obligor>,
}

impl Portfolio {
    pub fn new(obligors: Vec<Obligor>) -> Result<Self, EngineError> {
        if obligors.is_empty() {
            return Err(EngineError::EmptyPortfolio);
        }
        let mut seen = HashSet::new();
        for ob in &obligors {
            if !seen.insert(ob.id()) {
                return Err(EngineError::DuplicateObligor { id: ob.id().to_string() });
            }
        }
        Ok(Self { obligors })
    }

    pub fn obligors(&self) -> &[Obligor] {
        &self.obligors
    }

    pub fn len(&self) -> usize {
        self.obligors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obligors.is_empty()
    }

    pub fn total_exposure(&self) -> f64 {
        self.obligors.iter().map(Obligor::exposure).sum()
    }
}

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

/// One simulated state of the world: the factor draw, its regime posterior,
/// the uniform that resolves the realized regime, and per-obligor
/// idiosyncratic draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    index: usize,
    z: f64,
    pi_hectic: f64,
    regime_u: f64,
    eps: Vec<f64>,
}

impl Scenario {
    pub fn new(
        index: usize,
        z: f64,
        pi_hectic: f64,
        regime_u: f64,
        eps: Vec<f64>,
    ) -> Result<Self, EngineError> {
        if !(0.0..=1.0).contains(&pi_hectic) {
            return Err(EngineError::BadScenarioField { name: "pi_hectic", value: pi_hectic });
        }
        if !(0.0..=1.0).contains(&regime_u) {
            return Err(EngineError::BadScenarioField { name: "regime_u", value: regime_u });
        }
        Ok(Self { index, z, pi_hectic, regime_u, eps })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn pi_hectic(&self) -> f64 {
        self.pi_hectic
    }

    pub fn regime_u(&self) -> f64 {
        self.regime_u
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }
}

/// The full scenario panel plus everything needed to reproduce or extend it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    mixture: MixtureParams,
    z_dist: NormalParams,
    seed: u64,
    scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn mixture(&self) -> &MixtureParams {
        &self.mixture
    }

    pub fn z_dist(&self) -> &NormalParams {
        &self.z_dist
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

/// Draw `n_scenarios` scenarios. Scenario `i` consumes exactly substream `i`
/// of the seed — draw order: factor value, regime uniform, idiosyncratic
/// draws — so the panel is bit-identical for any worker count or scheduling.
pub fn generate_scenarios(
    m: &MixtureParams,
    z_dist: &NormalParams,
    n_obligors: usize,
    n_scenarios: usize,
    seed: u64,
) -> ScenarioSet {
    let standard = NormalParams::standard();
    let scenarios: Vec<Scenario> = (0..n_scenarios)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64);
            let z = rng.next_normal(z_dist);
            let regime_u = rng.next_uniform();
            let eps = rng.normals(&standard, n_obligors);
            Scenario {
                index: i,
                z,
                pi_hectic: m.posterior_hectic(z),
                regime_u,
                eps,
            }
        })
        .collect();
    ScenarioSet { mixture: *m, z_dist: *z_dist, seed, scenarios }
}

/// The loading a variant applies in a given scenario: the unconditional
/// loading for FC/RR, the Bernoulli(pi)-resolved regime loading for
/// RFL/RRFL (the same resolution the realized-loss path uses under
/// posterior weighting).
pub fn effective_loading(ob: &Obligor, variant: ModelVariant, s: &Scenario) -> f64 {
    if variant.regime_loadings() {
        if s.regime_u() < s.pi_hectic() {
            ob.loadings().alpha_h()
        } else {
            ob.loadings().alpha_q()
        }
    } else {
        ob.loadings().alpha()
    }
}

// ---------------------------------------------------------------------------
// Loss evaluation
// ---------------------------------------------------------------------------

/// One regime branch of one obligor, fully precomputed: the loading, the
/// idiosyncratic scale, and the default / recovery thresholds in latent
/// space under the calibration-time factor law.
#[derive(Debug, Clone, Copy)]
struct Branch {
    loading: f64,
    idio: f64,
    q: f64,
    q_adj: f64,
}

impl Branch {
    fn prepare(cal: &NormalParams, loading: f64, regime: Regime, rs: &RecoverySpec) -> Result<Self, EngineError> {
        let spec = LatentSpec::new(*cal, loading, regime)?;
        let latent = spec.latent_cdf_params();
        let q = latent
            .inv_cdf(rs.hazard_p())
            .expect("calibrated hazard_p lies inside (0,1)");
        let q_adj = latent
            .inv_cdf(rs.adjusted_p())
            .expect("calibrated adjusted_p lies inside (0,1)");
        Ok(Self { loading: spec.loading(), idio: spec.idio_scale(), q, q_adj })
    }

    /// Standardized default-threshold argument at factor value z.
    #[inline]
    fn arg(&self, z: f64) -> f64 {
        (self.q - self.loading * z) / self.idio
    }

    /// Standardized recovery-threshold argument at factor value z.
    #[inline]
    fn arg_adj(&self, z: f64) -> f64 {
        (self.q_adj - self.loading * z) / self.idio
    }
}

/// One obligor with both regime branches prepared for one variant.
#[derive(Debug, Clone)]
struct PreparedObligor {
    exposure: f64,
    const_lgd: f64,
    one_minus_floor: f64,
    hectic: Branch,
    quiet: Branch,
}

#[derive(Debug, Clone)]
struct VariantPlan {
    state_lgd: bool,
    obligors: Vec<PreparedObligor>,
}

/// A portfolio bound to a calibration mixture and evaluation config, with
/// all per-variant thresholds precomputed.
#[derive(Debug, Clone)]
pub struct Evaluator<'p> {
    portfolio: &'p Portfolio,
    omega: f64,
    config: EngineConfig,
    plans: [VariantPlan; 4],
}

impl<'p> Evaluator<'p> {
    /// Precompute the four variant plans. Thresholds are taken under the
    /// moment-matched unconditional law of `mixture` at the configured
    /// horizon.
    pub fn new(
        portfolio: &'p Portfolio,
        mixture: &MixtureParams,
        config: &EngineConfig,
    ) -> Result<Self, EngineError> {
        let cal = mixture.unconditional();
        let plan = |variant: ModelVariant| -> Result<VariantPlan, EngineError> {
            let mut obligors = Vec::with_capacity(portfolio.len());
            for ob in portfolio.obligors() {
                let rs = ob.recovery().at_horizon(config.horizon_t)?;
                let (hectic, quiet) = if variant.regime_loadings() {
                    (
                        Branch::prepare(&cal, ob.loadings().alpha_h(), Regime::Hectic, &rs)?,
                        Branch::prepare(&cal, ob.loadings().alpha_q(), Regime::Quiet, &rs)?,
                    )
                } else {
                    let b = Branch::prepare(&cal, ob.loadings().alpha(), Regime::Unconditional, &rs)?;
                    (b, b)
                };
                obligors.push(PreparedObligor {
                    exposure: ob.exposure(),
                    const_lgd: rs.constant_lgd(),
                    one_minus_floor: 1.0 - rs.floor_recovery(),
                    hectic,
                    quiet,
                });
            }
            Ok(VariantPlan { state_lgd: variant.state_recovery(), obligors })
        };
        Ok(Self {
            portfolio,
            omega: mixture.omega(),
            config: *config,
            plans: [
                plan(ModelVariant::Fc)?,
                plan(ModelVariant::Rfl)?,
                plan(ModelVariant::Rr)?,
                plan(ModelVariant::Rrfl)?,
            ],
        })
    }

    pub fn portfolio(&self) -> &Portfolio {
        self.portfolio
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// The regime weight applied in a scenario.
    fn weight(&self, s: &Scenario) -> f64 {
        match self.config.regime_weight {
            RegimeWeight::Posterior => s.pi_hectic(),
            RegimeWeight::Mixture => self.omega,
        }
    }

    fn check_scenario(&self, s: &Scenario) -> Result<(), EngineError> {
        if s.eps().len() != self.portfolio.len() {
            return Err(EngineError::ObligorCountMismatch {
                index: s.index(),
                eps: s.eps().len(),
                obligors: self.portfolio.len(),
            });
        }
        Ok(())
    }

    /// Loss-given-default of one branch at factor value z.
    #[inline]
    fn branch_lgd(plan: &VariantPlan, pre: &PreparedObligor, b: &Branch, z: f64) -> f64 {
        if plan.state_lgd {
            pre.one_minus_floor * tail_cdf_ratio(b.arg_adj(z), b.arg(z))
        } else {
            pre.const_lgd
        }
    }

    /// Conditional expected loss rate of one branch: LGD x PD given z.
    #[inline]
    fn branch_value(plan: &VariantPlan, pre: &PreparedObligor, b: &Branch, z: f64) -> f64 {
        std_norm_cdf(b.arg(z)) * Self::branch_lgd(plan, pre, b, z)
    }

    /// Conditional expected portfolio loss in one scenario: per obligor,
    /// both regime branches evaluated and combined as quiet + w·(hectic −
    /// quiet). The incremental form makes variants with identical branches
    /// collapse exactly (the difference term is an exact zero), not merely
    /// to rounding.
    pub fn expected_loss_scenario(
        &self,
        variant: ModelVariant,
        s: &Scenario,
    ) -> Result<f64, EngineError> {
        self.check_scenario(s)?;
        let plan = &self.plans[variant.index()];
        let w = self.weight(s);
        let mut total = 0.0;
        for pre in &plan.obligors {
            let vh = Self::branch_value(plan, pre, &pre.hectic, s.z());
            let vq = Self::branch_value(plan, pre, &pre.quiet, s.z());
            total += pre.exposure * (vq + w * (vh - vq));
        }
        Ok(total)
    }

    /// Simulated portfolio loss in one scenario: the regime is resolved by
    /// the scenario's stored uniform against the same weight that blends the
    /// expected-loss branches, each obligor defaults when its latent value
    /// falls below the resolved branch threshold, and the defaulted exposure
    /// is charged that branch's loss-given-default.
    ///
    /// The threshold comparison u <= q is exactly the event {tau <= horizon}
    /// for the default time built from the intensity -ln(1 - hazard_p).
    pub fn realized_loss_scenario(
        &self,
        variant: ModelVariant,
        s: &Scenario,
    ) -> Result<f64, EngineError> {
        self.check_scenario(s)?;
        let plan = &self.plans[variant.index()];
        let hectic_drawn = s.regime_u() < self.weight(s);
        let mut total = 0.0;
        for (pre, &eps) in plan.obligors.iter().zip(s.eps()) {
            let b = if hectic_drawn { &pre.hectic } else { &pre.quiet };
            let u = b.loading * s.z() + b.idio * eps;
            if u <= b.q {
                total += pre.exposure * Self::branch_lgd(plan, pre, b, s.z());
            }
        }
        Ok(total)
    }

    /// Per-scenario conditional expected losses, in scenario order.
    pub fn expected_losses(
        &self,
        set: &ScenarioSet,
        variant: ModelVariant,
    ) -> Result<Vec<f64>, EngineError> {
        set.scenarios()
            .par_iter()
            .map(|s| self.expected_loss_scenario(variant, s))
            .collect()
    }

    /// Per-scenario simulated losses, in scenario order.
    pub fn realized_losses(
        &self,
        set: &ScenarioSet,
        variant: ModelVariant,
    ) -> Result<Vec<f64>, EngineError> {
        set.scenarios()
            .par_iter()
            .map(|s| self.realized_loss_scenario(variant, s))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Evaluation of one model against the externally supplied actual loss.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport {
    pub variant: ModelVariant,
    pub actual_loss: f64,
    /// Scenario mean of the conditional expected portfolio loss.
    pub expected_loss: f64,
    /// Signed error: actual - expected.
    pub ae: f64,
    pub abs_ae: f64,
    /// ae divided by the obligor count.
    pub mae: f64,
    /// expected / actual; absent when the actual loss is zero.
    pub ratio: Option<f64>,
}

/// The full model-comparison report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub actual_loss: f64,
    pub n_scenarios: usize,
    pub n_obligors: usize,
    pub models: Vec<ModelReport>,
}

/// Evaluate the requested variants: each model's expected loss is the
/// scenario mean (order-fixed pairwise reduction, so the result is
/// independent of the parallel layout), compared against the supplied
/// actual loss.
pub fn evaluate_models(
    portfolio: &Portfolio,
    scenarios: &ScenarioSet,
    actual_loss: f64,
    variants: &[ModelVariant],
    config: &EngineConfig,
) -> Result<EvaluationReport, EngineError> {
    if scenarios.is_empty() {
        return Err(EngineError::EmptyScenarios);
    }
    let ev = Evaluator::new(portfolio, scenarios.mixture(), config)?;
    let n = scenarios.len() as f64;
    let mut models = Vec::with_capacity(variants.len());
    for &variant in variants {
        let losses = ev.expected_losses(scenarios, variant)?;
        let expected_loss = pairwise_sum(&losses) / n;
        let ae = actual_loss - expected_loss;
        models.push(ModelReport {
            variant,
            actual_loss,
            expected_loss,
            ae,
            abs_ae: ae.abs(),
            mae: ae / portfolio.len() as f64,
            ratio: (actual_loss != 0.0).then(|| expected_loss / actual_loss),
        });
    }
    Ok(EvaluationReport {
        actual_loss,
        n_scenarios: scenarios.len(),
        n_obligors: portfolio.len(),
        models,
    })
}

// ---------------------------------------------------------------------------
// Contribution decomposition
// ---------------------------------------------------------------------------

/// Scenario bucket by regime posterior: above the upper quartile, below the
/// lower quartile, or in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioGroup {
    Hectic,
    Middle,
    Quiet,
}

impl fmt::Display for ScenarioGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioGroup::Hectic => "hectic",
            ScenarioGroup::Middle => "middle",
            ScenarioGroup::Quiet => "quiet",
        })
    }
}

/// Obligor-averaged decomposition of one scenario's latent values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContributionRow {
    pub scenario: usize,
    pub group: ScenarioGroup,
    /// Mean over obligors of the systematic part alpha·z.
    pub systematic: f64,
    /// Mean over obligors of the idiosyncratic part sqrt(1-alpha²)·eps.
    pub idiosyncratic: f64,
    /// Mean over obligors of the latent value itself.
    pub mean_latent: f64,
}

/// Decompose every scenario's latent values into systematic and
/// idiosyncratic parts under the variant's (regime-resolved) loadings, and
/// bucket scenarios by the quartiles of the regime posterior.
pub fn relative_contribution(
    scenarios: &ScenarioSet,
    portfolio: &Portfolio,
    variant: ModelVariant,
    config: &EngineConfig,
) -> Result<Vec<ContributionRow>, EngineError> {
    if scenarios.is_empty() {
        return Err(EngineError::EmptyScenarios);
    }
    let ev = Evaluator::new(portfolio, scenarios.mixture(), config)?;
    for s in scenarios.scenarios() {
        ev.check_scenario(s)?;
    }
    let pis: Vec<f64> = scenarios.scenarios().iter().map(Scenario::pi_hectic).collect();
    let q1 = percentile_nearest_rank(&pis, 0.25);
    let q3 = percentile_nearest_rank(&pis, 0.75);
    let plan = &ev.plans[variant.index()];
    let n_ob = portfolio.len() as f64;

    Ok(scenarios
        .scenarios()
        .par_iter()
        .map(|s| {
            let hectic_drawn = s.regime_u() < ev.weight(s);
            let (mut sys, mut idio, mut latent) = (0.0, 0.0, 0.0);
            for (pre, &eps) in plan.obligors.iter().zip(s.eps()) {
                let b = if hectic_drawn { &pre.hectic } else { &pre.quiet };
                let sy = b.loading * s.z();
                let id = b.idio * eps;
                sys += sy;
                idio += id;
                latent += sy + id;
            }
            let group = if s.pi_hectic() > q3 {
                ScenarioGroup::Hectic
            } else if s.pi_hectic() < q1 {
                ScenarioGroup::Quiet
            } else {
                ScenarioGroup::Middle
            };
            ContributionRow {
                scenario: s.index(),
                group,
                systematic: sys / n_ob,
                idiosyncratic: idio / n_ob,
                mean_latent: latent / n_ob,
            }
        })
        .collect())
}
