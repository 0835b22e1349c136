//! `crisk` — command-line pipeline for the credit-risk simulation engine.
//!
//! The subcommands chain through artifacts in the output directory:
//!
//! ```text
//! estimate-mixture   returns CSV            -> mixture.json
//! estimate-loadings  returns + portfolio    -> loadings.csv      (needs mixture.json)
//! simulate           portfolio              -> scenarios.json    (needs mixture.json)
//! evaluate           portfolio + actual     -> report.json/.csv  (needs mixture.json, loadings.csv)
//! contribution       portfolio              -> contribution_*.csv(needs mixture.json, loadings.csv)
//! ```
//!
//! Every run is deterministic in `--seed`: artifacts are byte-identical
//! across repeats and across thread counts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crisk_core::io::{
    self, MixtureArtifact, MixtureProvenance, ReportArtifact, RunConfig, SimulationSummary,
};
use crisk_core::{
    evaluate_models, fit_conditional_loadings, fit_mixture_em, generate_scenarios, EmOptions,
    EngineConfig, MixtureParams, ModelVariant, Portfolio, RegimeWeight,
};

#[derive(Parser)]
#[command(
    name = "crisk",
    version,
    about = "Regime-switching credit-risk simulation pipeline",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the two-regime normal mixture to a market index return series.
    EstimateMixture(EstimateMixtureArgs),
    /// Estimate plain and regime-conditional factor loadings per obligor.
    EstimateLoadings(EstimateLoadingsArgs),
    /// Draw a scenario panel and write a reproducibility summary.
    Simulate(SimulateArgs),
    /// Compare model expected losses against an observed actual loss.
    Evaluate(EvaluateArgs),
    /// Decompose scenarios into systematic vs idiosyncratic contributions.
    Contribution(ContributionArgs),
}

#[derive(Args)]
struct OutArg {
    /// Artifact directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct UnitsArg {
    /// Treat return files as already percent-denominated (default: decimal,
    /// converted to percent on load).
    #[arg(long)]
    percent: bool,
}

#[derive(Args)]
struct SimArgs {
    /// RNG seed; every artifact is byte-identical for a fixed seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of scenarios to draw.
    #[arg(long, default_value_t = 10_000)]
    scenarios: usize,
    /// Mean of the simulation factor law (percent units).
    #[arg(long, default_value_t = -0.03, allow_hyphen_values = true)]
    z_mean: f64,
    /// Variance of the simulation factor law.
    #[arg(long, default_value_t = 3.05, conflicts_with = "z_std")]
    z_var: f64,
    /// Standard deviation of the simulation factor law (alternative to
    /// --z-var).
    #[arg(long)]
    z_std: Option<f64>,
    /// Evaluation horizon in years.
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    /// Comma-separated model variants (fc, rfl, rr, rrfl).
    #[arg(long, default_value = "fc,rfl,rr,rrfl")]
    variants: String,
    /// Regime weight for expected losses: the per-scenario posterior or the
    /// unconditional mixture weight.
    #[arg(long, default_value_t = RegimeWeight::Posterior)]
    regime_weight: RegimeWeight,
    /// Recovery floor for portfolio rows that do not set their own.
    #[arg(long, default_value_t = 0.0)]
    r_bar: f64,
}

impl SimArgs {
    fn run_config(&self, out: &Path) -> Result<RunConfig> {
        let variants = parse_variants(&self.variants)?;
        let cfg = RunConfig {
            seed: self.seed,
            n_scenarios: self.scenarios,
            horizon_t: self.horizon,
            z_mean: self.z_mean,
            z_value: self.z_std.unwrap_or(self.z_var),
            z_value_is_variance: self.z_std.is_none(),
            r_bar_default: self.r_bar,
            variants,
            regime_weight: self.regime_weight,
            out_dir: out.to_path_buf(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_variants(raw: &str) -> Result<Vec<ModelVariant>> {
    let mut variants = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let v: ModelVariant = part.parse()?;
        if !variants.contains(&v) {
            variants.push(v);
        }
    }
    if variants.is_empty() {
        bail!("--variants must name at least one of fc, rfl, rr, rrfl");
    }
    Ok(variants)
}

#[derive(Args)]
struct EstimateMixtureArgs {
    /// Market index return CSV (columns: date,return).
    #[arg(long)]
    returns: PathBuf,
    #[command(flatten)]
    units: UnitsArg,
    /// Absolute convergence tolerance on the log-likelihood.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Iteration cap for the EM fit.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct EstimateLoadingsArgs {
    /// Market index return CSV (columns: date,return).
    #[arg(long)]
    returns: PathBuf,
    /// Portfolio CSV; each row's returns_file is resolved relative to it.
    #[arg(long)]
    portfolio: PathBuf,
    #[command(flatten)]
    units: UnitsArg,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Portfolio CSV (sets the idiosyncratic dimension of the panel).
    #[arg(long)]
    portfolio: PathBuf,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Portfolio CSV.
    #[arg(long)]
    portfolio: PathBuf,
    /// Observed actual portfolio loss to compare the models against.
    #[arg(long, allow_hyphen_values = true)]
    actual_loss: f64,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ContributionArgs {
    /// Portfolio CSV.
    #[arg(long)]
    portfolio: PathBuf,
    /// Variant whose loadings drive the decomposition.
    #[arg(long, default_value_t = ModelVariant::Rrfl)]
    variant: ModelVariant,
    #[command(flatten)]
    sim: SimArgs,
    #[command(flatten)]
    out: OutArg,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::EstimateMixture(args) => estimate_mixture(args),
        Command::EstimateLoadings(args) => estimate_loadings(args),
        Command::Simulate(args) => simulate(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Contribution(args) => contribution(args),
    }
}

fn estimate_mixture(args: EstimateMixtureArgs) -> Result<()> {
    let series = io::load_returns_csv(&args.returns, args.units.percent)?;
    let options = EmOptions { tol: args.tol, max_iter: args.max_iter };
    let fit = fit_mixture_em(&series, &options)
        .with_context(|| format!("fitting mixture to '{}'", args.returns.display()))?;
    if !fit.converged {
        log::warn!(
            "EM hit the {}-iteration cap before reaching tol {}; writing best-so-far fit",
            options.max_iter,
            options.tol
        );
    }
    let artifact = MixtureArtifact {
        omega: fit.params.omega(),
        hectic: *fit.params.hectic(),
        quiet: *fit.params.quiet(),
        loglik: fit.log_likelihood,
        converged: fit.converged,
        iterations: fit.iterations,
        config: MixtureProvenance {
            returns_file: args.returns.display().to_string(),
            percent_units: args.units.percent,
            tol: options.tol,
            max_iter: options.max_iter,
        },
    };
    let path = args.out.out.join("mixture.json");
    io::write_mixture_json(&path, &artifact)?;
    println!(
        "mixture: omega={:.6} hectic=({:.6}, {:.6}) quiet=({:.6}, {:.6}) loglik={:.6} \
         iterations={} converged={}",
        artifact.omega,
        artifact.hectic.mean(),
        artifact.hectic.std(),
        artifact.quiet.mean(),
        artifact.quiet.std(),
        artifact.loglik,
        artifact.iterations,
        artifact.converged,
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn load_mixture(out: &Path) -> Result<MixtureParams> {
    let artifact = io::read_mixture_json(&out.join("mixture.json"))?;
    Ok(artifact.params()?)
}

fn estimate_loadings(args: EstimateLoadingsArgs) -> Result<()> {
    let mixture = load_mixture(&args.out.out)?;
    let index = io::load_returns_csv(&args.returns, args.units.percent)?;
    let entries = io::load_portfolio(&args.portfolio)?;
    let base = args.portfolio.parent().unwrap_or_else(|| Path::new("."));

    let mut loadings = Vec::with_capacity(entries.len());
    for entry in &entries {
        let Some(file) = &entry.returns_file else {
            bail!(
                "obligor '{}' has no returns_file in '{}'; loadings cannot be estimated",
                entry.obligor_id,
                args.portfolio.display()
            );
        };
        let series = io::load_returns_csv(&base.join(file), args.units.percent)?;
        let set = fit_conditional_loadings(&index, &series, &mixture)
            .with_context(|| format!("estimating loadings for obligor '{}'", entry.obligor_id))?;
        // The series label is the file stem; reports key on the obligor id.
        loadings.push(set.with_obligor_id(&entry.obligor_id));
    }
    let path = args.out.out.join("loadings.csv");
    io::write_loadings_csv(&path, &loadings)?;
    for l in &loadings {
        println!(
            "loadings {}: alpha={:.6} alpha_q={:.6} alpha_h={:.6}",
            l.obligor_id(),
            l.alpha(),
            l.alpha_q(),
            l.alpha_h()
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Load everything an engine run needs from the artifact directory.
fn load_run_inputs(portfolio_path: &Path, cfg: &RunConfig) -> Result<(Portfolio, MixtureParams)> {
    let mixture = load_mixture(&cfg.out_dir)?;
    let entries = io::load_portfolio(portfolio_path)?;
    let loadings = io::read_loadings_csv(&cfg.out_dir.join("loadings.csv"))?;
    let portfolio = io::build_obligors(&entries, &loadings, cfg.r_bar_default)?;
    Ok((portfolio, mixture))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.sim.run_config(&args.out.out)?;
    let mixture = load_mixture(&cfg.out_dir)?;
    let entries = io::load_portfolio(&args.portfolio)?;
    let set = generate_scenarios(
        &mixture,
        &cfg.z_dist()?,
        entries.len(),
        cfg.n_scenarios,
        cfg.seed,
    );

    let n = set.len() as f64;
    let mean_z = set.scenarios().iter().map(|s| s.z()).sum::<f64>() / n;
    let var_z =
        set.scenarios().iter().map(|s| (s.z() - mean_z).powi(2)).sum::<f64>() / n;
    let mean_pi = set.scenarios().iter().map(|s| s.pi_hectic()).sum::<f64>() / n;
    let summary = SimulationSummary {
        config: cfg.clone(),
        n_obligors: entries.len(),
        sample_mean_z: mean_z,
        sample_var_z: var_z,
        mean_pi_hectic: mean_pi,
    };
    let path = cfg.out_dir.join("scenarios.json");
    io::write_simulation_summary(&path, &summary)?;
    println!(
        "simulated {} scenarios x {} obligors: mean(z)={:.6} var(z)={:.6} mean(pi_hectic)={:.6}",
        set.len(),
        entries.len(),
        mean_z,
        var_z,
        mean_pi
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = args.sim.run_config(&args.out.out)?;
    let (portfolio, mixture) = load_run_inputs(&args.portfolio, &cfg)?;
    let engine_cfg = EngineConfig { horizon_t: cfg.horizon_t, regime_weight: cfg.regime_weight };
    let set = generate_scenarios(
        &mixture,
        &cfg.z_dist()?,
        portfolio.len(),
        cfg.n_scenarios,
        cfg.seed,
    );
    let report = evaluate_models(&portfolio, &set, args.actual_loss, &cfg.variants, &engine_cfg)?;
    for m in &report.models {
        println!(
            "{}: expected_loss={:.6} actual_loss={:.6} ae={:.6} mae={:.6} ratio={}",
            m.variant,
            m.expected_loss,
            m.actual_loss,
            m.ae,
            m.mae,
            m.ratio.map_or_else(|| "n/a".to_string(), |r| format!("{r:.6}")),
        );
    }
    let artifact = ReportArtifact { config: cfg.clone(), report };
    io::write_report(&cfg.out_dir, &artifact)?;
    println!(
        "wrote {} and {}",
        cfg.out_dir.join("report.json").display(),
        cfg.out_dir.join("report.csv").display()
    );
    Ok(())
}

fn contribution(args: ContributionArgs) -> Result<()> {
    let cfg = args.sim.run_config(&args.out.out)?;
    let (portfolio, mixture) = load_run_inputs(&args.portfolio, &cfg)?;
    let engine_cfg = EngineConfig { horizon_t: cfg.horizon_t, regime_weight: cfg.regime_weight };
    let set = generate_scenarios(
        &mixture,
        &cfg.z_dist()?,
        portfolio.len(),
        cfg.n_scenarios,
        cfg.seed,
    );
    let rows = crisk_core::engine::relative_contribution(&set, &portfolio, args.variant, &engine_cfg)?;
    io::write_contribution_csvs(&cfg.out_dir, &rows)?;
    println!(
        "decomposed {} scenarios under {}; wrote {} and {}",
        rows.len(),
        args.variant,
        cfg.out_dir.join("contribution_2d.csv").display(),
        cfg.out_dir.join("contribution_3d.csv").display()
    );
    Ok(())
}
