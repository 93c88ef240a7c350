//! Backtest orchestration: load or simulate a price path, sweep the
//! configured partition levels, run both master-formula routes, and collect
//! the diagnostic battery into a report bundle.

use pathwise_spt::calculus::{covariation_matrix, follmer_integral, log_covariation_check};
use pathwise_spt::families::{equivalence_check, MixedGeneratorSpec, MixedPhiGenerator};
use pathwise_spt::functional::{functional_ito_integral, SumExpFunctional};
use pathwise_spt::genport::{generated_weights, DriftLedger};
use pathwise_spt::grid::{moving_average, PartitionHierarchy, SampledPath};
use pathwise_spt::portfolio::{
    covariance_measure, market_value, market_weights, numeraire_invariance_check, portfolio_value,
    relative_covariance, relative_log_wealth, self_financing_check, weighted_tau_annihilation,
    WeightSeries,
};
use pathwise_spt::synthetic::{simulate_paths, RNG_ALGORITHM};

use crate::config::{BacktestConfig, DataSource, ThetaUnit};
use crate::ingest::ingest_csv;
use crate::CliError;

/// Per-level diagnostic battery. Everything is a max-over-stamps deviation.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// Polarization reconstruction gap of the price covariations.
    pub polarization: f64,
    /// The scale `1 + max |S|^2` the polarization gap is measured against.
    pub polarization_scale: f64,
    /// Log-covariation identity gap, relative to the largest log-price
    /// quadratic variation at this level.
    pub log_covariation_rel: f64,
    /// Self-financing reconstruction residual of the generated portfolio.
    pub self_financing: f64,
    /// Market-portfolio value against the exact capitalization ratio.
    pub market_value_rel: f64,
    /// Weight gap between the state-dependent and path-dependent routes.
    pub route_weights: f64,
    /// Weight gap of either route against the closed family forms.
    pub route_closed_form: f64,
    /// Max gap between the two ledgers over all columns and stamps.
    pub route_ledger: f64,
    /// Gap between the stepwise-view functional drive and the plain
    /// left-point drive of the generated portfolio, at this level.
    pub route_integral: f64,
    /// Numeraire-invariance deviation (worst of both portfolio orderings).
    pub numeraire: f64,
    /// Weighted relative-covariance annihilation.
    pub tau_annihilation: f64,
    /// Gap between the two relative-return computations.
    pub relative_return_routes: f64,
    /// Functional market drive at this level against the finest-level plain
    /// drive: how far this level's Riemann sums sit from the best available
    /// approximation of the common limit.
    pub market_integral_identity: f64,
}

/// One sweep level: both ledgers plus the diagnostics.
pub struct LevelOutcome {
    pub level: usize,
    pub points: usize,
    pub state_ledger: DriftLedger,
    pub functional_ledger: DriftLedger,
    pub diagnostics: Diagnostics,
}

/// Everything a run produces, ready for emission.
pub struct ReportBundle {
    pub times: Vec<f64>,
    pub day_count: Option<String>,
    pub tickers: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub rng_algorithm: Option<&'static str>,
    pub family_label: String,
    pub lambda: f64,
    pub theta_time: f64,
    pub depth: u32,
    pub sweep_levels: Vec<usize>,
    pub market: WeightSeries,
    pub generated: WeightSeries,
    pub levels: Vec<LevelOutcome>,
    /// Human-readable hard-diagnostic failures; empty means exit code 0.
    pub hard_failures: Vec<String>,
}

impl ReportBundle {
    pub fn passed(&self) -> bool {
        self.hard_failures.is_empty()
    }
}

/// Checks one residual-vs-level sequence for refinement decrease with the
/// configured per-step slack. Sequences already at float-noise level pass.
pub fn sweep_decreases(values: &[f64], slack: f64) -> bool {
    if values.len() < 2 {
        return true;
    }
    let floor = 1e-12;
    for w in values.windows(2) {
        if w[1] > w[0] * slack && w[1] > floor {
            return false;
        }
    }
    let last = values[values.len() - 1];
    last < values[0] || last <= floor
}

pub fn run_backtest(config: &BacktestConfig) -> Result<ReportBundle, CliError> {
    let (path, tickers, seed, rng_algorithm) = match &config.source {
        DataSource::Csv(file) => {
            let ingested = ingest_csv(file)?;
            (ingested.path, Some(ingested.tickers), None, None)
        }
        DataSource::Synthetic(spec) => {
            (simulate_paths(spec)?, None, Some(spec.seed), Some(RNG_ALGORITHM))
        }
    };
    run_backtest_on_path(config, path, tickers, seed, rng_algorithm)
}

pub(crate) fn run_backtest_on_path(
    config: &BacktestConfig,
    path: SampledPath,
    tickers: Option<Vec<String>>,
    seed: Option<u64>,
    rng_algorithm: Option<&'static str>,
) -> Result<ReportBundle, CliError> {
    let steps = path.grid().steps();
    let depth = match config.depth {
        Some(d) => d,
        None => (usize::BITS - 1 - steps.leading_zeros()).min(24),
    };
    let hier = PartitionHierarchy::dyadic(path.grid().clone(), depth)?;
    let sweep_levels = config.resolve_levels(hier.num_levels())?;
    let finest_sweep = *sweep_levels.last().unwrap();

    let theta_time = match config.theta_unit {
        ThetaUnit::Steps => config.theta * path.grid().mean_step(),
        ThetaUnit::Time => config.theta,
    };
    let spec = MixedGeneratorSpec::new(config.family, config.lambda, theta_time)?;

    let mu = market_weights(&path)?;
    let alpha = moving_average(&mu.as_path()?, theta_time)?;
    let state_gen = MixedPhiGenerator::new(spec, path.dim());
    let generated = generated_weights(&state_gen, &mu, Some(&alpha))?;

    let exact_market = market_value(&path)?;
    let log_path = path.log()?;
    let finest_drive = follmer_integral(mu.values(), &log_path, &hier, hier.finest())?;
    let max_price = path.values().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let polarization_scale = 1.0 + max_price * max_price;
    let terminal = path.len() - 1;

    let mut levels = Vec::with_capacity(sweep_levels.len());
    for &level in &sweep_levels {
        let report = equivalence_check(&spec, &path, &hier, level)?;

        let cov_s = covariation_matrix(&path, &hier, level)?;
        let log_qv = covariance_measure(&path, &hier, level)?;
        let mut qv_scale = 0.0f64;
        for i in 0..path.dim() {
            qv_scale = qv_scale.max(log_qv.value(i, i, terminal));
        }
        let log_cov_abs = log_covariation_check(&path, &hier, level)?;
        let log_covariation_rel = if qv_scale > 0.0 { log_cov_abs / qv_scale } else { log_cov_abs };

        let v_mu = portfolio_value(&mu, &path, &hier, level)?;
        let mut market_value_rel = 0.0f64;
        for k in 0..path.len() {
            market_value_rel = market_value_rel.max((v_mu[k] - exact_market[k]).abs() / exact_market[k]);
        }

        let tau = relative_covariance(&mu, &log_qv)?;
        let numeraire = numeraire_invariance_check(&generated, &mu, &log_qv)?
            .max(numeraire_invariance_check(&mu, &generated, &log_qv)?);
        let tau_annihilation = weighted_tau_annihilation(&mu, &tau)?;

        let relative_return_routes =
            relative_log_wealth(&generated, &path, &hier, level)?.route_deviation;

        let market_drive =
            functional_ito_integral(&SumExpFunctional::new(path.dim()), &log_path, None, &hier, level)?;
        let mut market_integral_identity = 0.0f64;
        for k in 0..path.len() {
            market_integral_identity =
                market_integral_identity.max((market_drive.value(k) - finest_drive.value(k)).abs());
        }

        let diagnostics = Diagnostics {
            polarization: cov_s.polarization_deviation(),
            polarization_scale,
            log_covariation_rel,
            self_financing: self_financing_check(&generated, &path, &hier, level)?,
            market_value_rel,
            route_weights: report.weight_deviation,
            route_closed_form: report.closed_form_deviation,
            route_ledger: report.ledger_deviation,
            route_integral: report.integral_route_deviation,
            numeraire,
            tau_annihilation,
            relative_return_routes,
            market_integral_identity,
        };
        levels.push(LevelOutcome {
            level,
            points: hier.level(level)?.len(),
            state_ledger: report.state_ledger,
            functional_ledger: report.functional_ledger,
            diagnostics,
        });
    }

    let hard_failures = collect_hard_failures(config, &levels, finest_sweep);

    Ok(ReportBundle {
        times: path.grid().times().to_vec(),
        day_count: path.grid().day_count().map(str::to_string),
        tickers,
        seed,
        rng_algorithm,
        family_label: config.family.label(),
        lambda: config.lambda,
        theta_time,
        depth,
        sweep_levels,
        market: mu,
        generated,
        levels,
        hard_failures,
    })
}

fn collect_hard_failures(
    config: &BacktestConfig,
    levels: &[LevelOutcome],
    finest_sweep: usize,
) -> Vec<String> {
    let th = &config.thresholds;
    let mut failures = Vec::new();
    let finest = levels
        .iter()
        .find(|l| l.level == finest_sweep)
        .expect("finest sweep level is always computed");
    let d = &finest.diagnostics;

    let mut check = |name: &str, value: f64, bound: f64| {
        if !(value <= bound) {
            failures.push(format!("{name} = {value:e} exceeds {bound:e}"));
        }
    };
    check(
        "state residual(T)",
        finest.state_ledger.terminal_residual().abs(),
        th.residual,
    );
    check(
        "functional residual(T)",
        finest.functional_ledger.terminal_residual().abs(),
        th.residual,
    );
    check("log-covariation", d.log_covariation_rel, th.log_covariation);
    check("self-financing", d.self_financing, th.self_financing);
    check("market-value", d.market_value_rel, th.market_value);
    check("route-weights", d.route_weights, th.route_weights);
    check("polarization", d.polarization, th.polarization_scale * d.polarization_scale);
    check("numeraire-invariance", d.numeraire, th.numeraire);
    check("tau-annihilation", d.tau_annihilation, th.tau_annihilation);

    if config.check_sweep_monotone && levels.len() >= 2 {
        // Terminal residuals can land near zero by sign luck at any one
        // level; the sup over stamps is the magnitude that tracks
        // refinement, so the monotone check runs on it.
        let state: Vec<f64> = levels.iter().map(|l| l.state_ledger.max_abs_residual()).collect();
        if !sweep_decreases(&state, th.sweep_slack) {
            failures.push(format!("state residual sweep not decreasing: {state:?}"));
        }
        let functional: Vec<f64> =
            levels.iter().map(|l| l.functional_ledger.max_abs_residual()).collect();
        if !sweep_decreases(&functional, th.sweep_slack) {
            failures.push(format!("functional residual sweep not decreasing: {functional:?}"));
        }
    }
    failures
}
