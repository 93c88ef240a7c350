//! Flat key-value configuration for backtest runs.
//!
//! The format is one `key = value` pair per line, `#` starts a comment.
//! Every key has a documented default except the data source and the family.
//! Lists are comma-separated; diffusion matrix rows are separated by `;`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use pathwise_spt::families::PhiFamily;
use pathwise_spt::synthetic::SyntheticSpec;

use crate::CliError;

/// Where the price path comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Units of the averaging window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaUnit {
    /// Multiples of the mean grid step (the default).
    Steps,
    /// Grid time units directly.
    Time,
}

/// Hard diagnostic thresholds; a run exits nonzero when any is exceeded.
#[derive(Debug, Clone)]
pub struct Thresholds {
    /// Terminal master-formula residual at the finest sweep level, per route.
    pub residual: f64,
    /// Log-covariation identity deviation, relative to the largest
    /// log-price quadratic variation.
    pub log_covariation: f64,
    /// Self-financing reconstruction residual.
    pub self_financing: f64,
    /// Market-portfolio value against the exact capitalization ratio.
    pub market_value: f64,
    /// Weight gap between the state-dependent and path-dependent routes.
    pub route_weights: f64,
    /// Polarization reconstruction gap, scaled by `1 + max |S|^2`.
    pub polarization_scale: f64,
    /// Numeraire-invariance deviation.
    pub numeraire: f64,
    /// Weighted relative-covariance annihilation.
    pub tau_annihilation: f64,
    /// Per-step growth allowance in the residual-vs-level table (1.10 means
    /// a step may not grow by more than 10%).
    pub sweep_slack: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            residual: 2e-2,
            log_covariation: 2e-2,
            self_financing: 2e-2,
            market_value: 1e-2,
            route_weights: 1e-10,
            polarization_scale: 1e-12,
            numeraire: 1e-10,
            tau_annihilation: 1e-10,
            sweep_slack: 1.10,
        }
    }
}

/// A fully resolved backtest configuration.
#[derive(Debug, Clone)]
pub struct BacktestConfig {
    pub source: DataSource,
    pub family: PhiFamily,
    pub lambda: f64,
    pub theta: f64,
    pub theta_unit: ThetaUnit,
    /// Dyadic hierarchy depth; `None` resolves to `floor(log2(steps))`.
    pub depth: Option<u32>,
    /// Hierarchy level indices to sweep; `None` resolves to the finest level
    /// and the two levels four and two below it.
    pub levels: Option<Vec<usize>>,
    pub out_dir: PathBuf,
    pub check_sweep_monotone: bool,
    pub thresholds: Thresholds,
}

impl BacktestConfig {
    /// Resolved sweep levels for a hierarchy with `num_levels` levels.
    pub fn resolve_levels(&self, num_levels: usize) -> Result<Vec<usize>, CliError> {
        let finest = num_levels - 1;
        let levels = match &self.levels {
            Some(levels) => {
                let set: BTreeSet<usize> = levels.iter().copied().collect();
                if let Some(&bad) = set.iter().find(|&&l| l >= num_levels) {
                    return Err(CliError::Config(format!(
                        "sweep level {bad} out of range: hierarchy has levels 0..={finest}"
                    )));
                }
                set.into_iter().collect()
            }
            None => {
                let mut v: Vec<usize> =
                    [finest.saturating_sub(4), finest.saturating_sub(2), finest].to_vec();
                v.dedup();
                v
            }
        };
        if levels.is_empty() {
            return Err(CliError::Config("no sweep levels configured".into()));
        }
        Ok(levels)
    }
}

/// Raw parsed key-value file with typed accessors that consume keys, so
/// unknown leftovers can be rejected.
struct KeyValues {
    pairs: Vec<(String, String, usize)>,
}

impl KeyValues {
    fn parse(text: &str) -> Result<Self, CliError> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            pairs.push((key.trim().to_string(), value.trim().to_string(), lineno + 1));
        }
        Ok(Self { pairs })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        let pos = self.pairs.iter().position(|(k, _, _)| k == key)?;
        Some(self.pairs.remove(pos).1)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Config(format!("key `{key}`: cannot parse `{raw}`: {e}"))),
        }
    }

    fn finish(self, context: &str) -> Result<(), CliError> {
        if let Some((key, _, lineno)) = self.pairs.into_iter().next() {
            return Err(CliError::Config(format!(
                "{context}: unknown key `{key}` on line {lineno}"
            )));
        }
        Ok(())
    }
}

fn parse_list(raw: &str, key: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Config(format!("key `{key}`: bad number `{tok}`: {e}")))
        })
        .collect()
}

fn broadcast(values: Vec<f64>, dim: usize, key: &str) -> Result<Vec<f64>, CliError> {
    if values.len() == 1 {
        Ok(vec![values[0]; dim])
    } else if values.len() == dim {
        Ok(values)
    } else {
        Err(CliError::Config(format!(
            "key `{key}`: expected 1 or {dim} entries, got {}",
            values.len()
        )))
    }
}

fn parse_family(raw: &str, p: Option<f64>) -> Result<PhiFamily, CliError> {
    match raw {
        "geometric" => Ok(PhiFamily::Geometric),
        "entropy" => Ok(PhiFamily::Entropy),
        "diversity" => {
            let p = p.ok_or_else(|| {
                CliError::Config("family `diversity` needs the exponent key `p`".into())
            })?;
            Ok(PhiFamily::Diversity { p })
        }
        other => Err(CliError::Config(format!(
            "unknown family `{other}` (expected geometric, diversity, or entropy)"
        ))),
    }
}

fn parse_synthetic(kv: &mut KeyValues, seed_override: Option<u64>) -> Result<SyntheticSpec, CliError> {
    let dim: usize = kv
        .take_parsed("synthetic.dim")?
        .ok_or_else(|| CliError::Config("synthetic source needs `synthetic.dim`".into()))?;
    let steps: usize = kv.take_parsed("synthetic.steps")?.unwrap_or(1 << 14);
    let horizon: f64 = kv.take_parsed("synthetic.horizon")?.unwrap_or(1.0);
    let drift = match kv.take("synthetic.drift") {
        Some(raw) => broadcast(parse_list(&raw, "synthetic.drift")?, dim, "synthetic.drift")?,
        None => vec![0.0; dim],
    };
    let initial = match kv.take("synthetic.initial") {
        Some(raw) => broadcast(parse_list(&raw, "synthetic.initial")?, dim, "synthetic.initial")?,
        None => vec![1.0; dim],
    };
    let diffusion = match kv.take("synthetic.diffusion") {
        Some(raw) => {
            let rows: Vec<Vec<f64>> = raw
                .split(';')
                .map(|row| parse_list(row, "synthetic.diffusion"))
                .collect::<Result<_, _>>()?;
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(CliError::Config(format!(
                    "key `synthetic.diffusion`: expected {dim} rows of {dim} entries"
                )));
            }
            rows
        }
        None => {
            let vol: f64 = kv.take_parsed("synthetic.vol")?.unwrap_or(0.2);
            (0..dim)
                .map(|i| (0..dim).map(|j| if i == j { vol } else { 0.0 }).collect())
                .collect()
        }
    };
    let seed: u64 = match seed_override {
        Some(s) => {
            kv.take("seed");
            s
        }
        None => kv.take_parsed("seed")?.unwrap_or(42),
    };
    Ok(SyntheticSpec { dim, steps, horizon, drift, diffusion, initial, seed })
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub level: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Environment variable that overrides the configured output directory
/// (command-line `--out` still wins).
pub const OUT_DIR_ENV: &str = "PSPT_OUT";

/// Parses a backtest configuration file and applies overrides.
pub fn parse_config(text: &str, overrides: &Overrides) -> Result<BacktestConfig, CliError> {
    let mut kv = KeyValues::parse(text)?;

    let csv = kv.take("csv");
    let has_synthetic = kv.pairs.iter().any(|(k, _, _)| k.starts_with("synthetic."));
    let source = match (csv, has_synthetic) {
        (Some(path), false) => {
            kv.take("seed");
            DataSource::Csv(PathBuf::from(path))
        }
        (None, true) => DataSource::Synthetic(parse_synthetic(&mut kv, overrides.seed)?),
        (Some(_), true) => {
            return Err(CliError::Config(
                "exactly one data source: remove either `csv` or the `synthetic.*` keys".into(),
            ))
        }
        (None, false) => {
            return Err(CliError::Config(
                "no data source: set `csv = <path>` or `synthetic.*` keys".into(),
            ))
        }
    };

    let p: Option<f64> = kv.take_parsed("p")?;
    let family_raw = kv
        .take("family")
        .ok_or_else(|| CliError::Config("missing required key `family`".into()))?;
    let family = parse_family(&family_raw, p)?;

    let lambda: f64 = kv.take_parsed("lambda")?.unwrap_or(0.9);
    let theta: f64 = kv.take_parsed("theta")?.unwrap_or(32.0);
    let theta_unit = match kv.take("theta_unit").as_deref() {
        None | Some("steps") => ThetaUnit::Steps,
        Some("time") => ThetaUnit::Time,
        Some(other) => {
            return Err(CliError::Config(format!(
                "key `theta_unit`: expected `steps` or `time`, got `{other}`"
            )))
        }
    };

    let depth: Option<u32> = kv.take_parsed("depth")?;
    let levels = match kv.take("levels") {
        None => None,
        Some(raw) => Some(
            raw.split(',')
                .map(|tok| {
                    tok.trim().parse::<usize>().map_err(|e| {
                        CliError::Config(format!("key `levels`: bad level `{tok}`: {e}"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };

    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| kv.take("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("pspt-out"));
    if overrides.out_dir.is_some() || std::env::var_os(OUT_DIR_ENV).is_some() {
        kv.take("out");
    }

    let check_sweep_monotone = match kv.take("check.sweep").as_deref() {
        None | Some("true") => true,
        Some("false") => false,
        Some(other) => {
            return Err(CliError::Config(format!(
                "key `check.sweep`: expected `true` or `false`, got `{other}`"
            )))
        }
    };

    let mut thresholds = Thresholds::default();
    if let Some(v) = kv.take_parsed("threshold.residual")? {
        thresholds.residual = v;
    }
    if let Some(v) = kv.take_parsed("threshold.logcov")? {
        thresholds.log_covariation = v;
    }
    if let Some(v) = kv.take_parsed("threshold.selffin")? {
        thresholds.self_financing = v;
    }
    if let Some(v) = kv.take_parsed("threshold.market_value")? {
        thresholds.market_value = v;
    }
    if let Some(v) = kv.take_parsed("threshold.route_weights")? {
        thresholds.route_weights = v;
    }
    if let Some(v) = kv.take_parsed("threshold.polarization_scale")? {
        thresholds.polarization_scale = v;
    }
    if let Some(v) = kv.take_parsed("threshold.numeraire")? {
        thresholds.numeraire = v;
    }
    if let Some(v) = kv.take_parsed("threshold.taupieq")? {
        thresholds.tau_annihilation = v;
    }
    if let Some(v) = kv.take_parsed("threshold.sweep_slack")? {
        thresholds.sweep_slack = v;
    }

    kv.finish("config")?;

    let mut config = BacktestConfig {
        source,
        family,
        lambda,
        theta,
        theta_unit,
        depth,
        levels,
        out_dir,
        check_sweep_monotone,
        thresholds,
    };
    if let Some(level) = overrides.level {
        config.levels = Some(vec![level]);
    }
    Ok(config)
}

/// Parses a standalone synthetic-path spec file (`simulate --spec`): the
/// same keys as the config's `synthetic.*` block, with or without prefix.
pub fn parse_synthetic_spec(text: &str, seed_override: Option<u64>) -> Result<SyntheticSpec, CliError> {
    let mut kv = KeyValues::parse(text)?;
    // Accept bare keys by rewriting them into the prefixed form.
    for (key, _, _) in kv.pairs.iter_mut() {
        if !key.starts_with("synthetic.") && key != "seed" {
            *key = format!("synthetic.{key}");
        }
    }
    let spec = parse_synthetic(&mut kv, seed_override)?;
    kv.finish("synthetic spec")?;
    Ok(spec)
}

pub fn read_config_file(path: &Path, overrides: &Overrides) -> Result<BacktestConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text, overrides)
}
