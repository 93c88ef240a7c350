//! Report emission: ledger, weight, and diagnostic CSVs plus a plain-text
//! summary, written atomically (temp file in the target directory, then
//! rename) so a failing run leaves no partial files behind.
//!
//! Numbers are printed in scientific notation with 17 significant digits,
//! which round-trips `f64` exactly; identical runs therefore produce
//! byte-identical files.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use pathwise_spt::genport::DriftLedger;
use pathwise_spt::grid::SampledPath;
use pathwise_spt::portfolio::WeightSeries;

use crate::backtest::ReportBundle;
use crate::CliError;

/// Round-trip-safe float formatting: 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_atomic(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Io(format!("cannot create temp file in {}: {e}", dir.display())))?;
    tmp.write_all(content.as_bytes())
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", target.display())))?;
    tmp.persist(&target)
        .map_err(|e| CliError::Io(format!("cannot finalize {}: {e}", target.display())))?;
    Ok(target)
}

/// One ledger as CSV text with the fixed header. An empty ledger yields the
/// header alone.
pub fn ledger_csv(ledger: &DriftLedger, times: &[f64]) -> String {
    let mut out = String::from("t,lhs,G_term,g_cum,h_cum,residual\n");
    for k in 0..ledger.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            format_float(times[k]),
            format_float(ledger.relative_log_wealth[k]),
            format_float(ledger.generator_term[k]),
            format_float(ledger.second_order[k]),
            format_float(ledger.horizontal[k]),
            format_float(ledger.residual[k]),
        ));
    }
    out
}

fn weights_csv(times: &[f64], market: &WeightSeries, generated: &WeightSeries) -> String {
    let d = market.dim();
    let mut header = String::from("t");
    for i in 1..=d {
        header.push_str(&format!(",mu_{i}"));
    }
    for i in 1..=d {
        header.push_str(&format!(",pi_{i}"));
    }
    header.push('\n');
    let mut out = header;
    for (k, &t) in times.iter().enumerate() {
        out.push_str(&format_float(t));
        for i in 0..d {
            out.push(',');
            out.push_str(&format_float(market.value(i, k)));
        }
        for i in 0..d {
            out.push(',');
            out.push_str(&format_float(generated.value(i, k)));
        }
        out.push('\n');
    }
    out
}

fn diagnostics_csv(bundle: &ReportBundle) -> String {
    let mut out = String::from(
        "level,points,state_residual_T,functional_residual_T,state_residual_max,\
         functional_residual_max,polarization,polarization_scale,log_covariation_rel,\
         self_financing,market_value_rel,route_weights,route_closed_form,route_ledger,\
         route_integral,numeraire,tau_annihilation,relative_return_routes,\
         market_integral_identity\n",
    );
    for level in &bundle.levels {
        let d = &level.diagnostics;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            level.level,
            level.points,
            format_float(level.state_ledger.terminal_residual()),
            format_float(level.functional_ledger.terminal_residual()),
            format_float(level.state_ledger.max_abs_residual()),
            format_float(level.functional_ledger.max_abs_residual()),
            format_float(d.polarization),
            format_float(d.polarization_scale),
            format_float(d.log_covariation_rel),
            format_float(d.self_financing),
            format_float(d.market_value_rel),
            format_float(d.route_weights),
            format_float(d.route_closed_form),
            format_float(d.route_ledger),
            format_float(d.route_integral),
            format_float(d.numeraire),
            format_float(d.tau_annihilation),
            format_float(d.relative_return_routes),
            format_float(d.market_integral_identity),
        ));
    }
    out
}

fn summary_text(bundle: &ReportBundle) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("family", bundle.family_label.clone());
    kv("lambda", format_float(bundle.lambda));
    kv("theta_time", format_float(bundle.theta_time));
    kv("stamps", bundle.times.len().to_string());
    kv("horizon", format_float(bundle.times[bundle.times.len() - 1] - bundle.times[0]));
    kv("day_count", bundle.day_count.clone().unwrap_or_else(|| "abstract".into()));
    kv("depth", bundle.depth.to_string());
    kv(
        "sweep_levels",
        bundle.sweep_levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(","),
    );
    if let Some(seed) = bundle.seed {
        kv("seed", seed.to_string());
    }
    if let Some(rng) = bundle.rng_algorithm {
        kv("rng_algorithm", rng.to_string());
    }
    if let Some(tickers) = &bundle.tickers {
        kv("tickers", tickers.join(","));
    }
    for level in &bundle.levels {
        let prefix = format!("level_{}", level.level);
        kv(&format!("{prefix}.points"), level.points.to_string());
        kv(
            &format!("{prefix}.state_residual_T"),
            format_float(level.state_ledger.terminal_residual()),
        );
        kv(
            &format!("{prefix}.functional_residual_T"),
            format_float(level.functional_ledger.terminal_residual()),
        );
        kv(
            &format!("{prefix}.state_residual_max"),
            format_float(level.state_ledger.max_abs_residual()),
        );
        kv(
            &format!("{prefix}.functional_residual_max"),
            format_float(level.functional_ledger.max_abs_residual()),
        );
        kv(&format!("{prefix}.route_weights"), format_float(level.diagnostics.route_weights));
        kv(&format!("{prefix}.route_ledger"), format_float(level.diagnostics.route_ledger));
    }
    kv("hard_failures", bundle.hard_failures.len().to_string());
    for (i, failure) in bundle.hard_failures.iter().enumerate() {
        kv(&format!("failure_{i}"), failure.clone());
    }
    kv("status", if bundle.passed() { "pass".into() } else { "fail".into() });
    out
}

/// Writes the full bundle into `dir` and returns the created paths.
pub fn emit_report(bundle: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for level in &bundle.levels {
        written.push(write_atomic(
            dir,
            &format!("ledger_state_level{}.csv", level.level),
            &ledger_csv(&level.state_ledger, &bundle.times),
        )?);
        written.push(write_atomic(
            dir,
            &format!("ledger_functional_level{}.csv", level.level),
            &ledger_csv(&level.functional_ledger, &bundle.times),
        )?);
    }
    written.push(write_atomic(
        dir,
        "weights.csv",
        &weights_csv(&bundle.times, &bundle.market, &bundle.generated),
    )?);
    written.push(write_atomic(dir, "diagnostics.csv", &diagnostics_csv(bundle))?);
    written.push(write_atomic(dir, "summary.txt", &summary_text(bundle))?);
    Ok(written)
}

/// Writes a price path as an ingestable wide CSV with sequential daily dates.
pub fn write_prices_csv(
    path: &SampledPath,
    tickers: Option<&[String]>,
    start: NaiveDate,
    out: &Path,
) -> Result<(), CliError> {
    let d = path.dim();
    let mut content = String::from("date");
    match tickers {
        Some(names) => {
            for name in names {
                content.push(',');
                content.push_str(name);
            }
        }
        None => {
            for i in 1..=d {
                content.push_str(&format!(",A{i}"));
            }
        }
    }
    content.push('\n');
    for k in 0..path.len() {
        let date = start + chrono::Days::new(k as u64);
        content.push_str(&date.format("%Y-%m-%d").to_string());
        for i in 0..d {
            content.push(',');
            content.push_str(&format_float(path.value(i, k)));
        }
        content.push('\n');
    }
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    write_atomic(dir, out.file_name().and_then(|n| n.to_str()).unwrap_or("prices.csv"), &content)?;
    Ok(())
}
