//! Refinement-sweep tables for every limit-statement diagnostic: runs the
//! full battery at production size (2^16 steps, levels with 2^12/2^14/2^16
//! partition points) and prints deviation-vs-level tables. The acceptance
//! thresholds were frozen against this output.
//!
//! Run with `cargo run --release --example refinement_sweep`.

use std::time::Instant;

use pathwise_spt::calculus::{covariation_matrix, follmer_integral, log_covariation_check};
use pathwise_spt::families::{
    equivalence_check, MixedGeneratorSpec, MixedPhiFunctional, PhiFamily,
};
use pathwise_spt::functional::{
    functional_ito_formula_check, functional_ito_integral, CoordinateSquareFunctional,
    SumExpFunctional,
};
use pathwise_spt::grid::{moving_average, PartitionHierarchy};
use pathwise_spt::portfolio::{
    covariance_measure, market_value, market_weights, numeraire_invariance_check, portfolio_value,
    relative_covariance, self_financing_check, weighted_tau_annihilation,
};
use pathwise_spt::synthetic::{simulate_paths, SyntheticSpec};

const STEPS: usize = 1 << 16;
const DEPTH: u32 = 16;
const SEED: u64 = 42;

fn main() {
    let total = Instant::now();

    let spec = SyntheticSpec::reference_three_asset(STEPS, SEED);
    let s = simulate_paths(&spec).unwrap();
    let hier = PartitionHierarchy::dyadic(s.grid().clone(), DEPTH).unwrap();
    let levels = [12usize, 14, 16];
    let terminal = s.len() - 1;

    println!("== QV calibration (d=1, unit diffusion, seed {SEED}) ==");
    let t = Instant::now();
    let one = simulate_paths(&SyntheticSpec::uncorrelated(1, STEPS, 1.0, 1.0, SEED)).unwrap();
    let h1 = PartitionHierarchy::dyadic(one.grid().clone(), DEPTH).unwrap();
    let qv = covariance_measure(&one, &h1, h1.finest()).unwrap();
    println!("[log S](T)/T = {:.6}   ({:.2?})", qv.value(0, 0, one.len() - 1), t.elapsed());

    println!("\n== polarization (3-asset, seed {SEED}) ==");
    let t = Instant::now();
    let cov = covariation_matrix(&s, &hier, hier.finest()).unwrap();
    let max_price = s.values().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    println!(
        "deviation = {:.3e}, bound = {:.3e}   ({:.2?})",
        cov.polarization_deviation(),
        1e-12 * (1.0 + max_price * max_price),
        t.elapsed()
    );

    println!("\n== log-covariation identity, relative ==");
    let t = Instant::now();
    for &level in &levels {
        let a = covariance_measure(&s, &hier, level).unwrap();
        let scale = (0..3).map(|i| a.value(i, i, terminal)).fold(0.0f64, f64::max);
        let dev = log_covariation_check(&s, &hier, level).unwrap();
        println!("level {level}: {:.6e}", dev / scale);
    }
    println!("({:.2?})", t.elapsed());

    println!("\n== market-portfolio value vs exact ratio, relative ==");
    let t = Instant::now();
    let mu = market_weights(&s).unwrap();
    let exact = market_value(&s).unwrap();
    for &level in &levels {
        let v = portfolio_value(&mu, &s, &hier, level).unwrap();
        let mut worst = 0.0f64;
        for k in 0..s.len() {
            worst = worst.max((v[k] - exact[k]).abs() / exact[k]);
        }
        println!("level {level}: {worst:.6e}");
    }
    println!("({:.2?})", t.elapsed());

    println!("\n== self-financing residual ==");
    let t = Instant::now();
    for &level in &levels {
        println!("level {level}: {:.6e}", self_financing_check(&mu, &s, &hier, level).unwrap());
    }
    let pi1 = market_weights(&one).unwrap();
    for &level in &levels {
        println!(
            "d=1 level {level}: {:.6e}",
            self_financing_check(&pi1, &one, &h1, level).unwrap()
        );
    }
    println!("({:.2?})", t.elapsed());

    println!("\n== numeraire invariance / annihilation (finest) ==");
    let t = Instant::now();
    let a = covariance_measure(&s, &hier, hier.finest()).unwrap();
    let tau = relative_covariance(&mu, &a).unwrap();
    println!("tau annihilation = {:.3e}", weighted_tau_annihilation(&mu, &tau).unwrap());

    let theta_time = 32.0 / STEPS as f64;
    let gspec = MixedGeneratorSpec::new(PhiFamily::Entropy, 0.9, theta_time).unwrap();
    let alpha = moving_average(&mu.as_path().unwrap(), theta_time).unwrap();
    let pi = pathwise_spt::families::mixed_weights(&gspec, &mu, &alpha).unwrap();
    println!(
        "numeraire invariance = {:.3e}",
        numeraire_invariance_check(&pi, &mu, &a).unwrap()
    );
    println!("({:.2?})", t.elapsed());

    println!("\n== master residuals |residual(T)| and max|residual|, both routes ==");
    let families = [
        PhiFamily::Geometric,
        PhiFamily::Diversity { p: 0.1 },
        PhiFamily::Entropy,
    ];
    for family in families {
        for lambda in [0.6, 0.9] {
            let t = Instant::now();
            let gspec = MixedGeneratorSpec::new(family, lambda, theta_time).unwrap();
            print!("{:<22} lambda {lambda}:", family.label());
            for &level in &levels {
                let report = equivalence_check(&gspec, &s, &hier, level).unwrap();
                print!(
                    "  L{level} s[{:.3e}/{:.3e}] f[{:.3e}/{:.3e}]",
                    report.state_ledger.terminal_residual().abs(),
                    report.state_ledger.max_abs_residual(),
                    report.functional_ledger.terminal_residual().abs(),
                    report.functional_ledger.max_abs_residual(),
                );
            }
            println!("  ({:.2?})", t.elapsed());
        }
    }

    println!("\n== route equivalence at finest: weights / ledger / integral ==");
    for family in families {
        for lambda in [0.6, 0.9, 1.0] {
            let t = Instant::now();
            let gspec = MixedGeneratorSpec::new(family, lambda, theta_time).unwrap();
            let report = equivalence_check(&gspec, &s, &hier, hier.finest()).unwrap();
            println!(
                "{:<22} lambda {lambda}: weights {:.3e}, closed {:.3e}, ledger {:.3e}, integral {:.3e}  ({:.2?})",
                family.label(),
                report.weight_deviation,
                report.closed_form_deviation,
                report.ledger_deviation,
                report.integral_route_deviation,
                t.elapsed()
            );
        }
    }

    println!("\n== functional-vs-plain market integral, vs finest plain reference ==");
    let t = Instant::now();
    let x = s.log().unwrap();
    let finest_plain = follmer_integral(mu.values(), &x, &hier, hier.finest()).unwrap();
    for &level in &levels {
        let func = functional_ito_integral(&SumExpFunctional::new(3), &x, None, &hier, level).unwrap();
        let mut worst = 0.0f64;
        for k in 0..s.len() {
            worst = worst.max((func.value(k) - finest_plain.value(k)).abs());
        }
        println!("level {level}: {worst:.6e}");
    }
    println!("({:.2?})", t.elapsed());

    println!("\n== functional Ito formula residuals ==");
    let t = Instant::now();
    let sq = CoordinateSquareFunctional::new(3, 0);
    println!(
        "coordinate square, finest: {:.3e}",
        functional_ito_formula_check(&sq, &x, None, &hier, hier.finest()).unwrap()
    );
    let mu_path = mu.as_path().unwrap();
    let f = MixedPhiFunctional::new(gspec, 3);
    for &level in &levels {
        println!(
            "mixed entropy on weights, level {level}: {:.6e}",
            functional_ito_formula_check(&f, &mu_path, None, &hier, level).unwrap()
        );
    }
    println!("({:.2?})", t.elapsed());

    println!("\n== entropy second-order drift monotonicity ==");
    let t = Instant::now();
    let cov_mu = covariation_matrix(&mu_path, &hier, hier.finest()).unwrap();
    let (second, _) =
        pathwise_spt::families::example_drift_terms(&gspec, &mu, &alpha, &cov_mu).unwrap();
    let mut worst_dip = 0.0f64;
    for k in 1..s.len() {
        worst_dip = worst_dip.min(second[k] - second[k - 1]);
    }
    println!("smallest increment = {worst_dip:.3e}  ({:.2?})", t.elapsed());

    println!("\ntotal {:.2?}", total.elapsed());
}
