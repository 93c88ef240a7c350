//! State-dependent functionally generated portfolios and the master-formula
//! verification ledger.
//!
//! A generating function `G(x, a)` is a strictly positive, twice
//! differentiable function of the market weights `x` and an auxiliary
//! finite-variation state `a`. Its log-gradient tilts the market portfolio:
//!
//! ```text
//! pi_i = mu_i * (1 + g_i - sum_j mu_j g_j),   g = grad_x log G(mu, A)
//! ```
//!
//! [`master_decomposition`] splits the relative log-wealth of that portfolio
//! into the change of `log G` plus two cumulative drift measures, and records
//! the residual instead of forcing it to zero: the residual is the
//! verification target and must shrink under partition refinement.

use ndarray::{Array1, Array2};

use crate::calculus::covariation_matrix;
use crate::error::{Error, Result};
use crate::grid::{same_grid, BvPath, PartitionHierarchy, SampledPath};
use crate::portfolio::{market_weights, portfolio_value, SchemeTag, WeightSeries};

/// How a generator's derivatives are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeProvenance {
    Analytic,
    FiniteDifference { step: f64 },
}

/// A positive generating function of the current market weights and an
/// auxiliary finite-variation state.
pub trait Generator {
    fn state_dim(&self) -> usize;

    /// Number of auxiliary components (0 for functions of the weights only).
    fn param_dim(&self) -> usize;

    fn value(&self, x: &[f64], a: &[f64]) -> Result<f64>;

    fn gradient(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>>;

    fn hessian(&self, x: &[f64], a: &[f64]) -> Result<Array2<f64>>;

    /// Gradient in the auxiliary directions; empty when `param_dim() == 0`.
    fn param_gradient(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>>;

    fn provenance(&self) -> DerivativeProvenance {
        DerivativeProvenance::Analytic
    }
}

/// Derivative-free wrapper: central finite differences with step
/// `1e-5 * (1 + |x_i|)` per coordinate. Construction runs a consistency
/// probe (central vs one-sided gradients) on caller-supplied states and
/// rejects evaluation maps the scheme cannot differentiate reliably.
pub struct FiniteDiffGenerator<F>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    state_dim: usize,
    param_dim: usize,
    eval: F,
}

const FD_BASE_STEP: f64 = 1e-5;

impl<F> FiniteDiffGenerator<F>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    pub fn new(
        state_dim: usize,
        param_dim: usize,
        eval: F,
        probes: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Self> {
        let g = Self { state_dim, param_dim, eval };
        for (x, a) in probes {
            let central = g.gradient(x, a)?;
            for i in 0..state_dim {
                let h = FD_BASE_STEP * (1.0 + x[i].abs());
                let mut xp = x.clone();
                xp[i] += h;
                let one_sided = ((g.eval)(&xp, a) - (g.eval)(x, a)) / h;
                let tol = 1e3 * h * (1.0 + central[i].abs());
                if (one_sided - central[i]).abs() > tol {
                    return Err(Error::Generator(format!(
                        "finite-difference probe failed in coordinate {i}: central {} vs one-sided {} (tol {tol})",
                        central[i], one_sided
                    )));
                }
            }
        }
        Ok(g)
    }
}

impl<F> Generator for FiniteDiffGenerator<F>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn value(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        let v = (self.eval)(x, a);
        if !v.is_finite() {
            return Err(Error::Generator("generator evaluation is not finite".into()));
        }
        Ok(v)
    }

    fn gradient(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.state_dim];
        let mut xs = x.to_vec();
        for i in 0..self.state_dim {
            let h = FD_BASE_STEP * (1.0 + x[i].abs());
            xs[i] = x[i] + h;
            let up = (self.eval)(&xs, a);
            xs[i] = x[i] - h;
            let dn = (self.eval)(&xs, a);
            xs[i] = x[i];
            out[i] = (up - dn) / (2.0 * h);
        }
        Ok(out)
    }

    fn hessian(&self, x: &[f64], a: &[f64]) -> Result<Array2<f64>> {
        let d = self.state_dim;
        let mut out = Array2::zeros((d, d));
        let f0 = (self.eval)(x, a);
        let mut xs = x.to_vec();
        for i in 0..d {
            let hi = FD_BASE_STEP * (1.0 + x[i].abs());
            xs[i] = x[i] + hi;
            let up = (self.eval)(&xs, a);
            xs[i] = x[i] - hi;
            let dn = (self.eval)(&xs, a);
            xs[i] = x[i];
            out[(i, i)] = (up - 2.0 * f0 + dn) / (hi * hi);
            for j in (i + 1)..d {
                let hj = FD_BASE_STEP * (1.0 + x[j].abs());
                let mut corner = |si: f64, sj: f64| {
                    xs[i] = x[i] + si * hi;
                    xs[j] = x[j] + sj * hj;
                    let v = (self.eval)(&xs, a);
                    xs[i] = x[i];
                    xs[j] = x[j];
                    v
                };
                let mixed = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                    + corner(-1.0, -1.0))
                    / (4.0 * hi * hj);
                out[(i, j)] = mixed;
                out[(j, i)] = mixed;
            }
        }
        Ok(out)
    }

    fn param_gradient(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.param_dim];
        let mut av = a.to_vec();
        for c in 0..self.param_dim {
            let h = FD_BASE_STEP * (1.0 + a[c].abs());
            av[c] = a[c] + h;
            let up = (self.eval)(x, &av);
            av[c] = a[c] - h;
            let dn = (self.eval)(x, &av);
            av[c] = a[c];
            out[c] = (up - dn) / (2.0 * h);
        }
        Ok(out)
    }

    fn provenance(&self) -> DerivativeProvenance {
        DerivativeProvenance::FiniteDifference { step: FD_BASE_STEP }
    }
}

fn positive_value(gen: &dyn Generator, x: &[f64], a: &[f64]) -> Result<f64> {
    let v = gen.value(x, a)?;
    if !(v > 0.0) {
        return Err(Error::Domain(format!("generator value {v} is not strictly positive")));
    }
    Ok(v)
}

fn aux_column(a: Option<&BvPath>, k: usize) -> Vec<f64> {
    a.map(|bv| bv.column(k)).unwrap_or_default()
}

fn check_aux(gen: &dyn Generator, mu: &WeightSeries, a: Option<&BvPath>) -> Result<()> {
    if gen.state_dim() != mu.dim() {
        return Err(Error::Parameter(format!(
            "generator expects {} weight components, got {}",
            gen.state_dim(),
            mu.dim()
        )));
    }
    match a {
        Some(bv) => {
            same_grid(mu.grid(), bv.grid())?;
            if bv.dim() != gen.param_dim() {
                return Err(Error::Parameter(format!(
                    "generator expects {} auxiliary components, got {}",
                    gen.param_dim(),
                    bv.dim()
                )));
            }
        }
        None => {
            if gen.param_dim() != 0 {
                return Err(Error::Parameter(format!(
                    "generator expects {} auxiliary components but no auxiliary path given",
                    gen.param_dim()
                )));
            }
        }
    }
    Ok(())
}

/// The portfolio generated by `G`: `pi_i = mu_i (1 + g_i - sum_j mu_j g_j)`
/// with `g` the state log-gradient of `G` along `(mu(t), A(t))`. Columns sum
/// to one by construction; long-only is not guaranteed.
pub fn generated_weights(
    gen: &dyn Generator,
    mu: &WeightSeries,
    a: Option<&BvPath>,
) -> Result<WeightSeries> {
    check_aux(gen, mu, a)?;
    let (d, n1) = (mu.dim(), mu.len());
    let mut out = Array2::zeros((d, n1));
    let mut x = vec![0.0; d];
    for k in 0..n1 {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = mu.value(i, k);
        }
        let av = aux_column(a, k);
        let v = positive_value(gen, &x, &av)?;
        let grad = gen.gradient(&x, &av)?;
        let mut correction = 0.0;
        for i in 0..d {
            correction += x[i] * grad[i] / v;
        }
        for i in 0..d {
            out[(i, k)] = x[i] * (1.0 + grad[i] / v - correction);
        }
    }
    WeightSeries::new(mu.grid().clone(), out, SchemeTag::Generated)
}

/// Time-indexed master-formula record: cumulative decomposition columns and
/// the residual `lhs - (G_term + g_cum + h_cum)`, all zero at `t_0`.
#[derive(Debug, Clone)]
pub struct DriftLedger {
    /// Partition level the quadratic terms were computed at.
    pub level: usize,
    /// `log(G(t) / G(0))` along the realized states.
    pub generator_term: Array1<f64>,
    /// Cumulative second-order (Hessian) drift.
    pub second_order: Array1<f64>,
    /// Cumulative horizontal (finite-variation) drift.
    pub horizontal: Array1<f64>,
    /// Relative log-wealth `log(V_pi / V_mu)`.
    pub relative_log_wealth: Array1<f64>,
    /// `relative_log_wealth - (generator_term + second_order + horizontal)`.
    pub residual: Array1<f64>,
}

impl DriftLedger {
    /// Builds a ledger from its four independent columns; the residual is
    /// derived, never stored separately, so it is exact by construction.
    pub fn assemble(
        level: usize,
        generator_term: Array1<f64>,
        second_order: Array1<f64>,
        horizontal: Array1<f64>,
        relative_log_wealth: Array1<f64>,
    ) -> Self {
        let residual = &relative_log_wealth - &generator_term - &second_order - &horizontal;
        DriftLedger {
            level,
            generator_term,
            second_order,
            horizontal,
            relative_log_wealth,
            residual,
        }
    }

    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }

    pub fn terminal_residual(&self) -> f64 {
        *self.residual.last().unwrap()
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.residual.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Runs the full state-dependent master-formula pipeline at one level.
///
/// The weight covariations `[mu_i, mu_j]` are computed directly on the weight
/// path; the relative log-wealth comes from the portfolio-value formula for
/// both `pi` and `mu` so that the two sides share discretization bias. The
/// horizontal drift accumulates on the finest grid (finite-variation
/// integrals always do), the second-order drift along the level.
pub fn master_decomposition(
    gen: &dyn Generator,
    s: &SampledPath,
    a: Option<&BvPath>,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<DriftLedger> {
    same_grid(s.grid(), hier.grid())?;
    let mu = market_weights(s)?;
    check_aux(gen, &mu, a)?;
    let (d, n1) = (s.dim(), s.len());

    let pi = generated_weights(gen, &mu, a)?;
    let v_pi = portfolio_value(&pi, s, hier, level)?;
    let v_mu = portfolio_value(&mu, s, hier, level)?;
    let mut lhs = Array1::zeros(n1);
    for k in 0..n1 {
        lhs[k] = (v_pi[k] / v_mu[k]).ln();
    }

    // Generator values once per stamp; reused by every drift column.
    let mut values = Array1::zeros(n1);
    let mut generator_term = Array1::zeros(n1);
    let mut x = vec![0.0; d];
    for k in 0..n1 {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = mu.value(i, k);
        }
        let av = aux_column(a, k);
        values[k] = positive_value(gen, &x, &av)?;
        generator_term[k] = (values[k] / values[0]).ln();
    }

    // Second-order drift against the level increments of [mu_i, mu_j].
    let mu_path = mu.as_path()?;
    let cov_mu = covariation_matrix(&mu_path, hier, level)?;
    let points = hier.level(level)?;
    let mut at_points = Vec::with_capacity(points.len());
    at_points.push(0.0);
    let mut acc = 0.0;
    for w in points.windows(2) {
        let left = w[0];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = mu.value(i, left);
        }
        let av = aux_column(a, left);
        let hess = gen.hessian(&x, &av)?;
        let mut step = 0.0;
        for i in 0..d {
            for j in 0..d {
                step += hess[(i, j)] * (cov_mu.value(i, j, w[1]) - cov_mu.value(i, j, left));
            }
        }
        acc -= 0.5 * step / values[left];
        at_points.push(acc);
    }
    let second_order = crate::calculus::carry_forward(points, &at_points, n1);

    // Horizontal drift against the auxiliary path on the finest grid.
    let mut horizontal = Array1::zeros(n1);
    if let Some(bv) = a {
        let m = bv.dim();
        let mut acc = 0.0;
        for k in 1..n1 {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = mu.value(i, k - 1);
            }
            let av = aux_column(a, k - 1);
            let gp = gen.param_gradient(&x, &av)?;
            let mut step = 0.0;
            for c in 0..m {
                step += gp[c] * (bv.value(c, k) - bv.value(c, k - 1));
            }
            acc -= step / values[k - 1];
            horizontal[k] = acc;
        }
    }

    Ok(DriftLedger::assemble(level, generator_term, second_order, horizontal, lhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{row_matrix, TimeGrid};
    use crate::synthetic::{simulate_paths, SyntheticSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    struct ConstGen {
        d: usize,
        c: f64,
    }

    impl Generator for ConstGen {
        fn state_dim(&self) -> usize {
            self.d
        }
        fn param_dim(&self) -> usize {
            0
        }
        fn value(&self, _: &[f64], _: &[f64]) -> Result<f64> {
            Ok(self.c)
        }
        fn gradient(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0; self.d])
        }
        fn hessian(&self, _: &[f64], _: &[f64]) -> Result<Array2<f64>> {
            Ok(Array2::zeros((self.d, self.d)))
        }
        fn param_gradient(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![])
        }
    }

    struct CoordinateGen {
        d: usize,
        index: usize,
    }

    impl Generator for CoordinateGen {
        fn state_dim(&self) -> usize {
            self.d
        }
        fn param_dim(&self) -> usize {
            0
        }
        fn value(&self, x: &[f64], _: &[f64]) -> Result<f64> {
            Ok(x[self.index])
        }
        fn gradient(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
            let mut g = vec![0.0; self.d];
            g[self.index] = 1.0;
            Ok(g)
        }
        fn hessian(&self, _: &[f64], _: &[f64]) -> Result<Array2<f64>> {
            Ok(Array2::zeros((self.d, self.d)))
        }
        fn param_gradient(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![])
        }
    }

    /// `G(x, a) = exp(a^2 / 2)`, x-independent: isolates the horizontal term.
    struct ExpHalfSquareGen {
        d: usize,
    }

    impl Generator for ExpHalfSquareGen {
        fn state_dim(&self) -> usize {
            self.d
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn value(&self, _: &[f64], a: &[f64]) -> Result<f64> {
            Ok((a[0] * a[0] / 2.0).exp())
        }
        fn gradient(&self, _: &[f64], _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![0.0; self.d])
        }
        fn hessian(&self, _: &[f64], _: &[f64]) -> Result<Array2<f64>> {
            Ok(Array2::zeros((self.d, self.d)))
        }
        fn param_gradient(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![a[0] * self.value(x, a)?])
        }
    }

    fn market_two_assets() -> (SampledPath, WeightSeries, PartitionHierarchy) {
        let spec = SyntheticSpec {
            dim: 2,
            steps: 64,
            horizon: 1.0,
            drift: vec![0.0, 0.01],
            diffusion: vec![vec![0.3, 0.0], vec![0.1, 0.25]],
            initial: vec![1.0, 2.0],
            seed: 11,
        };
        let s = simulate_paths(&spec).unwrap();
        let mu = market_weights(&s).unwrap();
        let h = PartitionHierarchy::dyadic(s.grid().clone(), 6).unwrap();
        (s, mu, h)
    }

    #[test]
    fn constant_generator_reproduces_market() {
        let (_, mu, _) = market_two_assets();
        let pi = generated_weights(&ConstGen { d: 2, c: 3.0 }, &mu, None).unwrap();
        for k in 0..mu.len() {
            for i in 0..2 {
                assert_abs_diff_eq!(pi.value(i, k), mu.value(i, k), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn coordinate_generator_concentrates() {
        // G(x) = x_1 at mu = (0.3, 0.7): g = (1/0.3, 0), correction = 1, so
        // pi = (0.3 * (1 + 1/0.3 - 1), 0.7 * (1 - 1)) = (1, 0).
        let g = Arc::new(TimeGrid::uniform(1, 1.0).unwrap());
        let mut w = Array2::zeros((2, 2));
        for k in 0..2 {
            w[(0, k)] = 0.3;
            w[(1, k)] = 0.7;
        }
        let mu = WeightSeries::new(g, w, SchemeTag::Custom).unwrap();
        let pi = generated_weights(&CoordinateGen { d: 2, index: 0 }, &mu, None).unwrap();
        for k in 0..2 {
            assert_abs_diff_eq!(pi.value(0, k), 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(pi.value(1, k), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn entropy_fixed_point_via_finite_differences() {
        // Entropy at the symmetric state: equal log-gradient components
        // cancel in the correction, so the generated portfolio is the market.
        let probes = vec![(vec![0.4, 0.6], vec![]), (vec![0.5, 0.5], vec![])];
        let gen = FiniteDiffGenerator::new(
            2,
            0,
            |x: &[f64], _: &[f64]| -x.iter().map(|&v| v * v.ln()).sum::<f64>(),
            &probes,
        )
        .unwrap();
        let g = Arc::new(TimeGrid::uniform(1, 1.0).unwrap());
        let mut w = Array2::zeros((2, 2));
        for k in 0..2 {
            w[(0, k)] = 0.5;
            w[(1, k)] = 0.5;
        }
        let mu = WeightSeries::new(g, w, SchemeTag::Custom).unwrap();
        let pi = generated_weights(&gen, &mu, None).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(pi.value(i, 0), 0.5, epsilon = 1e-9);
        }
        assert_eq!(gen.provenance(), DerivativeProvenance::FiniteDifference { step: 1e-5 });
    }

    #[test]
    fn finite_difference_hessian_is_symmetric_and_accurate() {
        let gen = FiniteDiffGenerator::new(
            2,
            0,
            |x: &[f64], _: &[f64]| -x.iter().map(|&v| v * v.ln()).sum::<f64>(),
            &[],
        )
        .unwrap();
        let h = gen.hessian(&[0.3, 0.7], &[]).unwrap();
        assert_eq!(h[(0, 1)], h[(1, 0)]);
        assert!((h[(0, 0)] - (-1.0 / 0.3)).abs() <= 1e-4);
        assert!((h[(1, 1)] - (-1.0 / 0.7)).abs() <= 1e-4);
        assert!(h[(0, 1)].abs() <= 1e-4);
    }

    #[test]
    fn nonpositive_generator_is_rejected() {
        let (_, mu, _) = market_two_assets();
        let gen = ConstGen { d: 2, c: -1.0 };
        assert!(matches!(generated_weights(&gen, &mu, None), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_generator_ledger_is_identically_zero() {
        let (s, _, h) = market_two_assets();
        let ledger =
            master_decomposition(&ConstGen { d: 2, c: 2.0 }, &s, None, &h, h.finest()).unwrap();
        assert!(ledger.generator_term.iter().all(|&v| v == 0.0));
        assert!(ledger.second_order.iter().all(|&v| v == 0.0));
        assert!(ledger.horizontal.iter().all(|&v| v == 0.0));
        assert!(ledger.relative_log_wealth.iter().all(|&v| v == 0.0));
        assert!(ledger.residual.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_single_asset_reduces_to_quadrature_error() {
        // d = 1: mu = 1, lhs = 0, and the ledger must cancel the generator
        // term against the horizontal drift up to the left-point quadrature
        // error, which for G = exp(a^2/2) and A(t) = t is exactly -t * dt / 2.
        let n = 64;
        let grid = Arc::new(TimeGrid::uniform(n, 1.0).unwrap());
        let s = SampledPath::new(grid.clone(), row_matrix(&vec![1.5; n + 1])).unwrap();
        let a = BvPath::time_component(grid.clone()).unwrap();
        let h = PartitionHierarchy::dyadic(grid, 6).unwrap();
        let ledger =
            master_decomposition(&ExpHalfSquareGen { d: 1 }, &s, Some(&a), &h, h.finest()).unwrap();
        let dt = 1.0 / n as f64;
        for k in 0..=n {
            let t = k as f64 * dt;
            assert_abs_diff_eq!(ledger.residual[k], -t * dt / 2.0, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn generated_columns_sum_to_one_and_scale_invariance(
            cols in proptest::collection::vec((0.05f64..1.0, 0.05f64..1.0, 0.05f64..1.0), 4..12),
            c in 0.1f64..10.0,
        ) {
            let n = cols.len() - 1;
            let grid = Arc::new(TimeGrid::uniform(n, 1.0).unwrap());
            let mut w = Array2::zeros((3, cols.len()));
            for (k, &(a, b, cc)) in cols.iter().enumerate() {
                let s = a + b + cc;
                w[(0, k)] = a / s;
                w[(1, k)] = b / s;
                w[(2, k)] = cc / s;
            }
            let mu = WeightSeries::new(grid, w, SchemeTag::Custom).unwrap();
            let entropy = |x: &[f64], _: &[f64]| -x.iter().map(|&v| v * v.ln()).sum::<f64>();
            let gen = FiniteDiffGenerator::new(3, 0, entropy, &[]).unwrap();
            let scaled =
                FiniteDiffGenerator::new(3, 0, move |x: &[f64], a: &[f64]| c * entropy(x, a), &[])
                    .unwrap();
            let pi = generated_weights(&gen, &mu, None).unwrap();
            let pi_scaled = generated_weights(&scaled, &mu, None).unwrap();
            for k in 0..cols.len() {
                let sum: f64 = (0..3).map(|i| pi.value(i, k)).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                for i in 0..3 {
                    prop_assert!((pi.value(i, k) - pi_scaled.value(i, k)).abs() <= 1e-9);
                }
            }
        }
    }
}
