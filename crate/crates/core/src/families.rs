//! Moving-average-mixed generating families: geometric average, diversity,
//! and entropy weighting of `lambda * mu(t) + (1 - lambda) * alpha(t)`, where
//! `alpha` is a windowed average of the market weights.
//!
//! Each family exists in two equivalent guises: a state-dependent generating
//! function of `(mu(t), alpha(t))` with `alpha` as an explicit auxiliary
//! path, and a path-dependent functional of the weight path alone that
//! reconstructs the average from the path's own window. Both produce the
//! same weights pointwise; [`equivalence_check`] verifies that and compares
//! the two master-formula ledgers.

use ndarray::{Array1, Array2};

use crate::calculus::{carry_forward, follmer_integral, CovariationSeries};
use crate::error::{Error, Result};
use crate::functional::{
    functional_generated_weights, functional_ito_integral, functional_master_decomposition,
    GeneratedPortfolioFunctional, PathFunctional, PathLike, PathState,
};
use crate::genport::{generated_weights, master_decomposition, DriftLedger, Generator};
use crate::grid::{moving_average, BvPath, PartitionHierarchy, SampledPath, TimeGrid};
use crate::portfolio::{market_weights, SchemeTag, WeightSeries};

/// The mixing families: value, gradient, and Hessian in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiFamily {
    /// `phi(x) = prod x_i^(1/d)`.
    Geometric,
    /// `phi(x) = (sum x_i^p)^(1/p)` with `p` in (0, 1).
    Diversity { p: f64 },
    /// `phi(x) = -sum x_i log x_i`.
    Entropy,
}

impl PhiFamily {
    pub fn label(&self) -> String {
        match self {
            PhiFamily::Geometric => "geometric".into(),
            PhiFamily::Diversity { p } => format!("diversity(p={p})"),
            PhiFamily::Entropy => "entropy".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PhiFamily::Diversity { p } = self {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::Parameter(format!(
                    "diversity exponent must lie in (0, 1), got {p}"
                )));
            }
        }
        Ok(())
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Domain("family value needs strictly positive components".into()));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_domain(x)?;
        let v = match self {
            PhiFamily::Geometric => {
                let d = x.len() as f64;
                (x.iter().map(|&v| v.ln()).sum::<f64>() / d).exp()
            }
            PhiFamily::Diversity { p } => x.iter().map(|&v| v.powf(*p)).sum::<f64>().powf(1.0 / p),
            PhiFamily::Entropy => -x.iter().map(|&v| v * v.ln()).sum::<f64>(),
        };
        if !(v > 0.0) {
            return Err(Error::Domain(format!("family value {v} is not strictly positive")));
        }
        Ok(v)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(x)?;
        Ok(match self {
            PhiFamily::Geometric => {
                let d = x.len() as f64;
                let phi = self.value(x)?;
                x.iter().map(|&v| phi / (d * v)).collect()
            }
            PhiFamily::Diversity { p } => {
                let q: f64 = x.iter().map(|&v| v.powf(*p)).sum();
                let scale = q.powf(1.0 / p - 1.0);
                x.iter().map(|&v| scale * v.powf(p - 1.0)).collect()
            }
            PhiFamily::Entropy => x.iter().map(|&v| -(1.0 + v.ln())).collect(),
        })
    }

    pub fn hessian(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_domain(x)?;
        let d = x.len();
        let mut out = Array2::zeros((d, d));
        match self {
            PhiFamily::Geometric => {
                let dd = d as f64;
                let phi = self.value(x)?;
                for i in 0..d {
                    for j in 0..d {
                        out[(i, j)] = phi / (dd * dd * x[i] * x[j]);
                        if i == j {
                            out[(i, i)] -= phi / (dd * x[i] * x[i]);
                        }
                    }
                }
            }
            PhiFamily::Diversity { p } => {
                let q: f64 = x.iter().map(|&v| v.powf(*p)).sum();
                let cross = (1.0 - p) * q.powf(1.0 / p - 2.0);
                let diag = (1.0 - p) * q.powf(1.0 / p - 1.0);
                for i in 0..d {
                    for j in 0..d {
                        out[(i, j)] = cross * x[i].powf(p - 1.0) * x[j].powf(p - 1.0);
                        if i == j {
                            out[(i, i)] -= diag * x[i].powf(p - 2.0);
                        }
                    }
                }
            }
            PhiFamily::Entropy => {
                for i in 0..d {
                    out[(i, i)] = -1.0 / x[i];
                }
            }
        }
        Ok(out)
    }
}

/// Parameters of one mixed generating family: the family, the mixing weight
/// `lambda` in (0, 1], and the averaging window `theta` in grid time units.
#[derive(Debug, Clone, Copy)]
pub struct MixedGeneratorSpec {
    pub family: PhiFamily,
    pub lambda: f64,
    pub theta: f64,
}

impl MixedGeneratorSpec {
    pub fn new(family: PhiFamily, lambda: f64, theta: f64) -> Result<Self> {
        family.validate()?;
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Parameter(format!("lambda must lie in (0, 1], got {lambda}")));
        }
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::Parameter(format!("window theta must be positive, got {theta}")));
        }
        Ok(Self { family, lambda, theta })
    }

    /// Window given in grid steps, translated through the mean step size.
    pub fn with_theta_steps(family: PhiFamily, lambda: f64, steps: f64, grid: &TimeGrid) -> Result<Self> {
        Self::new(family, lambda, steps * grid.mean_step())
    }

    fn mixed_state(&self, x: &[f64], alpha: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(alpha)
            .map(|(&m, &a)| self.lambda * m + (1.0 - self.lambda) * a)
            .collect()
    }
}

/// State-dependent guise: `G(x, a) = phi(lambda x + (1 - lambda) a)` with the
/// weight average as an explicit auxiliary path.
pub struct MixedPhiGenerator {
    spec: MixedGeneratorSpec,
    dim: usize,
}

impl MixedPhiGenerator {
    pub fn new(spec: MixedGeneratorSpec, dim: usize) -> Self {
        Self { spec, dim }
    }
}

impl Generator for MixedPhiGenerator {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        self.spec.family.value(&self.spec.mixed_state(x, a))
    }

    fn gradient(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let grad = self.spec.family.gradient(&self.spec.mixed_state(x, a))?;
        Ok(grad.into_iter().map(|g| self.spec.lambda * g).collect())
    }

    fn hessian(&self, x: &[f64], a: &[f64]) -> Result<Array2<f64>> {
        let mut h = self.spec.family.hessian(&self.spec.mixed_state(x, a))?;
        h.mapv_inplace(|v| self.spec.lambda * self.spec.lambda * v);
        Ok(h)
    }

    fn param_gradient(&self, x: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let grad = self.spec.family.gradient(&self.spec.mixed_state(x, a))?;
        Ok(grad.into_iter().map(|g| (1.0 - self.spec.lambda) * g).collect())
    }
}

/// Windowed left-point average of a path view over `[time(t) - theta, time(t)]`
/// with the pre-start extension frozen at the initial column. The same
/// quadrature as [`moving_average`], evaluated lazily on a view.
pub(crate) fn window_average(
    grid: &TimeGrid,
    x: &dyn PathLike,
    t: usize,
    theta: f64,
    out: &mut [f64],
) {
    let d = x.dim();
    let tau = grid.time(t);
    let start = tau - theta;
    for o in out.iter_mut() {
        *o = 0.0;
    }
    let mut buf = vec![0.0; d];
    let mut j = t;
    while j > 0 {
        let seg_start = grid.time(j - 1);
        let seg_end = grid.time(j);
        if seg_end <= start {
            break;
        }
        let width = seg_end - seg_start.max(start);
        x.snapshot(j - 1, &mut buf);
        for (o, &v) in out.iter_mut().zip(&buf) {
            *o += v * width;
        }
        if seg_start <= start {
            break;
        }
        j -= 1;
    }
    let t0 = grid.time(0);
    if start < t0 {
        x.snapshot(0, &mut buf);
        for (o, &v) in out.iter_mut().zip(&buf) {
            *o += v * (t0 - start);
        }
    }
    for o in out.iter_mut() {
        *o /= theta;
    }
}

/// Left-point step value of a view at clock time `tau` (the initial column
/// before the grid starts).
fn step_value_at(grid: &TimeGrid, x: &dyn PathLike, tau: f64, out: &mut [f64]) {
    if tau <= grid.time(0) {
        x.snapshot(0, out);
        return;
    }
    // The stamp whose segment [t_j, t_{j+1}) contains tau.
    let times = grid.times();
    let j = match times.binary_search_by(|probe| probe.partial_cmp(&tau).unwrap()) {
        Ok(exact) => exact,
        Err(insertion) => insertion - 1,
    };
    x.snapshot(j.min(grid.len() - 1), out);
}

/// Path-dependent guise: a functional of the weight path that rebuilds the
/// window average from the path itself,
/// `G(t, M) = phi(lambda M(t) + (1 - lambda) window_average(M, t))`.
pub struct MixedPhiFunctional {
    spec: MixedGeneratorSpec,
    dim: usize,
}

impl MixedPhiFunctional {
    pub fn new(spec: MixedGeneratorSpec, dim: usize) -> Self {
        Self { spec, dim }
    }

    pub fn spec(&self) -> &MixedGeneratorSpec {
        &self.spec
    }

    fn mixed_state_at(&self, st: &PathState) -> Vec<f64> {
        let d = self.dim;
        let mut avg = vec![0.0; d];
        window_average(st.grid, st.x, st.t, self.spec.theta, &mut avg);
        let mut current = vec![0.0; d];
        st.x.snapshot(st.t, &mut current);
        self.spec.mixed_state(&current, &avg)
    }
}

impl PathFunctional for MixedPhiFunctional {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, st: &PathState) -> Result<f64> {
        self.spec.family.value(&self.mixed_state_at(st))
    }

    fn vertical(&self, st: &PathState) -> Result<Vec<f64>> {
        // A current-value bump leaves the window average untouched (the
        // left-point window ends strictly before the evaluation stamp), so
        // only the lambda-weighted current state responds.
        let grad = self.spec.family.gradient(&self.mixed_state_at(st))?;
        Ok(grad.into_iter().map(|g| self.spec.lambda * g).collect())
    }

    fn vertical2(&self, st: &PathState) -> Result<Array2<f64>> {
        let mut h = self.spec.family.hessian(&self.mixed_state_at(st))?;
        h.mapv_inplace(|v| self.spec.lambda * self.spec.lambda * v);
        Ok(h)
    }

    fn horizontal(&self, st: &PathState) -> Result<Vec<f64>> {
        // Extending time with the path frozen slides the averaging window:
        // the current value enters, the value at the window start leaves.
        let lam = self.spec.lambda;
        if lam == 1.0 {
            return Ok(vec![0.0]);
        }
        let grad = self.spec.family.gradient(&self.mixed_state_at(st))?;
        let d = self.dim;
        let mut current = vec![0.0; d];
        st.x.snapshot(st.t, &mut current);
        let mut leaving = vec![0.0; d];
        step_value_at(st.grid, st.x, st.grid.time(st.t) - self.spec.theta, &mut leaving);
        let mut rate = 0.0;
        for i in 0..d {
            rate += grad[i] * (current[i] - leaving[i]) / self.spec.theta;
        }
        Ok(vec![(1.0 - lam) * rate])
    }
}

/// Closed-form mixed weights: `pi_i = mu_i (1 + g_i - sum_j mu_j g_j)` with
/// `g_i = lambda phi_i(mixed) / phi(mixed)`.
pub fn mixed_weights(
    spec: &MixedGeneratorSpec,
    mu: &WeightSeries,
    alpha: &BvPath,
) -> Result<WeightSeries> {
    if alpha.dim() != mu.dim() {
        return Err(Error::GridMismatch("weights and average disagree on dimension".into()));
    }
    let (d, n1) = (mu.dim(), mu.len());
    let mut out = Array2::zeros((d, n1));
    let mut x = vec![0.0; d];
    for k in 0..n1 {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = mu.value(i, k);
        }
        let mixed = spec.mixed_state(&x, &alpha.column(k));
        let phi = spec.family.value(&mixed)?;
        let grad = spec.family.gradient(&mixed)?;
        let mut correction = 0.0;
        for j in 0..d {
            correction += x[j] * spec.lambda * grad[j] / phi;
        }
        for i in 0..d {
            out[(i, k)] = x[i] * (1.0 + spec.lambda * grad[i] / phi - correction);
        }
    }
    WeightSeries::new(mu.grid().clone(), out, SchemeTag::Generated)
}

/// The two drift terms of a mixed family in their consolidated forms: the
/// second-order term against the level increments of the weight
/// covariations, the horizontal term as a Stieltjes sum against the average
/// itself (which sidesteps forming a derivative of the average at all).
pub fn example_drift_terms(
    spec: &MixedGeneratorSpec,
    mu: &WeightSeries,
    alpha: &BvPath,
    cov_mu: &CovariationSeries,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let d = mu.dim();
    let n1 = mu.len();
    let lam = spec.lambda;
    let mut x = vec![0.0; d];

    let points = cov_mu.level_points();
    let mut at_points = Vec::with_capacity(points.len());
    at_points.push(0.0);
    let mut acc = 0.0;
    for w in points.windows(2).map(|w| [w[0], w[1]]) {
        let left = w[0];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = mu.value(i, left);
        }
        let mixed = spec.mixed_state(&x, &alpha.column(left));
        let phi = spec.family.value(&mixed)?;
        let hess = spec.family.hessian(&mixed)?;
        let mut step = 0.0;
        for i in 0..d {
            for j in 0..d {
                step += hess[(i, j)] * (cov_mu.value(i, j, w[1]) - cov_mu.value(i, j, left));
            }
        }
        acc -= 0.5 * lam * lam * step / phi;
        at_points.push(acc);
    }
    let second_order = carry_forward(points, &at_points, n1);

    let mut horizontal = Array1::zeros(n1);
    let mut acc = 0.0;
    for k in 1..n1 {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = mu.value(i, k - 1);
        }
        let mixed = spec.mixed_state(&x, &alpha.column(k - 1));
        let phi = spec.family.value(&mixed)?;
        let grad = spec.family.gradient(&mixed)?;
        let mut step = 0.0;
        for i in 0..d {
            step += grad[i] / phi * (alpha.value(i, k) - alpha.value(i, k - 1));
        }
        acc -= (1.0 - lam) * step;
        horizontal[k] = acc;
    }
    Ok((second_order, horizontal))
}

/// Outcome of running one mixed family through both master-formula routes.
#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    /// Max absolute weight gap between the state-dependent and
    /// path-dependent routes, over all stamps and components.
    pub weight_deviation: f64,
    /// Max absolute weight gap of either route against the closed forms.
    pub closed_form_deviation: f64,
    /// Max absolute gap between the two ledgers, over all columns and stamps.
    pub ledger_deviation: f64,
    /// Max absolute gap between the functional Ito integral of the generated
    /// portfolio (stepwise integrand views) and the plain Follmer sum of the
    /// state-dependent weights, at the same level.
    pub integral_route_deviation: f64,
    pub state_ledger: DriftLedger,
    pub functional_ledger: DriftLedger,
}

/// Runs both guises of a mixed family end to end at one level and measures
/// every route gap the construction promises to close.
pub fn equivalence_check(
    spec: &MixedGeneratorSpec,
    s: &SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<EquivalenceReport> {
    let d = s.dim();
    let mu = market_weights(s)?;
    let mu_path = mu.as_path()?;
    let alpha = moving_average(&mu_path, spec.theta)?;

    let state_gen = MixedPhiGenerator::new(*spec, d);
    let pi_state = generated_weights(&state_gen, &mu, Some(&alpha))?;
    let state_ledger = master_decomposition(&state_gen, s, Some(&alpha), hier, level)?;

    let func_gen = MixedPhiFunctional::new(*spec, d);
    let x = s.log()?;
    let pi_func = functional_generated_weights(&func_gen, &x, None)?;
    let functional_ledger = functional_master_decomposition(&func_gen, s, None, hier, level)?;

    let pi_closed = mixed_weights(spec, &mu, &alpha)?;

    let mut weight_deviation = 0.0f64;
    let mut closed_form_deviation = 0.0f64;
    for k in 0..s.len() {
        for i in 0..d {
            weight_deviation =
                weight_deviation.max((pi_state.value(i, k) - pi_func.value(i, k)).abs());
            closed_form_deviation = closed_form_deviation
                .max((pi_state.value(i, k) - pi_closed.value(i, k)).abs())
                .max((pi_func.value(i, k) - pi_closed.value(i, k)).abs());
        }
    }

    fn columns(l: &DriftLedger) -> [ndarray::ArrayView1<'_, f64>; 5] {
        [
            l.generator_term.view(),
            l.second_order.view(),
            l.horizontal.view(),
            l.relative_log_wealth.view(),
            l.residual.view(),
        ]
    }
    let mut ledger_deviation = 0.0f64;
    for (a, b) in columns(&state_ledger).iter().zip(columns(&functional_ledger).iter()) {
        for (va, vb) in a.iter().zip(b.iter()) {
            ledger_deviation = ledger_deviation.max((va - vb).abs());
        }
    }

    // The driving integrals of the two routes: stepwise-view functional sums
    // against plain left-point sums of the state-route weights.
    let lifted = GeneratedPortfolioFunctional::new(&func_gen);
    let functional_drive = functional_ito_integral(&lifted, &x, None, hier, level)?;
    let plain_drive = follmer_integral(pi_state.values(), &x, hier, level)?;
    let mut integral_route_deviation = 0.0f64;
    for k in 0..s.len() {
        integral_route_deviation =
            integral_route_deviation.max((functional_drive.value(k) - plain_drive.value(k)).abs());
    }

    Ok(EquivalenceReport {
        weight_deviation,
        closed_form_deviation,
        ledger_deviation,
        integral_route_deviation,
        state_ledger,
        functional_ledger,
    })
}
