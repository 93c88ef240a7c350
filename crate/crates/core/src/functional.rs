//! Pathwise functional Ito calculus: non-anticipative functionals with
//! horizontal and vertical derivatives, stepwise approximands, the functional
//! Ito integral and formula, and the path-dependent master decomposition.
//!
//! The defining discipline of this module is the integrand convention of the
//! functional Ito integral: at a partition point `s`, the integrand sees the
//! stepwise approximand frozen just before `s` — forward interval values
//! strictly before `s`, the true value from `s` on — never the raw path.
//! Functionals are evaluated lazily through index-window views (no copies),
//! so a level costs one functional evaluation per partition point.


use ndarray::{Array1, Array2};

use crate::calculus::{carry_forward, covariation_matrix, IntegralSeries};
use crate::error::{Error, Result};
use crate::genport::DriftLedger;
use crate::grid::{same_grid, BvPath, PartitionHierarchy, SampledPath, TimeGrid};
use crate::portfolio::{portfolio_value, SchemeTag, WeightSeries};

/// Read-only view of a d-dimensional sampled path with a non-anticipativity
/// boundary. Values at stamps past `stop()` repeat the boundary value, so a
/// functional physically cannot see the future through a view.
pub trait PathLike {
    fn dim(&self) -> usize;

    /// Number of stamps of the underlying grid.
    fn len(&self) -> usize;

    /// Last stamp carrying information.
    fn stop(&self) -> usize;

    fn value(&self, component: usize, stamp: usize) -> f64;

    /// Bulk read of one column; overridden where a column is cheaper than
    /// `dim` scalar reads.
    fn snapshot(&self, stamp: usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.value(i, stamp);
        }
    }
}

/// The raw path stopped at a stamp: `X^t`.
pub struct StoppedPath<'a> {
    base: &'a SampledPath,
    stop: usize,
}

impl<'a> StoppedPath<'a> {
    pub fn new(base: &'a SampledPath, stop: usize) -> Self {
        Self { base, stop }
    }
}

impl PathLike for StoppedPath<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn len(&self) -> usize {
        self.base.len()
    }
    fn stop(&self) -> usize {
        self.stop
    }
    fn value(&self, component: usize, stamp: usize) -> f64 {
        self.base.value(component, stamp.min(self.stop))
    }
}

/// For every stamp, the smallest partition point strictly greater than it
/// (the last stamp maps to itself). Precomputed once per level so stepwise
/// views answer in constant time.
pub fn successor_map(points: &[usize], n_stamps: usize) -> Vec<usize> {
    let mut next = vec![n_stamps - 1; n_stamps];
    let mut p = points.len() - 1;
    for k in (0..n_stamps - 1).rev() {
        while p > 0 && points[p - 1] > k {
            p -= 1;
        }
        next[k] = points[p];
    }
    next
}

/// The stepwise approximand of a path along one partition level: constant at
/// the interval's forward value on each `[s, s')`, the true value at the last
/// stamp. With a stop `s`, values from `s` on freeze at the true `X(s)` (the
/// pre-jump value), which is exactly the integrand argument of the
/// functional Ito integral.
pub struct StepwisePath<'a> {
    base: &'a SampledPath,
    successor: &'a [usize],
    stop: Option<usize>,
}

impl<'a> StepwisePath<'a> {
    pub fn new(base: &'a SampledPath, successor: &'a [usize]) -> Self {
        Self { base, successor, stop: None }
    }

    /// The pre-limit variant frozen at partition point `stop`.
    pub fn pre_limit(base: &'a SampledPath, successor: &'a [usize], stop: usize) -> Self {
        Self { base, successor, stop: Some(stop) }
    }
}

impl PathLike for StepwisePath<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn len(&self) -> usize {
        self.base.len()
    }
    fn stop(&self) -> usize {
        self.stop.unwrap_or(self.base.len() - 1)
    }
    fn value(&self, component: usize, stamp: usize) -> f64 {
        if let Some(s) = self.stop {
            if stamp >= s {
                return self.base.value(component, s);
            }
        }
        self.base.value(component, self.successor[stamp])
    }
}

/// Constructs the stepwise approximand of `path` along a hierarchy level,
/// optionally frozen just before partition point `stop`.
pub fn stepwise_approximation<'a>(
    path: &'a SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
    successor: &'a [usize],
    stop: Option<usize>,
) -> Result<StepwisePath<'a>> {
    same_grid(path.grid(), hier.grid())?;
    let points = hier.level(level)?;
    if let Some(s) = stop {
        if points.binary_search(&s).is_err() {
            return Err(Error::Partition(format!("stop {s} is not a partition point of level {level}")));
        }
        Ok(StepwisePath::pre_limit(path, successor, s))
    } else {
        Ok(StepwisePath::new(path, successor))
    }
}

/// Additive bump of one component from the view's stop onward, used for
/// bump-based vertical derivatives.
pub struct VerticalBump<'a> {
    inner: &'a dyn PathLike,
    component: usize,
    amount: f64,
}

impl<'a> VerticalBump<'a> {
    pub fn new(inner: &'a dyn PathLike, component: usize, amount: f64) -> Self {
        Self { inner, component, amount }
    }
}

impl PathLike for VerticalBump<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn stop(&self) -> usize {
        self.inner.stop()
    }
    fn value(&self, component: usize, stamp: usize) -> f64 {
        let v = self.inner.value(component, stamp);
        if component == self.component && stamp >= self.inner.stop() {
            v + self.amount
        } else {
            v
        }
    }
    fn snapshot(&self, stamp: usize, out: &mut [f64]) {
        self.inner.snapshot(stamp, out);
        if stamp >= self.inner.stop() {
            out[self.component] += self.amount;
        }
    }
}

/// Normalized exponential of a log-price view: turns a view of `log S` into
/// a view of the market-weight path, without materializing it.
pub struct SoftmaxView<'a> {
    inner: &'a dyn PathLike,
}

impl<'a> SoftmaxView<'a> {
    pub fn new(inner: &'a dyn PathLike) -> Self {
        Self { inner }
    }
}

impl PathLike for SoftmaxView<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn len(&self) -> usize {
        self.inner.len()
    }
    fn stop(&self) -> usize {
        self.inner.stop()
    }
    fn value(&self, component: usize, stamp: usize) -> f64 {
        let d = self.inner.dim();
        let mut buf = vec![0.0; d];
        self.snapshot(stamp, &mut buf);
        buf[component]
    }
    fn snapshot(&self, stamp: usize, out: &mut [f64]) {
        self.inner.snapshot(stamp, out);
        softmax_in_place(out);
    }
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// Evaluation context handed to a functional: the grid, a path view, an
/// optional finite-variation path, and the evaluation stamp.
pub struct PathState<'a> {
    pub grid: &'a TimeGrid,
    pub x: &'a dyn PathLike,
    pub a: Option<&'a BvPath>,
    pub t: usize,
}

impl<'a> PathState<'a> {
    pub fn time(&self) -> f64 {
        self.grid.time(self.t)
    }
}

/// A non-anticipative functional `F(t, X^t, A^t)` with vertical (current
/// value bump) and horizontal (time extension) derivatives.
pub trait PathFunctional {
    /// Dimension of the path argument.
    fn dim(&self) -> usize;

    /// Number of finite-variation components beyond the time clock.
    fn bv_dim(&self) -> usize {
        0
    }

    fn evaluate(&self, st: &PathState) -> Result<f64>;

    /// Gradient of `v -> F(t, X + v 1_{[t, T]}, A)` at `v = 0`.
    fn vertical(&self, st: &PathState) -> Result<Vec<f64>>;

    /// Second vertical derivative matrix (symmetric).
    fn vertical2(&self, st: &PathState) -> Result<Array2<f64>>;

    /// Horizontal derivatives, component 0 against the time clock, then one
    /// per finite-variation component. Length `bv_dim() + 1`.
    fn horizontal(&self, st: &PathState) -> Result<Vec<f64>>;
}

/// `F(t, X) = log(e^{X_1(t)} + ... + e^{X_d(t)})`: the generator of the
/// functional market portfolio. Vertical derivative is the softmax weights.
pub struct SumExpFunctional {
    dim: usize,
}

impl SumExpFunctional {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl PathFunctional for SumExpFunctional {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, st: &PathState) -> Result<f64> {
        let mut x = vec![0.0; self.dim];
        st.x.snapshot(st.t, &mut x);
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = x.iter().map(|&v| (v - max).exp()).sum();
        Ok(max + total.ln())
    }

    fn vertical(&self, st: &PathState) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.dim];
        st.x.snapshot(st.t, &mut x);
        softmax_in_place(&mut x);
        Ok(x)
    }

    fn vertical2(&self, st: &PathState) -> Result<Array2<f64>> {
        let mut p = vec![0.0; self.dim];
        st.x.snapshot(st.t, &mut p);
        softmax_in_place(&mut p);
        let mut out = Array2::zeros((self.dim, self.dim));
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(i, j)] = if i == j { p[i] - p[i] * p[j] } else { -p[i] * p[j] };
            }
        }
        Ok(out)
    }

    fn horizontal(&self, _: &PathState) -> Result<Vec<f64>> {
        Ok(vec![0.0])
    }
}

/// `F(t, X) = X_i(t)^2`: the classical Ito-formula testbed.
pub struct CoordinateSquareFunctional {
    dim: usize,
    component: usize,
}

impl CoordinateSquareFunctional {
    pub fn new(dim: usize, component: usize) -> Self {
        Self { dim, component }
    }
}

impl PathFunctional for CoordinateSquareFunctional {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, st: &PathState) -> Result<f64> {
        let v = st.x.value(self.component, st.t);
        Ok(v * v)
    }

    fn vertical(&self, st: &PathState) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim];
        g[self.component] = 2.0 * st.x.value(self.component, st.t);
        Ok(g)
    }

    fn vertical2(&self, _: &PathState) -> Result<Array2<f64>> {
        let mut h = Array2::zeros((self.dim, self.dim));
        h[(self.component, self.component)] = 2.0;
        Ok(h)
    }

    fn horizontal(&self, _: &PathState) -> Result<Vec<f64>> {
        Ok(vec![0.0])
    }
}

/// `F(t, X, A) = t`: pure time dependence.
pub struct TimeFunctional {
    dim: usize,
}

impl TimeFunctional {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl PathFunctional for TimeFunctional {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, st: &PathState) -> Result<f64> {
        Ok(st.time())
    }

    fn vertical(&self, _: &PathState) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.dim])
    }

    fn vertical2(&self, _: &PathState) -> Result<Array2<f64>> {
        Ok(Array2::zeros((self.dim, self.dim)))
    }

    fn horizontal(&self, _: &PathState) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }
}

/// `F(t, X, A) = A_c(t)`: reads one finite-variation component.
pub struct BvCoordinateFunctional {
    dim: usize,
    bv_dim: usize,
    component: usize,
}

impl BvCoordinateFunctional {
    pub fn new(dim: usize, bv_dim: usize, component: usize) -> Self {
        Self { dim, bv_dim, component }
    }
}

impl PathFunctional for BvCoordinateFunctional {
    fn dim(&self) -> usize {
        self.dim
    }

    fn bv_dim(&self) -> usize {
        self.bv_dim
    }

    fn evaluate(&self, st: &PathState) -> Result<f64> {
        let a = st
            .a
            .ok_or_else(|| Error::Parameter("functional needs a finite-variation path".into()))?;
        Ok(a.value(self.component, st.t))
    }

    fn vertical(&self, _: &PathState) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.dim])
    }

    fn vertical2(&self, _: &PathState) -> Result<Array2<f64>> {
        Ok(Array2::zeros((self.dim, self.dim)))
    }

    fn horizontal(&self, _: &PathState) -> Result<Vec<f64>> {
        let mut h = vec![0.0; self.bv_dim + 1];
        h[self.component + 1] = 1.0;
        Ok(h)
    }
}

/// The functional extension of the market portfolio: softmax of the current
/// log prices, materialized as a weight series. Coincides with the market
/// weights of `exp(X)`.
pub fn functional_market_weights(x: &SampledPath) -> Result<WeightSeries> {
    let (d, n1) = (x.dim(), x.len());
    let mut out = Array2::zeros((d, n1));
    let mut buf = vec![0.0; d];
    for k in 0..n1 {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = x.value(i, k);
        }
        softmax_in_place(&mut buf);
        for i in 0..d {
            out[(i, k)] = buf[i];
        }
    }
    WeightSeries::new(x.grid().clone(), out, SchemeTag::Functional)
}

/// Functional Ito integral along one level: the cumulative sum of
/// `vertical F(s, X^{n,s-}, A) . (X(s') - X(s))` over partition points. The
/// integrand argument is the stepwise approximand frozen just before `s`,
/// never the raw path.
pub fn functional_ito_integral(
    f: &dyn PathFunctional,
    x: &SampledPath,
    a: Option<&BvPath>,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<IntegralSeries> {
    same_grid(x.grid(), hier.grid())?;
    if f.dim() != x.dim() {
        return Err(Error::Parameter(format!(
            "functional expects {} components, path has {}",
            f.dim(),
            x.dim()
        )));
    }
    let points = hier.level(level)?;
    let successor = successor_map(points, x.len());
    let d = x.dim();
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    let mut acc = 0.0;
    for w in points.windows(2) {
        let view = StepwisePath::pre_limit(x, &successor, w[0]);
        let st = PathState { grid: x.grid(), x: &view, a, t: w[0] };
        let grad = f.vertical(&st)?;
        let mut step = 0.0;
        for i in 0..d {
            step += grad[i] * (x.value(i, w[1]) - x.value(i, w[0]));
        }
        acc += step;
        cum.push(acc);
    }
    Ok(IntegralSeries::at_level(x.grid().clone(), level, carry_forward(points, &cum, x.len())))
}

/// Residual of the functional Ito formula at one level: the max over
/// partition points of
/// `|F(t) - F(0) - int vF dX - sum_k int DF_k dA_k - 1/2 sum_ij int v2F_ij d[X_i, X_j]|`.
/// Exact (up to float noise) for state-dependent functionals at the finest
/// level; a refinement-limit quantity otherwise.
pub fn functional_ito_formula_check(
    f: &dyn PathFunctional,
    x: &SampledPath,
    a: Option<&BvPath>,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<f64> {
    let drive = functional_ito_integral(f, x, a, hier, level)?;
    let cov = covariation_matrix(x, hier, level)?;
    let points = hier.level(level)?;
    let d = x.dim();
    let n1 = x.len();

    // Horizontal terms accumulate on the finest grid along the true path.
    let mut horizontal = Array1::zeros(n1);
    let mut acc = 0.0;
    for k in 1..n1 {
        let view = StoppedPath::new(x, k - 1);
        let st = PathState { grid: x.grid(), x: &view, a, t: k - 1 };
        let h = f.horizontal(&st)?;
        let mut step = h[0] * (x.grid().time(k) - x.grid().time(k - 1));
        if let Some(bv) = a {
            for c in 0..f.bv_dim() {
                step += h[c + 1] * (bv.value(c, k) - bv.value(c, k - 1));
            }
        }
        acc += step;
        horizontal[k] = acc;
    }

    let view0 = StoppedPath::new(x, 0);
    let f0 = f.evaluate(&PathState { grid: x.grid(), x: &view0, a, t: 0 })?;

    let mut quad = 0.0;
    let mut worst = 0.0f64;
    for w in points.windows(2) {
        let left = w[0];
        let view = StoppedPath::new(x, left);
        let st = PathState { grid: x.grid(), x: &view, a, t: left };
        let v2 = f.vertical2(&st)?;
        let mut step = 0.0;
        for i in 0..d {
            for j in 0..d {
                step += v2[(i, j)] * (cov.value(i, j, w[1]) - cov.value(i, j, left));
            }
        }
        quad += 0.5 * step;

        let t = w[1];
        let view_t = StoppedPath::new(x, t);
        let ft = f.evaluate(&PathState { grid: x.grid(), x: &view_t, a, t })?;
        let residual = ft - f0 - drive.value(t) - horizontal[t] - quad;
        worst = worst.max(residual.abs());
    }
    Ok(worst)
}

/// The finite-variation drift of the functional portfolio-value
/// representation:
///
/// ```text
/// B(t) = sum_k int DF_k dA_k
///      + 1/2 sum_ij int (v2F_ij + pi_i pi_j - delta_ij pi_i) d[log S_i, log S_j]
/// ```
///
/// with `x = log S` the path argument. `exp(F(t) - F(0) - B(t))` is then the
/// functional portfolio value.
pub fn bpi_drift(
    f: &dyn PathFunctional,
    x: &SampledPath,
    a: Option<&BvPath>,
    pi: &WeightSeries,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<Array1<f64>> {
    same_grid(x.grid(), hier.grid())?;
    same_grid(x.grid(), pi.grid())?;
    let d = x.dim();
    let n1 = x.len();
    let cov = covariation_matrix(x, hier, level)?;
    let points = hier.level(level)?;

    let mut horizontal = Array1::zeros(n1);
    let mut acc = 0.0;
    for k in 1..n1 {
        let view = StoppedPath::new(x, k - 1);
        let st = PathState { grid: x.grid(), x: &view, a, t: k - 1 };
        let h = f.horizontal(&st)?;
        let mut step = h[0] * (x.grid().time(k) - x.grid().time(k - 1));
        if let Some(bv) = a {
            for c in 0..f.bv_dim() {
                step += h[c + 1] * (bv.value(c, k) - bv.value(c, k - 1));
            }
        }
        acc += step;
        horizontal[k] = acc;
    }

    let mut quad_at_points = Vec::with_capacity(points.len());
    quad_at_points.push(0.0);
    let mut quad = 0.0;
    for w in points.windows(2) {
        let left = w[0];
        let view = StoppedPath::new(x, left);
        let st = PathState { grid: x.grid(), x: &view, a, t: left };
        let v2 = f.vertical2(&st)?;
        let mut step = 0.0;
        for i in 0..d {
            for j in 0..d {
                let correction = pi.value(i, left) * pi.value(j, left)
                    - if i == j { pi.value(i, left) } else { 0.0 };
                step += (v2[(i, j)] + correction) * (cov.value(i, j, w[1]) - cov.value(i, j, left));
            }
        }
        quad += 0.5 * step;
        quad_at_points.push(quad);
    }
    let quad_series = carry_forward(points, &quad_at_points, n1);
    Ok(&quad_series + &horizontal)
}

/// Weights of the portfolio generated by a positive weight-path functional:
/// `pi_i(t) = mu_i(t) (1 + g_i - sum_j mu_j g_j)` with
/// `g = vertical log G(t, weight path stopped at t)`.
pub fn functional_generated_weights(
    gen: &dyn PathFunctional,
    x: &SampledPath,
    a: Option<&BvPath>,
) -> Result<WeightSeries> {
    let weights = functional_market_weights(x)?;
    let w_path = weights.as_path()?;
    let (d, n1) = (x.dim(), x.len());
    if gen.dim() != d {
        return Err(Error::Parameter(format!(
            "weight functional expects {} components, path has {}",
            gen.dim(),
            d
        )));
    }
    let mut out = Array2::zeros((d, n1));
    for k in 0..n1 {
        let view = StoppedPath::new(&w_path, k);
        let st = PathState { grid: x.grid(), x: &view, a, t: k };
        let value = gen.evaluate(&st)?;
        if !(value > 0.0) {
            return Err(Error::Domain(format!(
                "weight functional value {value} is not strictly positive at stamp {k}"
            )));
        }
        let grad = gen.vertical(&st)?;
        let mut correction = 0.0;
        for j in 0..d {
            correction += weights.value(j, k) * grad[j] / value;
        }
        for i in 0..d {
            out[(i, k)] = weights.value(i, k) * (1.0 + grad[i] / value - correction);
        }
    }
    WeightSeries::new(x.grid().clone(), out, SchemeTag::Functional)
}

/// Lift of a weight-path functional `G` to log-price paths:
/// `F(t, X) = log G(t, softmax(X)) + log sum exp X(t)`. Its vertical
/// derivative is the generated portfolio itself, so the functional Ito
/// integral of this lift is the portfolio's driving integral with the
/// stepwise-approximand integrand convention.
pub struct GeneratedPortfolioFunctional<'g> {
    gen: &'g dyn PathFunctional,
}

impl<'g> GeneratedPortfolioFunctional<'g> {
    pub fn new(gen: &'g dyn PathFunctional) -> Self {
        Self { gen }
    }

    fn weights_at(&self, st: &PathState) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let view = SoftmaxView::new(st.x);
        let inner = PathState { grid: st.grid, x: &view, a: st.a, t: st.t };
        let value = self.gen.evaluate(&inner)?;
        if !(value > 0.0) {
            return Err(Error::Domain(format!(
                "weight functional value {value} is not strictly positive at stamp {}",
                st.t
            )));
        }
        let grad = self.gen.vertical(&inner)?;
        let d = self.gen.dim();
        let mut mu = vec![0.0; d];
        view.snapshot(st.t, &mut mu);
        let mut correction = 0.0;
        for j in 0..d {
            correction += mu[j] * grad[j] / value;
        }
        let mut pi = vec![0.0; d];
        for i in 0..d {
            pi[i] = mu[i] * (1.0 + grad[i] / value - correction);
        }
        Ok((pi, mu, value))
    }
}

impl PathFunctional for GeneratedPortfolioFunctional<'_> {
    fn dim(&self) -> usize {
        self.gen.dim()
    }

    fn bv_dim(&self) -> usize {
        self.gen.bv_dim()
    }

    fn evaluate(&self, st: &PathState) -> Result<f64> {
        let view = SoftmaxView::new(st.x);
        let inner = PathState { grid: st.grid, x: &view, a: st.a, t: st.t };
        let value = self.gen.evaluate(&inner)?;
        if !(value > 0.0) {
            return Err(Error::Domain("weight functional value is not strictly positive".into()));
        }
        let d = self.gen.dim();
        let mut x = vec![0.0; d];
        st.x.snapshot(st.t, &mut x);
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        Ok(value.ln() + lse)
    }

    fn vertical(&self, st: &PathState) -> Result<Vec<f64>> {
        Ok(self.weights_at(st)?.0)
    }

    fn vertical2(&self, st: &PathState) -> Result<Array2<f64>> {
        // Closed form for the composite's second vertical derivative: the
        // weight-functional Hessian contracted with the softmax Jacobian,
        // plus the reproducing terms of the generated weights.
        let view = SoftmaxView::new(st.x);
        let inner = PathState { grid: st.grid, x: &view, a: st.a, t: st.t };
        let value = self.gen.evaluate(&inner)?;
        let v2 = self.gen.vertical2(&inner)?;
        let (pi, mu, _) = self.weights_at(st)?;
        let d = self.gen.dim();
        let mut out = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                let mut quad = 0.0;
                for k in 0..d {
                    let jk = mu[k] * (if i == k { 1.0 } else { 0.0 } - mu[i]);
                    for l in 0..d {
                        let jl = mu[l] * (if j == l { 1.0 } else { 0.0 } - mu[j]);
                        quad += v2[(k, l)] / value * jk * jl;
                    }
                }
                out[(i, j)] = quad - pi[i] * pi[j]
                    + if i == j { pi[i] } else { 0.0 };
            }
        }
        Ok(out)
    }

    fn horizontal(&self, st: &PathState) -> Result<Vec<f64>> {
        let view = SoftmaxView::new(st.x);
        let inner = PathState { grid: st.grid, x: &view, a: st.a, t: st.t };
        let value = self.gen.evaluate(&inner)?;
        let h = self.gen.horizontal(&inner)?;
        Ok(h.into_iter().map(|v| v / value).collect())
    }
}

/// Runs the path-dependent master-formula pipeline at one level.
///
/// The drift columns come from the functional derivatives of `gen` along the
/// true (stopped) weight path: the second-order term against the level
/// increments of the weight covariations, the horizontal term against the
/// time clock and the finite-variation components on the finest grid. The
/// relative log-wealth uses the portfolio-value formula on the functionally
/// generated weights, so the state-dependent and path-dependent routes of
/// one generating family agree termwise whenever the functional is
/// effectively state-dependent.
pub fn functional_master_decomposition(
    gen: &dyn PathFunctional,
    s: &SampledPath,
    a: Option<&BvPath>,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<DriftLedger> {
    same_grid(s.grid(), hier.grid())?;
    if !s.is_positive() {
        return Err(Error::Domain("master decomposition needs a strictly positive price path".into()));
    }
    let x = s.log()?;
    let weights = functional_market_weights(&x)?;
    let w_path = weights.as_path()?;
    let pi = functional_generated_weights(gen, &x, a)?;

    let v_pi = portfolio_value(&pi, s, hier, level)?;
    let v_mu = portfolio_value(&weights, s, hier, level)?;
    let n1 = s.len();
    let d = s.dim();
    let mut lhs = Array1::zeros(n1);
    for k in 0..n1 {
        lhs[k] = (v_pi[k] / v_mu[k]).ln();
    }

    // Generator values along the true weight path, once per stamp.
    let mut values = Array1::zeros(n1);
    let mut generator_term = Array1::zeros(n1);
    for k in 0..n1 {
        let view = StoppedPath::new(&w_path, k);
        let st = PathState { grid: s.grid(), x: &view, a, t: k };
        let v = gen.evaluate(&st)?;
        if !(v > 0.0) {
            return Err(Error::Domain(format!(
                "weight functional value {v} is not strictly positive at stamp {k}"
            )));
        }
        values[k] = v;
        generator_term[k] = (v / values[0]).ln();
    }

    // Second-order drift against the level increments of [mu_i, mu_j].
    let cov_w = covariation_matrix(&w_path, hier, level)?;
    let points = hier.level(level)?;
    let mut at_points = Vec::with_capacity(points.len());
    at_points.push(0.0);
    let mut acc = 0.0;
    for w in points.windows(2) {
        let left = w[0];
        let view = StoppedPath::new(&w_path, left);
        let st = PathState { grid: s.grid(), x: &view, a, t: left };
        let v2 = gen.vertical2(&st)?;
        let mut step = 0.0;
        for i in 0..d {
            for j in 0..d {
                step += v2[(i, j)] * (cov_w.value(i, j, w[1]) - cov_w.value(i, j, left));
            }
        }
        acc -= 0.5 * step / values[left];
        at_points.push(acc);
    }
    let second_order = carry_forward(points, &at_points, n1);

    // Horizontal drift: time clock plus finite-variation components, finest grid.
    let mut horizontal = Array1::zeros(n1);
    let mut acc = 0.0;
    for k in 1..n1 {
        let view = StoppedPath::new(&w_path, k - 1);
        let st = PathState { grid: s.grid(), x: &view, a, t: k - 1 };
        let h = gen.horizontal(&st)?;
        let mut step = h[0] * (s.grid().time(k) - s.grid().time(k - 1));
        if let Some(bv) = a {
            for c in 0..gen.bv_dim() {
                step += h[c + 1] * (bv.value(c, k) - bv.value(c, k - 1));
            }
        }
        acc -= step / values[k - 1];
        horizontal[k] = acc;
    }

    Ok(DriftLedger::assemble(level, generator_term, second_order, horizontal, lhs))
}

/// Bump-based vertical derivative of a functional at a state: central
/// difference with the given step. Validation probe for analytic verticals.
pub fn vertical_bump_probe(
    f: &dyn PathFunctional,
    st: &PathState,
    step: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; f.dim()];
    for (i, o) in out.iter_mut().enumerate() {
        let up = VerticalBump::new(st.x, i, step);
        let dn = VerticalBump::new(st.x, i, -step);
        let fu = f.evaluate(&PathState { grid: st.grid, x: &up, a: st.a, t: st.t })?;
        let fd = f.evaluate(&PathState { grid: st.grid, x: &dn, a: st.a, t: st.t })?;
        *o = (fu - fd) / (2.0 * step);
    }
    Ok(out)
}

/// Bump-based horizontal derivatives at a stamp: the time component advances
/// the clock one stamp with the path frozen; finite-variation components
/// isolate each component's contribution to the same advance. Stamps where a
/// component's increment is below `1e-12` are skipped (NaN in the output).
pub fn horizontal_bump_probe(
    f: &dyn PathFunctional,
    x: &SampledPath,
    a: Option<&BvPath>,
    t: usize,
) -> Result<Vec<f64>> {
    if t + 1 >= x.len() {
        return Err(Error::Partition("horizontal probe needs a successor stamp".into()));
    }
    let grid = x.grid();
    let dt = grid.time(t + 1) - grid.time(t);
    let frozen_x = StoppedPath::new(x, t);

    let freeze_bv = |live_component: Option<usize>| -> Option<BvPath> {
        a.map(|bv| {
            let mut vals = bv.values().to_owned();
            for c in 0..bv.dim() {
                let keep_until = if Some(c) == live_component { t + 1 } else { t };
                for k in (keep_until + 1)..vals.ncols() {
                    vals[(c, k)] = vals[(c, keep_until)];
                }
            }
            BvPath::new(bv.grid().clone(), vals).expect("frozen copy keeps the grid")
        })
    };

    let base_bv = freeze_bv(None);
    let f_now = f.evaluate(&PathState { grid, x: &frozen_x, a: base_bv.as_ref(), t })?;
    let f_advanced =
        f.evaluate(&PathState { grid, x: &frozen_x, a: base_bv.as_ref(), t: t + 1 })?;

    let mut out = vec![f64::NAN; f.bv_dim() + 1];
    out[0] = (f_advanced - f_now) / dt;
    if let Some(bv) = a {
        for c in 0..f.bv_dim() {
            let da = bv.value(c, t + 1) - bv.value(c, t);
            if da.abs() < 1e-12 {
                continue;
            }
            let live = freeze_bv(Some(c));
            let f_live =
                f.evaluate(&PathState { grid, x: &frozen_x, a: live.as_ref(), t: t + 1 })?;
            out[c + 1] = (f_live - f_advanced) / da;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::follmer_integral;
    use crate::grid::row_matrix;
    use crate::portfolio::{covariance_measure, excess_growth, market_weights};
    use crate::synthetic::{simulate_paths, SyntheticSpec};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn brownian(d: usize, n: usize, seed: u64) -> SampledPath {
        let mut spec = SyntheticSpec::uncorrelated(d, n, 1.0, 0.2, seed);
        for i in 0..d {
            for j in 0..=i {
                spec.diffusion[i][j] = if i == j { 0.2 } else { 0.05 };
            }
        }
        simulate_paths(&spec).unwrap()
    }

    #[test]
    fn stepwise_constant_path_is_unchanged() {
        let g = Arc::new(TimeGrid::uniform(4, 1.0).unwrap());
        let p = SampledPath::new(g.clone(), row_matrix(&[2.0; 5])).unwrap();
        let h = PartitionHierarchy::dyadic(g, 2).unwrap();
        let points = h.level(1).unwrap();
        let successor = successor_map(points, p.len());
        let view = StepwisePath::new(&p, &successor);
        for k in 0..5 {
            assert_eq!(view.value(0, k), 2.0);
        }
    }

    #[test]
    fn stepwise_coarse_level_hand_case() {
        // 3-point path (1, 2, 4), level {0, 2}: forward interval value 4 on
        // [t_0, t_2), then the true terminal value 4.
        let g = Arc::new(TimeGrid::uniform(2, 1.0).unwrap());
        let p = SampledPath::new(g.clone(), row_matrix(&[1.0, 2.0, 4.0])).unwrap();
        let h = PartitionHierarchy::dyadic(g, 1).unwrap();
        let points = h.level(0).unwrap(); // {0, 2}
        assert_eq!(**points, vec![0, 2]);
        let successor = successor_map(points, 3);
        let view = StepwisePath::new(&p, &successor);
        assert_eq!(view.value(0, 0), 4.0);
        assert_eq!(view.value(0, 1), 4.0);
        assert_eq!(view.value(0, 2), 4.0);
    }

    #[test]
    fn pre_limit_freezes_true_value() {
        let g = Arc::new(TimeGrid::uniform(4, 1.0).unwrap());
        let p = SampledPath::new(g.clone(), row_matrix(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        let h = PartitionHierarchy::dyadic(g, 2).unwrap();
        let points = h.level(h.finest()).unwrap();
        let successor = successor_map(points, 5);
        let view = StepwisePath::pre_limit(&p, &successor, 2);
        // Forward values strictly before the stop, the true value from it on.
        assert_eq!(view.value(0, 0), 2.0);
        assert_eq!(view.value(0, 1), 3.0);
        assert_eq!(view.value(0, 2), 3.0);
        assert_eq!(view.value(0, 3), 3.0);
        assert_eq!(view.value(0, 4), 3.0);
    }

    #[test]
    fn stepwise_rejects_stop_outside_level() {
        let g = Arc::new(TimeGrid::uniform(4, 1.0).unwrap());
        let p = SampledPath::new(g.clone(), row_matrix(&[1.0; 5])).unwrap();
        let h = PartitionHierarchy::dyadic(g, 1).unwrap();
        let points = h.level(1).unwrap(); // {0, 2, 4}
        let successor = successor_map(points, 5);
        assert!(stepwise_approximation(&p, &h, 1, &successor, Some(3)).is_err());
        assert!(stepwise_approximation(&p, &h, 1, &successor, Some(2)).is_ok());
    }

    #[test]
    fn functional_weights_match_market_weights() {
        let s = brownian(3, 128, 42);
        let x = s.log().unwrap();
        let fw = functional_market_weights(&x).unwrap();
        let mw = market_weights(&s).unwrap();
        for k in 0..s.len() {
            for i in 0..3 {
                assert!((fw.value(i, k) - mw.value(i, k)).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn softmax_hand_value() {
        let g = Arc::new(TimeGrid::uniform(1, 1.0).unwrap());
        let mut m = Array2::zeros((2, 2));
        m[(0, 0)] = 0.0;
        m[(1, 0)] = 3.0f64.ln();
        m[(0, 1)] = 0.0;
        m[(1, 1)] = 3.0f64.ln();
        let x = SampledPath::new(g, m).unwrap();
        let w = functional_market_weights(&x).unwrap();
        assert_abs_diff_eq!(w.value(0, 0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(w.value(1, 0), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn ito_integral_of_sum_telescopes() {
        // F = sum_i X_i has constant unit vertical derivative, so the
        // integral telescopes even at coarse levels.
        struct SumFunctional(usize);
        impl PathFunctional for SumFunctional {
            fn dim(&self) -> usize {
                self.0
            }
            fn evaluate(&self, st: &PathState) -> Result<f64> {
                Ok((0..self.0).map(|i| st.x.value(i, st.t)).sum())
            }
            fn vertical(&self, _: &PathState) -> Result<Vec<f64>> {
                Ok(vec![1.0; self.0])
            }
            fn vertical2(&self, _: &PathState) -> Result<Array2<f64>> {
                Ok(Array2::zeros((self.0, self.0)))
            }
            fn horizontal(&self, _: &PathState) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
        }
        let s = brownian(2, 64, 5);
        let x = s.log().unwrap();
        let h = PartitionHierarchy::dyadic(x.grid().clone(), 6).unwrap();
        for level in [2usize, 4, h.finest()] {
            let i = functional_ito_integral(&SumFunctional(2), &x, None, &h, level).unwrap();
            let points = h.level(level).unwrap();
            for &p in points.iter() {
                let want: f64 = (0..2).map(|c| x.value(c, p) - x.value(c, 0)).sum();
                assert!((i.value(p) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn market_integrand_matches_follmer_termwise() {
        // The functional integral of the sum-exp generator and the plain
        // Follmer integral of the market weights coincide sum-by-sum at any
        // one level: the stepwise view hands the integrand the true current
        // value. The identity of the two integrals in the limit degenerates,
        // discretely, to this exact coincidence.
        let s = brownian(3, 256, 42);
        let x = s.log().unwrap();
        let mu = market_weights(&s).unwrap();
        let h = PartitionHierarchy::dyadic(x.grid().clone(), 8).unwrap();
        for level in [4usize, 6, h.finest()] {
            let lhs =
                functional_ito_integral(&SumExpFunctional::new(3), &x, None, &h, level).unwrap();
            let rhs = follmer_integral(mu.values(), &x, &h, level).unwrap();
            for k in 0..x.len() {
                assert!((lhs.value(k) - rhs.value(k)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn ito_formula_exact_for_coordinate_square() {
        let s = brownian(2, 512, 9);
        let x = s.log().unwrap();
        let h = PartitionHierarchy::dyadic(x.grid().clone(), 9).unwrap();
        let f = CoordinateSquareFunctional::new(2, 0);
        let residual = functional_ito_formula_check(&f, &x, None, &h, h.finest()).unwrap();
        assert!(residual <= 1e-10, "residual {residual}");
    }

    #[test]
    fn ito_formula_exact_for_constant_and_bv_reader() {
        let s = brownian(2, 64, 12);
        let x = s.log().unwrap();
        let h = PartitionHierarchy::dyadic(x.grid().clone(), 6).unwrap();

        struct ConstFunctional(usize);
        impl PathFunctional for ConstFunctional {
            fn dim(&self) -> usize {
                self.0
            }
            fn evaluate(&self, _: &PathState) -> Result<f64> {
                Ok(7.5)
            }
            fn vertical(&self, _: &PathState) -> Result<Vec<f64>> {
                Ok(vec![0.0; self.0])
            }
            fn vertical2(&self, _: &PathState) -> Result<Array2<f64>> {
                Ok(Array2::zeros((self.0, self.0)))
            }
            fn horizontal(&self, _: &PathState) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
        }
        let r = functional_ito_formula_check(&ConstFunctional(2), &x, None, &h, h.finest()).unwrap();
        assert_eq!(r, 0.0);

        // F = A_1(t) against a smooth finite-variation path: the formula
        // reduces to the telescoping Stieltjes sum, exact at every level.
        let times: Vec<f64> = x.grid().times().iter().map(|&t| (t * 1.3).sin()).collect();
        let a = BvPath::new(x.grid().clone(), row_matrix(&times)).unwrap();
        let f = BvCoordinateFunctional::new(2, 1, 0);
        let r = functional_ito_formula_check(&f, &x, Some(&a), &h, h.finest()).unwrap();
        assert!(r <= 1e-12);
    }

    #[test]
    fn bpi_drift_vanishes_for_market_generator() {
        let s = brownian(3, 256, 42);
        let x = s.log().unwrap();
        let mu = market_weights(&s).unwrap();
        let h = PartitionHierarchy::dyadic(x.grid().clone(), 8).unwrap();
        let b = bpi_drift(&SumExpFunctional::new(3), &x, None, &mu, &h, h.finest()).unwrap();
        for k in 0..x.len() {
            assert!(b[k].abs() <= 1e-10, "B({k}) = {}", b[k]);
        }
    }

    #[test]
    fn bpi_drift_of_zero_functional_is_negative_excess_growth() {
        struct ZeroFunctional(usize);
        impl PathFunctional for ZeroFunctional {
            fn dim(&self) -> usize {
                self.0
            }
            fn evaluate(&self, _: &PathState) -> Result<f64> {
                Ok(0.0)
            }
            fn vertical(&self, _: &PathState) -> Result<Vec<f64>> {
                Ok(vec![0.0; self.0])
            }
            fn vertical2(&self, _: &PathState) -> Result<Array2<f64>> {
                Ok(Array2::zeros((self.0, self.0)))
            }
            fn horizontal(&self, _: &PathState) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
        }
        let s = brownian(3, 256, 7);
        let x = s.log().unwrap();
        let mu = market_weights(&s).unwrap();
        let h = PartitionHierarchy::dyadic(x.grid().clone(), 8).unwrap();
        let b = bpi_drift(&ZeroFunctional(3), &x, None, &mu, &h, h.finest()).unwrap();
        let a = covariance_measure(&s, &h, h.finest()).unwrap();
        let gamma = excess_growth(&mu, &a).unwrap();
        for k in 0..x.len() {
            assert!((b[k] + gamma.value(k)).abs() <= 1e-10);
        }
    }

    #[test]
    fn bpi_drift_of_time_functional_is_time_minus_excess_growth() {
        let s = brownian(2, 128, 3);
        let x = s.log().unwrap();
        let mu = market_weights(&s).unwrap();
        let h = PartitionHierarchy::dyadic(x.grid().clone(), 7).unwrap();
        let b = bpi_drift(&TimeFunctional::new(2), &x, None, &mu, &h, h.finest()).unwrap();
        let a = covariance_measure(&s, &h, h.finest()).unwrap();
        let gamma = excess_growth(&mu, &a).unwrap();
        for k in 0..x.len() {
            let t = x.grid().time(k);
            assert!((b[k] - (t - gamma.value(k))).abs() <= 1e-10);
        }
    }

    #[test]
    fn sum_exp_generated_weights_are_market() {
        // Constant functionals reproduce the market; the sum-exp generator on
        // the weight path is not constant, so use an explicit constant.
        struct ConstFunctional(usize);
        impl PathFunctional for ConstFunctional {
            fn dim(&self) -> usize {
                self.0
            }
            fn evaluate(&self, _: &PathState) -> Result<f64> {
                Ok(2.0)
            }
            fn vertical(&self, _: &PathState) -> Result<Vec<f64>> {
                Ok(vec![0.0; self.0])
            }
            fn vertical2(&self, _: &PathState) -> Result<Array2<f64>> {
                Ok(Array2::zeros((self.0, self.0)))
            }
            fn horizontal(&self, _: &PathState) -> Result<Vec<f64>> {
                Ok(vec![0.0])
            }
        }
        let s = brownian(3, 64, 21);
        let x = s.log().unwrap();
        let pi = functional_generated_weights(&ConstFunctional(3), &x, None).unwrap();
        let mu = functional_market_weights(&x).unwrap();
        for k in 0..x.len() {
            for i in 0..3 {
                assert_abs_diff_eq!(pi.value(i, k), mu.value(i, k), epsilon = 1e-14);
            }
        }

        let ledger = functional_master_decomposition(&ConstFunctional(3), &s, None, &PartitionHierarchy::dyadic(s.grid().clone(), 6).unwrap(), 6).unwrap();
        assert!(ledger.generator_term.iter().all(|&v| v == 0.0));
        assert!(ledger.second_order.iter().all(|&v| v == 0.0));
        assert!(ledger.horizontal.iter().all(|&v| v == 0.0));
        assert!(ledger.max_abs_residual() <= 1e-12);
    }

    #[test]
    fn non_anticipativity_probe() {
        // Bumping the path strictly after the evaluation stamp must not
        // change any functional output.
        let s = brownian(2, 64, 17);
        let x = s.log().unwrap();
        let t = 30;
        let mut bumped_values = x.values().to_owned();
        for k in (t + 1)..x.len() {
            for i in 0..2 {
                bumped_values[(i, k)] += 0.5 + i as f64;
            }
        }
        let bumped = SampledPath::new(x.grid().clone(), bumped_values).unwrap();
        let f = SumExpFunctional::new(2);
        let view_a = StoppedPath::new(&x, t);
        let view_b = StoppedPath::new(&bumped, t);
        let st_a = PathState { grid: x.grid(), x: &view_a, a: None, t };
        let st_b = PathState { grid: x.grid(), x: &view_b, a: None, t };
        assert_eq!(f.evaluate(&st_a).unwrap(), f.evaluate(&st_b).unwrap());
        assert_eq!(f.vertical(&st_a).unwrap(), f.vertical(&st_b).unwrap());
        assert_eq!(f.horizontal(&st_a).unwrap(), f.horizontal(&st_b).unwrap());
    }

    #[test]
    fn vertical_probe_richardson_consistency() {
        let s = brownian(3, 64, 23);
        let x = s.log().unwrap();
        let f = SumExpFunctional::new(3);
        let t = 40;
        let view = StoppedPath::new(&x, t);
        let st = PathState { grid: x.grid(), x: &view, a: None, t };
        let analytic = f.vertical(&st).unwrap();
        let h1 = vertical_bump_probe(&f, &st, 1e-4).unwrap();
        let h2 = vertical_bump_probe(&f, &st, 5e-5).unwrap();
        for i in 0..3 {
            let e1 = (h1[i] - analytic[i]).abs();
            let e2 = (h2[i] - analytic[i]).abs();
            assert!(e1 <= 1e-7);
            // Central differences: halving the step shrinks the error by
            // about four; allow generous slack for rounding noise.
            assert!(e2 <= e1 * 0.5 + 1e-12);
        }
    }

    #[test]
    fn horizontal_probe_matches_analytic_for_bv_reader() {
        let s = brownian(2, 64, 29);
        let x = s.log().unwrap();
        let times: Vec<f64> = x.grid().times().iter().map(|&t| t * t + 1.0).collect();
        let a = BvPath::new(x.grid().clone(), row_matrix(&times)).unwrap();
        let f = BvCoordinateFunctional::new(2, 1, 0);
        let probe = horizontal_bump_probe(&f, &x, Some(&a), 10).unwrap();
        // Advancing the clock with everything frozen does not change A_1(t).
        assert_abs_diff_eq!(probe[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(probe[1], 1.0, epsilon = 1e-12);

        let ft = TimeFunctional::new(2);
        let probe = horizontal_bump_probe(&ft, &x, None, 10).unwrap();
        assert_abs_diff_eq!(probe[0], 1.0, epsilon = 1e-12);
    }
}
