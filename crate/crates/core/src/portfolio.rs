//! Market weights, portfolio values, and the measure-valued machinery:
//! covariance `a`, excess growth, covariances relative to a portfolio, the
//! numeraire invariance property, and relative-return identities.
//!
//! Since covariations need not be absolutely continuous in time, growth rates
//! and covariances are kept as cumulative measures `M([0, t])`; densities are
//! never formed. Every identity here is implemented as two independent
//! computations plus a recorded deviation — the verification is the point.
//!
//! The bond layer is fixed at rate zero: every portfolio handled here is
//! fully invested (weights sum to one), which makes the rate term vanish
//! identically. Weight columns that do not sum to one are rejected at
//! construction rather than silently mispriced.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::calculus::{
    carry_forward, covariation_matrix, follmer_integral, pair_count, pair_index, CovariationSeries,
};
use crate::error::{Error, Result};
use crate::grid::{same_grid, PartitionHierarchy, SampledPath, TimeGrid};

/// Provenance of a weight series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeTag {
    Market,
    Generated,
    Functional,
    Custom,
}

impl SchemeTag {
    pub fn label(&self) -> &'static str {
        match self {
            SchemeTag::Market => "market",
            SchemeTag::Generated => "generated",
            SchemeTag::Functional => "functional",
            SchemeTag::Custom => "custom",
        }
    }
}

/// Portfolio weights per time step. Columns sum to one within `1e-12`;
/// the long-only flag records whether all entries are `>= -1e-14`.
#[derive(Debug, Clone)]
pub struct WeightSeries {
    grid: Arc<TimeGrid>,
    weights: Array2<f64>,
    scheme: SchemeTag,
    long_only: bool,
}

impl WeightSeries {
    pub fn new(grid: Arc<TimeGrid>, weights: Array2<f64>, scheme: SchemeTag) -> Result<Self> {
        if weights.ncols() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "weights have {} columns but grid has {} stamps",
                weights.ncols(),
                grid.len()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("weights contain non-finite entries".into()));
        }
        for k in 0..weights.ncols() {
            let sum: f64 = weights.column(k).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "weight column {k} sums to {sum}, not 1 (fully-invested portfolios only)"
                )));
            }
        }
        let long_only = weights.iter().all(|&v| v >= -1e-14);
        Ok(Self { grid, weights, scheme, long_only })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn len(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn scheme(&self) -> SchemeTag {
        self.scheme
    }

    pub fn is_long_only(&self) -> bool {
        self.long_only
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.weights[(i, k)]
    }

    pub fn column(&self, k: usize) -> ArrayView1<'_, f64> {
        self.weights.column(k)
    }

    /// The weights as a sampled path, e.g. to compute `[mu_i, mu_j]`.
    pub fn as_path(&self) -> Result<SampledPath> {
        SampledPath::new(self.grid.clone(), self.weights.clone())
    }
}

/// A cumulative measure series `M([0, t_k])` with `M([0, 0]) = 0`, carried
/// piecewise-constantly between the partition points that produced it.
#[derive(Debug, Clone)]
pub struct MeasureSeries {
    grid: Arc<TimeGrid>,
    level_points: Arc<Vec<usize>>,
    cumulative: Array1<f64>,
    signed: bool,
}

impl MeasureSeries {
    pub(crate) fn from_increments(
        grid: Arc<TimeGrid>,
        level_points: Arc<Vec<usize>>,
        increments: &[f64],
        signed: bool,
    ) -> Result<Self> {
        debug_assert_eq!(increments.len() + 1, level_points.len());
        let mut at_points = Vec::with_capacity(level_points.len());
        at_points.push(0.0);
        let mut acc = 0.0;
        for &inc in increments {
            acc += inc;
            at_points.push(acc);
        }
        if !signed {
            if let Some(bad) = increments.iter().find(|&&v| v < 0.0) {
                return Err(Error::Domain(format!(
                    "unsigned measure received a negative increment {bad}"
                )));
            }
        }
        let cumulative = carry_forward(&level_points, &at_points, grid.len());
        Ok(Self { grid, level_points, cumulative, signed })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn level_points(&self) -> &Arc<Vec<usize>> {
        &self.level_points
    }

    pub fn is_signed(&self) -> bool {
        self.signed
    }

    pub fn cumulative(&self) -> ArrayView1<'_, f64> {
        self.cumulative.view()
    }

    pub fn value(&self, stamp: usize) -> f64 {
        self.cumulative[stamp]
    }

    pub fn terminal(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn increments(&self) -> Vec<f64> {
        self.level_points
            .windows(2)
            .map(|w| self.cumulative[w[1]] - self.cumulative[w[0]])
            .collect()
    }
}

/// A symmetric matrix of cumulative measures sharing one partition level,
/// in packed upper-triangle storage (so symmetry is exact by construction).
#[derive(Debug, Clone)]
pub struct MeasureMatrix {
    grid: Arc<TimeGrid>,
    level_points: Arc<Vec<usize>>,
    dim: usize,
    /// `pair_count(dim)` rows of cumulative series at every stamp.
    pairs: Array2<f64>,
}

impl MeasureMatrix {
    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level_points(&self) -> &Arc<Vec<usize>> {
        &self.level_points
    }

    pub fn pair(&self, i: usize, j: usize) -> ArrayView1<'_, f64> {
        self.pairs.row(pair_index(self.dim, i, j))
    }

    pub fn value(&self, i: usize, j: usize, stamp: usize) -> f64 {
        self.pairs[(pair_index(self.dim, i, j), stamp)]
    }

    /// Increment of the pair `(i, j)` over partition interval `l`.
    #[inline]
    fn increment(&self, i: usize, j: usize, l: usize) -> f64 {
        let row = pair_index(self.dim, i, j);
        self.pairs[(row, self.level_points[l + 1])] - self.pairs[(row, self.level_points[l])]
    }

    /// Writes the dense increment matrix of interval `l` into `out`.
    pub fn increment_matrix(&self, l: usize, out: &mut Array2<f64>) {
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(i, j)] = self.increment(i, j, l);
            }
        }
    }

    /// Smallest normalized quadratic form `v . (dM) v / |v|^2` seen over all
    /// increments and the given probe vectors. PSD increments keep this
    /// above a small negative floating-point floor.
    pub fn psd_probe(&self, probes: &[Vec<f64>]) -> f64 {
        let mut worst = f64::INFINITY;
        let mut m = Array2::zeros((self.dim, self.dim));
        for l in 0..self.level_points.len() - 1 {
            self.increment_matrix(l, &mut m);
            for v in probes {
                let norm2: f64 = v.iter().map(|x| x * x).sum();
                if norm2 == 0.0 {
                    continue;
                }
                let mut q = 0.0;
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        q += v[i] * m[(i, j)] * v[j];
                    }
                }
                worst = worst.min(q / norm2);
            }
        }
        worst
    }
}

/// The market portfolio: weights proportional to prices.
pub fn market_weights(s: &SampledPath) -> Result<WeightSeries> {
    if !s.is_positive() {
        return Err(Error::Domain("market weights need a strictly positive price path".into()));
    }
    let (d, n1) = (s.dim(), s.len());
    let mut w = Array2::zeros((d, n1));
    for k in 0..n1 {
        let total: f64 = (0..d).map(|i| s.value(i, k)).sum();
        for i in 0..d {
            w[(i, k)] = s.value(i, k) / total;
        }
    }
    WeightSeries::new(s.grid().clone(), w, SchemeTag::Market)
}

/// Exact market-portfolio value: total capitalization normalized to one at
/// time zero.
pub fn market_value(s: &SampledPath) -> Result<Array1<f64>> {
    if !s.is_positive() {
        return Err(Error::Domain("market value needs a strictly positive price path".into()));
    }
    let (d, n1) = (s.dim(), s.len());
    let t0: f64 = (0..d).map(|i| s.value(i, 0)).sum();
    let mut v = Array1::zeros(n1);
    for k in 0..n1 {
        v[k] = (0..d).map(|i| s.value(i, k)).sum::<f64>() / t0;
    }
    Ok(v)
}

/// Portfolio value with unit initial wealth at one partition level:
/// `exp( int (pi/S) dS - 1/2 sum_ij int (pi_i pi_j)/(S_i S_j) d[S_i, S_j] )`,
/// both sums over the level's partition points with left-point integrands.
pub fn portfolio_value(
    pi: &WeightSeries,
    s: &SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<Array1<f64>> {
    same_grid(pi.grid(), s.grid())?;
    same_grid(s.grid(), hier.grid())?;
    if pi.dim() != s.dim() {
        return Err(Error::GridMismatch(format!(
            "weights have {} components but path has {}",
            pi.dim(),
            s.dim()
        )));
    }
    if !s.is_positive() {
        return Err(Error::Domain("portfolio value needs a strictly positive price path".into()));
    }
    let points = hier.level(level)?;
    let d = s.dim();
    let mut log_at_points = Vec::with_capacity(points.len());
    log_at_points.push(0.0);
    let mut acc = 0.0;
    for w in points.windows(2) {
        let mut drive = 0.0;
        for i in 0..d {
            let xi = pi.value(i, w[0]) / s.value(i, w[0]);
            drive += xi * (s.value(i, w[1]) - s.value(i, w[0]));
        }
        // The quadratic-covariation correction over one interval is exactly
        // the squared driven increment, because the level increments of
        // [S_i, S_j] are the products of component increments.
        acc += drive - 0.5 * drive * drive;
        log_at_points.push(acc);
    }
    let log_v = carry_forward(points, &log_at_points, s.len());
    Ok(log_v.mapv(f64::exp))
}

/// Rebuilds the wealth of the buy-and-hold share counts implied by `pi`
/// through the Follmer sum `1 + int xi dS`, `xi_i = pi_i V / S_i`, and
/// returns the max relative gap to the exponential-formula value. The gap is
/// pure discretization error and must shrink under refinement.
pub fn self_financing_check(
    pi: &WeightSeries,
    s: &SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<f64> {
    let v = portfolio_value(pi, s, hier, level)?;
    let (d, n1) = (s.dim(), s.len());
    let mut shares = Array2::zeros((d, n1));
    for k in 0..n1 {
        for i in 0..d {
            shares[(i, k)] = pi.value(i, k) * v[k] / s.value(i, k);
        }
    }
    let recon = follmer_integral(shares.view(), s, hier, level)?;
    let mut worst = 0.0f64;
    for k in 0..n1 {
        worst = worst.max(((1.0 + recon.value(k)) - v[k]).abs() / v[k]);
    }
    Ok(worst)
}

/// The covariance measure of the market: `a_ij([0, t]) = [log S_i, log S_j](t)`.
pub fn covariance_measure(
    s: &SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<MeasureMatrix> {
    if !s.is_positive() {
        return Err(Error::Domain("covariance measure needs a strictly positive price path".into()));
    }
    let log_s = s.log()?;
    let cov = covariation_matrix(&log_s, hier, level)?;
    Ok(measure_matrix_from_covariation(&cov))
}

/// Reinterprets a covariation series as a matrix of cumulative measures.
pub fn measure_matrix_from_covariation(cov: &CovariationSeries) -> MeasureMatrix {
    let d = cov.dim();
    let n1 = cov.grid().len();
    let mut pairs = Array2::zeros((pair_count(d), n1));
    for i in 0..d {
        for j in i..d {
            pairs.row_mut(pair_index(d, i, j)).assign(&cov.pair(i, j));
        }
    }
    MeasureMatrix {
        grid: cov.grid().clone(),
        level_points: cov.level_points().clone(),
        dim: d,
        pairs,
    }
}

/// Excess growth rate of a portfolio, accumulated against the covariance
/// increments: `1/2 (sum_i pi_i da_ii - sum_ij pi_i pi_j da_ij)`.
pub fn excess_growth(pi: &WeightSeries, a: &MeasureMatrix) -> Result<MeasureSeries> {
    same_grid(pi.grid(), a.grid())?;
    if pi.dim() != a.dim() {
        return Err(Error::GridMismatch("weights and covariance measure disagree on dimension".into()));
    }
    let d = a.dim();
    let points = a.level_points();
    let mut incs = Vec::with_capacity(points.len() - 1);
    let mut da = Array2::zeros((d, d));
    for (l, w) in points.windows(2).enumerate() {
        a.increment_matrix(l, &mut da);
        let left = w[0];
        let mut diag = 0.0;
        let mut quad = 0.0;
        for i in 0..d {
            let pii = pi.value(i, left);
            diag += pii * da[(i, i)];
            let mut row = 0.0;
            for j in 0..d {
                row += da[(i, j)] * pi.value(j, left);
            }
            quad += pii * row;
        }
        incs.push(0.5 * (diag - quad));
    }
    MeasureSeries::from_increments(a.grid().clone(), points.clone(), &incs, true)
}

/// Covariances of the individual stocks relative to the portfolio `rho`:
/// `tau_ij(dt) = (rho - e_i)^T a(dt) (rho - e_j)`.
pub fn relative_covariance(rho: &WeightSeries, a: &MeasureMatrix) -> Result<MeasureMatrix> {
    same_grid(rho.grid(), a.grid())?;
    if rho.dim() != a.dim() {
        return Err(Error::GridMismatch("weights and covariance measure disagree on dimension".into()));
    }
    let d = a.dim();
    let points = a.level_points();
    let n1 = a.grid().len();
    let np = pair_count(d);
    let mut at_points = vec![vec![0.0f64; points.len()]; np];
    let mut da = Array2::zeros((d, d));
    let mut w = vec![0.0f64; d];
    for (l, win) in points.windows(2).enumerate() {
        a.increment_matrix(l, &mut da);
        let left = win[0];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = (0..d).map(|j| da[(i, j)] * rho.value(j, left)).sum();
        }
        let q: f64 = (0..d).map(|i| rho.value(i, left) * w[i]).sum();
        for i in 0..d {
            for j in i..d {
                let inc = q - w[i] - w[j] + da[(i, j)];
                let p = pair_index(d, i, j);
                at_points[p][l + 1] = at_points[p][l] + inc;
            }
        }
    }
    let mut pairs = Array2::zeros((np, n1));
    for (p, cum) in at_points.iter().enumerate() {
        pairs.row_mut(p).assign(&carry_forward(points, cum, n1));
    }
    Ok(MeasureMatrix { grid: a.grid().clone(), level_points: points.clone(), dim: d, pairs })
}

/// Max over stamps of the weighted relative-covariance sum
/// `sum_j rho_j(t) tau^rho_ij(dt)`, which annihilates exactly for finite
/// sums when `rho` is the portfolio the covariances are taken relative to.
pub fn weighted_tau_annihilation(rho: &WeightSeries, tau: &MeasureMatrix) -> Result<f64> {
    same_grid(rho.grid(), tau.grid())?;
    let d = tau.dim();
    let points = tau.level_points();
    let mut worst = 0.0f64;
    let mut cums = vec![0.0f64; d];
    let mut dt = Array2::zeros((d, d));
    for (l, w) in points.windows(2).enumerate() {
        tau.increment_matrix(l, &mut dt);
        let left = w[0];
        for (i, cum) in cums.iter_mut().enumerate() {
            let inc: f64 = (0..d).map(|j| rho.value(j, left) * dt[(i, j)]).sum();
            *cum += inc;
            worst = worst.max(cum.abs());
        }
    }
    Ok(worst)
}

/// Numeraire invariance: the excess growth of `pi` computed directly from
/// the covariance measure must match the same combination formed from the
/// covariances relative to any other portfolio `rho`. Exact finite-sum
/// algebra; the returned max deviation is pure floating-point error.
pub fn numeraire_invariance_check(
    pi: &WeightSeries,
    rho: &WeightSeries,
    a: &MeasureMatrix,
) -> Result<f64> {
    let direct = excess_growth(pi, a)?;
    let tau = relative_covariance(rho, a)?;
    let d = a.dim();
    let points = a.level_points();
    let mut worst = 0.0f64;
    let mut acc = 0.0f64;
    let mut dt = Array2::zeros((d, d));
    for (l, w) in points.windows(2).enumerate() {
        tau.increment_matrix(l, &mut dt);
        let left = w[0];
        let mut diag = 0.0;
        let mut quad = 0.0;
        for i in 0..d {
            let pii = pi.value(i, left);
            diag += pii * dt[(i, i)];
            let mut row = 0.0;
            for j in 0..d {
                row += dt[(i, j)] * pi.value(j, left);
            }
            quad += pii * row;
        }
        acc += 0.5 * (diag - quad);
        worst = worst.max((acc - direct.value(w[1])).abs());
    }
    Ok(worst)
}

/// Relative log-wealth of `pi` against the market, computed two ways:
///
/// 1. via the portfolio-value ratio (the returned series), and
/// 2. via the relative-return sum
///    `int (pi/mu) dmu - 1/2 sum_ij int pi_i pi_j dtau^mu_ij`,
///
/// with the max gap between the two recorded as a diagnostic. The gap is a
/// refinement-limit quantity.
pub struct RelativeLogWealth {
    pub series: Array1<f64>,
    pub route_deviation: f64,
}

pub fn relative_log_wealth(
    pi: &WeightSeries,
    s: &SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<RelativeLogWealth> {
    let mu = market_weights(s)?;
    let v_pi = portfolio_value(pi, s, hier, level)?;
    let v_mu = portfolio_value(&mu, s, hier, level)?;
    let n1 = s.len();
    let mut series = Array1::zeros(n1);
    for k in 0..n1 {
        series[k] = (v_pi[k] / v_mu[k]).ln();
    }

    // Independent route via the market-weight dynamics.
    let d = s.dim();
    let mu_path = mu.as_path()?;
    let mut ratio = Array2::zeros((d, n1));
    for k in 0..n1 {
        for i in 0..d {
            ratio[(i, k)] = pi.value(i, k) / mu.value(i, k);
        }
    }
    let drive = follmer_integral(ratio.view(), &mu_path, hier, level)?;
    let a = covariance_measure(s, hier, level)?;
    let tau = relative_covariance(&mu, &a)?;
    let points = a.level_points();
    let mut dt = Array2::zeros((d, d));
    let mut acc = 0.0f64;
    let mut route_deviation = 0.0f64;
    for (l, w) in points.windows(2).enumerate() {
        tau.increment_matrix(l, &mut dt);
        let left = w[0];
        let mut quad = 0.0;
        for i in 0..d {
            let pii = pi.value(i, left);
            let mut row = 0.0;
            for j in 0..d {
                row += dt[(i, j)] * pi.value(j, left);
            }
            quad += pii * row;
        }
        acc += 0.5 * quad;
        let via_dynamics = drive.value(w[1]) - acc;
        route_deviation = route_deviation.max((series[w[1]] - via_dynamics).abs());
    }
    Ok(RelativeLogWealth { series, route_deviation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::row_matrix;
    use crate::synthetic::{simulate_paths, SyntheticSpec};
    use approx::assert_abs_diff_eq;

    fn grid_of(n: usize) -> Arc<TimeGrid> {
        Arc::new(TimeGrid::uniform(n, 1.0).unwrap())
    }

    fn two_asset_path() -> SampledPath {
        let g = grid_of(4);
        let mut m = Array2::zeros((2, 5));
        let s1 = [1.0, 1.2, 0.9, 1.4, 1.1];
        let s2 = [2.0, 1.8, 2.3, 2.1, 2.6];
        for k in 0..5 {
            m[(0, k)] = s1[k];
            m[(1, k)] = s2[k];
        }
        SampledPath::new(g, m).unwrap()
    }

    #[test]
    fn market_weights_hand_cases() {
        let g = grid_of(1);
        let one = SampledPath::new(g.clone(), row_matrix(&[5.0, 7.0])).unwrap();
        let w = market_weights(&one).unwrap();
        assert_eq!(w.value(0, 0), 1.0);
        assert_eq!(w.value(0, 1), 1.0);

        let mut m = Array2::zeros((2, 2));
        m[(0, 0)] = 1.0;
        m[(1, 0)] = 3.0;
        m[(0, 1)] = 2.0;
        m[(1, 1)] = 2.0;
        let s = SampledPath::new(g, m).unwrap();
        let w = market_weights(&s).unwrap();
        assert_abs_diff_eq!(w.value(0, 0), 0.25);
        assert_abs_diff_eq!(w.value(1, 0), 0.75);
        assert_abs_diff_eq!(w.value(0, 1), 0.5);
        assert_abs_diff_eq!(w.value(1, 1), 0.5);
        assert_eq!(w.scheme(), SchemeTag::Market);
    }

    #[test]
    fn market_value_hand_cases() {
        let g = grid_of(1);
        let mut m = Array2::zeros((2, 2));
        m[(0, 0)] = 1.0;
        m[(1, 0)] = 1.0;
        m[(0, 1)] = 2.0;
        m[(1, 1)] = 3.0;
        let s = SampledPath::new(g, m).unwrap();
        let v = market_value(&s).unwrap();
        assert_abs_diff_eq!(v[0], 1.0);
        assert_abs_diff_eq!(v[1], 2.5);
    }

    #[test]
    fn weight_columns_must_sum_to_one() {
        let g = grid_of(1);
        let bad = Array2::from_shape_vec((2, 2), vec![0.5, 0.5, 0.4, 0.4]).unwrap();
        assert!(matches!(
            WeightSeries::new(g, bad, SchemeTag::Custom),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn constant_path_has_unit_portfolio_value() {
        let g = grid_of(3);
        let mut m = Array2::zeros((2, 4));
        for k in 0..4 {
            m[(0, k)] = 2.0;
            m[(1, k)] = 5.0;
        }
        let s = SampledPath::new(g.clone(), m).unwrap();
        let h = PartitionHierarchy::dyadic(g.clone(), 1).unwrap();
        let mut w = Array2::zeros((2, 4));
        for k in 0..4 {
            w[(0, k)] = 0.3;
            w[(1, k)] = 0.7;
        }
        let pi = WeightSeries::new(g, w, SchemeTag::Custom).unwrap();
        let v = portfolio_value(&pi, &s, &h, h.finest()).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(v[k], 1.0);
        }
        assert_abs_diff_eq!(self_financing_check(&pi, &s, &h, h.finest()).unwrap(), 0.0);
    }

    #[test]
    fn single_asset_value_tracks_price_ratio() {
        let spec = SyntheticSpec::uncorrelated(1, 1 << 12, 1.0, 1.0, 42);
        let s = simulate_paths(&spec).unwrap();
        let h = PartitionHierarchy::dyadic(s.grid().clone(), 12).unwrap();
        let pi = market_weights(&s).unwrap(); // d = 1: identically one
        let v = portfolio_value(&pi, &s, &h, h.finest()).unwrap();
        let n = s.len() - 1;
        let exact = s.value(0, n) / s.value(0, 0);
        assert!((v[n] - exact).abs() / exact <= 2e-2);
    }

    #[test]
    fn excess_growth_degenerate_cases() {
        let s = two_asset_path();
        let h = PartitionHierarchy::dyadic(s.grid().clone(), 2).unwrap();
        let a = covariance_measure(&s, &h, h.finest()).unwrap();

        // Concentrated portfolio: the two sums cancel exactly.
        let mut conc = Array2::zeros((2, 5));
        for k in 0..5 {
            conc[(0, k)] = 1.0;
        }
        let e0 = WeightSeries::new(s.grid().clone(), conc, SchemeTag::Custom).unwrap();
        let g = excess_growth(&e0, &a).unwrap();
        assert!(g.cumulative().iter().all(|&v| v == 0.0));

        // Long-only market weights: non-negative cumulative growth.
        let mu = market_weights(&s).unwrap();
        let g = excess_growth(&mu, &a).unwrap();
        assert!(g.terminal() >= -1e-10);
        let probes: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, -1.0], vec![0.3, 0.9]];
        assert!(a.psd_probe(&probes) >= -1e-10);
    }

    #[test]
    fn single_asset_excess_growth_vanishes() {
        let spec = SyntheticSpec::uncorrelated(1, 64, 1.0, 0.5, 3);
        let s = simulate_paths(&spec).unwrap();
        let h = PartitionHierarchy::dyadic(s.grid().clone(), 6).unwrap();
        let a = covariance_measure(&s, &h, h.finest()).unwrap();
        let mu = market_weights(&s).unwrap();
        let g = excess_growth(&mu, &a).unwrap();
        assert!(g.cumulative().iter().all(|&v| v.abs() <= 1e-15));
    }

    #[test]
    fn relative_covariance_zero_measure() {
        let g = grid_of(3);
        let mut flat = Array2::zeros((2, 4));
        for k in 0..4 {
            flat[(0, k)] = 1.0;
            flat[(1, k)] = 4.0;
        }
        let s = SampledPath::new(g.clone(), flat).unwrap();
        let h = PartitionHierarchy::dyadic(g, 1).unwrap();
        let a = covariance_measure(&s, &h, h.finest()).unwrap();
        let mu = market_weights(&s).unwrap();
        let tau = relative_covariance(&mu, &a).unwrap();
        for k in 0..4 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(tau.value(i, j, k), 0.0);
                }
            }
        }
    }

    #[test]
    fn market_weighted_tau_annihilates() {
        let s = two_asset_path();
        let h = PartitionHierarchy::dyadic(s.grid().clone(), 2).unwrap();
        let a = covariance_measure(&s, &h, h.finest()).unwrap();
        let mu = market_weights(&s).unwrap();
        let tau = relative_covariance(&mu, &a).unwrap();
        assert!(weighted_tau_annihilation(&mu, &tau).unwrap() <= 1e-10);
    }

    #[test]
    fn numeraire_invariance_is_exact() {
        let s = two_asset_path();
        let h = PartitionHierarchy::dyadic(s.grid().clone(), 2).unwrap();
        let a = covariance_measure(&s, &h, h.finest()).unwrap();
        let mu = market_weights(&s).unwrap();

        // rho concentrated on one asset.
        let mut conc = Array2::zeros((2, 5));
        for k in 0..5 {
            conc[(1, k)] = 1.0;
        }
        let e1 = WeightSeries::new(s.grid().clone(), conc, SchemeTag::Custom).unwrap();
        assert!(numeraire_invariance_check(&mu, &e1, &a).unwrap() <= 1e-10);

        // rho = pi = market.
        assert!(numeraire_invariance_check(&mu, &mu, &a).unwrap() <= 1e-10);
    }

    #[test]
    fn relative_log_wealth_of_market_is_zero() {
        let s = two_asset_path();
        let h = PartitionHierarchy::dyadic(s.grid().clone(), 2).unwrap();
        let mu = market_weights(&s).unwrap();
        let r = relative_log_wealth(&mu, &s, &h, h.finest()).unwrap();
        assert!(r.series.iter().all(|&v| v == 0.0));
    }
}
