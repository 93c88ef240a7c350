//! Pathwise covariation sums, Follmer integrals as partition Riemann sums,
//! and Riemann-Stieltjes integrals against finite-variation paths.
//!
//! Conventions, shared by every sum in this crate:
//!
//! * left-point evaluation of integrands;
//! * the cumulative value at a partition point includes exactly the
//!   increments of intervals contained in `[0, s]`, and series are carried
//!   piecewise-constantly (cadlag) to grid stamps between partition points;
//! * integrals against finite-variation paths always run on the finest grid,
//!   because they converge classically and finer is strictly better — the
//!   level parameter only governs quadratic-variation objects.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::grid::{same_grid, BvPath, PartitionHierarchy, SampledPath, TimeGrid};

/// Packed index of the pair `(i, j)`, `i <= j`, in an upper-triangle layout.
#[inline]
pub(crate) fn pair_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

/// Number of unordered pairs including diagonals.
#[inline]
pub(crate) fn pair_count(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Spreads values known at partition points onto every grid stamp by
/// carrying the last partition-point value forward.
pub(crate) fn carry_forward(points: &[usize], at_points: &[f64], n_stamps: usize) -> Array1<f64> {
    debug_assert_eq!(points.len(), at_points.len());
    let mut out = Array1::zeros(n_stamps);
    let mut m = 0usize;
    for k in 0..n_stamps {
        if m + 1 < points.len() && points[m + 1] <= k {
            m += 1;
        }
        out[k] = at_points[m];
    }
    out
}

/// Cumulative pairwise covariation series `[X_i, X_j](t)` along one
/// partition level, for all component pairs of a path.
///
/// Symmetry holds exactly: pairs are stored once in packed upper-triangle
/// form. Diagonal series are non-decreasing sums of squares starting at 0.
#[derive(Debug, Clone)]
pub struct CovariationSeries {
    grid: Arc<TimeGrid>,
    level: usize,
    level_points: Arc<Vec<usize>>,
    dim: usize,
    /// `pair_count(dim)` rows, one cumulative series per pair, at every stamp.
    pairs: Array2<f64>,
    polarization_deviation: f64,
}

impl CovariationSeries {
    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn level_points(&self) -> &Arc<Vec<usize>> {
        &self.level_points
    }

    /// Cumulative series for the pair `(i, j)` at every grid stamp.
    pub fn pair(&self, i: usize, j: usize) -> ArrayView1<'_, f64> {
        self.pairs.row(pair_index(self.dim, i, j))
    }

    pub fn value(&self, i: usize, j: usize, stamp: usize) -> f64 {
        self.pairs[(pair_index(self.dim, i, j), stamp)]
    }

    /// Per-interval increments of the pair `(i, j)` along the level's
    /// partition points (length `level_points.len() - 1`).
    pub fn increments(&self, i: usize, j: usize) -> Vec<f64> {
        let row = self.pair(i, j);
        self.level_points
            .windows(2)
            .map(|w| row[w[1]] - row[w[0]])
            .collect()
    }

    /// Max absolute deviation between the directly summed cross terms and
    /// their polarization reconstruction `([X_i+X_j] - [X_i] - [X_j]) / 2`.
    /// Pure floating-point error for finite sums.
    pub fn polarization_deviation(&self) -> f64 {
        self.polarization_deviation
    }
}

fn pair_cumulative(
    xi: ArrayView1<'_, f64>,
    xj: ArrayView1<'_, f64>,
    points: &[usize],
) -> Vec<f64> {
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    let mut acc = 0.0;
    for w in points.windows(2) {
        acc += (xi[w[1]] - xi[w[0]]) * (xj[w[1]] - xj[w[0]]);
        cum.push(acc);
    }
    cum
}

/// Covariation `[X, Y]` of two scalar paths along one partition level.
pub fn covariation(
    x: &SampledPath,
    y: &SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<CovariationSeries> {
    if x.dim() != 1 || y.dim() != 1 {
        return Err(Error::Parameter(
            "covariation takes scalar paths; use covariation_matrix for d > 1".into(),
        ));
    }
    same_grid(x.grid(), y.grid())?;
    same_grid(x.grid(), hier.grid())?;
    let points = hier.level(level)?.clone();
    let n1 = x.len();

    let cxy = pair_cumulative(x.component(0), y.component(0), &points);
    let cxx = pair_cumulative(x.component(0), x.component(0), &points);
    let cyy = pair_cumulative(y.component(0), y.component(0), &points);
    let mut sum = Vec::with_capacity(points.len());
    for (k, w) in points.windows(2).enumerate() {
        let _ = k;
        let dx = x.component(0)[w[1]] - x.component(0)[w[0]];
        let dy = y.component(0)[w[1]] - y.component(0)[w[0]];
        sum.push((dx + dy) * (dx + dy));
    }
    let mut polarization_deviation = 0.0f64;
    let mut acc = 0.0;
    for m in 1..points.len() {
        acc += sum[m - 1];
        let rec = 0.5 * (acc - cxx[m] - cyy[m]);
        polarization_deviation = polarization_deviation.max((rec - cxy[m]).abs());
    }

    let mut pairs = Array2::zeros((1, n1));
    pairs.row_mut(0).assign(&carry_forward(&points, &cxy, n1));
    Ok(CovariationSeries {
        grid: x.grid().clone(),
        level,
        level_points: points,
        dim: 1,
        pairs,
        polarization_deviation,
    })
}

/// All pairwise covariations `[S_i, S_j]` of a d-dimensional path along one
/// partition level, with the polarization cross-check recorded.
pub fn covariation_matrix(
    s: &SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<CovariationSeries> {
    same_grid(s.grid(), hier.grid())?;
    let points = hier.level(level)?.clone();
    let d = s.dim();
    let n1 = s.len();
    let np = pair_count(d);

    let mut at_points: Vec<Vec<f64>> = Vec::with_capacity(np);
    for i in 0..d {
        for j in i..d {
            at_points.push(pair_cumulative(s.component(i), s.component(j), &points));
        }
    }

    // Polarization reconstruction of every off-diagonal pair from [X_i + X_j].
    let mut polarization_deviation = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let xi = s.component(i);
            let xj = s.component(j);
            let mut acc = 0.0;
            for (m, w) in points.windows(2).enumerate() {
                let dsum = (xi[w[1]] + xj[w[1]]) - (xi[w[0]] + xj[w[0]]);
                acc += dsum * dsum;
                let direct = at_points[pair_index(d, i, j)][m + 1];
                let cii = at_points[pair_index(d, i, i)][m + 1];
                let cjj = at_points[pair_index(d, j, j)][m + 1];
                let rec = 0.5 * (acc - cii - cjj);
                polarization_deviation = polarization_deviation.max((rec - direct).abs());
            }
        }
    }

    let mut pairs = Array2::zeros((np, n1));
    for (p, cum) in at_points.iter().enumerate() {
        pairs.row_mut(p).assign(&carry_forward(&points, cum, n1));
    }
    Ok(CovariationSeries {
        grid: s.grid().clone(),
        level,
        level_points: points,
        dim: d,
        pairs,
        polarization_deviation,
    })
}

/// A cumulative integral series `I(t_k)` with `I(t_0) = 0`, evaluated at
/// every grid stamp. `level` is `None` for finest-grid (Stieltjes) sums.
#[derive(Debug, Clone)]
pub struct IntegralSeries {
    grid: Arc<TimeGrid>,
    level: Option<usize>,
    values: Array1<f64>,
}

impl IntegralSeries {
    pub(crate) fn at_level(grid: Arc<TimeGrid>, level: usize, values: Array1<f64>) -> Self {
        Self { grid, level: Some(level), values }
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn level(&self) -> Option<usize> {
        self.level
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn value(&self, stamp: usize) -> f64 {
        self.values[stamp]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Follmer integral of a d-row integrand series against a d-dimensional path
/// along one partition level: the cumulative left-point Riemann sum
/// `sum over s of xi(s) . (S(s') - S(s))`.
pub fn follmer_integral(
    integrand: ArrayView2<'_, f64>,
    integrator: &SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<IntegralSeries> {
    same_grid(integrator.grid(), hier.grid())?;
    if integrand.ncols() != integrator.len() || integrand.nrows() != integrator.dim() {
        return Err(Error::GridMismatch(format!(
            "integrand is {}x{} but integrator is {}x{}",
            integrand.nrows(),
            integrand.ncols(),
            integrator.dim(),
            integrator.len()
        )));
    }
    let points = hier.level(level)?;
    let d = integrator.dim();
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    let mut acc = 0.0;
    for w in points.windows(2) {
        let mut step = 0.0;
        for i in 0..d {
            step += integrand[(i, w[0])] * (integrator.value(i, w[1]) - integrator.value(i, w[0]));
        }
        acc += step;
        cum.push(acc);
    }
    Ok(IntegralSeries {
        grid: integrator.grid().clone(),
        level: Some(level),
        values: carry_forward(points, &cum, integrator.len()),
    })
}

/// Left-point Riemann-Stieltjes integral of a scalar series against one
/// component of a finite-variation path, on the finest grid.
pub fn stieltjes_integral(f: ArrayView1<'_, f64>, a: &BvPath, component: usize) -> Result<IntegralSeries> {
    if f.len() != a.grid().len() {
        return Err(Error::GridMismatch(format!(
            "integrand has {} stamps but integrator grid has {}",
            f.len(),
            a.grid().len()
        )));
    }
    let n1 = f.len();
    let mut values = Array1::zeros(n1);
    let mut acc = 0.0;
    for k in 1..n1 {
        acc += f[k - 1] * (a.value(component, k) - a.value(component, k - 1));
        values[k] = acc;
    }
    Ok(IntegralSeries { grid: a.grid().clone(), level: None, values })
}

/// Left-point Stieltjes sum of a scalar series against an arbitrary
/// cumulative series sampled on the same stamps (e.g. a drift clock).
pub fn stieltjes_against_series(f: ArrayView1<'_, f64>, a: ArrayView1<'_, f64>, grid: &Arc<TimeGrid>) -> Result<IntegralSeries> {
    if f.len() != a.len() || f.len() != grid.len() {
        return Err(Error::GridMismatch("series length mismatch in Stieltjes sum".into()));
    }
    let n1 = f.len();
    let mut values = Array1::zeros(n1);
    let mut acc = 0.0;
    for k in 1..n1 {
        acc += f[k - 1] * (a[k] - a[k - 1]);
        values[k] = acc;
    }
    Ok(IntegralSeries { grid: grid.clone(), level: None, values })
}

/// Checks the log-covariation identity
/// `[log S_i, log S_j](t) = integral of (S_i S_j)^{-1} d[S_i, S_j]`
/// at one level, returning the max absolute deviation over pairs and stamps.
/// The identity is a refinement-limit statement: the deviation is nonzero at
/// finite resolution and must shrink as levels refine.
pub fn log_covariation_check(
    s: &SampledPath,
    hier: &PartitionHierarchy,
    level: usize,
) -> Result<f64> {
    if !s.is_positive() {
        return Err(Error::Domain("log-covariation check needs a strictly positive path".into()));
    }
    let log_s = s.log()?;
    let lhs = covariation_matrix(&log_s, hier, level)?;
    let cov = covariation_matrix(s, hier, level)?;
    let points = hier.level(level)?;
    let d = s.dim();

    let mut max_dev = 0.0f64;
    for i in 0..d {
        for j in i..d {
            let target = lhs.pair(i, j);
            let csij = cov.pair(i, j);
            let mut acc = 0.0;
            for w in points.windows(2) {
                let weight = 1.0 / (s.value(i, w[0]) * s.value(j, w[0]));
                acc += weight * (csij[w[1]] - csij[w[0]]);
                max_dev = max_dev.max((acc - target[w[1]]).abs());
            }
        }
    }
    Ok(max_dev)
}
