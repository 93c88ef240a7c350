//! Time grids, nested refining partitions, and sampled path containers.
//!
//! Paths exist only as finite samples on a single shared [`TimeGrid`]. A
//! [`PartitionHierarchy`] is the discrete surrogate for a refining sequence of
//! partitions: every quadratic-variation object in this crate is computed
//! along one of its levels, and "convergence" claims become
//! deviation-decreases-with-refinement tests.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Strictly increasing time stamps `t_0 < t_1 < ... < t_N`, `N >= 1`.
///
/// Units are abstract; `day_count` is an optional label used only for
/// reporting (e.g. `"days"` for CSV-ingested daily data).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    day_count: Option<String>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::Parameter(format!(
                "grid needs at least 2 stamps, got {}",
                times.len()
            )));
        }
        for w in times.windows(2) {
            if !w[0].is_finite() || !w[1].is_finite() || w[1] <= w[0] {
                return Err(Error::Parameter(format!(
                    "grid stamps must be finite and strictly increasing (got {} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times, day_count: None })
    }

    /// Uniform grid with `n_steps` steps on `[0, horizon]`.
    pub fn uniform(n_steps: usize, horizon: f64) -> Result<Self> {
        if n_steps == 0 || horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::Parameter(format!(
                "uniform grid needs n_steps >= 1 and horizon > 0 (got {n_steps}, {horizon})"
            )));
        }
        let dt = horizon / n_steps as f64;
        let times = (0..=n_steps).map(|k| k as f64 * dt).collect();
        Self::new(times)
    }

    pub fn with_day_count(mut self, label: impl Into<String>) -> Self {
        self.day_count = Some(label.into());
        self
    }

    /// Number of stamps (`N + 1`).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least 2 stamps
    }

    /// Number of steps (`N`).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn day_count(&self) -> Option<&str> {
        self.day_count.as_deref()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap() - self.times[0]
    }

    /// Mean step size, used to translate step-denominated windows to time.
    pub fn mean_step(&self) -> f64 {
        self.horizon() / self.steps() as f64
    }
}

/// Checks that two grid handles refer to the same grid (pointer or content).
pub(crate) fn same_grid(a: &Arc<TimeGrid>, b: &Arc<TimeGrid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "operands sampled on different grids ({} vs {} stamps)",
            a.len(),
            b.len()
        )))
    }
}

/// Nested refining partitions of a [`TimeGrid`], stored as index subsets.
///
/// Level 0 is the coarsest. Every level contains the endpoint indices `0` and
/// `N`, each level is a subset of the next, and the finest level is the full
/// grid.
#[derive(Debug, Clone)]
pub struct PartitionHierarchy {
    grid: Arc<TimeGrid>,
    levels: Vec<Arc<Vec<usize>>>,
}

impl PartitionHierarchy {
    /// Dyadic hierarchy: level `k` keeps the indices `floor(j * N / 2^k)` for
    /// `j = 0..=2^k`. If the constructed finest level is not the full grid
    /// (e.g. `N` not a power of two or `depth < log2 N`), the full grid is
    /// appended as an extra level so the path's native resolution is always
    /// reachable.
    pub fn dyadic(grid: Arc<TimeGrid>, depth: u32) -> Result<Self> {
        let n = grid.steps();
        if (1usize << depth) > n {
            return Err(Error::Refinement(format!(
                "depth {depth} exceeds grid resolution (2^{depth} > {n} steps)"
            )));
        }
        let mut levels = Vec::with_capacity(depth as usize + 2);
        for k in 0..=depth {
            let parts = 1usize << k;
            let mut idx = Vec::with_capacity(parts + 1);
            for j in 0..=parts {
                idx.push(j * n / parts);
            }
            idx.dedup();
            levels.push(Arc::new(idx));
        }
        if levels.last().map(|l| l.len()) != Some(n + 1) {
            levels.push(Arc::new((0..=n).collect()));
        }
        Ok(Self { grid, levels })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Index subset of level `k` (sorted, contains `0` and `N`).
    pub fn level(&self, k: usize) -> Result<&Arc<Vec<usize>>> {
        self.levels
            .get(k)
            .ok_or_else(|| Error::Refinement(format!("level {k} out of range (have {})", self.levels.len())))
    }

    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }

    /// The level whose partition has exactly `points` indices, if any.
    pub fn level_with_points(&self, points: usize) -> Option<usize> {
        self.levels.iter().position(|l| l.len() == points)
    }
}

/// Classification returned by [`SampledPath::classify_positive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositivityClass {
    /// Every sample strictly positive: admissible as a price path.
    QvPlusCandidate,
    Nonpositive,
}

/// A d-dimensional path sampled on the finest grid: the universal carrier of
/// prices, log-prices, and market weights. Rows are components, columns are
/// stamps.
#[derive(Debug, Clone)]
pub struct SampledPath {
    grid: Arc<TimeGrid>,
    values: Array2<f64>,
    positive: bool,
}

impl SampledPath {
    pub fn new(grid: Arc<TimeGrid>, values: Array2<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "path has {} columns but grid has {} stamps",
                values.ncols(),
                grid.len()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::Parameter("path needs at least one component".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("path contains non-finite samples".into()));
        }
        let positive = values.iter().all(|&v| v > 0.0);
        Ok(Self { grid, values, positive })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn component(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[(i, k)]
    }

    pub fn is_positive(&self) -> bool {
        self.positive
    }

    pub fn classify_positive(&self) -> PositivityClass {
        if self.positive {
            PositivityClass::QvPlusCandidate
        } else {
            PositivityClass::Nonpositive
        }
    }

    /// Componentwise natural log; requires strict positivity.
    pub fn log(&self) -> Result<SampledPath> {
        if !self.positive {
            return Err(Error::Domain("log of a non-positive path".into()));
        }
        SampledPath::new(self.grid.clone(), self.values.mapv(f64::ln))
    }

    /// Componentwise exponential.
    pub fn exp(&self) -> Result<SampledPath> {
        SampledPath::new(self.grid.clone(), self.values.mapv(f64::exp))
    }
}

/// An m-dimensional finite-variation path with its cumulative total-variation
/// series. Carries moving averages, drift clocks, and other integrators for
/// Riemann-Stieltjes sums.
#[derive(Debug, Clone)]
pub struct BvPath {
    grid: Arc<TimeGrid>,
    values: Array2<f64>,
    total_variation: Array2<f64>,
}

impl BvPath {
    pub fn new(grid: Arc<TimeGrid>, values: Array2<f64>) -> Result<Self> {
        if values.ncols() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "BV path has {} columns but grid has {} stamps",
                values.ncols(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("BV path contains non-finite samples".into()));
        }
        let (m, n1) = (values.nrows(), values.ncols());
        let mut tv = Array2::zeros((m, n1));
        for i in 0..m {
            let mut acc = 0.0;
            for k in 1..n1 {
                acc += (values[(i, k)] - values[(i, k - 1)]).abs();
                tv[(i, k)] = acc;
            }
        }
        Ok(Self { grid, values, total_variation: tv })
    }

    /// The scalar path `A_0(t) = t`.
    pub fn time_component(grid: Arc<TimeGrid>) -> Result<Self> {
        let row = Array2::from_shape_vec((1, grid.len()), grid.times().to_vec())
            .expect("shape matches by construction");
        Self::new(grid, row)
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn component(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[(i, k)]
    }

    pub fn total_variation(&self, i: usize) -> ArrayView1<'_, f64> {
        self.total_variation.row(i)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.column(k).to_vec()
    }
}

/// Windowed moving average `alpha(t) = (1/theta) * integral of path(0 v s) ds`
/// over `s in [t - theta, t]`, discretized with the left-point rectangle rule
/// (the same convention all Stieltjes sums in this crate use). The window
/// start before `t_0` freezes the path at its initial value.
///
/// The output is of finite variation and stays in the convex hull of the
/// path's range.
pub fn moving_average(path: &SampledPath, theta: f64) -> Result<BvPath> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Parameter(format!("moving-average window must be positive, got {theta}")));
    }
    let grid = path.grid();
    let times = grid.times();
    let n1 = grid.len();
    let d = path.dim();
    let t0 = times[0];

    // Prefix integrals of the left-point step extension of the path:
    // prefix[k] = integral over [t_0, t_k] of the step function that takes
    // value path(t_j) on [t_j, t_{j+1}).
    let mut prefix = Array2::<f64>::zeros((d, n1));
    for i in 0..d {
        let mut acc = 0.0;
        for k in 1..n1 {
            acc += path.value(i, k - 1) * (times[k] - times[k - 1]);
            prefix[(i, k)] = acc;
        }
    }

    // Integral of the step extension over [t_0, u] for u in [t_0, t_N],
    // linear interpolation inside a step since the integrand is constant there.
    // `seg` is the index with t_seg <= u < t_{seg+1}.
    let eval_prefix = |i: usize, u: f64, seg: usize| -> f64 {
        prefix[(i, seg)] + path.value(i, seg) * (u - times[seg])
    };

    let mut out = Array2::<f64>::zeros((d, n1));
    let mut seg = 0usize; // segment containing the window start; advances monotonically
    for k in 0..n1 {
        let start = times[k] - theta;
        if start <= t0 {
            // Window reaches before the first stamp: frozen initial value on
            // [start, t_0], step extension afterwards.
            for i in 0..d {
                let frozen = path.value(i, 0) * (t0 - start);
                out[(i, k)] = (frozen + prefix[(i, k)]) / theta;
            }
        } else {
            while seg + 1 < n1 && times[seg + 1] <= start {
                seg += 1;
            }
            for i in 0..d {
                out[(i, k)] = (prefix[(i, k)] - eval_prefix(i, start, seg)) / theta;
            }
        }
    }
    BvPath::new(grid.clone(), out)
}

/// Convenience: one scalar series on a grid as a 1-row matrix.
pub fn row_matrix(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("1-row shape")
}

/// Convenience: a scalar series as an `Array1`.
pub fn series(values: &[f64]) -> Array1<f64> {
    Array1::from_vec(values.to_vec())
}
