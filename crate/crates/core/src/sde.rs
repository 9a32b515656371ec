//! Windowed Picard solver for integral equations driven by a sampled path.
//!
//! The equation is
//!
//! ```text
//! X_t = X_0 + int_0^t K(s, X) dA_s + int_0^t F(s, X) dS_s
//! ```
//!
//! with non-anticipating coefficients K (vector) and F (matrix) that are
//! jointly Lipschitz with constant L in the running-sup metric, and a drift
//! clock `A = A^u - A^v` of total variation at most M.
//!
//! Time is cut into windows on which both the volatility clock `|[S]|` and
//! the drift variation grow by less than the thresholds
//!
//! ```text
//! q = 1 / (4 c1^2 L^2 d^4),      r = 1 / (3 L),
//! ```
//!
//! and on each window the Picard map
//!
//! ```text
//! (T G)_t = X(window start) + int K(s, G) dA + int F(s, G) dS
//! ```
//!
//! is iterated to its fixed point. Both integrals are left-endpoint sums on
//! the working grid (path grid, level-n partition times, window endpoints),
//! so after k sweeps the first k window points are exact; iteration counts
//! are bounded by the window size regardless of contraction. The patched
//! fixed points together solve the discrete equation that
//! [`solve_direct`] computes by forward recursion, so the two agree to
//! rounding; the closed-form Black-Scholes evaluation is the analytic
//! cross-check.
//!
//! Window accounting is enforced: every closed window consumes a full `q` of
//! volatility or a full `r` of drift variation, hence with
//! `A^u + A^v <= k r` and `|[S]| <= l q` at the n-th closed window end,
//! `k + l >= n + 1`, and the number of closed windows never exceeds
//! `floor(M/r) + floor(|[S]|_T / q) + 2`.

use crate::paths::{AdaptedSampledProcess, SampledPath};
use crate::quadvar::{qv_at_level, QVMatrixPath};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Default Picard stopping tolerance; stabilization is exact in exact
/// arithmetic, the tolerance absorbs float noise.
pub const DEFAULT_PICARD_TOL: f64 = 1e-12;

/// Initial value registry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum X0Spec {
    /// A deterministic vector.
    Constant {
        /// The initial value, one entry per coordinate.
        value: Vec<f64>,
    },
    /// `X_0 = scale * omega(0)`, the only start-measurable data on a path.
    ScaledStart {
        /// Multiplier on the path's initial value.
        scale: f64,
    },
}

impl X0Spec {
    fn resolve(&self, path: &SampledPath) -> Result<Vec<f64>> {
        match self {
            X0Spec::Constant { value } => {
                if value.len() != path.dim() {
                    return Err(Error::Validation(format!(
                        "initial value has {} entries for dimension {}",
                        value.len(),
                        path.dim()
                    )));
                }
                Ok(value.clone())
            }
            X0Spec::ScaledStart { scale } => {
                Ok(path.eval(0.0)?.iter().map(|v| scale * v).collect())
            }
        }
    }
}

/// Registry of drift coefficients `K(t, X, omega) -> R^d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DriftCoefficient {
    /// `K = 0`.
    Zero,
    /// A constant vector.
    Constant {
        /// The vector value.
        value: Vec<f64>,
    },
    /// `K(t, X) = scale * X_t`.
    Linear {
        /// Multiplier.
        scale: f64,
    },
    /// `K^i(t, X) = scale * sup_{s <= t} |X_s|` for every i; exercises
    /// genuine path dependence through the running sup.
    RunningMaxNorm {
        /// Multiplier.
        scale: f64,
    },
}

impl DriftCoefficient {
    /// Lipschitz constant contribution in the running-sup metric.
    pub fn lipschitz(&self, dim: usize) -> f64 {
        match self {
            DriftCoefficient::Zero | DriftCoefficient::Constant { .. } => 0.0,
            DriftCoefficient::Linear { scale } => scale.abs(),
            DriftCoefficient::RunningMaxNorm { scale } => scale.abs() * (dim as f64).sqrt(),
        }
    }

    /// Evaluate on the solution prefix `x[0..=idx]` (the slice is the whole
    /// visible history, which enforces non-anticipation structurally).
    fn eval(&self, prefix: &[Vec<f64>], dim: usize) -> Vec<f64> {
        match self {
            DriftCoefficient::Zero => vec![0.0; dim],
            DriftCoefficient::Constant { value } => value.clone(),
            DriftCoefficient::Linear { scale } => {
                prefix.last().unwrap().iter().map(|v| scale * v).collect()
            }
            DriftCoefficient::RunningMaxNorm { scale } => {
                let sup = prefix
                    .iter()
                    .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .fold(0.0f64, f64::max);
                vec![scale * sup; dim]
            }
        }
    }
}

/// Registry of diffusion coefficients `F(t, X, omega) -> R^{d x d}`
/// (row-major).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DiffusionCoefficient {
    /// `F = 0`.
    Zero,
    /// A constant diagonal matrix.
    ConstantDiag {
        /// Diagonal entries.
        diag: Vec<f64>,
    },
    /// `F(t, X) = sigma * diag(X_t)`: the Black-Scholes diffusion.
    LinearDiag {
        /// Volatility multiplier.
        sigma: f64,
    },
}

impl DiffusionCoefficient {
    /// Lipschitz constant contribution in the running-sup metric.
    pub fn lipschitz(&self, _dim: usize) -> f64 {
        match self {
            DiffusionCoefficient::Zero | DiffusionCoefficient::ConstantDiag { .. } => 0.0,
            DiffusionCoefficient::LinearDiag { sigma } => sigma.abs(),
        }
    }

    fn eval(&self, prefix: &[Vec<f64>], dim: usize) -> Vec<f64> {
        let mut m = vec![0.0; dim * dim];
        match self {
            DiffusionCoefficient::Zero => {}
            DiffusionCoefficient::ConstantDiag { diag } => {
                for i in 0..dim.min(diag.len()) {
                    m[i * dim + i] = diag[i];
                }
            }
            DiffusionCoefficient::LinearDiag { sigma } => {
                let x = prefix.last().unwrap();
                for i in 0..dim {
                    m[i * dim + i] = sigma * x[i];
                }
            }
        }
        m
    }
}

/// Registry of drift clocks `A = A^u - A^v`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DriftSpec {
    /// `A = 0`.
    Zero,
    /// `A_t = rate * t`; positive rates load `A^u`, negative ones `A^v`.
    Linear {
        /// Slope of the clock.
        rate: f64,
    },
    /// Independent non-decreasing legs `A^u_t = up_rate * t`,
    /// `A^v_t = down_rate * t`.
    UpDown {
        /// Slope of the increasing leg.
        up_rate: f64,
        /// Slope of the decreasing leg.
        down_rate: f64,
    },
}

impl DriftSpec {
    fn rates(&self) -> Result<(f64, f64)> {
        match self {
            DriftSpec::Zero => Ok((0.0, 0.0)),
            DriftSpec::Linear { rate } => Ok((rate.max(0.0), (-rate).max(0.0))),
            DriftSpec::UpDown { up_rate, down_rate } => {
                if *up_rate < 0.0 || *down_rate < 0.0 {
                    return Err(Error::Validation(
                        "drift leg rates must be non-negative".into(),
                    ));
                }
                Ok((*up_rate, *down_rate))
            }
        }
    }

    /// Sample the two legs on a grid.
    pub fn sample(&self, grid: &[f64], bound_m: f64) -> Result<DriftProcess> {
        let (up, down) = self.rates()?;
        let au: Vec<f64> = grid.iter().map(|t| up * t).collect();
        let av: Vec<f64> = grid.iter().map(|t| down * t).collect();
        DriftProcess::new(grid.to_vec(), au, av, bound_m)
    }
}

/// The sampled drift clock: two continuous non-decreasing legs starting at
/// 0 whose total variation is bounded by a deterministic constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftProcess {
    /// Sampling grid.
    pub grid: Vec<f64>,
    /// Increasing leg `A^u`.
    pub au: Vec<f64>,
    /// Decreasing leg `A^v`.
    pub av: Vec<f64>,
    /// Deterministic bound on `A^u_T + A^v_T`.
    pub bound_m: f64,
}

impl DriftProcess {
    /// Validate monotonicity, zero start and the variation bound.
    pub fn new(grid: Vec<f64>, au: Vec<f64>, av: Vec<f64>, bound_m: f64) -> Result<Self> {
        if grid.len() != au.len() || grid.len() != av.len() || grid.is_empty() {
            return Err(Error::Validation("drift legs must match the grid".into()));
        }
        if au[0] != 0.0 || av[0] != 0.0 {
            return Err(Error::Validation("drift legs must start at 0".into()));
        }
        for leg in [&au, &av] {
            for w in leg.windows(2) {
                if w[1] < w[0] {
                    return Err(Error::Validation("drift legs must be non-decreasing".into()));
                }
            }
        }
        let total = au.last().unwrap() + av.last().unwrap();
        if total > bound_m + 1e-12 {
            return Err(Error::Validation(format!(
                "drift variation {total} exceeds the declared bound {bound_m}"
            )));
        }
        Ok(Self {
            grid,
            au,
            av,
            bound_m,
        })
    }

    /// Net clock value `A_t = A^u_t - A^v_t` at a grid index.
    pub fn net(&self, idx: usize) -> f64 {
        self.au[idx] - self.av[idx]
    }

    /// Total variation `A^u_t + A^v_t` at a grid index.
    pub fn variation(&self, idx: usize) -> f64 {
        self.au[idx] + self.av[idx]
    }
}

/// A full problem description, serializable as the CLI problem file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdeProblem {
    /// Initial value.
    pub x0: X0Spec,
    /// Drift coefficient K.
    pub k: DriftCoefficient,
    /// Diffusion coefficient F.
    pub f: DiffusionCoefficient,
    /// Drift clock A.
    pub drift: DriftSpec,
    /// Declared bound on the clock's total variation.
    pub bound_m: f64,
    /// Partition level used for the volatility clock and the working grid.
    pub level: u32,
    /// Joint Lipschitz constant override; when absent the registry values
    /// are summed.
    #[serde(default)]
    pub lipschitz: Option<f64>,
    /// Picard stopping tolerance.
    #[serde(default = "default_tol")]
    pub picard_tol: f64,
    /// Constant used in the volatility threshold.
    #[serde(default = "default_c1")]
    pub c1: f64,
}

fn default_tol() -> f64 {
    DEFAULT_PICARD_TOL
}

fn default_c1() -> f64 {
    crate::bdg::DEFAULT_C1
}

impl SdeProblem {
    /// The joint Lipschitz constant used for the window thresholds.
    pub fn lipschitz_constant(&self, dim: usize) -> f64 {
        self.lipschitz
            .unwrap_or_else(|| self.k.lipschitz(dim) + self.f.lipschitz(dim))
    }
}

/// Contraction thresholds `(q, r)` for the volatility and drift windows.
///
/// `L = 0` makes both coefficient maps constant in X: a single window covers
/// everything and both thresholds are infinite.
pub fn window_thresholds(lipschitz: f64, dim: usize, c1: f64) -> Result<(f64, f64)> {
    if lipschitz < 0.0 {
        return Err(Error::Domain(format!(
            "Lipschitz constant must be >= 0, got {lipschitz}"
        )));
    }
    if lipschitz == 0.0 {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let d = dim as f64;
    let q = 1.0 / (4.0 * c1 * c1 * lipschitz * lipschitz * d.powi(4));
    let r = 1.0 / (3.0 * lipschitz);
    Ok((q, r))
}

/// One window of the schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Window {
    /// Window start `theta_{n-1}` (0 for the first).
    pub start: f64,
    /// Window end `theta_n`, or the horizon for the open final window.
    pub end: f64,
    /// True when a threshold triggered at `end`; false for the open window.
    pub closed: bool,
}

fn interp(times: &[f64], vals: &[f64], t: f64) -> f64 {
    match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => vals[i],
        Err(i) => {
            let alpha = (t - times[i - 1]) / (times[i] - times[i - 1]);
            vals[i - 1] + alpha * (vals[i] - vals[i - 1])
        }
    }
}

/// First time in `(from, horizon]` at which `vals` has grown by `budget`
/// over its value at `from`, solved exactly on the linear interpolant.
fn first_growth(times: &[f64], vals: &[f64], from: f64, budget: f64) -> Option<f64> {
    if !budget.is_finite() {
        return None;
    }
    let base = interp(times, vals, from);
    let start_idx = match times.binary_search_by(|x| x.partial_cmp(&from).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    let mut prev_t = from;
    let mut prev_v = base;
    for k in start_idx + 1..times.len() {
        let (t, v) = (times[k], vals[k]);
        if v - base >= budget {
            let target = base + budget;
            let alpha = if v == prev_v {
                1.0
            } else {
                (target - prev_v) / (v - prev_v)
            };
            let hit = prev_t + alpha * (t - prev_t);
            return Some(hit.clamp(from, t));
        }
        prev_t = t;
        prev_v = v;
    }
    None
}

/// Compute the window schedule from a sampled volatility clock and a drift
/// process: each window ends at the first time its volatility growth
/// reaches `q` or its drift variation growth reaches `r`; the final window
/// is open.
pub fn window_schedule(
    trace_times: &[f64],
    trace_vals: &[f64],
    drift: &DriftProcess,
    q: f64,
    r: f64,
) -> Result<Vec<Window>> {
    if trace_times.len() != trace_vals.len() || trace_times.is_empty() {
        return Err(Error::Validation("empty volatility clock".into()));
    }
    let horizon = *trace_times.last().unwrap();
    let drift_var: Vec<f64> = drift
        .au
        .iter()
        .zip(&drift.av)
        .map(|(u, v)| u + v)
        .collect();
    let mut windows = Vec::new();
    let mut start = 0.0;
    loop {
        let sigma = first_growth(trace_times, trace_vals, start, q);
        let theta_drift = first_growth(&drift.grid, &drift_var, start, r);
        let theta = match (sigma, theta_drift) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        };
        match theta {
            Some(t) => {
                if t <= start {
                    return Err(Error::Validation(format!(
                        "window schedule stalled at {start}"
                    )));
                }
                windows.push(Window {
                    start,
                    end: t,
                    closed: true,
                });
                if t >= horizon {
                    break;
                }
                start = t;
            }
            None => {
                windows.push(Window {
                    start,
                    end: horizon,
                    closed: false,
                });
                break;
            }
        }
    }
    Ok(windows)
}

/// Per-window solver diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct WindowReport {
    /// The window.
    pub window: Window,
    /// Picard sweeps used.
    pub iterations: usize,
    /// Grid points of the window, both endpoints inclusive.
    pub grid_points: usize,
    /// True when every sweep agreed with its predecessor on the already
    /// stabilized prefix, bit-exactly.
    pub stabilization_exact: bool,
    /// True when successive sweeps met the tolerance before the cap.
    pub converged: bool,
}

/// A solved equation on one path.
#[derive(Debug, Clone)]
pub struct Solution {
    /// Working grid (path grid, partition times, window endpoints).
    pub grid: Vec<f64>,
    /// Solution rows, one per grid time.
    pub values: Vec<Vec<f64>>,
    /// Per-window diagnostics.
    pub windows: Vec<WindowReport>,
    /// All windows converged.
    pub converged: bool,
    /// Max-norm residual of the integral equation on the working grid.
    pub residual_max: f64,
    /// Volatility threshold used.
    pub q: f64,
    /// Drift threshold used.
    pub r: f64,
    /// Partition level of the volatility clock.
    pub level: u32,
    /// Number of closed windows.
    pub closed_windows: usize,
    /// The bound `floor(M/r) + floor(|[S]|_T/q) + 2` they must respect.
    pub window_bound: usize,
}

impl Solution {
    /// Solution as an adapted process on the working grid.
    pub fn as_process(&self) -> AdaptedSampledProcess {
        AdaptedSampledProcess::new(self.grid.clone(), self.values.clone(), true)
            .expect("solution rows are grid-aligned")
    }

    /// Serialize as `t,x1,...,xd` rows.
    pub fn save_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.values[0].len();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=dim).map(|c| format!("x{c}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, row) in self.grid.iter().zip(&self.values) {
            let mut line = format!("{t}");
            for v in row {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Everything the steppers need, precomputed on the working grid.
struct Discretization {
    grid: Vec<f64>,
    s_rows: Vec<Vec<f64>>,
    drift: DriftProcess,
    trace: Vec<f64>,
    dim: usize,
}

fn build_discretization(
    problem: &SdeProblem,
    path: &SampledPath,
    qv: &QVMatrixPath,
) -> Result<(Discretization, Vec<Window>, f64, f64)> {
    let dim = path.dim();
    let lipschitz = problem.lipschitz_constant(dim);
    let (q, r) = window_thresholds(lipschitz, dim, problem.c1)?;

    let schedule_drift = problem.drift.sample(&qv.times, problem.bound_m)?;
    let windows = window_schedule(&qv.times, &qv.trace, &schedule_drift, q, r)?;

    // working grid: the qv sample times (path grid + partition) plus the
    // window endpoints
    let ends: Vec<f64> = windows.iter().map(|w| w.end).collect();
    let mut grid = qv.times.clone();
    grid.extend_from_slice(&ends);
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();

    let s_rows: Vec<Vec<f64>> = grid.iter().map(|t| path.eval(*t)).collect::<Result<_>>()?;
    let drift = problem.drift.sample(&grid, problem.bound_m)?;
    let trace: Vec<f64> = grid.iter().map(|t| qv.trace_at(*t)).collect::<Result<_>>()?;
    Ok((
        Discretization {
            grid,
            s_rows,
            drift,
            trace,
            dim,
        },
        windows,
        q,
        r,
    ))
}

/// One left-endpoint step term `K(t_i, X) dA + F(t_i, X) dS` evaluated on
/// the prefix `x[0..=i]`.
fn step_term(
    problem: &SdeProblem,
    disc: &Discretization,
    prefix: &[Vec<f64>],
    i: usize,
) -> Vec<f64> {
    let d = disc.dim;
    let k_val = problem.k.eval(prefix, d);
    let f_val = problem.f.eval(prefix, d);
    let da = disc.drift.net(i + 1) - disc.drift.net(i);
    let mut term = vec![0.0; d];
    for c in 0..d {
        term[c] = k_val[c] * da;
    }
    for row in 0..d {
        let mut acc = 0.0;
        for col in 0..d {
            acc += f_val[row * d + col] * (disc.s_rows[i + 1][col] - disc.s_rows[i][col]);
        }
        term[row] += acc;
    }
    term
}

fn sup_dist(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Solve one window by Picard iteration.
///
/// `x` holds the patched solution; rows `start_idx+1 ..= end_idx` are
/// rewritten. The candidate starts from the window-start value plus
/// `guess_offset` on every coordinate.
fn solve_window(
    problem: &SdeProblem,
    disc: &Discretization,
    x: &mut [Vec<f64>],
    start_idx: usize,
    end_idx: usize,
    guess_offset: f64,
) -> WindowReport {
    let window_len = end_idx - start_idx;
    let anchor = x[start_idx].clone();
    for row in x.iter_mut().take(end_idx + 1).skip(start_idx + 1) {
        *row = anchor.iter().map(|v| v + guess_offset).collect();
    }
    let cap = window_len + 2;
    let mut iterations = 0;
    let mut converged = false;
    let mut stabilization_exact = true;
    while iterations < cap {
        // apply the Picard map: accumulate left-endpoint sums over the
        // window reading positions from the current candidate
        let mut new_rows: Vec<Vec<f64>> = Vec::with_capacity(window_len);
        let mut acc = anchor.clone();
        for i in start_idx..end_idx {
            let term = step_term(problem, disc, &x[..=i], i);
            for c in 0..disc.dim {
                acc[c] += term[c];
            }
            new_rows.push(acc.clone());
        }
        let old_rows: Vec<Vec<f64>> = x[start_idx + 1..=end_idx].to_vec();
        let dist = sup_dist(&new_rows, &old_rows);
        // after k sweeps the first k window rows must already be exact
        let settled = iterations.min(window_len);
        if new_rows[..settled] != old_rows[..settled] {
            stabilization_exact = false;
        }
        x[start_idx + 1..=end_idx].clone_from_slice(&new_rows);
        iterations += 1;
        if dist < problem.picard_tol {
            converged = true;
            break;
        }
    }
    WindowReport {
        window: Window {
            start: disc.grid[start_idx],
            end: disc.grid[end_idx],
            closed: true, // overwritten by the caller
        },
        iterations,
        grid_points: window_len + 1,
        stabilization_exact,
        converged,
    }
}

fn minimal_multiple(value: f64, unit: f64) -> usize {
    if unit.is_infinite() {
        return 0;
    }
    let mut k = (value / unit).ceil() as i64;
    if k < 0 {
        k = 0;
    }
    while k > 0 && (k - 1) as f64 * unit >= value {
        k -= 1;
    }
    k as usize
}

/// Solve the equation window by window with Picard iteration.
///
/// `guess_offset` shifts the initial Picard candidate on every window; the
/// fixed point does not depend on it, which is the uniqueness check.
pub fn solve_with_guess(
    problem: &SdeProblem,
    path: &SampledPath,
    guess_offset: f64,
) -> Result<Solution> {
    let qv = qv_at_level(path, problem.level)?;
    let (disc, windows, q, r) = build_discretization(problem, path, &qv)?;
    let x0 = problem.x0.resolve(path)?;

    let mut x: Vec<Vec<f64>> = vec![x0.clone(); disc.grid.len()];
    let mut reports = Vec::with_capacity(windows.len());
    let mut converged = true;
    for w in &windows {
        let start_idx = disc
            .grid
            .binary_search_by(|t| t.partial_cmp(&w.start).unwrap())
            .map_err(|_| Error::Validation(format!("window start {} off the grid", w.start)))?;
        let end_idx = disc
            .grid
            .binary_search_by(|t| t.partial_cmp(&w.end).unwrap())
            .map_err(|_| Error::Validation(format!("window end {} off the grid", w.end)))?;
        if end_idx == start_idx {
            reports.push(WindowReport {
                window: w.clone(),
                iterations: 0,
                grid_points: 1,
                stabilization_exact: true,
                converged: true,
            });
            continue;
        }
        let mut report = solve_window(problem, &disc, &mut x, start_idx, end_idx, guess_offset);
        report.window = w.clone();
        converged &= report.converged;
        reports.push(report);
    }

    // window accounting
    let closed_windows = windows.iter().filter(|w| w.closed).count();
    let total_trace = *disc.trace.last().unwrap();
    let window_bound = if q.is_infinite() {
        2
    } else {
        (problem.bound_m / r).floor() as usize + (total_trace / q).floor() as usize + 2
    };
    if closed_windows > window_bound {
        return Err(Error::WindowCount {
            closed: closed_windows,
            bound: window_bound,
        });
    }
    for (n, w) in windows.iter().enumerate().filter(|(_, w)| w.closed) {
        let idx = disc
            .grid
            .binary_search_by(|t| t.partial_cmp(&w.end).unwrap())
            .expect("window ends are grid points");
        let k = minimal_multiple(disc.drift.variation(idx), r);
        let l = minimal_multiple(disc.trace[idx], q);
        if k + l < n + 1 {
            return Err(Error::Validation(format!(
                "window accounting violated at window {n}: k={k}, l={l}"
            )));
        }
    }

    // residual of the discrete equation, recomputed in one forward pass
    let mut residual_max = 0.0f64;
    let mut acc = x0.clone();
    for i in 0..disc.grid.len() - 1 {
        let term = step_term(problem, &disc, &x[..=i], i);
        for c in 0..disc.dim {
            acc[c] += term[c];
        }
        for c in 0..disc.dim {
            residual_max = residual_max.max((x[i + 1][c] - acc[c]).abs());
        }
        acc.clone_from_slice(&x[i + 1]);
    }

    Ok(Solution {
        grid: disc.grid,
        values: x,
        windows: reports,
        converged,
        residual_max,
        q,
        r,
        level: problem.level,
        closed_windows,
        window_bound,
    })
}

/// Solve with the default (window-start) Picard guess.
pub fn solve(problem: &SdeProblem, path: &SampledPath) -> Result<Solution> {
    solve_with_guess(problem, path, 0.0)
}

/// Solve the discrete equation by forward recursion on the same working
/// grid; the independent cross-check for [`solve`].
pub fn solve_direct(problem: &SdeProblem, path: &SampledPath) -> Result<Solution> {
    let qv = qv_at_level(path, problem.level)?;
    let (disc, windows, q, r) = build_discretization(problem, path, &qv)?;
    let x0 = problem.x0.resolve(path)?;

    let mut x: Vec<Vec<f64>> = Vec::with_capacity(disc.grid.len());
    x.push(x0);
    for i in 0..disc.grid.len() - 1 {
        let term = step_term(problem, &disc, &x[..=i], i);
        let prev = &x[i];
        let next: Vec<f64> = prev.iter().zip(&term).map(|(a, b)| a + b).collect();
        x.push(next);
    }
    let closed_windows = windows.iter().filter(|w| w.closed).count();
    let total_trace = *disc.trace.last().unwrap();
    let window_bound = if q.is_infinite() {
        2
    } else {
        (problem.bound_m / r).floor() as usize + (total_trace / q).floor() as usize + 2
    };
    Ok(Solution {
        grid: disc.grid,
        values: x,
        windows: windows
            .iter()
            .map(|w| WindowReport {
                window: w.clone(),
                iterations: 1,
                grid_points: 0,
                stabilization_exact: true,
                converged: true,
            })
            .collect(),
        converged: true,
        residual_max: 0.0,
        q,
        r,
        level: problem.level,
        closed_windows,
        window_bound,
    })
}

/// Closed-form Black-Scholes solution on the working grid of a solved
/// problem:
///
/// ```text
/// X_t = x0 * exp( A_t - sigma^2/2 |[S]|_t + sigma (S_t - S_0) )
/// ```
///
/// One-dimensional paths only.
pub fn black_scholes_exact(
    x0: f64,
    sigma: f64,
    drift: &DriftSpec,
    path: &SampledPath,
    qv: &QVMatrixPath,
    grid: &[f64],
) -> Result<AdaptedSampledProcess> {
    if path.dim() != 1 {
        return Err(Error::Domain(format!(
            "closed-form solution is one-dimensional, path has dimension {}",
            path.dim()
        )));
    }
    let sampled = drift.sample(grid, f64::INFINITY)?;
    let s0 = path.eval(0.0)?[0];
    let mut rows = Vec::with_capacity(grid.len());
    for (idx, t) in grid.iter().enumerate() {
        let a = sampled.net(idx);
        let tr = qv.trace_at(*t)?;
        let s = path.eval(*t)?[0];
        rows.push(vec![x0 * (a - 0.5 * sigma * sigma * tr + sigma * (s - s0)).exp()]);
    }
    AdaptedSampledProcess::new(grid.to_vec(), rows, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::generate_random_walk;

    fn line_path() -> SampledPath {
        SampledPath::new(vec![0.0, 0.5, 1.0], vec![vec![0.0], vec![0.5], vec![1.0]]).unwrap()
    }

    fn problem(
        k: DriftCoefficient,
        f: DiffusionCoefficient,
        drift: DriftSpec,
        bound_m: f64,
        level: u32,
    ) -> SdeProblem {
        SdeProblem {
            x0: X0Spec::Constant { value: vec![1.0] },
            k,
            f,
            drift,
            bound_m,
            level,
            lipschitz: None,
            picard_tol: DEFAULT_PICARD_TOL,
            c1: 6.0,
        }
    }

    #[test]
    fn thresholds_match_formula() {
        let (q, r) = window_thresholds(1.0, 1, 6.0).unwrap();
        assert_eq!(q, 1.0 / 144.0);
        assert_eq!(r, 1.0 / 3.0);
        let (q2, r2) = window_thresholds(2.0, 1, 6.0).unwrap();
        assert_eq!(q2, 1.0 / 576.0);
        assert_eq!(r2, 1.0 / 6.0);
        let (q3, r3) = window_thresholds(1.0, 2, 6.0).unwrap();
        assert_eq!(q3, 1.0 / 2304.0);
        assert_eq!(r3, 1.0 / 3.0);
    }

    #[test]
    fn zero_lipschitz_gives_single_window() {
        let (q, r) = window_thresholds(0.0, 1, 6.0).unwrap();
        assert!(q.is_infinite() && r.is_infinite());
        assert!(matches!(
            window_thresholds(-1.0, 1, 6.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn schedule_single_open_window_when_under_budget() {
        let times = vec![0.0, 1.0];
        let vals = vec![0.0, 0.001]; // below q
        let drift = DriftSpec::Zero.sample(&times, 1.0).unwrap();
        let w = window_schedule(&times, &vals, &drift, 1.0 / 144.0, 1.0 / 3.0).unwrap();
        assert_eq!(w.len(), 1);
        assert!(!w[0].closed);
        assert_eq!(w[0].end, 1.0);
    }

    #[test]
    fn schedule_cuts_linear_trace_at_q_multiples() {
        // |[S]|_t = t, q = 1/144: windows end at k/144
        let times: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        let vals = times.clone();
        let drift = DriftSpec::Zero.sample(&times, 0.0).unwrap();
        let q = 1.0 / 144.0;
        let w = window_schedule(&times, &vals, &drift, q, f64::INFINITY).unwrap();
        let closed: Vec<&Window> = w.iter().filter(|w| w.closed).collect();
        assert_eq!(closed.len(), 144);
        for (k, win) in closed.iter().enumerate() {
            assert!(
                (win.end - (k + 1) as f64 * q).abs() < 1e-12,
                "window {k} ends at {}",
                win.end
            );
        }
    }

    #[test]
    fn schedule_drift_triggers_first_when_faster() {
        // A^u_t = t with r = 1/3 and slow volatility
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let vals = vec![0.0; 11];
        let drift = DriftSpec::Linear { rate: 1.0 }.sample(&times, 1.0).unwrap();
        let w = window_schedule(&times, &vals, &drift, 1.0, 1.0 / 3.0).unwrap();
        assert!(w[0].closed);
        assert!((w[0].end - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_drift_only_equation() {
        // F = 0, K = c, A_t = t: X_t = x0 + c t, solved in one sweep
        let p = line_path();
        let prob = problem(
            DriftCoefficient::Constant { value: vec![2.0] },
            DiffusionCoefficient::Zero,
            DriftSpec::Linear { rate: 1.0 },
            1.0,
            2,
        );
        let sol = solve(&prob, &p).unwrap();
        assert!(sol.converged);
        for (t, row) in sol.grid.iter().zip(&sol.values) {
            assert!((row[0] - (1.0 + 2.0 * t)).abs() < 1e-12);
        }
        for w in &sol.windows {
            assert!(w.iterations <= 2);
        }
    }

    #[test]
    fn constant_diffusion_tracks_path() {
        // K = 0, F = sigma * I: X = x0 + sigma (S_t - S_0)
        let p = generate_random_walk(42, 128, 1.0, 1, 1.0).unwrap();
        let sigma = 0.5;
        let prob = problem(
            DriftCoefficient::Zero,
            DiffusionCoefficient::ConstantDiag { diag: vec![sigma] },
            DriftSpec::Zero,
            0.0,
            4,
        );
        let sol = solve(&prob, &p).unwrap();
        for (t, row) in sol.grid.iter().zip(&sol.values) {
            let expect = 1.0 + sigma * (p.eval(*t).unwrap()[0]);
            assert!((row[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_are_constant() {
        let p = generate_random_walk(1, 64, 1.0, 1, 1.0).unwrap();
        let prob = problem(
            DriftCoefficient::Zero,
            DiffusionCoefficient::Zero,
            DriftSpec::Zero,
            0.0,
            3,
        );
        let sol = solve(&prob, &p).unwrap();
        assert_eq!(sol.closed_windows, 0);
        assert!(sol.values.iter().all(|row| row[0] == 1.0));
        let direct = solve_direct(&prob, &p).unwrap();
        assert_eq!(sol.values, direct.values);
    }

    #[test]
    fn solve_matches_direct_recursion_exactly() {
        let p = generate_random_walk(7, 512, 1.0, 1, 1.0).unwrap();
        let prob = problem(
            DriftCoefficient::Linear { scale: 1.0 },
            DiffusionCoefficient::LinearDiag { sigma: 0.5 },
            DriftSpec::Linear { rate: 0.1 },
            0.1,
            4,
        );
        let sol = solve(&prob, &p).unwrap();
        let direct = solve_direct(&prob, &p).unwrap();
        assert_eq!(sol.grid, direct.grid);
        let dist = sup_dist(&sol.values, &direct.values);
        assert!(dist <= 1e-10, "distance {dist}");
        assert!(sol.residual_max <= 1e-10);
    }

    #[test]
    fn picard_iterations_bounded_by_window_size() {
        let p = generate_random_walk(9, 256, 1.0, 1, 1.0).unwrap();
        let prob = problem(
            DriftCoefficient::Linear { scale: 1.0 },
            DiffusionCoefficient::LinearDiag { sigma: 1.0 },
            DriftSpec::Linear { rate: 0.1 },
            0.1,
            4,
        );
        let sol = solve(&prob, &p).unwrap();
        assert!(sol.converged);
        for w in &sol.windows {
            assert!(
                w.iterations <= w.grid_points,
                "window used {} sweeps for {} points",
                w.iterations,
                w.grid_points
            );
            assert!(w.stabilization_exact);
        }
    }

    #[test]
    fn different_guesses_reach_identical_fixed_points() {
        let p = generate_random_walk(11, 256, 1.0, 1, 1.0).unwrap();
        let prob = problem(
            DriftCoefficient::Linear { scale: 1.0 },
            DiffusionCoefficient::LinearDiag { sigma: 0.7 },
            DriftSpec::Linear { rate: 0.05 },
            0.05,
            4,
        );
        let a = solve_with_guess(&prob, &p, 0.0).unwrap();
        let b = solve_with_guess(&prob, &p, 1.0).unwrap();
        let dist = sup_dist(&a.values, &b.values);
        assert!(dist < 1e-10, "guess dependence {dist}");
    }

    #[test]
    fn window_count_formula_with_unit_lipschitz() {
        // L = 1, d = 1, M = 0.2: closed windows <= floor(0.2 * 3) +
        // floor(|[S]|_1 * 144) + 2
        let p = generate_random_walk(31, 2048, 1.0, 1, 1.0).unwrap();
        let prob = SdeProblem {
            x0: X0Spec::Constant { value: vec![1.0] },
            k: DriftCoefficient::Linear { scale: 0.5 },
            f: DiffusionCoefficient::LinearDiag { sigma: 0.5 },
            drift: DriftSpec::Linear { rate: 0.2 },
            bound_m: 0.2,
            level: 5,
            lipschitz: None,
            picard_tol: DEFAULT_PICARD_TOL,
            c1: 6.0,
        };
        assert_eq!(prob.lipschitz_constant(1), 1.0);
        let sol = solve(&prob, &p).unwrap();
        let qv = qv_at_level(&p, 5).unwrap();
        let trace_t = qv.trace_at(1.0).unwrap();
        let bound = (0.2f64 * 3.0).floor() as usize + (trace_t * 144.0).floor() as usize + 2;
        assert_eq!(sol.window_bound, bound);
        assert!(sol.closed_windows <= bound);
    }

    #[test]
    fn window_count_respects_bound() {
        let p = generate_random_walk(13, 1024, 1.0, 1, 1.0).unwrap();
        let prob = problem(
            DriftCoefficient::Linear { scale: 1.0 },
            DiffusionCoefficient::Zero,
            DriftSpec::Linear { rate: 0.2 },
            0.2,
            5,
        );
        let sol = solve(&prob, &p).unwrap();
        assert!(sol.closed_windows <= sol.window_bound);
    }

    #[test]
    fn black_scholes_drift_only() {
        // sigma = 0: X_t = x0 e^{A_t}
        let p = line_path();
        let qv = qv_at_level(&p, 2).unwrap();
        let drift = DriftSpec::Linear { rate: 0.1 };
        let bs = black_scholes_exact(1.0, 0.0, &drift, &p, &qv, p.grid()).unwrap();
        for (t, row) in p.grid().iter().zip(bs.values()) {
            assert!((row[0] - (0.1 * t).exp()).abs() < 1e-14);
        }
        let zero = black_scholes_exact(0.0, 0.5, &drift, &p, &qv, p.grid()).unwrap();
        assert!(zero.values().iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn black_scholes_requires_one_dimension() {
        let p = generate_random_walk(1, 16, 1.0, 2, 1.0).unwrap();
        let qv = qv_at_level(&p, 2).unwrap();
        assert!(matches!(
            black_scholes_exact(1.0, 0.5, &DriftSpec::Zero, &p, &qv, p.grid()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn running_max_coefficient_is_path_dependent() {
        let p = generate_random_walk(15, 64, 1.0, 1, 1.0).unwrap();
        let prob = SdeProblem {
            x0: X0Spec::Constant { value: vec![1.0] },
            k: DriftCoefficient::RunningMaxNorm { scale: 0.5 },
            f: DiffusionCoefficient::Zero,
            drift: DriftSpec::Linear { rate: 1.0 },
            bound_m: 1.0,
            level: 3,
            lipschitz: None,
            picard_tol: DEFAULT_PICARD_TOL,
            c1: 6.0,
        };
        let sol = solve(&prob, &p).unwrap();
        let direct = solve_direct(&prob, &p).unwrap();
        assert!(sup_dist(&sol.values, &direct.values) <= 1e-10);
        // dX = sup|X| dA with A = t and X0 = 1 grows at least like 1 + t/2
        let last = sol.values.last().unwrap()[0];
        assert!(last > 1.4, "running-max growth too small: {last}");
    }

    #[test]
    fn problem_spec_round_trips_through_json() {
        let prob = problem(
            DriftCoefficient::Linear { scale: 1.0 },
            DiffusionCoefficient::LinearDiag { sigma: 0.3 },
            DriftSpec::Linear { rate: 0.1 },
            0.1,
            6,
        );
        let json = serde_json::to_string(&prob).unwrap();
        let back: SdeProblem = serde_json::from_str(&json).unwrap();
        assert_eq!(back.bound_m, prob.bound_m);
        assert_eq!(back.level, prob.level);
        assert!(matches!(back.k, DriftCoefficient::Linear { scale } if scale == 1.0));
    }

    #[test]
    fn declared_lipschitz_bounds_sampled_ratios() {
        // |K(x)-K(y)| + |F(x)-F(y)| <= L sup_s |x_s - y_s| on sampled
        // prefix pairs, for every registry entry
        let coeffs: Vec<(DriftCoefficient, DiffusionCoefficient)> = vec![
            (
                DriftCoefficient::Linear { scale: 1.3 },
                DiffusionCoefficient::LinearDiag { sigma: 0.4 },
            ),
            (
                DriftCoefficient::RunningMaxNorm { scale: 0.8 },
                DiffusionCoefficient::ConstantDiag { diag: vec![2.0] },
            ),
            (
                DriftCoefficient::Constant { value: vec![3.0] },
                DiffusionCoefficient::Zero,
            ),
        ];
        let dim = 1usize;
        let frob = |m: &[f64]| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut state = 1u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64) / (2f64.powi(31)) - 1.0
        };
        for (k, f) in &coeffs {
            let declared = k.lipschitz(dim) + f.lipschitz(dim);
            for _ in 0..200 {
                let len = 2 + (next().abs() * 20.0) as usize;
                let x: Vec<Vec<f64>> = (0..len).map(|_| vec![next() * 5.0]).collect();
                let y: Vec<Vec<f64>> = (0..len).map(|_| vec![next() * 5.0]).collect();
                let sup: f64 = x
                    .iter()
                    .zip(&y)
                    .map(|(a, b)| norm(&[a[0] - b[0]]))
                    .fold(0.0, f64::max);
                let dk = {
                    let a = k.eval(&x, dim);
                    let b = k.eval(&y, dim);
                    norm(&a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>())
                };
                let df = {
                    let a = f.eval(&x, dim);
                    let b = f.eval(&y, dim);
                    frob(&a.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>())
                };
                assert!(
                    dk + df <= declared * sup + 1e-12,
                    "sampled ratio exceeds declared constant: {} > {} * {}",
                    dk + df,
                    declared,
                    sup
                );
            }
        }
    }

    #[test]
    fn solution_is_non_anticipating() {
        // solving on the stopped path reproduces the solution on [0, t]
        let p = generate_random_walk(55, 256, 1.0, 1, 1.0).unwrap();
        let prob = problem(
            DriftCoefficient::Linear { scale: 1.0 },
            DiffusionCoefficient::LinearDiag { sigma: 0.6 },
            DriftSpec::Linear { rate: 0.1 },
            0.1,
            4,
        );
        let full = solve(&prob, &p).unwrap();
        for t in [0.25, 0.5, 0.75] {
            let stopped = p.stopped(t).unwrap();
            let partial = solve(&prob, &stopped).unwrap();
            for (k, u) in full.grid.iter().enumerate() {
                if *u > t {
                    break;
                }
                let idx = partial
                    .grid
                    .binary_search_by(|g| g.partial_cmp(u).unwrap())
                    .unwrap_or_else(|_| panic!("time {u} missing from stopped grid"));
                let (a, b) = (full.values[k][0], partial.values[idx][0]);
                assert!(
                    (a - b).abs() <= 1e-12,
                    "solution anticipates: {a} vs {b} at t={u} (stop {t})"
                );
            }
        }
    }

    #[test]
    fn two_dimensional_solve_matches_direct() {
        let p = generate_random_walk(77, 256, 1.0, 2, 1.0).unwrap();
        let prob = SdeProblem {
            x0: X0Spec::Constant {
                value: vec![1.0, 2.0],
            },
            k: DriftCoefficient::Linear { scale: 0.5 },
            f: DiffusionCoefficient::LinearDiag { sigma: 0.4 },
            drift: DriftSpec::Linear { rate: 0.1 },
            bound_m: 0.1,
            level: 3,
            lipschitz: None,
            picard_tol: DEFAULT_PICARD_TOL,
            c1: 6.0,
        };
        let sol = solve(&prob, &p).unwrap();
        let direct = solve_direct(&prob, &p).unwrap();
        assert!(sol.converged);
        let dist = sup_dist(&sol.values, &direct.values);
        assert!(dist <= 1e-10, "distance {dist}");
    }

    #[test]
    fn solution_csv_has_grid_and_columns() {
        let p = line_path();
        let prob = problem(
            DriftCoefficient::Zero,
            DiffusionCoefficient::Zero,
            DriftSpec::Zero,
            0.0,
            1,
        );
        let sol = solve(&prob, &p).unwrap();
        let mut buf = Vec::new();
        sol.save_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1\n0,1\n"));
    }

    #[test]
    fn drift_bound_is_validated() {
        let times = vec![0.0, 1.0];
        assert!(matches!(
            DriftSpec::Linear { rate: 2.0 }.sample(&times, 1.0),
            Err(Error::Validation(_))
        ));
    }
}
