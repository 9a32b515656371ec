//! Simple trading strategies and their integral processes.
//!
//! A strategy exists in two forms. A [`SimpleStrategy`] is a *rule*: a
//! non-anticipating recipe producing rebalancing times and bounded position
//! vectors from the observed path prefix. A [`StrategyRealization`] is the
//! per-path *schedule* `(tau_l, g_l)` the rule produces; all integral
//! arithmetic happens on realizations:
//!
//! ```text
//! (G . S)_t = sum_l g_l . ( S(tau_{l+1} /\ t) - S(tau_l /\ t) )
//! ```
//!
//! The position `g_l` is held on `(tau_l, tau_{l+1}]`; evaluation at
//! arbitrary t clips every rebalancing time at t, so the only discretization
//! in the integral is the path's own sampling.

use crate::paths::SampledPath;
use crate::quadvar::QVMatrixPath;
use crate::{Error, Result};
use std::io::Write;

/// A non-anticipating trading rule.
///
/// Both methods receive the full path for convenience but must depend only
/// on the prefix `omega(. /\ t)`; the prefix-replay tests rebuild their
/// answers from [`SampledPath::stopped`] paths and compare bit-exactly.
pub trait SimpleStrategy {
    /// Position vector (length = path dimension) to hold immediately after
    /// time `t`.
    fn position(&self, path: &SampledPath, t: f64) -> Vec<f64>;

    /// Next rebalancing time strictly after `t`, or `None` when the
    /// strategy holds its position to the horizon.
    fn next_time(&self, path: &SampledPath, t: f64) -> Option<f64>;
}

/// The schedule a rule produces on one path: times `tau_0 = 0 <= ... <=
/// tau_m` and the positions taken just after each.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRealization {
    /// Strictly increasing rebalancing times, starting at 0.
    pub times: Vec<f64>,
    /// Position vectors, one per time; `positions[l]` is held on
    /// `(times[l], times[l+1]]` and the last one to the horizon.
    pub positions: Vec<Vec<f64>>,
    /// Path dimension.
    pub dim: usize,
}

/// Result of a lambda-admissibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityCheck {
    /// The floor `-lambda` tested against.
    pub lambda: f64,
    /// True when `(G . S)_t >= -lambda` at every checked time.
    pub admissible: bool,
    /// Smallest integral value seen.
    pub worst_value: f64,
    /// Time at which the smallest value occurred.
    pub worst_time: f64,
}

impl StrategyRealization {
    /// Build a realization directly from a schedule.
    pub fn from_schedule(times: Vec<f64>, positions: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != positions.len() {
            return Err(Error::Validation(format!(
                "{} times but {} positions",
                times.len(),
                positions.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::Validation("first rebalancing time must be 0".into()));
        }
        for w in times.windows(2) {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(Error::Validation(
                    "rebalancing times must be strictly increasing".into(),
                ));
            }
        }
        let dim = positions[0].len();
        if positions.iter().any(|g| g.len() != dim) {
            return Err(Error::Validation("ragged position vectors".into()));
        }
        Ok(Self {
            times,
            positions,
            dim,
        })
    }

    /// The position held on the interval containing `t` (left-open lookup):
    /// `g_l` for `t` in `(tau_l, tau_{l+1}]`, and `g_0` at `t = 0`.
    pub fn position_at(&self, t: f64) -> &[f64] {
        if t <= self.times[0] {
            return &self.positions[0];
        }
        let idx = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.saturating_sub(1),
            Err(i) => i - 1,
        };
        &self.positions[idx]
    }

    /// The position taken just after `t`: `g_l` for `t` in
    /// `[tau_l, tau_{l+1})`.
    pub fn position_after(&self, t: f64) -> &[f64] {
        let idx = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        &self.positions[idx]
    }

    /// Running supremum of the position norm up to `t`.
    pub fn position_sup(&self, t: f64) -> f64 {
        let mut sup = 0.0f64;
        for (tau, g) in self.times.iter().zip(&self.positions) {
            if *tau > t {
                break;
            }
            sup = sup.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        sup
    }

    /// Serialize as `l,tau_l,g_l^1,...,g_l^d` rows.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("l,tau_l");
        for c in 1..=self.dim {
            header.push_str(&format!(",g_l^{c}"));
        }
        writeln!(out, "{header}")?;
        for (l, (tau, g)) in self.times.iter().zip(&self.positions).enumerate() {
            let mut line = format!("{l},{tau}");
            for v in g {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Run a rule on a path, producing its schedule.
///
/// `cap` bounds the number of rebalancing times; exceeding it reports the
/// rule as non-terminating.
pub fn realize(
    rule: &dyn SimpleStrategy,
    path: &SampledPath,
    cap: usize,
) -> Result<StrategyRealization> {
    let mut times = vec![0.0];
    let mut positions = vec![rule.position(path, 0.0)];
    let mut t = 0.0;
    while let Some(next) = rule.next_time(path, t) {
        if next.is_nan() || next <= t || next > path.horizon() {
            return Err(Error::Validation(format!(
                "rule produced rebalancing time {next} not in ({t}, {}]",
                path.horizon()
            )));
        }
        if times.len() >= cap {
            return Err(Error::NonTerminating { cap });
        }
        times.push(next);
        positions.push(rule.position(path, next));
        t = next;
    }
    if positions.iter().any(|g| g.len() != path.dim()) {
        return Err(Error::Validation(
            "rule produced positions of wrong dimension".into(),
        ));
    }
    StrategyRealization::from_schedule(times, positions)
}

/// The integral process `(G . S)_t` of a realized strategy.
pub fn integrate(real: &StrategyRealization, path: &SampledPath, t: f64) -> Result<f64> {
    if real.dim != path.dim() {
        return Err(Error::GridMismatch(format!(
            "strategy dimension {} vs path dimension {}",
            real.dim,
            path.dim()
        )));
    }
    let horizon = path.horizon();
    let mut total = 0.0;
    for (l, g) in real.positions.iter().enumerate() {
        let tau_l = real.times[l].min(t);
        let tau_next = real
            .times
            .get(l + 1)
            .copied()
            .unwrap_or(horizon)
            .min(t);
        if tau_next <= tau_l {
            break;
        }
        let inc = path.increment(tau_l, tau_next)?;
        total += g.iter().zip(&inc).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total)
}

/// Evaluate the integral process at every time of a sorted increasing list
/// in one sweep.
///
/// Positions change only at rebalancing times, so accumulating over the
/// union of the query times and the schedule reproduces the clipped sums
/// exactly at each query.
pub fn integrate_many(
    real: &StrategyRealization,
    path: &SampledPath,
    times: &[f64],
) -> Result<Vec<f64>> {
    if real.dim != path.dim() {
        return Err(Error::GridMismatch(format!(
            "strategy dimension {} vs path dimension {}",
            real.dim,
            path.dim()
        )));
    }
    let mut events: Vec<f64> = times.to_vec();
    events.extend_from_slice(&real.times);
    events.sort_by(|a, b| a.partial_cmp(b).unwrap());
    events.dedup();

    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0f64;
    let mut prev_t = 0.0f64;
    let mut prev_s = path.eval(0.0)?;
    let mut qi = 0usize;
    while qi < times.len() && times[qi] <= 0.0 {
        out.push(0.0);
        qi += 1;
    }
    for &e in &events {
        if e <= prev_t {
            continue;
        }
        let s = path.eval(e)?;
        let g = real.position_after(prev_t);
        let mut step = 0.0;
        for c in 0..real.dim {
            step += g[c] * (s[c] - prev_s[c]);
        }
        acc += step;
        while qi < times.len() && times[qi] == e {
            out.push(acc);
            qi += 1;
        }
        prev_t = e;
        prev_s = s;
    }
    if qi != times.len() {
        return Err(Error::Validation(
            "query times must be sorted, unique and inside the horizon".into(),
        ));
    }
    Ok(out)
}

/// Quadratic variation `[(G . S)]_t` of the integral process, accumulated
/// against a covariation matrix path computed on the same path:
///
/// ```text
/// sum_l sum_ij g_l^i g_l^j ( [S^i,S^j](tau_{l+1} /\ t) - [S^i,S^j](tau_l /\ t) )
/// ```
pub fn integral_qv(real: &StrategyRealization, qv: &QVMatrixPath, t: f64) -> Result<f64> {
    if real.dim != qv.dim {
        return Err(Error::GridMismatch(format!(
            "strategy dimension {} vs covariation dimension {}",
            real.dim, qv.dim
        )));
    }
    let horizon = qv.horizon();
    let d = qv.dim;
    let mut total = 0.0;
    for (l, g) in real.positions.iter().enumerate() {
        let tau_l = real.times[l].min(t);
        let tau_next = real
            .times
            .get(l + 1)
            .copied()
            .unwrap_or(horizon)
            .min(t);
        if tau_next <= tau_l {
            break;
        }
        let ma = qv.matrix_at(tau_l)?;
        let mb = qv.matrix_at(tau_next)?;
        for i in 0..d {
            for j in 0..d {
                total += g[i] * g[j] * (mb[i * d + j] - ma[i * d + j]);
            }
        }
    }
    Ok(total)
}

/// Truncate a strategy at volatility budget `Q`: positions are zeroed from
/// the first time `|[S]|_t` exceeds `Q`, which becomes a rebalancing time.
pub fn truncate(
    real: &StrategyRealization,
    q_budget: f64,
    qv: &QVMatrixPath,
) -> Result<StrategyRealization> {
    if q_budget < 0.0 {
        return Err(Error::Domain(format!(
            "volatility budget must be >= 0, got {q_budget}"
        )));
    }
    if real.dim != qv.dim {
        return Err(Error::GridMismatch(format!(
            "strategy dimension {} vs covariation dimension {}",
            real.dim, qv.dim
        )));
    }
    // first time the piecewise-linear trace exceeds the budget
    let mut cut: Option<f64> = None;
    for (k, tr) in qv.trace.iter().enumerate() {
        if *tr > q_budget {
            if k == 0 {
                cut = Some(qv.times[0]);
            } else {
                let (t0, t1) = (qv.times[k - 1], qv.times[k]);
                let (v0, v1) = (qv.trace[k - 1], qv.trace[k]);
                let alpha = (q_budget - v0) / (v1 - v0);
                cut = Some(t0 + alpha * (t1 - t0));
            }
            break;
        }
    }
    let Some(s) = cut else {
        return Ok(real.clone());
    };
    let zero = vec![0.0; real.dim];
    if s <= 0.0 {
        return StrategyRealization::from_schedule(vec![0.0], vec![zero]);
    }
    let mut times = Vec::new();
    let mut positions = Vec::new();
    for (tau, g) in real.times.iter().zip(&real.positions) {
        if *tau < s {
            times.push(*tau);
            positions.push(g.clone());
        } else {
            break;
        }
    }
    times.push(s);
    positions.push(zero);
    StrategyRealization::from_schedule(times, positions)
}

/// `|[(G . S)]|_t` for a matrix strategy given as its d rows: the sum of the
/// rows' integral quadratic variations.
pub fn qv_norm(rows: &[StrategyRealization], qv: &QVMatrixPath, t: f64) -> Result<f64> {
    if rows.len() != qv.dim {
        return Err(Error::Validation(format!(
            "expected {} strategy rows, got {}",
            qv.dim,
            rows.len()
        )));
    }
    let mut total = 0.0;
    for row in rows {
        total += integral_qv(row, qv, t)?;
    }
    Ok(total)
}

/// Check strong lambda-admissibility of `(G . S)` on one path: the integral
/// must stay at or above `-lambda` at every path-grid time and every
/// rebalancing time.
pub fn check_admissible(
    real: &StrategyRealization,
    path: &SampledPath,
    lambda: f64,
) -> Result<AdmissibilityCheck> {
    if lambda < 0.0 {
        return Err(Error::Domain(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let mut queries: Vec<f64> = path.grid().to_vec();
    queries.extend_from_slice(&real.times);
    queries.sort_by(|a, b| a.partial_cmp(b).unwrap());
    queries.dedup();
    let values = integrate_many(real, path, &queries)?;
    let mut worst_value = f64::INFINITY;
    let mut worst_time = 0.0;
    for (t, v) in queries.iter().zip(&values) {
        if *v < worst_value {
            worst_value = *v;
            worst_time = *t;
        }
    }
    Ok(AdmissibilityCheck {
        lambda,
        admissible: worst_value >= -lambda,
        worst_value,
        worst_time,
    })
}

/// Hold a fixed position for the whole horizon.
#[derive(Debug, Clone)]
pub struct BuyAndHold {
    /// The constant position vector.
    pub position: Vec<f64>,
}

impl SimpleStrategy for BuyAndHold {
    fn position(&self, _path: &SampledPath, _t: f64) -> Vec<f64> {
        self.position.clone()
    }
    fn next_time(&self, _path: &SampledPath, _t: f64) -> Option<f64> {
        None
    }
}

/// The zero strategy.
#[derive(Debug, Clone)]
pub struct ZeroStrategy {
    /// Path dimension.
    pub dim: usize,
}

impl SimpleStrategy for ZeroStrategy {
    fn position(&self, _path: &SampledPath, _t: f64) -> Vec<f64> {
        vec![0.0; self.dim]
    }
    fn next_time(&self, _path: &SampledPath, _t: f64) -> Option<f64> {
        None
    }
}

/// Rebalance at every level-crossing time of the path, taking a position
/// proportional to the sign of each coordinate's move since the previous
/// crossing.
///
/// The crossing times are hitting times, hence observable as they occur;
/// the constructor precomputes them and prefix replay reconstructs the same
/// schedule from stopped paths.
#[derive(Debug, Clone)]
pub struct LevelRebalance {
    /// Crossing level used for the schedule.
    pub level: u32,
    /// Position magnitude per coordinate.
    pub scale: f64,
    times: Vec<f64>,
}

impl LevelRebalance {
    /// Build the rule for one path at the given level.
    pub fn new(path: &SampledPath, level: u32, scale: f64) -> Result<Self> {
        let part = crate::lebesgue::merged_partition(path, level)?;
        Ok(Self {
            level,
            scale,
            times: part.times,
        })
    }
}

/// Replay a precomputed schedule as a rule; positions and times are looked
/// up from the stored realization. Used to feed constructed strategies (for
/// example hedged ones) through rule-based verifiers.
#[derive(Debug, Clone)]
pub struct ScheduleStrategy {
    /// The schedule to replay.
    pub schedule: StrategyRealization,
}

impl SimpleStrategy for ScheduleStrategy {
    fn position(&self, _path: &SampledPath, t: f64) -> Vec<f64> {
        self.schedule.position_after(t).to_vec()
    }
    fn next_time(&self, _path: &SampledPath, t: f64) -> Option<f64> {
        let idx = match self
            .schedule
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(i) => i + 1,
            Err(i) => i,
        };
        self.schedule.times.get(idx).copied()
    }
}

impl SimpleStrategy for LevelRebalance {
    fn position(&self, path: &SampledPath, t: f64) -> Vec<f64> {
        // sign of the move since the previous crossing (0 at the start)
        let idx = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        if idx == 0 {
            return vec![0.0; path.dim()];
        }
        let prev = self.times[idx - 1];
        let here = self.times[idx];
        let inc = path.increment(prev, here).expect("times inside horizon");
        inc.iter().map(|d| self.scale * d.signum()).collect()
    }

    fn next_time(&self, _path: &SampledPath, t: f64) -> Option<f64> {
        let idx = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(i) => i + 1,
            Err(i) => i,
        };
        self.times.get(idx).copied()
    }
}
