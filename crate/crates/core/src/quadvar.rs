//! Quadratic covariation matrices along Lebesgue partitions.
//!
//! The level-n covariation between coordinates i and j at time t is the
//! finite sum of increment products over the level-n merged partition with
//! both endpoints clipped at t:
//!
//! ```text
//! [S^i, S^j]^n_t = sum_k  S^i(pi_k /\ t, pi_{k+1} /\ t) * S^j(pi_k /\ t, pi_{k+1} /\ t)
//! ```
//!
//! Completed partition intervals contribute rank-one increments, so the
//! diagonal is non-decreasing and the polarized forms `[S^i +/- S^j]` have
//! non-negative increments when sampled at partition times. Between
//! partition times the running final term varies continuously with t and may
//! locally dip; samples stored at path-grid times include that partial term.
//!
//! Convergence across levels is declared when the uniform (in t) max-norm
//! distance between consecutive level matrices drops below a tolerance;
//! paths for which the cap is reached first are flagged rather than
//! rejected.

use crate::lebesgue::merged_partition;
use crate::paths::SampledPath;
use crate::{Error, Result};
use std::io::Write;

/// Default uniform-distance tolerance for [`qv`].
pub const DEFAULT_TOL: f64 = 1e-4;
/// Default level cap for [`qv`].
pub const DEFAULT_N_MAX: u32 = 20;

/// A time-indexed symmetric d x d covariation matrix with its trace.
#[derive(Debug, Clone, PartialEq)]
pub struct QVMatrixPath {
    /// Sample times: the path grid joined with the partition times.
    pub times: Vec<f64>,
    /// Row-major d*d matrix per sample time.
    pub matrices: Vec<Vec<f64>>,
    /// `|[S]|_t`: sum of diagonal entries per sample time.
    pub trace: Vec<f64>,
    /// Path dimension d.
    pub dim: usize,
    /// Level at which the matrices were computed.
    pub level_used: u32,
    /// False when the level cap was reached before the uniform distance
    /// between consecutive levels fell under tolerance.
    pub converged: bool,
}

impl QVMatrixPath {
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = *self.times.last().unwrap();
        if !(self.times[0]..=horizon).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, {horizon}]")));
        }
        match self.times.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(i) => Ok((i, 0.0)),
            Err(i) => {
                let (ta, tb) = (self.times[i - 1], self.times[i]);
                Ok((i - 1, (t - ta) / (tb - ta)))
            }
        }
    }

    /// The matrix at time t, linearly interpolated between samples.
    pub fn matrix_at(&self, t: f64) -> Result<Vec<f64>> {
        let (i, alpha) = self.locate(t)?;
        if alpha == 0.0 {
            return Ok(self.matrices[i].clone());
        }
        Ok(self.matrices[i]
            .iter()
            .zip(&self.matrices[i + 1])
            .map(|(a, b)| a + alpha * (b - a))
            .collect())
    }

    /// The trace `|[S]|_t`, linearly interpolated between samples.
    pub fn trace_at(&self, t: f64) -> Result<f64> {
        let (i, alpha) = self.locate(t)?;
        if alpha == 0.0 {
            return Ok(self.trace[i]);
        }
        Ok(self.trace[i] + alpha * (self.trace[i + 1] - self.trace[i]))
    }

    /// Final sample time.
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Serialize as `t,q_11,...,q_dd,trace` rows.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("t");
        for i in 1..=self.dim {
            for j in 1..=self.dim {
                header.push_str(&format!(",q_{i}{j}"));
            }
        }
        header.push_str(",trace");
        writeln!(out, "{header}")?;
        for ((t, m), tr) in self.times.iter().zip(&self.matrices).zip(&self.trace) {
            let mut line = format!("{t}");
            for v in m {
                line.push_str(&format!(",{v}"));
            }
            line.push_str(&format!(",{tr}"));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn sorted_union(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => {
                if x <= y {
                    if x == y {
                        j += 1;
                    }
                    i += 1;
                    *x
                } else {
                    j += 1;
                    *y
                }
            }
            (Some(x), None) => {
                i += 1;
                *x
            }
            (None, Some(y)) => {
                j += 1;
                *y
            }
            (None, None) => break,
        };
        if out.last() != Some(&next) {
            out.push(next);
        }
    }
    out
}

/// The level-n covariation matrix path sampled on the path grid joined with
/// the level-n merged partition times.
pub fn qv_at_level(path: &SampledPath, level: u32) -> Result<QVMatrixPath> {
    let d = path.dim();
    let partition = merged_partition(path, level)?;
    let times = sorted_union(path.grid(), &partition.times);
    let mut matrices = Vec::with_capacity(times.len());
    let mut trace = Vec::with_capacity(times.len());

    // completed holds the sum over closed partition intervals; the term for
    // the interval containing t is rebuilt from the anchor at pi_k.
    let mut completed = vec![0.0f64; d * d];
    let mut k = 0usize; // current interval is (pi_k, pi_{k+1}]
    let mut anchor = path.eval(partition.times[0])?;
    for &t in &times {
        while k + 1 < partition.times.len() && partition.times[k + 1] <= t {
            let next_anchor = path.eval(partition.times[k + 1])?;
            for i in 0..d {
                for j in 0..d {
                    completed[i * d + j] +=
                        (next_anchor[i] - anchor[i]) * (next_anchor[j] - anchor[j]);
                }
            }
            anchor = next_anchor;
            k += 1;
        }
        let here = path.eval(t)?;
        let mut m = completed.clone();
        if t > partition.times[k] {
            for i in 0..d {
                for j in 0..d {
                    m[i * d + j] += (here[i] - anchor[i]) * (here[j] - anchor[j]);
                }
            }
        }
        let tr = (0..d).map(|i| m[i * d + i]).sum();
        matrices.push(m);
        trace.push(tr);
    }
    Ok(QVMatrixPath {
        times,
        matrices,
        trace,
        dim: d,
        level_used: level,
        converged: true,
    })
}

/// The level-n covariation matrix at a single time, as a row-major d x d
/// matrix.
pub fn qv_level(path: &SampledPath, level: u32, t: f64) -> Result<Vec<f64>> {
    qv_at_level(path, level)?.matrix_at(t)
}

/// Uniform max-norm distance between two piecewise-linear matrix paths.
///
/// Both paths are linear between their sample times, so the distance over
/// all t is attained on the union of the two sample sets.
pub fn uniform_distance(a: &QVMatrixPath, b: &QVMatrixPath) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::GridMismatch(format!(
            "dimension {} vs {}",
            a.dim, b.dim
        )));
    }
    let times = sorted_union(&a.times, &b.times);
    let mut dist = 0.0f64;
    for &t in &times {
        let ma = a.matrix_at(t)?;
        let mb = b.matrix_at(t)?;
        for (x, y) in ma.iter().zip(&mb) {
            dist = dist.max((x - y).abs());
        }
    }
    Ok(dist)
}

/// Compute covariations with automatic level selection: raise the level
/// until consecutive levels are uniformly within `tol`, or `n_max` is hit
/// (in which case the result carries `converged = false`).
pub fn qv(path: &SampledPath, tol: f64, n_max: u32) -> Result<QVMatrixPath> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!("tolerance must be > 0, got {tol}")));
    }
    let mut current = qv_at_level(path, 0)?;
    for level in 0..n_max {
        let next = qv_at_level(path, level + 1)?;
        let dist = uniform_distance(&current, &next)?;
        if dist < tol {
            let mut result = next;
            result.converged = true;
            return Ok(result);
        }
        current = next;
    }
    current.converged = false;
    Ok(current)
}

/// `|[S]|_t`: trace of the covariation at time t.
pub fn qv_trace(qv: &QVMatrixPath, t: f64) -> Result<f64> {
    qv.trace_at(t)
}
