//! Sampled continuous paths and adapted processes on them.
//!
//! A [`SampledPath`] is a d-dimensional continuous path known at finitely many
//! strictly increasing times `0 = t_0 < ... < t_N = T` and extended between
//! samples by linear interpolation. All off-grid evaluation, crossing times
//! and running suprema elsewhere in the crate are computed on that
//! interpolant; evaluation at a stored grid time reproduces the stored value
//! bit-exactly.
//!
//! Time and value comparisons on shared grids use exact `f64` equality: grids
//! are propagated, never recomputed.

use crate::{Error, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};

/// A d-dimensional piecewise-linear path on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    grid: Vec<f64>,
    /// One row of `dim` coordinates per grid time.
    values: Vec<Vec<f64>>,
    dim: usize,
}

impl SampledPath {
    /// Build a path from a grid and per-time coordinate rows, validating the
    /// grid (strictly increasing, starts at 0) and value shape/finiteness.
    pub fn new(grid: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::Validation(format!(
                "a path needs at least 2 grid points, got {}",
                grid.len()
            )));
        }
        if grid.len() != values.len() {
            return Err(Error::Validation(format!(
                "{} grid times but {} value rows",
                grid.len(),
                values.len()
            )));
        }
        if grid[0] != 0.0 {
            return Err(Error::Validation(format!(
                "grid must start at 0, got {}",
                grid[0]
            )));
        }
        if !grid.iter().all(|t| t.is_finite()) {
            return Err(Error::Validation("non-finite grid time".into()));
        }
        for w in grid.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation(format!(
                    "grid times must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let dim = values[0].len();
        if dim == 0 {
            return Err(Error::Validation("path dimension must be >= 1".into()));
        }
        for (k, row) in values.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Validation(format!(
                    "row {} has {} coordinates, expected {}",
                    k,
                    row.len(),
                    dim
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite value in row {k}")));
            }
        }
        Ok(Self { grid, values, dim })
    }

    /// Number of coordinates d.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Final time T.
    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// The sampling grid `t_0 = 0 < ... < t_N = T`.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Stored coordinate rows, one per grid time.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon()).contains(&t) {
            return Err(Error::Domain(format!(
                "time {t} outside [0, {}]",
                self.horizon()
            )));
        }
        Ok(())
    }

    /// Index of the segment `[t_i, t_{i+1}]` containing `t`, together with an
    /// exact-hit flag. `t` must already be range-checked.
    fn locate(&self, t: f64) -> (usize, bool) {
        match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(i) => (i, true),
            Err(i) => (i - 1, false),
        }
    }

    /// Evaluate the interpolant at `t`. Exact at grid times.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let (i, exact) = self.locate(t);
        if exact {
            return Ok(self.values[i].clone());
        }
        let (ta, tb) = (self.grid[i], self.grid[i + 1]);
        let alpha = (t - ta) / (tb - ta);
        Ok((0..self.dim)
            .map(|c| {
                let (va, vb) = (self.values[i][c], self.values[i + 1][c]);
                va + alpha * (vb - va)
            })
            .collect())
    }

    /// Evaluate a single coordinate at `t`.
    pub fn eval_coord(&self, coord: usize, t: f64) -> Result<f64> {
        if coord >= self.dim {
            return Err(Error::Domain(format!(
                "coordinate {coord} out of range for dimension {}",
                self.dim
            )));
        }
        Ok(self.eval(t)?[coord])
    }

    /// Path increment `S_{u,v} = S_v - S_u` with piecewise-linear evaluation
    /// off the grid.
    pub fn increment(&self, u: f64, v: f64) -> Result<Vec<f64>> {
        let a = self.eval(u)?;
        let b = self.eval(v)?;
        Ok(b.iter().zip(&a).map(|(x, y)| x - y).collect())
    }

    /// The stopped path `s -> omega(s /\ t)` on the full horizon.
    ///
    /// This is the canonical non-anticipating restriction: everything
    /// computable from it uses path data on `[0, t]` only. Grid points after
    /// `t` collapse to the single terminal sample `(T, omega(t))`.
    pub fn stopped(&self, t: f64) -> Result<SampledPath> {
        self.check_time(t)?;
        if t == self.horizon() {
            return Ok(self.clone());
        }
        let (i, exact) = self.locate(t);
        let mut grid: Vec<f64> = self.grid[..=i].to_vec();
        let mut values: Vec<Vec<f64>> = self.values[..=i].to_vec();
        let frozen = if exact {
            self.values[i].clone()
        } else {
            let v = self.eval(t)?;
            if t > grid[i] {
                grid.push(t);
                values.push(v.clone());
            }
            v
        };
        grid.push(self.horizon());
        values.push(frozen);
        Ok(SampledPath {
            grid,
            values,
            dim: self.dim,
        })
    }

    /// Resample onto a refined grid that must contain every original grid
    /// time. Stored values are carried over bit-exactly; new times are
    /// interpolated.
    pub fn resampled(&self, grid: &[f64]) -> Result<SampledPath> {
        let mut values = Vec::with_capacity(grid.len());
        let mut orig = 0usize;
        for &t in grid {
            self.check_time(t)?;
            if orig < self.grid.len() && self.grid[orig] == t {
                values.push(self.values[orig].clone());
                orig += 1;
            } else {
                values.push(self.eval(t)?);
            }
        }
        if orig != self.grid.len() {
            return Err(Error::GridMismatch(
                "refined grid must contain every original grid time".into(),
            ));
        }
        SampledPath::new(grid.to_vec(), values)
    }

    /// The scalar path `omega^i + omega^j`, sharing this path's grid.
    pub fn coordinate_sum(&self, i: usize, j: usize) -> Result<SampledPath> {
        if i >= self.dim || j >= self.dim {
            return Err(Error::Domain(format!(
                "coordinate pair ({i},{j}) out of range for dimension {}",
                self.dim
            )));
        }
        let values = self
            .values
            .iter()
            .map(|row| vec![row[i] + row[j]])
            .collect();
        SampledPath::new(self.grid.clone(), values)
    }

    /// Extract one coordinate as a scalar path on the same grid.
    pub fn coordinate(&self, i: usize) -> Result<SampledPath> {
        if i >= self.dim {
            return Err(Error::Domain(format!(
                "coordinate {i} out of range for dimension {}",
                self.dim
            )));
        }
        let values = self.values.iter().map(|row| vec![row[i]]).collect();
        SampledPath::new(self.grid.clone(), values)
    }

    /// Write the path in the CSV interchange format (`t,x1,...,xd` header).
    /// Floats are printed with the shortest representation that round-trips,
    /// so `load_path . save_path` is the identity.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.dim).map(|c| format!("x{c}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, row) in self.grid.iter().zip(&self.values) {
            let mut line = format!("{t}");
            for v in row {
                line.push(',');
                line.push_str(&format!("{v}"));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Parse a path from the CSV interchange format.
///
/// Expects a `t,x1,...,xd` header, at least two rows, strictly increasing
/// times starting at 0. Parse failures report the 1-based line number.
pub fn load_path<R: BufRead>(input: R) -> Result<SampledPath> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty input".into(),
        })
        .and_then(|(i, l)| l.map(|l| (i, l)).map_err(Error::Io))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.is_empty() || cols[0] != "t" || cols.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header t,x1,...,xd, got '{header}'"),
        });
    }
    let dim = cols.len() - 1;
    let mut grid = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} fields, got {}", dim + 1, fields.len()),
            });
        }
        let mut nums = Vec::with_capacity(dim + 1);
        for f in &fields {
            match f.trim().parse::<f64>() {
                Ok(v) => nums.push(v),
                Err(e) => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("bad float '{f}': {e}"),
                    })
                }
            }
        }
        grid.push(nums[0]);
        values.push(nums[1..].to_vec());
    }
    SampledPath::new(grid, values)
}

/// Generate a seeded random-walk path: `steps` i.i.d. increments of
/// `+/- vol * sqrt(horizon/steps)` per coordinate, linearly interpolated.
///
/// The generator is pinned to ChaCha8 seeded with `seed`; signs are drawn
/// one `u64` per (step, coordinate) in row-major order, so fixtures are
/// reproducible across platforms.
pub fn generate_random_walk(
    seed: u64,
    steps: usize,
    horizon: f64,
    dim: usize,
    vol: f64,
) -> Result<SampledPath> {
    if steps == 0 {
        return Err(Error::Validation("steps must be >= 1".into()));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::Validation(format!(
            "horizon must be > 0, got {horizon}"
        )));
    }
    if dim == 0 {
        return Err(Error::Validation("dimension must be >= 1".into()));
    }
    if vol < 0.0 {
        return Err(Error::Validation(format!(
            "volatility must be >= 0, got {vol}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = vol * (horizon / steps as f64).sqrt();
    let mut grid = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    grid.push(0.0);
    values.push(vec![0.0; dim]);
    for k in 1..=steps {
        let t = if k == steps {
            horizon
        } else {
            horizon * (k as f64) / (steps as f64)
        };
        let prev = values.last().unwrap().clone();
        let row: Vec<f64> = prev
            .iter()
            .map(|x| {
                let up = rng.next_u64() & 1 == 1;
                if up {
                    x + step
                } else {
                    x - step
                }
            })
            .collect();
        grid.push(t);
        values.push(row);
    }
    SampledPath::new(grid, values)
}

/// A process sampled on the same grid as an associated path, with values in
/// `R^m`. The `adapted` flag records that each stored value was computed
/// from the path restricted to `[0, t_k]`; tests enforce it by prefix
/// replay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedSampledProcess {
    grid: Vec<f64>,
    values: Vec<Vec<f64>>,
    width: usize,
    adapted: bool,
}

impl AdaptedSampledProcess {
    /// Wrap a grid and per-time rows as an adapted process.
    pub fn new(grid: Vec<f64>, values: Vec<Vec<f64>>, adapted: bool) -> Result<Self> {
        if grid.len() != values.len() || grid.is_empty() {
            return Err(Error::Validation(format!(
                "{} grid times but {} value rows",
                grid.len(),
                values.len()
            )));
        }
        let width = values[0].len();
        if values.iter().any(|r| r.len() != width) {
            return Err(Error::Validation("ragged process rows".into()));
        }
        Ok(Self {
            grid,
            values,
            width,
            adapted,
        })
    }

    /// Sampling grid, shared with the underlying path.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Stored rows.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Components per time point.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Whether the process declares prefix-measurable values.
    pub fn is_adapted(&self) -> bool {
        self.adapted
    }

    fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Piecewise-linear evaluation, exact on grid points.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        if !(self.grid[0]..=self.horizon()).contains(&t) {
            return Err(Error::Domain(format!(
                "time {t} outside [{}, {}]",
                self.grid[0],
                self.horizon()
            )));
        }
        match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(i) => Ok(self.values[i].clone()),
            Err(i) => {
                let (ta, tb) = (self.grid[i - 1], self.grid[i]);
                let alpha = (t - ta) / (tb - ta);
                Ok((0..self.width)
                    .map(|c| {
                        let (va, vb) = (self.values[i - 1][c], self.values[i][c]);
                        va + alpha * (vb - va)
                    })
                    .collect())
            }
        }
    }

    /// Running supremum `G*_t = sup_{s <= t} |G_s|` of the Euclidean norm.
    ///
    /// The norm of a piecewise-linear process is convex on each segment, so
    /// the supremum over `[0, t]` is attained at a grid point or at `t`
    /// itself.
    pub fn running_sup(&self, t: f64) -> Result<f64> {
        let norm = |row: &[f64]| row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut sup: f64 = 0.0;
        for (tk, row) in self.grid.iter().zip(&self.values) {
            if *tk > t {
                break;
            }
            sup = sup.max(norm(row));
        }
        sup = sup.max(norm(&self.eval(t)?));
        Ok(sup)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_path(t_end: f64, slope: &[f64]) -> SampledPath {
        let grid = vec![0.0, t_end / 2.0, t_end];
        let values = grid
            .iter()
            .map(|t| slope.iter().map(|s| s * t).collect())
            .collect();
        SampledPath::new(grid, values).unwrap()
    }

    #[test]
    fn load_echoes_input() {
        let src = "t,x1\n0,0\n0.5,0.25\n1,1\n";
        let p = load_path(src.as_bytes()).unwrap();
        assert_eq!(p.grid(), &[0.0, 0.5, 1.0]);
        assert_eq!(p.values()[1], vec![0.25]);
        assert_eq!(p.dim(), 1);
        assert_eq!(p.horizon(), 1.0);
    }

    #[test]
    fn load_rejects_duplicate_time() {
        let src = "t,x1\n0,0\n0.5,0.25\n0.5,0.3\n1,1\n";
        assert!(matches!(
            load_path(src.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn load_two_dimensional() {
        let src = "t,x1,x2\n0,0,1\n1,2,3\n";
        let p = load_path(src.as_bytes()).unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(p.values()[1], vec![2.0, 3.0]);
    }

    #[test]
    fn load_reports_bad_line() {
        let src = "t,x1\n0,0\nnope,1\n";
        match load_path(src.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let p = generate_random_walk(99, 64, 1.0, 3, 0.7).unwrap();
        let mut buf = Vec::new();
        p.save(&mut buf).unwrap();
        let q = load_path(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn zero_vol_walk_is_constant_at_origin() {
        let p = generate_random_walk(5, 16, 2.0, 2, 0.0).unwrap();
        for row in p.values() {
            assert_eq!(row, &vec![0.0, 0.0]);
        }
    }

    #[test]
    fn same_seed_same_path() {
        let a = generate_random_walk(123, 100, 1.0, 2, 1.0).unwrap();
        let b = generate_random_walk(123, 100, 1.0, 2, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(matches!(
            generate_random_walk(1, 0, 1.0, 1, 1.0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn increment_on_linear_path() {
        let p = linear_path(2.0, &[1.0]);
        let d = p.increment(0.5, 1.5).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-15);
        assert_eq!(p.increment(0.7, 0.7).unwrap(), vec![0.0]);
    }

    #[test]
    fn increment_two_dims() {
        let p = linear_path(1.0, &[1.0, 2.0]);
        let d = p.increment(0.0, 1.0).unwrap();
        assert_eq!(d, vec![1.0, 2.0]);
    }

    #[test]
    fn increment_rejects_out_of_range() {
        let p = linear_path(1.0, &[1.0]);
        assert!(matches!(p.increment(0.0, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn increment_is_additive() {
        let p = generate_random_walk(7, 50, 1.0, 2, 1.0).unwrap();
        let (u, v, w) = (0.1, 0.37, 0.9);
        let uw = p.increment(u, w).unwrap();
        let uv = p.increment(u, v).unwrap();
        let vw = p.increment(v, w).unwrap();
        for c in 0..2 {
            assert!((uw[c] - (uv[c] + vw[c])).abs() < 1e-12);
        }
    }

    #[test]
    fn running_sup_examples() {
        // samples (0, 3, -5, 2) on unit-spaced grid
        let grid = vec![0.0, 1.0, 2.0, 3.0];
        let vals = vec![vec![0.0], vec![3.0], vec![-5.0], vec![2.0]];
        let proc = AdaptedSampledProcess::new(grid, vals, true).unwrap();
        let expect = [0.0, 3.0, 5.0, 5.0];
        for (k, e) in expect.iter().enumerate() {
            assert_eq!(proc.running_sup(k as f64).unwrap(), *e);
        }
    }

    #[test]
    fn running_sup_of_one_minus_s() {
        // G_s = 1 - s on [0,2]; |G| is maximal at both ends
        let grid = vec![0.0, 2.0];
        let vals = vec![vec![1.0], vec![-1.0]];
        let proc = AdaptedSampledProcess::new(grid, vals, true).unwrap();
        assert_eq!(proc.running_sup(2.0).unwrap(), 1.0);
        assert_eq!(proc.running_sup(1.0).unwrap(), 1.0);
    }

    #[test]
    fn running_sup_constant_norm() {
        let grid = vec![0.0, 1.0, 2.0];
        let vals = vec![vec![3.0, 4.0], vec![3.0, 4.0], vec![3.0, 4.0]];
        let proc = AdaptedSampledProcess::new(grid, vals, true).unwrap();
        for t in [0.0, 0.5, 2.0] {
            assert!((proc.running_sup(t).unwrap() - 5.0).abs() < 1e-15);
        }
    }

    #[test]
    fn running_sup_is_monotone_in_t() {
        let p = generate_random_walk(11, 40, 1.0, 1, 1.0).unwrap();
        let proc =
            AdaptedSampledProcess::new(p.grid().to_vec(), p.values().to_vec(), true).unwrap();
        let mut last = 0.0;
        for k in 0..=40 {
            let t = k as f64 / 40.0;
            let s = proc.running_sup(t).unwrap();
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn increment_variance_matches_vol() {
        // law-of-large-numbers check frozen from the generator definition:
        // increments are +/- sqrt(T/N) so the sample variance times N is
        // exactly 1 for every seed; assert the 5% envelope anyway.
        let n = 1 << 16;
        let p = generate_random_walk(1, n, 1.0, 1, 1.0).unwrap();
        let mut sum_sq = 0.0;
        for w in p.values().windows(2) {
            let d = w[1][0] - w[0][0];
            sum_sq += d * d;
        }
        let scaled = sum_sq; // sum of (sigma^2 T/N) over N steps = sigma^2 T
        assert!((scaled - 1.0).abs() < 0.05, "scaled variance {scaled}");
    }

    #[test]
    fn stopped_path_freezes_after_t() {
        let p = generate_random_walk(21, 32, 1.0, 2, 1.0).unwrap();
        let s = p.stopped(0.4).unwrap();
        assert_eq!(s.horizon(), p.horizon());
        assert_eq!(s.eval(0.3).unwrap(), p.eval(0.3).unwrap());
        assert_eq!(s.eval(0.9).unwrap(), p.eval(0.4).unwrap());
        let s0 = p.stopped(0.0).unwrap();
        assert_eq!(s0.eval(1.0).unwrap(), p.eval(0.0).unwrap());
    }

    #[test]
    fn eval_exact_on_grid() {
        let p = generate_random_walk(3, 17, 1.0, 2, 0.4).unwrap();
        for (k, t) in p.grid().iter().enumerate() {
            assert_eq!(p.eval(*t).unwrap(), p.values()[k]);
        }
    }
}
