//! Domain types shared by every training variant.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One observed cell `x[row][col] = value` in global coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingTriple {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl RatingTriple {
    pub fn new(row: usize, col: usize, value: f64) -> Self {
        Self { row, col, value }
    }
}

impl fmt::Display for RatingTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.row, self.col, self.value)
    }
}

/// Checks that every triple fits an `n x m` matrix, is finite and unique.
pub fn validate_dataset(n: usize, m: usize, entries: &[RatingTriple]) -> Result<()> {
    let mut seen = HashSet::with_capacity(entries.len());
    for &t in entries {
        if t.row >= n || t.col >= m {
            return Err(Error::OutOfRange { triple: t, n, m });
        }
        if !t.value.is_finite() {
            return Err(Error::NonFinite { triple: t });
        }
        if !seen.insert((t.row, t.col)) {
            return Err(Error::Duplicate { triple: t });
        }
    }
    Ok(())
}

/// Immutable sparse rating matrix stored as COO triples.
///
/// Entries are kept sorted in row-major order so every consumer sees the
/// same deterministic visitation order.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsDataset {
    n: usize,
    m: usize,
    entries: Vec<RatingTriple>,
}

impl RatingsDataset {
    pub fn new(n: usize, m: usize, mut entries: Vec<RatingTriple>) -> Result<Self> {
        validate_dataset(n, m, &entries)?;
        entries.sort_unstable_by_key(|t| (t.row, t.col));
        Ok(Self { n, m, entries })
    }

    pub fn empty(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            entries: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn entries(&self) -> &[RatingTriple] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Observed fraction of the `n x m` cells.
    pub fn density_hint(&self) -> f64 {
        if self.n == 0 || self.m == 0 {
            0.0
        } else {
            self.entries.len() as f64 / (self.n as f64 * self.m as f64)
        }
    }

    pub fn mean_value(&self) -> Option<f64> {
        if self.entries.is_empty() {
            None
        } else {
            Some(self.entries.iter().map(|t| t.value).sum::<f64>() / self.entries.len() as f64)
        }
    }

    /// Same entries viewed inside a larger (or equal) matrix shape.
    pub fn with_shape(&self, n: usize, m: usize) -> Result<Self> {
        if n < self.n || m < self.m {
            return Err(Error::DimensionMismatch(format!(
                "cannot shrink {}x{} dataset to {n}x{m}",
                self.n, self.m
            )));
        }
        Ok(Self {
            n,
            m,
            entries: self.entries.clone(),
        })
    }
}

/// Latent factors `U` (n x k) and `V` (m x k), both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FactorModel {
    pub fn from_parts(n: usize, m: usize, k: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("latent dimension k must be >= 1".into()));
        }
        if u.len() != n * k || v.len() != m * k {
            return Err(Error::DimensionMismatch(format!(
                "expected U {}x{k} and V {}x{k}, got {} and {} values",
                n,
                m,
                u.len(),
                v.len()
            )));
        }
        Ok(Self { n, m, k, u, v })
    }

    pub fn u_row(&self, i: usize) -> &[f64] {
        &self.u[i * self.k..(i + 1) * self.k]
    }

    pub fn v_row(&self, j: usize) -> &[f64] {
        &self.v[j * self.k..(j + 1) * self.k]
    }

    pub fn predict(&self, i: usize, j: usize) -> f64 {
        dot(self.u_row(i), self.v_row(j))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random factors, i.i.d. uniform in `[0, 1/sqrt(k))`.
///
/// `U` is drawn first, then `V`, from a ChaCha8 stream seeded with `seed`.
pub fn init_factors(n: usize, m: usize, k: usize, seed: u64) -> Result<FactorModel> {
    if n == 0 || m == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "factor dimensions must be positive (n={n}, m={m}, k={k})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let high = 1.0 / (k as f64).sqrt();
    let u = (0..n * k).map(|_| rng.gen_range(0.0..high)).collect();
    let v = (0..m * k).map(|_| rng.gen_range(0.0..high)).collect();
    FactorModel::from_parts(n, m, k, u, v)
}

/// Policy for the number of SGD sweeps each block gets inside one outer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSchedule {
    /// `g` sweeps every step.
    Constant(usize),
    /// `ceil(step / period)` sweeps, capped at `cap`.
    IncreasingEvery { period: usize, cap: usize },
    /// `start - step + 1` sweeps, never below one.
    Decreasing { start: usize },
    /// Sweep each block until its RMSE improves by less than `tol`.
    ConvergeEachBlock { tol: f64 },
    /// `start` scaled by the previous step's relative RMSE improvement.
    AdaptiveDecreasing { start: usize },
}

impl InnerSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InnerSchedule::Constant(g) => g >= 1,
            InnerSchedule::IncreasingEvery { period, cap } => period >= 1 && cap >= 1,
            InnerSchedule::Decreasing { start } => start >= 1,
            InnerSchedule::ConvergeEachBlock { tol } => tol > 0.0 && tol.is_finite(),
            InnerSchedule::AdaptiveDecreasing { start } => start >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid inner schedule {self}")))
        }
    }
}

impl fmt::Display for InnerSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            InnerSchedule::Constant(g) => write!(f, "const:{g}"),
            InnerSchedule::IncreasingEvery { period, cap } => write!(f, "inc:{period},{cap}"),
            InnerSchedule::Decreasing { start } => write!(f, "dec:{start}"),
            InnerSchedule::ConvergeEachBlock { tol } => write!(f, "converge:{tol}"),
            InnerSchedule::AdaptiveDecreasing { start } => write!(f, "adaptive:{start}"),
        }
    }
}

impl FromStr for InnerSchedule {
    type Err = Error;

    /// Parses `const:g`, `inc:p,G`, `dec:s`, `adaptive:s` or `converge:tol`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse inner schedule '{s}'"));
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let count = |a: &str| a.trim().parse::<usize>().map_err(|_| bad());
        let schedule = match kind.trim() {
            "const" => InnerSchedule::Constant(count(args)?),
            "inc" => {
                let (p, cap) = args.split_once(',').ok_or_else(bad)?;
                InnerSchedule::IncreasingEvery {
                    period: count(p)?,
                    cap: count(cap)?,
                }
            }
            "dec" => InnerSchedule::Decreasing { start: count(args)? },
            "adaptive" => InnerSchedule::AdaptiveDecreasing { start: count(args)? },
            "converge" => InnerSchedule::ConvergeEachBlock {
                tol: args.trim().parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

/// Hyperparameters for every training variant.
///
/// Defaults are the synthetic-benchmark settings: `k = 10`,
/// `alpha = 1e-4`, `beta = 1e-2`, `delta = 1e-2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// When false, `delta` is ignored and every outer step runs.
    pub early_stopping: bool,
    pub outer_steps: usize,
    pub inner_schedule: InnerSchedule,
    pub grid_i: usize,
    pub grid_j: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 10,
            alpha: 1e-4,
            beta: 1e-2,
            delta: 1e-2,
            early_stopping: true,
            outer_steps: 100,
            inner_schedule: InnerSchedule::Constant(1),
            grid_i: 1,
            grid_j: 1,
            workers: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::InvalidArgument(format!("invalid config: {what}")));
        if self.k < 1 {
            return fail("k must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail("beta must be non-negative");
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return fail("delta must be non-negative");
        }
        if self.outer_steps < 1 {
            return fail("outer_steps must be >= 1");
        }
        if self.grid_i < 1 || self.grid_j < 1 {
            return fail("grid dimensions must be >= 1");
        }
        if self.workers < 1 {
            return fail("workers must be >= 1");
        }
        self.inner_schedule.validate()
    }
}

/// One outer step of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// One-based outer step index.
    pub step: usize,
    pub train_rmse: f64,
    pub test_rmse: Option<f64>,
    /// Wall-clock seconds spent on this step.
    pub seconds: f64,
    /// Largest inner iteration count any block used in this step.
    pub inner_iters: usize,
    /// Blocks that hit the converge-mode iteration cap.
    pub cap_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    /// Train RMSE of the initial factors, before any step.
    pub initial_train_rmse: f64,
    pub steps: Vec<TraceStep>,
}

impl ConvergenceTrace {
    pub fn new(initial_train_rmse: f64) -> Self {
        Self {
            initial_train_rmse,
            steps: Vec::new(),
        }
    }

    pub fn push(&mut self, step: TraceStep) {
        debug_assert!(self.steps.last().is_none_or(|s| s.step < step.step));
        debug_assert!(step.train_rmse >= 0.0);
        self.steps.push(step);
    }

    pub fn last_train_rmse(&self) -> f64 {
        self.steps
            .last()
            .map_or(self.initial_train_rmse, |s| s.train_rmse)
    }

    pub fn total_seconds(&self) -> f64 {
        self.steps.iter().map(|s| s.seconds).sum()
    }

    /// Renders `step,train_rmse,test_rmse,seconds,inner_iters` rows.
    ///
    /// `comment` lines are emitted first, each prefixed with `# `. With
    /// `with_timing == false` the seconds column is left empty so that
    /// repeated runs produce byte-identical files.
    pub fn to_csv(&self, comment: Option<&str>, with_timing: bool) -> String {
        let mut out = String::new();
        if let Some(comment) = comment {
            for line in comment.lines() {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out.push_str("step,train_rmse,test_rmse,seconds,inner_iters\n");
        for s in &self.steps {
            let test = s.test_rmse.map(|r| format!("{r:?}")).unwrap_or_default();
            let secs = if with_timing {
                format!("{:.6}", s.seconds)
            } else {
                String::new()
            };
            out.push_str(&format!(
                "{},{:?},{},{},{}\n",
                s.step, s.train_rmse, test, secs, s.inner_iters
            ));
        }
        out
    }
}
