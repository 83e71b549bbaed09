//! Per-block factorization kernels.
//!
//! A kernel owns the row slices `U_i` and `V_j` of one block for the
//! duration of the call and never touches any other factor rows, so
//! kernels over disjoint slices may run concurrently.

use crate::error::{Divergence, Error, Result};
use crate::metrics::RmseAccumulator;
use crate::model::dot;
use crate::partition::LocalTriple;

/// Upper bound on sweeps in converge-each-block mode.
pub const CONVERGE_CAP: usize = 10_000;

/// How many SGD sweeps a kernel call performs over its block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerIters {
    Fixed(usize),
    /// Sweep until the block RMSE improves by less than `tol`, at most `cap` times.
    UntilConverged { tol: f64, cap: usize },
}

/// Read-only view of one block and its factor slices.
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a> {
    pub triples: &'a [LocalTriple],
    pub u: &'a [f64],
    pub v: &'a [f64],
    pub k: usize,
}

impl BlockView<'_> {
    pub fn rows(&self) -> usize {
        self.u.len() / self.k
    }

    pub fn cols(&self) -> usize {
        self.v.len() / self.k
    }

    /// Adds the squared residuals of every observed entry to `acc`.
    pub fn accumulate(&self, acc: &mut RmseAccumulator) {
        let k = self.k;
        for t in self.triples {
            let u = &self.u[t.row * k..(t.row + 1) * k];
            let v = &self.v[t.col * k..(t.col + 1) * k];
            acc.push(t.value - dot(u, v));
        }
    }

    pub fn sse(&self) -> f64 {
        let mut acc = RmseAccumulator::new(false);
        self.accumulate(&mut acc);
        acc.sse()
    }

    /// Residuals `x - u.v` at the observed entries, in entry order.
    pub fn residuals(&self) -> Vec<f64> {
        let k = self.k;
        self.triples
            .iter()
            .map(|t| t.value - dot(&self.u[t.row * k..(t.row + 1) * k], &self.v[t.col * k..(t.col + 1) * k]))
            .collect()
    }
}

/// One block's worth of work: its ratings plus exclusive factor slices.
#[derive(Debug)]
pub struct BlockTask<'a> {
    pub bi: usize,
    pub bj: usize,
    pub triples: &'a [LocalTriple],
    /// Rows `row_bounds[bi]..row_bounds[bi + 1]` of `U`, row-major.
    pub u: &'a mut [f64],
    /// Rows `col_bounds[bj]..col_bounds[bj + 1]` of `V`, row-major.
    pub v: &'a mut [f64],
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub inner: InnerIters,
}

impl<'a> BlockTask<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        (bi, bj): (usize, usize),
        triples: &'a [LocalTriple],
        u: &'a mut [f64],
        v: &'a mut [f64],
        k: usize,
        alpha: f64,
        beta: f64,
        inner: InnerIters,
    ) -> Result<Self> {
        if k == 0 || !u.len().is_multiple_of(k) || !v.len().is_multiple_of(k) {
            return Err(Error::DimensionMismatch(format!(
                "factor slices of length {} and {} are not multiples of k={k}",
                u.len(),
                v.len()
            )));
        }
        let (rows, cols) = (u.len() / k, v.len() / k);
        if let Some(t) = triples.iter().find(|t| t.row >= rows || t.col >= cols) {
            return Err(Error::DimensionMismatch(format!(
                "local entry ({}, {}) outside {rows}x{cols} block ({bi}, {bj})",
                t.row, t.col
            )));
        }
        match inner {
            InnerIters::Fixed(0) => {
                return Err(Error::InvalidArgument("inner iterations must be >= 1".into()))
            }
            InnerIters::UntilConverged { tol, cap } if tol.is_nan() || tol <= 0.0 || cap == 0 => {
                return Err(Error::InvalidArgument(
                    "converge mode needs tol > 0 and cap >= 1".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            bi,
            bj,
            triples,
            u,
            v,
            k,
            alpha,
            beta,
            inner,
        })
    }

    pub fn view(&self) -> BlockView<'_> {
        BlockView {
            triples: self.triples,
            u: self.u,
            v: self.v,
            k: self.k,
        }
    }

    fn divergence(&self, entry: (usize, usize), iteration: usize) -> Divergence {
        Divergence {
            block: (self.bi, self.bj),
            entry,
            iteration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockStats {
    pub sse_before: f64,
    pub sse_after: f64,
    pub entries: usize,
    /// Sweeps actually performed.
    pub iterations: usize,
    /// Converge mode stopped on the iteration cap rather than on `tol`.
    pub hit_cap: bool,
}

impl BlockStats {
    fn idle(inner: InnerIters) -> Self {
        Self {
            sse_before: 0.0,
            sse_after: 0.0,
            entries: 0,
            iterations: match inner {
                InnerIters::Fixed(g) => g,
                InnerIters::UntilConverged { .. } => 0,
            },
            hit_cap: false,
        }
    }
}

/// Applies one regularized SGD update for a single rating.
///
/// Both factor rows are updated from their pre-update values. Returns the
/// residual and whether every updated component stayed finite.
#[inline]
pub fn sgd_update(u: &mut [f64], v: &mut [f64], value: f64, alpha: f64, beta: f64) -> (f64, bool) {
    let e = value - dot(u, v);
    let mut check = e;
    for (ug, vg) in u.iter_mut().zip(v.iter_mut()) {
        let (u_old, v_old) = (*ug, *vg);
        *ug = u_old + alpha * (2.0 * e * v_old - beta * u_old);
        *vg = v_old + alpha * (2.0 * e * u_old - beta * v_old);
        check += *ug + *vg;
    }
    (e, check.is_finite())
}

fn sgd_sweep(task: &mut BlockTask<'_>, iteration: usize) -> Result<(), Divergence> {
    let k = task.k;
    for t in task.triples {
        let u = &mut task.u[t.row * k..(t.row + 1) * k];
        let v = &mut task.v[t.col * k..(t.col + 1) * k];
        let (_, finite) = sgd_update(u, v, t.value, task.alpha, task.beta);
        if !finite {
            return Err(Divergence {
                block: (task.bi, task.bj),
                entry: (t.row, t.col),
                iteration,
            });
        }
    }
    Ok(())
}

/// Element-wise SGD over the block's entries in row-major local order.
pub fn sgd_block(task: &mut BlockTask<'_>) -> Result<BlockStats, Divergence> {
    if task.triples.is_empty() {
        return Ok(BlockStats::idle(task.inner));
    }
    let entries = task.triples.len();
    let sse_before = task.view().sse();
    match task.inner {
        InnerIters::Fixed(g) => {
            for it in 0..g {
                sgd_sweep(task, it)?;
            }
            Ok(BlockStats {
                sse_before,
                sse_after: task.view().sse(),
                entries,
                iterations: g,
                hit_cap: false,
            })
        }
        InnerIters::UntilConverged { tol, cap } => {
            let block_rmse = |sse: f64| (sse / entries as f64).sqrt();
            let mut sse = sse_before;
            let mut iterations = 0;
            let mut hit_cap = true;
            while iterations < cap {
                sgd_sweep(task, iterations)?;
                iterations += 1;
                let next = task.view().sse();
                let improvement = block_rmse(sse) - block_rmse(next);
                sse = next;
                if improvement < tol {
                    hit_cap = false;
                    break;
                }
            }
            Ok(BlockStats {
                sse_before,
                sse_after: sse,
                entries,
                iterations,
                hit_cap,
            })
        }
    }
}

/// Gradient of [`block_objective`] with respect to the block's `U` and `V` slices.
///
/// Unobserved cells contribute nothing; the regularization term covers
/// every row of both slices.
pub fn block_gradient(view: &BlockView<'_>, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let k = view.k;
    let mut gu: Vec<f64> = view.u.iter().map(|x| beta * x).collect();
    let mut gv: Vec<f64> = view.v.iter().map(|x| beta * x).collect();
    for (t, e) in view.triples.iter().zip(view.residuals()) {
        let u = &view.u[t.row * k..(t.row + 1) * k];
        let v = &view.v[t.col * k..(t.col + 1) * k];
        for g in 0..k {
            gu[t.row * k + g] -= 2.0 * e * v[g];
            gv[t.col * k + g] -= 2.0 * e * u[g];
        }
    }
    (gu, gv)
}

/// Full-batch gradient steps on the block: every column of `U_i` and
/// `V_j` is moved along `2 E V - beta U` (resp. `2 E^T U - beta V`)
/// computed from the pre-update residuals.
pub fn batch_gradient_block(task: &mut BlockTask<'_>) -> Result<BlockStats, Divergence> {
    let entries = task.triples.len();
    let sse_before = task.view().sse();
    let sweeps = match task.inner {
        InnerIters::Fixed(g) => g,
        InnerIters::UntilConverged { cap, .. } => cap,
    };
    let mut sse = sse_before;
    let mut iterations = 0;
    let mut hit_cap = matches!(task.inner, InnerIters::UntilConverged { .. });
    while iterations < sweeps {
        let (gu, gv) = block_gradient(&task.view(), task.beta);
        let alpha = task.alpha;
        for (x, g) in task.u.iter_mut().zip(&gu) {
            *x -= alpha * g;
        }
        for (x, g) in task.v.iter_mut().zip(&gv) {
            *x -= alpha * g;
        }
        if !task.u.iter().chain(task.v.iter()).all(|x| x.is_finite()) {
            let entry = task.triples.first().map_or((0, 0), |t| (t.row, t.col));
            return Err(task.divergence(entry, iterations));
        }
        iterations += 1;
        let next = task.view().sse();
        if let InnerIters::UntilConverged { tol, .. } = task.inner {
            let n = entries.max(1) as f64;
            if (sse / n).sqrt() - (next / n).sqrt() < tol {
                sse = next;
                hit_cap = false;
                break;
            }
        }
        sse = next;
    }
    Ok(BlockStats {
        sse_before,
        sse_after: sse,
        entries,
        iterations,
        hit_cap,
    })
}

/// `sum_observed e^2 + beta/2 * (|U_i|^2 + |V_j|^2)`.
pub fn block_objective(view: &BlockView<'_>, beta: f64) -> f64 {
    let norm2 = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>();
    view.sse() + 0.5 * beta * (norm2(view.u) + norm2(view.v))
}
