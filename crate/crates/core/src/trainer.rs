//! Block-based training: outer steps over the rotating schedule, each
//! block factorized by [`sgd_block`] on a fixed-size worker pool.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};
use crate::kernel::{sgd_block, BlockStats, BlockTask, BlockView, InnerIters, CONVERGE_CAP};
use crate::metrics::{self, RmseAccumulator};
use crate::model::{init_factors, ConvergenceTrace, FactorModel, InnerSchedule, RatingsDataset, TraceStep, TrainConfig};
use crate::partition::{block_dataset, make_grid, BlockGrid, BlockedDataset};
use crate::scheduler::plan_step;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// RMSE improved by less than `delta` in the last step.
    Converged,
    MaxSteps,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: FactorModel,
    pub trace: ConvergenceTrace,
    pub stop_reason: StopReason,
}

impl TrainResult {
    pub fn final_train_rmse(&self) -> f64 {
        self.trace.last_train_rmse()
    }
}

/// Inner sweeps per block for one-based outer `step`.
///
/// `prev_improvement_ratio` is `(rmse[t-2] - rmse[t-1]) / rmse[t-2]`, with
/// `rmse[0]` the initial error; callers pass `1.0` for the first step.
pub fn resolve_inner_iters(schedule: InnerSchedule, step: usize, prev_improvement_ratio: f64) -> InnerIters {
    let step = step.max(1);
    let fixed = match schedule {
        InnerSchedule::Constant(g) => g,
        InnerSchedule::IncreasingEvery { period, cap } => step.div_ceil(period).min(cap),
        InnerSchedule::Decreasing { start } => (start + 1).saturating_sub(step),
        InnerSchedule::AdaptiveDecreasing { start } => {
            let scaled = (start as f64 * prev_improvement_ratio).round();
            if scaled.is_finite() && scaled > 0.0 {
                scaled as usize
            } else {
                1
            }
        }
        InnerSchedule::ConvergeEachBlock { tol } => {
            return InnerIters::UntilConverged {
                tol,
                cap: CONVERGE_CAP,
            }
        }
    };
    InnerIters::Fixed(fixed.max(1))
}

/// Records which blocks ran, and checks that concurrently running kernels
/// never hold overlapping `U` or `V` row ranges.
#[derive(Debug, Default)]
pub struct ExecutionProbe {
    state: Mutex<ProbeState>,
}

#[derive(Debug, Default)]
struct ProbeState {
    active: Vec<(usize, Range<usize>, Range<usize>)>,
    next_lease: usize,
    visits: HashMap<(usize, usize, usize), usize>,
    violations: Vec<String>,
    max_in_flight: usize,
}

fn overlaps(a: &Range<usize>, b: &Range<usize>) -> bool {
    a.start < b.end && b.start < a.end
}

impl ExecutionProbe {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn acquire(&self, step: usize, block: (usize, usize), rows: Range<usize>, cols: Range<usize>) -> usize {
        let mut s = self.state.lock().unwrap();
        if s.active.iter().any(|(_, r, c)| overlaps(r, &rows) || overlaps(c, &cols)) {
            let msg = format!("step {step}: block {block:?} overlaps an in-flight kernel");
            s.violations.push(msg);
        }
        *s.visits.entry((step, block.0, block.1)).or_default() += 1;
        let id = s.next_lease;
        s.next_lease += 1;
        s.active.push((id, rows, cols));
        s.max_in_flight = s.max_in_flight.max(s.active.len());
        id
    }

    fn release(&self, id: usize) {
        self.state.lock().unwrap().active.retain(|(lease, _, _)| *lease != id);
    }

    pub fn violations(&self) -> Vec<String> {
        self.state.lock().unwrap().violations.clone()
    }

    /// How often block `(bi, bj)` ran during one-based `step`.
    pub fn visits(&self, step: usize, bi: usize, bj: usize) -> usize {
        self.state
            .lock()
            .unwrap()
            .visits
            .get(&(step, bi, bj))
            .copied()
            .unwrap_or(0)
    }

    pub fn max_in_flight(&self) -> usize {
        self.state.lock().unwrap().max_in_flight
    }
}

/// Work done in one outer step, as reported by a variant.
pub(crate) struct StepOutcome {
    pub inner_iters: usize,
    pub cap_hits: usize,
}

pub(crate) fn build_pool(workers: usize) -> Result<ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("blockmf-worker-{i}"))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))
}

/// Shared outer loop: step, measure, record, stop early on `delta`.
pub(crate) fn run_outer_loop(
    cfg: &TrainConfig,
    model: &mut FactorModel,
    train: &RatingsDataset,
    test: Option<&RatingsDataset>,
    mut train_rmse: impl FnMut(&FactorModel) -> f64,
    mut step_fn: impl FnMut(usize, InnerIters, &mut FactorModel) -> Result<StepOutcome>,
) -> Result<(ConvergenceTrace, StopReason)> {
    let mut trace = ConvergenceTrace::new(train_rmse(model));
    let mut prev = trace.initial_train_rmse;
    let mut ratio = 1.0;
    for step in 1..=cfg.outer_steps {
        let started = Instant::now();
        let inner = resolve_inner_iters(cfg.inner_schedule, step, ratio);
        let outcome = step_fn(step, inner, model)?;
        let rmse = train_rmse(model);
        let seconds = started.elapsed().as_secs_f64();
        let test_rmse = match test {
            Some(t) if !t.is_empty() => Some(metrics::evaluate_holdout(model, train, t)?.rmse),
            _ => None,
        };
        trace.push(TraceStep {
            step,
            train_rmse: rmse,
            test_rmse,
            seconds,
            inner_iters: outcome.inner_iters,
            cap_hits: outcome.cap_hits,
        });
        log::debug!("step {step}: train rmse {rmse:.6} ({seconds:.3}s)");
        let improvement = prev - rmse;
        ratio = if prev > 0.0 { improvement / prev } else { 0.0 };
        prev = rmse;
        if cfg.early_stopping && improvement < cfg.delta {
            return Ok((trace, StopReason::Converged));
        }
    }
    Ok((trace, StopReason::MaxSteps))
}

/// Splits a row-major factor matrix into per-block row slices.
fn split_rows<'a>(mut data: &'a mut [f64], bounds: &[usize], k: usize) -> Vec<Option<&'a mut [f64]>> {
    let mut out = Vec::with_capacity(bounds.len() - 1);
    for w in bounds.windows(2) {
        let (head, tail) = data.split_at_mut((w[1] - w[0]) * k);
        out.push(Some(head));
        data = tail;
    }
    out
}

/// Block-parallel trainer bound to a worker pool.
pub struct Trainer {
    pool: ThreadPool,
    probe: Option<Arc<ExecutionProbe>>,
}

impl Trainer {
    pub fn new(workers: usize) -> Result<Self> {
        Ok(Self {
            pool: build_pool(workers.max(1))?,
            probe: None,
        })
    }

    pub fn with_probe(mut self, probe: Arc<ExecutionProbe>) -> Self {
        self.probe = Some(probe);
        self
    }

    /// Train RMSE from per-block accumulators merged in block order.
    pub fn blockwise_rmse(&self, model: &FactorModel, blocked: &BlockedDataset) -> f64 {
        blockwise_accumulator(&self.pool, model, blocked).rmse().unwrap_or(0.0)
    }

    pub fn train(
        &self,
        d: &RatingsDataset,
        cfg: &TrainConfig,
        test: Option<&RatingsDataset>,
    ) -> Result<TrainResult> {
        cfg.validate()?;
        let grid = make_grid(d.n(), d.m(), cfg.grid_i, cfg.grid_j)?;
        let blocked = block_dataset(d, &grid)?;
        let mut model = init_factors(d.n(), d.m(), cfg.k, cfg.seed)?;
        let (trace, stop_reason) = run_outer_loop(
            cfg,
            &mut model,
            d,
            test,
            |model| self.blockwise_rmse(model, &blocked),
            |step, inner, model| self.run_step(step, inner, cfg, &grid, &blocked, model),
        )?;
        Ok(TrainResult {
            model,
            trace,
            stop_reason,
        })
    }

    fn run_step(
        &self,
        step: usize,
        inner: InnerIters,
        cfg: &TrainConfig,
        grid: &BlockGrid,
        blocked: &BlockedDataset,
        model: &mut FactorModel,
    ) -> Result<StepOutcome> {
        let plan = plan_step(grid.grid_i(), grid.grid_j(), step - 1)?;
        let k = model.k;
        let mut inner_iters = 0;
        let mut cap_hits = 0;
        for batch in &plan.batches {
            let mut u_blocks = split_rows(&mut model.u, grid.row_bounds(), k);
            let mut v_blocks = split_rows(&mut model.v, grid.col_bounds(), k);
            let mut tasks = Vec::with_capacity(batch.blocks.len());
            for &(bi, bj) in &batch.blocks {
                let u = u_blocks[bi].take().expect("block-row scheduled twice in one batch");
                let v = v_blocks[bj].take().expect("block-column scheduled twice in one batch");
                tasks.push(BlockTask::new(
                    (bi, bj),
                    blocked.block(bi, bj),
                    u,
                    v,
                    k,
                    cfg.alpha,
                    cfg.beta,
                    inner,
                )?);
            }
            let results: Vec<Result<BlockStats, _>> = self.pool.install(|| {
                tasks
                    .into_par_iter()
                    .map(|mut task| {
                        let lease = self.probe.as_ref().map(|p| {
                            p.acquire(step, (task.bi, task.bj), grid.row_range(task.bi), grid.col_range(task.bj))
                        });
                        let stats = sgd_block(&mut task);
                        if let (Some(p), Some(id)) = (&self.probe, lease) {
                            p.release(id);
                        }
                        stats
                    })
                    .collect()
            });
            for stats in results {
                let stats = stats?;
                inner_iters = inner_iters.max(stats.iterations);
                cap_hits += usize::from(stats.hit_cap);
            }
        }
        Ok(StepOutcome { inner_iters, cap_hits })
    }
}

pub(crate) fn blockwise_accumulator(pool: &ThreadPool, model: &FactorModel, blocked: &BlockedDataset) -> RmseAccumulator {
    let grid = blocked.grid();
    let (gi, gj) = (grid.grid_i(), grid.grid_j());
    let total = blocked.total();
    let k = model.k;
    let accs: Vec<RmseAccumulator> = pool.install(|| {
        (0..gi * gj)
            .into_par_iter()
            .map(|idx| {
                let (bi, bj) = (idx / gj, idx % gj);
                let rows = grid.row_range(bi);
                let cols = grid.col_range(bj);
                let view = BlockView {
                    triples: blocked.block(bi, bj),
                    u: &model.u[rows.start * k..rows.end * k],
                    v: &model.v[cols.start * k..cols.end * k],
                    k,
                };
                let mut acc = RmseAccumulator::for_len(total);
                view.accumulate(&mut acc);
                acc
            })
            .collect()
    });
    accs.into_iter().sum()
}

/// Block-based training (one pool per call).
pub fn train_bgmf(d: &RatingsDataset, cfg: &TrainConfig, test: Option<&RatingsDataset>) -> Result<TrainResult> {
    Trainer::new(cfg.workers)?.train(d, cfg, test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub outer: usize,
    pub inner: usize,
    pub final_rmse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub budget: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Row with the lowest final RMSE; ties go to the larger outer count.
    pub fn best(&self) -> Option<&SweepRow> {
        self.rows.iter().min_by(|a, b| {
            a.final_rmse
                .total_cmp(&b.final_rmse)
                .then(b.outer.cmp(&a.outer))
        })
    }

    pub fn to_csv(&self, comment: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(comment) = comment {
            for line in comment.lines() {
                out.push_str(&format!("# {line}\n"));
            }
        }
        out.push_str("outer_steps,inner_iters,final_rmse,seconds\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:?},{:.6}\n", r.outer, r.inner, r.final_rmse, r.seconds));
        }
        out
    }
}

/// Every `(outer, inner)` pair with `outer * inner == budget`, outer descending.
pub fn budget_splits(budget: usize) -> Vec<(usize, usize)> {
    (1..=budget)
        .rev()
        .filter(|outer| budget.is_multiple_of(*outer))
        .map(|outer| (outer, budget / outer))
        .collect()
}

/// Trains once per split with a constant inner schedule and no early stop.
pub fn sweep_budget(
    d: &RatingsDataset,
    cfg: &TrainConfig,
    total_budget: usize,
    splits: &[(usize, usize)],
) -> Result<SweepReport> {
    if let Some(&(o, i)) = splits.iter().find(|(o, i)| o * i != total_budget || *o == 0) {
        return Err(Error::InvalidArgument(format!(
            "split {o}x{i} does not factor the budget {total_budget}"
        )));
    }
    let trainer = Trainer::new(cfg.workers)?;
    let mut rows = Vec::with_capacity(splits.len());
    for &(outer, inner) in splits {
        let run_cfg = TrainConfig {
            outer_steps: outer,
            inner_schedule: InnerSchedule::Constant(inner),
            early_stopping: false,
            ..cfg.clone()
        };
        let result = trainer.train(d, &run_cfg, None)?;
        rows.push(SweepRow {
            outer,
            inner,
            final_rmse: result.final_train_rmse(),
            seconds: result.trace.total_seconds(),
        });
    }
    Ok(SweepReport {
        budget: total_budget,
        rows,
    })
}
