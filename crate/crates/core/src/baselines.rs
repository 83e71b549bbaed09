//! Reference variants: sequential SGD over the whole matrix (CMF) and
//! synchronized row-sharded parallel SGD (CPMF).

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Divergence, Result};
use crate::kernel::{sgd_update, InnerIters};
use crate::metrics;
use crate::model::{init_factors, FactorModel, RatingTriple, RatingsDataset, TrainConfig};
use crate::trainer::{build_pool, run_outer_loop, StepOutcome, TrainResult};

fn train_rmse(model: &FactorModel, d: &RatingsDataset) -> f64 {
    metrics::accumulate(model, d)
        .and_then(|acc| acc.rmse())
        .unwrap_or(0.0)
}

fn sweeps(inner: InnerIters) -> usize {
    match inner {
        InnerIters::Fixed(g) => g,
        // Whole-matrix variants have no block level; one sweep per step.
        InnerIters::UntilConverged { .. } => 1,
    }
}

/// Sequential SGD in row-major global order. Grid and worker settings are ignored.
pub fn train_cmf(d: &RatingsDataset, cfg: &TrainConfig, test: Option<&RatingsDataset>) -> Result<TrainResult> {
    cfg.validate()?;
    let mut model = init_factors(d.n(), d.m(), cfg.k, cfg.seed)?;
    let (trace, stop_reason) = run_outer_loop(
        cfg,
        &mut model,
        d,
        test,
        |model| train_rmse(model, d),
        |_, inner, model| {
            let g = sweeps(inner);
            for it in 0..g {
                sweep(d.entries(), 0, &mut model.u, &mut model.v, model.k, cfg, it)?;
            }
            Ok(StepOutcome {
                inner_iters: g,
                cap_hits: 0,
            })
        },
    )?;
    Ok(TrainResult {
        model,
        trace,
        stop_reason,
    })
}

/// Applies one SGD pass over `entries`; `u` holds rows starting at `row_offset`.
fn sweep(
    entries: &[RatingTriple],
    row_offset: usize,
    u: &mut [f64],
    v: &mut [f64],
    k: usize,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<(), Divergence> {
    for t in entries {
        let r = t.row - row_offset;
        let ur = &mut u[r * k..(r + 1) * k];
        let vr = &mut v[t.col * k..(t.col + 1) * k];
        let (_, finite) = sgd_update(ur, vr, t.value, cfg.alpha, cfg.beta);
        if !finite {
            return Err(Divergence {
                block: (0, 0),
                entry: (t.row, t.col),
                iteration,
            });
        }
    }
    Ok(())
}

/// A contiguous range of rows and the entries that fall in it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub rows: Range<usize>,
    pub entries: Range<usize>,
}

/// Splits `d` into at most `workers` contiguous row shards of near-equal height.
pub fn cpmf_shards(d: &RatingsDataset, workers: usize) -> Vec<Shard> {
    let parts = workers.clamp(1, d.n().max(1));
    let (q, r) = (d.n() / parts, d.n() % parts);
    let entries = d.entries();
    (0..parts)
        .map(|s| {
            let rows = s * q + s.min(r)..(s + 1) * q + (s + 1).min(r);
            let lo = entries.partition_point(|t| t.row < rows.start);
            let hi = entries.partition_point(|t| t.row < rows.end);
            Shard { rows, entries: lo..hi }
        })
        .collect()
}

/// Synchronized parallel SGD.
///
/// Each worker owns a contiguous shard of rows (and therefore its rows of
/// `U`) and sweeps its entries against a private copy of `V`. At the end of
/// the sweep the shards' `V` deltas are summed onto the shared `V`.
pub fn train_cpmf(d: &RatingsDataset, cfg: &TrainConfig, test: Option<&RatingsDataset>) -> Result<TrainResult> {
    cfg.validate()?;
    let pool = build_pool(cfg.workers)?;
    let shards = cpmf_shards(d, cfg.workers);
    let mut model = init_factors(d.n(), d.m(), cfg.k, cfg.seed)?;
    let k = model.k;
    let (trace, stop_reason) = run_outer_loop(
        cfg,
        &mut model,
        d,
        test,
        |model| train_rmse(model, d),
        |_, inner, model| {
            let g = sweeps(inner);
            for it in 0..g {
                let start_v = model.v.clone();
                let mut u_parts = Vec::with_capacity(shards.len());
                let mut rest: &mut [f64] = &mut model.u;
                for shard in &shards {
                    let (head, tail) = rest.split_at_mut(shard.rows.len() * k);
                    u_parts.push(head);
                    rest = tail;
                }
                let locals: Vec<Result<Vec<f64>, Divergence>> = pool.install(|| {
                    u_parts
                        .into_par_iter()
                        .zip(shards.par_iter())
                        .map(|(u, shard)| {
                            let mut v = start_v.clone();
                            sweep(&d.entries()[shard.entries.clone()], shard.rows.start, u, &mut v, k, cfg, it)?;
                            Ok(v)
                        })
                        .collect()
                });
                let mut locals = locals.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter();
                let mut merged = locals.next().unwrap_or(start_v.clone());
                for local in locals {
                    for ((acc, new), old) in merged.iter_mut().zip(&local).zip(&start_v) {
                        *acc += new - old;
                    }
                }
                if let Some(idx) = merged.iter().position(|x| !x.is_finite()) {
                    return Err(Divergence {
                        block: (0, 0),
                        entry: (0, idx / k),
                        iteration: it,
                    }
                    .into());
                }
                model.v = merged;
            }
            Ok(StepOutcome {
                inner_iters: g,
                cap_hits: 0,
            })
        },
    )?;
    Ok(TrainResult {
        model,
        trace,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InnerSchedule;

    fn one_entry() -> RatingsDataset {
        RatingsDataset::new(1, 1, vec![RatingTriple::new(0, 0, 4.0)]).unwrap()
    }

    #[test]
    fn shards_cover_entries_once() {
        let entries = (0..7)
            .flat_map(|r| (0..3).filter(move |c| (r + c) % 2 == 0).map(move |c| RatingTriple::new(r, c, 1.0)))
            .collect();
        let d = RatingsDataset::new(7, 3, entries).unwrap();
        for workers in 1..=9 {
            let shards = cpmf_shards(&d, workers);
            assert_eq!(shards.len(), workers.min(7));
            let mut next_row = 0;
            let mut next_entry = 0;
            for s in &shards {
                assert_eq!(s.rows.start, next_row);
                assert_eq!(s.entries.start, next_entry);
                assert!(d.entries()[s.entries.clone()].iter().all(|t| s.rows.contains(&t.row)));
                next_row = s.rows.end;
                next_entry = s.entries.end;
            }
            assert_eq!((next_row, next_entry), (7, d.len()));
        }
    }

    #[test]
    fn cmf_single_entry_step() {
        let d = one_entry();
        let cfg = TrainConfig {
            k: 1,
            alpha: 0.1,
            beta: 0.0,
            outer_steps: 1,
            ..Default::default()
        };
        // Replace the random start with u = v = 1 by driving the update directly.
        let (mut u, mut v) = (vec![1.0], vec![1.0]);
        sweep(d.entries(), 0, &mut u, &mut v, 1, &cfg, 0).unwrap();
        assert!((u[0] - 1.6).abs() < 1e-15 && (v[0] - 1.6).abs() < 1e-15);
        assert!(train_cmf(&d, &cfg, None).is_ok());
    }

    #[test]
    fn empty_dataset_converges_immediately() {
        let d = RatingsDataset::empty(3, 3);
        let cfg = TrainConfig {
            k: 2,
            workers: 2,
            outer_steps: 5,
            ..Default::default()
        };
        for result in [train_cmf(&d, &cfg, None).unwrap(), train_cpmf(&d, &cfg, None).unwrap()] {
            assert_eq!(result.trace.steps.len(), 1);
            assert_eq!(result.trace.steps[0].train_rmse, 0.0);
            assert_eq!(result.stop_reason, crate::trainer::StopReason::Converged);
        }
    }

    #[test]
    fn cmf_honours_inner_count() {
        let d = one_entry();
        let cfg = TrainConfig {
            k: 1,
            inner_schedule: InnerSchedule::Constant(3),
            outer_steps: 2,
            early_stopping: false,
            ..Default::default()
        };
        let r = train_cmf(&d, &cfg, None).unwrap();
        assert!(r.trace.steps.iter().all(|s| s.inner_iters == 3));
    }
}
