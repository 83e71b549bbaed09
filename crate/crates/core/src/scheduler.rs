//! Rotating conflict-free batch schedule over the block grid.
//!
//! Step `s`, batch `t` assigns to every block-column `j` the block-row
//! `(j + s + t) mod I`. For square grids batch 0 of step 0 is the main
//! diagonal and each following batch moves every column's active block one
//! block-row down, wrapping around. Blocks in one batch never share a
//! block-row or block-column, so their kernels touch disjoint factor slices.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

/// Blocks that may be factorized concurrently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub blocks: Vec<(usize, usize)>,
}

/// The ordered batches of one outer step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    pub batches: Vec<Batch>,
}

pub fn plan_step(grid_i: usize, grid_j: usize, step: usize) -> Result<StepPlan> {
    if grid_i == 0 || grid_j == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot schedule a {grid_i}x{grid_j} grid"
        )));
    }
    let mut batches = Vec::with_capacity(grid_i);
    for t in 0..grid_i {
        let rotated = (0..grid_j).map(|j| ((j + step % grid_i + t) % grid_i, j));
        if grid_j <= grid_i {
            batches.push(Batch {
                blocks: rotated.collect(),
            });
            continue;
        }
        // More columns than rows: block-rows repeat, split first-fit.
        let mut split: Vec<(HashSet<usize>, Batch)> = Vec::new();
        for (bi, bj) in rotated {
            match split.iter_mut().find(|(rows, _)| !rows.contains(&bi)) {
                Some((rows, batch)) => {
                    rows.insert(bi);
                    batch.blocks.push((bi, bj));
                }
                None => split.push((HashSet::from([bi]), Batch { blocks: vec![(bi, bj)] })),
            }
        }
        batches.extend(split.into_iter().map(|(_, b)| b));
    }
    Ok(StepPlan { batches })
}

/// Checks per-batch row/column distinctness and exact cover of the grid.
pub fn validate_plan(plan: &StepPlan, grid_i: usize, grid_j: usize) -> Result<()> {
    let mut seen = HashSet::new();
    for (idx, batch) in plan.batches.iter().enumerate() {
        let mut rows = HashSet::new();
        let mut cols = HashSet::new();
        for &(bi, bj) in &batch.blocks {
            if bi >= grid_i || bj >= grid_j {
                return Err(Error::InvalidPlan(format!(
                    "batch {idx}: block ({bi},{bj}) outside the {grid_i}x{grid_j} grid"
                )));
            }
            if !rows.insert(bi) {
                return Err(Error::InvalidPlan(format!(
                    "batch {idx}: block-row {bi} appears twice at ({bi},{bj})"
                )));
            }
            if !cols.insert(bj) {
                return Err(Error::InvalidPlan(format!(
                    "batch {idx}: block-column {bj} appears twice at ({bi},{bj})"
                )));
            }
            if !seen.insert((bi, bj)) {
                return Err(Error::InvalidPlan(format!(
                    "batch {idx}: block ({bi},{bj}) already scheduled in this step"
                )));
            }
        }
    }
    if seen.len() != grid_i * grid_j {
        let missing = (0..grid_i)
            .flat_map(|bi| (0..grid_j).map(move |bj| (bi, bj)))
            .find(|c| !seen.contains(c))
            .expect("a block is missing");
        return Err(Error::InvalidPlan(format!(
            "block ({},{}) is never scheduled",
            missing.0, missing.1
        )));
    }
    Ok(())
}

impl fmt::Display for Batch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (idx, (bi, bj)) in self.blocks.iter().enumerate() {
            if idx > 0 {
                f.write_str(" ")?;
            }
            write!(f, "({bi},{bj})")?;
        }
        Ok(())
    }
}

/// One batch per line.
impl fmt::Display for StepPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for batch in &self.batches {
            writeln!(f, "{batch}")?;
        }
        Ok(())
    }
}
