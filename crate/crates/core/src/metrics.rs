//! RMSE accumulation shared by all variants.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::model::{FactorModel, RatingsDataset};

/// Entry count above which squared errors are summed with compensation.
pub const COMPENSATION_THRESHOLD: usize = 1_000_000;

/// Mergeable running sum of squared errors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RmseAccumulator {
    sse: f64,
    /// Neumaier compensation term; stays zero in plain mode.
    comp: f64,
    count: usize,
    compensated: bool,
}

impl RmseAccumulator {
    pub fn new(compensated: bool) -> Self {
        Self {
            compensated,
            ..Self::default()
        }
    }

    /// Picks the summation mode for a dataset of `total` entries.
    pub fn for_len(total: usize) -> Self {
        Self::new(total > COMPENSATION_THRESHOLD)
    }

    /// Builds an accumulator from a precomputed SSE.
    pub fn from_parts(sse: f64, count: usize) -> Self {
        Self {
            sse,
            count,
            ..Self::default()
        }
    }

    #[inline]
    pub fn push(&mut self, err: f64) {
        self.add_sse(err * err);
        self.count += 1;
    }

    #[inline]
    fn add_sse(&mut self, x: f64) {
        if self.compensated {
            let t = self.sse + x;
            if self.sse.abs() >= x.abs() {
                self.comp += (self.sse - t) + x;
            } else {
                self.comp += (x - t) + self.sse;
            }
            self.sse = t;
        } else {
            self.sse += x;
        }
    }

    pub fn merge(self, other: Self) -> Self {
        let mut out = Self {
            compensated: self.compensated || other.compensated,
            ..self
        };
        out.add_sse(other.sse);
        out.comp += other.comp;
        out.count += other.count;
        out
    }

    pub fn sse(&self) -> f64 {
        self.sse + self.comp
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn rmse(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok((self.sse() / self.count as f64).sqrt())
    }
}

impl std::iter::Sum for RmseAccumulator {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Self::merge)
    }
}

fn check_dims(model: &FactorModel, d: &RatingsDataset) -> Result<()> {
    if d.n() > model.n || d.m() > model.m {
        return Err(Error::DimensionMismatch(format!(
            "dataset is {}x{} but model covers {}x{}",
            d.n(),
            d.m(),
            model.n,
            model.m
        )));
    }
    Ok(())
}

/// Accumulates squared prediction errors over `d` in entry order.
pub fn accumulate(model: &FactorModel, d: &RatingsDataset) -> Result<RmseAccumulator> {
    check_dims(model, d)?;
    let mut acc = RmseAccumulator::for_len(d.len());
    for t in d.entries() {
        acc.push(t.value - model.predict(t.row, t.col));
    }
    Ok(acc)
}

pub fn rmse(model: &FactorModel, d: &RatingsDataset) -> Result<f64> {
    accumulate(model, d)?.rmse()
}

/// Held-out RMSE plus how many entries fell back to the training mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub rmse: f64,
    pub unknown: usize,
}

/// RMSE on `test` where rows or columns never observed in `train` are
/// predicted with the global training mean.
pub fn evaluate_holdout(
    model: &FactorModel,
    train: &RatingsDataset,
    test: &RatingsDataset,
) -> Result<Evaluation> {
    check_dims(model, test)?;
    let mean = train.mean_value().unwrap_or(0.0);
    let rows: HashSet<usize> = train.entries().iter().map(|t| t.row).collect();
    let cols: HashSet<usize> = train.entries().iter().map(|t| t.col).collect();
    let mut acc = RmseAccumulator::for_len(test.len());
    let mut unknown = 0;
    for t in test.entries() {
        let prediction = if rows.contains(&t.row) && cols.contains(&t.col) {
            model.predict(t.row, t.col)
        } else {
            unknown += 1;
            mean
        };
        acc.push(t.value - prediction);
    }
    Ok(Evaluation {
        rmse: acc.rmse()?,
        unknown,
    })
}
