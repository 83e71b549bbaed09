//! Partitioning of the rating matrix into an `I x J` grid of blocks.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{FactorModel, RatingTriple, RatingsDataset};

/// Near-equal split of an `n x m` matrix into `grid_i x grid_j` blocks.
///
/// When the grid does not divide the matrix evenly the leading blocks are
/// one row (column) taller (wider) than the trailing ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    n: usize,
    m: usize,
    row_bounds: Vec<usize>,
    col_bounds: Vec<usize>,
}

fn balanced_bounds(len: usize, parts: usize) -> Vec<usize> {
    let (q, r) = (len / parts, len % parts);
    (0..=parts).map(|b| b * q + b.min(r)).collect()
}

pub fn make_grid(n: usize, m: usize, grid_i: usize, grid_j: usize) -> Result<BlockGrid> {
    if grid_i == 0 || grid_j == 0 || grid_i > n || grid_j > m {
        return Err(Error::InvalidArgument(format!(
            "a {grid_i}x{grid_j} grid does not fit a {n}x{m} matrix"
        )));
    }
    Ok(BlockGrid {
        n,
        m,
        row_bounds: balanced_bounds(n, grid_i),
        col_bounds: balanced_bounds(m, grid_j),
    })
}

/// Position of a global cell inside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockCoord {
    pub bi: usize,
    pub bj: usize,
    pub local_row: usize,
    pub local_col: usize,
}

impl BlockGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn grid_i(&self) -> usize {
        self.row_bounds.len() - 1
    }

    pub fn grid_j(&self) -> usize {
        self.col_bounds.len() - 1
    }

    pub fn row_bounds(&self) -> &[usize] {
        &self.row_bounds
    }

    pub fn col_bounds(&self) -> &[usize] {
        &self.col_bounds
    }

    pub fn row_range(&self, bi: usize) -> std::ops::Range<usize> {
        self.row_bounds[bi]..self.row_bounds[bi + 1]
    }

    pub fn col_range(&self, bj: usize) -> std::ops::Range<usize> {
        self.col_bounds[bj]..self.col_bounds[bj + 1]
    }

    pub fn block_shape(&self, bi: usize, bj: usize) -> (usize, usize) {
        (self.row_range(bi).len(), self.col_range(bj).len())
    }

    pub fn locate(&self, row: usize, col: usize) -> Result<BlockCoord> {
        if row >= self.n || col >= self.m {
            return Err(Error::InvalidArgument(format!(
                "cell ({row}, {col}) outside the {}x{} matrix",
                self.n, self.m
            )));
        }
        let bi = self.row_bounds.partition_point(|&b| b <= row) - 1;
        let bj = self.col_bounds.partition_point(|&b| b <= col) - 1;
        Ok(BlockCoord {
            bi,
            bj,
            local_row: row - self.row_bounds[bi],
            local_col: col - self.col_bounds[bj],
        })
    }

    /// Inverse of [`BlockGrid::locate`].
    pub fn global(&self, c: BlockCoord) -> (usize, usize) {
        (
            self.row_bounds[c.bi] + c.local_row,
            self.col_bounds[c.bj] + c.local_col,
        )
    }
}

/// A rating in block-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTriple {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Ratings routed into their blocks, each block in local row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedDataset {
    grid: BlockGrid,
    /// Indexed by `bi * grid_j + bj`.
    blocks: Vec<Vec<LocalTriple>>,
}

impl BlockedDataset {
    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn block(&self, bi: usize, bj: usize) -> &[LocalTriple] {
        &self.blocks[bi * self.grid.grid_j() + bj]
    }

    pub fn count(&self, bi: usize, bj: usize) -> usize {
        self.block(bi, bj).len()
    }

    pub fn counts(&self) -> Vec<Vec<usize>> {
        (0..self.grid.grid_i())
            .map(|bi| (0..self.grid.grid_j()).map(|bj| self.count(bi, bj)).collect())
            .collect()
    }

    pub fn total(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// Reassembles the global triples, block by block.
    pub fn to_triples(&self) -> Vec<RatingTriple> {
        let gj = self.grid.grid_j();
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(idx, block)| {
                let (bi, bj) = (idx / gj, idx % gj);
                block.iter().map(move |t| {
                    let (row, col) = self.grid.global(BlockCoord {
                        bi,
                        bj,
                        local_row: t.row,
                        local_col: t.col,
                    });
                    RatingTriple::new(row, col, t.value)
                })
            })
            .collect()
    }
}

pub fn block_dataset(d: &RatingsDataset, grid: &BlockGrid) -> Result<BlockedDataset> {
    if d.n() != grid.n() || d.m() != grid.m() {
        return Err(Error::DimensionMismatch(format!(
            "dataset is {}x{} but grid covers {}x{}",
            d.n(),
            d.m(),
            grid.n(),
            grid.m()
        )));
    }
    let mut blocks = vec![Vec::new(); grid.grid_i() * grid.grid_j()];
    for t in d.entries() {
        let c = grid.locate(t.row, t.col)?;
        blocks[c.bi * grid.grid_j() + c.bj].push(LocalTriple {
            row: c.local_row,
            col: c.local_col,
            value: t.value,
        });
    }
    Ok(BlockedDataset {
        grid: grid.clone(),
        blocks,
    })
}

/// Seeded relabelling of rows and columns, applied before partitioning to
/// spread dense regions across blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPermutation {
    /// `rows[original] = permuted`
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl IndexPermutation {
    pub fn random(n: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<usize> = (0..n).collect();
        let mut cols: Vec<usize> = (0..m).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        Self { rows, cols }
    }

    pub fn apply(&self, d: &RatingsDataset) -> Result<RatingsDataset> {
        if d.n() != self.rows.len() || d.m() != self.cols.len() {
            return Err(Error::DimensionMismatch("permutation size differs from dataset".into()));
        }
        let entries = d
            .entries()
            .iter()
            .map(|t| RatingTriple::new(self.rows[t.row], self.cols[t.col], t.value))
            .collect();
        RatingsDataset::new(d.n(), d.m(), entries)
    }

    /// Maps factors trained on permuted data back to original indices.
    pub fn restore(&self, model: &FactorModel) -> Result<FactorModel> {
        if model.n != self.rows.len() || model.m != self.cols.len() {
            return Err(Error::DimensionMismatch("permutation size differs from model".into()));
        }
        let k = model.k;
        let gather = |perm: &[usize], src: &[f64]| -> Vec<f64> {
            perm.iter().flat_map(|&p| src[p * k..(p + 1) * k].iter().copied()).collect()
        };
        FactorModel::from_parts(
            model.n,
            model.m,
            k,
            gather(&self.rows, &model.u),
            gather(&self.cols, &model.v),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord(bi: usize, bj: usize, local_row: usize, local_col: usize) -> BlockCoord {
        BlockCoord {
            bi,
            bj,
            local_row,
            local_col,
        }
    }

    #[test]
    fn even_grid() {
        let g = make_grid(1024, 1024, 32, 32).unwrap();
        for bi in 0..32 {
            for bj in 0..32 {
                assert_eq!(g.block_shape(bi, bj), (32, 32));
            }
        }
    }

    #[test]
    fn identity_grid() {
        let g = make_grid(10, 10, 1, 1).unwrap();
        assert_eq!(g.row_bounds(), &[0, 10]);
        assert_eq!(g.locate(9, 9).unwrap(), coord(0, 0, 9, 9));
    }

    #[test]
    fn uneven_grid_front_loads_remainder() {
        let g = make_grid(10, 10, 3, 3).unwrap();
        assert_eq!(g.row_bounds(), &[0, 4, 7, 10]);
        assert_eq!(g.col_bounds(), &[0, 4, 7, 10]);
        assert_eq!(g.locate(4, 4).unwrap(), coord(1, 1, 0, 0));
    }

    #[test]
    fn locate_examples() {
        let g = make_grid(1024, 1024, 32, 32).unwrap();
        assert_eq!(g.locate(100, 200).unwrap(), coord(3, 6, 4, 8));
        assert!(g.locate(1024, 0).is_err());
    }

    #[test]
    fn grid_errors() {
        assert!(make_grid(4, 4, 5, 1).is_err());
        assert!(make_grid(4, 4, 1, 0).is_err());
    }

    #[test]
    fn locate_round_trip_exhaustive() {
        for (n, m) in [(1, 1), (5, 7), (10, 10), (13, 4)] {
            for gi in 1..=n.min(6) {
                for gj in 1..=m.min(6) {
                    let g = make_grid(n, m, gi, gj).unwrap();
                    for row in 0..n {
                        for col in 0..m {
                            let c = g.locate(row, col).unwrap();
                            assert!(g.row_range(c.bi).contains(&row));
                            assert!(g.col_range(c.bj).contains(&col));
                            assert_eq!(g.global(c), (row, col));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn blocking_routes_to_local_coordinates() {
        let d = RatingsDataset::new(
            10,
            10,
            vec![RatingTriple::new(0, 0, 1.0), RatingTriple::new(9, 9, 2.0)],
        )
        .unwrap();
        let g = make_grid(10, 10, 2, 2).unwrap();
        let b = block_dataset(&d, &g).unwrap();
        assert_eq!(b.block(0, 0), &[LocalTriple { row: 0, col: 0, value: 1.0 }]);
        assert_eq!(b.block(1, 1), &[LocalTriple { row: 4, col: 4, value: 2.0 }]);
        assert_eq!(b.counts(), vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn single_block_keeps_everything() {
        let d = RatingsDataset::new(
            3,
            2,
            vec![RatingTriple::new(2, 1, 1.0), RatingTriple::new(0, 0, 2.0)],
        )
        .unwrap();
        let b = block_dataset(&d, &make_grid(3, 2, 1, 1).unwrap()).unwrap();
        assert_eq!(b.to_triples(), d.entries());
    }

    #[test]
    fn empty_dataset_blocks() {
        let d = RatingsDataset::empty(6, 6);
        let b = block_dataset(&d, &make_grid(6, 6, 3, 2).unwrap()).unwrap();
        assert_eq!(b.total(), 0);
        assert!(b.counts().iter().flatten().all(|&c| c == 0));
    }

    #[test]
    fn dimension_mismatch() {
        let d = RatingsDataset::empty(6, 6);
        assert!(matches!(
            block_dataset(&d, &make_grid(5, 6, 1, 1).unwrap()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn permutation_restores_factors() {
        let d = RatingsDataset::new(
            3,
            2,
            vec![RatingTriple::new(0, 1, 1.0), RatingTriple::new(2, 0, 2.0)],
        )
        .unwrap();
        let perm = IndexPermutation::random(3, 2, 9);
        let pd = perm.apply(&d).unwrap();
        assert_eq!(pd.len(), 2);
        // a model trained on permuted indices predicts the original cells after restore
        let mut model = FactorModel::from_parts(3, 2, 1, vec![0.0; 3], vec![0.0; 2]).unwrap();
        for t in pd.entries() {
            model.u[t.row] = t.value;
            model.v[t.col] = 1.0;
        }
        let restored = perm.restore(&model).unwrap();
        for t in d.entries() {
            assert_eq!(restored.predict(t.row, t.col), t.value);
        }
    }
}
