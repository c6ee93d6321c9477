//! Cross-fitted matrix completion over a 2×2 block partition.
//!
//! Each block `R_s × C_k` is estimated by masking it, completing the masked
//! matrix, and copying the completion back onto the block. The estimate on a
//! block therefore never reads that block's own entries.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, MaskedMatrix};
use crate::scalar::Scalar;
use crate::tw::{check_rank, tw_complete, TallFit, TwConfig, WideFit};

/// One of the four cells `R_s × C_k` of a [`BlockPartition`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    /// Row half, 0 or 1.
    pub s: u8,
    /// Column half, 0 or 1.
    pub k: u8,
}

impl Block {
    pub const ALL: [Block; 4] = [
        Block { s: 0, k: 0 },
        Block { s: 0, k: 1 },
        Block { s: 1, k: 0 },
        Block { s: 1, k: 1 },
    ];
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}×C{}", self.s, self.k)
    }
}

/// Serialized form of a partition; the complements are implied.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub r0: Vec<usize>,
    pub c0: Vec<usize>,
}

/// Split of rows into `(R₀, R₁)` and columns into `(C₀, C₁)`, all non-empty.
///
/// Index sets are kept sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPartition {
    n: usize,
    m: usize,
    rows: [Vec<usize>; 2],
    cols: [Vec<usize>; 2],
}

impl BlockPartition {
    /// Contiguous halves: `R₀` is the first `⌊n/2⌋` rows, `C₀` the first `⌊m/2⌋` columns.
    pub fn halves(n: usize, m: usize) -> Result<Self> {
        check_dims(n, m)?;
        Ok(Self {
            n,
            m,
            rows: [(0..n / 2).collect(), (n / 2..n).collect()],
            cols: [(0..m / 2).collect(), (m / 2..m).collect()],
        })
    }

    /// Halves taken after a seeded shuffle of the row and column indices.
    pub fn random(n: usize, m: usize, seed: u64) -> Result<Self> {
        check_dims(n, m)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<usize> = (0..n).collect();
        let mut cols: Vec<usize> = (0..m).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        Self::from_spec(
            n,
            m,
            &PartitionSpec {
                r0: rows[..n / 2].to_vec(),
                c0: cols[..m / 2].to_vec(),
            },
        )
    }

    /// Partition with `R₀ = spec.r0` and `C₀ = spec.c0`.
    pub fn from_spec(n: usize, m: usize, spec: &PartitionSpec) -> Result<Self> {
        check_dims(n, m)?;
        let rows = split_indices(n, &spec.r0, "row")?;
        let cols = split_indices(m, &spec.c0, "column")?;
        Ok(Self { n, m, rows, cols })
    }

    pub fn to_spec(&self) -> PartitionSpec {
        PartitionSpec {
            r0: self.rows[0].clone(),
            c0: self.cols[0].clone(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    /// `R_s`.
    pub fn rows(&self, s: u8) -> &[usize] {
        &self.rows[usize::from(s)]
    }

    /// `C_k`.
    pub fn cols(&self, k: u8) -> &[usize] {
        &self.cols[usize::from(k)]
    }

    /// Half containing row `i`.
    pub fn row_half(&self, i: usize) -> u8 {
        u8::from(self.rows[1].binary_search(&i).is_ok())
    }

    /// Half containing column `j`.
    pub fn col_half(&self, j: usize) -> u8 {
        u8::from(self.cols[1].binary_search(&j).is_ok())
    }

    /// Block containing cell `(i, j)`.
    pub fn block_of(&self, i: usize, j: usize) -> Block {
        Block {
            s: self.row_half(i),
            k: self.col_half(j),
        }
    }

    /// Largest TW rank usable on every masked block.
    pub fn max_rank(&self) -> usize {
        self.rows.iter().chain(&self.cols).map(Vec::len).min().unwrap_or(0)
    }

    fn require_shape(&self, shape: (usize, usize)) -> Result<()> {
        if shape != (self.n, self.m) {
            return Err(Error::Shape {
                op: "partition",
                left: shape,
                right: (self.n, self.m),
            });
        }
        Ok(())
    }
}

fn check_dims(n: usize, m: usize) -> Result<()> {
    if n < 2 || m < 2 {
        return Err(Error::Partition(format!(
            "need at least 2 rows and 2 columns, got {n}x{m}"
        )));
    }
    Ok(())
}

fn split_indices(len: usize, first: &[usize], what: &str) -> Result<[Vec<usize>; 2]> {
    let mut in_first = vec![false; len];
    for &i in first {
        if i >= len {
            return Err(Error::Partition(format!("{what} index {i} out of range for {len}")));
        }
        if in_first[i] {
            return Err(Error::Partition(format!("{what} index {i} listed twice")));
        }
        in_first[i] = true;
    }
    let (a, b): (Vec<usize>, Vec<usize>) = (0..len).partition(|&i| in_first[i]);
    if a.is_empty() || b.is_empty() {
        return Err(Error::Partition(format!("both {what} halves must be non-empty")));
    }
    Ok([a, b])
}

/// `s` with every cell of `block` marked missing.
pub fn mask_block<T: Scalar>(s: &MaskedMatrix<T>, p: &BlockPartition, block: Block) -> Result<MaskedMatrix<T>> {
    p.require_shape(s.shape())?;
    Ok(s.mask_cells(p.rows(block.s), p.cols(block.k)))
}

/// A matrix-completion routine usable inside [`cross_fitted_mc`].
///
/// Implementations must be pure functions of their input; block independence
/// of the cross-fitted output depends on it.
pub trait Completion<T: Scalar> {
    fn complete(&self, s: &MaskedMatrix<T>) -> Result<DenseMatrix<T>>;
}

impl<T: Scalar> Completion<T> for TwConfig {
    fn complete(&self, s: &MaskedMatrix<T>) -> Result<DenseMatrix<T>> {
        tw_complete(s, self)
    }
}

impl<T: Scalar, F> Completion<T> for F
where
    F: Fn(&MaskedMatrix<T>) -> Result<DenseMatrix<T>>,
{
    fn complete(&self, s: &MaskedMatrix<T>) -> Result<DenseMatrix<T>> {
        self(s)
    }
}

/// Generic cross-fitting: block `I` of the output is block `I` of
/// `mc(s with I masked)`.
pub fn cross_fitted_mc<T: Scalar, C: Completion<T> + ?Sized>(
    mc: &C,
    s: &MaskedMatrix<T>,
    p: &BlockPartition,
) -> Result<DenseMatrix<T>> {
    p.require_shape(s.shape())?;
    let (n, m) = s.shape();
    let mut out = vec![T::zero(); n * m];
    for block in Block::ALL {
        let masked = mask_block(s, p, block)?;
        let filled = mc.complete(&masked).map_err(|e| Error::Block {
            block,
            source: Box::new(e),
        })?;
        if filled.shape() != (n, m) {
            return Err(Error::Block {
                block,
                source: Box::new(Error::Shape {
                    op: "completion output",
                    left: filled.shape(),
                    right: (n, m),
                }),
            });
        }
        for &i in p.rows(block.s) {
            for &j in p.cols(block.k) {
                out[i * m + j] = filled.get(i, j);
            }
        }
    }
    DenseMatrix::from_vec(n, m, out)
}

/// Cross-fitted TW on a fully observed matrix.
///
/// Equivalent to `cross_fitted_mc(cfg, observed(s), p)`, but shares work
/// between blocks: the tall block for `R_s × C_k` is `S[:, C_{1−k}]` and the
/// wide block is `S[R_{1−s}, :]`, so two tall and two wide SVDs serve all four
/// blocks. Only the target block of each completion is formed.
pub fn cross_fitted_tw<T: Scalar>(s: &DenseMatrix<T>, p: &BlockPartition, cfg: &TwConfig) -> Result<DenseMatrix<T>> {
    p.require_shape(s.shape())?;
    let (n, m) = s.shape();
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..m).collect();

    let wrap = |block: Block| move |e: Error| Error::Block { block, source: Box::new(e) };
    for block in Block::ALL {
        let max = p.rows(1 - block.s).len().min(p.cols(1 - block.k).len());
        check_rank(cfg.rank, max).map_err(wrap(block))?;
    }

    // Tall fit for column half k is built from the complementary columns.
    let tall_fit = |k: u8| -> Result<TallFit<T>> {
        let tall = s.select(&all_rows, p.cols(1 - k))?.to_faer();
        TallFit::new(tall.as_ref(), cfg.rank).map_err(wrap(Block { s: 0, k }))
    };
    let wide_fit = |h: u8| -> Result<WideFit<T>> {
        let wide = s.select(p.rows(1 - h), &all_cols)?.to_faer();
        WideFit::new(wide.as_ref(), cfg.rank).map_err(wrap(Block { s: h, k: 0 }))
    };
    let ((t0, t1), (w0, w1)) = rayon::join(
        || rayon::join(|| tall_fit(0), || tall_fit(1)),
        || rayon::join(|| wide_fit(0), || wide_fit(1)),
    );
    let talls = [t0?, t1?];
    let wides = [w0?, w1?];

    let mut out = vec![T::zero(); n * m];
    for block in Block::ALL {
        let tall = &talls[usize::from(block.k)];
        let wide = &wides[usize::from(block.s)];
        let left = tall
            .rotated(wide, p.cols(1 - block.k), cfg.orientation)
            .map_err(wrap(block))?;
        let rows = p.rows(block.s);
        let cols = p.cols(block.k);
        let r = cfg.rank;
        let l = faer::Mat::from_fn(rows.len(), r, |a, b| left[(rows[a], b)]);
        let v = faer::Mat::from_fn(cols.len(), r, |a, b| wide.v[(cols[a], b)]);
        let blk = &l * v.transpose();
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out[i * m + j] = blk[(a, b)];
            }
        }
    }
    DenseMatrix::from_vec(n, m, out)
}
