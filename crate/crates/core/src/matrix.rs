//! Dense and masked matrices with the elementwise operators used throughout
//! the estimators.
//!
//! Indexing is 0-based everywhere. Values are stored row-major and are
//! guaranteed finite by every public constructor, so numeric kernels never
//! see NaN or infinity. Missingness is carried by an explicit boolean mask
//! rather than by sentinel values.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Finite real matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_shape(rows, cols)?;
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: k / cols, col: k % cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: (i, r.len()),
                    right: (0, ncols),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(nrows, ncols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        check_shape(rows, cols)?;
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec(rows, cols, data)
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Result<Self> {
        Self::from_vec(rows, cols, vec![value; rows * cols])
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, T::zero())
    }

    /// Column vector from a slice.
    pub fn column_vector(values: &[T]) -> Result<Self> {
        Self::from_vec(values.len(), 1, values.to_vec())
    }

    /// Wrap data the caller has already produced from finite inputs.
    ///
    /// Still rejects non-finite values; only the shape check is relaxed to a
    /// debug assertion.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        debug_assert_eq!(data.len(), rows * cols);
        Self::from_vec(rows, cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        self.data[i * self.cols + j]
    }

    /// Row-major view of all entries.
    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.data[i * self.cols + j]);
            }
        }
        Self { rows: self.cols, cols: self.rows, data }
    }

    /// Elementwise map; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl FnMut(T) -> T) -> Result<Self> {
        Self::from_vec(self.rows, self.cols, self.data.iter().copied().map(f).collect())
    }

    /// Elementwise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Self, op: &'static str, mut f: impl FnMut(T, T) -> T) -> Result<Self> {
        self.require_same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, factor: T) -> Result<Self> {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let prod = self.to_faer() * other.to_faer();
        Self::from_faer(prod.as_ref())
    }

    /// Sub-matrix keeping `rows` × `cols`, in the order given.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        for &i in rows {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange { index: i, len: self.rows });
            }
        }
        for &j in cols {
            if j >= self.cols {
                return Err(Error::IndexOutOfRange { index: j, len: self.cols });
            }
        }
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            let r = self.row(i);
            data.extend(cols.iter().map(|&j| r[j]));
        }
        Self::from_vec(rows.len(), cols.len(), data)
    }

    pub fn column_mean(&self, j: usize) -> Result<T> {
        if j >= self.cols {
            return Err(Error::IndexOutOfRange { index: j, len: self.cols });
        }
        let mut acc = T::zero();
        for i in 0..self.rows {
            acc = acc + self.data[i * self.cols + j];
        }
        Ok(acc / T::from_count(self.rows))
    }

    pub fn mean(&self) -> T {
        let sum = self.data.iter().fold(T::zero(), |acc, &v| acc + v);
        sum / T::from_count(self.data.len())
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// True when every entry is exactly 0 or 1.
    pub fn check_binary(&self) -> Result<()> {
        for (k, &v) in self.data.iter().enumerate() {
            if v != T::zero() && v != T::one() {
                return Err(Error::NotBinary {
                    row: k / self.cols,
                    col: k % self.cols,
                    value: v.as_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn require_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn to_faer(&self) -> faer::Mat<T> {
        faer::Mat::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j])
    }

    pub fn from_faer(m: faer::MatRef<'_, T>) -> Result<Self> {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// Converts between scalar types, e.g. to run an `f32` pipeline on `f64` data.
    pub fn cast<U: Scalar>(&self) -> Result<DenseMatrix<U>> {
        DenseMatrix::from_vec(self.rows, self.cols, self.data.iter().map(|v| U::lit(v.as_f64())).collect())
    }
}

impl<T: fmt::Debug> fmt::Debug for DenseMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let shown: Vec<String> = row.iter().take(8).map(|v| format!("{v:?}")).collect();
            writeln!(f, "  {}{}", shown.join(", "), if self.cols > 8 { ", ..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

fn check_shape(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyShape { rows, cols });
    }
    Ok(())
}

/// Boolean observation pattern; `true` marks an observed cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn from_vec(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        check_shape(rows, cols)?;
        if bits.len() != rows * cols {
            return Err(Error::Shape {
                op: "mask",
                left: (rows, cols),
                right: (bits.len(), 1),
            });
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_shape(rows, cols)?;
        let bits = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        Ok(Self { rows, cols, bits })
    }

    pub fn full(rows: usize, cols: usize) -> Result<Self> {
        Self::from_vec(rows, cols, vec![true; rows * cols])
    }

    /// Observed where the binary matrix equals `arm`.
    pub fn from_binary<T: Scalar>(a: &DenseMatrix<T>, arm: bool) -> Result<Self> {
        a.check_binary()?;
        let target = if arm { T::one() } else { T::zero() };
        Self::from_vec(a.rows(), a.cols(), a.as_slice().iter().map(|&v| v == target).collect())
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        self.bits[i * self.cols + j]
    }

    pub fn count_observed(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }
}

/// Matrix whose unobserved cells are unreadable.
///
/// Unobserved cells are stored as zero internally; the only ways to read them
/// are [`MaskedMatrix::get`], which returns `None`, and
/// [`MaskedMatrix::fill_missing`], which substitutes an explicit value.
#[derive(Clone, PartialEq)]
pub struct MaskedMatrix<T> {
    values: DenseMatrix<T>,
    mask: Mask,
}

impl<T: fmt::Debug> fmt::Debug for MaskedMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaskedMatrix")
            .field("missing", &self.mask.bits.iter().filter(|&&b| !b).count())
            .field("values", &self.values)
            .finish()
    }
}

impl<T: Scalar> MaskedMatrix<T> {
    /// `u ⊗ f`: keeps `u` where `f` is true and marks the rest missing.
    pub fn new(u: &DenseMatrix<T>, f: &Mask) -> Result<Self> {
        if u.shape() != f.shape() {
            return Err(Error::Shape {
                op: "mask_apply",
                left: u.shape(),
                right: f.shape(),
            });
        }
        let data = u
            .as_slice()
            .iter()
            .zip(f.as_slice())
            .map(|(&v, &obs)| if obs { v } else { T::zero() })
            .collect();
        Ok(Self {
            values: DenseMatrix::from_parts(u.rows(), u.cols(), data)?,
            mask: f.clone(),
        })
    }

    /// Fully observed wrapper.
    pub fn observed(u: &DenseMatrix<T>) -> Self {
        Self {
            values: u.clone(),
            mask: Mask::full(u.rows(), u.cols()).expect("dense matrices are never empty"),
        }
    }

    /// Builds a masked matrix from per-cell options (`None` = missing).
    pub fn from_options(rows: usize, cols: usize, cells: &[Option<T>]) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::Shape {
                op: "from_options",
                left: (rows, cols),
                right: (cells.len(), 1),
            });
        }
        let values = DenseMatrix::from_vec(rows, cols, cells.iter().map(|c| c.unwrap_or_else(T::zero)).collect())?;
        let mask = Mask::from_vec(rows, cols, cells.iter().map(Option::is_some).collect())?;
        Ok(Self { values, mask })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.mask.get(i, j).then(|| self.values.get(i, j))
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.get(i, j)
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.as_slice().iter().all(|&b| b)
    }

    /// Missing cells in row-major order.
    pub fn missing_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols();
        self.mask
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &b)| !b)
            .map(move |(k, _)| (k / cols, k % cols))
    }

    /// Dense copy with every unobserved cell set to `value`.
    pub fn fill_missing(&self, value: T) -> DenseMatrix<T> {
        if value == T::zero() {
            return self.values.clone();
        }
        let data = self
            .values
            .as_slice()
            .iter()
            .zip(self.mask.as_slice())
            .map(|(&v, &obs)| if obs { v } else { value })
            .collect();
        DenseMatrix::from_parts(self.rows(), self.cols(), data).expect("finite fill value")
    }

    /// Marks every cell of `rows` × `cols` as missing.
    pub fn mask_cells(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut out = self.clone();
        let c = self.cols();
        for &i in rows {
            for &j in cols {
                out.mask.bits[i * c + j] = false;
                out.values.data[i * c + j] = T::zero();
            }
        }
        out
    }

    /// Observed values of the rows × cols sub-block. Every selected cell must be
    /// observed.
    pub(crate) fn observed_block(&self, rows: &[usize], cols: &[usize]) -> Result<DenseMatrix<T>> {
        for &i in rows {
            for &j in cols {
                if !self.mask.get(i, j) {
                    return Err(Error::InsufficientData(format!("cell ({i}, {j}) is not observed")));
                }
            }
        }
        self.values.select(rows, cols)
    }
}

/// `u ⊗ f`.
pub fn mask_apply<T: Scalar>(u: &DenseMatrix<T>, f: &Mask) -> Result<MaskedMatrix<T>> {
    MaskedMatrix::new(u, f)
}

/// Observed cells copied, unobserved cells set to `value`.
pub fn fill_missing<T: Scalar>(s: &MaskedMatrix<T>, value: T) -> DenseMatrix<T> {
    s.fill_missing(value)
}

/// Elementwise product `a ⊙ b`.
pub fn hadamard<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    a.zip_map(b, "hadamard", |x, y| x * y)
}

/// Elementwise quotient `a ⊘ b`; any zero divisor is an error naming the cell.
pub fn hadamard_div<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    a.require_same_shape(b, "hadamard_div")?;
    if let Some(k) = b.as_slice().iter().position(|v| v.is_zero()) {
        return Err(Error::DivisionByZero {
            row: k / b.cols(),
            col: k % b.cols(),
        });
    }
    a.zip_map(b, "hadamard_div", |x, y| x / y)
}

/// Row-wise (transposed column-wise) Khatri-Rao product.
///
/// For `u` of width `a` and `v` of width `b` the output has width `a·b` and
/// `out[i, j] = u[i, j % a] · v[i, j / a]`, so the `u` index varies fastest.
/// This is the 0-based form of the 1-based rule
/// `t[i,j] = u[i, j − a·j̄] · v[i, 1 + j̄]` with `j̄ = ⌊(j − 1)/a⌋`.
pub fn khatri_rao<T: Scalar>(u: &DenseMatrix<T>, v: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if u.rows() != v.rows() {
        return Err(Error::Shape {
            op: "khatri_rao",
            left: u.shape(),
            right: v.shape(),
        });
    }
    let a = u.cols();
    DenseMatrix::from_fn(u.rows(), a * v.cols(), |i, j| u.get(i, j % a) * v.get(i, j / a))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Frobenius,
    /// Largest column 2-norm.
    OneTwo,
    /// Largest row 2-norm.
    TwoInf,
    /// Largest absolute entry.
    Max,
}

pub fn norm<T: Scalar>(u: &DenseMatrix<T>, kind: NormKind) -> T {
    match kind {
        NormKind::Frobenius => u.as_slice().iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt(),
        NormKind::OneTwo => (0..u.cols())
            .map(|j| (0..u.rows()).fold(T::zero(), |acc, i| acc + u.get(i, j) * u.get(i, j)).sqrt())
            .fold(T::zero(), T::max),
        NormKind::TwoInf => (0..u.rows())
            .map(|i| u.row(i).iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt())
            .fold(T::zero(), T::max),
        NormKind::Max => u.as_slice().iter().fold(T::zero(), |acc, &v| acc.max(v.abs())),
    }
}
