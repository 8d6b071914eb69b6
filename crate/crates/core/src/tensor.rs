//! Dense 3rd-order tensors and matrices.
//!
//! Every tensor is indexed `(time, key, loc)` and stored time-major, so the
//! flat offset of `(t, u, v)` is `(t * keys + u) * locs + v`. Appending a
//! time slice is therefore a contiguous append.
//!
//! Unfolding along a mode puts that mode on the rows. The remaining two modes
//! are laid out along the columns in the fixed order `time < key < loc`,
//! row-major over that order:
//!
//! | mode | rows  | column of `(t, u, v)` |
//! |------|-------|-----------------------|
//! | time | len   | `u * locs + v`        |
//! | key  | keys  | `t * locs + v`        |
//! | loc  | locs  | `t * keys + u`        |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three tensor modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Time,
    Key,
    Loc,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Time, Mode::Key, Mode::Loc];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Time => "time",
            Mode::Key => "key",
            Mode::Loc => "loc",
        }
    }
}

/// Which index of the factor matrix is summed against the tensor mode in
/// [`Tensor3::mode_product`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contract {
    /// `M` is `(old × new)`: `out[.., c, ..] = Σ_r M[r, c] · T[.., r, ..]`.
    /// This is the latent→observed expansion used by the trend factors,
    /// where `W ∈ ℝ^{d × k}` maps a `d`-sized mode to `k`.
    Rows,
    /// `M` is `(new × old)`: `out[.., r, ..] = Σ_c M[r, c] · T[.., c, ..]`.
    Cols,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "matmul_t {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Matrix::from_fn(self.rows, other.rows, |r, c| {
            dot(self.row(r), other.row(c))
        }))
    }

    /// Gram matrix `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..self.cols {
                let a = row[i];
                if a == 0.0 {
                    continue;
                }
                for j in 0..self.cols {
                    out.data[i * self.cols + j] += a * row[j];
                }
            }
        }
        out
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// Column-wise Kronecker (Khatri-Rao) product. Row `i * other.rows + j`
    /// holds `self[i, :] ⊙ other[j, :]`.
    pub fn khatri_rao(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "khatri-rao needs equal column counts, got {} and {}",
                self.cols, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows * other.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..other.rows {
                let dst = out.row_mut(i * other.rows + j);
                for ((d, a), b) in dst.iter_mut().zip(self.row(i)).zip(other.row(j)) {
                    *d = a * b;
                }
            }
        }
        Ok(out)
    }

    /// Moore-Penrose pseudoinverse via SVD.
    pub fn pinv(&self) -> Matrix {
        if self.rows == 0 || self.cols == 0 {
            return Matrix::zeros(self.cols, self.rows);
        }
        let m = nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        let svd = m.svd(true, true);
        let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let tol = f64::EPSILON * self.rows.max(self.cols) as f64 * max_sv;
        let inv = svd
            .pseudo_inverse(tol.max(f64::MIN_POSITIVE))
            .unwrap_or_else(|_| nalgebra::DMatrix::zeros(self.cols, self.rows));
        Matrix::from_fn(self.cols, self.rows, |r, c| inv[(r, c)])
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|x| **x != 0.0).count()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "shape {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tensor dimensions `(time length, keyword count, location count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub len: usize,
    pub keys: usize,
    pub locs: usize,
}

impl Dims {
    pub fn new(len: usize, keys: usize, locs: usize) -> Self {
        Self { len, keys, locs }
    }

    pub fn size(&self, mode: Mode) -> usize {
        match mode {
            Mode::Time => self.len,
            Mode::Key => self.keys,
            Mode::Loc => self.locs,
        }
    }

    pub fn with(mut self, mode: Mode, size: usize) -> Self {
        match mode {
            Mode::Time => self.len = size,
            Mode::Key => self.keys = size,
            Mode::Loc => self.locs = size,
        }
        self
    }

    pub fn count(&self) -> usize {
        self.len * self.keys * self.locs
    }

    /// Size of one time slice.
    pub fn slice_len(&self) -> usize {
        self.keys * self.locs
    }
}

/// Dense time-major 3rd-order tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.count()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if dims.len == 0 || dims.keys == 0 || dims.locs == 0 {
            return Err(Error::Dimension(format!(
                "tensor dims must be ≥ 1, got {dims:?}"
            )));
        }
        if data.len() != dims.count() {
            return Err(Error::Dimension(format!(
                "tensor {dims:?} needs {} entries, got {}",
                dims.count(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.count());
        for t in 0..dims.len {
            for u in 0..dims.keys {
                for v in 0..dims.locs {
                    data.push(f(t, u, v));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, t: usize, u: usize, v: usize) -> usize {
        (t * self.dims.keys + u) * self.dims.locs + v
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, v: usize) -> f64 {
        self.data[self.offset(t, u, v)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, u: usize, v: usize, value: f64) {
        let i = self.offset(t, u, v);
        self.data[i] = value;
    }

    /// Time slice `t` as a `keys × locs` row-major slice.
    pub fn slice(&self, t: usize) -> &[f64] {
        let n = self.dims.slice_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn slice_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.dims.slice_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Appends one `keys × locs` time slice.
    pub fn push_slice(&mut self, slice: &[f64]) -> Result<()> {
        if slice.len() != self.dims.slice_len() {
            return Err(Error::Dimension(format!(
                "slice of {} entries, expected {}",
                slice.len(),
                self.dims.slice_len()
            )));
        }
        self.data.extend_from_slice(slice);
        self.dims.len += 1;
        Ok(())
    }

    /// Time range `[start, end)` as an owned tensor. This is the only way
    /// the stream engine reads a window, so nothing past `end` is visible.
    pub fn time_range(&self, start: usize, end: usize) -> Result<Tensor3> {
        if start >= end || end > self.dims.len {
            return Err(Error::Dimension(format!(
                "time range {start}..{end} outside 0..{}",
                self.dims.len
            )));
        }
        let n = self.dims.slice_len();
        Ok(Tensor3 {
            dims: self.dims.with(Mode::Time, end - start),
            data: self.data[start * n..end * n].to_vec(),
        })
    }

    /// Series of fiber `(u, v)` along time.
    pub fn fiber(&self, u: usize, v: usize) -> Vec<f64> {
        (0..self.dims.len).map(|t| self.get(t, u, v)).collect()
    }

    pub fn set_fiber(&mut self, u: usize, v: usize, series: &[f64]) {
        for (t, x) in series.iter().enumerate() {
            self.set(t, u, v, *x);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|x| **x != 0.0).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|x| f(*x)).collect(),
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<()> {
        self.check_dims(other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Tensor3) -> Result<()> {
        self.check_dims(other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a -= b);
        Ok(())
    }

    fn zip_with(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        self.check_dims(other)?;
        Ok(Tensor3 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    fn check_dims(&self, other: &Tensor3) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "tensor dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Matricizes along `mode`; see the module docs for the column order.
    pub fn unfold(&self, mode: Mode) -> Matrix {
        let Dims { len, keys, locs } = self.dims;
        match mode {
            // Time-major layout makes the time unfolding a plain reshape.
            Mode::Time => Matrix {
                rows: len,
                cols: keys * locs,
                data: self.data.clone(),
            },
            Mode::Key => {
                let mut m = Matrix::zeros(keys, len * locs);
                for t in 0..len {
                    for u in 0..keys {
                        let src = &self.data[(t * keys + u) * locs..(t * keys + u + 1) * locs];
                        m.data[u * len * locs + t * locs..u * len * locs + (t + 1) * locs]
                            .copy_from_slice(src);
                    }
                }
                m
            }
            Mode::Loc => {
                let mut m = Matrix::zeros(locs, len * keys);
                for t in 0..len {
                    for u in 0..keys {
                        for v in 0..locs {
                            m.data[v * len * keys + t * keys + u] = self.get(t, u, v);
                        }
                    }
                }
                m
            }
        }
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn fold(m: &Matrix, mode: Mode, dims: Dims) -> Result<Tensor3> {
        let rows = dims.size(mode);
        if m.rows != rows || m.rows * m.cols != dims.count() {
            return Err(Error::Dimension(format!(
                "cannot fold {}x{} matrix along {} into {dims:?}",
                m.rows,
                m.cols,
                mode.name()
            )));
        }
        let Dims { len, keys, locs } = dims;
        let tensor = match mode {
            Mode::Time => Tensor3 {
                dims,
                data: m.data.clone(),
            },
            Mode::Key => Tensor3::from_fn(dims, |t, u, v| m.data[u * len * locs + t * locs + v]),
            Mode::Loc => Tensor3::from_fn(dims, |t, u, v| m.data[v * len * keys + t * keys + u]),
        };
        Ok(tensor)
    }

    /// Mode-`mode` product with `m`, contracting the tensor mode against the
    /// matrix index selected by `contract`.
    pub fn mode_product(&self, m: &Matrix, mode: Mode, contract: Contract) -> Result<Tensor3> {
        let (old, new) = match contract {
            Contract::Rows => (m.rows, m.cols),
            Contract::Cols => (m.cols, m.rows),
        };
        if old != self.dims.size(mode) {
            return Err(Error::Dimension(format!(
                "mode product along {}: tensor size {} vs matrix {}x{}",
                mode.name(),
                self.dims.size(mode),
                m.rows,
                m.cols
            )));
        }
        // Normalise to an (old × new) coefficient matrix.
        let coef = match contract {
            Contract::Rows => m.clone(),
            Contract::Cols => m.transpose(),
        };
        let out_dims = self.dims.with(mode, new);
        let Dims { len, keys, locs } = self.dims;
        let mut out = Tensor3::zeros(out_dims);
        match mode {
            Mode::Time => {
                let n = keys * locs;
                for t in 0..len {
                    let src = self.slice(t);
                    for c in 0..new {
                        let w = coef[(t, c)];
                        if w == 0.0 {
                            continue;
                        }
                        let dst = &mut out.data[c * n..(c + 1) * n];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
            Mode::Key => {
                for t in 0..len {
                    for u in 0..keys {
                        let src = &self.data[(t * keys + u) * locs..(t * keys + u + 1) * locs];
                        for c in 0..new {
                            let w = coef[(u, c)];
                            if w == 0.0 {
                                continue;
                            }
                            let base = (t * new + c) * locs;
                            for (d, s) in out.data[base..base + locs].iter_mut().zip(src) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
            Mode::Loc => {
                for t in 0..len {
                    for u in 0..keys {
                        let src = &self.data[(t * keys + u) * locs..(t * keys + u + 1) * locs];
                        let base = (t * keys + u) * new;
                        let dst = &mut out.data[base..base + new];
                        for (v, s) in src.iter().enumerate() {
                            if *s == 0.0 {
                                continue;
                            }
                            for (d, w) in dst.iter_mut().zip(coef.row(v)) {
                                *d += s * w;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
