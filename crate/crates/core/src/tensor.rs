//! Dense real matrices and the handful of kernels the solvers are built from.
//!
//! [`Matrix`] wraps an `ndarray::Array2<f64>` and keeps one invariant: every entry is
//! finite. Operations that could overflow check their output and return
//! [`LpomError::NonFinite`] instead of handing back a poisoned value.

use nalgebra::{Cholesky, DMatrix, Dyn};
use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{LpomError, Result};

/// Relative pivot threshold below which an unregularized Gram matrix is declared singular.
const RANK_TOLERANCE: f64 = 1e-12;

/// Scale applied to `trace(X Xᵀ) / rows(X)` by [`default_ridge`].
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    data: Array2<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries.
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(LpomError::Empty("Matrix::new"));
        }
        if entries.len() != rows * cols {
            return Err(LpomError::DimensionMismatch {
                op: "Matrix::new",
                left: (rows, cols),
                right: (entries.len(), 1),
            });
        }
        let data = Array2::from_shape_vec((rows, cols), entries).expect("length checked against shape");
        Self::from_array(data)
    }

    /// Builds a matrix from nested rows, mostly for tests and small literals.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LpomError::format("matrix literal", "ragged rows"));
        }
        Self::new(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(LpomError::NonFinite(format!("matrix entry {v}")));
        }
        Ok(Matrix { data })
    }

    /// Wraps an array the caller has already checked (or built from finite arithmetic
    /// that cannot overflow).
    pub(crate) fn from_array_unchecked(data: Array2<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Matrix { data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::from_array(Array2::from_shape_fn((rows, cols), |(i, j)| f(i, j)))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: Array2::zeros((rows, cols)),
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::from_array(Array2::from_elem((rows, cols), value))
    }

    pub fn identity(n: usize) -> Self {
        Matrix { data: Array2::eye(n) }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[[row, col]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.data.iter().copied().collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).to_vec()
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        self.check_inner("matmul", self.cols(), other.rows(), other)?;
        Matrix::from_array(self.data.dot(&other.data))
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        self.check_inner("t_matmul", self.rows(), other.rows(), other)?;
        Matrix::from_array(self.data.t().dot(&other.data))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        self.check_inner("matmul_t", self.cols(), other.cols(), other)?;
        Matrix::from_array(self.data.dot(&other.data.t()))
    }

    fn check_inner(&self, op: &'static str, a: usize, b: usize, other: &Matrix) -> Result<()> {
        if a != b {
            return Err(LpomError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn check_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(LpomError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix {
            data: self.data.t().to_owned(),
        }
    }

    /// Element-wise map; errors if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Matrix> {
        Matrix::from_array(self.data.mapv(f))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> Result<Matrix> {
        Matrix::from_array(&self.data * a)
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &Matrix, b: f64) -> Result<Matrix> {
        self.check_same_shape("lin_comb", other)?;
        let mut out = self.data.clone();
        out.zip_mut_with(&other.data, |x, &y| *x = a * *x + b * y);
        Matrix::from_array(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn frobenius_dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same_shape("frobenius_dot", other)?;
        Ok(self.data.iter().zip(other.data.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        Matrix {
            data: self.data.select(Axis(1), idx),
        }
    }

    /// Copies columns `start..end`.
    pub fn column_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            data: self.data.slice(s![.., start..end]).to_owned(),
        }
    }

    /// The first `n` columns.
    pub fn leading_columns(&self, n: usize) -> ArrayView2<'_, f64> {
        self.data.slice(s![.., ..n])
    }

    /// Stacks a constant-one row under the matrix (bias lifting).
    pub fn append_ones_row(&self) -> Matrix {
        let (r, c) = self.shape();
        let mut data = Array2::ones((r + 1, c));
        data.slice_mut(s![..r, ..]).assign(&self.data);
        Matrix { data }
    }
}

/// ‖ |Wᵀ||W| ‖₁, the largest column sum of the entry-wise absolute Gram product.
pub fn norm1_abs_gram(w: &Matrix) -> Result<f64> {
    let g = abs_gram(w)?;
    Ok(g.axis_iter(Axis(1)).map(|c| c.sum()).fold(0.0, f64::max))
}

/// ‖ |Wᵀ||W| ‖_∞, the largest row sum of the entry-wise absolute Gram product.
pub fn norminf_abs_gram(w: &Matrix) -> Result<f64> {
    let g = abs_gram(w)?;
    Ok(g.axis_iter(Axis(0)).map(|r| r.sum()).fold(0.0, f64::max))
}

/// Both norms of |Wᵀ||W| from a single product.
pub fn abs_gram_norms(w: &Matrix) -> Result<(f64, f64)> {
    let g = abs_gram(w)?;
    let n1 = g.axis_iter(Axis(1)).map(|c| c.sum()).fold(0.0, f64::max);
    let ninf = g.axis_iter(Axis(0)).map(|r| r.sum()).fold(0.0, f64::max);
    Ok((n1, ninf))
}

fn abs_gram(w: &Matrix) -> Result<Array2<f64>> {
    if w.is_empty() {
        return Err(LpomError::Empty("abs_gram"));
    }
    let a = w.data.mapv(f64::abs);
    let g = a.t().dot(&a);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(LpomError::NonFinite("|W|ᵀ|W| overflowed".into()));
    }
    Ok(g)
}

/// `1e-8 · trace(X Xᵀ) / rows(X)`, the ridge used when none is given.
pub fn default_ridge(x: &Matrix) -> f64 {
    DEFAULT_RIDGE_SCALE * x.frobenius_norm().powi(2) / x.rows() as f64
}

/// Which Gram matrix the factorization lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GramSide {
    /// `XᵀX + λI` (m×m); chosen when there are no more samples than features.
    Samples,
    /// `XXᵀ + λI` (n×n).
    Features,
}

/// A factored (ridge-regularized) pseudo-inverse of a fixed `n×m` matrix `X`.
///
/// Applying `X†` from the right solves `min_M ‖M·X − T‖²_F + λ‖M‖²_F`. The factor is
/// built on whichever Gram matrix is smaller; by the push-through identity
/// `Xᵀ(XXᵀ+λI)⁻¹ = (XᵀX+λI)⁻¹Xᵀ` both sides give the same operator.
pub struct PseudoInverse {
    x: Array2<f64>,
    ridge: f64,
    side: GramSide,
    chol: Cholesky<f64, Dyn>,
}

impl PseudoInverse {
    pub fn new(x: &Matrix, ridge: f64) -> Result<Self> {
        let side = if x.cols() <= x.rows() {
            GramSide::Samples
        } else {
            GramSide::Features
        };
        Self::with_side(x, ridge, side)
    }

    pub fn with_side(x: &Matrix, ridge: f64, side: GramSide) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(LpomError::Config(format!("ridge must be >= 0, got {ridge}")));
        }
        let gram = match side {
            GramSide::Samples => x.data.t().dot(&x.data),
            GramSide::Features => x.data.dot(&x.data.t()),
        };
        let k = gram.nrows();
        let max_diag = (0..k).map(|i| gram[[i, i]]).fold(0.0, f64::max);
        let mut g = to_nalgebra(&gram);
        for i in 0..k {
            g[(i, i)] += ridge;
        }
        let chol = Cholesky::new(g).ok_or(LpomError::RankDeficient("pseudo-inverse"))?;
        if ridge == 0.0 {
            let l = chol.l_dirty();
            let min_pivot = (0..k).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if max_diag == 0.0 || min_pivot <= RANK_TOLERANCE * max_diag {
                return Err(LpomError::RankDeficient("pseudo-inverse"));
            }
        }
        Ok(PseudoInverse {
            x: x.data.clone(),
            ridge,
            side,
            chol,
        })
    }

    pub fn side(&self) -> GramSide {
        self.side
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// `target · X†`, mapping a `c×m` matrix to `c×n`.
    pub fn apply_right(&self, target: &Matrix) -> Result<Matrix> {
        let m = self.x.ncols();
        if target.cols() != m {
            return Err(LpomError::DimensionMismatch {
                op: "pinv_apply",
                left: target.shape(),
                right: (self.x.nrows(), m),
            });
        }
        let out = match self.side {
            // (K⁻¹Tᵀ)ᵀ Xᵀ = (X · K⁻¹Tᵀ)ᵀ
            GramSide::Samples => {
                let z = self.solve(&target.data.t());
                self.x.dot(&z).reversed_axes()
            }
            // (Kₙ⁻¹ X Tᵀ)ᵀ
            GramSide::Features => {
                let xt = self.x.dot(&target.data.t());
                self.solve(&xt.view()).reversed_axes()
            }
        };
        Matrix::from_array(out.as_standard_layout().into_owned())
    }

    /// `X†X`, the (regularized) projector onto the row space of `X`; `m×m`.
    pub fn projector(&self) -> Result<Matrix> {
        let p = match self.side {
            GramSide::Samples => {
                let g = self.x.t().dot(&self.x);
                self.solve(&g.view())
            }
            GramSide::Features => self.x.t().dot(&self.solve(&self.x.view())),
        };
        Matrix::from_array(p)
    }

    /// `X†(X†)ᵀ`; `m×m`. Lets callers measure `‖C·X†‖_F` without forming `X†`.
    pub fn pinv_gram(&self) -> Result<Matrix> {
        let h = match self.side {
            GramSide::Samples => {
                let g = self.x.t().dot(&self.x);
                let p = self.solve(&g.view());
                self.solve(&p.t()).reversed_axes()
            }
            GramSide::Features => {
                let q = self.solve(&self.x.view());
                q.t().dot(&q)
            }
        };
        Matrix::from_array(h.as_standard_layout().into_owned())
    }

    fn solve(&self, rhs: &ArrayView2<'_, f64>) -> Array2<f64> {
        let b = to_nalgebra_view(rhs);
        let sol = self.chol.solve(&b);
        Array2::from_shape_fn((sol.nrows(), sol.ncols()), |(i, j)| sol[(i, j)])
    }
}

/// `target · X†` with ridge `λ ≥ 0`: the minimizer of `‖M·X − target‖²_F + λ‖M‖²_F`.
pub fn pinv_apply(target: &Matrix, x: &Matrix, ridge: f64) -> Result<Matrix> {
    if target.cols() != x.cols() {
        return Err(LpomError::DimensionMismatch {
            op: "pinv_apply",
            left: target.shape(),
            right: x.shape(),
        });
    }
    PseudoInverse::new(x, ridge)?.apply_right(target)
}

fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    to_nalgebra_view(&a.view())
}

fn to_nalgebra_view(a: &ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}
