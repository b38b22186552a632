//! Small dense row-major matrices and the fixed-step integrator.
//!
//! Everything here is sized for observer work: states and filter matrices of a
//! handful of rows, stepped a few tens of thousands of times. Cofactor
//! expansion is used for determinants and adjugates because it stays exact on
//! integer-valued singular matrices (`adj(M) * M = det(M) * I` must hold even
//! when `det(M) == 0`), which elimination with pivot thresholds does not
//! guarantee.

use crate::error::{Error, Result};
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data; errors if the length is wrong.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(
                "matrix construction",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from explicit rows; panics if the rows are ragged.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows in matrix literal");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Column vector from a slice.
    pub fn column(entries: &[f64]) -> Self {
        Matrix { rows: entries.len(), cols: 1, data: entries.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Row-major view of the entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Consumes the matrix, returning its row-major storage.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Returns `c * self`.
    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// Horizontal concatenation `[self | right]`; panics on row mismatch.
    pub fn hstack(&self, right: &Matrix) -> Matrix {
        assert_eq!(self.rows, right.rows, "hstack row mismatch: {} vs {}", self.rows, right.rows);
        let cols = self.cols + right.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
            data.extend_from_slice(&right.data[i * right.cols..(i + 1) * right.cols]);
        }
        Matrix { rows: self.rows, cols, data }
    }

    /// Copy of rows `r0..r1` (half-open), all columns.
    pub fn row_block(&self, r0: usize, r1: usize) -> Matrix {
        assert!(r0 <= r1 && r1 <= self.rows, "row block {r0}..{r1} out of bounds");
        Matrix {
            rows: r1 - r0,
            cols: self.cols,
            data: self.data[r0 * self.cols..r1 * self.cols].to_vec(),
        }
    }

    /// Sum of diagonal entries; panics if not square.
    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "trace of a non-square matrix");
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    /// Largest absolute entry (zero for empty matrices).
    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Frobenius norm; the Euclidean norm when the matrix is a vector.
    pub fn norm_two(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds for {}x{}", self.rows, self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds for {}x{}", self.rows, self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix addition shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix subtraction shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scaled(-1.0)
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matrix product shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, rhs.rows, rhs.cols
        );
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.data[i * self.cols + l];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[l * rhs.cols + j];
                }
            }
        }
        out
    }
}

impl Mul<f64> for &Matrix {
    type Output = Matrix;
    fn mul(self, c: f64) -> Matrix {
        self.scaled(c)
    }
}

/// Determinant by closed form up to 3x3 and first-row cofactor expansion
/// beyond; errors on non-square input.
pub fn determinant(m: &Matrix) -> Result<f64> {
    if m.rows != m.cols {
        return Err(Error::dimension(
            "determinant",
            format!("matrix is {}x{}", m.rows, m.cols),
        ));
    }
    Ok(det_dense(m.rows, &m.data))
}

/// Adjugate (transposed cofactor matrix). Satisfies
/// `adjugate(M) * M = determinant(M) * I` exactly in exact arithmetic, for
/// singular `M` included; the adjugate of a 1x1 matrix is `[[1]]`.
pub fn adjugate(m: &Matrix) -> Result<Matrix> {
    if m.rows != m.cols {
        return Err(Error::dimension(
            "adjugate",
            format!("matrix is {}x{}", m.rows, m.cols),
        ));
    }
    let n = m.rows;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    if n == 1 {
        return Matrix::new(1, 1, vec![1.0]);
    }
    let mut out = Matrix::zeros(n, n);
    let mut minor = vec![0.0; (n - 1) * (n - 1)];
    for i in 0..n {
        for j in 0..n {
            fill_minor(n, &m.data, i, j, &mut minor);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            // Cofactor transpose: the (i,j) cofactor lands at (j,i).
            out.data[j * n + i] = sign * det_dense(n - 1, &minor);
        }
    }
    Ok(out)
}

fn det_dense(n: usize, a: &[f64]) -> f64 {
    match n {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => {
            let mut det = 0.0;
            let mut sign = 1.0;
            let mut minor = vec![0.0; (n - 1) * (n - 1)];
            for col in 0..n {
                // An exactly-zero entry contributes exactly nothing.
                if a[col] != 0.0 {
                    fill_minor(n, a, 0, col, &mut minor);
                    det += sign * a[col] * det_dense(n - 1, &minor);
                }
                sign = -sign;
            }
            det
        }
    }
}

/// Writes the minor of `a` (order `n`, row-major) with row `skip_row` and
/// column `skip_col` removed into `out`.
fn fill_minor(n: usize, a: &[f64], skip_row: usize, skip_col: usize, out: &mut [f64]) {
    let mut idx = 0;
    for r in 0..n {
        if r == skip_row {
            continue;
        }
        for c in 0..n {
            if c == skip_col {
                continue;
            }
            out[idx] = a[r * n + c];
            idx += 1;
        }
    }
}

/// One classical Runge-Kutta step of `state' = f(t, state)` from `t` to
/// `t + h`. The field is evaluated at `t`, twice at `t + h/2`, and at `t + h`;
/// a non-finite derivative or update is reported with the step time.
pub fn rk4_step<F>(mut f: F, t: f64, state: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("step size must be positive and finite, got {h}")));
    }
    let k1 = eval_field(&mut f, t, state, state.len())?;
    let k2 = eval_field(&mut f, t + 0.5 * h, &axpy(state, &k1, 0.5 * h), state.len())?;
    let k3 = eval_field(&mut f, t + 0.5 * h, &axpy(state, &k2, 0.5 * h), state.len())?;
    let k4 = eval_field(&mut f, t + h, &axpy(state, &k3, h), state.len())?;
    let sixth = h / 6.0;
    let mut out = Vec::with_capacity(state.len());
    for i in 0..state.len() {
        out.push(state[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "integrator update", t });
    }
    Ok(out)
}

fn eval_field<F>(f: &mut F, s: f64, state: &[f64], dim: usize) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k = f(s, state)?;
    if k.len() != dim {
        return Err(Error::dimension(
            "integrator field",
            format!("state has {dim} entries but derivative has {}", k.len()),
        ));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "derivative evaluation", t: s });
    }
    Ok(k)
}

fn axpy(state: &[f64], k: &[f64], c: f64) -> Vec<f64> {
    state.iter().zip(k).map(|(s, v)| s + c * v).collect()
}
