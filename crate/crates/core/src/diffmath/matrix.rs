use std::fmt;

/// Dense row-major `f64` matrix.
///
/// Batches of points are stored column-wise: a batch of `n` points in
/// `R^d` is a `d x n` matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{}) [", self.rows, self.cols)?;
        for r in 0..self.rows {
            if r > 0 {
                write!(f, "; ")?;
            }
            for c in 0..self.cols {
                if c > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self[(r, c)])?;
            }
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
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

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Self { rows, cols, data }
    }

    pub fn column_vector(data: Vec<f64>) -> Self {
        let rows = data.len();
        Self::from_vec(rows, 1, data)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
    }

    /// Stacks equal-length points as the columns of a matrix.
    ///
    /// Panics on ragged input.
    pub fn from_columns<P: AsRef<[f64]>>(columns: &[P]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut m = Self::zeros(rows, cols);
        for (j, col) in columns.iter().enumerate() {
            let col = col.as_ref();
            assert_eq!(col.len(), rows, "ragged columns");
            for (i, &v) in col.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        m
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    /// Gathers the given columns into a new matrix, in the order given.
    pub fn select_columns(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, indices.len());
        for (k, &j) in indices.iter().enumerate() {
            for i in 0..self.rows {
                out.data[i * indices.len() + k] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Sum over columns: `m x n -> m x 1`.
    pub fn row_sums(&self) -> Self {
        let mut out = Self::zeros(self.rows, 1);
        for i in 0..self.rows {
            out.data[i] = self.data[i * self.cols..(i + 1) * self.cols].iter().sum();
        }
        out
    }

    /// Sum over rows: `m x n -> 1 x n`.
    pub fn col_sums(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j] += self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `op(self) * op(other)` where `op` optionally transposes.
    pub fn matmul_t(&self, other: &Self, trans_self: bool, trans_other: bool) -> Self {
        let (m, k) = op_shape(self.shape(), trans_self);
        let (k2, n) = op_shape(other.shape(), trans_other);
        assert_eq!(k, k2, "inner dimensions disagree");
        let mut out = Self::zeros(m, n);
        gemm_into(self, trans_self, other, trans_other, 1.0, 0.0, &mut out);
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        self.matmul_t(other, false, false)
    }
}

pub(crate) fn op_shape(shape: (usize, usize), trans: bool) -> (usize, usize) {
    if trans {
        (shape.1, shape.0)
    } else {
        shape
    }
}

/// `out = alpha * op(a) op(b) + beta * out`, shapes already validated.
pub(crate) fn gemm_into(
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    alpha: f64,
    beta: f64,
    out: &mut Matrix,
) {
    let (m, k) = op_shape(a.shape(), trans_a);
    let (_, n) = op_shape(b.shape(), trans_b);
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            out.data.iter_mut().for_each(|v| *v = 0.0);
        } else {
            out.data.iter_mut().for_each(|v| *v *= beta);
        }
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    // SAFETY: strides describe the row-major buffers of `a`, `b` and `out`
    // whose extents were checked against (m, k, n) above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive_for_all_transpose_flags() {
        let a = Matrix::from_vec(3, 2, vec![1.0, -2.0, 0.5, 3.0, 4.0, -1.5]);
        let b = Matrix::from_vec(2, 4, vec![2.0, 0.0, 1.0, -1.0, 0.25, 3.0, -2.0, 5.0]);
        let expect = naive(&a, &b);
        assert_eq!(a.matmul(&b), expect);
        assert_eq!(a.transpose().matmul_t(&b, true, false), expect);
        assert_eq!(a.matmul_t(&b.transpose(), false, true), expect);
        assert_eq!(a.transpose().matmul_t(&b.transpose(), true, true), expect);
    }

    #[test]
    fn column_round_trip() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let m = Matrix::from_columns(&pts);
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.columns(), pts);
        assert_eq!(m.select_columns(&[2, 0]).columns(), vec![pts[2].clone(), pts[0].clone()]);
    }

    #[test]
    fn reductions() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.row_sums().as_slice(), &[6.0, 15.0]);
        assert_eq!(m.col_sums().as_slice(), &[5.0, 7.0, 9.0]);
        assert_eq!(m.sum(), 21.0);
        assert_eq!(m.frobenius_sq(), 91.0);
    }

    #[test]
    #[should_panic]
    fn from_vec_rejects_bad_length() {
        Matrix::from_vec(2, 2, vec![1.0; 3]);
    }
}
