//! Dense row-major f64 matrix with the handful of kernels the tape needs.

use rayon::prelude::*;

/// Rows of this many elements or more fan out across threads.
const PAR_FLOPS_THRESHOLD: usize = 1 << 17;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Matrix {
        assert_eq!(data.len(), rows * cols, "matrix buffer size mismatch");
        Matrix { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Matrix {
        Matrix::from_vec(1, 1, vec![v])
    }

    pub fn row_vector(values: &[f64]) -> Matrix {
        Matrix::from_vec(1, values.len(), values.to_vec())
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
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

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self @ other`, parallel over output rows.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} @ {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a_row = self.row(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if self.rows * self.cols * n >= PAR_FLOPS_THRESHOLD && self.rows > 1 {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(kernel);
        } else {
            out.data.chunks_mut(n).enumerate().for_each(kernel);
        }
        out
    }

    /// `self @ other^T`.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt shape mismatch: {}x{} @ ({}x{})^T",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.rows);
        let n = other.rows;
        let kernel = |(i, out_row): (usize, &mut [f64])| {
            let a_row = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = other.row(j);
                *o = a_row.iter().zip(b_row).map(|(&a, &b)| a * b).sum();
            }
        };
        if self.rows * self.cols * n >= PAR_FLOPS_THRESHOLD && self.rows > 1 {
            out.data.par_chunks_mut(n).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(n).enumerate().for_each(kernel);
        }
        out
    }

    /// `self^T @ other`.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, other.rows,
            "matmul_tn shape mismatch: ({}x{})^T @ {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.cols, other.cols);
        let n = other.cols;
        let kernel = |(k, out_row): (usize, &mut [f64])| {
            for i in 0..self.rows {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(i);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if self.rows * self.cols * n >= PAR_FLOPS_THRESHOLD && self.cols > 1 {
            out.data.par_chunks_mut(n).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(n).enumerate().for_each(kernel);
        }
        out
    }

    pub fn add_in_place(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut acc = 0.0;
                for k in 0..a.cols {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let mut rng = Rng::seeded(1);
        let a = random(7, 7, &mut rng);
        let mut eye = Matrix::zeros(7, 7);
        for i in 0..7 {
            eye.set(i, i, 1.0);
        }
        assert_eq!(eye.matmul(&a).data, a.data);
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let mut rng = Rng::seeded(2);
        for &(m, k, n) in &[(3usize, 4usize, 5usize), (17, 9, 13), (64, 33, 8)] {
            let a = random(m, k, &mut rng);
            let b = random(k, n, &mut rng);
            let want = naive_matmul(&a, &b);
            let got = a.matmul(&b);
            for (x, y) in got.data.iter().zip(&want.data) {
                assert!((x - y).abs() < 1e-12);
            }
            // A @ B == A @ (B^T)^T via matmul_nt
            let mut bt = Matrix::zeros(n, k);
            for i in 0..k {
                for j in 0..n {
                    bt.set(j, i, b.get(i, j));
                }
            }
            let got_nt = a.matmul_nt(&bt);
            for (x, y) in got_nt.data.iter().zip(&want.data) {
                assert!((x - y).abs() < 1e-12);
            }
            // (A^T)^T @ B via matmul_tn
            let mut at = Matrix::zeros(k, m);
            for i in 0..m {
                for j in 0..k {
                    at.set(j, i, a.get(i, j));
                }
            }
            let got_tn = at.matmul_tn(&b);
            for (x, y) in got_tn.data.iter().zip(&want.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parallel_matmul_is_deterministic() {
        let mut rng = Rng::seeded(3);
        let a = random(256, 96, &mut rng);
        let b = random(96, 128, &mut rng);
        let c1 = a.matmul(&b);
        let c2 = a.matmul(&b);
        assert_eq!(c1.data, c2.data);
    }
}
