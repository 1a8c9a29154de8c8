//! Small dense complex matrix kernel: products and a Cholesky log-det.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c].conj();
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * other^H`, rows against rows.
    pub fn mul_adjoint(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.cols,
            });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a = self.row(r);
            for c in 0..other.rows {
                let b = other.row(c);
                let mut acc = Complex64::new(0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    acc += x * y.conj();
                }
                out.data[r * other.rows + c] = acc;
            }
        }
        Ok(out)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: Complex64, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        for (d, s) in self.data.iter_mut().zip(&other.data) {
            *d += alpha * s;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Natural log-determinant of a Hermitian positive-definite matrix through
/// an in-place lower Cholesky factorization. Only the lower triangle is read.
pub fn hpd_logdet(mut a: CMatrix) -> Result<f64> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.cols,
        });
    }
    let max_diag = (0..n).map(|i| a.get(i, i).re).fold(0.0, f64::max);
    let mut logdet = 0.0;
    for j in 0..n {
        let mut d = a.get(j, j).re;
        for k in 0..j {
            d -= a.data[j * n + k].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: j,
                value: d,
                max_diag,
            });
        }
        let ljj = d.sqrt();
        a.data[j * n + j] = Complex64::new(ljj, 0.0);
        logdet += 2.0 * ljj.ln();
        let inv = 1.0 / ljj;
        let (head, tail) = a.data.split_at_mut((j + 1) * n);
        let row_j = &head[j * n..j * n + j];
        for i in (j + 1)..n {
            let row_i = &mut tail[(i - j - 1) * n..(i - j) * n];
            let mut s = row_i[j];
            for k in 0..j {
                s -= row_i[k] * row_j[k].conj();
            }
            row_i[j] = s * inv;
        }
    }
    Ok(logdet)
}
