//! Delay-Doppler path operators, effective channels and Gram matrices.
//!
//! A single path with integer delay tap `l_tau` and Doppler `nu` acts on a
//! DD frame through an `MN x MN` operator whose only nonzeros in column
//! `(k', l')` sit at rows `(k, [l' + l_tau]_M)`, `k = 0..N`:
//!
//! ```text
//! a[(k,l),(k',l')] = D(k - k') * exp(j2π l' ε / M) * w(k', l')
//! D(Δ)             = (1/N) Σ_n exp(j2π n (ε - Δ/N)),   ε = nu / delta_f
//! w(k', l')        = exp(-j2π (k'/N + ε))  if l' >= M - l_tau, else 1
//! ```
//!
//! Every such operator is unitary.

mod effective;
mod gram;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

pub use effective::{
    effective_channel, EffectiveChannel, MultiUserChannel, PathGeometry, PathTerm,
};
pub use gram::{
    path_pair_weight, read_gram_dump, sinc_pair_sum, write_gram_dump, GramMatrix, GramMode,
    RowStats,
};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Values on an `M x N` delay-Doppler grid, stored at `k * M + l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdGrid {
    m: usize,
    n: usize,
    values: Vec<Complex64>,
}

impl DdGrid {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            values: vec![ZERO; m * n],
        }
    }

    pub fn from_vec(m: usize, n: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != m * n {
            return Err(Error::DimensionMismatch {
                expected: m * n,
                got: values.len(),
            });
        }
        Ok(Self { m, n, values })
    }

    /// Unit impulse at `(k, l)`.
    pub fn impulse(m: usize, n: usize, k: usize, l: usize) -> Self {
        let mut g = Self::zeros(m, n);
        g.values[k * m + l] = Complex64::new(1.0, 0.0);
        g
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn index(&self, k: usize, l: usize) -> usize {
        k * self.m + l
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize) -> Complex64 {
        self.values[k * self.m + l]
    }

    #[inline]
    pub fn set(&mut self, k: usize, l: usize, v: Complex64) {
        self.values[k * self.m + l] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.values
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Largest elementwise distance to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn check_shape(&self, m: usize, n: usize) -> Result<()> {
        if self.m != m || self.n != n {
            return Err(Error::DimensionMismatch {
                expected: m * n,
                got: self.m * self.n,
            });
        }
        Ok(())
    }
}

/// `(1/N) Σ_{n<N} exp(j2π n x)` evaluated as a geometric series.
pub fn dirichlet(x: f64, n: usize) -> Complex64 {
    let step = Complex64::from_polar(1.0, 2.0 * PI * x);
    let den = Complex64::new(1.0, 0.0) - step;
    if den.norm() < 1e-12 {
        return Complex64::new(1.0, 0.0);
    }
    let num = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, 2.0 * PI * x * n as f64);
    num / (den * n as f64)
}

/// One path operator `A_{s,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDdOperator {
    m: usize,
    n: usize,
    l_tau: usize,
    nu: f64,
    delta_f: f64,
    /// `D(Δ)` for `Δ = 0..N`.
    dir: Vec<Complex64>,
    /// `exp(j2π l' ε / M)` for `l' = 0..M`.
    delay_phase: Vec<Complex64>,
    /// `exp(-j2π (k'/N + ε))` for `k' = 0..N`.
    wrap_phase: Vec<Complex64>,
}

impl SparseDdOperator {
    pub fn new(l_tau: usize, nu: f64, m: usize, n: usize, delta_f: f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidConfig("M and N must be at least 1".into()));
        }
        if l_tau >= m {
            return Err(Error::IndexOutOfRange {
                what: "delay tap",
                index: l_tau,
                len: m,
            });
        }
        if !nu.is_finite() || !(delta_f > 0.0) {
            return Err(Error::NonFinite("Doppler shift or subcarrier spacing"));
        }
        let eps = nu / delta_f;
        let dir = (0..n)
            .map(|d| dirichlet(eps - d as f64 / n as f64, n))
            .collect();
        let delay_phase = (0..m)
            .map(|l| Complex64::from_polar(1.0, 2.0 * PI * l as f64 * eps / m as f64))
            .collect();
        let wrap_phase = (0..n)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * (k as f64 / n as f64 + eps)))
            .collect();
        Ok(Self {
            m,
            n,
            l_tau,
            nu,
            delta_f,
            dir,
            delay_phase,
            wrap_phase,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    pub fn l_tau(&self) -> usize {
        self.l_tau
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn delta_f(&self) -> f64 {
        self.delta_f
    }

    /// Normalized Doppler `nu / delta_f`.
    pub fn eps(&self) -> f64 {
        self.nu / self.delta_f
    }

    /// Doppler kernel `D(Δ)`, `Δ` taken modulo N.
    #[inline]
    pub fn kernel(&self, delta: usize) -> Complex64 {
        self.dir[delta % self.n]
    }

    /// Delay row hit by input delay `l'`.
    #[inline]
    pub fn target_delay(&self, l_prime: usize) -> usize {
        (l_prime + self.l_tau) % self.m
    }

    /// Column factor shared by all N nonzeros of column `(k', l')`.
    #[inline]
    pub fn column_phase(&self, k_prime: usize, l_prime: usize) -> Complex64 {
        let p = self.delay_phase[l_prime];
        if l_prime + self.l_tau >= self.m {
            p * self.wrap_phase[k_prime]
        } else {
            p
        }
    }

    /// Entry at row `(k, l)`, column `(k', l')`.
    pub fn entry(&self, k: usize, l: usize, k_prime: usize, l_prime: usize) -> Complex64 {
        if l != self.target_delay(l_prime) {
            return ZERO;
        }
        self.kernel(k + self.n - k_prime) * self.column_phase(k_prime, l_prime)
    }

    /// Nonzeros of column `(k', l')`: the shared delay row and the N values
    /// indexed by Doppler row `k`.
    pub fn column(&self, k_prime: usize, l_prime: usize) -> (usize, Vec<Complex64>) {
        let c = self.column_phase(k_prime, l_prime);
        let vals = (0..self.n)
            .map(|k| self.kernel(k + self.n - k_prime) * c)
            .collect();
        (self.target_delay(l_prime), vals)
    }

    /// `y += alpha * A x` on raw vectors.
    pub fn apply_acc(&self, alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
        let (m, n) = (self.m, self.n);
        let mut t = vec![ZERO; n];
        for lp in 0..m {
            let l = self.target_delay(lp);
            let mut any = false;
            for (kp, tk) in t.iter_mut().enumerate() {
                *tk = alpha * self.column_phase(kp, lp) * x[kp * m + lp];
                any |= *tk != ZERO;
            }
            if !any {
                continue;
            }
            for k in 0..n {
                let mut acc = ZERO;
                for (kp, tk) in t.iter().enumerate() {
                    acc += self.dir[(k + n - kp) % n] * tk;
                }
                y[k * m + l] += acc;
            }
        }
    }

    /// `x += alpha * A^H y` on raw vectors.
    pub fn apply_adjoint_acc(&self, alpha: Complex64, y: &[Complex64], x: &mut [Complex64]) {
        let (m, n) = (self.m, self.n);
        for lp in 0..m {
            let l = self.target_delay(lp);
            for kp in 0..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += self.dir[(k + n - kp) % n].conj() * y[k * m + l];
                }
                x[kp * m + lp] += alpha * self.column_phase(kp, lp).conj() * acc;
            }
        }
    }

    pub fn apply(&self, x: &DdGrid) -> Result<DdGrid> {
        x.check_shape(self.m, self.n)?;
        let mut y = DdGrid::zeros(self.m, self.n);
        self.apply_acc(Complex64::new(1.0, 0.0), &x.values, &mut y.values);
        Ok(y)
    }

    pub fn apply_adjoint(&self, y: &DdGrid) -> Result<DdGrid> {
        y.check_shape(self.m, self.n)?;
        let mut x = DdGrid::zeros(self.m, self.n);
        self.apply_adjoint_acc(Complex64::new(1.0, 0.0), &y.values, &mut x.values);
        Ok(x)
    }

    /// `tr(A^H B)`, zero unless both share a delay tap.
    pub fn frobenius_inner(&self, other: &Self) -> Complex64 {
        if self.l_tau != other.l_tau || self.m != other.m || self.n != other.n {
            return ZERO;
        }
        let dsum: Complex64 = self
            .dir
            .iter()
            .zip(&other.dir)
            .map(|(a, b)| a.conj() * b)
            .sum();
        let mut csum = ZERO;
        for kp in 0..self.n {
            for lp in 0..self.m {
                csum += self.column_phase(kp, lp).conj() * other.column_phase(kp, lp);
            }
        }
        dsum * csum
    }

    pub fn to_dense(&self) -> CMatrix {
        let (m, n) = (self.m, self.n);
        let mut a = CMatrix::zeros(m * n, m * n);
        for kp in 0..n {
            for lp in 0..m {
                let (l, vals) = self.column(kp, lp);
                for (k, v) in vals.into_iter().enumerate() {
                    a.set(k * m + l, kp * m + lp, v);
                }
            }
        }
        a
    }
}

/// Builds the path operator for delay tap `l_tau` and Doppler `nu`.
pub fn build_operator(
    l_tau: usize,
    nu: f64,
    m: usize,
    n: usize,
    delta_f: f64,
) -> Result<Arc<SparseDdOperator>> {
    SparseDdOperator::new(l_tau, nu, m, n, delta_f).map(Arc::new)
}
