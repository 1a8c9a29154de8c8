use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;

use super::{MultiUserChannel, PathGeometry, PathTerm, SparseDdOperator, ZERO};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// How the antenna sum `Σ_q h_{q,s,i} h*_{q,s',k}` of each path pair is
/// evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GramMode {
    /// Closed-form URA sinc ratio when both paths carry geometry, with a
    /// direct antenna sum otherwise.
    #[default]
    Factorized,
    /// Always sum over antennas.
    Direct,
}

/// `(1/Q) Σ_{c<Q} exp(j2π x c)`.
fn array_factor(x: f64, q: usize) -> Complex64 {
    let s = (PI * x).sin();
    if s.abs() < 1e-9 {
        let sum: Complex64 = (0..q)
            .map(|c| Complex64::from_polar(1.0, 2.0 * PI * x * c as f64))
            .sum();
        return sum / q as f64;
    }
    let ratio = (PI * x * q as f64).sin() / (q as f64 * s);
    Complex64::from_polar(ratio, PI * x * (q as f64 - 1.0))
}

/// `(1/Q) Σ_q h_{q,a} h*_{q,b}` for two paths on a `qh x qv` URA, in closed
/// form.
pub fn sinc_pair_sum(
    a: &PathGeometry,
    b: &PathGeometry,
    qh: usize,
    qv: usize,
    d_over_lambda: f64,
) -> Complex64 {
    let bh = a.phi.sin() * a.theta.sin() - b.phi.sin() * b.theta.sin();
    let cv = a.theta.cos() - b.theta.cos();
    a.g * b.g.conj() * array_factor(d_over_lambda * bh, qh) * array_factor(d_over_lambda * cv, qv)
}

/// `Σ_q h_{q,a} h*_{q,b}` for path `a` of one channel and `b` of another
/// channel on the same array.
pub fn path_pair_weight(
    a: &PathTerm,
    b: &PathTerm,
    array: &MultiUserChannel,
    mode: GramMode,
) -> Complex64 {
    if mode == GramMode::Factorized {
        if let (Some(ga), Some(gb)) = (&a.geometry, &b.geometry) {
            return array.q() as f64
                * sinc_pair_sum(ga, gb, array.qh(), array.qv(), array.d_over_lambda());
        }
    }
    a.gains
        .iter()
        .zip(&b.gains)
        .map(|(x, y)| x * y.conj())
        .sum()
}

/// `B[k1][k2] = Σ_k' D_a(k1 - k') u(k') conj(D_b(k2 - k'))`.
fn kernel_block(
    a: &SparseDdOperator,
    b: &SparseDdOperator,
    u: impl Fn(usize) -> Complex64,
) -> Vec<Complex64> {
    let n = a.n();
    let us: Vec<Complex64> = (0..n).map(u).collect();
    let mut out = vec![ZERO; n * n];
    for k1 in 0..n {
        for k2 in 0..n {
            let mut acc = ZERO;
            for (kp, uk) in us.iter().enumerate() {
                acc += a.kernel(k1 + n - kp) * uk * b.kernel(k2 + n - kp).conj();
            }
            out[k1 * n + k2] = acc;
        }
    }
    out
}

/// `G_{s,s'} = Σ_q H_{q,s} H^H_{q,s'}`.
///
/// Row `(k1, l)` is nonzero only at columns `(k2, [l + δ]_M)` for the delay
/// offsets `δ = l_k - l_i` of the path pairs, so the matrix is stored as one
/// `M x N x N` block per offset.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    m: usize,
    n: usize,
    /// `(δ, values)` with values at `(l * N + k1) * N + k2`.
    bands: Vec<(usize, Vec<Complex64>)>,
}

/// Per-row magnitudes used by the detector SINR.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStats {
    /// `γ_{r,r}`.
    pub diagonal: Vec<Complex64>,
    /// `Σ_p |γ_{r,p}|^2`.
    pub energy: Vec<f64>,
    /// `Σ_{p≠r} |γ_{r,p}|^2`, summed without the diagonal term.
    pub off_diagonal: Vec<f64>,
}

impl GramMatrix {
    fn empty(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            bands: Vec::new(),
        }
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

    /// Delay offsets carrying nonzeros.
    pub fn offsets(&self) -> Vec<usize> {
        self.bands.iter().map(|(d, _)| *d).collect()
    }

    fn band_mut(&mut self, delta: usize) -> &mut Vec<Complex64> {
        let pos = match self.bands.iter().position(|(d, _)| *d == delta) {
            Some(p) => p,
            None => {
                self.bands
                    .push((delta, vec![ZERO; self.m * self.n * self.n]));
                self.bands.len() - 1
            }
        };
        &mut self.bands[pos].1
    }

    /// Adds `w * A_a A_b^H`.
    fn add_path_pair(&mut self, w: Complex64, a: &SparseDdOperator, b: &SparseDdOperator) {
        let (m, n) = (self.m, self.n);
        let (la, lb) = (a.l_tau(), b.l_tau());
        let delta = (lb + m - la) % m;
        // the k'-dependence of the column phases only switches with the two
        // wrap conditions, so four kernel blocks cover every delay row
        let mut blocks: [Option<Vec<Complex64>>; 4] = Default::default();
        let band = self.band_mut(delta);
        for l in 0..m {
            let lp = (l + m - la) % m;
            let wa = lp + la >= m;
            let wb = lp + lb >= m;
            let slot = (wa as usize) * 2 + wb as usize;
            let block = blocks[slot].get_or_insert_with(|| {
                kernel_block(a, b, |kp| {
                    // strip the delay phase, evaluated once per row below
                    a.column_phase(kp, lp) * b.column_phase(kp, lp).conj()
                        / (a.column_phase(0, lp) * b.column_phase(0, lp).conj())
                })
            });
            let row_phase = w * a.column_phase(0, lp) * b.column_phase(0, lp).conj();
            let dst = &mut band[l * n * n..(l + 1) * n * n];
            for (d, v) in dst.iter_mut().zip(block.iter()) {
                *d += row_phase * v;
            }
        }
    }

    /// Entry `γ_{r,p}`.
    pub fn get(&self, r: usize, p: usize) -> Complex64 {
        let (m, n) = (self.m, self.n);
        let (k1, l) = (r / m, r % m);
        let (k2, l2) = (p / m, p % m);
        let delta = (l2 + m - l) % m;
        self.bands
            .iter()
            .find(|(d, _)| *d == delta)
            .map(|(_, v)| v[(l * n + k1) * n + k2])
            .unwrap_or(ZERO)
    }

    pub fn row_stats(&self) -> RowStats {
        let (m, n) = (self.m, self.n);
        let mut diagonal = vec![ZERO; m * n];
        let mut energy = vec![0.0; m * n];
        let mut off_diagonal = vec![0.0; m * n];
        for (delta, vals) in &self.bands {
            for l in 0..m {
                for k1 in 0..n {
                    let row = &vals[(l * n + k1) * n..(l * n + k1 + 1) * n];
                    let r = k1 * m + l;
                    let mut off = 0.0;
                    for (k2, v) in row.iter().enumerate() {
                        if *delta == 0 && k2 == k1 {
                            diagonal[r] = *v;
                        } else {
                            off += v.norm_sqr();
                        }
                    }
                    off_diagonal[r] += off;
                    energy[r] += off;
                }
            }
        }
        for (e, d) in energy.iter_mut().zip(&diagonal) {
            *e += d.norm_sqr();
        }
        RowStats {
            diagonal,
            energy,
            off_diagonal,
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        let (m, n) = (self.m, self.n);
        let mut out = CMatrix::zeros(m * n, m * n);
        for (delta, vals) in &self.bands {
            for l in 0..m {
                let l2 = (l + delta) % m;
                for k1 in 0..n {
                    for k2 in 0..n {
                        out.data[(k1 * m + l) * m * n + k2 * m + l2] += vals[(l * n + k1) * n + k2];
                    }
                }
            }
        }
        out
    }
}

impl MultiUserChannel {
    /// `G_{s,s'}` of this channel with itself.
    pub fn gram(&self, s: usize, s_prime: usize, mode: GramMode) -> Result<GramMatrix> {
        self.gram_with(s, self, s_prime, mode)
    }

    /// `Σ_q H_{q,s} Ĥ^H_{q,s'}` with `Ĥ` taken from `other`, for instance a
    /// channel estimate used by the precoder.
    pub fn gram_with(
        &self,
        s: usize,
        other: &MultiUserChannel,
        s_prime: usize,
        mode: GramMode,
    ) -> Result<GramMatrix> {
        if other.m() != self.m() || other.n() != self.n() || other.q() != self.q() {
            return Err(Error::DimensionMismatch {
                expected: self.mn() * self.q(),
                got: other.mn() * other.q(),
            });
        }
        let mut g = GramMatrix::empty(self.m(), self.n());
        for a in self.paths(s)? {
            for b in other.paths(s_prime)? {
                let w = path_pair_weight(a, b, self, mode);
                if w == ZERO {
                    continue;
                }
                g.add_path_pair(w, &a.op, &b.op);
            }
        }
        Ok(g)
    }
}

const DUMP_FLAG_SINGLE: u64 = 1;

/// Writes a dense row-major dump: 16-byte little-endian header
/// `(M: u32, N: u32, flags: u64)` followed by `(re, im)` pairs as f64, or
/// f32 when `single` is set.
pub fn write_gram_dump<W: Write>(g: &GramMatrix, single: bool, mut w: W) -> Result<()> {
    w.write_all(&(g.m as u32).to_le_bytes())?;
    w.write_all(&(g.n as u32).to_le_bytes())?;
    let flags = if single { DUMP_FLAG_SINGLE } else { 0 };
    w.write_all(&flags.to_le_bytes())?;
    let dense = g.to_dense();
    let mut buf = Vec::with_capacity(dense.data.len() * if single { 8 } else { 16 });
    for v in &dense.data {
        if single {
            buf.extend_from_slice(&(v.re as f32).to_le_bytes());
            buf.extend_from_slice(&(v.im as f32).to_le_bytes());
        } else {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a dump written by [`write_gram_dump`], returning `(M, N, matrix)`.
pub fn read_gram_dump<R: Read>(mut r: R) -> Result<(usize, usize, CMatrix)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    let m = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let flags = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let single = flags & DUMP_FLAG_SINGLE != 0;
    let len = (m * n) * (m * n);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let width = if single { 8 } else { 16 };
    if bytes.len() != len * width {
        return Err(Error::DimensionMismatch {
            expected: len * width,
            got: bytes.len(),
        });
    }
    let data = bytes
        .chunks_exact(width)
        .map(|c| {
            if single {
                Complex64::new(
                    f32::from_le_bytes(c[0..4].try_into().unwrap()) as f64,
                    f32::from_le_bytes(c[4..8].try_into().unwrap()) as f64,
                )
            } else {
                Complex64::new(
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                )
            }
        })
        .collect();
    Ok((m, n, CMatrix::from_vec(m * n, m * n, data)?))
}
