//! Discrete-time OTFS transceiver used as an independent reference for the
//! DD matrix model.
//!
//! Samples run at `M Δf`. Each sample carries `sqrt(T/M)` times the analog
//! amplitude, so sample energies add up to signal energy and the Wigner
//! Riemann sum is an exact inverse of the Heisenberg transform. A frame is
//! `cp_len + M N` samples, the prefix repeating the last `cp_len` samples.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::channel::{antenna_path_gain, ChannelParams, SystemConfig};
use crate::dd_operator::{DdGrid, MultiUserChannel};
use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Time-frequency grid, symbol `n` and subcarrier `m` stored at `n * M + m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfGrid {
    pub m: usize,
    pub n: usize,
    pub values: Vec<Complex64>,
}

impl TfGrid {
    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        self.values[n * self.m + m]
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// One transmitted or received frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub m: usize,
    pub n: usize,
    pub cp_len: usize,
    /// `cp_len + M N` samples, prefix first.
    pub samples: Vec<Complex64>,
}

impl TimeSignal {
    /// Samples after the prefix.
    pub fn frame(&self) -> &[Complex64] {
        &self.samples[self.cp_len..]
    }

    pub fn frame_energy(&self) -> f64 {
        self.frame().iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum()
    }
}

struct Plans {
    fwd_m: Arc<dyn Fft<f64>>,
    inv_m: Arc<dyn Fft<f64>>,
    fwd_n: Arc<dyn Fft<f64>>,
    inv_n: Arc<dyn Fft<f64>>,
}

fn plans(m: usize, n: usize) -> Plans {
    let mut p = FftPlanner::new();
    Plans {
        fwd_m: p.plan_fft_forward(m),
        inv_m: p.plan_fft_inverse(m),
        fwd_n: p.plan_fft_forward(n),
        inv_n: p.plan_fft_inverse(n),
    }
}

/// Applies `fft` along `k` for every `l` of an `n x m` row-major array.
fn columns(data: &mut [Complex64], m: usize, n: usize, fft: &dyn Fft<f64>) {
    let mut col = vec![ZERO; n];
    for l in 0..m {
        for k in 0..n {
            col[k] = data[k * m + l];
        }
        fft.process(&mut col);
        for k in 0..n {
            data[k * m + l] = col[k];
        }
    }
}

/// `X[n,m] = (1/√MN) Σ_k Σ_l x[k,l] exp(j2π(nk/N - ml/M))`.
pub fn isfft(x: &DdGrid) -> TfGrid {
    let (m, n) = (x.m(), x.n());
    let p = plans(m, n);
    let mut data = x.as_slice().to_vec();
    columns(&mut data, m, n, p.inv_n.as_ref());
    for row in data.chunks_exact_mut(m) {
        p.fwd_m.process(row);
    }
    let s = 1.0 / ((m * n) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= s);
    TfGrid { m, n, values: data }
}

/// `x[k,l] = (1/√MN) Σ_n Σ_m Y[n,m] exp(-j2π(nk/N - ml/M))`.
pub fn sfft(y: &TfGrid) -> DdGrid {
    let (m, n) = (y.m, y.n);
    let p = plans(m, n);
    let mut data = y.values.clone();
    columns(&mut data, m, n, p.fwd_n.as_ref());
    for row in data.chunks_exact_mut(m) {
        p.inv_m.process(row);
    }
    let s = 1.0 / ((m * n) as f64).sqrt();
    data.iter_mut().for_each(|v| *v *= s);
    DdGrid::from_vec(m, n, data).expect("grid shape")
}

/// Rectangular-pulse Heisenberg transform with a cyclic prefix:
/// `s[nM + p] = (1/√M) Σ_m X[n,m] exp(j2π m p / M)`.
pub fn heisenberg(x: &TfGrid, cp_len: usize) -> TimeSignal {
    let (m, n) = (x.m, x.n);
    let inv = FftPlanner::new().plan_fft_inverse(m);
    let mut frame = x.values.clone();
    let s = 1.0 / (m as f64).sqrt();
    for block in frame.chunks_exact_mut(m) {
        inv.process(block);
        block.iter_mut().for_each(|v| *v *= s);
    }
    let total = m * n;
    let mut samples = Vec::with_capacity(cp_len + total);
    // the prefix may be longer than one block but never longer than the frame
    for i in 0..cp_len {
        samples.push(frame[(total + i - cp_len % total) % total]);
    }
    samples.extend_from_slice(&frame);
    TimeSignal {
        m,
        n,
        cp_len,
        samples,
    }
}

/// Matched-filter Wigner transform on the same sample grid, discarding the
/// prefix.
pub fn wigner(y: &TimeSignal) -> TfGrid {
    let (m, n) = (y.m, y.n);
    let fwd = FftPlanner::new().plan_fft_forward(m);
    let mut values = y.frame().to_vec();
    let s = 1.0 / (m as f64).sqrt();
    for block in values.chunks_exact_mut(m) {
        fwd.process(block);
        block.iter_mut().for_each(|v| *v *= s);
    }
    TfGrid { m, n, values }
}

pub fn modulate(x: &DdGrid, cp_len: usize) -> TimeSignal {
    heisenberg(&isfft(x), cp_len)
}

pub fn demodulate(y: &TimeSignal) -> DdGrid {
    sfft(&wigner(y))
}

/// One path entering the sample-level channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePath {
    pub l_tau: usize,
    /// `ν / Δf`.
    pub eps: f64,
}

/// `y[t] = Σ_i z_i[t - l_i] exp(j2π ε_i (t - l_i) / M)` over a sample
/// buffer whose index `origin` is time zero; samples before the buffer
/// start are zero.
pub fn apply_paths(
    inputs: &[Vec<Complex64>],
    paths: &[SamplePath],
    m: usize,
    origin: isize,
) -> Vec<Complex64> {
    let len = inputs.first().map_or(0, Vec::len);
    let mut y = vec![ZERO; len];
    for (z, p) in inputs.iter().zip(paths) {
        for idx in p.l_tau..len {
            let src = idx - p.l_tau;
            let t = src as f64 - origin as f64;
            y[idx] += z[src] * Complex64::from_polar(1.0, 2.0 * PI * p.eps * t / m as f64);
        }
    }
    y
}

/// Received frame of UT `s` for the antenna frames `x`, with optional
/// AWGN of per-sample variance `n0` drawn from `noise_seed`.
pub fn apply_dd_channel(
    x: &[TimeSignal],
    params: &ChannelParams,
    s: usize,
    cfg: &SystemConfig,
    noise: Option<(f64, u64)>,
) -> Result<TimeSignal> {
    let first = x.first().ok_or(Error::MissingChannel { q: 0, s })?;
    if x.len() != cfg.q() {
        return Err(Error::DimensionMismatch {
            expected: cfg.q(),
            got: x.len(),
        });
    }
    let (m, n, cp_len) = (first.m, first.n, first.cp_len);
    let ut = params.uts.get(s).ok_or(Error::IndexOutOfRange {
        what: "UT",
        index: s,
        len: params.uts.len(),
    })?;
    let len = first.samples.len();
    let mut inputs = Vec::with_capacity(ut.paths.len());
    let mut paths = Vec::with_capacity(ut.paths.len());
    for (i, p) in ut.paths.iter().enumerate() {
        if p.l_tau > cp_len {
            return Err(Error::DelayExceedsCp {
                delay: p.l_tau,
                cp_len,
            });
        }
        let mut z = vec![ZERO; len];
        for (q, xq) in x.iter().enumerate() {
            let h = antenna_path_gain(params, q, s, i, cfg)?;
            for (a, b) in z.iter_mut().zip(&xq.samples) {
                *a += h * b;
            }
        }
        inputs.push(z);
        paths.push(SamplePath {
            l_tau: p.l_tau,
            eps: p.nu / cfg.delta_f,
        });
    }
    let mut samples = apply_paths(&inputs, &paths, m, cp_len as isize);
    if samples.is_empty() {
        samples = vec![ZERO; len];
    }
    if let Some((n0, seed)) = noise {
        add_awgn(&mut samples, n0, seed);
    }
    Ok(TimeSignal {
        m,
        n,
        cp_len,
        samples,
    })
}

/// Adds `CN(0, n0)` samples.
pub fn add_awgn(samples: &mut [Complex64], n0: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (n0 / 2.0).sqrt();
    for v in samples {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re * sd, im * sd);
    }
}

/// Runs modulate, channel and demodulate for every UT and returns the
/// largest elementwise deviation from `Σ_q H_{q,s} x_q`.
pub fn end_to_end_check(params: &ChannelParams, cfg: &SystemConfig, x: &[DdGrid]) -> Result<f64> {
    let cp_len = cfg.cp_len();
    let tx: Vec<TimeSignal> = x.iter().map(|g| modulate(g, cp_len)).collect();
    let channel = MultiUserChannel::from_params(params, cfg)?;
    let mut worst: f64 = 0.0;
    for s in 0..params.num_uts() {
        let y = demodulate(&apply_dd_channel(&tx, params, s, cfg, None)?);
        let mut want = DdGrid::zeros(cfg.m, cfg.n);
        for (q, xq) in x.iter().enumerate() {
            let hq = channel.effective(q, s)?.apply(xq)?;
            for (a, b) in want.as_mut_slice().iter_mut().zip(hq.as_slice()) {
                *a += b;
            }
        }
        worst = worst.max(y.max_abs_diff(&want));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_grid(m: usize, n: usize, seed: u64) -> DdGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DdGrid::from_vec(
            m,
            n,
            (0..m * n)
                .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sfft_inverts_isfft() {
        let x = random_grid(6, 4, 1);
        assert!(sfft(&isfft(&x)).max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn impulse_spreads_flat() {
        let (m, n) = (5, 3);
        let big = isfft(&DdGrid::impulse(m, n, 0, 0));
        let want = 1.0 / ((m * n) as f64).sqrt();
        for v in &big.values {
            assert!((v - Complex64::new(want, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn isfft_matches_double_sum() {
        let (m, n) = (4, 2);
        let x = random_grid(m, n, 2);
        let got = isfft(&x);
        for nn in 0..n {
            for mm in 0..m {
                let mut acc = ZERO;
                for k in 0..n {
                    for l in 0..m {
                        let arg =
                            2.0 * PI * ((nn * k) as f64 / n as f64 - (mm * l) as f64 / m as f64);
                        acc += x.get(k, l) * Complex64::from_polar(1.0, arg);
                    }
                }
                acc /= ((m * n) as f64).sqrt();
                assert!((acc - got.get(nn, mm)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn heisenberg_wigner_loopback_and_energy() {
        let x = isfft(&random_grid(8, 3, 3));
        let s = heisenberg(&x, 2);
        assert_eq!(s.samples.len(), 2 + 24);
        assert_eq!(&s.samples[..2], &s.samples[24..]);
        assert!((s.frame_energy() - x.energy()).abs() < 1e-12);
        assert!(wigner(&s).max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn single_tone_occupies_one_block() {
        let (m, n) = (8, 4);
        let mut tf = TfGrid {
            m,
            n,
            values: vec![ZERO; m * n],
        };
        tf.values[2 * m + 3] = Complex64::new(1.0, 0.0);
        let s = heisenberg(&tf, 0);
        for (i, v) in s.samples.iter().enumerate() {
            if i / m == 2 {
                assert!((v.norm() - 1.0 / (m as f64).sqrt()).abs() < 1e-14);
            } else {
                assert!(v.norm() < 1e-15);
            }
        }
    }

    #[test]
    fn pure_delay_moves_prefix_into_frame() {
        let inputs = vec![vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(3.0, 0.0),
            Complex64::new(4.0, 0.0),
        ]];
        let y = apply_paths(&inputs, &[SamplePath { l_tau: 1, eps: 0.0 }], 4, 1);
        assert_eq!(
            y,
            vec![
                ZERO,
                Complex64::new(1.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(3.0, 0.0)
            ]
        );
    }
}
