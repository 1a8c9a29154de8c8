//! OFDM multi-user downlink with per-subcarrier MRT over the same
//! time-varying multipath channel.
//!
//! Each OFDM symbol carries its own `cp_len`-sample prefix. The precoder
//! uses the frequency response at `t = 0`; Doppler then rotates and spreads
//! the subcarriers, which shows up as inter-carrier interference. For unit
//! energy data symbols the received coefficient of `u_{s'}[j, m']` on
//! subcarrier `m` of UT `s` in symbol `j` is
//!
//! ```text
//! T[m,m'] = c Σ_i exp(j2π ε_i (t_j - l_i) / M) exp(-j2π m' l_i / M) D_M(m' - m + ε_i)
//!             Σ_k W_{(s,i),(s',k)} exp(j2π m' l_k / M)
//! ```
//!
//! with `t_j = j (M + cp_len)` and `W` the antenna sum of the two path gains.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{antenna_path_gain, ChannelParams, SystemConfig};
use crate::dd_operator::{dirichlet, path_pair_weight, GramMode, MultiUserChannel};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::waveform_oracle::{add_awgn, apply_paths, SamplePath};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmConfig {
    /// OFDM symbols averaged per realization.
    pub symbols_per_frame: usize,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            symbols_per_frame: 4,
        }
    }
}

/// Powers seen on one subcarrier of one UT in one symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierPowers {
    pub signal: f64,
    /// Leakage from the UT's own other subcarriers.
    pub ici: f64,
    /// Everything addressed to other UTs.
    pub mui: f64,
    pub noise: f64,
}

impl SubcarrierPowers {
    pub fn sinr(&self) -> f64 {
        self.signal / (self.ici + self.mui + self.noise)
    }
}

/// Precomputed MRT link of one realization.
pub struct OfdmLink {
    m: usize,
    k: usize,
    cp_len: usize,
    n0: f64,
    c: f64,
    /// Per UT: `(l_tau, eps)` of every path.
    paths: Vec<Vec<(usize, f64)>>,
    /// `dir[s][i][d] = D_M((d + ε_i) / M)`.
    dir: Vec<Vec<Vec<Complex64>>>,
    /// `u[s][i][s'][m'] = exp(-j2π m' l_i / M) Σ_k W exp(j2π m' l_k / M)`.
    u: Vec<Vec<Vec<Vec<Complex64>>>>,
}

impl OfdmLink {
    pub fn new(params: &ChannelParams, cfg: &SystemConfig) -> Result<Self> {
        let m = cfg.m;
        let cp_len = cfg.cp_len();
        let eta = cfg.q() as f64 * m as f64 * params.total_beta();
        if !(eta > 0.0) {
            return Err(Error::Degenerate("zero total path gain".into()));
        }
        let e_sym = cfg.rho * m as f64 * cfg.n0;
        let c = (e_sym / eta).sqrt();
        let channel = MultiUserChannel::from_params(params, cfg)?;
        let k = params.num_uts();
        let paths: Vec<Vec<(usize, f64)>> = params
            .uts
            .iter()
            .map(|ut| {
                ut.paths
                    .iter()
                    .map(|p| (p.l_tau, p.nu / cfg.delta_f))
                    .collect()
            })
            .collect();
        for p in paths.iter().flatten() {
            if p.0 > cp_len {
                return Err(Error::DelayExceedsCp { delay: p.0, cp_len });
            }
        }
        let dir = paths
            .iter()
            .map(|ps| {
                ps.iter()
                    .map(|&(_, eps)| {
                        (0..m)
                            .map(|d| dirichlet((d as f64 + eps) / m as f64, m))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut u = Vec::with_capacity(k);
        for s in 0..k {
            let terms_s = channel.paths(s)?;
            let mut per_i = Vec::with_capacity(terms_s.len());
            for (i, ti) in terms_s.iter().enumerate() {
                let li = paths[s][i].0;
                let mut per_sp = Vec::with_capacity(k);
                for sp in 0..k {
                    let mut row = vec![ZERO; m];
                    for (kk, tk) in channel.paths(sp)?.iter().enumerate() {
                        let w = path_pair_weight(ti, tk, &channel, GramMode::Factorized);
                        let lk = paths[sp][kk].0 as f64;
                        for (mp, r) in row.iter_mut().enumerate() {
                            *r += w * Complex64::from_polar(
                                1.0,
                                2.0 * PI * mp as f64 * (lk - li as f64) / m as f64,
                            );
                        }
                    }
                    per_sp.push(row);
                }
                per_i.push(per_sp);
            }
            u.push(per_i);
        }
        Ok(Self {
            m,
            k,
            cp_len,
            n0: cfg.n0,
            c,
            paths,
            dir,
            u,
        })
    }

    /// Precoder scale `c = sqrt(E_sym / η)`.
    pub fn scale(&self) -> f64 {
        self.c
    }

    fn symbol_phases(&self, s: usize, j: usize) -> Vec<Complex64> {
        let tj = (j * (self.m + self.cp_len)) as f64;
        self.paths[s]
            .iter()
            .map(|&(l, eps)| {
                Complex64::from_polar(1.0, 2.0 * PI * eps * (tj - l as f64) / self.m as f64)
            })
            .collect()
    }

    /// Row `mm` of `T_{s,s'}` in symbol `j`.
    fn row(&self, s: usize, sp: usize, mm: usize, phases: &[Complex64], out: &mut [Complex64]) {
        let m = self.m;
        out.iter_mut().for_each(|v| *v = ZERO);
        for (i, ph) in phases.iter().enumerate() {
            let dir = &self.dir[s][i];
            let u = &self.u[s][i][sp];
            let a = ph * self.c;
            for mp in 0..m {
                out[mp] += a * dir[(mp + m - mm) % m] * u[mp];
            }
        }
    }

    /// Full `T_{s,s'}` in symbol `j`.
    pub fn transfer(&self, s: usize, sp: usize, j: usize) -> CMatrix {
        let phases = self.symbol_phases(s, j);
        let mut t = CMatrix::zeros(self.m, self.m);
        let mut buf = vec![ZERO; self.m];
        for mm in 0..self.m {
            self.row(s, sp, mm, &phases, &mut buf);
            for (mp, v) in buf.iter().enumerate() {
                t.set(mm, mp, *v);
            }
        }
        t
    }

    /// Expected powers on every subcarrier of UT `s` in symbol `j`.
    pub fn powers(&self, s: usize, j: usize) -> Vec<SubcarrierPowers> {
        let phases = self.symbol_phases(s, j);
        let mut buf = vec![ZERO; self.m];
        let mut out = Vec::with_capacity(self.m);
        for mm in 0..self.m {
            let mut p = SubcarrierPowers {
                signal: 0.0,
                ici: 0.0,
                mui: 0.0,
                noise: self.n0,
            };
            for sp in 0..self.k {
                self.row(s, sp, mm, &phases, &mut buf);
                for (mp, v) in buf.iter().enumerate() {
                    let e = v.norm_sqr();
                    if sp != s {
                        p.mui += e;
                    } else if mp == mm {
                        p.signal += e;
                    } else {
                        p.ici += e;
                    }
                }
            }
            out.push(p);
        }
        out
    }
}

/// SE of one realization with totals of the per-subcarrier powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmResult {
    pub per_ut: Vec<f64>,
    pub sum: f64,
    pub signal: f64,
    pub ici: f64,
    pub mui: f64,
}

/// `SE_s = mean_j Σ_m log2(1 + SINR) / (M (1 + τ_max Δf))`.
pub fn ofdm_mrt_se(
    params: &ChannelParams,
    cfg: &SystemConfig,
    ocfg: &OfdmConfig,
) -> Result<OfdmResult> {
    if ocfg.symbols_per_frame == 0 {
        return Err(Error::InvalidConfig(
            "symbols_per_frame must be at least 1".into(),
        ));
    }
    let link = OfdmLink::new(params, cfg)?;
    let j_count = ocfg.symbols_per_frame;
    let norm = cfg.m as f64 * (1.0 + cfg.tau_max * cfg.delta_f) * j_count as f64;
    let per: Vec<(f64, f64, f64, f64)> =
        crate::par::map_indexed(params.num_uts() * j_count, |idx| {
            let (s, j) = (idx / j_count, idx % j_count);
            let mut acc = (0.0, 0.0, 0.0, 0.0);
            for p in link.powers(s, j) {
                acc.0 += (1.0 + p.sinr()).log2();
                acc.1 += p.signal;
                acc.2 += p.ici;
                acc.3 += p.mui;
            }
            acc
        });
    let mut per_ut = vec![0.0; params.num_uts()];
    let (mut signal, mut ici, mut mui) = (0.0, 0.0, 0.0);
    for (idx, r) in per.into_iter().enumerate() {
        per_ut[idx / j_count] += r.0 / norm;
        signal += r.1;
        ici += r.2;
        mui += r.3;
    }
    Ok(OfdmResult {
        sum: per_ut.iter().sum(),
        per_ut,
        signal,
        ici,
        mui,
    })
}

/// Sample-level simulation: MRT-precoded symbols `u[s'][j][m']` pass
/// through the channel and each UT demodulates every symbol. Returns
/// `y[s][j][m]`.
pub fn simulate_ofdm(
    params: &ChannelParams,
    cfg: &SystemConfig,
    u: &[Vec<Vec<Complex64>>],
    noise_seed: Option<u64>,
) -> Result<Vec<Vec<Vec<Complex64>>>> {
    let m = cfg.m;
    let cp = cfg.cp_len();
    let k = params.num_uts();
    let j_count = u.first().map_or(0, Vec::len);
    let eta = cfg.q() as f64 * m as f64 * params.total_beta();
    let c = (cfg.rho * m as f64 * cfg.n0 / eta).sqrt();
    let sym_len = m + cp;
    let len = j_count * sym_len;
    let fft = rustfft::FftPlanner::new();
    let (inv, fwd) = {
        let mut p = fft;
        (p.plan_fft_inverse(m), p.plan_fft_forward(m))
    };
    let norm = 1.0 / (m as f64).sqrt();
    let response = |q: usize, s: usize, mm: usize| -> Result<Complex64> {
        let mut h = ZERO;
        for (i, p) in params.uts[s].paths.iter().enumerate() {
            h += antenna_path_gain(params, q, s, i, cfg)?
                * Complex64::from_polar(1.0, -2.0 * PI * (mm * p.l_tau) as f64 / m as f64);
        }
        Ok(h)
    };
    let mut tx = Vec::with_capacity(cfg.q());
    for q in 0..cfg.q() {
        let mut stream = vec![ZERO; len];
        for j in 0..j_count {
            let mut block: Vec<Complex64> = (0..m)
                .map(|mm| {
                    let mut x = ZERO;
                    for (sp, us) in u.iter().enumerate() {
                        x += response(q, sp, mm)?.conj() * us[j][mm];
                    }
                    Ok(x * c)
                })
                .collect::<Result<_>>()?;
            inv.process(&mut block);
            let base = j * sym_len;
            for p in 0..cp {
                stream[base + p] = block[m - cp + p] * norm;
            }
            for p in 0..m {
                stream[base + cp + p] = block[p] * norm;
            }
        }
        tx.push(stream);
    }
    let mut out = Vec::with_capacity(k);
    for s in 0..k {
        let mut inputs = Vec::new();
        let mut paths = Vec::new();
        for (i, p) in params.uts[s].paths.iter().enumerate() {
            let mut z = vec![ZERO; len];
            for (q, xq) in tx.iter().enumerate() {
                let h = antenna_path_gain(params, q, s, i, cfg)?;
                for (a, b) in z.iter_mut().zip(xq) {
                    *a += h * b;
                }
            }
            inputs.push(z);
            paths.push(SamplePath {
                l_tau: p.l_tau,
                eps: p.nu / cfg.delta_f,
            });
        }
        let mut y = if inputs.is_empty() {
            vec![ZERO; len]
        } else {
            apply_paths(&inputs, &paths, m, cp as isize)
        };
        if let Some(seed) = noise_seed {
            add_awgn(&mut y, cfg.n0, crate::seed::derive(seed, s as u64));
        }
        let mut per_j = Vec::with_capacity(j_count);
        for j in 0..j_count {
            let start = j * sym_len + cp;
            let mut block = y[start..start + m].to_vec();
            fwd.process(&mut block);
            block.iter_mut().for_each(|v| *v *= norm);
            per_j.push(block);
        }
        out.push(per_j);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::PathParams;

    fn single_path(nu: f64) -> ChannelParams {
        ChannelParams::from_paths(vec![vec![PathParams {
            theta: 1.1,
            phi: 0.2,
            tau: 0.0,
            l_tau: 2,
            nu,
            g: Complex64::new(0.6, -0.8),
            beta: 1.0,
        }]])
    }

    fn small_cfg() -> SystemConfig {
        SystemConfig {
            m: 32,
            n: 4,
            k: 1,
            qh: 2,
            qv: 2,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn static_single_path_matches_flat_mrt() {
        let cfg = small_cfg().with_rho_q(0.5);
        let r = ofdm_mrt_se(&single_path(0.0), &cfg, &OfdmConfig::default()).unwrap();
        let want = (1.0 + 0.5f64).log2() / (1.0 + cfg.tau_max * cfg.delta_f);
        assert!((r.sum - want).abs() < 1e-12, "{} vs {}", r.sum, want);
        assert!(r.ici < 1e-10 * r.signal);
    }

    #[test]
    fn doppler_creates_ici() {
        let cfg = small_cfg().with_rho_q(0.5);
        let r = ofdm_mrt_se(&single_path(1600.0), &cfg, &OfdmConfig::default()).unwrap();
        assert!(r.ici > 1e-3 * r.signal);
    }
}
