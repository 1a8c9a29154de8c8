//! Uplink pilot channel estimation in the DD domain.
//!
//! Every UT sends one pilot DDRE per estimation frame. The BS finds the
//! occupied delay taps from the received energy inside each UT's region,
//! then picks each tap's Doppler on a grid and projects the per-antenna
//! gains onto the resulting pilot column.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{antenna_path_gain, ChannelParams, SystemConfig};
use crate::dd_operator::{build_operator, dirichlet, DdGrid, MultiUserChannel, PathTerm};
use crate::error::{Error, Result};
use crate::waveform_oracle::{apply_paths, demodulate, modulate, SamplePath, TimeSignal};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Pilot DDREs and search regions of all UTs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotLayout {
    pub m: usize,
    pub n: usize,
    /// Doppler index of each pilot.
    pub k: Vec<usize>,
    /// Delay index of each pilot.
    pub l: Vec<usize>,
    /// Region delay span past the pilot, equal to the CP length.
    pub span: usize,
    pub ep: f64,
}

impl PilotLayout {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        let span = cfg.cp_len();
        let spacing = cfg.m / cfg.k.max(1);
        if cfg.k == 0 || spacing <= span {
            return Err(Error::PilotOverlap {
                spacing,
                cp_len: span,
            });
        }
        Ok(Self {
            m: cfg.m,
            n: cfg.n,
            k: (0..cfg.k).map(|s| s % cfg.n).collect(),
            l: (0..cfg.k).map(|s| s * spacing).collect(),
            span,
            ep: cfg.ep,
        })
    }

    pub fn num_uts(&self) -> usize {
        self.k.len()
    }

    fn check(&self, s: usize) -> Result<()> {
        if s >= self.k.len() {
            return Err(Error::IndexOutOfRange {
                what: "UT",
                index: s,
                len: self.k.len(),
            });
        }
        Ok(())
    }
}

/// One pilot frame per UT.
pub fn make_pilot_frames(layout: &PilotLayout) -> Vec<DdGrid> {
    (0..layout.num_uts())
        .map(|s| {
            let mut g = DdGrid::zeros(layout.m, layout.n);
            g.set(
                layout.k[s],
                layout.l[s],
                Complex64::new(layout.ep.sqrt(), 0.0),
            );
            g
        })
        .collect()
}

/// Nonzeros of the pilot column of a path with tap `l_tau` and Doppler
/// `nu`: all sit on delay row `l_s + l_tau`, indexed by Doppler row `k`.
pub fn pilot_column(layout: &PilotLayout, s: usize, nu: f64, delta_f: f64) -> Vec<Complex64> {
    let (m, n) = (layout.m, layout.n);
    let eps = nu / delta_f;
    let ks = layout.k[s];
    let phase = Complex64::from_polar(1.0, 2.0 * PI * layout.l[s] as f64 * eps / m as f64);
    (0..n)
        .map(|k| {
            let d = (k + n - ks) % n;
            dirichlet(eps - d as f64 / n as f64, n) * phase
        })
        .collect()
}

/// Received pilot grids `x̂_q` under the DD matrix model, with `CN(0, N0)`
/// noise drawn from `noise_seed` when given.
pub fn receive_pilots(
    layout: &PilotLayout,
    params: &ChannelParams,
    cfg: &SystemConfig,
    noise_seed: Option<u64>,
) -> Result<Vec<DdGrid>> {
    let q_count = cfg.q();
    let mut out = vec![DdGrid::zeros(layout.m, layout.n); q_count];
    let amp = layout.ep.sqrt();
    for s in 0..params.num_uts() {
        layout.check(s)?;
        for (i, p) in params.uts[s].paths.iter().enumerate() {
            let col = pilot_column(layout, s, p.nu, cfg.delta_f);
            let row = layout.l[s] + p.l_tau;
            if row >= layout.m {
                return Err(Error::DelayExceedsCp {
                    delay: p.l_tau,
                    cp_len: layout.span,
                });
            }
            for (q, grid) in out.iter_mut().enumerate() {
                let h = antenna_path_gain(params, q, s, i, cfg)? * amp;
                for (k, c) in col.iter().enumerate() {
                    let idx = k * layout.m + row;
                    grid.as_mut_slice()[idx] += h * c;
                }
            }
        }
    }
    if let Some(seed) = noise_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = (cfg.n0 / 2.0).sqrt();
        for grid in &mut out {
            for v in grid.as_mut_slice() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *v += Complex64::new(re * sd, im * sd);
            }
        }
    }
    Ok(out)
}

/// Noiseless received pilots computed through the sample-level transceiver.
pub fn receive_pilots_waveform(
    layout: &PilotLayout,
    params: &ChannelParams,
    cfg: &SystemConfig,
) -> Result<Vec<DdGrid>> {
    let cp_len = cfg.cp_len();
    let tx: Vec<TimeSignal> = make_pilot_frames(layout)
        .iter()
        .map(|g| modulate(g, cp_len))
        .collect();
    let mut out = Vec::with_capacity(cfg.q());
    for q in 0..cfg.q() {
        let mut inputs = Vec::new();
        let mut paths = Vec::new();
        for s in 0..params.num_uts() {
            layout.check(s)?;
            for (i, p) in params.uts[s].paths.iter().enumerate() {
                let h = antenna_path_gain(params, q, s, i, cfg)?;
                inputs.push(tx[s].samples.iter().map(|v| v * h).collect());
                paths.push(SamplePath {
                    l_tau: p.l_tau,
                    eps: p.nu / cfg.delta_f,
                });
            }
        }
        let mut samples = apply_paths(&inputs, &paths, cfg.m, cp_len as isize);
        if samples.is_empty() {
            samples = vec![ZERO; cp_len + cfg.mn()];
        }
        out.push(demodulate(&TimeSignal {
            m: cfg.m,
            n: cfg.n,
            cp_len,
            samples,
        }));
    }
    Ok(out)
}

/// Which Doppler rows feed the delay energy profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyMode {
    /// All N Doppler rows at each region delay.
    #[default]
    AllK,
    /// Only the pilot's own Doppler row.
    StrictK,
}

impl EnergyMode {
    /// Mean noise contribution to one profile entry, in units of `N0`.
    pub fn noise_rows(self, n: usize) -> f64 {
        match self {
            EnergyMode::AllK => n as f64,
            EnergyMode::StrictK => 1.0,
        }
    }
}

/// `ℰ_s[d]` for region offsets `d = 0..=span`, averaged over antennas.
pub fn delay_energy_profile(
    xhat: &[DdGrid],
    layout: &PilotLayout,
    s: usize,
    mode: EnergyMode,
) -> Result<Vec<f64>> {
    layout.check(s)?;
    let q = xhat.len().max(1) as f64;
    let rows: Vec<usize> = match mode {
        EnergyMode::AllK => (0..layout.n).collect(),
        EnergyMode::StrictK => vec![layout.k[s]],
    };
    let mut e = vec![0.0; layout.span + 1];
    for (d, slot) in e.iter_mut().enumerate() {
        let l = layout.l[s] + d;
        if l >= layout.m {
            break;
        }
        for g in xhat {
            for &k in &rows {
                *slot += g.get(k, l).norm_sqr();
            }
        }
        *slot /= q;
    }
    Ok(e)
}

/// Four times the mean noise energy of a profile entry.
pub fn default_threshold(cfg: &SystemConfig, mode: EnergyMode) -> f64 {
    4.0 * mode.noise_rows(cfg.n) * cfg.n0
}

/// Offsets whose energy exceeds `threshold`.
pub fn detect_paths(profile: &[f64], threshold: f64) -> Vec<usize> {
    profile
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > threshold)
        .map(|(d, _)| d)
        .collect()
}

/// `points` values evenly covering `[-nu_max, nu_max]`, endpoints included.
pub fn doppler_grid(nu_max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| -nu_max + 2.0 * nu_max * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// `ã(l, nu)^H x̂_q` for every antenna.
pub fn project(
    xhat: &[DdGrid],
    layout: &PilotLayout,
    s: usize,
    tap: usize,
    nu: f64,
    delta_f: f64,
) -> Vec<Complex64> {
    let col = pilot_column(layout, s, nu, delta_f);
    let row = layout.l[s] + tap;
    xhat.iter()
        .map(|g| {
            col.iter()
                .enumerate()
                .map(|(k, c)| c.conj() * g.get(k, row))
                .sum()
        })
        .collect()
}

/// `Σ_q |ã(l, nu)^H x̂_q|²`.
pub fn doppler_objective(
    xhat: &[DdGrid],
    layout: &PilotLayout,
    s: usize,
    tap: usize,
    nu: f64,
    delta_f: f64,
) -> f64 {
    project(xhat, layout, s, tap, nu, delta_f)
        .iter()
        .map(|v| v.norm_sqr())
        .sum()
}

/// Grid point maximizing the Doppler objective; the first one on ties.
pub fn estimate_doppler(
    xhat: &[DdGrid],
    layout: &PilotLayout,
    s: usize,
    tap: usize,
    grid: &[f64],
    delta_f: f64,
) -> f64 {
    let scores = crate::par::map_indexed(grid.len(), |i| {
        doppler_objective(xhat, layout, s, tap, grid[i], delta_f)
    });
    let mut best = (0.0, f64::NEG_INFINITY);
    for (nu, v) in grid.iter().zip(scores) {
        if v > best.1 {
            best = (*nu, v);
        }
    }
    best.0
}

/// `h̃_q = ã(l, nu)^H x̂_q / √E_p`.
pub fn estimate_gains(
    xhat: &[DdGrid],
    layout: &PilotLayout,
    s: usize,
    tap: usize,
    nu: f64,
    delta_f: f64,
) -> Vec<Complex64> {
    let inv = if layout.ep > 0.0 {
        1.0 / layout.ep.sqrt()
    } else {
        0.0
    };
    project(xhat, layout, s, tap, nu, delta_f)
        .into_iter()
        .map(|v| v * inv)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub l_tau: usize,
    pub nu: f64,
    /// `h̃_{q,s,i}` for `q = 0..Q`.
    pub gains: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    /// Detected paths of each UT.
    pub uts: Vec<Vec<PathEstimate>>,
}

impl ChannelEstimate {
    pub fn detected(&self, s: usize) -> usize {
        self.uts.get(s).map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub nu_max: f64,
    pub grid_points: usize,
    pub mode: EnergyMode,
    /// Overrides the default four-times-noise threshold.
    pub threshold: Option<f64>,
}

impl EstimatorOptions {
    pub fn new(cfg: &SystemConfig, nu_max: f64) -> Self {
        Self {
            nu_max,
            grid_points: cfg.doppler_grid_points,
            mode: EnergyMode::AllK,
            threshold: None,
        }
    }
}

/// Detection, Doppler search and gain projection for every UT.
pub fn estimate_channel(
    xhat: &[DdGrid],
    layout: &PilotLayout,
    cfg: &SystemConfig,
    opts: &EstimatorOptions,
) -> Result<ChannelEstimate> {
    let grid = doppler_grid(opts.nu_max, opts.grid_points);
    let threshold = opts
        .threshold
        .unwrap_or_else(|| default_threshold(cfg, opts.mode));
    let mut uts = Vec::with_capacity(layout.num_uts());
    for s in 0..layout.num_uts() {
        let profile = delay_energy_profile(xhat, layout, s, opts.mode)?;
        let paths = detect_paths(&profile, threshold)
            .into_iter()
            .map(|tap| {
                let nu = estimate_doppler(xhat, layout, s, tap, &grid, cfg.delta_f);
                PathEstimate {
                    l_tau: tap,
                    nu,
                    gains: estimate_gains(xhat, layout, s, tap, nu, cfg.delta_f),
                }
            })
            .collect();
        uts.push(paths);
    }
    Ok(ChannelEstimate { uts })
}

/// `H̃_{q,s} = Σ_i h̃_{q,s,i} Ã_{s,i}` as a channel without geometry.
pub fn assemble_estimate(est: &ChannelEstimate, cfg: &SystemConfig) -> Result<MultiUserChannel> {
    let uts = est
        .uts
        .iter()
        .map(|paths| {
            paths
                .iter()
                .map(|p| {
                    Ok(PathTerm {
                        op: build_operator(p.l_tau, p.nu, cfg.m, cfg.n, cfg.delta_f)?,
                        gains: p.gains.clone(),
                        geometry: None,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    MultiUserChannel::from_terms(cfg, uts)
}

/// `Σ_{q,s} ‖H̃_{q,s} - H_{q,s}‖_F² / Σ_{q,s} ‖H_{q,s}‖_F²`.
pub fn channel_nmse(truth: &MultiUserChannel, est: &MultiUserChannel) -> Result<f64> {
    let mut err = 0.0;
    let mut total = 0.0;
    for s in 0..truth.num_uts() {
        let t = truth.paths(s)?;
        let e = if s < est.num_uts() {
            est.paths(s)?
        } else {
            &[]
        };
        let terms: Vec<(&PathTerm, f64)> = t
            .iter()
            .map(|p| (p, -1.0))
            .chain(e.iter().map(|p| (p, 1.0)))
            .collect();
        let tr: Vec<Vec<Complex64>> = terms
            .iter()
            .map(|(a, _)| {
                terms
                    .iter()
                    .map(|(b, _)| a.op.frobenius_inner(&b.op))
                    .collect()
            })
            .collect();
        for q in 0..truth.q() {
            for (a, (pa, sa)) in terms.iter().enumerate() {
                for (b, (pb, sb)) in terms.iter().enumerate() {
                    let w = (pa.gains[q] * sa).conj() * pb.gains[q] * sb * tr[a][b];
                    err += w.re;
                    if a < t.len() && b < t.len() {
                        total += w.re;
                    }
                }
            }
        }
    }
    if total <= 0.0 {
        return Err(Error::Degenerate("channel has zero energy".into()));
    }
    Ok(err / total)
}

/// Per-antenna-normalized least-squares objective at the given parameters,
/// `(1/Q) Σ_q ‖x̂_q - √E_p Σ h ã‖²`, and its large-array approximation that
/// drops every cross-path term.
pub fn pilot_objectives(
    xhat: &[DdGrid],
    layout: &PilotLayout,
    params: &ChannelParams,
    cfg: &SystemConfig,
) -> Result<(f64, f64)> {
    let q_count = xhat.len();
    let amp = layout.ep.sqrt();
    let mut exact = 0.0;
    let mut approx = 0.0;
    let mut model = vec![DdGrid::zeros(layout.m, layout.n); q_count];
    for s in 0..params.num_uts() {
        layout.check(s)?;
        for (i, p) in params.uts[s].paths.iter().enumerate() {
            let col = pilot_column(layout, s, p.nu, cfg.delta_f);
            let row = layout.l[s] + p.l_tau;
            let proj = project(xhat, layout, s, p.l_tau, p.nu, cfg.delta_f);
            let col_energy: f64 = col.iter().map(|c| c.norm_sqr()).sum();
            for q in 0..q_count {
                let h = antenna_path_gain(params, q, s, i, cfg)?;
                approx +=
                    -2.0 * amp * (h * proj[q].conj()).re + layout.ep * h.norm_sqr() * col_energy;
                for (k, c) in col.iter().enumerate() {
                    model[q].as_mut_slice()[k * layout.m + row] += h * amp * c;
                }
            }
        }
    }
    for (g, mdl) in xhat.iter().zip(&model) {
        let x2 = g.norm_sqr();
        approx += x2;
        exact += g
            .as_slice()
            .iter()
            .zip(mdl.as_slice())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>();
    }
    let q = q_count.max(1) as f64;
    Ok((exact / q, approx / q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::PathParams;

    fn cfg(m: usize, k: usize) -> SystemConfig {
        SystemConfig {
            m,
            n: 4,
            k,
            qh: 2,
            qv: 2,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn layout_places_pilots_on_spaced_delays() {
        let c = cfg(330, 4);
        let layout = PilotLayout::new(&c).unwrap();
        assert_eq!(layout.l, vec![0, 82, 164, 246]);
        assert_eq!(layout.k, vec![0, 1, 2, 3]);
        assert_eq!(layout.span, 24);

        let one = PilotLayout::new(&cfg(330, 1)).unwrap();
        let frames = make_pilot_frames(&one);
        assert_eq!(frames[0].get(0, 0), Complex64::new(one.ep.sqrt(), 0.0));

        assert!(matches!(
            PilotLayout::new(&cfg(330, 14)),
            Err(Error::PilotOverlap {
                spacing: 23,
                cp_len: 24
            })
        ));
    }

    #[test]
    fn grid_is_inclusive() {
        let g = doppler_grid(1600.0, 400);
        assert_eq!(g.len(), 400);
        assert_eq!(g[0], -1600.0);
        assert!((g[399] - 1600.0).abs() < 1e-9);
        assert_eq!(doppler_grid(5.0, 1), vec![0.0]);
    }

    #[test]
    fn zero_doppler_pilot_stays_on_one_cell() {
        let c = cfg(64, 1);
        let layout = PilotLayout::new(&c).unwrap();
        let params = ChannelParams::from_paths(vec![vec![PathParams {
            theta: 1.2,
            phi: 0.3,
            tau: 0.0,
            l_tau: 3,
            nu: 0.0,
            g: Complex64::new(0.5, 0.5),
            beta: 1.0,
        }]]);
        let xhat = receive_pilots(&layout, &params, &c, None).unwrap();
        for g in &xhat {
            for k in 0..c.n {
                for l in 0..c.m {
                    let v = g.get(k, l).norm();
                    if (k, l) == (0, 3) {
                        assert!(
                            (v - (0.5f64.sqrt() * layout.ep.sqrt())).abs()
                                < 1e-9 * layout.ep.sqrt()
                        );
                    } else {
                        assert!(v < 1e-9);
                    }
                }
            }
        }
    }
}
