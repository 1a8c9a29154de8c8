//! DD-domain multi-user precoder `x_q = sqrt(E_T/η) Σ_s H^H_{q,s} u_s` and
//! its energy accounting.
//!
//! The precoder is evaluated path by path: `v_{s,i} = A^H_{s,i} u_s` is
//! shared by all antennas, after which each antenna only mixes the `v`
//! vectors with its conjugate gains.

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channel_params, ProfileConfig, SystemConfig};
use crate::dd_operator::{path_pair_weight, DdGrid, EffectiveChannel, GramMode, MultiUserChannel};
use crate::error::{Error, Result};
use crate::seed;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Produces unit-variance information symbols.
pub trait SymbolSource {
    fn fill(&mut self, rng: &mut dyn RngCore, out: &mut [Complex64]);
}

/// Circularly symmetric complex Gaussian symbols, `CN(0, 1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianSymbols;

impl SymbolSource for GaussianSymbols {
    fn fill(&mut self, rng: &mut dyn RngCore, out: &mut [Complex64]) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for v in out {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v = Complex64::new(re * s, im * s);
        }
    }
}

/// Square QAM with unit average energy and Gray-free natural labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Qam {
    side: usize,
    scale: f64,
}

impl Qam {
    pub fn new(order: usize) -> Result<Self> {
        let side = (order as f64).sqrt().round() as usize;
        if side < 2 || side * side != order {
            return Err(Error::InvalidConfig(format!(
                "QAM order {order} is not a square of at least 4"
            )));
        }
        // mean of (2i - side + 1)^2 over one axis, doubled for I and Q
        let axis = (side * side - 1) as f64 / 3.0;
        Ok(Self {
            side,
            scale: 1.0 / (2.0 * axis).sqrt(),
        })
    }

    pub fn order(&self) -> usize {
        self.side * self.side
    }

    fn level(&self, i: usize) -> f64 {
        (2.0 * i as f64 - self.side as f64 + 1.0) * self.scale
    }

    pub fn point(&self, index: usize) -> Complex64 {
        Complex64::new(self.level(index % self.side), self.level(index / self.side))
    }

    fn nearest_level(&self, x: f64) -> usize {
        let i = ((x / self.scale + self.side as f64 - 1.0) / 2.0).round();
        i.clamp(0.0, (self.side - 1) as f64) as usize
    }

    /// Index of the nearest constellation point.
    pub fn slice(&self, z: Complex64) -> usize {
        self.nearest_level(z.im) * self.side + self.nearest_level(z.re)
    }
}

/// Uniformly drawn QAM symbols.
#[derive(Debug, Clone)]
pub struct QamSymbols {
    pub qam: Qam,
    /// Indices of the last filled symbols, for error counting.
    pub last_indices: Vec<usize>,
}

impl QamSymbols {
    pub fn new(order: usize) -> Result<Self> {
        Ok(Self {
            qam: Qam::new(order)?,
            last_indices: Vec::new(),
        })
    }
}

impl SymbolSource for QamSymbols {
    fn fill(&mut self, rng: &mut dyn RngCore, out: &mut [Complex64]) {
        self.last_indices.clear();
        for v in out {
            let idx = rng.random_range(0..self.qam.order());
            self.last_indices.push(idx);
            *v = self.qam.point(idx);
        }
    }
}

/// Draws one DD frame of symbols per UT.
pub fn draw_symbols(
    source: &mut dyn SymbolSource,
    rng: &mut dyn RngCore,
    k: usize,
    m: usize,
    n: usize,
) -> Vec<DdGrid> {
    (0..k)
        .map(|_| {
            let mut g = DdGrid::zeros(m, n);
            source.fill(rng, g.as_mut_slice());
            g
        })
        .collect()
}

/// Precoded DD frames, one per BS antenna.
#[derive(Debug, Clone)]
pub struct PrecodedFrame {
    pub x: Vec<DdGrid>,
    pub e_t: f64,
    pub eta: f64,
    /// Complex multiply-accumulates spent.
    pub macs: u64,
}

impl PrecodedFrame {
    pub fn energy(&self) -> f64 {
        self.x.iter().map(DdGrid::norm_sqr).sum()
    }
}

fn check_inputs(u: &[DdGrid], k: usize, m: usize, n: usize, e_t: f64, eta: f64) -> Result<()> {
    if u.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: u.len(),
        });
    }
    if !e_t.is_finite() || e_t < 0.0 {
        return Err(Error::NonFinite("frame energy"));
    }
    if !eta.is_finite() || !(eta > 0.0) {
        return Err(Error::NonFinite("normalization eta"));
    }
    for us in u {
        if us.m() != m || us.n() != n {
            return Err(Error::DimensionMismatch {
                expected: m * n,
                got: us.m() * us.n(),
            });
        }
        if us
            .as_slice()
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::NonFinite("information symbols"));
        }
    }
    Ok(())
}

/// `v_{s,i} = A^H_{s,i} u_s` for every path, flattened in `(s, i)` order.
fn path_adjoints(u: &[DdGrid], channel: &MultiUserChannel) -> Result<Vec<Vec<Complex64>>> {
    let mn = channel.mn();
    let mut out = Vec::new();
    for (s, us) in u.iter().enumerate() {
        for term in channel.paths(s)? {
            let mut v = vec![ZERO; mn];
            term.op
                .apply_adjoint_acc(Complex64::new(1.0, 0.0), us.as_slice(), &mut v);
            out.push(v);
        }
    }
    Ok(out)
}

/// Precodes one frame for all antennas.
pub fn precode(
    u: &[DdGrid],
    channel: &MultiUserChannel,
    e_t: f64,
    eta: f64,
) -> Result<PrecodedFrame> {
    let (m, n, q) = (channel.m(), channel.n(), channel.q());
    check_inputs(u, channel.num_uts(), m, n, e_t, eta)?;
    let c = (e_t / eta).sqrt();
    let v = path_adjoints(u, channel)?;
    let gains: Vec<&[Complex64]> = (0..channel.num_uts())
        .flat_map(|s| channel.paths(s).unwrap().iter().map(|t| t.gains.as_slice()))
        .collect();
    let x = crate::par::map_indexed(q, |qi| {
        let mut acc = vec![ZERO; m * n];
        for (vi, g) in v.iter().zip(&gains) {
            let w = c * g[qi].conj();
            for (a, b) in acc.iter_mut().zip(vi) {
                *a += w * b;
            }
        }
        DdGrid::from_vec(m, n, acc).expect("grid shape")
    });
    let paths = v.len() as u64;
    let mn = (m * n) as u64;
    Ok(PrecodedFrame {
        x,
        e_t,
        eta,
        macs: paths * mn * n as u64 + q as u64 * paths * mn,
    })
}

/// Precodes from explicit effective channels indexed `[q][s]`.
pub fn precode_with(
    u: &[DdGrid],
    channels: &[Vec<EffectiveChannel>],
    e_t: f64,
    eta: f64,
) -> Result<PrecodedFrame> {
    let (m, n) = u
        .first()
        .map(|g| (g.m(), g.n()))
        .ok_or(Error::MissingChannel { q: 0, s: 0 })?;
    check_inputs(u, u.len(), m, n, e_t, eta)?;
    let c = Complex64::new((e_t / eta).sqrt(), 0.0);
    let mut x = Vec::with_capacity(channels.len());
    let mut macs = 0u64;
    for (q, per_ut) in channels.iter().enumerate() {
        let mut acc = DdGrid::zeros(m, n);
        for (s, us) in u.iter().enumerate() {
            let h = per_ut.get(s).ok_or(Error::MissingChannel { q, s })?;
            let y = h.apply_adjoint(us)?;
            for (a, b) in acc.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *a += c * b;
            }
            macs += (h.terms().len() * m * n * n) as u64;
        }
        x.push(acc);
    }
    Ok(PrecodedFrame { x, e_t, eta, macs })
}

/// `Σ_q ‖x_q‖²` of the frame `precode` would produce, from the path
/// adjoints and the antenna sums of each path pair, without forming `x_q`.
pub fn precoded_energy(
    u: &[DdGrid],
    channel: &MultiUserChannel,
    e_t: f64,
    eta: f64,
) -> Result<f64> {
    check_inputs(u, channel.num_uts(), channel.m(), channel.n(), e_t, eta)?;
    let v = path_adjoints(u, channel)?;
    let terms: Vec<_> = (0..channel.num_uts())
        .flat_map(|s| channel.paths(s).unwrap().iter())
        .collect();
    let mut total = 0.0;
    for (a, ta) in terms.iter().enumerate() {
        for (b, tb) in terms.iter().enumerate().skip(a) {
            let w = path_pair_weight(ta, tb, channel, GramMode::Factorized);
            let inner: Complex64 = v[a].iter().zip(&v[b]).map(|(x, y)| x.conj() * y).sum();
            let term = (w * inner).re;
            total += if a == b { term } else { 2.0 * term };
        }
    }
    Ok(total * e_t / eta)
}

/// Monte-Carlo frame energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEnergy {
    /// Mean of `Σ_q ‖x_q‖²` over the trials.
    pub in_frame: f64,
    pub in_frame_stderr: f64,
    /// `in_frame` plus the analytic CP energy `E_T τ_max / (N T)`.
    pub with_cp: f64,
    /// Analytic CP-inclusive total `E_T (1 + τ_max / (N T))`.
    pub analytic_with_cp: f64,
    pub e_t: f64,
    pub trials: usize,
}

/// Average transmitted energy over fresh channel and Gaussian symbol draws.
pub fn mean_frame_energy(
    cfg: &SystemConfig,
    profile: &ProfileConfig,
    trials: usize,
    seed: u64,
) -> Result<FrameEnergy> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let e_t = cfg.frame_energy();
    let samples = crate::par::map_indexed(trials, |t| -> Result<f64> {
        let s = seed::substream(seed, 0, t as u64);
        let params = sample_channel_params(cfg, profile, s)?;
        let channel = MultiUserChannel::from_params(&params, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(s, seed::PURPOSE_SYMBOLS));
        let u = draw_symbols(&mut GaussianSymbols, &mut rng, cfg.k, cfg.m, cfg.n);
        precoded_energy(&u, &channel, e_t, params.eta(cfg))
    });
    let samples: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
    let nf = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    let cp_term = e_t * cfg.tau_max * cfg.delta_f / cfg.n as f64;
    Ok(FrameEnergy {
        in_frame: mean,
        in_frame_stderr: (var / nf).sqrt(),
        with_cp: mean + cp_term,
        analytic_with_cp: e_t * cfg.overhead(),
        e_t,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, PathParams};
    use crate::dd_operator::effective_channel;

    fn single_path_cfg() -> (SystemConfig, ChannelParams) {
        let cfg = SystemConfig {
            m: 6,
            n: 2,
            qh: 1,
            qv: 1,
            k: 1,
            tau_max: 0.0,
            ..Default::default()
        };
        let params = ChannelParams::from_paths(vec![vec![PathParams {
            theta: 1.0,
            phi: 0.5,
            tau: 0.0,
            l_tau: 0,
            nu: 0.0,
            g: Complex64::new(1.0, 0.0),
            beta: 1.0,
        }]]);
        (cfg, params)
    }

    #[test]
    fn identity_channel_scales_symbols() {
        let (cfg, params) = single_path_cfg();
        let ch = MultiUserChannel::from_params(&params, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = draw_symbols(&mut GaussianSymbols, &mut rng, 1, cfg.m, cfg.n);
        let eta = params.eta(&cfg);
        let f = precode(&u, &ch, 3.0, eta).unwrap();
        let mut want = u[0].clone();
        want.scale(Complex64::new((3.0 / eta).sqrt(), 0.0));
        assert!(f.x[0].max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn zero_symbols_give_zero_frames() {
        let (cfg, params) = single_path_cfg();
        let ch = MultiUserChannel::from_params(&params, &cfg).unwrap();
        let u = vec![DdGrid::zeros(cfg.m, cfg.n)];
        let f = precode(&u, &ch, 1.0, params.eta(&cfg)).unwrap();
        assert_eq!(f.energy(), 0.0);
    }

    #[test]
    fn input_errors() {
        let (cfg, params) = single_path_cfg();
        let ch = MultiUserChannel::from_params(&params, &cfg).unwrap();
        let mut bad = DdGrid::zeros(cfg.m, cfg.n);
        bad.set(0, 0, Complex64::new(f64::NAN, 0.0));
        assert!(matches!(
            precode(&[bad], &ch, 1.0, 1.0),
            Err(Error::NonFinite(_))
        ));
        let u = vec![DdGrid::zeros(cfg.m, cfg.n)];
        let missing: Vec<Vec<EffectiveChannel>> = vec![vec![]];
        assert!(matches!(
            precode_with(&u, &missing, 1.0, 1.0),
            Err(Error::MissingChannel { q: 0, s: 0 })
        ));
        let ok = vec![vec![effective_channel(&params, 0, 0, &cfg).unwrap()]];
        assert!(precode_with(&u, &ok, 1.0, 1.0).is_ok());
    }

    #[test]
    fn qam_is_unit_energy_and_slices_back() {
        for order in [4, 16, 64] {
            let qam = Qam::new(order).unwrap();
            let e: f64 = (0..order).map(|i| qam.point(i).norm_sqr()).sum::<f64>() / order as f64;
            assert!((e - 1.0).abs() < 1e-12);
            for i in 0..order {
                assert_eq!(qam.slice(qam.point(i) * 1.01), i);
            }
        }
        assert!(Qam::new(8).is_err());
    }

    #[test]
    fn cp_inclusive_energy_is_exact() {
        let cfg = SystemConfig {
            m: 16,
            n: 2,
            qh: 2,
            qv: 2,
            k: 2,
            ..Default::default()
        };
        let e = mean_frame_energy(&cfg, &ProfileConfig::default(), 4, 9).unwrap();
        assert_eq!(e.analytic_with_cp, cfg.frame_energy() * cfg.overhead());
        assert!(e.in_frame > 0.0);
    }
}
