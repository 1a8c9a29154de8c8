//! System constants, channel parameter sampling and URA path gains.
//!
//! A realization [`ChannelParams`] holds, for every UT, a list of discrete
//! paths (angles of departure, integer delay tap, Doppler shift, complex
//! gain). Delays follow the exponential RMa-NLOS style profile
//! `tau = -r_tau * mu_tau * ln(X)` with power weights
//! `exp(-tau (r_tau - 1) / (r_tau mu_tau))`, Dopplers are Jakes-like
//! `nu_max cos(alpha)`.
//!
//! All antenna, UT and path indices are zero based.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base station height used by the RMa-NLOS distance law (m).
pub const RMA_BS_HEIGHT_M: f64 = 35.0;
/// UT height used by the RMa-NLOS distance law (m).
pub const RMA_UT_HEIGHT_M: f64 = 1.5;

const MAX_ANGLE_RETRIES: usize = 64;

/// Deterministic system constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Delay bins (subcarriers).
    pub m: usize,
    /// Doppler bins (OTFS symbols per frame).
    pub n: usize,
    /// Subcarrier spacing in Hz.
    pub delta_f: f64,
    /// Carrier frequency in Hz.
    pub fc: f64,
    /// URA columns.
    pub qh: usize,
    /// URA rows.
    pub qv: usize,
    /// Antenna spacing in carrier wavelengths.
    pub d_over_lambda: f64,
    /// Number of UTs.
    pub k: usize,
    /// Maximum path delay, also the CP duration, in seconds.
    pub tau_max: f64,
    /// Average transmit power over receiver noise power, `E_T / (M N N0)`.
    pub rho: f64,
    /// Noise PSD, the reference unit.
    pub n0: f64,
    /// Uplink pilot energy.
    pub ep: f64,
    /// Points of the Doppler search grid used by the channel estimator.
    pub doppler_grid_points: usize,
    pub cell_radius_m: f64,
    pub exclusion_radius_m: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let (m, n) = (330, 4);
        Self {
            m,
            n,
            delta_f: 15e3,
            fc: 4.8e9,
            qh: 14,
            qv: 14,
            d_over_lambda: 0.5,
            k: 4,
            tau_max: 4.7e-6,
            rho: 0.1 / 196.0,
            n0: 1.0,
            ep: 10f64.powf(2.6) * (m * n) as f64,
            doppler_grid_points: 400,
            cell_radius_m: 5000.0,
            exclusion_radius_m: 35.0,
        }
    }
}

impl SystemConfig {
    /// Total number of BS antennas.
    pub fn q(&self) -> usize {
        self.qh * self.qv
    }

    /// Number of DD resource elements per frame.
    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    /// OTFS symbol period `T = 1 / delta_f`.
    pub fn symbol_period(&self) -> f64 {
        1.0 / self.delta_f
    }

    /// Delay taps spanned by the maximum delay, `ceil(tau_max M delta_f)`.
    pub fn cp_len(&self) -> usize {
        let taps = self.tau_max * self.m as f64 * self.delta_f;
        // guard against 24.000000000004 style rounding
        (taps - 1e-9).ceil().max(0.0) as usize
    }

    /// Time-bandwidth overhead factor `1 + tau_max / (N T)`.
    pub fn overhead(&self) -> f64 {
        1.0 + self.tau_max * self.delta_f / self.n as f64
    }

    /// Average transmit energy per frame implied by `rho`.
    pub fn frame_energy(&self) -> f64 {
        self.rho * self.mn() as f64 * self.n0
    }

    /// Pilot SNR `E_p / (M N N0)`.
    pub fn rho_p(&self) -> f64 {
        self.ep / (self.mn() as f64 * self.n0)
    }

    /// Sets `rho` so that `rho * Q` equals the given value.
    pub fn with_rho_q(mut self, rho_q: f64) -> Self {
        self.rho = rho_q / self.q() as f64;
        self
    }

    /// Sets the pilot energy from a pilot SNR given in dB.
    pub fn with_rho_p_db(mut self, rho_p_db: f64) -> Self {
        self.ep = 10f64.powf(rho_p_db / 10.0) * self.mn() as f64 * self.n0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.m == 0 || self.n == 0 || self.qh == 0 || self.qv == 0 || self.k == 0 {
            return bad("M, N, Qh, Qv and K must all be at least 1");
        }
        if !(self.delta_f > 0.0) || !self.delta_f.is_finite() {
            return bad("delta_f must be positive");
        }
        if !(self.tau_max >= 0.0) {
            return bad("tau_max must be non-negative");
        }
        if self.cp_len() >= self.m {
            return bad("CP must be shorter than one delay span (ceil(tau_max M delta_f) < M)");
        }
        if !(self.rho >= 0.0) || !(self.n0 > 0.0) || !(self.ep >= 0.0) {
            return bad("rho and ep must be non-negative and n0 positive");
        }
        if !(self.d_over_lambda > 0.0) {
            return bad("d_over_lambda must be positive");
        }
        if self.exclusion_radius_m >= self.cell_radius_m || self.exclusion_radius_m < 0.0 {
            return bad("exclusion radius must lie in [0, cell radius)");
        }
        Ok(())
    }
}

/// How per-UT path loss is assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathlossMode {
    /// Every UT has unit total path gain (cell-edge reference).
    Unit,
    /// RMa-NLOS distance law normalized to unity at the cell edge, with UT
    /// distances drawn according to [`Placement`].
    RmaNlosNormalized,
}

/// How UT distances are drawn between the exclusion radius and the cell
/// edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Uniform over the annulus area.
    AreaUniform,
    /// Uniform in radius.
    RadiusUniform,
}

/// Power-delay profile, Doppler and angle model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    /// Mean delay spread in seconds.
    pub mu_tau: f64,
    /// Delay scaling factor.
    pub r_tau: f64,
    /// Paths per UT.
    pub num_paths: usize,
    /// Maximum Doppler shift in Hz.
    pub nu_max: f64,
    pub pathloss_mode: PathlossMode,
    /// Log-normal shadow fading standard deviation in dB, applied on top of
    /// the distance law in `rma_nlos_normalized` mode.
    pub shadow_fading_db: f64,
    pub placement: Placement,
    pub zenith_min_deg: f64,
    pub zenith_max_deg: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            mu_tau: 0.37e-6,
            r_tau: 1.7,
            num_paths: 10,
            nu_max: 0.0,
            pathloss_mode: PathlossMode::Unit,
            shadow_fading_db: 8.0,
            placement: Placement::AreaUniform,
            zenith_min_deg: 60.0,
            zenith_max_deg: 120.0,
        }
    }
}

impl ProfileConfig {
    /// Distance-dependent scenario: normalized RMa-NLOS path loss with 8 dB
    /// shadowing, UTs uniform over the cell area.
    pub fn rma_scenario() -> Self {
        Self {
            pathloss_mode: PathlossMode::RmaNlosNormalized,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.r_tau >= 1.0) {
            return bad("r_tau must be at least 1");
        }
        if self.num_paths == 0 {
            return bad("num_paths must be at least 1");
        }
        if !(self.mu_tau >= 0.0) || !(self.nu_max >= 0.0) || !(self.shadow_fading_db >= 0.0) {
            return bad("mu_tau and nu_max must be non-negative");
        }
        if !(self.zenith_min_deg <= self.zenith_max_deg) {
            return bad("zenith sector is empty");
        }
        Ok(())
    }
}

/// One propagation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// Zenith angle of departure (rad).
    pub theta: f64,
    /// Azimuth angle of departure (rad).
    pub phi: f64,
    /// Continuous delay before quantization (s).
    pub tau: f64,
    /// Integer delay tap `round(tau M delta_f)`.
    pub l_tau: usize,
    /// Doppler shift (Hz).
    pub nu: f64,
    pub g: Complex64,
    /// Gain variance `E|g|^2`.
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtParams {
    pub paths: Vec<PathParams>,
    /// Total path gain `sum_i beta_i`.
    pub path_loss: f64,
    /// Distance to the BS, when the UT was dropped geometrically.
    pub distance_m: Option<f64>,
}

/// One realization of the random channel parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub uts: Vec<UtParams>,
}

impl ChannelParams {
    pub fn num_uts(&self) -> usize {
        self.uts.len()
    }

    pub fn path(&self, s: usize, i: usize) -> Result<&PathParams> {
        let ut = self.uts.get(s).ok_or(Error::IndexOutOfRange {
            what: "UT",
            index: s,
            len: self.uts.len(),
        })?;
        ut.paths.get(i).ok_or(Error::IndexOutOfRange {
            what: "path",
            index: i,
            len: ut.paths.len(),
        })
    }

    /// `sum_s sum_i beta_{s,i}`.
    pub fn total_beta(&self) -> f64 {
        self.uts
            .iter()
            .flat_map(|ut| ut.paths.iter())
            .map(|p| p.beta)
            .sum()
    }

    /// Precoder normalization `eta = Q M N sum beta`.
    pub fn eta(&self, cfg: &SystemConfig) -> f64 {
        (cfg.q() * cfg.mn()) as f64 * self.total_beta()
    }

    /// `sum_i |g_{s,i}|^2`.
    pub fn gain_energy(&self, s: usize) -> f64 {
        self.uts[s].paths.iter().map(|p| p.g.norm_sqr()).sum()
    }

    /// Largest integer delay tap over all paths.
    pub fn max_tap(&self) -> usize {
        self.uts
            .iter()
            .flat_map(|ut| ut.paths.iter())
            .map(|p| p.l_tau)
            .max()
            .unwrap_or(0)
    }

    /// Builds a realization from explicit paths, one list per UT.
    /// The path loss of each UT is the sum of its `beta` values.
    pub fn from_paths(uts: Vec<Vec<PathParams>>) -> Self {
        Self {
            uts: uts
                .into_iter()
                .map(|paths| UtParams {
                    path_loss: paths.iter().map(|p| p.beta).sum(),
                    paths,
                    distance_m: None,
                })
                .collect(),
        }
    }
}

/// Total path gain of a UT at `distance_m` under the RMa-NLOS distance law,
/// normalized to one at the cell edge.
pub fn rma_nlos_normalized_gain(distance_m: f64, cell_radius_m: f64) -> f64 {
    let dh = RMA_BS_HEIGHT_M - RMA_UT_HEIGHT_M;
    let d3 = (distance_m * distance_m + dh * dh).sqrt();
    let r3 = (cell_radius_m * cell_radius_m + dh * dh).sqrt();
    let slope_db = 43.42 - 3.1 * RMA_BS_HEIGHT_M.log10();
    10f64.powf(-slope_db * (d3.log10() - r3.log10()) / 10.0)
}

/// Samples a channel realization from a seed.
pub fn sample_channel_params(
    cfg: &SystemConfig,
    profile: &ProfileConfig,
    seed: u64,
) -> Result<ChannelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_channel_params_with(cfg, profile, &mut rng)
}

/// Samples a channel realization from a caller-owned generator.
///
/// The number of draws consumed does not depend on `nu_max`, `r_tau` or
/// the path-loss mode, so sweeps over those axes see matched streams.
pub fn sample_channel_params_with<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    profile: &ProfileConfig,
    rng: &mut R,
) -> Result<ChannelParams> {
    cfg.validate()?;
    profile.validate()?;

    let cp_len = cfg.cp_len();
    let taps_per_second = cfg.m as f64 * cfg.delta_f;
    let zen_lo = profile.zenith_min_deg.to_radians();
    let zen_hi = profile.zenith_max_deg.to_radians();
    let mut used_angles: Vec<(f64, f64)> = Vec::with_capacity(cfg.k * profile.num_paths);

    let mut uts = Vec::with_capacity(cfg.k);
    for _ in 0..cfg.k {
        let r0 = cfg.exclusion_radius_m;
        let r1 = cfg.cell_radius_m;
        let drop: f64 = rng.random();
        let distance = match profile.placement {
            Placement::AreaUniform => (r0 * r0 + drop * (r1 * r1 - r0 * r0)).sqrt(),
            Placement::RadiusUniform => r0 + drop * (r1 - r0),
        };
        let shadow_db = profile.shadow_fading_db * rng.sample::<f64, _>(StandardNormal);
        let path_loss = match profile.pathloss_mode {
            PathlossMode::Unit => 1.0,
            PathlossMode::RmaNlosNormalized => {
                rma_nlos_normalized_gain(distance, r1) * 10f64.powf(-shadow_db / 10.0)
            }
        };

        let mut paths = Vec::with_capacity(profile.num_paths);
        let mut weights = Vec::with_capacity(profile.num_paths);
        for _ in 0..profile.num_paths {
            // X in (0, 1]
            let x: f64 = 1.0 - rng.random::<f64>();
            let tau = -profile.r_tau * profile.mu_tau * x.ln();
            let l_tau = ((tau * taps_per_second + 0.5).floor().max(0.0) as usize).min(cp_len);
            let weight = if profile.r_tau == 1.0 || profile.mu_tau == 0.0 {
                1.0
            } else {
                (-tau * (profile.r_tau - 1.0) / (profile.r_tau * profile.mu_tau)).exp()
            };
            let alpha = 2.0 * PI * rng.random::<f64>();
            let nu = profile.nu_max * alpha.cos();

            let mut angles = None;
            for _ in 0..MAX_ANGLE_RETRIES {
                let phi = 2.0 * PI * rng.random::<f64>();
                let theta = zen_lo + (zen_hi - zen_lo) * rng.random::<f64>();
                if !used_angles.iter().any(|&(t, p)| t == theta && p == phi) {
                    angles = Some((theta, phi));
                    break;
                }
            }
            let (theta, phi) = angles.ok_or_else(|| {
                Error::Degenerate(format!(
                    "could not draw {} distinct departure angles",
                    profile.num_paths
                ))
            })?;
            used_angles.push((theta, phi));

            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            paths.push(PathParams {
                theta,
                phi,
                tau,
                l_tau,
                nu,
                // unit-variance draw, scaled below once beta is known
                g: Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2,
                beta: 0.0,
            });
            weights.push(weight);
        }

        let weight_sum: f64 = weights.iter().sum();
        for (p, w) in paths.iter_mut().zip(&weights) {
            p.beta = path_loss * w / weight_sum;
            p.g *= p.beta.sqrt();
        }
        uts.push(UtParams {
            paths,
            path_loss,
            distance_m: match profile.pathloss_mode {
                PathlossMode::Unit => None,
                PathlossMode::RmaNlosNormalized => Some(distance),
            },
        });
    }
    Ok(ChannelParams { uts })
}

/// URA steering phase factor of antenna `q` for departure angles
/// `(theta, phi)`; unit modulus.
pub fn steering(theta: f64, phi: f64, q: usize, cfg: &SystemConfig) -> Complex64 {
    let col = (q % cfg.qh) as f64;
    let row = (q / cfg.qh) as f64;
    let arg = 2.0 * PI * cfg.d_over_lambda * (col * phi.sin() * theta.sin() + row * theta.cos());
    Complex64::from_polar(1.0, arg)
}

/// Complex gain `h_{q,s,i}` between antenna `q` and UT `s` along path `i`.
pub fn antenna_path_gain(
    params: &ChannelParams,
    q: usize,
    s: usize,
    i: usize,
    cfg: &SystemConfig,
) -> Result<Complex64> {
    if q >= cfg.q() {
        return Err(Error::IndexOutOfRange {
            what: "antenna",
            index: q,
            len: cfg.q(),
        });
    }
    let p = params.path(s, i)?;
    Ok(p.g * steering(p.theta, p.phi, q, cfg))
}
