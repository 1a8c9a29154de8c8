//! Spectral efficiency of the DD precoder: per-symbol detector SINR, the
//! MMSE-SIC log-det bound, the large-array closed form, and the scalar
//! equalizer used for symbol-error runs.
//!
//! With `a = ρMN/η` the detector sees on symbol `r` of UT `s`
//!
//! ```text
//! SINR = |γ_rr|² / (1/a + Σ_{p≠r} |γ_{ss,rp}|² + Σ_{s'≠s} Σ_p |γ_{ss',rp}|²)
//! ```
//!
//! where `γ` are entries of `G_{s,s'} = Σ_q H_{q,s} H^H_{q,s'}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, SystemConfig};
use crate::dd_operator::{DdGrid, GramMatrix, GramMode, MultiUserChannel};
use crate::error::{Error, Result};
use crate::linalg::{hpd_logdet, CMatrix};
use crate::precoder::Qam;

/// Signal and per-source noise powers of one detected symbol, all scaled
/// by `η / (E_T / N0)` relative to physical powers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrTerms {
    pub signal: f64,
    pub awgn: f64,
    pub isi: f64,
    pub mui: f64,
}

impl SinrTerms {
    pub fn denominator(&self) -> f64 {
        self.awgn + self.isi + self.mui
    }

    pub fn sinr(&self) -> f64 {
        self.signal / self.denominator()
    }

    pub fn rate(&self) -> f64 {
        (1.0 + self.sinr()).log2()
    }
}

/// Detector SINR terms of every symbol of UT `s` from
/// `grams[s'] = G_{s,s'}`, `s' = 0..K`.
pub fn lcd_sinr_all(grams: &[GramMatrix], s: usize, rho: f64, eta: f64) -> Result<Vec<SinrTerms>> {
    let own = grams.get(s).ok_or(Error::IndexOutOfRange {
        what: "UT",
        index: s,
        len: grams.len(),
    })?;
    let mn = own.mn();
    let awgn = eta / (rho * mn as f64);
    let own_stats = own.row_stats();
    let mut mui = vec![0.0; mn];
    for (sp, g) in grams.iter().enumerate() {
        if sp == s {
            continue;
        }
        if g.mn() != mn {
            return Err(Error::DimensionMismatch {
                expected: mn,
                got: g.mn(),
            });
        }
        for (acc, e) in mui.iter_mut().zip(g.row_stats().energy) {
            *acc += e;
        }
    }
    let mut out = Vec::with_capacity(mn);
    for r in 0..mn {
        let signal = own_stats.diagonal[r].norm_sqr();
        if signal == 0.0 {
            return Err(Error::DegenerateChannel { ut: s, symbol: r });
        }
        out.push(SinrTerms {
            signal,
            awgn,
            isi: own_stats.off_diagonal[r],
            mui: mui[r],
        });
    }
    Ok(out)
}

/// Detector SINR terms of symbol `r` of UT `s`.
pub fn lcd_sinr(grams: &[GramMatrix], s: usize, r: usize, rho: f64, eta: f64) -> Result<SinrTerms> {
    let all = lcd_sinr_all(grams, s, rho, eta)?;
    let len = all.len();
    all.get(r).copied().ok_or(Error::IndexOutOfRange {
        what: "symbol",
        index: r,
        len,
    })
}

/// SE of one UT from its per-symbol terms: mean of `log2(1 + SINR)` over
/// the frame divided by the CP overhead.
pub fn rate_from_terms(terms: &[SinrTerms], overhead: f64) -> f64 {
    terms.iter().map(SinrTerms::rate).sum::<f64>() / (terms.len() as f64 * overhead)
}

/// Per-UT and sum detector SE of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcdResult {
    pub per_ut: Vec<f64>,
    pub sum: f64,
    /// `terms[s][r]`.
    pub terms: Vec<Vec<SinrTerms>>,
}

/// Detector SE when the precoder uses `precoder_channel` (true CSI when
/// `None`) and the symbols propagate through `channel`.
pub fn lcd_analysis(
    channel: &MultiUserChannel,
    precoder_channel: Option<&MultiUserChannel>,
    rho: f64,
    eta: f64,
    cfg: &SystemConfig,
    mode: GramMode,
) -> Result<LcdResult> {
    let k = channel.num_uts();
    let pre = precoder_channel.unwrap_or(channel);
    let per_ut_terms: Vec<Result<Vec<SinrTerms>>> = crate::par::map_indexed(k, |s| {
        let grams = (0..k)
            .map(|sp| channel.gram_with(s, pre, sp, mode))
            .collect::<Result<Vec<_>>>()?;
        lcd_sinr_all(&grams, s, rho, eta)
    });
    let terms = per_ut_terms.into_iter().collect::<Result<Vec<_>>>()?;
    let overhead = cfg.overhead();
    let per_ut: Vec<f64> = terms.iter().map(|t| rate_from_terms(t, overhead)).collect();
    Ok(LcdResult {
        sum: per_ut.iter().sum(),
        per_ut,
        terms,
    })
}

/// Detector SE of a sampled realization with perfect CSI.
pub fn lcd_rate(params: &ChannelParams, cfg: &SystemConfig) -> Result<LcdResult> {
    let channel = MultiUserChannel::from_params(params, cfg)?;
    lcd_analysis(
        &channel,
        None,
        cfg.rho,
        params.eta(cfg),
        cfg,
        GramMode::Factorized,
    )
}

/// MMSE-SIC SE per UT and summed, from `grams[s][s'] = G_{s,s'}`.
///
/// `C_s = [logdet(D + S) - logdet(D)] / (MN overhead ln 2)` with
/// `D = I + a Σ_{s'≠s} G G^H` and `S = a G_ss G_ss^H`.
pub fn mmse_sic_capacity(
    grams: &[Vec<GramMatrix>],
    rho: f64,
    eta: f64,
    cfg: &SystemConfig,
) -> Result<(Vec<f64>, f64)> {
    let k = grams.len();
    let overhead = cfg.overhead();
    let per_ut = crate::par::map_indexed(k, |s| -> Result<f64> {
        let row = &grams[s];
        if row.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: row.len(),
            });
        }
        let mn = row[s].mn();
        if rho == 0.0 {
            return Ok(0.0);
        }
        let a = Complex64::new(rho * mn as f64 / eta, 0.0);
        let mut d = CMatrix::identity(mn);
        for (sp, g) in row.iter().enumerate() {
            if sp == s {
                continue;
            }
            let dense = g.to_dense();
            d.add_scaled(a, &dense.mul_adjoint(&dense)?)?;
        }
        let own = row[s].to_dense();
        let mut ds = d.clone();
        ds.add_scaled(a, &own.mul_adjoint(&own)?)?;
        let gain = hpd_logdet(ds)? - hpd_logdet(d)?;
        Ok(gain / (mn as f64 * overhead * std::f64::consts::LN_2))
    });
    let per_ut = per_ut.into_iter().collect::<Result<Vec<_>>>()?;
    let sum = per_ut.iter().sum();
    Ok((per_ut, sum))
}

/// All `K x K` Gram matrices of a channel.
pub fn all_grams(channel: &MultiUserChannel, mode: GramMode) -> Result<Vec<Vec<GramMatrix>>> {
    let k = channel.num_uts();
    (0..k)
        .map(|s| (0..k).map(|sp| channel.gram(s, sp, mode)).collect())
        .collect()
}

/// Large-array per-symbol rate `log2(1 + ρQ (Σ_i |g_{s,i}|²)² / Σ β)`, one
/// value per UT, without the CP overhead.
pub fn large_q_rate(params: &ChannelParams, cfg: &SystemConfig) -> Vec<f64> {
    let rho_q = cfg.rho * cfg.q() as f64;
    let total_beta = params.total_beta();
    (0..params.num_uts())
        .map(|s| {
            let e = params.gain_energy(s);
            (1.0 + rho_q * e * e / total_beta).log2()
        })
        .collect()
}

/// Soft estimates `û_r = x̂_r / (sqrt(E_T/η) γ_rr)`.
pub fn lcd_equalize(xhat: &DdGrid, gamma_diag: &[Complex64], e_t: f64, eta: f64) -> Result<DdGrid> {
    if gamma_diag.len() != xhat.as_slice().len() {
        return Err(Error::DimensionMismatch {
            expected: xhat.as_slice().len(),
            got: gamma_diag.len(),
        });
    }
    let c = (e_t / eta).sqrt();
    let mut out = Vec::with_capacity(gamma_diag.len());
    for (r, (x, g)) in xhat.as_slice().iter().zip(gamma_diag).enumerate() {
        let scale = c * g;
        if scale == Complex64::new(0.0, 0.0) {
            return Err(Error::DegenerateChannel { ut: 0, symbol: r });
        }
        out.push(x / scale);
    }
    DdGrid::from_vec(xhat.m(), xhat.n(), out)
}

/// Nearest-point decisions on a grid of soft estimates.
pub fn slice_qam(soft: &DdGrid, qam: &Qam) -> Vec<usize> {
    soft.as_slice().iter().map(|z| qam.slice(*z)).collect()
}

/// Gaussian tail `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Symbol error rate of unit-energy 4-QAM on an AWGN channel at the given
/// SINR.
pub fn qam4_ser(sinr: f64) -> f64 {
    let p = q_function(sinr.sqrt());
    2.0 * p - p * p
}

/// SE of one UT in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtSe {
    pub lcd: f64,
    pub mmse_sic: Option<f64>,
    /// Large-array closed form divided by the CP overhead.
    pub large_q: f64,
}

/// Per-UT and sum SE values of one realization or a Monte-Carlo average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    pub system: String,
    pub uts: Vec<UtSe>,
    pub sum_lcd: f64,
    pub sum_mmse_sic: Option<f64>,
    pub sum_large_q: f64,
    pub overhead: f64,
    /// `sinr_terms[s][r]` when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinr_terms: Option<Vec<Vec<SinrTerms>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AnalysisOptions {
    pub mmse_sic: bool,
    pub keep_terms: bool,
    pub mode: GramMode,
}

/// Full SE report of one realization with perfect CSI.
pub fn analyze(
    params: &ChannelParams,
    cfg: &SystemConfig,
    opts: AnalysisOptions,
) -> Result<SeReport> {
    let channel = MultiUserChannel::from_params(params, cfg)?;
    let eta = params.eta(cfg);
    let lcd = lcd_analysis(&channel, None, cfg.rho, eta, cfg, opts.mode)?;
    let mmse = if opts.mmse_sic {
        Some(mmse_sic_capacity(
            &all_grams(&channel, opts.mode)?,
            cfg.rho,
            eta,
            cfg,
        )?)
    } else {
        None
    };
    let overhead = cfg.overhead();
    let large_q: Vec<f64> = large_q_rate(params, cfg)
        .into_iter()
        .map(|v| v / overhead)
        .collect();
    let uts = (0..params.num_uts())
        .map(|s| UtSe {
            lcd: lcd.per_ut[s],
            mmse_sic: mmse.as_ref().map(|(v, _)| v[s]),
            large_q: large_q[s],
        })
        .collect();
    Ok(SeReport {
        system: "otfs".into(),
        uts,
        sum_lcd: lcd.sum,
        sum_mmse_sic: mmse.map(|(_, s)| s),
        sum_large_q: large_q.iter().sum(),
        overhead,
        sinr_terms: opts.keep_terms.then_some(lcd.terms),
    })
}
