//! Config-driven Monte-Carlo runner, result emission and the verification
//! suite behind the `verify` subcommand.
//!
//! A sweep is the Cartesian product of its axes, the last axis varying
//! fastest. Realization `r` at a point draws its channel from
//! `substream(seed, key, r)`, where `key` indexes the point over the axes
//! that change how channels are sampled. Sweeping Q, ρ or `nu_max` therefore
//! reuses the same realizations at every value.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chan_est::{
    assemble_estimate, channel_nmse, estimate_channel, receive_pilots, EstimatorOptions,
    PilotLayout,
};
use crate::channel::{
    sample_channel_params, ChannelParams, PathlossMode, ProfileConfig, SystemConfig,
};
use crate::dd_operator::{DdGrid, GramMode, MultiUserChannel};
use crate::error::{Error, Result};
use crate::ofdm_baseline::{ofdm_mrt_se, OfdmConfig};
use crate::precoder::{draw_symbols, precode, QamSymbols};
use crate::se_analysis::{
    analyze, lcd_analysis, lcd_equalize, qam4_ser, slice_qam, AnalysisOptions, SeReport, UtSe,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "fig4_near_opt")]
    Fig4NearOpt,
    #[serde(rename = "fig5_se_vs_doppler")]
    Fig5SeVsDoppler,
    #[serde(rename = "table2_grid")]
    Table2Grid,
    #[serde(rename = "fig6_per_ut_vs_K")]
    Fig6PerUtVsK,
    #[serde(rename = "fig7_se_vs_rtau")]
    Fig7SeVsRtau,
    #[serde(rename = "oracle_suite")]
    OracleSuite,
    #[serde(rename = "chanest_suite")]
    ChanestSuite,
    #[serde(rename = "ser_run")]
    SerRun,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::Fig4NearOpt,
        ExperimentId::Fig5SeVsDoppler,
        ExperimentId::Table2Grid,
        ExperimentId::Fig6PerUtVsK,
        ExperimentId::Fig7SeVsRtau,
        ExperimentId::OracleSuite,
        ExperimentId::ChanestSuite,
        ExperimentId::SerRun,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Fig4NearOpt => "fig4_near_opt",
            ExperimentId::Fig5SeVsDoppler => "fig5_se_vs_doppler",
            ExperimentId::Table2Grid => "table2_grid",
            ExperimentId::Fig6PerUtVsK => "fig6_per_ut_vs_K",
            ExperimentId::Fig7SeVsRtau => "fig7_se_vs_rtau",
            ExperimentId::OracleSuite => "oracle_suite",
            ExperimentId::ChanestSuite => "chanest_suite",
            ExperimentId::SerRun => "ser_run",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == name)
    }
}

/// Quantity swept along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    /// Total antennas; each value must be a perfect square `Qh = Qv`.
    Q,
    RhoQDb,
    NuMax,
    K,
    RTau,
    RhoPDb,
    NumPaths,
}

impl AxisName {
    fn label(self) -> &'static str {
        match self {
            AxisName::Q => "q",
            AxisName::RhoQDb => "rho_q_db",
            AxisName::NuMax => "nu_max",
            AxisName::K => "k",
            AxisName::RTau => "r_tau",
            AxisName::RhoPDb => "rho_p_db",
            AxisName::NumPaths => "num_paths",
        }
    }

    /// Whether the axis leaves the channel draws untouched.
    fn stream_neutral(self) -> bool {
        matches!(
            self,
            AxisName::Q | AxisName::RhoQDb | AxisName::NuMax | AxisName::RhoPDb
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: AxisName,
    pub values: Vec<f64>,
}

/// File names, relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub csv: Option<String>,
    pub json: Option<String>,
    pub dat: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub ofdm: OfdmConfig,
    #[serde(default)]
    pub axes: Vec<Axis>,
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Holds `ρQ` fixed at this value (dB) whatever `Q` is, unless an
    /// `rho_q_db` axis overrides it.
    #[serde(default)]
    pub rho_q_db: Option<f64>,
    #[serde(default)]
    pub mmse_sic: bool,
    /// Symbols per UT and realization for `ser_run`.
    #[serde(default = "default_ser_symbols")]
    pub ser_symbols: usize,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_ser_symbols() -> usize {
    100_000
}

fn axis(name: AxisName, values: &[f64]) -> Axis {
    Axis {
        name,
        values: values.to_vec(),
    }
}

fn desk_system() -> SystemConfig {
    SystemConfig {
        m: 32,
        n: 4,
        ep: 10f64.powf(2.6) * 128.0,
        ..SystemConfig::default()
    }
}

impl ExperimentSpec {
    /// Default spec of each experiment.
    pub fn preset(id: ExperimentId) -> Self {
        let base = Self {
            id,
            system: desk_system(),
            profile: ProfileConfig::rma_scenario(),
            ofdm: OfdmConfig::default(),
            axes: Vec::new(),
            realizations: 20,
            seed: 1,
            rho_q_db: None,
            mmse_sic: false,
            ser_symbols: default_ser_symbols(),
            outputs: Outputs::default(),
        };
        match id {
            ExperimentId::Fig4NearOpt => Self {
                axes: vec![
                    axis(AxisName::NuMax, &[0.0, 1600.0]),
                    axis(AxisName::Q, &[4.0, 16.0, 64.0, 196.0]),
                ],
                rho_q_db: Some(-10.0),
                mmse_sic: true,
                ..base
            },
            ExperimentId::Fig5SeVsDoppler => Self {
                axes: vec![axis(AxisName::NuMax, &[0.0, 400.0, 800.0, 1200.0, 1600.0])],
                rho_q_db: Some(-10.0),
                ..base
            },
            ExperimentId::Table2Grid => Self {
                system: SystemConfig::default(),
                axes: vec![
                    axis(AxisName::RhoQDb, &[-19.0, -16.0, -13.0, -10.0, -7.0]),
                    axis(AxisName::NuMax, &[0.0, 400.0, 800.0, 1200.0, 1600.0]),
                ],
                realizations: 50,
                ..base
            },
            ExperimentId::Fig6PerUtVsK => Self {
                system: SystemConfig {
                    m: 128,
                    ep: 10f64.powf(2.6) * 512.0,
                    ..desk_system()
                },
                axes: vec![axis(AxisName::K, &[1.0, 2.0, 4.0, 8.0])],
                rho_q_db: Some(-10.0),
                ..base
            },
            ExperimentId::Fig7SeVsRtau => Self {
                system: SystemConfig {
                    m: 64,
                    ep: 10f64.powf(2.6) * 256.0,
                    ..desk_system()
                },
                axes: vec![axis(AxisName::RTau, &[1.0, 1.7, 2.5, 3.5])],
                rho_q_db: Some(-10.0),
                ..base
            },
            ExperimentId::OracleSuite => Self {
                realizations: 1,
                ..base
            },
            ExperimentId::ChanestSuite => Self {
                system: SystemConfig {
                    m: 64,
                    ..desk_system()
                },
                profile: ProfileConfig {
                    nu_max: 1600.0,
                    ..ProfileConfig::rma_scenario()
                },
                axes: vec![axis(AxisName::RhoPDb, &[6.0, 16.0, 26.0])],
                rho_q_db: Some(-10.0),
                realizations: 10,
                ..base
            },
            ExperimentId::SerRun => Self {
                system: SystemConfig {
                    k: 1,
                    ..desk_system()
                },
                profile: ProfileConfig {
                    num_paths: 1,
                    pathloss_mode: PathlossMode::Unit,
                    ..ProfileConfig::default()
                },
                axes: vec![axis(AxisName::RhoQDb, &[0.0, 3.0, 6.0, 9.0])],
                realizations: 1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::InvalidConfig(
                "realizations must be at least 1".into(),
            ));
        }
        for a in &self.axes {
            if a.values.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "axis {} has no values",
                    a.name.label()
                )));
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("axis value"));
            }
            let count_like = matches!(a.name, AxisName::Q | AxisName::K | AxisName::NumPaths);
            if count_like && a.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "axis {} needs positive integers",
                    a.name.label()
                )));
            }
            if a.name == AxisName::Q && a.values.iter().any(|v| square_side(*v).is_none()) {
                return Err(Error::InvalidConfig(
                    "Q axis values must be perfect squares".into(),
                ));
            }
        }
        self.system.validate()?;
        self.profile.validate()?;
        if self.id == ExperimentId::SerRun && self.ser_symbols == 0 {
            return Err(Error::InvalidConfig(
                "ser_symbols must be at least 1".into(),
            ));
        }
        for p in self.points() {
            let (cfg, profile) = self.configure(&p)?;
            cfg.validate()?;
            profile.validate()?;
        }
        Ok(())
    }

    /// Every sweep point, one value per axis.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut pts = vec![Vec::new()];
        for a in &self.axes {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    a.values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        pts
    }

    /// Stream key of a point: its index over the stream-changing axes.
    fn stream_key(&self, point: &[f64]) -> u64 {
        let mut key = 0u64;
        for (a, v) in self.axes.iter().zip(point) {
            if a.name.stream_neutral() {
                continue;
            }
            let idx = a.values.iter().position(|x| x == v).unwrap_or(0) as u64;
            key = key * a.values.len() as u64 + idx;
        }
        key
    }

    /// System and profile of one sweep point.
    pub fn configure(&self, point: &[f64]) -> Result<(SystemConfig, ProfileConfig)> {
        let mut cfg = self.system.clone();
        let mut profile = self.profile.clone();
        let mut rho_q_db = self.rho_q_db;
        let mut rho_p_db = None;
        for (a, &v) in self.axes.iter().zip(point) {
            match a.name {
                AxisName::Q => {
                    let side = square_side(v)
                        .ok_or_else(|| Error::InvalidConfig("Q must be a perfect square".into()))?;
                    cfg.qh = side;
                    cfg.qv = side;
                }
                AxisName::K => cfg.k = v as usize,
                AxisName::NumPaths => profile.num_paths = v as usize,
                AxisName::RTau => profile.r_tau = v,
                AxisName::NuMax => profile.nu_max = v,
                AxisName::RhoQDb => rho_q_db = Some(v),
                AxisName::RhoPDb => rho_p_db = Some(v),
            }
        }
        if let Some(db) = rho_q_db {
            cfg = cfg.with_rho_q(10f64.powf(db / 10.0));
        }
        if let Some(db) = rho_p_db {
            cfg = cfg.with_rho_p_db(db);
        }
        Ok((cfg, profile))
    }
}

fn square_side(v: f64) -> Option<usize> {
    let side = v.sqrt().round() as usize;
    (side >= 1 && (side * side) as f64 == v).then_some(side)
}

/// Mean and standard error of one metric at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub name: String,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MetricStat {
    pub fn from_samples(name: &str, samples: &[f64]) -> Self {
        let n = samples.len();
        let nf = n as f64;
        let mean = samples.iter().sum::<f64>() / nf;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        Self {
            name: name.to_string(),
            mean,
            stderr: (var / nf).sqrt(),
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub values: Vec<f64>,
    pub metrics: Vec<MetricStat>,
    /// OTFS report averaged over realizations, when the experiment makes one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_report: Option<SeReport>,
}

impl PointResult {
    pub fn metric(&self, name: &str) -> Option<&MetricStat> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub id: ExperimentId,
    pub axes: Vec<String>,
    pub points: Vec<PointResult>,
}

impl ResultTable {
    pub fn metric_names(&self) -> Vec<String> {
        self.points
            .first()
            .map(|p| p.metrics.iter().map(|m| m.name.clone()).collect())
            .unwrap_or_default()
    }
}

struct Sample {
    metrics: Vec<(&'static str, f64)>,
    report: Option<SeReport>,
}

fn draw(cfg: &SystemConfig, profile: &ProfileConfig, s: u64) -> Result<ChannelParams> {
    sample_channel_params(cfg, profile, s)
}

fn otfs_sample(
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    params: &ChannelParams,
    with_ofdm: bool,
) -> Result<Sample> {
    let rep = analyze(
        params,
        cfg,
        AnalysisOptions {
            mmse_sic: spec.mmse_sic,
            ..AnalysisOptions::default()
        },
    )?;
    let k = params.num_uts() as f64;
    let mut metrics = vec![("lcd_sum", rep.sum_lcd), ("large_q_sum", rep.sum_large_q)];
    if let Some(c) = rep.sum_mmse_sic {
        metrics.push(("mmse_sic_sum", c));
    }
    if spec.id == ExperimentId::Fig6PerUtVsK {
        metrics.push(("lcd_per_ut", rep.sum_lcd / k));
        metrics.push(("large_q_per_ut", rep.sum_large_q / k));
        if let Some(c) = rep.sum_mmse_sic {
            metrics.push(("mmse_sic_per_ut", c / k));
        }
    }
    if with_ofdm {
        metrics.push(("ofdm_sum", ofdm_mrt_se(params, cfg, &spec.ofdm)?.sum));
    }
    Ok(Sample {
        metrics,
        report: Some(rep),
    })
}

fn chanest_sample(cfg: &SystemConfig, profile: &ProfileConfig, s: u64) -> Result<Sample> {
    let params = draw(cfg, profile, s)?;
    let layout = PilotLayout::new(cfg)?;
    let xhat = receive_pilots(
        &layout,
        &params,
        cfg,
        Some(seed::derive(s, seed::PURPOSE_PILOT_NOISE)),
    )?;
    let est = estimate_channel(
        &xhat,
        &layout,
        cfg,
        &EstimatorOptions::new(cfg, profile.nu_max),
    )?;
    let truth = MultiUserChannel::from_params(&params, cfg)?;
    let est_ch = assemble_estimate(&est, cfg)?;
    let eta = params.eta(cfg);
    let perfect = lcd_analysis(&truth, None, cfg.rho, eta, cfg, GramMode::Factorized)?;
    let imperfect = lcd_analysis(
        &truth,
        Some(&est_ch),
        cfg.rho,
        eta,
        cfg,
        GramMode::Factorized,
    )?;
    let detected: usize = (0..cfg.k).map(|u| est.detected(u)).sum();
    Ok(Sample {
        metrics: vec![
            ("lcd_perfect_sum", perfect.sum),
            ("lcd_estimated_sum", imperfect.sum),
            ("nmse", channel_nmse(&truth, &est_ch)?),
            ("detected_paths_per_ut", detected as f64 / cfg.k as f64),
        ],
        report: None,
    })
}

/// Uncoded 4-QAM symbol error rate of the LCD and its Gaussian prediction.
pub fn ser_sample(
    cfg: &SystemConfig,
    params: &ChannelParams,
    symbols: usize,
    s: u64,
) -> Result<(f64, f64)> {
    let channel = MultiUserChannel::from_params(params, cfg)?;
    let eta = params.eta(cfg);
    let e_t = cfg.frame_energy();
    let lcd = lcd_analysis(&channel, None, cfg.rho, eta, cfg, GramMode::Factorized)?;
    let k = params.num_uts();
    let mn = cfg.mn();
    let frames = symbols.div_ceil(mn);
    let gammas: Vec<Vec<Complex64>> = (0..k)
        .map(|u| {
            let g = channel.gram(u, u, GramMode::Factorized)?;
            Ok((0..mn).map(|r| g.get(r, r)).collect())
        })
        .collect::<Result<_>>()?;
    let effective = (0..k)
        .map(|u| {
            (0..cfg.q())
                .map(|q| channel.effective(q, u))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sym_rng = ChaCha8Rng::seed_from_u64(seed::derive(s, seed::PURPOSE_SYMBOLS));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed::derive(s, seed::PURPOSE_NOISE));
    let mut source = QamSymbols::new(4)?;
    let sd = (cfg.n0 / 2.0).sqrt();
    let (mut errors, mut counted) = (0usize, 0usize);
    for _ in 0..frames {
        let mut per_ut = Vec::with_capacity(k);
        let mut u = Vec::with_capacity(k);
        for _ in 0..k {
            let g = draw_symbols(&mut source, &mut sym_rng, 1, cfg.m, cfg.n).remove(0);
            per_ut.push(source.last_indices.clone());
            u.push(g);
        }
        let x = precode(&u, &channel, e_t, eta)?;
        for (su, sent) in per_ut.iter().enumerate() {
            let mut y = DdGrid::zeros(cfg.m, cfg.n);
            for (q, xq) in x.x.iter().enumerate() {
                let h = effective[su][q].apply(xq)?;
                for (a, b) in y.as_mut_slice().iter_mut().zip(h.as_slice()) {
                    *a += b;
                }
            }
            for v in y.as_mut_slice() {
                let re: f64 = noise_rng.sample(StandardNormal);
                let im: f64 = noise_rng.sample(StandardNormal);
                *v += Complex64::new(re * sd, im * sd);
            }
            let soft = lcd_equalize(&y, &gammas[su], e_t, eta)?;
            let got = slice_qam(&soft, &source.qam);
            let take = (symbols - counted.min(symbols)).min(mn);
            errors += got
                .iter()
                .zip(sent)
                .take(take)
                .filter(|(a, b)| a != b)
                .count();
        }
        counted += mn;
    }
    let total = symbols * k;
    let analytic = lcd
        .terms
        .iter()
        .flatten()
        .map(|t| qam4_ser(t.sinr()))
        .sum::<f64>()
        / (k * mn) as f64;
    Ok((errors as f64 / total as f64, analytic))
}

fn evaluate(
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    profile: &ProfileConfig,
    s: u64,
) -> Result<Sample> {
    match spec.id {
        ExperimentId::Fig4NearOpt | ExperimentId::Fig7SeVsRtau | ExperimentId::Fig6PerUtVsK => {
            otfs_sample(spec, cfg, &draw(cfg, profile, s)?, false)
        }
        ExperimentId::Fig5SeVsDoppler | ExperimentId::Table2Grid => {
            otfs_sample(spec, cfg, &draw(cfg, profile, s)?, true)
        }
        ExperimentId::ChanestSuite => chanest_sample(cfg, profile, s),
        ExperimentId::SerRun => {
            let params = draw(cfg, profile, s)?;
            let (emp, ana) = ser_sample(cfg, &params, spec.ser_symbols, s)?;
            Ok(Sample {
                metrics: vec![("ser_empirical", emp), ("ser_analytic", ana)],
                report: None,
            })
        }
        ExperimentId::OracleSuite => unreachable!("handled by run"),
    }
}

fn mean_report(reports: &[SeReport]) -> Option<SeReport> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&SeReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let uts = (0..first.uts.len())
        .map(|s| UtSe {
            lcd: avg(&|r| r.uts[s].lcd),
            mmse_sic: first.uts[s]
                .mmse_sic
                .map(|_| avg(&|r| r.uts[s].mmse_sic.unwrap_or(0.0))),
            large_q: avg(&|r| r.uts[s].large_q),
        })
        .collect();
    Some(SeReport {
        system: first.system.clone(),
        uts,
        sum_lcd: avg(&|r| r.sum_lcd),
        sum_mmse_sic: first
            .sum_mmse_sic
            .map(|_| avg(&|r| r.sum_mmse_sic.unwrap_or(0.0))),
        sum_large_q: avg(&|r| r.sum_large_q),
        overhead: first.overhead,
        sinr_terms: None,
    })
}

/// Runs every point of `spec` in the current thread pool.
pub fn run(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let axes = spec
        .axes
        .iter()
        .map(|a| a.name.label().to_string())
        .collect();
    if spec.id == ExperimentId::OracleSuite {
        let checks = verify_suite();
        return Ok(ResultTable {
            id: spec.id,
            axes: Vec::new(),
            points: vec![PointResult {
                values: Vec::new(),
                metrics: checks
                    .iter()
                    .map(|c| MetricStat {
                        name: c.name.to_string(),
                        mean: if c.passed { 1.0 } else { 0.0 },
                        stderr: 0.0,
                        n: 1,
                    })
                    .collect(),
                mean_report: None,
            }],
        });
    }
    let mut points = Vec::new();
    for point in spec.points() {
        let (cfg, profile) = spec.configure(&point)?;
        let key = spec.stream_key(&point);
        let samples = crate::par::map_indexed(spec.realizations, |r| {
            evaluate(
                spec,
                &cfg,
                &profile,
                seed::substream(spec.seed, key, r as u64),
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let names: Vec<&str> = samples[0].metrics.iter().map(|m| m.0).collect();
        let mut metrics: Vec<MetricStat> = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let xs: Vec<f64> = samples.iter().map(|s| s.metrics[i].1).collect();
                MetricStat::from_samples(name, &xs)
            })
            .collect();
        if spec.id == ExperimentId::Fig4NearOpt {
            let r = names.iter().position(|n| *n == "lcd_sum");
            let c = names.iter().position(|n| *n == "mmse_sic_sum");
            if let (Some(r), Some(c)) = (r, c) {
                let diff: Vec<f64> = samples
                    .iter()
                    .map(|s| s.metrics[c].1 - s.metrics[r].1)
                    .collect();
                let d = MetricStat::from_samples("gap", &diff);
                let cm = metrics[c].mean;
                metrics.push(MetricStat {
                    name: "gap".into(),
                    mean: d.mean / cm,
                    stderr: d.stderr / cm,
                    n: d.n,
                });
            }
        }
        let reports: Vec<SeReport> = samples.into_iter().filter_map(|s| s.report).collect();
        points.push(PointResult {
            values: point,
            metrics,
            mean_report: mean_report(&reports),
        });
    }
    Ok(ResultTable {
        id: spec.id,
        axes,
        points,
    })
}

/// Runs `f` with `threads` workers, or in the default pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    crate::par::with_threads(threads, f)
}

/// Runs `spec` with `threads` workers, or the default pool when `None`.
pub fn run_with_threads(spec: &ExperimentSpec, threads: Option<usize>) -> Result<ResultTable> {
    with_threads(threads, || run(spec))
}

/// Long-format CSV: one row per point and metric.
pub fn write_csv<W: Write>(table: &ResultTable, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = table.axes.clone();
    header.extend(["metric", "mean", "stderr", "n"].map(String::from));
    out.write_record(&header).map_err(csv_err)?;
    for p in &table.points {
        for m in &p.metrics {
            let mut rec: Vec<String> = p.values.iter().map(|v| v.to_string()).collect();
            rec.push(m.name.clone());
            rec.push(m.mean.to_string());
            rec.push(m.stderr.to_string());
            rec.push(m.n.to_string());
            out.write_record(&rec).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Gnuplot data: one line per point with mean and stderr of every
/// metric, blocks separated by blank lines when the first axis changes.
pub fn write_dat<W: Write>(table: &ResultTable, mut w: W) -> Result<()> {
    let names = table.metric_names();
    write!(w, "#")?;
    for a in &table.axes {
        write!(w, " {a}")?;
    }
    for n in &names {
        write!(w, " {n} {n}_stderr")?;
    }
    writeln!(w)?;
    let mut prev: Option<f64> = None;
    for p in &table.points {
        if table.axes.len() > 1 {
            if let Some(v) = prev {
                if v != p.values[0] {
                    writeln!(w)?;
                }
            }
            prev = p.values.first().copied();
        }
        let cols: Vec<String> = p
            .values
            .iter()
            .map(|v| v.to_string())
            .chain(
                p.metrics
                    .iter()
                    .flat_map(|m| [m.mean.to_string(), m.stderr.to_string()]),
            )
            .collect();
        writeln!(w, "{}", cols.join(" "))?;
    }
    Ok(())
}

/// Writes CSV, JSON and gnuplot data into `dir` and returns the paths.
pub fn emit(table: &ResultTable, outputs: &Outputs, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let id = table.id.name();
    let name = |o: &Option<String>, ext: &str| {
        dir.join(o.clone().unwrap_or_else(|| format!("{id}.{ext}")))
    };
    let csv_path = name(&outputs.csv, "csv");
    let json_path = name(&outputs.json, "json");
    let dat_path = name(&outputs.dat, "dat");
    write_csv(table, fs::File::create(&csv_path)?)?;
    serde_json::to_writer_pretty(fs::File::create(&json_path)?, table)?;
    write_dat(table, fs::File::create(&dat_path)?)?;
    Ok(vec![csv_path, json_path, dat_path])
}

/// One pass/fail check of the verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

fn check(name: &'static str, value: Result<f64>, tolerance: f64) -> CheckResult {
    let value = value.unwrap_or(f64::INFINITY);
    CheckResult {
        name,
        passed: value.is_finite() && value < tolerance,
        value,
        tolerance,
    }
}

fn tiny_cfg(m: usize, k: usize, side: usize, cp_taps: usize) -> SystemConfig {
    SystemConfig {
        m,
        n: 4,
        k,
        qh: side,
        qv: side,
        tau_max: cp_taps as f64 / (m as f64 * 15e3),
        ep: 10f64.powf(2.6) * (m * 4) as f64,
        ..SystemConfig::default()
    }
    .with_rho_q(0.1)
}

fn random_grid(m: usize, n: usize, rng: &mut ChaCha8Rng) -> DdGrid {
    let v = (0..m * n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    DdGrid::from_vec(m, n, v).expect("grid shape")
}

fn unitarity_error() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let l = rng.random_range(0..16);
        let nu = rng.random_range(-7000.0..7000.0);
        let a = crate::dd_operator::build_operator(l, nu, 16, 4, 15e3)?.to_dense();
        let id = crate::linalg::CMatrix::identity(64);
        worst = worst
            .max(a.mul_adjoint(&a)?.max_abs_diff(&id))
            .max(a.adjoint().matmul(&a)?.max_abs_diff(&id));
    }
    Ok(worst)
}

fn waveform_error() -> Result<f64> {
    let cfg = tiny_cfg(8, 2, 2, 3);
    let profile = ProfileConfig {
        nu_max: 1600.0,
        num_paths: 3,
        mu_tau: 1e-4,
        ..ProfileConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for r in 0..3 {
        let params = draw(&cfg, &profile, seed::substream(5, 0, r))?;
        let x: Vec<DdGrid> = (0..cfg.q()).map(|_| random_grid(8, 4, &mut rng)).collect();
        worst = worst.max(crate::waveform_oracle::end_to_end_check(&params, &cfg, &x)?);
    }
    Ok(worst)
}

fn energy_identity_error() -> Result<f64> {
    let cfg = tiny_cfg(16, 2, 3, 3);
    let profile = ProfileConfig {
        nu_max: 1600.0,
        num_paths: 4,
        ..ProfileConfig::default()
    };
    let params = draw(&cfg, &profile, 3)?;
    let channel = MultiUserChannel::from_params(&params, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let u: Vec<DdGrid> = (0..2).map(|_| random_grid(16, 4, &mut rng)).collect();
    let eta = params.eta(&cfg);
    let e_t = cfg.frame_energy();
    let direct = precode(&u, &channel, e_t, eta)?.energy();
    let identity = crate::precoder::precoded_energy(&u, &channel, e_t, eta)?;
    Ok((direct - identity).abs() / direct)
}

fn gram_mode_error() -> Result<f64> {
    let cfg = tiny_cfg(16, 2, 3, 3);
    let params = draw(
        &cfg,
        &ProfileConfig {
            nu_max: 900.0,
            ..ProfileConfig::default()
        },
        9,
    )?;
    let ch = MultiUserChannel::from_params(&params, &cfg)?;
    let a = ch.gram(0, 1, GramMode::Factorized)?.to_dense();
    let b = ch.gram(0, 1, GramMode::Direct)?.to_dense();
    Ok(a.max_abs_diff(&b))
}

fn lcd_bound_violation() -> Result<f64> {
    let cfg = tiny_cfg(16, 2, 2, 3);
    let params = draw(&cfg, &ProfileConfig::rma_scenario(), 4)?;
    let rep = analyze(
        &params,
        &cfg,
        AnalysisOptions {
            mmse_sic: true,
            ..AnalysisOptions::default()
        },
    )?;
    Ok((rep.sum_lcd - rep.sum_mmse_sic.unwrap_or(0.0)).max(0.0))
}

fn ofdm_static_error() -> Result<f64> {
    let cfg = SystemConfig {
        k: 1,
        ..tiny_cfg(32, 1, 2, 3)
    };
    let mut params = draw(
        &cfg,
        &ProfileConfig {
            num_paths: 1,
            ..ProfileConfig::default()
        },
        2,
    )?;
    params.uts[0].paths[0].nu = 0.0;
    let got = ofdm_mrt_se(&params, &cfg, &OfdmConfig::default())?.sum;
    let g2 = params.gain_energy(0);
    let want = (1.0 + cfg.rho * cfg.q() as f64 * g2 * g2 / params.total_beta()).log2()
        / (1.0 + cfg.tau_max * cfg.delta_f);
    Ok((got - want).abs())
}

fn chanest_error() -> Result<f64> {
    let cfg = tiny_cfg(64, 2, 3, 8);
    let grid = crate::chan_est::doppler_grid(1600.0, cfg.doppler_grid_points);
    let mut params = draw(
        &cfg,
        &ProfileConfig {
            num_paths: 1,
            ..ProfileConfig::default()
        },
        6,
    )?;
    for (s, ut) in params.uts.iter_mut().enumerate() {
        ut.paths[0].nu = grid[37 + 100 * s];
        ut.paths[0].l_tau = 2 + s;
    }
    let layout = PilotLayout::new(&cfg)?;
    let xhat = receive_pilots(&layout, &params, &cfg, None)?;
    let est = estimate_channel(&xhat, &layout, &cfg, &EstimatorOptions::new(&cfg, 1600.0))?;
    let truth = MultiUserChannel::from_params(&params, &cfg)?;
    let mut worst: f64 = 0.0;
    for s in 0..cfg.k {
        if est.detected(s) != 1 {
            return Ok(f64::INFINITY);
        }
        let p = &est.uts[s][0];
        if p.l_tau != params.uts[s].paths[0].l_tau || p.nu != params.uts[s].paths[0].nu {
            return Ok(f64::INFINITY);
        }
        for (a, b) in p.gains.iter().zip(&truth.paths(s)?[0].gains) {
            worst = worst.max((a - b).norm());
        }
    }
    Ok(worst)
}

fn determinism_error() -> Result<f64> {
    let mut spec = ExperimentSpec::preset(ExperimentId::Fig5SeVsDoppler);
    spec.system = tiny_cfg(16, 2, 2, 3);
    spec.realizations = 2;
    spec.axes = vec![axis(AxisName::NuMax, &[0.0, 1600.0])];
    let a = run(&spec)?;
    let b = crate::par::with_threads(Some(1), || run(&spec))?;
    Ok(if a == b { 0.0 } else { 1.0 })
}

/// Fast invariant checks of every primary component.
pub fn verify_suite() -> Vec<CheckResult> {
    vec![
        check("operator_unitarity", unitarity_error(), 1e-10),
        check("waveform_matches_matrix_model", waveform_error(), 1e-8),
        check("precoder_energy_identity", energy_identity_error(), 1e-9),
        check("gram_closed_form_matches_direct", gram_mode_error(), 1e-9),
        check("lcd_not_above_mmse_sic", lcd_bound_violation(), 1e-12),
        check("ofdm_static_flat_mrt", ofdm_static_error(), 1e-9),
        check("chanest_on_grid_exact", chanest_error(), 1e-9),
        check("seeded_runs_deterministic", determinism_error(), 0.5),
    ]
}
