//! Browser front end for the OTFS engine: a path-operator heat map, a
//! sum-SE sweep over array size and the pilot Doppler objective.
//!
//! Build: `wasm-pack build crates/wasm-demo --target web --out-dir www/pkg`

use otfs_mimo::chan_est::{
    doppler_grid, doppler_objective, estimate_doppler, receive_pilots, PilotLayout,
};
use otfs_mimo::channel::{sample_channel_params, ChannelParams, PathParams};
use otfs_mimo::dd_operator::build_operator;
use otfs_mimo::se_analysis::{analyze, AnalysisOptions};
use otfs_mimo::seed::substream;
use otfs_mimo::{Complex64, ProfileConfig, SystemConfig};
use wasm_bindgen::prelude::*;

const ARRAY_SIDES: [usize; 4] = [2, 4, 8, 14];

fn js_err(e: otfs_mimo::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Row-major `|A|` of one path operator, `MN x MN`.
pub fn operator_magnitudes(
    m: usize,
    n: usize,
    l_tau: usize,
    nu: f64,
) -> otfs_mimo::Result<Vec<f64>> {
    let op = build_operator(l_tau % m.max(1), nu, m, n, 15e3)?;
    let mn = m * n;
    let mut out = Vec::with_capacity(mn * mn);
    for r in 0..mn {
        for c in 0..mn {
            out.push(op.entry(r / m, r % m, c / m, c % m).norm());
        }
    }
    Ok(out)
}

/// Mean sum SE at `Q = 4, 16, 64, 196` with `ρQ` held fixed: per array size
/// the detector SE, the MMSE-SIC bound and the large-array closed form.
pub fn se_sweep(
    k: usize,
    rho_q_db: f64,
    nu_max: f64,
    realizations: usize,
    seed: u64,
) -> otfs_mimo::Result<Vec<f64>> {
    let profile = ProfileConfig {
        nu_max,
        ..ProfileConfig::rma_scenario()
    };
    let mut out = Vec::with_capacity(3 * ARRAY_SIDES.len());
    for side in ARRAY_SIDES {
        let cfg = SystemConfig {
            m: 16,
            n: 4,
            k,
            qh: side,
            qv: side,
            ep: 10f64.powf(2.6) * 64.0,
            ..SystemConfig::default()
        }
        .with_rho_q(10f64.powf(rho_q_db / 10.0));
        let opts = AnalysisOptions {
            mmse_sic: true,
            ..AnalysisOptions::default()
        };
        let (mut lcd, mut mmse, mut large) = (0.0, 0.0, 0.0);
        for r in 0..realizations {
            let params = sample_channel_params(&cfg, &profile, substream(seed, 0, r as u64))?;
            let rep = analyze(&params, &cfg, opts)?;
            lcd += rep.sum_lcd;
            mmse += rep.sum_mmse_sic.unwrap_or(0.0);
            large += rep.sum_large_q;
        }
        let n = realizations.max(1) as f64;
        out.extend([lcd / n, mmse / n, large / n]);
    }
    Ok(out)
}

/// Pilot Doppler objective of one path on the inclusive grid, followed by
/// the grid argmax as the final element.
pub fn doppler_scan(
    nu: f64,
    nu_max: f64,
    points: usize,
    rho_p_db: f64,
    seed: u64,
) -> otfs_mimo::Result<Vec<f64>> {
    if points == 0 {
        return Err(otfs_mimo::Error::InvalidConfig(
            "grid needs at least one point".into(),
        ));
    }
    let cfg = SystemConfig {
        m: 64,
        n: 4,
        k: 1,
        qh: 4,
        qv: 4,
        ..SystemConfig::default()
    }
    .with_rho_p_db(rho_p_db);
    let layout = PilotLayout::new(&cfg)?;
    let tap = 2;
    let params = ChannelParams::from_paths(vec![vec![PathParams {
        theta: 1.2,
        phi: 0.4,
        tau: 0.0,
        l_tau: tap,
        nu,
        g: Complex64::new(1.0, 0.0),
        beta: 1.0,
    }]]);
    let xhat = receive_pilots(&layout, &params, &cfg, Some(seed))?;
    let grid = doppler_grid(nu_max, points);
    let mut out: Vec<f64> = grid
        .iter()
        .map(|&v| doppler_objective(&xhat, &layout, 0, tap, v, cfg.delta_f))
        .collect();
    out.push(estimate_doppler(&xhat, &layout, 0, tap, &grid, cfg.delta_f));
    Ok(out)
}

#[wasm_bindgen(js_name = operatorMagnitudes)]
pub fn operator_magnitudes_js(
    m: usize,
    n: usize,
    l_tau: usize,
    nu: f64,
) -> Result<Vec<f64>, JsError> {
    operator_magnitudes(m, n, l_tau, nu).map_err(js_err)
}

#[wasm_bindgen(js_name = seSweep)]
pub fn se_sweep_js(
    k: usize,
    rho_q_db: f64,
    nu_max: f64,
    realizations: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    se_sweep(k, rho_q_db, nu_max, realizations, seed).map_err(js_err)
}

#[wasm_bindgen(js_name = dopplerScan)]
pub fn doppler_scan_js(
    nu: f64,
    nu_max: f64,
    points: usize,
    rho_p_db: f64,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    doppler_scan(nu, nu_max, points, rho_p_db, seed).map_err(js_err)
}

#[wasm_bindgen(js_name = arraySizes)]
pub fn array_sizes() -> Vec<u32> {
    ARRAY_SIDES.iter().map(|s| (s * s) as u32).collect()
}
