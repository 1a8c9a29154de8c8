#![allow(dead_code)]

use num_complex::Complex64;
use otfs_mimo::channel::{ChannelParams, PathParams, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small config whose prefix spans `cp` taps.
pub fn small_cfg(m: usize, n: usize, k: usize, qh: usize, qv: usize, cp: usize) -> SystemConfig {
    SystemConfig {
        m,
        n,
        k,
        qh,
        qv,
        tau_max: cp as f64 / (m as f64 * 15e3),
        ..SystemConfig::default()
    }
}

/// Random paths with taps in `0..=cp_len`, Dopplers within `±nu_max` and
/// unit-variance gains.
pub fn random_params(
    cfg: &SystemConfig,
    paths: usize,
    nu_max: f64,
    integer: bool,
    seed: u64,
) -> ChannelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cp = cfg.cp_len();
    let bin = cfg.delta_f / cfg.n as f64;
    ChannelParams::from_paths(
        (0..cfg.k)
            .map(|_| {
                (0..paths)
                    .map(|_| {
                        let mut nu = nu_max * (2.0 * rng.random::<f64>() - 1.0);
                        if integer {
                            nu = (nu / bin).round() * bin;
                        }
                        PathParams {
                            theta: rng.random_range(0.5..2.6),
                            phi: rng.random_range(-1.5..1.5),
                            tau: 0.0,
                            l_tau: rng.random_range(0..=cp),
                            nu,
                            g: Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5),
                            beta: 1.0 / paths as f64,
                        }
                    })
                    .collect()
            })
            .collect(),
    )
}

pub fn random_grid(m: usize, n: usize, seed: u64) -> otfs_mimo::DdGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    otfs_mimo::DdGrid::from_vec(
        m,
        n,
        (0..m * n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect(),
    )
    .unwrap()
}
