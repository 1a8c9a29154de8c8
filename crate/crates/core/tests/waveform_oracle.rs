mod common;

use num_complex::Complex64;
use otfs_mimo::channel::{ChannelParams, PathParams};
use otfs_mimo::waveform_oracle::*;
use otfs_mimo::DdGrid;

use common::{random_grid, random_params, small_cfg};

#[test]
fn loopback_is_identity() {
    let x = random_grid(16, 4, 9);
    let y = demodulate(&modulate(&x, 3));
    assert!(y.max_abs_diff(&x) < 1e-10);
}

#[test]
fn in_frame_energy_equals_grid_energy() {
    let x = random_grid(12, 3, 10);
    let tf = isfft(&x);
    let s = heisenberg(&tf, 4);
    assert!((s.frame_energy() - tf.energy()).abs() < 1e-12 * tf.energy());
    assert!((tf.energy() - x.norm_sqr()).abs() < 1e-12 * tf.energy());
}

#[test]
fn unit_path_passes_signal_through() {
    let cfg = small_cfg(8, 4, 1, 1, 1, 2);
    let params = ChannelParams::from_paths(vec![vec![PathParams {
        theta: std::f64::consts::FRAC_PI_2,
        phi: 0.0,
        tau: 0.0,
        l_tau: 0,
        nu: 0.0,
        g: Complex64::new(1.0, 0.0),
        beta: 1.0,
    }]]);
    let tx = modulate(&random_grid(8, 4, 3), cfg.cp_len());
    let y = apply_dd_channel(&[tx.clone()], &params, 0, &cfg, None).unwrap();
    assert!(y
        .samples
        .iter()
        .zip(&tx.samples)
        .all(|(a, b)| (a - b).norm() < 1e-15));
}

#[test]
fn matrix_model_matches_waveform_fractional_doppler() {
    let cfg = small_cfg(8, 4, 2, 2, 2, 3);
    for seed in 0..5 {
        let params = random_params(&cfg, 3, 0.45 * cfg.delta_f, false, seed);
        let x: Vec<DdGrid> = (0..cfg.q())
            .map(|q| random_grid(8, 4, 100 * seed + q as u64))
            .collect();
        let dev = end_to_end_check(&params, &cfg, &x).unwrap();
        assert!(dev < 1e-8, "seed {seed}: {dev}");
    }
}

#[test]
fn matrix_model_matches_waveform_integer_doppler() {
    let cfg = small_cfg(8, 4, 2, 2, 2, 3);
    let params = random_params(&cfg, 3, 0.45 * cfg.delta_f, true, 77);
    let x: Vec<DdGrid> = (0..cfg.q()).map(|q| random_grid(8, 4, q as u64)).collect();
    assert!(end_to_end_check(&params, &cfg, &x).unwrap() < 1e-10);
}

#[test]
fn zero_input_gives_zero_output() {
    let cfg = small_cfg(8, 4, 2, 2, 2, 3);
    let params = random_params(&cfg, 2, 1000.0, false, 5);
    let x = vec![DdGrid::zeros(8, 4); cfg.q()];
    assert_eq!(end_to_end_check(&params, &cfg, &x).unwrap(), 0.0);
    let tx: Vec<TimeSignal> = x.iter().map(|g| modulate(g, cfg.cp_len())).collect();
    let y = apply_dd_channel(&tx, &params, 1, &cfg, None).unwrap();
    assert!(y.samples.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
}

#[test]
fn delay_beyond_prefix_is_rejected() {
    let cfg = small_cfg(8, 4, 1, 1, 1, 1);
    let mut params = random_params(&cfg, 1, 0.0, false, 1);
    params.uts[0].paths[0].l_tau = 2;
    let tx = vec![modulate(&random_grid(8, 4, 1), cfg.cp_len())];
    assert!(matches!(
        apply_dd_channel(&tx, &params, 0, &cfg, None),
        Err(otfs_mimo::Error::DelayExceedsCp {
            delay: 2,
            cp_len: 1
        })
    ));
}

#[test]
fn consecutive_frames_do_not_leak() {
    let (m, n, cp) = (8usize, 4usize, 3usize);
    let f1 = modulate(&random_grid(m, n, 1), cp);
    let f2 = modulate(&random_grid(m, n, 2), cp);
    let frame_len = cp + m * n;
    let paths = [
        SamplePath {
            l_tau: 3,
            eps: 0.31,
        },
        SamplePath {
            l_tau: 1,
            eps: -0.12,
        },
    ];
    let gains = [Complex64::new(0.7, 0.2), Complex64::new(-0.3, 0.5)];
    let scaled = |s: &[Complex64]| -> Vec<Vec<Complex64>> {
        gains
            .iter()
            .map(|g| s.iter().map(|v| v * g).collect())
            .collect()
    };
    let mut stream = f1.samples.clone();
    stream.extend_from_slice(&f2.samples);
    let joint = apply_paths(&scaled(&stream), &paths, m, cp as isize);
    let isolated = apply_paths(
        &scaled(&f2.samples),
        &paths,
        m,
        cp as isize - frame_len as isize,
    );
    let second = TimeSignal {
        m,
        n,
        cp_len: cp,
        samples: joint[frame_len..].to_vec(),
    };
    let alone = TimeSignal {
        m,
        n,
        cp_len: cp,
        samples: isolated,
    };
    assert!(demodulate(&second).max_abs_diff(&demodulate(&alone)) < 1e-12);
}

#[test]
fn demodulated_noise_is_white() {
    let (m, n) = (4usize, 2usize);
    let n0 = 0.5;
    let trials = 10_000;
    let mn = m * n;
    let mut cov = vec![Complex64::new(0.0, 0.0); mn * mn];
    for t in 0..trials {
        let mut s = modulate(&DdGrid::zeros(m, n), 1);
        add_awgn(&mut s.samples, n0, otfs_mimo::seed::substream(3, 0, t));
        let w = demodulate(&s).into_vec();
        for a in 0..mn {
            for b in 0..mn {
                cov[a * mn + b] += w[a] * w[b].conj();
            }
        }
    }
    for a in 0..mn {
        for b in 0..mn {
            let c = cov[a * mn + b] / trials as f64;
            if a == b {
                assert!((c.re - n0).abs() < 0.05 * n0, "var {}", c.re);
            } else {
                assert!(c.norm() < 0.05 * n0, "cov ({a},{b}) {}", c.norm());
            }
        }
    }
}
