use otfs_mimo_demo::{array_sizes, doppler_scan, operator_magnitudes, se_sweep};

#[test]
fn heat_map_rows_carry_unit_energy() {
    let (m, n) = (8, 4);
    let a = operator_magnitudes(m, n, 3, 2100.0).unwrap();
    assert_eq!(a.len(), (m * n) * (m * n));
    for row in a.chunks(m * n) {
        let e: f64 = row.iter().map(|v| v * v).sum();
        assert!((e - 1.0).abs() < 1e-10);
    }
}

#[test]
fn integer_doppler_gives_permutation() {
    let a = operator_magnitudes(4, 4, 1, 3750.0).unwrap();
    let ones = a.iter().filter(|v| (*v - 1.0).abs() < 1e-12).count();
    let zeros = a.iter().filter(|v| v.abs() < 1e-12).count();
    assert_eq!((ones, zeros), (16, 16 * 15));
}

#[test]
fn sweep_has_three_series_and_bound_holds() {
    let v = se_sweep(2, -10.0, 1600.0, 2, 3).unwrap();
    assert_eq!(v.len(), 3 * array_sizes().len());
    for t in v.chunks(3) {
        assert!(t[0] > 0.0 && t[0] <= t[1] + 1e-9);
    }
    assert_eq!(v, se_sweep(2, -10.0, 1600.0, 2, 3).unwrap());
}

#[test]
fn scan_peaks_at_true_doppler() {
    let v = doppler_scan(400.0, 1600.0, 401, 40.0, 1).unwrap();
    assert_eq!(v.len(), 402);
    assert!((v[401] - 400.0).abs() <= 8.0);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(operator_magnitudes(0, 4, 0, 0.0).is_err());
    assert!(doppler_scan(0.0, 1600.0, 0, 20.0, 1).is_err());
}
