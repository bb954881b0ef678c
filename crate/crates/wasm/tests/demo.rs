use rfs_shape_wasm::{reconstruct_with_noise, sweep, Manipulator};

fn points(flat: &[f64]) -> Vec<(f64, f64)> {
    flat.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

#[test]
fn full_pull_bends_to_ninety_degrees() {
    let mut m = Manipulator::create(0.0, 2.0).unwrap();
    let pts = points(&m.drive(1440).unwrap());
    assert_eq!(pts.len(), 27);
    assert_eq!(pts[0], (0.0, 0.0));
    assert!((m.tip_angle() - 90.0).abs() < 1e-9);
    for w in pts.windows(2) {
        let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
        assert!((d - 102.14 / 26.0).abs() < 1e-9);
    }
}

#[test]
fn release_lags_behind_the_pull() {
    let mut m = Manipulator::create(0.0, 2.0).unwrap();
    m.drive(720).unwrap();
    let loading = m.tip_angle();
    m.drive(1440).unwrap();
    m.drive(720).unwrap();
    assert!(m.tip_angle() > loading + 1.0, "{} vs {loading}", m.tip_angle());
}

#[test]
fn opposite_pulls_mirror_each_other() {
    let mut a = Manipulator::create(0.0, 2.0).unwrap();
    let mut b = Manipulator::create(0.0, 2.0).unwrap();
    let pa = points(&a.drive(900).unwrap());
    let pb = points(&b.drive(-900).unwrap());
    for (p, q) in pa.iter().zip(&pb) {
        assert!((p.0 - q.0).abs() < 1e-9 && (p.1 + q.1).abs() < 1e-9);
    }
}

#[test]
fn invalid_parameters_are_reported() {
    assert!(Manipulator::create(0.0, -1.0).is_err());
    assert!(sweep(0, 0.25, 10.0).is_err());
    assert!(sweep(6, 0.25, 10.0).is_err());
    assert!(sweep(3, 0.25, 0.0).is_err());
    assert!(reconstruct_with_noise(30.0, -1.0, 0).is_err());
    assert!(reconstruct_with_noise(120.0, 0.0, 0).is_err());
}

#[test]
fn sweep_rows_are_mirror_symmetric() {
    let flat = sweep(3, 0.25, 10.0).unwrap();
    let rows: Vec<&[f64]> = flat.chunks_exact(5).collect();
    assert_eq!(rows.len(), 19);
    assert_eq!(rows[0][0], -90.0);
    assert_eq!(rows[18][0], 90.0);
    for i in 0..19 {
        let (a, b) = (&rows[i], &rows[18 - i]);
        assert_eq!(a[1], b[2]);
        assert_eq!(a[3], b[4]);
    }
}

#[test]
fn noiseless_reconstruction_tracks_the_body() {
    for angle in [-90.0, -30.0, 0.0, 45.0, 90.0] {
        let r = reconstruct_with_noise(angle, 0.0, 7).unwrap();
        assert!(r.max_error() < 0.5, "{angle}: {}", r.max_error());
        assert_eq!(r.stations().len(), 52);
        assert_eq!(r.truth().len(), 54);
    }
}

#[test]
fn noisy_reconstruction_is_seeded() {
    let a = reconstruct_with_noise(60.0, 1.0, 3).unwrap();
    let b = reconstruct_with_noise(60.0, 1.0, 3).unwrap();
    let c = reconstruct_with_noise(60.0, 1.0, 4).unwrap();
    assert_eq!(a.markers(), b.markers());
    assert_ne!(a.markers(), c.markers());
}
