use std::f64::consts::PI;

use fimcrb_core::ao::{optimize, AoSettings, Mode};
use fimcrb_core::fisher::{avg_fisher_nodes, efim_theta};
use fimcrb_core::model::{
    generate_scenario, steering, ArrayGeometry, BeamformerSet, CMatrix, DerivativeConvention, SurfaceShape, SystemConfig,
};
use fimcrb_core::quadrature::GaussHermiteRule;
use fimcrb_core::rxshape::{rx_objective, solve_fixed_point, RxObjectiveData};
use fimcrb_core::sensing::beampattern;
use num_complex::Complex64;
use proptest::prelude::*;

fn geometry(y: Vec<f64>) -> ArrayGeometry {
    let cfg = SystemConfig::default();
    ArrayGeometry::new(cfg.spacing, cfg.wavenumber(), SurfaceShape { y }).unwrap()
}

fn beamformer(entries: &[(f64, f64)], n_t: usize, users: usize) -> BeamformerSet {
    let cols = entries.len() / n_t;
    let w = CMatrix::from_fn(n_t, cols, |i, j| {
        let (re, im) = entries[j * n_t + i];
        Complex64::new(re, im)
    });
    BeamformerSet::new(w, users).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn efim_ignores_common_phase_of_the_beamformer(
        ys in prop::collection::vec(0.0..0.02f64, 8),
        entries in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 8 * 4),
        phase in 0.0..(2.0 * PI),
        theta in 0.3..2.8f64,
    ) {
        let tx = geometry(ys.clone());
        let rx = geometry(ys.iter().rev().copied().collect());
        let w = beamformer(&entries, 8, 1);
        let rotated = BeamformerSet::new(&w.w * Complex64::from_polar(1.0, phase), 1).unwrap();
        let alpha = Complex64::new(1e-3, 2e-4);
        let f = |b: &BeamformerSet| efim_theta(b, &tx, &rx, theta, alpha, 64, 1e-11, DerivativeConvention::Exact).unwrap();
        let (a, b) = (f(&w), f(&rotated));
        prop_assert!((a - b).abs() <= 1e-10 * a);
    }

    #[test]
    fn efim_scales_with_reflection_power(
        entries in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 8 * 3),
        scale in 0.1..10.0f64,
        theta in 0.3..2.8f64,
    ) {
        let g = geometry(vec![0.0; 8]);
        let w = beamformer(&entries, 8, 0);
        let f = |a: f64| efim_theta(&w, &g, &g, theta, Complex64::new(a, 0.0), 64, 1e-11, DerivativeConvention::Exact).unwrap();
        let (base, scaled) = (f(1e-3), f(1e-3 * scale));
        prop_assert!((scaled - scale * scale * base).abs() <= 1e-9 * scaled);
    }

    #[test]
    fn steering_has_unit_modulus(ys in prop::collection::vec(-0.05..0.05f64, 1..12), theta in -PI..PI) {
        for z in steering(&geometry(ys), theta).iter() {
            prop_assert!((z.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn receive_vertex_beats_flat_surfaces(
        eta1 in -1.0..1.0f64,
        eta2 in 0.0..1.0f64,
        n in 2usize..10,
        hi in 0.001..0.03f64,
    ) {
        let cfg = SystemConfig::default();
        let x: Vec<f64> = (0..n).map(|i| i as f64 * cfg.spacing).collect();
        let data = RxObjectiveData::new(eta1, eta2, x, cfg.wavenumber()).unwrap();
        let sol = solve_fixed_point(&data, 0.0, hi).unwrap();
        let flat = rx_objective(&vec![0.0; n], &data);
        prop_assert!(sol.objective >= flat * (1.0 - 1e-12));
    }

    #[test]
    fn beampattern_is_quadratic_in_the_beamformer(
        entries in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 8 * 2),
        scale in 0.1..5.0f64,
        theta in 0.0..PI,
    ) {
        let g = geometry(vec![0.0; 8]);
        let w = beamformer(&entries, 8, 0);
        let a = beampattern(&w.w, &g, &[theta])[0];
        let b = beampattern(&(&w.w * Complex64::new(scale, 0.0)), &g, &[theta])[0];
        prop_assert!((b - scale * scale * a).abs() <= 1e-10 * b.max(1e-300));
    }
}

#[test]
fn ao_is_deterministic_for_a_seed() {
    let cfg = SystemConfig::default();
    let sc = generate_scenario(&cfg, 21);
    let run = || optimize(&cfg, &sc.users, &sc.targets, Mode::Joint, &AoSettings::default()).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.w, b.w);
    assert_eq!(a.y_t, b.y_t);
    assert_eq!(a.y_r, b.y_r);
}

#[test]
fn shaped_design_beats_rigid_baseline_on_surrogate() {
    let cfg = SystemConfig::default();
    let sc = generate_scenario(&cfg, 22);
    let settings = AoSettings::default();
    let ra = optimize(&cfg, &sc.users, &sc.targets, Mode::Ra, &settings).unwrap();
    let joint = optimize(&cfg, &sc.users, &sc.targets, Mode::Joint, &settings).unwrap();
    assert!(joint.objective() > ra.objective());

    // The reported objective is the quadrature surrogate of the final design.
    let (tx, rx) = joint.geometries(&cfg).unwrap();
    let nodes = GaussHermiteRule::new(cfg.quad_order).unwrap().weighted_angles(&sc.targets);
    let f = avg_fisher_nodes(&joint.w, &tx, &rx, &nodes, &cfg).unwrap();
    assert!((f - joint.objective()).abs() <= 1e-9 * f);
}
