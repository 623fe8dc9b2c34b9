use std::sync::Arc;

use gslab_core::model::{builtin_spec, FiniteDiff};
use gslab_core::sde::{simulate_canonical, SimConfig};
use gslab_core::trap::{detect_trap, hormander_scan, perturbation_check, tol_trap, trap_residual};
use gslab_core::{DiffusionModel, Error, Params};

fn builtin(name: &str) -> DiffusionModel {
    builtin_spec(name).unwrap().build().unwrap()
}

fn trap_with_lambda(lambda: f64) -> DiffusionModel {
    let mut s = builtin_spec("paper-trap").unwrap();
    s.lambda = Some(lambda);
    s.build().unwrap()
}

#[test]
fn tolerance_scales_with_lambda() {
    assert_eq!(tol_trap(0.0), 1e-8);
    assert!((tol_trap(3.0) - 4e-8).abs() < 1e-22);
}

// For the trap model F(x) = x and G1 = lambda (1 + e^{-x}), so
// R_kappa(x) = lambda e^{-x} (1 - 1/kappa).
#[test]
fn trap_model_residual_closed_form() {
    let m = builtin("paper-trap");
    assert!(trap_residual(&m, 1.0).unwrap().sup < 1e-10);
    let r = trap_residual(&m, 2.0).unwrap();
    for (x, v) in r.x.iter().zip(&r.residual) {
        let want = (-x).exp() * 0.5;
        assert!((v - want).abs() < 1e-9 * (1.0 + want), "x={x} {v} {want}");
    }
    let i = r.x.iter().position(|x| x.abs() < 1e-12).expect("0 is a sample point");
    assert!((r.residual[i] - 0.5).abs() < 1e-10);
    assert!(trap_residual(&m, 0.0).is_err());
    assert!(trap_residual(&m, f64::INFINITY).is_err());
}

// const-rho: F(x) = x, G1 = 1/2.
#[test]
fn constant_rho_residual_closed_form() {
    let m = builtin("const-rho");
    for kappa in [0.5, 1.0, 4.0] {
        let r = trap_residual(&m, kappa).unwrap();
        for (x, v) in r.x.iter().zip(&r.residual) {
            let want = -0.5 - (-x).exp() / kappa;
            assert!((v - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
        assert!(r.sup >= 0.5);
    }
}

#[test]
fn detects_trap_curve() {
    let t = detect_trap(&builtin("paper-trap")).unwrap();
    assert!(t.has_trap);
    let k = t.kappa.unwrap();
    assert!((k - 1.0).abs() < 1e-8, "kappa {k}");
    assert!(t.residual_sup <= t.tol_trap);
    assert!(t.candidate_spread < t.tol_trap);
    let c = t.curve_samples.as_ref().unwrap();
    for (x, g) in t.residual_profile.x.iter().zip(c) {
        assert!((g - x.exp()).abs() < 1e-9 * x.exp());
    }
}

#[test]
fn trap_persists_for_other_lambda() {
    for lambda in [0.5, 2.0] {
        let t = detect_trap(&trap_with_lambda(lambda)).unwrap();
        assert!(t.has_trap, "lambda {lambda}");
        assert!((t.kappa.unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(t.tol_trap, tol_trap(lambda));
    }
}

#[test]
fn no_trap_for_monotone_or_constant_models() {
    for name in ["const-rho", "mono-rho-tanh", "mono-rho-dec"] {
        let t = detect_trap(&builtin(name)).unwrap();
        assert!(!t.has_trap, "{name}");
        assert!(t.kappa.is_none() && t.curve_samples.is_none());
        assert!(t.residual_sup > 1e3 * t.tol_trap, "{name} {}", t.residual_sup);
    }
}

#[test]
fn perturbation_destroys_trap() {
    let m = builtin("paper-trap");
    let steps = perturbation_check(&m, &[0.0, 1e-3, 1e-2, 1e-1]).unwrap();
    assert!(steps[0].has_trap);
    assert!(steps[0].min_residual_sup < 1e-10);
    for s in &steps[1..] {
        assert!(!s.has_trap, "eps {}", s.eps);
        assert!(
            s.min_residual_sup >= 0.9 * s.eps,
            "eps {} min {}",
            s.eps,
            s.min_residual_sup
        );
        assert!((s.candidate_ratio - 1.0).abs() < 1e-8);
        // the unchanged candidate misses by exactly eps
        assert!((s.candidate_sup - s.eps).abs() < 1e-8);
    }
}

#[test]
fn trap_curve_is_invariant_for_canonical_dynamics() {
    let m = trap_with_lambda(2.0);
    let cfg = SimConfig::new(1.0, 1e-3, 5);
    for i in 0..3 {
        let p = simulate_canonical(&m, 0.0, 0.3, &cfg, i).unwrap();
        assert!(p.u.unwrap().iter().all(|u| u.abs() < 1e-8));
    }
    let p = simulate_canonical(&m, 0.5, 0.3, &cfg, 0).unwrap();
    assert!(p.u.unwrap().last().unwrap().abs() > 1e-3);
}

#[test]
fn hormander_fails_only_on_trap() {
    let m = builtin("paper-trap");
    let map = hormander_scan(&m, (-1.0, 1.0), (-2.0, 2.0), 21, 41, 6).unwrap();
    let fails = map.fail_nodes();
    assert_eq!(fails.len(), 41);
    assert!(fails.iter().all(|(u, _)| u.abs() < 1e-12));
    let nx = map.x.len();
    let i = map.u.iter().position(|u| (u - 1.0).abs() < 1e-12).unwrap();
    let j = map.x.iter().position(|x| x.abs() < 1e-12).unwrap();
    assert_eq!(map.index[i * nx + j], Some(0));
    let point = hormander_scan(&m, (0.0, 0.1), (0.7, 0.8), 2, 2, 6).unwrap();
    assert_eq!(point.index[0], None);
}

#[test]
fn hormander_holds_for_constant_rho() {
    let map = hormander_scan(&builtin("const-rho"), (-2.0, 2.0), (-4.0, 4.0), 41, 81, 6).unwrap();
    assert!(map.fail_nodes().is_empty());
}

#[test]
fn hormander_needs_derivatives() {
    let m = DiffusionModel::new(
        "fd",
        Arc::new(FiniteDiff::new("0", |_| 0.0)),
        Arc::new(FiniteDiff::new("1", |_| 1.0)),
        Arc::new(FiniteDiff::new("1", |_| 1.0)),
        Params::default(),
        (-4.0, 4.0),
    )
    .unwrap();
    assert!(matches!(
        hormander_scan(&m, (-1.0, 1.0), (-1.0, 1.0), 3, 3, 6),
        Err(Error::Capability { .. })
    ));
    assert!(hormander_scan(&builtin("const-rho"), (1.0, -1.0), (-1.0, 1.0), 3, 3, 6).is_err());
}

#[test]
fn verdict_survives_scale_transform() {
    let s = builtin("paper-trap").scale_transform().unwrap();
    let t = detect_trap(&s).unwrap();
    assert!(t.has_trap, "sup {}", t.residual_sup);
    let s = builtin("mono-rho-tanh").scale_transform().unwrap();
    assert!(!detect_trap(&s).unwrap().has_trap);
}

#[test]
fn exports() {
    let t = detect_trap(&builtin("paper-trap")).unwrap();
    let mut buf = Vec::new();
    t.write_curve_csv(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert!(s.starts_with("x,gamma\n"));
    assert_eq!(s.lines().count(), t.residual_profile.x.len() + 1);
    let mut buf = Vec::new();
    t.residual_profile.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("x,residual\n"));
    let json = serde_json::to_string(&t).unwrap();
    assert!(json.contains("\"has_trap\":true"));
    let none = detect_trap(&builtin("const-rho")).unwrap();
    let mut buf = Vec::new();
    none.write_curve_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "x,gamma\n");
}
