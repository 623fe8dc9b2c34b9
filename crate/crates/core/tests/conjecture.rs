use gslab_core::conjecture::{
    check_lambda_limit, check_value_monotone_x, check_vx_sign, classify_model, gs_harness, verify_gs, Direction,
    MuOrder, RhoDirection, VIOLATION_BUDGET,
};
use gslab_core::expr::Expr;
use gslab_core::model::{builtin_spec, expr_coef};
use gslab_core::solver::{BoundarySet, Curve, GridConfig, SolveConfig};
use gslab_core::{DiffusionModel, Mode, Params};

fn builtin(name: &str) -> DiffusionModel {
    builtin_spec(name).unwrap().build().unwrap()
}

fn bumpy() -> DiffusionModel {
    DiffusionModel::new(
        "bumpy",
        expr_coef(Expr::c(0.0)),
        expr_coef(Expr::add(vec![Expr::c(1.0), Expr::mul(vec![Expr::x(), Expr::x()])])),
        expr_coef(Expr::c(1.0)),
        Params::default(),
        (-3.0, 3.0),
    )
    .unwrap()
}

fn detection_set(values: Vec<f64>, h: f64) -> BoundarySet {
    let n = values.len();
    BoundarySet {
        mode: Mode::Detection,
        x: (0..n).map(|i| i as f64).collect(),
        h_logphi: h,
        reference: 1.0,
        curves: vec![Curve {
            name: "b".into(),
            tolerance: vec![h; n],
            values,
        }],
    }
}

#[test]
fn builtin_classification() {
    let c = classify_model(&builtin("const-rho"));
    assert!(c.rho_constant && c.applicable());
    assert_eq!(c.expected(Mode::Detection).unwrap(), vec![("b", Direction::Flat)]);
    let c = classify_model(&builtin("mono-rho-tanh"));
    assert_eq!(
        (c.rho_direction, c.mu_order),
        (RhoDirection::Increasing, MuOrder::Mu1GtMu0)
    );
    let c = classify_model(&builtin("mono-rho-dec"));
    assert_eq!(
        (c.rho_direction, c.mu_order),
        (RhoDirection::Decreasing, MuOrder::Mu1GtMu0)
    );
    let c = classify_model(&builtin("mono-rho-tanh-mirror"));
    assert_eq!(c.mu_order, MuOrder::Mu1LtMu0);
    assert_eq!(c.expected(Mode::Detection).unwrap(), vec![("b", Direction::Decreasing)]);
    let c = classify_model(&builtin("paper-trap"));
    assert_eq!(c.rho_direction, RhoDirection::Decreasing);
}

#[test]
fn non_monotone_rho_is_not_applicable() {
    let m = bumpy();
    let c = classify_model(&m);
    assert_eq!(c.rho_direction, RhoDirection::NonMonotone);
    assert!(!c.applicable());
    let v = verify_gs(&m, &detection_set(vec![1.0, 2.0], 0.1), &c, VIOLATION_BUDGET);
    assert_eq!(v.pass, None);
    assert!(v.curves.is_empty());
}

#[test]
fn verify_counts_adverse_cells() {
    let m = builtin("mono-rho-tanh");
    let c = classify_model(&m);
    let h = 0.1f64;
    let up: Vec<f64> = (0..10).map(|i| (0.05 * i as f64).exp()).collect();
    let v = verify_gs(&m, &detection_set(up, h), &c, VIOLATION_BUDGET);
    assert_eq!(v.pass, Some(true));
    assert!(v.curves[0].max_violation_cells.abs() < 1e-12);
    let mut dip: Vec<f64> = (0..10).map(|i| (0.05 * i as f64).exp()).collect();
    dip[6] = dip[5] * (-2.0 * h).exp();
    let v = verify_gs(&m, &detection_set(dip, h), &c, VIOLATION_BUDGET);
    assert_eq!(v.pass, Some(false));
    assert!(
        (v.curves[0].max_violation_cells - 2.0).abs() < 1e-9,
        "{}",
        v.curves[0].max_violation_cells
    );
}

#[test]
fn increasing_rho_detection_harness() {
    let m = builtin("mono-rho-tanh");
    let (rep, field, _) = gs_harness(
        &m,
        Mode::Detection,
        &GridConfig::with_size(129, 129),
        &SolveConfig::default(),
        VIOLATION_BUDGET,
    )
    .unwrap();
    assert_eq!(rep.verdict.pass, Some(true), "{:?}", rep.verdict.curves);
    assert_eq!(rep.refinement.len(), 1);
    assert_eq!(rep.verdict.curves[0].observed, Direction::Increasing);
    let c = classify_model(&m);
    let mono = check_value_monotone_x(&field, &c);
    assert_eq!(mono.expected, Some(Direction::Decreasing));
    assert_eq!(mono.pass, Some(true), "{mono:?}");
    let vx = check_vx_sign(&m, &field, &c);
    assert_eq!(vx.expected_sign, Some(-1.0));
    assert!(vx.continuation_nodes > 0);
    assert_eq!(vx.pass, Some(true), "{vx:?}");
}

#[test]
fn mirrored_model_reverses_testing_curves() {
    let m = builtin("mono-rho-tanh-mirror");
    let (rep, field, _) = gs_harness(
        &m,
        Mode::Testing,
        &GridConfig::with_size(129, 129),
        &SolveConfig::default(),
        VIOLATION_BUDGET,
    )
    .unwrap();
    assert_eq!(rep.verdict.pass, Some(true), "{:?}", rep.verdict.curves);
    let exp: Vec<_> = rep
        .verdict
        .curves
        .iter()
        .map(|c| (c.curve.as_str(), c.expected))
        .collect();
    assert_eq!(exp, vec![("b0", Direction::Increasing), ("b1", Direction::Decreasing)]);
    let mono = check_value_monotone_x(&field, &classify_model(&m));
    assert_eq!(mono.pass, Some(true), "{mono:?}");
}

#[test]
fn constant_rho_is_flat() {
    let m = builtin("const-rho");
    let (rep, field, _) = gs_harness(
        &m,
        Mode::Detection,
        &GridConfig::with_size(129, 65),
        &SolveConfig::default(),
        VIOLATION_BUDGET,
    )
    .unwrap();
    assert_eq!(rep.verdict.pass, Some(true));
    assert!(rep.verdict.curves.iter().all(|c| c.observed == Direction::Flat));
    let vx = check_vx_sign(&m, &field, &classify_model(&m));
    assert_eq!(vx.expected_sign, Some(0.0));
    assert_eq!(vx.rho_rho_prime_sign, 0.0);
    assert_eq!(vx.pass, Some(true), "{vx:?}");
}

#[test]
fn lambda_limit_orders_and_shrinks() {
    let m = builtin("mono-rho-tanh");
    let r = check_lambda_limit(
        &m,
        &GridConfig::with_size(65, 65),
        &[0.025, 0.1, 0.05],
        &SolveConfig::default(),
    )
    .unwrap();
    let eps: Vec<f64> = r.steps.iter().map(|s| s.eps).collect();
    assert_eq!(eps, vec![0.1, 0.05, 0.025]);
    assert!(r.ordered && r.shrinking && r.pass, "{r:?}");
    assert_eq!(r.rates.len(), 2);
    assert!(r.steps.iter().all(|s| s.gap > 0.0));
}
