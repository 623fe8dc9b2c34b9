use std::sync::OnceLock;

use gslab_core::model::builtin_spec;
use gslab_core::solver::{
    build_grid, check_structure, extract_boundaries, mc_value_oracle, solve, solve_1d_constant_rho, solve_qd, solve_st,
    solve_st_timechanged, BoundarySet, GridConfig, LineSystem, McConfig, Region, SolveConfig, TridiagLcp, ValueField,
};
use gslab_core::{DiffusionModel, Error, Mode};
use proptest::prelude::*;

fn builtin(name: &str) -> DiffusionModel {
    builtin_spec(name).unwrap().build().unwrap()
}

fn field(name: &str, mode: Mode, n: usize) -> (ValueField, BoundarySet) {
    let m = builtin(name);
    let g = build_grid(&GridConfig::with_size(n, n), &m, mode).unwrap();
    let f = solve(&g, &m, mode, &SolveConfig::default()).unwrap();
    let b = extract_boundaries(&f).unwrap();
    (f, b)
}

fn const_st() -> &'static (ValueField, BoundarySet) {
    static F: OnceLock<(ValueField, BoundarySet)> = OnceLock::new();
    F.get_or_init(|| field("const-rho", Mode::Testing, 129))
}

fn const_qd() -> &'static (ValueField, BoundarySet) {
    static F: OnceLock<(ValueField, BoundarySet)> = OnceLock::new();
    F.get_or_init(|| field("const-rho", Mode::Detection, 129))
}

#[test]
fn default_grid_is_log_uniform() {
    let m = builtin("const-rho");
    let g = build_grid(&GridConfig::default(), &m, Mode::Detection).unwrap();
    assert_eq!(g.n_phi(), 257);
    assert!(!g.zero_row);
    for w in g.phi.windows(2) {
        assert!(((w[1] / w[0]).ln() - g.h_logphi).abs() < 1e-12);
    }
    assert!((g.phi[0] - 1e-3).abs() < 1e-15 && (g.phi[256] - 1e3).abs() < 1e-9);
    let k = g.nearest_row(1.0);
    assert!(g.phi[k].ln().abs() <= 0.5 * g.h_logphi + 1e-12);
}

#[test]
fn testing_grid_has_zero_row() {
    let m = builtin("const-rho");
    let g = build_grid(&GridConfig::with_size(65, 33), &m, Mode::Testing).unwrap();
    assert!(g.zero_row);
    assert_eq!(g.phi[0], 0.0);
    assert_eq!(g.first_positive(), 1);
    assert_eq!(g.n_phi(), 66);
}

#[test]
fn grid_rejections() {
    let m = builtin("const-rho");
    let small = GridConfig {
        phi_max: 15.0,
        ..GridConfig::with_size(65, 33)
    };
    assert!(matches!(build_grid(&small, &m, Mode::Testing), Err(Error::Config(_))));
    assert!(matches!(
        build_grid(&GridConfig::with_size(15, 33), &m, Mode::Testing),
        Err(Error::Config(_))
    ));
    let above = GridConfig {
        phi_min: 2.0,
        ..GridConfig::with_size(65, 33)
    };
    assert!(build_grid(&above, &m, Mode::Testing).is_err());
    let wide = GridConfig {
        x_range: Some((-100.0, 0.0)),
        ..GridConfig::with_size(65, 33)
    };
    assert!(build_grid(&wide, &m, Mode::Testing).is_err());
    let g = build_grid(&GridConfig::with_size(65, 33), &m, Mode::Detection).unwrap();
    assert!(solve_st(&g, &m, &SolveConfig::default()).is_err());
}

#[test]
fn refined_grid_halves_steps() {
    let m = builtin("const-rho");
    let c = GridConfig::with_size(65, 33);
    let a = build_grid(&c, &m, Mode::Detection).unwrap();
    let b = build_grid(&c.refined(), &m, Mode::Detection).unwrap();
    assert!((a.h_logphi - 2.0 * b.h_logphi).abs() < 1e-14);
    assert!((a.h_x - 2.0 * b.h_x).abs() < 1e-14);
}

#[test]
fn testing_value_bounds_and_zero_row() {
    let (f, _) = const_st();
    let g = &f.grid;
    for j in 0..g.n_x() {
        assert_eq!(f.value(0, j), 0.0);
    }
    let tol = 2.0 * f.eps_d();
    for k in g.first_positive()..g.n_phi() {
        let psi = f.payoff(g.phi[k]);
        for j in 0..g.n_x() {
            let v = f.value(k, j);
            assert!(v >= -1e-12 && v <= psi + 1e-12, "k={k} j={j} v={v} psi={psi}");
        }
        let row: Vec<f64> = (0..g.n_x()).map(|j| f.value(k, j)).collect();
        let spread =
            row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - row.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread <= tol, "row {k} spread {spread}");
    }
}

#[test]
fn testing_matches_one_dimensional_oracle() {
    let (f, b) = const_st();
    let m = builtin("const-rho");
    let g = &f.grid;
    let k0 = g.first_positive();
    let o = solve_1d_constant_rho(&m, Mode::Testing, (g.phi[k0], g.phi[g.n_phi() - 1]), 4097).unwrap();
    let bound = 3.0 * (g.h_logphi * g.h_logphi).max(o.tol_1d);
    let mut worst = 0.0f64;
    for k in k0..g.n_phi() {
        let want = o.value_at(g.phi[k]);
        for j in 0..g.n_x() {
            worst = worst.max((f.value(k, j) - want).abs());
        }
    }
    assert!(worst <= bound, "sup diff {worst} bound {bound}");
    for (name, want) in [("b0", o.boundaries[0]), ("b1", o.boundaries[1])] {
        for v in &b.curve(name).unwrap().values {
            assert!((v.ln() - want.ln()).abs() <= 3.0 * g.h_logphi, "{name} {v} vs {want}");
        }
    }
}

#[test]
fn testing_boundaries_straddle_reference() {
    let (f, b) = const_st();
    let r = f.params.cost_b / f.params.cost_a;
    for (lo, hi) in b.b0().unwrap().iter().zip(b.b1().unwrap()) {
        assert!(*lo < r && r < *hi);
    }
    assert!(check_structure(f, b).pass);
}

#[test]
fn timechanged_equals_plain_for_constant_rho() {
    let m = builtin("const-rho");
    let c = GridConfig::with_size(129, 33);
    let a = solve_st(&build_grid(&c, &m, Mode::Testing).unwrap(), &m, &SolveConfig::default()).unwrap();
    let g = build_grid(&c, &m, Mode::TestingTimeChanged).unwrap();
    let b = solve_st_timechanged(&g, &m, &SolveConfig::default()).unwrap();
    let d = a
        .values
        .iter()
        .zip(&b.values)
        .fold(0.0f64, |w, (x, y)| w.max((x - y).abs()));
    assert!(d < 1e-9, "diff {d}");
}

#[test]
fn timechanged_close_for_varying_rho() {
    let m = builtin("mono-rho-tanh");
    let c = GridConfig::with_size(129, 129);
    let a = solve_st(&build_grid(&c, &m, Mode::Testing).unwrap(), &m, &SolveConfig::default()).unwrap();
    let g = build_grid(&c, &m, Mode::TestingTimeChanged).unwrap();
    let b = solve_st_timechanged(&g, &m, &SolveConfig::default()).unwrap();
    let bound = 3.0 * (a.eps_d() + g.h_logphi * g.h_logphi);
    let d = a
        .values
        .iter()
        .zip(&b.values)
        .fold(0.0f64, |w, (x, y)| w.max((x - y).abs()));
    assert!(d <= bound, "diff {d} bound {bound}");
}

#[test]
fn detection_bounds_and_top_row() {
    let (f, _) = const_qd();
    let g = &f.grid;
    let c = f.params.cost_c;
    let top = g.n_phi() - 1;
    for j in 0..g.n_x() {
        assert_eq!(f.region_at(top, j), Region::Stop);
        assert!(f.value(top, j).abs() < 1e-12);
    }
    for v in &f.values {
        assert!(*v >= -1.0 / c - 1e-12 && *v <= 1e-12);
    }
    assert!(f.diagnostics.smooth_fit.is_some());
}

#[test]
fn detection_matches_one_dimensional_oracle() {
    let (f, b) = const_qd();
    let m = builtin("const-rho");
    let g = &f.grid;
    let o = solve_1d_constant_rho(&m, Mode::Detection, (g.phi[0], g.phi[g.n_phi() - 1]), 4097).unwrap();
    let bound = 3.0 * (g.h_logphi * g.h_logphi).max(o.tol_1d);
    let mut worst = 0.0f64;
    for k in 0..g.n_phi() {
        let want = o.value_at(g.phi[k]);
        for j in 0..g.n_x() {
            worst = worst.max((f.value(k, j) - want).abs());
        }
    }
    assert!(worst <= bound, "sup diff {worst} bound {bound}");
    let curve = b.b().unwrap();
    let lam_c = f.params.lambda_cost / f.params.cost_c;
    for v in curve {
        assert!(*v >= lam_c);
        assert!((v.ln() - o.boundaries[0].ln()).abs() <= 3.0 * g.h_logphi);
        assert!((v.ln() - curve[0].ln()).abs() <= g.h_logphi + 1e-12);
    }
    assert!(check_structure(f, b).pass);
}

#[test]
fn iteration_decreases_from_payoff() {
    let (f, _) = const_st();
    assert!(f.diagnostics.max_increase <= 1e-12, "{}", f.diagnostics.max_increase);
    assert_eq!(f.diagnostics.residual_history.len(), f.diagnostics.sweeps);
    let (q, _) = const_qd();
    assert!(q.diagnostics.max_increase <= 1e-12);
}

#[test]
fn sweep_cap_reports_history() {
    let m = builtin("mono-rho-tanh");
    let g = build_grid(&GridConfig::with_size(65, 65), &m, Mode::Detection).unwrap();
    let cfg = SolveConfig {
        max_sweeps: 1,
        ..SolveConfig::default()
    };
    match solve(&g, &m, Mode::Detection, &cfg) {
        Err(Error::Solver { sweeps, history, .. }) => {
            assert_eq!(sweeps, 1);
            assert_eq!(history.len(), 1);
        }
        other => panic!("expected a solver error, got {other:?}"),
    }
}

#[test]
fn detection_rates_must_be_positive() {
    let m = builtin("const-rho");
    let g = build_grid(&GridConfig::with_size(65, 33), &m, Mode::Detection).unwrap();
    assert!(solve_qd(&g, &m, 0.0, 1.0, &SolveConfig::default()).is_err());
    assert!(solve_qd(&g, &m, 1.0, -1.0, &SolveConfig::default()).is_err());
}

#[test]
fn boundary_escape_on_short_phi_range() {
    let m = builtin("paper-trap");
    let c = GridConfig {
        phi_max: 25.0,
        ..GridConfig::with_size(65, 65)
    };
    let g = build_grid(&c, &m, Mode::Detection).unwrap();
    let f = solve(&g, &m, Mode::Detection, &SolveConfig::default()).unwrap();
    assert!(matches!(extract_boundaries(&f), Err(Error::BoundaryEscape { .. })));
}

#[test]
fn csv_headers() {
    let (f, b) = const_st();
    let mut buf = Vec::new();
    f.write_csv(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert!(s.starts_with("phi,x,value,region\n"), "{}", &s[..40]);
    let mut buf = Vec::new();
    b.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("x,b0,b1\n"));
    let (_, qb) = const_qd();
    let mut buf = Vec::new();
    qb.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("x,b\n"));
}

#[test]
fn monte_carlo_edge_cases() {
    let m = builtin("const-rho");
    let cfg = McConfig::default();
    assert_eq!(
        mc_value_oracle(&m, Mode::Testing, 0.0, 0.0, &cfg).unwrap().estimate,
        0.0
    );
    let far = mc_value_oracle(&m, Mode::Detection, 1e3, 0.0, &cfg).unwrap();
    assert!(far.estimate.abs() <= 3.0 * far.stderr + 1e-12);
    let few = McConfig {
        n_paths: 5_000,
        ..McConfig::default()
    };
    assert!(mc_value_oracle(&m, Mode::Detection, 1.0, 0.0, &few).is_err());
}

#[test]
fn monte_carlo_agrees_with_grid() {
    let (f, _) = const_qd();
    let m = builtin("const-rho");
    for phi in [0.3, 0.7] {
        let e = mc_value_oracle(&m, Mode::Detection, phi, 0.0, &McConfig::default()).unwrap();
        let v = f.interpolate(phi, 0.0).unwrap();
        assert!(
            (v - e.estimate).abs() <= 3.0 * e.stderr + f.eps_d(),
            "phi={phi} grid {v} mc {}",
            e.estimate
        );
    }
}

#[test]
fn oracle_boundaries_and_refinement() {
    let m = builtin("const-rho");
    let st = solve_1d_constant_rho(&m, Mode::Testing, (1e-3, 1e3), 2049).unwrap();
    let fine = solve_1d_constant_rho(&m, Mode::Testing, (1e-3, 1e3), 4097).unwrap();
    assert!(st.boundaries[0] < 1.0 && 1.0 < st.boundaries[1]);
    let h = (st.y[1] - st.y[0]).abs();
    for i in 0..2 {
        let shift = (st.boundaries[i].ln() - fine.boundaries[i].ln()).abs();
        assert!(shift <= h, "{:?} {:?}", st.boundaries, fine.boundaries);
    }
    let qd = solve_1d_constant_rho(&m, Mode::Detection, (1e-3, 1e3), 4097).unwrap();
    assert!(qd.boundaries[0] >= 1.0);
    assert!(solve_1d_constant_rho(&m, Mode::Detection, (1e-3, 1e3), 100).is_err());
    assert!(matches!(
        solve_1d_constant_rho(&builtin("mono-rho-tanh"), Mode::Detection, (1e-3, 1e3), 4097),
        Err(Error::ModelRejected(_))
    ));
}

fn system(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0.0..5.0f64, n),
        prop::collection::vec(0.0..5.0f64, n),
        prop::collection::vec(0.01..2.0f64, n),
        prop::collection::vec(-3.0..3.0f64, n),
        prop::collection::vec(-1.0..1.0f64, n),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lcp_satisfies_complementarity((lo, up, slack, rhs, psi) in system(30)) {
        let diag: Vec<f64> = (0..30).map(|j| lo[j] + up[j] + slack[j]).collect();
        let sys = LineSystem { lower: &lo, diag: &diag, upper: &up, rhs: &rhs, psi: &psi };
        let mut v = psi.clone();
        let mut stop = vec![true; 30];
        TridiagLcp::new().solve(&sys, &mut v, &mut stop);
        for j in 0..30 {
            let mut av = diag[j] * v[j] - rhs[j];
            if j > 0 { av -= lo[j] * v[j - 1]; }
            if j < 29 { av -= up[j] * v[j + 1]; }
            let gap = v[j] - psi[j];
            prop_assert!(gap <= 1e-9, "j={} gap={}", j, gap);
            prop_assert!(av <= 1e-8, "j={} av={}", j, av);
            prop_assert!((av * gap).abs() <= 1e-8, "j={} product", j);
        }
    }
}
