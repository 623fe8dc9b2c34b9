//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use gslab_core::conjecture::{check_lambda_limit, check_vx_sign, classify_model, verify_gs, VIOLATION_BUDGET};
use gslab_core::model::builtin_spec;
use gslab_core::sde::{
    interpolate_clock, mean_stderr, simulate_hat, simulate_qd, simulate_st, terminal_hat, terminal_st, time_change,
    SimConfig,
};
use gslab_core::solver::{
    build_grid, check_structure, extract_boundaries, mc_value_oracle, solve, solve_1d_constant_rho, BoundarySet,
    GridConfig, McConfig, SolveConfig, ValueField,
};
use gslab_core::trap::{detect_trap, hormander_scan, perturbation_check};
use gslab_core::{DiffusionModel, Mode};
use statrs::distribution::{ContinuousCDF, Normal};

const GS_MODELS: [&str; 4] = [
    "mono-rho-tanh",
    "mono-rho-dec",
    "mono-rho-tanh-mirror",
    "mono-rho-dec-mirror",
];
const ALL_MODELS: [&str; 6] = [
    "const-rho",
    "paper-trap",
    "mono-rho-tanh",
    "mono-rho-dec",
    "mono-rho-tanh-mirror",
    "mono-rho-dec-mirror",
];
const GS_SECONDS: f64 = 300.0;
const TRAP_SECONDS: f64 = 10.0;
const PATH_SECONDS: f64 = 120.0;

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, pass: bool, detail: String, t: Instant) {
        if !pass {
            self.failed += 1;
        }
        println!(
            "{} [{id:>2}] {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
}

fn builtin(name: &str) -> DiffusionModel {
    builtin_spec(name).unwrap().build().unwrap()
}

struct Solved {
    name: &'static str,
    mode: Mode,
    field: ValueField,
    bounds: BoundarySet,
}

fn solve_default(name: &'static str, mode: Mode) -> Result<Solved, String> {
    let m = builtin(name);
    let g = build_grid(&GridConfig::default(), &m, mode).map_err(|e| e.to_string())?;
    let field = solve(&g, &m, mode, &SolveConfig::default()).map_err(|e| e.to_string())?;
    let bounds = extract_boundaries(&field).map_err(|e| e.to_string())?;
    Ok(Solved {
        name,
        mode,
        field,
        bounds,
    })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |w, (x, y)| w.max((x - y).abs()))
}

fn curve_cells(a: &BoundarySet, b: &BoundarySet, h: f64) -> f64 {
    let mut w = 0.0f64;
    for c in &a.curves {
        let Some(d) = b.curve(&c.name) else {
            return f64::INFINITY;
        };
        for (p, q) in c.values.iter().zip(&d.values) {
            w = w.max((p.ln() - q.ln()).abs() / h);
        }
    }
    w
}

fn gs_suite(gate: &mut Gate, id: u32, mode: Mode, solved: &mut Vec<Solved>) {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in GS_MODELS {
        let tm = Instant::now();
        match solve_default(name, mode) {
            Ok(s) => {
                let m = builtin(name);
                let v = verify_gs(&m, &s.bounds, &classify_model(&m), VIOLATION_BUDGET);
                let secs = tm.elapsed().as_secs_f64();
                let worst = v.curves.iter().fold(0.0f64, |w, c| w.max(c.max_violation_cells));
                pass &= v.pass == Some(true) && secs <= GS_SECONDS;
                parts.push(format!("{name} {worst:.2}/{VIOLATION_BUDGET} cells {secs:.1}s"));
                solved.push(s);
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    let label = if mode.is_testing() {
        "boundary monotonicity, testing"
    } else {
        "boundary monotonicity, detection"
    };
    gate.report(id, label, pass, parts.join("; "), t);
}

fn structure(gate: &mut Gate, solved: &[Solved]) {
    let t = Instant::now();
    let mut bad = Vec::new();
    for s in solved {
        let r = check_structure(&s.field, &s.bounds);
        if !r.pass {
            bad.push(format!("{} {}: {r:?}", s.name, s.mode.as_str()));
        }
    }
    let detail = if bad.is_empty() {
        format!("{} fields within 2 eps_D", solved.len())
    } else {
        bad.join("; ")
    };
    gate.report(3, "structural invariants", bad.is_empty(), detail, t);
}

fn time_change_equivalence(gate: &mut Gate, solved: &mut Vec<Solved>) {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["const-rho", "mono-rho-tanh"] {
        match (
            solve_default(name, Mode::Testing),
            solve_default(name, Mode::TestingTimeChanged),
        ) {
            (Ok(a), Ok(b)) => {
                let h = a.field.grid.h_logphi;
                let bound = 3.0 * (a.field.eps_d() + h * h);
                let d = sup_diff(&a.field.values, &b.field.values);
                let cells = curve_cells(&a.bounds, &b.bounds, h);
                pass &= d <= bound && cells <= 1.0 + 1e-9;
                parts.push(format!("{name} value {d:.2e}/{bound:.2e} boundary {cells:.2}/1 cells"));
                solved.push(b);
                if name == "const-rho" {
                    solved.push(a);
                }
            }
            (a, b) => {
                pass = false;
                parts.push(format!("{name} error: {:?} {:?}", a.err(), b.err()));
            }
        }
    }
    gate.report(4, "time-change equivalence", pass, parts.join("; "), t);
}

fn oracle_1d(gate: &mut Gate, solved: &mut Vec<Solved>) {
    let t = Instant::now();
    let m = builtin("const-rho");
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in [Mode::Testing, Mode::Detection] {
        let s = match solve_default("const-rho", mode) {
            Ok(s) => s,
            Err(e) => {
                pass = false;
                parts.push(format!("{} error: {e}", mode.as_str()));
                continue;
            }
        };
        let g = &s.field.grid;
        let k0 = g.first_positive();
        let o = match solve_1d_constant_rho(&m, mode, (g.phi[k0], g.phi[g.n_phi() - 1]), 4097) {
            Ok(o) => o,
            Err(e) => {
                pass = false;
                parts.push(format!("{} oracle error: {e}", mode.as_str()));
                continue;
            }
        };
        let bound = 3.0 * (g.h_logphi * g.h_logphi).max(o.tol_1d);
        let mut worst = 0.0f64;
        for k in k0..g.n_phi() {
            let want = o.value_at(g.phi[k]);
            for j in 0..g.n_x() {
                worst = worst.max((s.field.value(k, j) - want).abs());
            }
        }
        let mut cells = 0.0f64;
        for (c, want) in s.bounds.curves.iter().zip(&o.boundaries) {
            for v in &c.values {
                cells = cells.max((v.ln() - want.ln()).abs() / g.h_logphi);
            }
        }
        pass &= worst <= bound && cells <= 3.0;
        parts.push(format!(
            "{} value {worst:.2e}/{bound:.2e} boundary {cells:.2}/3 cells",
            mode.as_str()
        ));
        solved.push(s);
    }
    gate.report(5, "constant-rho reduction", pass, parts.join("; "), t);
}

fn probes(mode: Mode, reference: f64) -> [(f64, f64); 5] {
    let r = reference;
    if mode.is_testing() {
        [
            (0.5 * r, 0.0),
            (0.9 * r, -1.0),
            (r, 0.0),
            (1.1 * r, 1.0),
            (2.0 * r, 0.5),
        ]
    } else {
        [
            (0.2 * r, 0.0),
            (0.5 * r, -1.0),
            (0.8 * r, 0.0),
            (r, 1.0),
            (2.0 * r, -0.5),
        ]
    }
}

fn monte_carlo(gate: &mut Gate, solved: &[Solved]) {
    let t = Instant::now();
    let mut pass = true;
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    let mut bad = Vec::new();
    for name in ALL_MODELS {
        let m = builtin(name);
        for mode in [Mode::Testing, Mode::Detection] {
            let Some(s) = solved.iter().find(|s| s.name == name && s.mode == mode) else {
                pass = false;
                bad.push(format!("{name} {} missing field", mode.as_str()));
                continue;
            };
            for (phi, x) in probes(mode, m.reference_phi(mode)) {
                let v = s.field.interpolate(phi, x);
                let e = mc_value_oracle(&m, mode, phi, x, &McConfig::default());
                match (v, e) {
                    (Ok(v), Ok(e)) => {
                        let bound = 3.0 * e.stderr + s.field.eps_d();
                        let d = (v - e.estimate).abs();
                        worst = worst.max(d / bound);
                        count += 1;
                        if d > bound {
                            pass = false;
                            bad.push(format!("{name} {} ({phi:.3},{x}) {d:.2e}/{bound:.2e}", mode.as_str()));
                        }
                    }
                    (v, e) => {
                        pass = false;
                        bad.push(format!("{name} ({phi},{x}) {:?} {:?}", v.err(), e.err()));
                    }
                }
            }
        }
    }
    let mut detail = format!("{count} probes at 1e5 paths, worst diff/bound {worst:.3}");
    if !bad.is_empty() {
        detail = format!("{detail}; {}", bad.join("; "));
    }
    gate.report(6, "Monte Carlo cross-check", pass, detail, t);
}

fn trap_detection(gate: &mut Gate) {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    match detect_trap(&builtin("paper-trap")) {
        Ok(r) => {
            let k = r.kappa.unwrap_or(f64::NAN);
            pass &= r.has_trap && (k - 1.0).abs() <= 1e-8 && r.residual_sup < 1e-10;
            parts.push(format!("paper-trap kappa {k:.12} residual {:.2e}", r.residual_sup));
        }
        Err(e) => {
            pass = false;
            parts.push(format!("paper-trap error: {e}"));
        }
    }
    for name in ["const-rho", "mono-rho-tanh"] {
        match detect_trap(&builtin(name)) {
            Ok(r) => {
                pass &= !r.has_trap;
                parts.push(format!(
                    "{name} has_trap={} residual {:.2e}",
                    r.has_trap, r.residual_sup
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    pass &= t.elapsed().as_secs_f64() <= TRAP_SECONDS;
    gate.report(7, "trap detection", pass, parts.join("; "), t);
}

fn perturbation(gate: &mut Gate) {
    let t = Instant::now();
    let (pass, detail) = match perturbation_check(&builtin("paper-trap"), &[1e-3, 1e-2, 1e-1]) {
        Ok(steps) => {
            let pass = steps.iter().all(|s| !s.has_trap && s.min_residual_sup >= 0.9 * s.eps);
            let d = steps
                .iter()
                .map(|s| {
                    format!(
                        "eps {:.0e} trap={} min {:.4e}/{:.4e}",
                        s.eps,
                        s.has_trap,
                        s.min_residual_sup,
                        0.9 * s.eps
                    )
                })
                .collect::<Vec<_>>()
                .join("; ");
            (pass, d)
        }
        Err(e) => (false, e.to_string()),
    };
    gate.report(8, "trap perturbation", pass, detail, t);
}

fn hormander(gate: &mut Gate) {
    let t = Instant::now();
    let scan = |name: &str| hormander_scan(&builtin(name), (-2.0, 2.0), (-4.0, 4.0), 41, 81, 6);
    let (pass, detail) = match (scan("paper-trap"), scan("const-rho")) {
        (Ok(p), Ok(c)) => {
            let h = p.u[1] - p.u[0];
            let fails = p.fail_nodes();
            let stray = fails.iter().filter(|(u, _)| u.abs() > h + 1e-12).count();
            let covered =
                p.x.iter()
                    .all(|x| fails.iter().any(|(u, fx)| fx == x && u.abs() <= h + 1e-12));
            let empty = c.fail_nodes().is_empty();
            (
                stray == 0 && covered && empty,
                format!(
                    "paper-trap {} fail nodes, {stray} off u=0, all x covered={covered}; const-rho fail nodes {}",
                    fails.len(),
                    c.fail_nodes().len()
                ),
            )
        }
        (a, b) => (false, format!("{:?} {:?}", a.err(), b.err())),
    };
    gate.report(9, "Hormander map", pass, detail, t);
}

fn vx_sign(gate: &mut Gate, solved: &[Solved]) {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["mono-rho-tanh", "const-rho"] {
        let Some(s) = solved.iter().find(|s| s.name == name && s.mode == Mode::Detection) else {
            pass = false;
            parts.push(format!("{name} missing field"));
            continue;
        };
        let m = builtin(name);
        let r = check_vx_sign(&m, &s.field, &classify_model(&m));
        pass &= r.pass == Some(true);
        parts.push(format!(
            "{name} worst {:.2e}/{:.2e} over {} nodes",
            r.worst, r.slack, r.continuation_nodes
        ));
    }
    gate.report(10, "V_x sign", pass, parts.join("; "), t);
}

fn lambda_limit(gate: &mut Gate) {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["paper-trap", "mono-rho-tanh"] {
        match check_lambda_limit(
            &builtin(name),
            &GridConfig::default(),
            &[0.1, 0.05, 0.025],
            &SolveConfig::default(),
        ) {
            Ok(r) => {
                pass &= r.pass;
                let gaps: Vec<String> = r.steps.iter().map(|s| format!("{:.2e}", s.gap)).collect();
                let lo = r.steps.iter().fold(f64::INFINITY, |m, s| m.min(s.min_difference));
                parts.push(format!(
                    "{name} ordered={} (min {lo:.2e} vs -{:.2e}) gaps [{}]",
                    r.ordered,
                    r.tolerance,
                    gaps.join(", ")
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    gate.report(11, "lambda limit", pass, parts.join("; "), t);
}

fn ks_standard_normal(mut z: Vec<f64>) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    z.sort_by(f64::total_cmp);
    let m = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, v)| {
            let c = n.cdf(*v);
            (c - i as f64 / m).abs().max(((i + 1) as f64 / m - c).abs())
        })
        .fold(0.0, f64::max)
}

fn path_suite(gate: &mut Gate) {
    let t = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut check = |ok: bool, s: String| {
        pass &= ok;
        parts.push(s);
    };

    let st: Vec<f64> = terminal_st(
        &builtin("mono-rho-tanh"),
        1.0,
        0.0,
        &SimConfig::new(1.0, 1e-2, 11),
        100_000,
    )
    .unwrap()
    .into_iter()
    .map(|p| p.0)
    .collect();
    let (m, se) = mean_stderr(&st);
    check((m - 1.0).abs() <= 3.0 * se, format!("P0 martingale {m:.4}+-{se:.1e}"));

    let hat: Vec<f64> = terminal_hat(
        &builtin("mono-rho-dec"),
        2.0,
        0.0,
        &SimConfig::new(1.0, 1e-2, 13),
        100_000,
    )
    .unwrap()
    .into_iter()
    .map(|p| p.0)
    .collect();
    let (m, se) = mean_stderr(&hat);
    check((m - 2.0).abs() <= 3.0 * se, format!("hat martingale {m:.4}+-{se:.1e}"));

    let crit = 1.6276 / (hat.len() as f64).sqrt();
    let d = ks_standard_normal(hat.iter().map(|p| (p / 2.0).ln() + 0.5).collect());
    check(d < crit, format!("hat GBM KS {d:.4}/{crit:.4}"));

    let m = builtin("mono-rho-tanh");
    let (lo, _) = m.rho_abs_range();
    let cfg = SimConfig::new((1.2 / (lo * lo)).min(40.0), 1e-2, 5).with_extras();
    let n = 10_000u64;
    let mut clock_err = 0.0f64;
    let mut z = Vec::with_capacity(n as usize);
    for i in 0..n {
        let p = simulate_st(&m, 1.0, 0.0, &cfg, i).unwrap();
        let tc = time_change(&p, &m, Some(1.0), None).unwrap();
        z.push(tc.last_phi().ln() + 0.5);
        let a = p.clock.as_ref().unwrap();
        for (s, tt) in tc.times.iter().zip(tc.inverse_clock.as_ref().unwrap()) {
            clock_err = clock_err.max((interpolate_clock(&p.times, a, *tt) - s).abs());
        }
    }
    let crit = 1.6276 / (n as f64).sqrt();
    let d = ks_standard_normal(z);
    check(d < crit, format!("time-changed GBM KS {d:.4}/{crit:.4}"));
    check(
        clock_err <= 2.0 * cfg.dt,
        format!("clock inversion {clock_err:.1e}/{:.1e}", 2.0 * cfg.dt),
    );

    let cfg = SimConfig::new(1.0, 1e-2, 31);
    let mut ordered = true;
    for name in ["mono-rho-tanh", "mono-rho-dec", "const-rho"] {
        let m = builtin(name);
        for i in 0..n {
            let a = simulate_hat(&m, 1.0, 0.0, &cfg, i).unwrap();
            let b = simulate_hat(&m, 1.0, 0.5, &cfg, i).unwrap();
            ordered &= a.x.iter().zip(&b.x).all(|(p, q)| p <= q) && a.phi == b.phi;
        }
    }
    check(ordered, format!("shared-seed ordering on {} paths", 3 * n));

    let m = builtin("mono-rho-dec");
    let cfg = SimConfig::new(2.0, 1e-2, 77);
    let mut dominated = true;
    for i in 0..n {
        let a = simulate_qd(&m, 0.2, 0.0, &cfg, i, 1.0).unwrap();
        let b = simulate_qd(&m, 0.2, 0.0, &cfg, i, 1.2).unwrap();
        dominated &= a.x == b.x && a.phi.iter().zip(&b.phi).all(|(p, q)| q >= p);
    }
    check(dominated, format!("lambda dominance on {n} paths"));

    let secs = t.elapsed().as_secs_f64();
    check(secs <= PATH_SECONDS, format!("{secs:.1}/{PATH_SECONDS}s"));
    gate.report(12, "path-level suite", pass, parts.join("; "), t);
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_gslab"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("GSLAB_CATALOG")
        .output()
        .map(|o| o.status.code().is_some())
        .unwrap_or(false)
}

fn listed(dir: &Path) -> Vec<String> {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap_or_default();
    let mut names: Vec<String> = v["artifacts"]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|x| x["path"].as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    names.push("manifest.json".into());
    names
}

fn reproducibility(gate: &mut Gate) {
    let t = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let runs: [&[&str]; 7] = [
        &[
            "simulate",
            "--model",
            "mono-rho-tanh",
            "--mode",
            "detection",
            "--n-paths",
            "4",
            "--seed",
            "7",
        ],
        &[
            "simulate",
            "--model",
            "mono-rho-dec",
            "--mode",
            "testing-timechanged",
            "--n-paths",
            "2",
            "--seed",
            "3",
        ],
        &["solve-qd", "--model", "mono-rho-dec", "--grid", "65,65"],
        &[
            "verify-gs",
            "--model",
            "mono-rho-tanh",
            "--mode",
            "testing",
            "--grid",
            "65,65",
        ],
        &["trap-scan", "--model", "paper-trap"],
        &["hormander", "--model", "paper-trap"],
        &["oracle-1d", "--model", "const-rho", "--mode", "testing"],
    ];
    let mut files = 0;
    let mut bad = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let (a, b) = (tmp.path().join(format!("{i}a")), tmp.path().join(format!("{i}b")));
        if !(run_cli(&a, args) && run_cli(&b, args)) {
            bad.push(format!("{} did not run", args[0]));
            continue;
        }
        let names = listed(&a);
        if names != listed(&b) || names.len() < 2 {
            bad.push(format!("{} artifact lists differ", args[0]));
            continue;
        }
        for n in names {
            files += 1;
            if fs::read(a.join(&n)).ok() != fs::read(b.join(&n)).ok() {
                bad.push(format!("{} {n}", args[0]));
            }
        }
    }
    let mut detail = format!("{} pipelines, {files} files compared", runs.len());
    if !bad.is_empty() {
        detail = format!("{detail}; differing: {}", bad.join(", "));
    }
    gate.report(13, "reproducibility", bad.is_empty(), detail, t);
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut gate = Gate { failed: 0 };
    let mut solved = Vec::new();
    gs_suite(&mut gate, 1, Mode::Detection, &mut solved);
    gs_suite(&mut gate, 2, Mode::Testing, &mut solved);
    time_change_equivalence(&mut gate, &mut solved);
    oracle_1d(&mut gate, &mut solved);
    for name in ["paper-trap"] {
        for mode in [Mode::Testing, Mode::Detection] {
            if let Ok(s) = solve_default(name, mode) {
                solved.push(s);
            }
        }
    }
    structure(&mut gate, &solved);
    monte_carlo(&mut gate, &solved);
    trap_detection(&mut gate);
    perturbation(&mut gate);
    hormander(&mut gate);
    vx_sign(&mut gate, &solved);
    lambda_limit(&mut gate);
    path_suite(&mut gate);
    reproducibility(&mut gate);
    println!(
        "acceptance: {} of 13 criteria passed in {:.0}s",
        13 - gate.failed,
        start.elapsed().as_secs_f64()
    );
    if gate.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
