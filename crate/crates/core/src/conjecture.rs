//! Boundary and value monotonicity checks for models with monotone `rho`.
//!
//! Expected directions, with `s = +1` for `mu1 > mu0` and `-1` otherwise and
//! `r = +1` for increasing `rho` and `-1` for decreasing:
//!
//! | quantity            | direction       |
//! |---------------------|-----------------|
//! | testing `b0`        | `-s r`          |
//! | testing `b1`        | `+s r`          |
//! | detection `b`       | `+s r`          |
//! | `x -> V(phi, x)`    | `-s r`          |
//!
//! Since `s r` is the direction of `rho^2`, all four say the same thing: the
//! value falls where observations become more informative.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::DiffusionModel;
use crate::solver::{
    build_grid, extract_boundaries, solve, solve_qd, BoundarySet, GridConfig, Region, SolveConfig, ValueField,
};
use crate::Mode;

/// Default tolerance for adverse boundary steps, in `log phi` cells.
pub const VIOLATION_BUDGET: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoDirection {
    Increasing,
    Decreasing,
    NonMonotone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuOrder {
    Mu1GtMu0,
    Mu1LtMu0,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Increasing,
    Decreasing,
    Flat,
}

impl Direction {
    fn flip(self) -> Self {
        match self {
            Direction::Increasing => Direction::Decreasing,
            Direction::Decreasing => Direction::Increasing,
            Direction::Flat => Direction::Flat,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
            Direction::Flat => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub rho_direction: RhoDirection,
    pub mu_order: MuOrder,
    /// `rho` constant on the samples; the direction is then nominally
    /// increasing and every expected direction is flat.
    pub rho_constant: bool,
}

impl Classification {
    pub fn applicable(&self) -> bool {
        self.rho_direction != RhoDirection::NonMonotone
    }

    /// Direction of `rho^2`, or `None` for non-monotone `rho`.
    fn informativeness(&self) -> Option<Direction> {
        if self.rho_constant {
            return Some(Direction::Flat);
        }
        let r = match self.rho_direction {
            RhoDirection::Increasing => Direction::Increasing,
            RhoDirection::Decreasing => Direction::Decreasing,
            RhoDirection::NonMonotone => return None,
        };
        Some(match self.mu_order {
            MuOrder::Mu1GtMu0 => r,
            MuOrder::Mu1LtMu0 => r.flip(),
        })
    }

    /// Expected `(curve, direction)` pairs for a mode.
    pub fn expected(&self, mode: Mode) -> Option<Vec<(&'static str, Direction)>> {
        let d = self.informativeness()?;
        Some(if mode.is_testing() {
            vec![("b0", d.flip()), ("b1", d)]
        } else {
            vec![("b", d)]
        })
    }

    /// Expected direction of `x -> V(phi, x)`.
    pub fn expected_value(&self) -> Option<Direction> {
        self.informativeness().map(Direction::flip)
    }
}

/// Samples `rho` on the model's sample points: monotone when successive
/// differences are one-signed up to `1e-10`.
pub fn classify_model(model: &DiffusionModel) -> Classification {
    let rho: Vec<f64> = model.samples().map(|x| model.rho_unchecked(x)).collect();
    let tol = 1e-10;
    let up = rho.windows(2).all(|w| w[1] - w[0] >= -tol);
    let down = rho.windows(2).all(|w| w[1] - w[0] <= tol);
    let rho_direction = match (up, down) {
        (true, _) => RhoDirection::Increasing,
        (false, true) => RhoDirection::Decreasing,
        _ => RhoDirection::NonMonotone,
    };
    Classification {
        rho_direction,
        mu_order: if model.signal_sign() > 0.0 {
            MuOrder::Mu1GtMu0
        } else {
            MuOrder::Mu1LtMu0
        },
        rho_constant: up && down,
    }
}

/// Largest adverse move of a sequence against `dir`: the drawdown for an
/// increasing expectation, the run-up for a decreasing one and the range for
/// a flat one.
fn adverse(values: &[f64], dir: Direction) -> f64 {
    match dir {
        Direction::Flat => {
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            hi - lo
        }
        _ => {
            let s = dir.sign();
            let mut best = f64::NEG_INFINITY;
            let mut worst = 0.0f64;
            for v in values {
                best = best.max(s * v);
                worst = worst.max(best - s * v);
            }
            worst
        }
    }
}

fn observed(values: &[f64], cell: f64) -> Direction {
    let d = values[values.len() - 1] - values[0];
    if d.abs() < cell {
        Direction::Flat
    } else if d > 0.0 {
        Direction::Increasing
    } else {
        Direction::Decreasing
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveVerdict {
    pub curve: String,
    pub expected: Direction,
    pub observed: Direction,
    /// Largest adverse move of `log b`, in `log phi` cells.
    pub max_violation_cells: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsVerdict {
    pub model: String,
    pub mode: Mode,
    pub classification: Classification,
    pub budget_cells: f64,
    /// Empty when the conjecture does not apply.
    pub curves: Vec<CurveVerdict>,
    /// `None` when not applicable.
    pub pass: Option<bool>,
}

/// Compares extracted boundaries with the expected directions.
pub fn verify_gs(
    model: &DiffusionModel,
    boundaries: &BoundarySet,
    classification: &Classification,
    budget_cells: f64,
) -> GsVerdict {
    let mut curves = Vec::new();
    let pass = classification.expected(boundaries.mode).map(|exp| {
        for (name, dir) in exp {
            let Some(c) = boundaries.curve(name) else { continue };
            let logs: Vec<f64> = c.values.iter().map(|b| b.max(f64::MIN_POSITIVE).ln()).collect();
            let v = adverse(&logs, dir) / boundaries.h_logphi;
            curves.push(CurveVerdict {
                curve: name.to_string(),
                expected: dir,
                observed: observed(&logs, boundaries.h_logphi),
                max_violation_cells: v,
                pass: v <= budget_cells,
            });
        }
        curves.iter().all(|c| c.pass)
    });
    GsVerdict {
        model: model.name.clone(),
        mode: boundaries.mode,
        classification: *classification,
        budget_cells,
        curves,
        pass,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub n_phi: usize,
    pub n_x: usize,
    pub violations: Vec<f64>,
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsReport {
    pub verdict: GsVerdict,
    /// One entry per grid tried; a failure is re-checked once on the
    /// doubled grid before it stands.
    pub refinement: Vec<Attempt>,
}

/// Solves, extracts and verifies; on failure repeats once at double
/// resolution. Returns the report with the field and boundaries of the last
/// attempt.
pub fn gs_harness(
    model: &DiffusionModel,
    mode: Mode,
    grid: &GridConfig,
    solve_cfg: &SolveConfig,
    budget_cells: f64,
) -> Result<(GsReport, ValueField, BoundarySet)> {
    let class = classify_model(model);
    let mut cfg = grid.clone();
    let mut refinement = Vec::new();
    loop {
        let g = build_grid(&cfg, model, mode)?;
        let field = solve(&g, model, mode, solve_cfg)?;
        let b = extract_boundaries(&field)?;
        let verdict = verify_gs(model, &b, &class, budget_cells);
        refinement.push(Attempt {
            n_phi: cfg.n_phi,
            n_x: cfg.n_x,
            violations: verdict.curves.iter().map(|c| c.max_violation_cells).collect(),
            pass: verdict.pass,
        });
        if verdict.pass != Some(false) || refinement.len() == 2 {
            return Ok((GsReport { verdict, refinement }, field, b));
        }
        cfg = cfg.refined();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueMonotoneReport {
    pub expected: Option<Direction>,
    pub tolerance: f64,
    /// Largest adverse move along any `phi` row, in value units.
    pub worst_violation: f64,
    pub worst_phi: f64,
    pub pass: Option<bool>,
}

/// Checks the predicted `x`-monotonicity of every `phi` row within
/// `2 eps_D`.
pub fn check_value_monotone_x(field: &ValueField, classification: &Classification) -> ValueMonotoneReport {
    let tol = 2.0 * field.eps_d();
    let expected = classification.expected_value();
    let mut worst = 0.0f64;
    let mut worst_phi = f64::NAN;
    if let Some(dir) = expected {
        let g = &field.grid;
        for k in 0..g.n_phi() {
            let row: Vec<f64> = (0..g.n_x()).map(|j| field.value(k, j)).collect();
            let v = adverse(&row, dir);
            if v > worst || worst_phi.is_nan() {
                worst = worst.max(v);
                worst_phi = g.phi[k];
            }
        }
    }
    ValueMonotoneReport {
        expected,
        tolerance: tol,
        worst_violation: worst,
        worst_phi,
        pass: expected.map(|_| worst <= tol),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VxSignReport {
    /// Expected sign of `V_x` (`-1`, `0` or `+1`), `None` when not applicable.
    pub expected_sign: Option<f64>,
    pub slack: f64,
    /// Largest `V_x` against the expected sign on continuation nodes (for a
    /// flat expectation, the largest `|V_x|`).
    pub worst: f64,
    pub continuation_nodes: usize,
    /// Largest positive second difference in `phi` (value units).
    pub concavity_violation: f64,
    /// Sign of `rho rho'` on the sample points (`0` when it changes sign).
    pub rho_rho_prime_sign: f64,
    /// Largest value of `sign(rho rho') V_phiphi`, scaled to value units;
    /// the claim is that this is not positive.
    pub h_proxy_violation: f64,
    pub pass: Option<bool>,
}

/// Central-difference `V_x` on continuation nodes against the expected sign,
/// with slack `2 eps_D / h_x`, plus the concavity-based sign of the
/// `phi^2 rho rho' V_phiphi` term.
pub fn check_vx_sign(model: &DiffusionModel, field: &ValueField, classification: &Classification) -> VxSignReport {
    let g = &field.grid;
    let slack = 2.0 * field.eps_d() / g.h_x;
    let expected = classification.expected_value().map(Direction::sign);
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut concave = 0.0f64;
    let mut rrp: Vec<f64> = Vec::new();
    for x in model.samples() {
        if let Ok(j) = model.rho_jet(x, 1) {
            rrp.push(j.value() * j.coeff(1));
        }
    }
    let rrp_sign = if rrp.iter().all(|v| *v >= 0.0) {
        if rrp.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            1.0
        }
    } else if rrp.iter().all(|v| *v <= 0.0) {
        -1.0
    } else {
        0.0
    };
    for k in 1..g.n_phi() {
        for j in 0..g.n_x() {
            if k + 1 < g.n_phi() {
                let (pa, pb, pc) = (g.phi[k - 1], g.phi[k], g.phi[k + 1]);
                let chord = ((pc - pb) * field.value(k - 1, j) + (pb - pa) * field.value(k + 1, j)) / (pc - pa);
                concave = concave.max(chord - field.value(k, j));
            }
            if field.region_at(k, j) != Region::Continue || j == 0 || j + 1 == g.n_x() {
                continue;
            }
            count += 1;
            let u = (field.value(k, j + 1) - field.value(k, j - 1)) / (2.0 * g.h_x);
            if let Some(s) = expected {
                worst = worst.max(if s == 0.0 { u.abs() } else { -s * u });
            }
        }
    }
    let h_proxy = if rrp_sign == 0.0 { 0.0 } else { concave.max(0.0) };
    let tol = 2.0 * field.eps_d();
    VxSignReport {
        expected_sign: expected,
        slack,
        worst,
        continuation_nodes: count,
        concavity_violation: concave,
        rho_rho_prime_sign: rrp_sign,
        h_proxy_violation: h_proxy,
        pass: expected.map(|_| worst <= slack && concave <= tol),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaStep {
    pub eps: f64,
    /// `min (V_eps - V_0)` over nodes.
    pub min_difference: f64,
    /// `max |V_eps - V_0|`.
    pub gap: f64,
    pub sweeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaLimitReport {
    pub model: String,
    pub lambda: f64,
    pub tolerance: f64,
    pub steps: Vec<LambdaStep>,
    pub ordered: bool,
    /// Gaps shrink as `eps` decreases.
    pub shrinking: bool,
    /// `log2` of successive gap ratios for halved `eps`.
    pub rates: Vec<f64>,
    pub pass: bool,
}

/// Solves detection with `lambda_dyn = lambda + eps`, `lambda_cost = lambda`
/// for each `eps` and compares with the unperturbed field.
pub fn check_lambda_limit(
    model: &DiffusionModel,
    grid: &GridConfig,
    eps_list: &[f64],
    solve_cfg: &SolveConfig,
) -> Result<LambdaLimitReport> {
    let g = build_grid(grid, model, Mode::Detection)?;
    let lam = model.lambda();
    let base = solve_qd(&g, model, lam, lam, solve_cfg)?;
    let tol = 2.0 * base.eps_d();
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let mut steps = Vec::new();
    for e in eps {
        let f = solve_qd(&g, model, lam + e, lam, solve_cfg)?;
        let (mut lo, mut gap) = (f64::INFINITY, 0.0f64);
        for (a, b) in f.values.iter().zip(&base.values) {
            lo = lo.min(a - b);
            gap = gap.max((a - b).abs());
        }
        steps.push(LambdaStep {
            eps: e,
            min_difference: lo,
            gap,
            sweeps: f.diagnostics.sweeps,
        });
    }
    let ordered = steps.iter().all(|s| s.min_difference >= -tol);
    let shrinking = steps.windows(2).all(|w| w[1].gap <= w[0].gap);
    let rates = steps
        .windows(2)
        .map(|w| (w[0].gap / w[1].gap).ln() / (w[0].eps / w[1].eps).ln())
        .collect();
    Ok(LambdaLimitReport {
        model: model.name.clone(),
        lambda: lam,
        tolerance: tol,
        pass: ordered && shrinking,
        steps,
        ordered,
        shrinking,
        rates,
    })
}
