//! Value functions, stopping regions and optimal boundaries on tensor grids,
//! plus two independent oracles: a one-dimensional solver for constant
//! `rho` and least-squares Monte Carlo.

mod canonical;
mod field;
mod grid;
mod lcp;
mod lsm;
mod oracle1d;

use serde::{Deserialize, Serialize};

pub use field::{
    check_structure, extract_boundaries, BoundarySet, Curve, Region, SmoothFit, SolveDiagnostics, SolveEcho,
    StructureReport, ValueField,
};
pub use grid::{build_grid, Grid2D, GridConfig};
pub use lcp::{LineSystem, TridiagLcp};
pub use lsm::{mc_value_oracle, LsmPolicy, McConfig, McEstimate};
pub use oracle1d::{solve_1d_constant_rho, Oracle1d};

use crate::error::{config, Result};
use crate::model::DiffusionModel;
use crate::Mode;
use canonical::{CanonSpec, ColumnCoeffs, Obstacle};

/// Iteration controls shared by the grid solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    /// Stopping threshold for the complementarity residual, relative to the
    /// value scale (`b` for testing, `1/c` for detection).
    pub tol: f64,
    pub max_sweeps: usize,
    /// Lattice lines per unit of `log phi` in the transport direction, as a
    /// multiple of the `log phi` grid density.
    pub u_refine: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol: 1e-10,
            max_sweeps: 5000,
            u_refine: 4.0,
        }
    }
}

fn value_scale(model: &DiffusionModel, mode: Mode) -> f64 {
    match mode {
        Mode::Detection => 1.0 / model.params.cost_c,
        _ => model.params.cost_b,
    }
}

/// Stop-region identification tolerance `4 max(h_logphi, h_x)` times the
/// running cost at the reference level.
pub fn eps_d(grid: &Grid2D, model: &DiffusionModel, mode: Mode) -> f64 {
    let p = &model.params;
    let scale = match mode {
        Mode::Detection => p.lambda / p.cost_c,
        _ => 1.0 + p.cost_b / p.cost_a,
    };
    4.0 * grid.h_logphi.max(grid.h_x) * scale
}

fn columns(
    grid: &Grid2D,
    model: &DiffusionModel,
    g1_of: &DiffusionModel,
    weight: impl Fn(f64) -> f64,
    lambda_dyn: f64,
    rate: f64,
) -> Result<Vec<ColumnCoeffs>> {
    grid.x
        .iter()
        .map(|&x| {
            let s = g1_of.sigma(x);
            let g1 = g1_of.g1_jet(x, 0)?.value();
            let f = model.f_integral(x)?;
            Ok(ColumnCoeffs {
                f,
                a0: g1 - lambda_dyn,
                a1: lambda_dyn * (-f).exp(),
                drift: g1_of.mu0(x),
                diff: 0.5 * s * s,
                w: weight(x),
                rate,
            })
        })
        .collect()
}

fn check_mode(grid: &Grid2D, mode: Mode) -> Result<()> {
    if grid.mode.is_testing() != mode.is_testing() {
        return Err(config(format!(
            "grid was built for {} but the solve is {}",
            grid.mode, mode
        )));
    }
    Ok(())
}

fn lattice_step(grid: &Grid2D, cfg: &SolveConfig) -> Result<f64> {
    if !(cfg.u_refine >= 1.0 && cfg.tol > 0.0 && cfg.max_sweeps > 0) {
        return Err(config("solve config needs u_refine >= 1, tol > 0, max_sweeps > 0"));
    }
    let m = (cfg.u_refine * grid.h_x / grid.h_logphi).ceil().max(1.0);
    Ok(grid.h_x / m)
}

fn run(
    grid: &Grid2D,
    model: &DiffusionModel,
    mode: Mode,
    cols: Vec<ColumnCoeffs>,
    obstacle: Obstacle,
    cost: (f64, f64),
    cfg: &SolveConfig,
    echo: SolveEcho,
) -> Result<ValueField> {
    let k0 = grid.first_positive();
    let spec = CanonSpec {
        cols,
        hx: grid.h_x,
        obstacle,
        cost0: cost.0,
        cost1: cost.1,
        hu: lattice_step(grid, cfg)?,
        logphi: (grid.phi[k0].ln(), grid.phi[grid.n_phi() - 1].ln()),
        tol: cfg.tol * value_scale(model, mode),
        max_sweeps: cfg.max_sweeps,
    };
    let sol = canonical::solve(&spec)?;
    Ok(ValueField::from_canonical(grid, mode, &sol, obstacle, echo))
}

/// Testing problem: `min(L V + 1 + phi, min(a phi, b) - V) = 0`.
pub fn solve_st(grid: &Grid2D, model: &DiffusionModel, cfg: &SolveConfig) -> Result<ValueField> {
    check_mode(grid, Mode::Testing)?;
    let p = model.params;
    let cols = columns(grid, model, model, |_| 1.0, 0.0, 0.0)?;
    let echo = SolveEcho::new(model, Mode::Testing, cfg, 0.0, 0.0, eps_d(grid, model, Mode::Testing));
    run(
        grid,
        model,
        Mode::Testing,
        cols,
        Obstacle::Testing {
            a: p.cost_a,
            b: p.cost_b,
        },
        (1.0, 1.0),
        cfg,
        echo,
    )
}

/// Testing problem for the time-changed pair, running cost `(1 + phi)/rho^2`.
pub fn solve_st_timechanged(grid: &Grid2D, model: &DiffusionModel, cfg: &SolveConfig) -> Result<ValueField> {
    check_mode(grid, Mode::TestingTimeChanged)?;
    let hat = model.time_changed()?;
    let p = model.params;
    let cols = columns(
        grid,
        model,
        &hat,
        |x| {
            let r = model.rho_unchecked(x);
            1.0 / (r * r)
        },
        0.0,
        0.0,
    )?;
    let echo = SolveEcho::new(
        model,
        Mode::TestingTimeChanged,
        cfg,
        0.0,
        0.0,
        eps_d(grid, model, Mode::TestingTimeChanged),
    );
    run(
        grid,
        model,
        Mode::TestingTimeChanged,
        cols,
        Obstacle::Testing {
            a: p.cost_a,
            b: p.cost_b,
        },
        (1.0, 1.0),
        cfg,
        echo,
    )
}

/// Detection problem `min(L V - lambda_cost V + phi - lambda_cost/c, -V) = 0`
/// where the generator carries `lambda_dyn` in the drift of `phi`.
pub fn solve_qd(
    grid: &Grid2D,
    model: &DiffusionModel,
    lambda_dyn: f64,
    lambda_cost: f64,
    cfg: &SolveConfig,
) -> Result<ValueField> {
    check_mode(grid, Mode::Detection)?;
    if !(lambda_dyn > 0.0 && lambda_cost > 0.0 && lambda_dyn.is_finite() && lambda_cost.is_finite()) {
        return Err(config(format!(
            "detection rates must be positive, got lambda_dyn = {lambda_dyn}, lambda_cost = {lambda_cost}"
        )));
    }
    let c = model.params.cost_c;
    let cols = columns(grid, model, model, |_| 1.0, lambda_dyn, lambda_cost)?;
    let echo = SolveEcho::new(
        model,
        Mode::Detection,
        cfg,
        lambda_dyn,
        lambda_cost,
        eps_d(grid, model, Mode::Detection),
    );
    let mut field = run(
        grid,
        model,
        Mode::Detection,
        cols,
        Obstacle::Detection,
        (-lambda_cost / c, 1.0),
        cfg,
        echo,
    )?;
    field.diagnostics.smooth_fit = field::smooth_fit_defect(&field);
    Ok(field)
}

/// Dispatches on `mode`; detection uses the model's `lambda` for both rates.
pub fn solve(grid: &Grid2D, model: &DiffusionModel, mode: Mode, cfg: &SolveConfig) -> Result<ValueField> {
    match mode {
        Mode::Testing => solve_st(grid, model, cfg),
        Mode::TestingTimeChanged => solve_st_timechanged(grid, model, cfg),
        Mode::Detection => solve_qd(grid, model, model.lambda(), model.lambda(), cfg),
    }
}
