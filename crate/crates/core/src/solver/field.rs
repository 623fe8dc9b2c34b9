use std::io::Write;

use serde::{Deserialize, Serialize};

use super::canonical::{CanonSolution, Obstacle};
use super::grid::Grid2D;
use super::SolveConfig;
use crate::error::{Error, Result};
use crate::model::DiffusionModel;
use crate::sde::fmt;
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Continue,
    Stop,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Continue => "continue",
            Region::Stop => "stop",
        }
    }
}

/// Echo of everything that determined a solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveEcho {
    pub model: String,
    pub mode: Mode,
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_c: f64,
    pub lambda_dyn: f64,
    pub lambda_cost: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub u_refine: f64,
    pub eps_d: f64,
}

impl SolveEcho {
    pub(crate) fn new(
        model: &DiffusionModel,
        mode: Mode,
        cfg: &SolveConfig,
        lambda_dyn: f64,
        lambda_cost: f64,
        eps_d: f64,
    ) -> Self {
        let p = model.params;
        SolveEcho {
            model: model.name.clone(),
            mode,
            cost_a: p.cost_a,
            cost_b: p.cost_b,
            cost_c: p.cost_c,
            lambda_dyn,
            lambda_cost,
            tol: cfg.tol,
            max_sweeps: cfg.max_sweeps,
            u_refine: cfg.u_refine,
            eps_d,
        }
    }
}

/// Smooth-fit defect: largest one-sided `|V_phi|` and `|V_x|` at the last
/// continuation node below the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothFit {
    pub v_phi: f64,
    pub v_x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub sweeps: usize,
    /// Sup-norm of the update made by each sweep.
    pub residual_history: Vec<f64>,
    /// Largest pointwise increase between sweeps; zero when the iteration
    /// decreases monotonically from the payoff.
    pub max_increase: f64,
    pub lattice_lines: usize,
    pub h_u: f64,
    /// Defect below which a node is labelled stop.
    pub region_tol: f64,
    pub smooth_fit: Option<SmoothFit>,
}

/// Values and regions on the nodes of a [`Grid2D`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub grid: Grid2D,
    pub mode: Mode,
    pub values: Vec<f64>,
    pub region: Vec<Region>,
    pub residual: f64,
    pub params: SolveEcho,
    pub diagnostics: SolveDiagnostics,
}

impl ValueField {
    pub(crate) fn from_canonical(
        grid: &Grid2D,
        mode: Mode,
        sol: &CanonSolution,
        obstacle: Obstacle,
        echo: SolveEcho,
    ) -> Self {
        let nx = grid.n_x();
        let n = grid.n_phi() * nx;
        let mut values = vec![0.0; n];
        let mut region = vec![Region::Stop; n];
        let region_tol = 10.0
            * echo.tol
            * if mode.is_testing() {
                echo.cost_b
            } else {
                1.0 / echo.cost_c
            };
        for k in grid.first_positive()..grid.n_phi() {
            let phi = grid.phi[k];
            let lp = phi.ln();
            for j in 0..nx {
                let d = sol.defect_at(j, sol.f[j] - lp).max(0.0);
                let i = grid.idx(k, j);
                values[i] = obstacle.psi(phi) - d;
                region[i] = if d <= region_tol {
                    Region::Stop
                } else {
                    Region::Continue
                };
            }
        }
        ValueField {
            grid: grid.clone(),
            mode,
            values,
            region,
            residual: sol.residual,
            params: echo,
            diagnostics: SolveDiagnostics {
                sweeps: sol.sweeps,
                residual_history: sol.history.clone(),
                max_increase: sol.max_increase,
                lattice_lines: sol.nu,
                h_u: sol.hu,
                region_tol,
                smooth_fit: None,
            },
        }
    }

    #[inline]
    pub fn value(&self, k: usize, j: usize) -> f64 {
        self.values[self.grid.idx(k, j)]
    }

    #[inline]
    pub fn region_at(&self, k: usize, j: usize) -> Region {
        self.region[self.grid.idx(k, j)]
    }

    /// Stopping payoff `min(a phi, b)` or `0`.
    pub fn payoff(&self, phi: f64) -> f64 {
        if self.mode.is_testing() {
            (self.params.cost_a * phi).min(self.params.cost_b)
        } else {
            0.0
        }
    }

    /// Obstacle defect `payoff - V` at a node.
    pub fn defect(&self, k: usize, j: usize) -> f64 {
        self.payoff(self.grid.phi[k]) - self.value(k, j)
    }

    pub fn eps_d(&self) -> f64 {
        self.params.eps_d
    }

    /// Bilinear interpolation in `(log phi, x)`; linear in `phi` below the
    /// first positive node of a testing grid.
    pub fn interpolate(&self, phi: f64, x: f64) -> Result<f64> {
        let g = &self.grid;
        let k0 = g.first_positive();
        let (xlo, xhi) = (g.x[0], g.x[g.n_x() - 1]);
        let (plo, phi_hi) = (g.phi[k0], g.phi[g.n_phi() - 1]);
        let pmin = if g.zero_row { 0.0 } else { plo };
        if !(x >= xlo && x <= xhi) {
            return Err(Error::Range {
                what: "x",
                value: x,
                range: format!("[{xlo}, {xhi}]"),
            });
        }
        if !(phi >= pmin && phi <= phi_hi) {
            return Err(Error::Range {
                what: "phi",
                value: phi,
                range: format!("[{pmin}, {phi_hi}]"),
            });
        }
        let px = ((x - xlo) / g.h_x).clamp(0.0, (g.n_x() - 1) as f64);
        let j = (px.floor() as usize).min(g.n_x() - 2);
        let tx = px - j as f64;
        let (k, tp) = if phi < plo {
            (0, phi / plo)
        } else {
            let p = ((phi.ln() - plo.ln()) / g.h_logphi).clamp(0.0, (g.n_phi() - 1 - k0) as f64);
            let k = (p.floor() as usize).min(g.n_phi() - 2 - k0);
            (k + k0, p - k as f64)
        };
        let at = |k: usize| (1.0 - tx) * self.value(k, j) + tx * self.value(k, j + 1);
        Ok((1.0 - tp) * at(k) + tp * at(k + 1))
    }

    /// CSV `phi,x,value,region`, one row per node, `phi` outermost.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wr.write_record(["phi", "x", "value", "region"])?;
        for k in 0..self.grid.n_phi() {
            for j in 0..self.grid.n_x() {
                wr.write_record([
                    fmt(self.grid.phi[k]),
                    fmt(self.grid.x[j]),
                    fmt(self.value(k, j)),
                    self.region_at(k, j).as_str().to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Solve manifest: grid, tolerances, iterations, residuals and the
    /// smooth-fit defect.
    pub fn manifest(&self) -> serde_json::Value {
        let g = &self.grid;
        serde_json::json!({
            "mode": self.mode,
            "grid": {
                "n_phi": g.n_phi(),
                "n_x": g.n_x(),
                "phi_min": g.phi[g.first_positive()],
                "phi_max": g.phi[g.n_phi() - 1],
                "x_min": g.x[0],
                "x_max": g.x[g.n_x() - 1],
                "h_logphi": g.h_logphi,
                "h_x": g.h_x,
                "zero_row": g.zero_row,
            },
            "params": self.params,
            "residual": self.residual,
            "diagnostics": self.diagnostics,
        })
    }
}

/// One boundary curve over the `x` nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub values: Vec<f64>,
    /// Width of the `phi` cell holding the boundary, per column.
    pub tolerance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    pub mode: Mode,
    pub x: Vec<f64>,
    pub h_logphi: f64,
    /// `b/a` or `lambda/c`.
    pub reference: f64,
    pub curves: Vec<Curve>,
}

impl BoundarySet {
    pub fn curve(&self, name: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.name == name)
    }

    pub fn b0(&self) -> Option<&[f64]> {
        self.curve("b0").map(|c| c.values.as_slice())
    }

    pub fn b1(&self) -> Option<&[f64]> {
        self.curve("b1").map(|c| c.values.as_slice())
    }

    pub fn b(&self) -> Option<&[f64]> {
        self.curve("b").map(|c| c.values.as_slice())
    }

    /// CSV `x,b0,b1` or `x,b`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut head = vec!["x".to_string()];
        head.extend(self.curves.iter().map(|c| c.name.clone()));
        wr.write_record(&head)?;
        for (i, x) in self.x.iter().enumerate() {
            let mut row = vec![fmt(*x)];
            row.extend(self.curves.iter().map(|c| fmt(c.values[i])));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Zero of the square-root defect, extrapolated linearly in `log phi` from
/// two continuation nodes (`near` adjacent to the stop node) and clamped to
/// the cell between `near` and `stop`. Near a smooth-fit point the defect is
/// quadratic, so its square root is linear.
fn refine(field: &ValueField, j: usize, stop: usize, near: usize, far: Option<usize>) -> f64 {
    let g = &field.grid;
    let (Some(far), true) = (far, g.phi[stop] > 0.0) else {
        return g.phi[stop];
    };
    if field.region_at(far, j) != Region::Continue {
        return g.phi[stop];
    }
    let s1 = field.defect(near, j).max(0.0).sqrt();
    let s2 = field.defect(far, j).max(0.0).sqrt();
    let (y0, y1, y2) = (g.phi[stop].ln(), g.phi[near].ln(), g.phi[far].ln());
    if !(s2 > s1 && s1 > 0.0) {
        return g.phi[stop];
    }
    let y = y1 + s1 * (y1 - y2) / (s2 - s1);
    let (lo, hi) = if y0 < y1 { (y0, y1) } else { (y1, y0) };
    y.clamp(lo, hi).exp()
}

/// Boundaries per `x` column: `b0`, `b1` around `b/a` (testing) or `b`
/// (detection), refined inside the cell by the square-root defect.
pub fn extract_boundaries(field: &ValueField) -> Result<BoundarySet> {
    let g = &field.grid;
    let k0 = g.first_positive();
    let np = g.n_phi();
    let p = &field.params;
    let cell = |b: f64| b * (g.h_logphi.exp() - 1.0);
    let escape = |j: usize, what: &str| Error::BoundaryEscape {
        x: g.x[j],
        detail: format!("no stop node {what}; raise phi_max"),
    };
    let stop = |k: usize, j: usize| field.region_at(k, j) == Region::Stop;
    let curves = if field.mode.is_testing() {
        let reference = p.cost_b / p.cost_a;
        let mut b0 = Vec::with_capacity(g.n_x());
        let mut b1 = Vec::with_capacity(g.n_x());
        for j in 0..g.n_x() {
            let below: Vec<usize> = (0..np).filter(|&k| g.phi[k] < reference).collect();
            let k_lo = *below.iter().rev().find(|&&k| stop(k, j)).unwrap_or(&0);
            let near = k_lo + 1;
            let far = (near + 1 < np && g.phi[near + 1] < reference).then_some(near + 1);
            b0.push(if k_lo >= k0 && near < np {
                refine(field, j, k_lo, near, far)
            } else {
                g.phi[k_lo]
            });
            let k_hi = (k0..np)
                .find(|&k| g.phi[k] > reference && stop(k, j))
                .ok_or_else(|| escape(j, "above b/a"))?;
            let near = k_hi - 1;
            let far = (near > k0 && g.phi[near - 1] > reference).then(|| near - 1);
            b1.push(if g.phi[near] > reference {
                refine(field, j, k_hi, near, far)
            } else {
                g.phi[k_hi]
            });
        }
        vec![
            Curve {
                name: "b0".into(),
                tolerance: b0.iter().map(|b| cell(*b)).collect(),
                values: b0,
            },
            Curve {
                name: "b1".into(),
                tolerance: b1.iter().map(|b| cell(*b)).collect(),
                values: b1,
            },
        ]
    } else {
        let mut b = Vec::with_capacity(g.n_x());
        for j in 0..g.n_x() {
            let k = (k0..np).find(|&k| stop(k, j)).ok_or_else(|| escape(j, "anywhere"))?;
            b.push(if k > k0 {
                let far = (k >= k0 + 2).then(|| k - 2);
                refine(field, j, k, k - 1, far)
            } else {
                g.phi[k]
            });
        }
        vec![Curve {
            name: "b".into(),
            tolerance: b.iter().map(|v| cell(*v)).collect(),
            values: b,
        }]
    };
    Ok(BoundarySet {
        mode: field.mode,
        x: g.x.clone(),
        h_logphi: g.h_logphi,
        reference: if field.mode.is_testing() {
            p.cost_b / p.cost_a
        } else {
            p.lambda_cost / p.cost_c
        },
        curves,
    })
}

pub(crate) fn smooth_fit_defect(field: &ValueField) -> Option<SmoothFit> {
    let g = &field.grid;
    let k0 = g.first_positive();
    let nx = g.n_x();
    let mut out = SmoothFit { v_phi: 0.0, v_x: 0.0 };
    let mut any = false;
    for j in 0..nx {
        let Some(k) = (k0 + 1..g.n_phi()).find(|&k| field.region_at(k, j) == Region::Stop) else {
            continue;
        };
        let c = k - 1;
        let v_phi = (field.value(k, j) - field.value(c, j)) / (g.phi[k] - g.phi[c]);
        let (ja, jb) = if j + 1 < nx { (j, j + 1) } else { (j - 1, j) };
        let v_x = (field.value(c, jb) - field.value(c, ja)) / g.h_x;
        out.v_phi = out.v_phi.max(v_phi.abs());
        out.v_x = out.v_x.max(v_x.abs());
        any = true;
    }
    any.then_some(out)
}

/// Structural invariants of a converged field, each reported as the worst
/// violation in value units (or a count).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub mode: Mode,
    pub tolerance: f64,
    /// Excursion outside `[0, min(a phi, b)]` or `[-1/c, 0]`.
    pub bounds: f64,
    pub phi_monotone: f64,
    pub phi_concave: f64,
    /// Columns where `b0 < b/a < b1` or `b >= lambda/c` fails.
    pub boundary_order: usize,
    /// Stop nodes on the row nearest `b/a` (testing only).
    pub reference_row_stops: usize,
    /// Extra continue/stop transitions beyond the expected shape.
    pub stop_islands: usize,
    pub pass: bool,
}

/// Bounds, `phi`-monotonicity and concavity, boundary ordering and region
/// shape, all within `2 eps_D`.
pub fn check_structure(field: &ValueField, boundaries: &BoundarySet) -> StructureReport {
    let g = &field.grid;
    let tol = 2.0 * field.eps_d();
    let np = g.n_phi();
    let nx = g.n_x();
    let p = &field.params;
    let mut bounds = 0.0f64;
    let mut mono = 0.0f64;
    let mut conc = 0.0f64;
    let mut islands = 0;
    for j in 0..nx {
        let mut transitions = 0usize;
        for k in 0..np {
            let v = field.value(k, j);
            let (lo, hi) = if field.mode.is_testing() {
                (0.0, field.payoff(g.phi[k]))
            } else {
                (-1.0 / p.cost_c, 0.0)
            };
            bounds = bounds.max(lo - v).max(v - hi);
            if k > 0 {
                mono = mono.max(field.value(k - 1, j) - v);
                if field.region_at(k, j) != field.region_at(k - 1, j) {
                    transitions += 1;
                }
            }
            if k > 0 && k + 1 < np {
                let (pa, pb, pc) = (g.phi[k - 1], g.phi[k], g.phi[k + 1]);
                let chord = ((pc - pb) * field.value(k - 1, j) + (pb - pa) * field.value(k + 1, j)) / (pc - pa);
                conc = conc.max(chord - v);
            }
        }
        let expected = if field.mode.is_testing() { 2 } else { 1 };
        islands += transitions.saturating_sub(expected);
    }
    let boundary_order = (0..nx)
        .filter(|&j| match (boundaries.b0(), boundaries.b1(), boundaries.b()) {
            (Some(b0), Some(b1), _) => !(b0[j] < boundaries.reference && boundaries.reference < b1[j]),
            (_, _, Some(b)) => !(b[j] >= boundaries.reference),
            _ => true,
        })
        .count();
    let reference_row_stops = if field.mode.is_testing() {
        let k = g.nearest_row(p.cost_b / p.cost_a);
        (0..nx).filter(|&j| field.region_at(k, j) == Region::Stop).count()
    } else {
        0
    };
    let pass =
        bounds <= tol && mono <= tol && conc <= tol && boundary_order == 0 && reference_row_stops == 0 && islands == 0;
    StructureReport {
        mode: field.mode,
        tolerance: tol,
        bounds,
        phi_monotone: mono,
        phi_concave: conc,
        boundary_order,
        reference_row_stops,
        stop_islands: islands,
        pass,
    }
}
