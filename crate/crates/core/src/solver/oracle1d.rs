//! One-dimensional obstacle problem in `y = log phi` for constant `rho`.
//!
//! With `rho` constant the ratio process no longer feels `x`, so the value
//! depends on `phi` alone:
//!
//! * testing: `rho^2/2 (w'' - w') + 1 + e^y = 0` in the continuation set,
//! * detection: `rho^2/2 (w'' - w') + lambda (1 + e^-y) w' - lambda w + e^y - lambda/c = 0`.
//!
//! Central differences where the cell Peclet number allows, upwind
//! otherwise; every line is solved exactly by policy iteration.

use serde::{Deserialize, Serialize};

use super::lcp::{LineSystem, TridiagLcp};
use crate::error::{config, Error, Result};
use crate::model::DiffusionModel;
use crate::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oracle1d {
    pub mode: Mode,
    /// Uniform `log phi` nodes.
    pub y: Vec<f64>,
    pub values: Vec<f64>,
    /// `[b0, b1]` for testing, `[b]` for detection.
    pub boundaries: Vec<f64>,
    /// `sup |V_N - V_{N/2}|` over the shared nodes.
    pub tol_1d: f64,
}

impl Oracle1d {
    /// Linear interpolation in `log phi`; linear in `phi` towards `V(0) = 0`
    /// below the first node of a testing solve.
    pub fn value_at(&self, phi: f64) -> f64 {
        let n = self.y.len();
        let h = self.y[1] - self.y[0];
        let lo = self.y[0].exp();
        if phi < lo {
            return if self.mode.is_testing() {
                self.values[0] * phi / lo
            } else {
                self.values[0]
            };
        }
        let p = ((phi.ln() - self.y[0]) / h).clamp(0.0, (n - 1) as f64);
        let k = (p.floor() as usize).min(n - 2);
        let t = p - k as f64;
        (1.0 - t) * self.values[k] + t * self.values[k + 1]
    }
}

struct Raw {
    y: Vec<f64>,
    v: Vec<f64>,
    psi: Vec<f64>,
}

fn solve_raw(mode: Mode, r2: f64, params: &crate::Params, y_range: (f64, f64), n: usize) -> Raw {
    let (ylo, yhi) = y_range;
    let h = (yhi - ylo) / (n - 1) as f64;
    let y: Vec<f64> = (0..n).map(|k| ylo + h * k as f64).collect();
    let (a, b, c, lambda) = (params.cost_a, params.cost_b, params.cost_c, params.lambda);
    let psi: Vec<f64> = y
        .iter()
        .map(|y| if mode.is_testing() { (a * y.exp()).min(b) } else { 0.0 })
        .collect();
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    // Time-changed testing runs at unit ratio volatility with cost / rho^2.
    let (d, w) = match mode {
        Mode::TestingTimeChanged => (0.5, 1.0 / r2),
        _ => (0.5 * r2, 1.0),
    };
    for k in 0..n {
        let e = y[k].exp();
        let (beta, rate, cost) = match mode {
            Mode::Detection => (lambda * (1.0 + 1.0 / e) - d, lambda, e - lambda / c),
            _ => (-d, 0.0, w * (1.0 + e)),
        };
        let dd = d / (h * h);
        let (cl, cr) = if beta.abs() * h <= 2.0 * d {
            (dd - 0.5 * beta / h, dd + 0.5 * beta / h)
        } else {
            (dd + (-beta).max(0.0) / h, dd + beta.max(0.0) / h)
        };
        lower[k] = cl;
        upper[k] = cr;
        diag[k] = cl + cr + rate;
        rhs[k] = cost;
    }
    let mut fixed = vec![false; n];
    if mode.is_testing() {
        fixed[0] = true;
    } else {
        // Reflect at the bottom: the ghost equals the first interior node.
        upper[0] += lower[0];
    }
    lower[0] = 0.0;
    fixed[n - 1] = true;
    for k in 0..n {
        if fixed[k] {
            lower[k] = 0.0;
            upper[k] = 0.0;
            diag[k] = 1.0;
            rhs[k] = psi[k];
        }
    }
    let mut v = psi.clone();
    let mut stop = vec![true; n];
    let sys = LineSystem {
        lower: &lower,
        diag: &diag,
        upper: &upper,
        rhs: &rhs,
        psi: &psi,
    };
    TridiagLcp::new().solve(&sys, &mut v, &mut stop);
    Raw { y, v, psi }
}

/// Zero of the square-root defect between a stop node and its continuation
/// neighbours, linear in `y`.
fn refine(raw: &Raw, stop: usize, near: usize, far: usize) -> f64 {
    let s1 = (raw.psi[near] - raw.v[near]).max(0.0).sqrt();
    let s2 = (raw.psi[far] - raw.v[far]).max(0.0).sqrt();
    let (y0, y1, y2) = (raw.y[stop], raw.y[near], raw.y[far]);
    if !(s2 > s1 && s1 > 0.0) {
        return y0.exp();
    }
    let y = y1 + s1 * (y1 - y2) / (s2 - s1);
    let (lo, hi) = if y0 < y1 { (y0, y1) } else { (y1, y0) };
    y.clamp(lo, hi).exp()
}

fn boundaries(raw: &Raw, mode: Mode, reference: f64, tol: f64) -> Result<Vec<f64>> {
    let n = raw.y.len();
    let is_stop = |k: usize| raw.psi[k] - raw.v[k] <= tol;
    let lr = reference.ln();
    let escape = |what: &str| Error::BoundaryEscape {
        x: 0.0,
        detail: format!("one-dimensional solve has no stop node {what}"),
    };
    let hi = (1..n)
        .find(|&k| raw.y[k] > lr && is_stop(k))
        .ok_or_else(|| escape("above the reference level"))?;
    let hi = if mode.is_testing() {
        hi
    } else {
        (0..n).find(|&k| is_stop(k)).ok_or_else(|| escape("anywhere"))?
    };
    let b_hi = if hi >= 2 && !is_stop(hi - 1) {
        refine(raw, hi, hi - 1, hi - 2)
    } else {
        raw.y[hi].exp()
    };
    if !mode.is_testing() {
        return Ok(vec![b_hi]);
    }
    let lo = (0..n).rev().find(|&k| raw.y[k] < lr && is_stop(k)).unwrap_or(0);
    let b_lo = if lo + 2 < n && !is_stop(lo + 1) {
        refine(raw, lo, lo + 1, lo + 2)
    } else {
        raw.y[lo].exp()
    };
    Ok(vec![b_lo, b_hi])
}

/// Dense one-dimensional solve on `[phi_min, phi_max]` with `n` nodes
/// (`n` odd so that halving shares every other node), plus the halved solve
/// that sets `tol_1d`.
pub fn solve_1d_constant_rho(model: &DiffusionModel, mode: Mode, phi_range: (f64, f64), n: usize) -> Result<Oracle1d> {
    let rhos: Vec<f64> = model.samples().map(|x| model.rho_unchecked(x)).collect();
    let (lo, hi) = rhos
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(*r), b.max(*r)));
    if !(hi - lo <= 1e-10) || lo == 0.0 {
        return Err(Error::ModelRejected(format!(
            "rho must be constant and nonzero for the one-dimensional oracle; it ranges over [{lo}, {hi}]"
        )));
    }
    if n < 64 || n.is_multiple_of(2) {
        return Err(config(format!(
            "one-dimensional resolution must be odd and >= 64, got {n}"
        )));
    }
    let (pmin, pmax) = phi_range;
    if !(pmin > 0.0 && pmax > pmin) {
        return Err(config(format!("phi range [{pmin}, {pmax}] is not a positive interval")));
    }
    let r2 = lo * lo;
    let yr = (pmin.ln(), pmax.ln());
    let fine = solve_raw(mode, r2, &model.params, yr, n);
    let coarse = solve_raw(mode, r2, &model.params, yr, (n - 1) / 2 + 1);
    let tol_1d = coarse
        .v
        .iter()
        .enumerate()
        .map(|(k, v)| (v - fine.v[2 * k]).abs())
        .fold(0.0, f64::max);
    let scale = if mode.is_testing() {
        model.params.cost_b
    } else {
        1.0 / model.params.cost_c
    };
    let reference = model.reference_phi(mode);
    let b = boundaries(&fine, mode, reference, 1e-12 * scale)?;
    Ok(Oracle1d {
        mode,
        y: fine.y,
        values: fine.v,
        boundaries: b,
        tol_1d,
    })
}
