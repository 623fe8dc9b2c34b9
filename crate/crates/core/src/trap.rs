//! Trap curves, Hörmander's bracket condition and their destruction by
//! perturbing `lambda`.
//!
//! A curve `phi = kappa e^{F(x)}` is a trap for the detection pair when the
//! canonical drift vanishes along it, i.e. when
//!
//! `R_kappa(x) = G1(x) - lambda - (lambda / kappa) e^{-F(x)} == 0`.
//!
//! Differentiating in `x` removes the constant and identifies the only
//! candidate: `lambda / kappa = G1' / G2'` with `G2 = e^{-F}`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::model::DiffusionModel;
use crate::sde::fmt;

/// Trap tolerance `1e-8 (1 + lambda)`.
pub fn tol_trap(lambda: f64) -> f64 {
    1e-8 * (1.0 + lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualProfile {
    pub kappa: f64,
    pub lambda: f64,
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    pub sup: f64,
}

impl ResidualProfile {
    /// CSV `x,residual`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_pairs(w, "residual", &self.x, &self.residual)
    }
}

fn write_pairs<W: Write>(w: W, name: &str, x: &[f64], y: &[f64]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    wr.write_record(["x", name])?;
    for (a, b) in x.iter().zip(y) {
        wr.write_record([fmt(*a), fmt(*b)])?;
    }
    wr.flush()?;
    Ok(())
}

/// `G1 - lambda` and `e^{-F}` at the sample points.
fn sampled(model: &DiffusionModel) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let x: Vec<f64> = model.samples().collect();
    let mut g1 = Vec::with_capacity(x.len());
    let mut g2 = Vec::with_capacity(x.len());
    for &xi in &x {
        g1.push(model.g1_jet(xi, 0)?.value());
        g2.push((-model.f_integral(xi)?).exp());
    }
    Ok((x, g1, g2))
}

fn profile(x: &[f64], g1: &[f64], g2: &[f64], lambda: f64, kappa: f64) -> ResidualProfile {
    let d = lambda / kappa;
    let residual: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| a - lambda - d * b).collect();
    let sup = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    ResidualProfile {
        kappa,
        lambda,
        x: x.to_vec(),
        residual,
        sup,
    }
}

/// `R_kappa` on the model's sample points with the model's own `lambda`.
pub fn trap_residual(model: &DiffusionModel, kappa: f64) -> Result<ResidualProfile> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(config(format!("kappa must be positive, got {kappa}")));
    }
    let (x, g1, g2) = sampled(model)?;
    Ok(profile(&x, &g1, &g2, model.lambda(), kappa))
}

/// `min over d >= 0` of `sup |G1 - lambda - d e^{-F}|`, a convex problem in
/// `d` solved by ternary search. Returns `(d, sup)`.
fn best_ratio(g1: &[f64], g2: &[f64], lambda: f64) -> (f64, f64) {
    let sup = |d: f64| {
        g1.iter()
            .zip(g2)
            .fold(0.0f64, |m, (a, b)| m.max((a - lambda - d * b).abs()))
    };
    let big = g1.iter().fold(0.0f64, |m, a| m.max((a - lambda).abs()));
    let small = g2.iter().fold(f64::INFINITY, |m, b| m.min(*b));
    let (mut lo, mut hi) = (0.0, 2.0 * big / small.max(1e-300) + 1.0);
    for _ in 0..300 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if sup(m1) <= sup(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let d = 0.5 * (lo + hi);
    (d, sup(d))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationStep {
    pub eps: f64,
    pub has_trap: bool,
    /// `lambda_eps / kappa` from the derivative ratio.
    pub candidate_ratio: f64,
    /// Residual sup at the derivative-ratio candidate.
    pub candidate_sup: f64,
    /// Smallest residual sup over all `kappa > 0`.
    pub min_residual_sup: f64,
    pub best_kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapReport {
    pub model: String,
    pub lambda: f64,
    pub tol_trap: f64,
    pub has_trap: bool,
    pub kappa: Option<f64>,
    /// Spread of `G1'/G2'` over the samples where `|G2'|` is not negligible.
    pub candidate_spread: f64,
    pub candidate_ratio: Option<f64>,
    /// Profile at the candidate `kappa`, or at the best `kappa` when the
    /// candidate is rejected.
    pub residual_profile: ResidualProfile,
    pub residual_sup: f64,
    /// `gamma(x) = kappa e^{F(x)}` on the profile points.
    pub curve_samples: Option<Vec<f64>>,
    pub perturbation: Vec<PerturbationStep>,
}

impl TrapReport {
    /// CSV `x,gamma`; empty body without a trap.
    pub fn write_curve_csv<W: Write>(&self, w: W) -> Result<()> {
        let empty = Vec::new();
        let c = self.curve_samples.as_ref().unwrap_or(&empty);
        let x = if c.is_empty() { &empty } else { &self.residual_profile.x };
        write_pairs(w, "gamma", x, c)
    }
}

/// Ratio `G1'/G2'` at the samples, skipping points where `|G2'|` is
/// negligible.
fn ratios(model: &DiffusionModel) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for x in model.samples() {
        let g1p = model.g1_jet(x, 1)?.derivative(1);
        let q = model.q_jet(x, 0)?.value();
        let g2p = -q * (-model.f_integral(x)?).exp();
        if g2p.abs() > 1e-12 {
            out.push(g1p / g2p);
        }
    }
    Ok(out)
}

fn analyse(model: &DiffusionModel, lambda: f64) -> Result<(Option<f64>, f64, ResidualProfile, bool)> {
    let (x, g1, g2) = sampled(model)?;
    let r = ratios(model)?;
    let tol = tol_trap(lambda);
    let (lo, hi) = r
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let spread = if r.is_empty() { f64::INFINITY } else { hi - lo };
    let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
    if spread < tol && mean > 0.0 {
        let kappa = lambda / mean;
        let p = profile(&x, &g1, &g2, lambda, kappa);
        let found = p.sup <= tol;
        return Ok((Some(mean), spread, p, found));
    }
    let (d, _) = best_ratio(&g1, &g2, lambda);
    let kappa = if d > 0.0 { lambda / d } else { f64::INFINITY };
    let p = if kappa.is_finite() {
        profile(&x, &g1, &g2, lambda, kappa)
    } else {
        let mut p = profile(&x, &g1, &g2, lambda, 1.0);
        p.residual = g1.iter().map(|a| a - lambda).collect();
        p.sup = p.residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        p.kappa = f64::INFINITY;
        p
    };
    Ok((None, spread, p, false))
}

/// Looks for a trap curve through the derivative-ratio identity.
pub fn detect_trap(model: &DiffusionModel) -> Result<TrapReport> {
    let lambda = model.lambda();
    let (ratio, spread, residual, has_trap) = analyse(model, lambda)?;
    let kappa = has_trap.then_some(residual.kappa);
    let curve = match kappa {
        Some(k) => Some(
            residual
                .x
                .iter()
                .map(|&x| model.f_integral(x).map(|f| k * f.exp()))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(TrapReport {
        model: model.name.clone(),
        lambda,
        tol_trap: tol_trap(lambda),
        has_trap,
        kappa,
        candidate_spread: spread,
        candidate_ratio: ratio,
        residual_sup: residual.sup,
        residual_profile: residual,
        curve_samples: curve,
        perturbation: Vec::new(),
    })
}

/// Replaces `lambda` by `lambda + eps` in the trap equation (both the
/// constant and the coefficient of `e^{-F}`; `G1` is unchanged) and reports
/// whether a trap survives.
pub fn perturbation_check(model: &DiffusionModel, eps_list: &[f64]) -> Result<Vec<PerturbationStep>> {
    let (_, g1, g2) = sampled(model)?;
    let r = ratios(model)?;
    let mean = r.iter().sum::<f64>() / r.len().max(1) as f64;
    let lambda = model.lambda();
    let mut out = Vec::new();
    for &eps in eps_list {
        let le = lambda + eps;
        let tol = tol_trap(le);
        // G1' / G2' does not see lambda, so the candidate ratio is unchanged.
        let candidate_sup = g1
            .iter()
            .zip(&g2)
            .fold(0.0f64, |m, (a, b)| m.max((a - le - mean * b).abs()));
        let (d, min_sup) = best_ratio(&g1, &g2, le);
        out.push(PerturbationStep {
            eps,
            has_trap: mean > 0.0 && candidate_sup <= tol,
            candidate_ratio: mean,
            candidate_sup,
            min_residual_sup: min_sup,
            best_kappa: if d > 0.0 { le / d } else { f64::INFINITY },
        });
    }
    Ok(out)
}

/// First non-vanishing order of `d^n a / dx^n` on a `(u, x)` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HormanderMap {
    pub model: String,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub n_max: usize,
    /// Row-major in `u`: `index[i * x.len() + j]` is the first order that
    /// does not vanish at `(u_i, x_j)`, or `None` if all orders through
    /// `n_max` vanish.
    pub index: Vec<Option<usize>>,
}

impl HormanderMap {
    pub fn fail_nodes(&self) -> Vec<(f64, f64)> {
        let nx = self.x.len();
        self.index
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| (self.u[k / nx], self.x[k % nx]))
            .collect()
    }

    /// CSV `u,x,order` with an empty order for failing nodes.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wr.write_record(["u", "x", "order"])?;
        let nx = self.x.len();
        for (k, v) in self.index.iter().enumerate() {
            wr.write_record([
                fmt(self.u[k / nx]),
                fmt(self.x[k % nx]),
                v.map(|n| n.to_string()).unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Relative vanishing threshold for `f^(n) - e^u g^(n)`.
const VANISH: f64 = 1e-9;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Scans `a = f - e^u g` and its `x`-derivatives through `n_max`. The
/// bracket family spans the plane at a node exactly when one of these does
/// not vanish; the positive prefactors of the brackets are irrelevant.
pub fn hormander_scan(
    model: &DiffusionModel,
    u_range: (f64, f64),
    x_range: (f64, f64),
    n_u: usize,
    n_x: usize,
    n_max: usize,
) -> Result<HormanderMap> {
    if n_max < 1 || n_u < 2 || n_x < 2 || !(u_range.0 < u_range.1 && x_range.0 < x_range.1) {
        return Err(config(
            "hormander scan needs n_max >= 1 and two or more nodes on proper ranges",
        ));
    }
    let u = linspace(u_range.0, u_range.1, n_u);
    let x = linspace(x_range.0, x_range.1, n_x);
    for &xi in &x {
        model.check_x(xi)?;
    }
    let lambda = model.lambda();
    let jets = x
        .par_iter()
        .map(|&xi| model.canonical_jets(xi, n_max, lambda))
        .collect::<Result<Vec<_>>>()?;
    let mut index = Vec::with_capacity(n_u * n_x);
    for &ui in &u {
        let e = ui.exp();
        for (f, g) in &jets {
            let first = (0..=n_max).find(|&n| {
                let (fa, ga) = (f.derivative(n), e * g.derivative(n));
                (fa - ga).abs() > VANISH * (fa.abs() + ga.abs())
            });
            index.push(first);
        }
    }
    Ok(HormanderMap {
        model: model.name.clone(),
        u,
        x,
        n_max,
        index,
    })
}
