//! Path simulation.
//!
//! All simulators share one noise source per path: a ChaCha stream keyed by
//! `(seed, path index)` from which standard normal increments are drawn in
//! step order, so a path depends only on `(seed, path index, step)` and
//! batches can be generated in parallel in any order. `X` follows an
//! Euler-Maruyama step projected back onto the truncated domain (the
//! discrete form of a reflecting boundary). Ratio and likelihood processes
//! are advanced in log space so positivity is exact.

mod stepper;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::model::DiffusionModel;

pub use stepper::{HatStepper, Noise, QdStepper, StStepper};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Euler,
    ExactExponent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    Testing,
    Detection,
    TimeChanged,
    Hat,
    Canonical,
}

/// Simulation settings shared by all path generators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Pair paths `2k`, `2k+1` with negated increments.
    pub antithetic: bool,
    /// Record the likelihood `L` and the clock `A` alongside the state.
    pub extras: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, seed: u64) -> Self {
        SimConfig {
            horizon,
            dt,
            seed,
            antithetic: false,
            extras: false,
        }
    }

    pub fn with_extras(mut self) -> Self {
        self.extras = true;
        self
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= self.dt) {
            return Err(config(format!("horizon {} shorter than dt {}", self.horizon, self.dt)));
        }
        Ok(((self.horizon / self.dt).round() as usize).max(1))
    }
}

/// One simulated path with optional companion processes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathBundle {
    pub kind: PathKind,
    pub times: Vec<f64>,
    pub phi: Vec<f64>,
    pub x: Vec<f64>,
    pub seed: u64,
    pub path_index: u64,
    pub dt: f64,
    pub scheme: Scheme,
    /// Likelihood ratio `L`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<Vec<f64>>,
    /// Additive functional `A_t = int_0^t rho^2(X_s) ds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<Vec<f64>>,
    /// Inverse clock `T` evaluated on the (new) time grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_clock: Option<Vec<f64>>,
    /// Canonical coordinate `U`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    /// `F(X_t) - log Phi_t` from the coupled ratio path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_coupled: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PathBundle {
    fn new(kind: PathKind, cfg: &SimConfig, path_index: u64, n: usize) -> Self {
        PathBundle {
            kind,
            times: Vec::with_capacity(n + 1),
            phi: Vec::with_capacity(n + 1),
            x: Vec::with_capacity(n + 1),
            seed: cfg.seed,
            path_index,
            dt: cfg.dt,
            scheme: Scheme::ExactExponent,
            likelihood: None,
            clock: None,
            inverse_clock: None,
            u: None,
            u_coupled: None,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_phi(&self) -> f64 {
        *self.phi.last().expect("non-empty path")
    }

    /// CSV dump with columns `t,phi,x` followed by whichever of `L,A,u` are
    /// present.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut header = vec!["t", "phi", "x"];
        let extras: Vec<(&str, &Vec<f64>)> = [
            ("L", self.likelihood.as_ref()),
            ("A", self.clock.as_ref()),
            ("u", self.u.as_ref()),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect();
        header.extend(extras.iter().map(|(n, _)| *n));
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![fmt(self.times[k]), fmt(self.phi[k]), fmt(self.x[k])];
            row.extend(extras.iter().map(|(_, v)| fmt(v[k])));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Round-trip formatting used for every CSV number: plain decimal for
/// moderate magnitudes, scientific otherwise.
pub fn fmt(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn check_start(model: &DiffusionModel, phi0: f64, x0: f64) -> Result<()> {
    model.check_x(x0)?;
    if !(phi0 >= 0.0 && phi0.is_finite()) {
        return Err(Error::Range {
            what: "phi0",
            value: phi0,
            range: "[0, inf)".into(),
        });
    }
    Ok(())
}

/// `(Phi, X)` under the null measure of the testing problem.
pub fn simulate_st(model: &DiffusionModel, phi0: f64, x0: f64, cfg: &SimConfig, path_index: u64) -> Result<PathBundle> {
    check_start(model, phi0, x0)?;
    let n = cfg.steps()?;
    let mut st = StStepper::new(model, phi0, x0, cfg, path_index);
    let mut p = PathBundle::new(PathKind::Testing, cfg, path_index, n);
    let mut clock = cfg.extras.then(|| Vec::with_capacity(n + 1));
    let mut a = 0.0;
    let mut r2_prev = st.rho2();
    for k in 0..=n {
        if k > 0 {
            st.step().map_err(|_| Error::Simulation {
                path: path_index,
                step: k,
            })?;
            let r2 = st.rho2();
            a += 0.5 * (r2_prev + r2) * cfg.dt;
            r2_prev = r2;
        }
        p.times.push(k as f64 * cfg.dt);
        p.phi.push(st.phi());
        p.x.push(st.x);
        if let Some(c) = clock.as_mut() {
            c.push(a);
        }
    }
    p.clock = clock;
    Ok(p)
}

/// `(Phi, X)` under the pre-change measure of the detection problem with
/// dynamics rate `lambda_dyn`. `L` is advanced in log space and `Phi` is
/// built from `L` through the closed-form representation; the integral
/// `int e^{-lambda s} / L_s ds` uses exact exponential weights with the
/// trapezoid average of `1/L` over each step, which is exact for `rho == 0`.
pub fn simulate_qd(
    model: &DiffusionModel,
    phi0: f64,
    x0: f64,
    cfg: &SimConfig,
    path_index: u64,
    lambda_dyn: f64,
) -> Result<PathBundle> {
    check_start(model, phi0, x0)?;
    if !(lambda_dyn > 0.0) {
        return Err(config("lambda_dyn must be positive"));
    }
    let n = cfg.steps()?;
    let mut st = QdStepper::new(model, phi0, x0, cfg, path_index, lambda_dyn);
    let mut p = PathBundle::new(PathKind::Detection, cfg, path_index, n);
    let mut lik = cfg.extras.then(|| Vec::with_capacity(n + 1));
    let mut clock = cfg.extras.then(|| Vec::with_capacity(n + 1));
    let mut a = 0.0;
    let mut r2_prev = st.rho2();
    for k in 0..=n {
        if k > 0 {
            st.step().map_err(|_| Error::Simulation {
                path: path_index,
                step: k,
            })?;
            let r2 = st.rho2();
            a += 0.5 * (r2_prev + r2) * cfg.dt;
            r2_prev = r2;
        }
        p.times.push(st.t());
        p.phi.push(st.phi());
        p.x.push(st.x);
        if let Some(l) = lik.as_mut() {
            l.push(st.likelihood());
        }
        if let Some(c) = clock.as_mut() {
            c.push(a);
        }
    }
    p.likelihood = lik;
    p.clock = clock;
    Ok(p)
}

/// The decoupled time-changed pair: `dPhî = Phî dB`, `dX̂ = mu0/rho^2 dt +
/// sigma/rho dB`, one Brownian increment stream.
pub fn simulate_hat(
    model: &DiffusionModel,
    phi0: f64,
    x0: f64,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<PathBundle> {
    check_start(model, phi0, x0)?;
    let (lo, _) = model.rho_abs_range();
    if lo < 1e-8 {
        return Err(Error::ModelRejected(format!(
            "|rho| drops to {lo:.3e}; the time-changed coefficients are unbounded"
        )));
    }
    let n = cfg.steps()?;
    let mut st = HatStepper::new(model, phi0, x0, cfg, path_index);
    let mut p = PathBundle::new(PathKind::Hat, cfg, path_index, n);
    for k in 0..=n {
        if k > 0 {
            st.step().map_err(|_| Error::Simulation {
                path: path_index,
                step: k,
            })?;
        }
        p.times.push(k as f64 * cfg.dt);
        p.phi.push(st.phi());
        p.x.push(st.x);
    }
    Ok(p)
}

/// The canonical pair: `dU = a(U, X) dt` by Euler, `X` as under the
/// pre-change measure. The coupled detection path (same increments, started
/// at `phi0 = e^{F(x0) - u0}`) is stored in `phi` and `u_coupled` holds
/// `F(X) - log Phi` along it.
pub fn simulate_canonical(
    model: &DiffusionModel,
    u0: f64,
    x0: f64,
    cfg: &SimConfig,
    path_index: u64,
) -> Result<PathBundle> {
    model.check_x(x0)?;
    let n = cfg.steps()?;
    let tab = model.tables();
    let lambda = model.lambda();
    let f_of = |x: f64| tab.f.eval(&tab.lat, x);
    let phi0 = (f_of(x0) - u0).exp();
    let mut st = QdStepper::new(model, phi0, x0, cfg, path_index, lambda);
    let mut p = PathBundle::new(PathKind::Canonical, cfg, path_index, n);
    p.scheme = Scheme::Euler;
    let mut u = Vec::with_capacity(n + 1);
    let mut uc = Vec::with_capacity(n + 1);
    let mut lik = cfg.extras.then(|| Vec::with_capacity(n + 1));
    let mut uk = u0;
    for k in 0..=n {
        if k > 0 {
            let x = st.x;
            let (i, t) = tab.lat.locate(x);
            let g1 = tab.g1.at(&tab.lat, i, t);
            let fx = tab.f.at(&tab.lat, i, t);
            let a = g1 - lambda - lambda * (uk - fx).exp();
            uk += a * cfg.dt;
            st.step().map_err(|_| Error::Simulation {
                path: path_index,
                step: k,
            })?;
            if !uk.is_finite() {
                return Err(Error::Simulation {
                    path: path_index,
                    step: k,
                });
            }
        }
        p.times.push(st.t());
        p.phi.push(st.phi());
        p.x.push(st.x);
        u.push(uk);
        uc.push(f_of(st.x) - st.log_phi());
        if let Some(l) = lik.as_mut() {
            l.push(st.likelihood());
        }
    }
    p.u = Some(u);
    p.u_coupled = Some(uc);
    p.likelihood = lik;
    Ok(p)
}

/// `A_t = int_0^t rho^2(X_s) ds` on the path's own time grid (trapezoid).
pub fn additive_clock(path: &PathBundle, model: &DiffusionModel) -> Vec<f64> {
    if let Some(c) = &path.clock {
        return c.clone();
    }
    let tab = model.tables();
    let r2: Vec<f64> = path
        .x
        .iter()
        .map(|&x| {
            let r = tab.rho.eval(&tab.lat, x);
            r * r
        })
        .collect();
    let mut a = Vec::with_capacity(r2.len());
    let mut acc = 0.0;
    a.push(0.0);
    for k in 1..r2.len() {
        acc += 0.5 * (r2[k - 1] + r2[k]) * (path.times[k] - path.times[k - 1]);
        a.push(acc);
    }
    a
}

/// Reclocks a testing path by the inverse of `A`: the result has a uniform
/// new clock of step `new_dt` (default: the path's step) up to `new_horizon`
/// (default: as far as `A` reaches). `Phi` is interpolated in log space, `X`
/// linearly; `inverse_clock` holds `T` at the new times.
pub fn time_change(
    path: &PathBundle,
    model: &DiffusionModel,
    new_horizon: Option<f64>,
    new_dt: Option<f64>,
) -> Result<PathBundle> {
    if path.len() < 2 {
        return Err(config("path too short for a time change"));
    }
    let a = additive_clock(path, model);
    if a.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::ModelRejected(
            "clock A is not strictly increasing (rho vanishes along the path)".into(),
        ));
    }
    let dt = new_dt.unwrap_or(path.dt);
    let a_end = *a.last().unwrap();
    let mut warnings = path.warnings.clone();
    let target = new_horizon.unwrap_or(a_end);
    let reach = if target > a_end * (1.0 + 1e-12) {
        warnings.push(format!(
            "clock reaches only {a_end:.6} of the requested {target:.6}; new path truncated"
        ));
        a_end
    } else {
        target
    };
    let m = ((reach / dt) * (1.0 + 1e-12)).floor() as usize;
    let mut out = PathBundle {
        kind: PathKind::TimeChanged,
        times: Vec::with_capacity(m + 1),
        phi: Vec::with_capacity(m + 1),
        x: Vec::with_capacity(m + 1),
        seed: path.seed,
        path_index: path.path_index,
        dt,
        scheme: path.scheme,
        likelihood: None,
        clock: None,
        inverse_clock: Some(Vec::with_capacity(m + 1)),
        u: None,
        u_coupled: None,
        warnings,
    };
    let mut k = 0usize;
    for j in 0..=m {
        let s = (j as f64 * dt).min(a_end);
        while k + 2 < a.len() && a[k + 1] < s {
            k += 1;
        }
        let w = ((s - a[k]) / (a[k + 1] - a[k])).clamp(0.0, 1.0);
        let t = path.times[k] + w * (path.times[k + 1] - path.times[k]);
        let (p0, p1) = (path.phi[k], path.phi[k + 1]);
        let phi = if p0 > 0.0 && p1 > 0.0 {
            (p0.ln() + w * (p1.ln() - p0.ln())).exp()
        } else {
            p0 + w * (p1 - p0)
        };
        out.times.push(j as f64 * dt);
        out.phi.push(phi);
        out.x.push(path.x[k] + w * (path.x[k + 1] - path.x[k]));
        out.inverse_clock.as_mut().unwrap().push(t);
    }
    Ok(out)
}

/// Piecewise-linear interpolation of a clock `(times, values)` at `s`.
pub fn interpolate_clock(times: &[f64], values: &[f64], s: f64) -> f64 {
    let n = times.len();
    if s <= times[0] {
        return values[0];
    }
    if s >= times[n - 1] {
        return values[n - 1];
    }
    let k = times.partition_point(|&t| t <= s).saturating_sub(1).min(n - 2);
    let w = (s - times[k]) / (times[k + 1] - times[k]);
    values[k] + w * (values[k + 1] - values[k])
}

/// Terminal `(Phi_T, X_T)` of `n_paths` testing paths, generated in parallel.
pub fn terminal_st(
    model: &DiffusionModel,
    phi0: f64,
    x0: f64,
    cfg: &SimConfig,
    n_paths: u64,
) -> Result<Vec<(f64, f64)>> {
    check_start(model, phi0, x0)?;
    let n = cfg.steps()?;
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut st = StStepper::new(model, phi0, x0, cfg, i);
            for k in 1..=n {
                st.step().map_err(|_| Error::Simulation { path: i, step: k })?;
            }
            Ok((st.phi(), st.x))
        })
        .collect()
}

/// Terminal `(Phi_T, X_T)` of `n_paths` detection paths.
pub fn terminal_qd(
    model: &DiffusionModel,
    phi0: f64,
    x0: f64,
    cfg: &SimConfig,
    n_paths: u64,
    lambda_dyn: f64,
) -> Result<Vec<(f64, f64)>> {
    check_start(model, phi0, x0)?;
    let n = cfg.steps()?;
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut st = QdStepper::new(model, phi0, x0, cfg, i, lambda_dyn);
            for k in 1..=n {
                st.step().map_err(|_| Error::Simulation { path: i, step: k })?;
            }
            Ok((st.phi(), st.x))
        })
        .collect()
}

/// Terminal `(Phî_T, X̂_T)` of `n_paths` time-changed paths.
pub fn terminal_hat(
    model: &DiffusionModel,
    phi0: f64,
    x0: f64,
    cfg: &SimConfig,
    n_paths: u64,
) -> Result<Vec<(f64, f64)>> {
    check_start(model, phi0, x0)?;
    let n = cfg.steps()?;
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut st = HatStepper::new(model, phi0, x0, cfg, i);
            for k in 1..=n {
                st.step().map_err(|_| Error::Simulation { path: i, step: k })?;
            }
            Ok((st.phi(), st.x))
        })
        .collect()
}

/// Sample mean and standard error.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}
