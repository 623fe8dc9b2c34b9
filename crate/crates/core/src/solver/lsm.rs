//! Least-squares Monte Carlo value estimates.
//!
//! A stopping rule is fitted by backward regression of realised
//! continuation values on polynomials in `(log phi, x)` over training paths,
//! then applied to fresh paths. Any stopping rule, and the forced stop at
//! the horizon, can only do worse than the optimum, so the estimate is an
//! upper bound on the minimal cost up to Monte Carlo noise.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::model::DiffusionModel;
use crate::sde::{HatStepper, QdStepper, SimConfig, StStepper};
use crate::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    /// Evaluation paths.
    pub n_paths: usize,
    /// Training paths for the regression.
    pub n_train: usize,
    /// Defaults to 5 for testing and 8 for detection.
    pub horizon: Option<f64>,
    pub dt: f64,
    /// Simulation steps between exercise dates.
    pub exercise_every: usize,
    pub seed: u64,
    /// Standard deviation of the training starts around each probe, in
    /// `log phi` and in `x`.
    pub spread: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n_paths: 100_000,
            n_train: 40_000,
            horizon: None,
            dt: 0.01,
            exercise_every: 5,
            seed: 0,
            spread: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Set when some regression fell back to a smaller basis.
    pub basis_reduced: bool,
    pub n_paths: usize,
    pub horizon: f64,
}

const MAX_DEGREE: usize = 3;
/// Half-width in `log phi` of the band around `b/a` where the testing rule
/// never stops.
const BAND: f64 = 0.05;
const LOG_FLOOR: f64 = -30.0;

#[derive(Clone, Debug)]
struct Fit {
    mean: [f64; 2],
    scale: [f64; 2],
    degree: usize,
    coef: Vec<f64>,
}

fn basis(s: f64, t: f64, degree: usize, out: &mut Vec<f64>) {
    out.clear();
    for d in 0..=degree {
        for i in 0..=d {
            out.push(s.powi((d - i) as i32) * t.powi(i as i32));
        }
    }
}

impl Fit {
    fn eval(&self, lp: f64, x: f64, buf: &mut Vec<f64>) -> f64 {
        let s = (lp - self.mean[0]) / self.scale[0];
        let t = (x - self.mean[1]) / self.scale[1];
        basis(s, t, self.degree, buf);
        buf.iter().zip(&self.coef).map(|(b, c)| b * c).sum()
    }
}

/// Normal equations by Cholesky, dropping to a smaller basis when the Gram
/// matrix is numerically singular. Returns the fit and whether it was
/// reduced.
fn regress(pts: &[(f64, f64, f64)]) -> Option<(Fit, bool)> {
    let n = pts.len() as f64;
    let mut mean = [0.0; 2];
    for p in pts {
        mean[0] += p.0 / n;
        mean[1] += p.1 / n;
    }
    let mut scale = [0.0; 2];
    for p in pts {
        scale[0] += (p.0 - mean[0]).powi(2) / n;
        scale[1] += (p.1 - mean[1]).powi(2) / n;
    }
    let scale = scale.map(|v| v.sqrt().max(1e-8));
    let mut buf = Vec::new();
    for degree in (0..=MAX_DEGREE).rev() {
        let m = (degree + 1) * (degree + 2) / 2;
        if pts.len() < 3 * m {
            continue;
        }
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for p in pts {
            basis((p.0 - mean[0]) / scale[0], (p.1 - mean[1]) / scale[1], degree, &mut buf);
            for a in 0..m {
                rhs[a] += buf[a] * p.2;
                for b in 0..=a {
                    gram[(a, b)] += buf[a] * buf[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let Some(ch) = gram.clone().cholesky() else { continue };
        let l = ch.l();
        let diag: Vec<f64> = (0..m).map(|i| l[(i, i)] * l[(i, i)]).collect();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        if !(lo > 1e-12 * hi) {
            continue;
        }
        let coef = ch.solve(&rhs);
        if coef.iter().any(|c| !c.is_finite()) {
            continue;
        }
        return Some((
            Fit {
                mean,
                scale,
                degree,
                coef: coef.iter().copied().collect(),
            },
            degree < MAX_DEGREE,
        ));
    }
    None
}

enum Walker<'a> {
    St(StStepper<'a>),
    Hat(HatStepper<'a>),
    Qd(QdStepper<'a>),
}

impl Walker<'_> {
    fn step(&mut self) -> bool {
        match self {
            Walker::St(w) => w.step().is_ok(),
            Walker::Hat(w) => w.step().is_ok(),
            Walker::Qd(w) => w.step().is_ok(),
        }
    }

    fn state(&self) -> (f64, f64) {
        let (lp, x) = match self {
            Walker::St(w) => (w.log_phi(), w.x),
            Walker::Hat(w) => (w.log_phi(), w.x),
            Walker::Qd(w) => (w.log_phi(), w.x),
        };
        (lp.max(LOG_FLOOR), x)
    }

    fn phi(&self) -> f64 {
        match self {
            Walker::St(w) => w.phi(),
            Walker::Hat(w) => w.phi(),
            Walker::Qd(w) => w.phi(),
        }
    }

    fn rho2(&self) -> f64 {
        match self {
            Walker::Hat(w) => w.rho2(),
            _ => 1.0,
        }
    }
}

/// Per-mode problem data.
#[derive(Clone, Copy)]
struct Problem {
    mode: Mode,
    a: f64,
    b: f64,
    c: f64,
    lambda: f64,
}

impl Problem {
    fn new(model: &DiffusionModel, mode: Mode) -> Self {
        let p = model.params;
        Problem {
            mode,
            a: p.cost_a,
            b: p.cost_b,
            c: p.cost_c,
            lambda: p.lambda,
        }
    }

    fn payoff(&self, phi: f64) -> f64 {
        match self.mode {
            Mode::Detection => 0.0,
            _ => (self.a * phi).min(self.b),
        }
    }

    fn cost(&self, w: &Walker<'_>) -> f64 {
        let phi = w.phi();
        match self.mode {
            Mode::Detection => phi - self.lambda / self.c,
            Mode::Testing => 1.0 + phi,
            Mode::TestingTimeChanged => (1.0 + phi) / w.rho2(),
        }
    }

    fn discount(&self) -> f64 {
        if self.mode == Mode::Detection {
            self.lambda
        } else {
            0.0
        }
    }

    /// Regression side of a state, or `None` where stopping is excluded.
    fn side(&self, lp: f64) -> Option<usize> {
        match self.mode {
            Mode::Detection => (lp >= (self.lambda / self.c).ln()).then_some(0),
            _ => {
                let r = (self.b / self.a).ln();
                if (lp - r).abs() < BAND {
                    None
                } else {
                    Some(usize::from(lp > r))
                }
            }
        }
    }

    fn walker<'a>(&self, model: &'a DiffusionModel, phi0: f64, x0: f64, sim: &SimConfig, index: u64) -> Walker<'a> {
        match self.mode {
            Mode::Testing => Walker::St(StStepper::new(model, phi0, x0, sim, index)),
            Mode::TestingTimeChanged => Walker::Hat(HatStepper::new(model, phi0, x0, sim, index)),
            Mode::Detection => Walker::Qd(QdStepper::new(model, phi0, x0, sim, index, self.lambda)),
        }
    }
}

/// A fitted exercise rule.
pub struct LsmPolicy {
    problem: Problem,
    fits: Vec<[Option<Fit>; 2]>,
    dt: f64,
    every: usize,
    dates: usize,
    horizon: f64,
    pub basis_reduced: bool,
}

struct TrainPath {
    states: Vec<(f64, f64)>,
    costs: Vec<f64>,
    terminal: f64,
}

fn horizon_of(mode: Mode, cfg: &McConfig) -> f64 {
    cfg.horizon.unwrap_or(if mode == Mode::Detection { 8.0 } else { 5.0 })
}

fn check_cfg(cfg: &McConfig) -> Result<()> {
    if !(cfg.dt > 0.0 && cfg.exercise_every > 0 && cfg.spread >= 0.0) {
        return Err(config(
            "Monte Carlo config needs dt > 0, exercise_every > 0, spread >= 0",
        ));
    }
    Ok(())
}

/// Simulates from `walker`, recording the state at every exercise date and
/// the running cost over each period (discounted to the period start).
fn run_path(
    problem: &Problem,
    walker: &mut Walker<'_>,
    dt: f64,
    every: usize,
    dates: usize,
    index: u64,
) -> Result<TrainPath> {
    let lam = problem.discount();
    let inner: Vec<f64> = (0..=every).map(|m| (-lam * dt * m as f64).exp()).collect();
    let mut states = Vec::with_capacity(dates + 1);
    let mut costs = Vec::with_capacity(dates);
    states.push(walker.state());
    let mut c_prev = problem.cost(walker);
    for k in 0..dates {
        let mut acc = 0.0;
        for m in 0..every {
            if !walker.step() {
                return Err(Error::Simulation {
                    path: index,
                    step: k * every + m + 1,
                });
            }
            let c = problem.cost(walker);
            acc += 0.5 * (c_prev * inner[m] + c * inner[m + 1]) * dt;
            c_prev = c;
        }
        costs.push(acc);
        states.push(walker.state());
    }
    let terminal = problem.payoff(walker.phi());
    Ok(TrainPath {
        states,
        costs,
        terminal,
    })
}

impl LsmPolicy {
    /// Fits the exercise rule on `cfg.n_train` paths started near the given
    /// probes `(phi, x)`.
    pub fn train(model: &DiffusionModel, mode: Mode, probes: &[(f64, f64)], cfg: &McConfig) -> Result<Self> {
        check_cfg(cfg)?;
        if probes.is_empty() {
            return Err(config("at least one training probe is needed"));
        }
        let problem = Problem::new(model, mode);
        let horizon = horizon_of(mode, cfg);
        let sim = SimConfig::new(horizon, cfg.dt, cfg.seed);
        let steps = sim.steps()?;
        let every = cfg.exercise_every;
        let dates = steps / every;
        let (lo, hi) = model.x_domain();
        let start_seed = cfg.seed ^ 0x5eed_0f_57a7;
        let paths: Vec<TrainPath> = (0..cfg.n_train as u64)
            .into_par_iter()
            .map(|p| {
                let mut rng = ChaCha8Rng::seed_from_u64(start_seed);
                rng.set_stream(p);
                let (phi, x) = probes[p as usize % probes.len()];
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let lp = if phi > 0.0 {
                    phi.ln()
                } else {
                    (problem.b / problem.a).ln() - 2.0
                };
                let phi0 = (lp + cfg.spread * z1).exp();
                let x0 = (x + cfg.spread * z2).clamp(lo, hi);
                let mut w = problem.walker(model, phi0, x0, &sim, p);
                run_path(&problem, &mut w, cfg.dt, every, dates, p)
            })
            .collect::<Result<_>>()?;

        let disc = (-problem.discount() * cfg.dt * every as f64).exp();
        let mut cf: Vec<f64> = paths.iter().map(|p| p.terminal).collect();
        let mut fits: Vec<[Option<Fit>; 2]> = vec![[None, None]; dates];
        let mut reduced = false;
        let mut buf = Vec::new();
        for k in (0..dates).rev() {
            let cont: Vec<f64> = paths.iter().zip(&cf).map(|(p, v)| p.costs[k] + disc * v).collect();
            let mut sides: [Vec<(f64, f64, f64)>; 2] = [Vec::new(), Vec::new()];
            for (p, c) in paths.iter().zip(&cont) {
                let (lp, x) = p.states[k];
                if let Some(s) = problem.side(lp) {
                    sides[s].push((lp, x, *c));
                }
            }
            for s in 0..2 {
                if let Some((fit, r)) = regress(&sides[s]) {
                    reduced |= r;
                    fits[k][s] = Some(fit);
                }
            }
            for (i, p) in paths.iter().enumerate() {
                let (lp, x) = p.states[k];
                cf[i] = cont[i];
                if let Some(fit) = problem.side(lp).and_then(|s| fits[k][s].as_ref()) {
                    let pay = problem.payoff(lp.exp());
                    if pay <= fit.eval(lp, x, &mut buf) {
                        cf[i] = pay;
                    }
                }
            }
        }
        Ok(LsmPolicy {
            problem,
            fits,
            dt: cfg.dt,
            every,
            dates,
            horizon,
            basis_reduced: reduced,
        })
    }

    fn stops(&self, k: usize, lp: f64, x: f64, buf: &mut Vec<f64>) -> bool {
        self.problem
            .side(lp)
            .and_then(|s| self.fits[k][s].as_ref())
            .is_some_and(|f| self.problem.payoff(lp.exp()) <= f.eval(lp, x, buf))
    }

    /// Cost of the fitted rule from `(phi0, x0)` on `n_paths` fresh paths.
    pub fn evaluate(
        &self,
        model: &DiffusionModel,
        phi0: f64,
        x0: f64,
        n_paths: usize,
        seed: u64,
    ) -> Result<McEstimate> {
        model.check_x(x0)?;
        if !(phi0 >= 0.0 && phi0.is_finite()) {
            return Err(Error::Range {
                what: "phi0",
                value: phi0,
                range: "[0, inf)".into(),
            });
        }
        let done = |estimate: f64| McEstimate {
            estimate,
            stderr: 0.0,
            basis_reduced: self.basis_reduced,
            n_paths,
            horizon: self.horizon,
        };
        if self.problem.mode.is_testing() && phi0 == 0.0 {
            return Ok(done(0.0));
        }
        let mut buf = Vec::new();
        let lp0 = phi0.ln().max(LOG_FLOOR);
        if self.dates > 0 && self.stops(0, lp0, x0, &mut buf) {
            return Ok(done(self.problem.payoff(phi0)));
        }
        let sim = SimConfig::new(self.horizon, self.dt, seed);
        let problem = self.problem;
        let lam = problem.discount();
        let period = self.dt * self.every as f64;
        let values: Vec<f64> = (0..n_paths as u64)
            .into_par_iter()
            .map_init(Vec::new, |buf, p| {
                let mut w = problem.walker(model, phi0, x0, &sim, p);
                let mut total = 0.0;
                let mut c_prev = problem.cost(&w);
                for k in 0..self.dates {
                    let t0 = k as f64 * period;
                    for m in 0..self.every {
                        if !w.step() {
                            return Err(Error::Simulation {
                                path: p,
                                step: k * self.every + m + 1,
                            });
                        }
                        let t = t0 + (m as f64) * self.dt;
                        let c = problem.cost(&w);
                        total += 0.5 * (c_prev * (-lam * t).exp() + c * (-lam * (t + self.dt)).exp()) * self.dt;
                        c_prev = c;
                    }
                    let (lp, x) = w.state();
                    if k + 1 < self.dates && self.stops(k + 1, lp, x, buf) {
                        return Ok(total + (-lam * (t0 + period)).exp() * problem.payoff(w.phi()));
                    }
                }
                Ok(total + (-lam * self.horizon).exp() * problem.payoff(w.phi()))
            })
            .collect::<Result<_>>()?;
        let (estimate, stderr) = crate::sde::mean_stderr(&values);
        Ok(McEstimate {
            estimate,
            stderr,
            basis_reduced: self.basis_reduced,
            n_paths,
            horizon: self.horizon,
        })
    }
}

/// Upper estimate of the value at `(phi0, x0)` with its standard error.
/// Training starts are spread around the probe itself.
pub fn mc_value_oracle(model: &DiffusionModel, mode: Mode, phi0: f64, x0: f64, cfg: &McConfig) -> Result<McEstimate> {
    if cfg.n_paths < 10_000 {
        return Err(config(format!(
            "at least 10^4 evaluation paths are needed, got {}",
            cfg.n_paths
        )));
    }
    if mode.is_testing() && phi0 == 0.0 {
        model.check_x(x0)?;
        return Ok(McEstimate {
            estimate: 0.0,
            stderr: 0.0,
            basis_reduced: false,
            n_paths: cfg.n_paths,
            horizon: horizon_of(mode, cfg),
        });
    }
    let policy = LsmPolicy::train(model, mode, &[(phi0, x0)], cfg)?;
    policy.evaluate(model, phi0, x0, cfg.n_paths, cfg.seed.wrapping_add(1))
}
