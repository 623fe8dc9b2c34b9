use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::SimConfig;
use crate::model::{DiffusionModel, Tables};

/// Standard normal increments of one path.
pub struct Noise {
    rng: ChaCha8Rng,
    sign: f64,
}

impl Noise {
    pub fn new(seed: u64, path_index: u64, antithetic: bool) -> Self {
        let (stream, sign) = if antithetic {
            (path_index / 2, if path_index % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (path_index, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Noise { rng, sign }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.sign * z
    }
}

#[derive(Debug)]
pub struct StepError;

struct Core<'a> {
    tab: &'a Tables,
    lo: f64,
    hi: f64,
    dt: f64,
    sqdt: f64,
    noise: Noise,
}

impl<'a> Core<'a> {
    fn new(model: &'a DiffusionModel, cfg: &SimConfig, path_index: u64) -> Self {
        let (lo, hi) = model.x_domain();
        Core {
            tab: model.tables(),
            lo,
            hi,
            dt: cfg.dt,
            sqdt: cfg.dt.sqrt(),
            noise: Noise::new(cfg.seed, path_index, cfg.antithetic),
        }
    }

    /// `(mu0, sigma, rho)` at `x`.
    #[inline]
    fn coeffs(&self, x: f64) -> (f64, f64, f64) {
        let t = self.tab;
        let (k, s) = t.lat.locate(x);
        (t.mu0.at(&t.lat, k, s), t.sigma.at(&t.lat, k, s), t.rho.at(&t.lat, k, s))
    }

    #[inline]
    fn project(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }
}

/// Testing dynamics under the null measure.
pub struct StStepper<'a> {
    core: Core<'a>,
    pub x: f64,
    log_phi: f64,
}

impl<'a> StStepper<'a> {
    pub fn new(model: &'a DiffusionModel, phi0: f64, x0: f64, cfg: &SimConfig, path_index: u64) -> Self {
        StStepper {
            core: Core::new(model, cfg, path_index),
            x: x0,
            log_phi: phi0.ln(),
        }
    }

    #[inline]
    pub fn step(&mut self) -> Result<(), StepError> {
        let c = &mut self.core;
        let (mu0, sigma, rho) = c.coeffs(self.x);
        let db = c.noise.normal() * c.sqdt;
        self.log_phi += rho * db - 0.5 * rho * rho * c.dt;
        self.x = c.project(self.x + mu0 * c.dt + sigma * db);
        if !self.x.is_finite() || self.log_phi.is_nan() || self.log_phi == f64::INFINITY {
            return Err(StepError);
        }
        Ok(())
    }

    pub fn phi(&self) -> f64 {
        self.log_phi.exp()
    }

    pub fn log_phi(&self) -> f64 {
        self.log_phi
    }

    pub fn rho2(&self) -> f64 {
        let r = self.core.coeffs(self.x).2;
        r * r
    }
}

/// Detection dynamics under the pre-change measure.
pub struct QdStepper<'a> {
    core: Core<'a>,
    pub x: f64,
    k: u64,
    log_l: f64,
    phi: f64,
    growth: f64,
}

impl<'a> QdStepper<'a> {
    pub fn new(model: &'a DiffusionModel, phi0: f64, x0: f64, cfg: &SimConfig, path_index: u64, lambda: f64) -> Self {
        QdStepper {
            core: Core::new(model, cfg, path_index),
            x: x0,
            k: 0,
            log_l: 0.0,
            phi: phi0,
            growth: (lambda * cfg.dt).exp(),
        }
    }

    #[inline]
    pub fn step(&mut self) -> Result<(), StepError> {
        let c = &mut self.core;
        let (mu0, sigma, rho) = c.coeffs(self.x);
        let db = c.noise.normal() * c.sqdt;
        let dl = rho * db - 0.5 * rho * rho * c.dt;
        self.log_l += dl;
        self.x = c.project(self.x + mu0 * c.dt + sigma * db);
        self.k += 1;
        // Phi = e^{lambda t} L (phi0 + int e^{-lambda s} / L ds) advanced one
        // step with the trapezoid rule, written in the ratio L_{k+1} / L_k.
        let r = dl.exp();
        self.phi = self.growth * r * self.phi + (self.growth - 1.0) * 0.5 * (r + 1.0);
        if !self.x.is_finite() || !self.log_l.is_finite() || !self.phi.is_finite() {
            return Err(StepError);
        }
        Ok(())
    }

    pub fn t(&self) -> f64 {
        self.k as f64 * self.core.dt
    }

    pub fn log_phi(&self) -> f64 {
        self.phi.ln()
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn likelihood(&self) -> f64 {
        self.log_l.exp()
    }

    pub fn rho2(&self) -> f64 {
        let r = self.core.coeffs(self.x).2;
        r * r
    }
}

/// The decoupled time-changed pair.
pub struct HatStepper<'a> {
    core: Core<'a>,
    pub x: f64,
    log_phi: f64,
}

impl<'a> HatStepper<'a> {
    pub fn new(model: &'a DiffusionModel, phi0: f64, x0: f64, cfg: &SimConfig, path_index: u64) -> Self {
        HatStepper {
            core: Core::new(model, cfg, path_index),
            x: x0,
            log_phi: phi0.ln(),
        }
    }

    #[inline]
    pub fn step(&mut self) -> Result<(), StepError> {
        let c = &mut self.core;
        let (mu0, sigma, rho) = c.coeffs(self.x);
        let db = c.noise.normal() * c.sqdt;
        self.log_phi += db - 0.5 * c.dt;
        self.x = c.project(self.x + mu0 / (rho * rho) * c.dt + sigma / rho * db);
        if !self.x.is_finite() || self.log_phi.is_nan() {
            return Err(StepError);
        }
        Ok(())
    }

    pub fn phi(&self) -> f64 {
        self.log_phi.exp()
    }

    pub fn log_phi(&self) -> f64 {
        self.log_phi
    }

    /// `rho^2` of the original model at the current point.
    pub fn rho2(&self) -> f64 {
        let r = self.core.coeffs(self.x).2;
        r * r
    }
}
