//! Diffusion models: coefficients, derived quantities and transforms.
//!
//! Under the null hypothesis (or before the change) the observed process
//! satisfies `dX = mu0(X) dt + sigma(X) dB`; under the alternative the drift
//! is `mu1`. Everything downstream is expressed through
//!
//! * `rho = (mu1 - mu0) / sigma`, the signal-to-noise ratio,
//! * `q = rho / sigma` and its antiderivative `F(x) = int_0^x q`,
//! * `G1 = (sigma^2 q' + (mu0 + mu1) q) / 2`,
//! * the canonical pair `f = G1 - lambda`, `g = lambda e^{-F}`.
//!
//! The canonical drift is `a(u, x) = f(x) - e^u g(x)`. Re-deriving `dU` by
//! Itô's formula for `U = F(X) - log Phi` gives this minus sign, and with it
//! `a(-log kappa, .) == 0` is exactly the trap equation.

pub mod catalog;
pub mod coef;
pub mod table;
mod transform;

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::jet::Jet;
use crate::quad::adaptive_simpson;
use crate::Mode;

pub use catalog::{
    builtin_names, builtin_spec, catalog, resolve_model, ModelCatalogEntry, ModelSpec, Traits, CATALOG_ENV,
};
pub use coef::{expr_coef, Coef, Coefficient, Derived, ExprCoef, FiniteDiff};
use table::{Hermite, Lattice};

/// Number of nodes of the dense tables used by the simulators and solvers.
pub const TABLE_NODES: usize = 8193;
/// Number of points used when sampling model invariants.
pub const SAMPLE_POINTS: usize = 1001;

/// Cost and rate parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub lambda: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_c: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            lambda: 1.0,
            cost_a: 1.0,
            cost_b: 1.0,
            cost_c: 1.0,
        }
    }
}

impl Params {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("cost_a", self.cost_a),
            ("cost_b", self.cost_b),
            ("cost_c", self.cost_c),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Dense tables of the quantities needed on every simulation step.
#[derive(Debug)]
pub struct Tables {
    pub lat: Lattice,
    pub mu0: Hermite,
    pub sigma: Hermite,
    pub rho: Hermite,
    pub g1: Hermite,
    /// `F` with derivative `q`.
    pub f: Hermite,
}

/// One-dimensional diffusion model with its cost parameters.
#[derive(Clone, Debug)]
pub struct DiffusionModel {
    pub name: String,
    mu0: Coef,
    mu1: Coef,
    sigma: Coef,
    pub params: Params,
    x_domain: (f64, f64),
    spec: Option<ModelSpec>,
    tables: Arc<OnceLock<Tables>>,
}

impl DiffusionModel {
    /// Builds and validates a model: `sigma > 0`, `mu1 - mu0` one-signed and
    /// nonzero, and all derivative evaluations finite on `x_domain`.
    pub fn new(
        name: impl Into<String>,
        mu0: Coef,
        mu1: Coef,
        sigma: Coef,
        params: Params,
        x_domain: (f64, f64),
    ) -> Result<Self> {
        let m = Self::new_degenerate(name, mu0, mu1, sigma, params, x_domain)?;
        m.check_signal()?;
        Ok(m)
    }

    /// Like [`DiffusionModel::new`] but allows `mu1 == mu0` somewhere (the
    /// no-information limit). Solvers and the trap analyser reject such
    /// models where they need a strict signal.
    pub fn new_degenerate(
        name: impl Into<String>,
        mu0: Coef,
        mu1: Coef,
        sigma: Coef,
        params: Params,
        x_domain: (f64, f64),
    ) -> Result<Self> {
        params.validate()?;
        let (lo, hi) = x_domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(config(format!("bad x_domain [{lo}, {hi}]")));
        }
        if !(lo <= 0.0 && 0.0 <= hi) {
            return Err(config(format!(
                "x_domain [{lo}, {hi}] must contain 0 (F is anchored there)"
            )));
        }
        let m = DiffusionModel {
            name: name.into(),
            mu0,
            mu1,
            sigma,
            params,
            x_domain,
            spec: None,
            tables: Arc::new(OnceLock::new()),
        };
        m.check_regular()?;
        Ok(m)
    }

    pub(crate) fn with_spec(mut self, spec: ModelSpec) -> Self {
        self.spec = Some(spec);
        self
    }

    /// The resolved definition the model was built from, when there is one.
    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn x_domain(&self) -> (f64, f64) {
        self.x_domain
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        let (lo, hi) = self.x_domain;
        (0..SAMPLE_POINTS).map(move |i| {
            if i + 1 == SAMPLE_POINTS {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (SAMPLE_POINTS - 1) as f64
            }
        })
    }

    fn check_regular(&self) -> Result<()> {
        let order = 2.min(self.max_order());
        for x in self.samples() {
            let s = self.sigma.jet(x, order)?;
            if !(s.value() > 0.0) {
                return Err(Error::ModelRejected(format!(
                    "sigma({x}) = {} is not positive",
                    s.value()
                )));
            }
            let a = self.mu0.jet(x, order)?;
            let b = self.mu1.jet(x, order)?;
            if !(s.is_finite() && a.is_finite() && b.is_finite()) {
                return Err(Error::ModelRejected(format!(
                    "non-finite coefficient derivatives at x = {x}"
                )));
            }
        }
        Ok(())
    }

    fn check_signal(&self) -> Result<()> {
        let mut sign = 0.0;
        for x in self.samples() {
            let d = self.mu1.value(x) - self.mu0.value(x);
            if d == 0.0 || !d.is_finite() {
                return Err(Error::ModelRejected(format!("mu1 - mu0 vanishes at x = {x}")));
            }
            if sign == 0.0 {
                sign = d.signum();
            } else if d.signum() != sign {
                return Err(Error::ModelRejected(format!(
                    "mu1 - mu0 changes sign on the domain (at x = {x})"
                )));
            }
        }
        Ok(())
    }

    /// Highest derivative order available from all three coefficients.
    pub fn max_order(&self) -> usize {
        self.mu0
            .max_order()
            .min(self.mu1.max_order())
            .min(self.sigma.max_order())
    }

    pub fn check_x(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.x_domain;
        if x >= lo && x <= hi {
            Ok(())
        } else {
            Err(Error::Range {
                what: "x",
                value: x,
                range: format!("[{lo}, {hi}]"),
            })
        }
    }

    pub fn mu0_jet(&self, x: f64, order: usize) -> Result<Jet> {
        self.mu0.jet(x, order)
    }

    pub fn mu1_jet(&self, x: f64, order: usize) -> Result<Jet> {
        self.mu1.jet(x, order)
    }

    pub fn sigma_jet(&self, x: f64, order: usize) -> Result<Jet> {
        self.sigma.jet(x, order)
    }

    pub fn mu0(&self, x: f64) -> f64 {
        self.mu0.value(x)
    }

    pub fn mu1(&self, x: f64) -> f64 {
        self.mu1.value(x)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        self.sigma.value(x)
    }

    pub(crate) fn coefs(&self) -> (Coef, Coef, Coef) {
        (self.mu0.clone(), self.mu1.clone(), self.sigma.clone())
    }

    /// Signal-to-noise ratio `(mu1 - mu0) / sigma`.
    pub fn rho(&self, x: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.rho_unchecked(x))
    }

    pub(crate) fn rho_unchecked(&self, x: f64) -> f64 {
        (self.mu1.value(x) - self.mu0.value(x)) / self.sigma.value(x)
    }

    pub fn rho_jet(&self, x: f64, order: usize) -> Result<Jet> {
        Ok((self.mu1.jet(x, order)? - self.mu0.jet(x, order)?) / self.sigma.jet(x, order)?)
    }

    /// `q = rho / sigma = (mu1 - mu0) / sigma^2`.
    pub fn q_jet(&self, x: f64, order: usize) -> Result<Jet> {
        let s = self.sigma.jet(x, order)?;
        Ok((self.mu1.jet(x, order)? - self.mu0.jet(x, order)?) / (s * s))
    }

    fn q_value(&self, x: f64) -> f64 {
        let s = self.sigma.value(x);
        (self.mu1.value(x) - self.mu0.value(x)) / (s * s)
    }

    /// `F(x) = int_0^x rho/sigma` by adaptive Simpson quadrature (absolute
    /// tolerance 1e-10), started from the nearest table node.
    pub fn f_integral(&self, x: f64) -> Result<f64> {
        self.check_x(x)?;
        if x == 0.0 {
            return Ok(0.0);
        }
        let t = self.tables();
        let (k, s) = t.lat.locate(x);
        let k = if s > 0.5 { k + 1 } else { k };
        let xk = t.lat.node(k);
        let q = |y: f64| self.q_value(y);
        Ok(t.f.v[k] + adaptive_simpson(&q, xk, x, 1e-12))
    }

    /// Jet of `F` at `x`; the value comes from quadrature, higher
    /// coefficients from the exact jet of `q`.
    pub fn f_jet(&self, x: f64, order: usize) -> Result<Jet> {
        let q = self.q_jet(x, order.saturating_sub(1))?;
        Ok(q.integrate(self.f_integral(x)?).truncate(order))
    }

    /// `G1 = (sigma^2 q' + (mu0 + mu1) q) / 2`; needs coefficient order
    /// `order + 1`.
    pub fn g1_jet(&self, x: f64, order: usize) -> Result<Jet> {
        let n = order + 1;
        let s = self.sigma.jet(x, n)?;
        let m0 = self.mu0.jet(x, n)?;
        let m1 = self.mu1.jet(x, n)?;
        let q = (m1 - m0) / (s * s);
        let qp = q.shift();
        Ok(((s * s).truncate(order) * qp + ((m0 + m1) * q).truncate(order)) * 0.5)
    }

    /// Jets of `f = G1 - lambda` and `g = lambda e^{-F}`.
    pub fn canonical_jets(&self, x: f64, order: usize, lambda: f64) -> Result<(Jet, Jet)> {
        let f = self.g1_jet(x, order)? - lambda;
        let g = (-self.f_jet(x, order)?).exp() * lambda;
        Ok((f, g))
    }

    /// `(f(x), g(x))` with the model's own `lambda`.
    pub fn canonical_coefficients(&self, x: f64) -> Result<(f64, f64)> {
        self.check_x(x)?;
        let (f, g) = self.canonical_jets(x, 0, self.params.lambda)?;
        Ok((f.value(), g.value()))
    }

    /// `a(u, x) = f(x) - e^u g(x)`.
    pub fn canonical_drift(&self, u: f64, x: f64) -> Result<f64> {
        let (f, g) = self.canonical_coefficients(x)?;
        Ok(f - u.exp() * g)
    }

    /// Dense Hermite tables (built once, shared by clones).
    pub fn tables(&self) -> &Tables {
        self.tables.get_or_init(|| self.build_tables())
    }

    fn build_tables(&self) -> Tables {
        let (lo, hi) = self.x_domain;
        let lat = Lattice::new(lo, hi, TABLE_NODES);
        let n = lat.n;
        let mut mu0 = Hermite {
            v: vec![0.0; n],
            d: vec![0.0; n],
        };
        let mut sigma = mu0.clone();
        let mut rho = mu0.clone();
        let mut g1 = mu0.clone();
        let mut f = mu0.clone();
        let order1 = 1.min(self.max_order());
        for k in 0..n {
            let x = lat.node(k);
            let get = |r: Result<Jet>| r.unwrap_or_else(|_| Jet::constant(f64::NAN, 1));
            let m = get(self.mu0.jet(x, order1));
            let s = get(self.sigma.jet(x, order1));
            let r = get(self.rho_jet(x, order1));
            let q = get(self.q_jet(x, 0));
            mu0.v[k] = m.value();
            mu0.d[k] = m.coeff(1);
            sigma.v[k] = s.value();
            sigma.d[k] = s.coeff(1);
            rho.v[k] = r.value();
            rho.d[k] = r.coeff(1);
            f.d[k] = q.value();
            match self.g1_jet(x, 1) {
                Ok(j) => {
                    g1.v[k] = j.value();
                    g1.d[k] = j.coeff(1);
                }
                Err(_) => {
                    let j = get(self.g1_jet(x, 0));
                    g1.v[k] = j.value();
                    g1.d[k] = f64::NAN;
                }
            }
        }
        // F by cumulative Simpson outward from the node nearest 0.
        let qf = |y: f64| self.q_value(y);
        let (k0, t0) = lat.locate(0.0);
        let k0 = if t0 > 0.5 { k0 + 1 } else { k0 };
        f.v[k0] = adaptive_simpson(&qf, 0.0, lat.node(k0), 1e-14);
        for k in k0 + 1..n {
            f.v[k] = f.v[k - 1] + adaptive_simpson(&qf, lat.node(k - 1), lat.node(k), 1e-14);
        }
        for k in (0..k0).rev() {
            f.v[k] = f.v[k + 1] + adaptive_simpson(&qf, lat.node(k + 1), lat.node(k), 1e-14);
        }
        if g1.d.iter().any(|v| v.is_nan()) {
            // Coefficients with only two derivatives: slope of G1 by differences.
            for k in 0..n {
                let (a, b) = if k == 0 {
                    (0, 1)
                } else if k + 1 == n {
                    (n - 2, n - 1)
                } else {
                    (k - 1, k + 1)
                };
                g1.d[k] = (g1.v[b] - g1.v[a]) / (lat.node(b) - lat.node(a));
            }
        }
        Tables {
            lat,
            mu0,
            sigma,
            rho,
            g1,
            f,
        }
    }

    /// Sign of `mu1 - mu0` (the constant sign of `rho`).
    pub fn signal_sign(&self) -> f64 {
        let x = 0.5 * (self.x_domain.0 + self.x_domain.1);
        (self.mu1.value(x) - self.mu0.value(x)).signum()
    }

    /// Largest and smallest `|rho|` over the sample points.
    pub fn rho_abs_range(&self) -> (f64, f64) {
        self.samples()
            .map(|x| self.rho_unchecked(x).abs())
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }

    /// Reference level of the posterior ratio for a mode: `b/a` for testing,
    /// `lambda/c` for detection.
    pub fn reference_phi(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Testing | Mode::TestingTimeChanged => self.params.cost_b / self.params.cost_a,
            Mode::Detection => self.params.lambda / self.params.cost_c,
        }
    }
}

/// `phi = pi / (1 - pi)`.
pub fn phi_from_pi(pi: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&pi) {
        return Err(Error::Range {
            what: "pi",
            value: pi,
            range: "[0, 1)".into(),
        });
    }
    Ok(pi / (1.0 - pi))
}

/// `pi = phi / (1 + phi)`.
pub fn pi_from_phi(phi: f64) -> Result<f64> {
    if !(phi >= 0.0 && phi.is_finite()) {
        return Err(Error::Range {
            what: "phi",
            value: phi,
            range: "[0, inf)".into(),
        });
    }
    Ok(phi / (1.0 + phi))
}

/// Value of the original problem from the reduced one: `(1 - pi) vhat` for
/// testing, `(1 - pi)(1 + c vhat)` for detection.
pub fn full_value(mode: Mode, pi: f64, vhat: f64, model: &DiffusionModel) -> Result<f64> {
    if !(0.0..1.0).contains(&pi) {
        return Err(Error::Range {
            what: "pi",
            value: pi,
            range: "[0, 1)".into(),
        });
    }
    Ok(match mode {
        Mode::Testing | Mode::TestingTimeChanged => (1.0 - pi) * vhat,
        Mode::Detection => (1.0 - pi) * (1.0 + model.params.cost_c * vhat),
    })
}
