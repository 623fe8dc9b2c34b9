//! Model transforms: mirror image, additive-functional time change and the
//! scale-function change of coordinates.

use std::sync::Arc;

use super::coef::{Coef, Derived};
use super::table::{Hermite, Lattice};
use super::{DiffusionModel, TABLE_NODES};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::quad::adaptive_simpson;

fn mirrored(c: Coef, sign: f64, label: &str) -> Coef {
    let max = c.max_order();
    Arc::new(Derived::new(label, max, move |x, n| {
        let j = c.jet(-x, n)?;
        let coeffs: Vec<f64> = j
            .coeffs()
            .iter()
            .enumerate()
            .map(|(k, v)| if k % 2 == 0 { sign * v } else { -sign * v })
            .collect();
        Ok(Jet::from_coeffs(&coeffs))
    }))
}

impl DiffusionModel {
    /// Mirror image `x -> -x`: `mu_i(x) -> -mu_i(-x)`, `sigma(x) -> sigma(-x)`.
    /// The mirrored observation is `-X`, so the direction of `rho` and the
    /// order of the drifts flip together.
    pub fn mirror(&self) -> Result<DiffusionModel> {
        let (mu0, mu1, sigma) = self.coefs();
        let (lo, hi) = self.x_domain;
        let mut m = DiffusionModel::new_degenerate(
            format!("{}-mirror", self.name),
            mirrored(mu0, -1.0, "mirror mu0"),
            mirrored(mu1, -1.0, "mirror mu1"),
            mirrored(sigma, 1.0, "mirror sigma"),
            self.params,
            (-hi, -lo),
        )?;
        if let Some(spec) = &self.spec {
            let mut s = spec.clone();
            s.mirror = !s.mirror;
            s.name = Some(m.name.clone());
            m = m.with_spec(s);
        }
        Ok(m)
    }

    /// Coefficients of the time-changed observation: drift `mu0/rho^2`,
    /// volatility `sigma/|rho|`, and `mu1` chosen so that the new signal-to-
    /// noise ratio is `sign(rho)` (unit volatility of the time-changed ratio
    /// process). `F` is unchanged by construction.
    pub fn time_changed(&self) -> Result<DiffusionModel> {
        let (lo, hi) = self.rho_abs_range();
        if lo < 1e-8 {
            return Err(Error::ModelRejected(format!(
                "|rho| falls to {lo:.3e} (max {hi:.3e}); the time change needs rho bounded away from 0"
            )));
        }
        let (mu0, mu1, sigma) = self.coefs();
        let sign = self.signal_sign();
        let max = self.max_order();
        let rho = {
            let (mu0, mu1, sigma) = (mu0.clone(), mu1.clone(), sigma.clone());
            move |x: f64, n: usize| -> Result<Jet> { Ok((mu1.jet(x, n)? - mu0.jet(x, n)?) / sigma.jet(x, n)?) }
        };
        let rho = Arc::new(rho);
        let hat_mu0 = {
            let (mu0, rho) = (mu0.clone(), rho.clone());
            Derived::new("mu0/rho^2", max, move |x, n| {
                let r = rho(x, n)?;
                Ok(mu0.jet(x, n)? / (r * r))
            })
        };
        let hat_mu1 = {
            let (mu0, sigma, rho) = (mu0.clone(), sigma.clone(), rho.clone());
            Derived::new("mu0/rho^2 + sigma/rho", max, move |x, n| {
                let r = rho(x, n)?;
                Ok(mu0.jet(x, n)? / (r * r) + sigma.jet(x, n)? / r)
            })
        };
        let hat_sigma = {
            let (sigma, rho) = (sigma.clone(), rho.clone());
            Derived::new("sigma/|rho|", max, move |x, n| {
                Ok(sigma.jet(x, n)? / (rho(x, n)? * sign))
            })
        };
        DiffusionModel::new(
            format!("{}-timechanged", self.name),
            Arc::new(hat_mu0),
            Arc::new(hat_mu1),
            Arc::new(hat_sigma),
            self.params,
            self.x_domain,
        )
    }

    /// Model of `S(X)` where `S(x) = int_0^x exp(-int_0^y 2 mu0/sigma^2)` is
    /// the scale function. The new null drift is zero and `rho` is carried
    /// over pointwise: `rho~(S(x)) = rho(x)`.
    pub fn scale_transform(&self) -> Result<DiffusionModel> {
        let scale = Arc::new(ScaleMap::new(self)?);
        let (mu0, mu1, sigma) = self.coefs();
        let max = self.max_order();
        let zero = Derived::new("0", max, |_, n| Ok(Jet::constant(0.0, n)));
        let new_mu1 = {
            let (scale, mu0, mu1) = (scale.clone(), mu0.clone(), mu1.clone());
            Derived::new("(mu1-mu0) S' o S^-1", max, move |s, n| {
                let (x, sp, h) = scale.pullback(s, n)?;
                let v = (mu1.jet(x, n)? - mu0.jet(x, n)?) * sp;
                Ok(v.compose(&h))
            })
        };
        let new_sigma = {
            let (scale, sigma) = (scale.clone(), sigma.clone());
            Derived::new("sigma S' o S^-1", max, move |s, n| {
                let (x, sp, h) = scale.pullback(s, n)?;
                Ok((sigma.jet(x, n)? * sp).compose(&h))
            })
        };
        let (lo, hi) = self.x_domain;
        let domain = (scale.s_of(lo), scale.s_of(hi));
        DiffusionModel::new_degenerate(
            format!("{}-scale", self.name),
            Arc::new(zero),
            Arc::new(new_mu1),
            Arc::new(new_sigma),
            self.params,
            domain,
        )
    }
}

/// Tabulated scale function and its inverse.
struct ScaleMap {
    mu0: Coef,
    sigma: Coef,
    lat: Lattice,
    /// `I(x) = int_0^x 2 mu0/sigma^2` with derivative.
    i: Hermite,
    /// `S(x)` with derivative `e^{-I}`.
    s: Hermite,
}

impl ScaleMap {
    fn new(model: &DiffusionModel) -> Result<Self> {
        let (mu0, _, sigma) = model.coefs();
        let (lo, hi) = model.x_domain;
        let lat = Lattice::new(lo, hi, TABLE_NODES);
        let n = lat.n;
        let drift = |y: f64| {
            let s = sigma.value(y);
            2.0 * mu0.value(y) / (s * s)
        };
        let (k0, t0) = lat.locate(0.0);
        let k0 = if t0 > 0.5 { k0 + 1 } else { k0 };
        let mut iv = vec![0.0; n];
        iv[k0] = adaptive_simpson(&drift, 0.0, lat.node(k0), 1e-14);
        for k in k0 + 1..n {
            iv[k] = iv[k - 1] + adaptive_simpson(&drift, lat.node(k - 1), lat.node(k), 1e-14);
        }
        for k in (0..k0).rev() {
            iv[k] = iv[k + 1] + adaptive_simpson(&drift, lat.node(k + 1), lat.node(k), 1e-14);
        }
        let id: Vec<f64> = (0..n).map(|k| drift(lat.node(k))).collect();
        let i = Hermite { v: iv, d: id };
        let sp = |y: f64| (-i.eval(&lat, y)).exp();
        let mut sv = vec![0.0; n];
        sv[k0] = adaptive_simpson(&sp, 0.0, lat.node(k0), 1e-14);
        for k in k0 + 1..n {
            sv[k] = sv[k - 1] + adaptive_simpson(&sp, lat.node(k - 1), lat.node(k), 1e-14);
        }
        for k in (0..k0).rev() {
            sv[k] = sv[k + 1] + adaptive_simpson(&sp, lat.node(k + 1), lat.node(k), 1e-14);
        }
        let sd: Vec<f64> = (0..n).map(|k| (-i.v[k]).exp()).collect();
        if sv.iter().chain(sd.iter()).any(|v| !v.is_finite()) {
            return Err(Error::ModelRejected("scale function overflows on the domain".into()));
        }
        Ok(ScaleMap {
            mu0,
            sigma,
            lat,
            i,
            s: Hermite { v: sv, d: sd },
        })
    }

    fn s_of(&self, x: f64) -> f64 {
        self.s.eval(&self.lat, x)
    }

    /// `S^{-1}(s)` by bisection on the node values then Newton.
    fn inverse(&self, s: f64) -> f64 {
        let v = &self.s.v;
        let n = v.len();
        if s <= v[0] {
            return self.lat.node(0);
        }
        if s >= v[n - 1] {
            return self.lat.node(n - 1);
        }
        let k = v.partition_point(|&a| a <= s).saturating_sub(1).min(n - 2);
        let (mut a, mut b) = (self.lat.node(k), self.lat.node(k + 1));
        let mut x = a + (s - v[k]) / (v[k + 1] - v[k]) * (b - a);
        for _ in 0..60 {
            let r = self.s_of(x) - s;
            if r > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let d = self.s.eval_derivative(&self.lat, x);
            let mut nx = x - r / d;
            if !(nx > a && nx < b) {
                nx = 0.5 * (a + b);
            }
            if (nx - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                return nx;
            }
            x = nx;
        }
        x
    }

    /// Returns `x = S^{-1}(s)`, the jet of `S'` at `x`, and the jet of
    /// `h(t) = S^{-1}(s + t) - x`.
    fn pullback(&self, s: f64, n: usize) -> Result<(f64, Jet, Jet)> {
        let x = self.inverse(s);
        let sg = self.sigma.jet(x, n)?;
        let drift = self.mu0.jet(x, n)? * 2.0 / (sg * sg);
        let ijet = drift.integrate(self.i.eval(&self.lat, x));
        let spj = (-ijet).exp().truncate(n);
        let sjet = spj.integrate(self.s_of(x));
        let h = if n == 0 {
            Jet::constant(0.0, 0)
        } else {
            sjet.truncate(n).revert()
        };
        Ok((x, spj, h))
    }
}

impl Hermite {
    pub(crate) fn eval_derivative(&self, lat: &Lattice, x: f64) -> f64 {
        let (k, t) = lat.locate(x);
        let h = lat.h;
        let t2 = t * t;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        (d00 * self.v[k] + d01 * self.v[k + 1]) / h + d10 * self.d[k] + d11 * self.d[k + 1]
    }
}
