//! Truncated Taylor series ("jets") in one variable.
//!
//! A jet of order `n` at a point `x0` stores the normalised coefficients
//! `c_k = f^(k)(x0) / k!` for `k = 0..=n`. Arithmetic on jets is exact up to
//! rounding, so any coefficient built from the expression grammar gets its
//! derivatives of every order without finite differences.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Highest derivative order a jet can carry.
pub const MAX_ORDER: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    c: [f64; MAX_ORDER + 1],
    n: usize,
}

impl Jet {
    pub fn constant(v: f64, order: usize) -> Self {
        let mut c = [0.0; MAX_ORDER + 1];
        c[0] = v;
        Jet {
            c,
            n: order.min(MAX_ORDER),
        }
    }

    /// The identity function expanded at `x0`.
    pub fn variable(x0: f64, order: usize) -> Self {
        let mut j = Jet::constant(x0, order);
        if j.n >= 1 {
            j.c[1] = 1.0;
        }
        j
    }

    /// Builds a jet from derivative values `f(x0), f'(x0), f''(x0), ...`.
    pub fn from_derivatives(d: &[f64]) -> Self {
        assert!(!d.is_empty() && d.len() <= MAX_ORDER + 1);
        let mut c = [0.0; MAX_ORDER + 1];
        let mut fact = 1.0;
        for (k, v) in d.iter().enumerate() {
            if k > 0 {
                fact *= k as f64;
            }
            c[k] = v / fact;
        }
        Jet { c, n: d.len() - 1 }
    }

    pub fn from_coeffs(coeffs: &[f64]) -> Self {
        assert!(!coeffs.is_empty() && coeffs.len() <= MAX_ORDER + 1);
        let mut c = [0.0; MAX_ORDER + 1];
        c[..coeffs.len()].copy_from_slice(coeffs);
        Jet { c, n: coeffs.len() - 1 }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coeff(&self, k: usize) -> f64 {
        if k <= self.n {
            self.c[k]
        } else {
            0.0
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c[..=self.n]
    }

    /// `f^(k)(x0)`; zero beyond the carried order is *not* implied, so this
    /// panics when `k` exceeds the order.
    pub fn derivative(&self, k: usize) -> f64 {
        assert!(k <= self.n, "derivative {k} beyond jet order {}", self.n);
        let mut fact = 1.0;
        for i in 2..=k {
            fact *= i as f64;
        }
        self.c[k] * fact
    }

    pub fn truncate(mut self, order: usize) -> Self {
        let n = order.min(self.n);
        for k in n + 1..=self.n {
            self.c[k] = 0.0;
        }
        self.n = n;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs().iter().all(|v| v.is_finite())
    }

    /// Jet of the derivative; one order is lost.
    pub fn shift(&self) -> Self {
        let n = self.n.saturating_sub(1);
        let mut c = [0.0; MAX_ORDER + 1];
        for k in 0..self.n {
            c[k] = (k + 1) as f64 * self.c[k + 1];
        }
        Jet { c, n }
    }

    /// Jet of an antiderivative with value `c0` at the expansion point.
    pub fn integrate(&self, c0: f64) -> Self {
        let n = (self.n + 1).min(MAX_ORDER);
        let mut c = [0.0; MAX_ORDER + 1];
        c[0] = c0;
        for k in 1..=n {
            c[k] = self.c[k - 1] / k as f64;
        }
        Jet { c, n }
    }

    fn zip(&self, o: &Jet) -> (usize, [f64; MAX_ORDER + 1]) {
        (self.n.min(o.n), [0.0; MAX_ORDER + 1])
    }

    pub fn recip(&self) -> Self {
        Jet::constant(1.0, self.n) / *self
    }

    pub fn exp(&self) -> Self {
        let n = self.n;
        let mut e = [0.0; MAX_ORDER + 1];
        e[0] = self.c[0].exp();
        for k in 1..=n {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * self.c[j] * e[k - j];
            }
            e[k] = s / k as f64;
        }
        Jet { c: e, n }
    }

    pub fn ln(&self) -> Self {
        let n = self.n;
        let a0 = self.c[0];
        let mut l = [0.0; MAX_ORDER + 1];
        l[0] = a0.ln();
        for k in 1..=n {
            let mut s = 0.0;
            for j in 1..k {
                s += j as f64 * l[j] * self.c[k - j];
            }
            l[k] = (self.c[k] - s / k as f64) / a0;
        }
        Jet { c: l, n }
    }

    pub fn sqrt(&self) -> Self {
        let n = self.n;
        let mut s = [0.0; MAX_ORDER + 1];
        s[0] = self.c[0].sqrt();
        for k in 1..=n {
            let mut acc = 0.0;
            for j in 1..k {
                acc += s[j] * s[k - j];
            }
            s[k] = (self.c[k] - acc) / (2.0 * s[0]);
        }
        Jet { c: s, n }
    }

    /// tanh through the ODE t' = (1 - t^2) a'.
    pub fn tanh(&self) -> Self {
        let n = self.n;
        let mut t = [0.0; MAX_ORDER + 1];
        let mut w = [0.0; MAX_ORDER + 1];
        t[0] = self.c[0].tanh();
        w[0] = 1.0 - t[0] * t[0];
        for k in 1..=n {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * self.c[j] * w[k - j];
            }
            t[k] = s / k as f64;
            let mut sq = 0.0;
            for i in 0..=k {
                sq += t[i] * t[k - i];
            }
            w[k] = -sq;
        }
        Jet { c: t, n }
    }

    pub fn powi(&self, p: u32) -> Self {
        let mut r = Jet::constant(1.0, self.n);
        for _ in 0..p {
            r = r * *self;
        }
        r
    }

    pub fn scale(mut self, s: f64) -> Self {
        for k in 0..=self.n {
            self.c[k] *= s;
        }
        self
    }

    /// Evaluates the series `sum c_k d^k` where `d` is a jet with zero value,
    /// i.e. composes `self` (expanded at x0) with `x0 + d(t)`.
    pub fn compose(&self, inner: &Jet) -> Self {
        let mut d = *inner;
        d.c[0] = 0.0;
        let n = self.n.min(inner.n);
        let d = d.truncate(n);
        let mut r = Jet::constant(self.c[self.n.min(n)], n);
        for k in (0..self.n.min(n)).rev() {
            r = r * d + self.c[k];
        }
        r
    }

    /// Series reversion: given `self = s(x0 + h)` with nonzero slope, returns
    /// the jet of `h(t)` such that `s(x0 + h(t)) = s(x0) + t`.
    pub fn revert(&self) -> Self {
        let n = self.n;
        let slope = self.c[1];
        let t = Jet::variable(0.0, n);
        let mut h = t.scale(1.0 / slope);
        for _ in 1..n {
            let mut e = self.compose(&h);
            e.c[0] -= self.c[0];
            let r = e - t;
            h = h - r.scale(1.0 / slope);
        }
        h
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let (n, mut c) = self.zip(&o);
        for k in 0..=n {
            c[k] = self.c[k] + o.c[k];
        }
        Jet { c, n }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        let (n, mut c) = self.zip(&o);
        for k in 0..=n {
            c[k] = self.c[k] - o.c[k];
        }
        Jet { c, n }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let (n, mut c) = self.zip(&o);
        for k in 0..=n {
            let mut s = 0.0;
            for j in 0..=k {
                s += self.c[j] * o.c[k - j];
            }
            c[k] = s;
        }
        Jet { c, n }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let (n, mut c) = self.zip(&o);
        let b0 = o.c[0];
        for k in 0..=n {
            let mut s = self.c[k];
            for j in 1..=k {
                s -= o.c[j] * c[k - j];
            }
            c[k] = s / b0;
        }
        Jet { c, n }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, v: f64) -> Jet {
        self.c[0] += v;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, v: f64) -> Jet {
        self.c[0] -= v;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, v: f64) -> Jet {
        self.scale(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn exp_of_variable_has_factorial_coefficients() {
        let e = Jet::variable(0.3, 8).exp();
        for k in 0..=8 {
            assert!(close(e.derivative(k), 0.3f64.exp(), 1e-14));
        }
    }

    #[test]
    fn ln_inverts_exp() {
        let x = Jet::variable(0.7, 10);
        let r = x.exp().ln();
        assert!(close(r.value(), 0.7, 1e-15));
        assert!(close(r.derivative(1), 1.0, 1e-14));
        for k in 2..=10 {
            assert!(r.derivative(k).abs() < 1e-9, "k={k} {}", r.derivative(k));
        }
    }

    #[test]
    fn tanh_derivatives_match_closed_forms() {
        let x0 = 0.4f64;
        let t = Jet::variable(x0, 3).tanh();
        let th = x0.tanh();
        let s2 = 1.0 - th * th;
        assert!(close(t.derivative(1), s2, 1e-14));
        assert!(close(t.derivative(2), -2.0 * th * s2, 1e-14));
        assert!(close(t.derivative(3), -2.0 * s2 * s2 + 4.0 * th * th * s2, 1e-13));
    }

    #[test]
    fn sqrt_squared_is_identity() {
        let a = Jet::variable(2.0, 6).exp() + 1.0;
        let s = a.sqrt();
        let back = s * s;
        for k in 0..=6 {
            assert!(close(back.coeff(k), a.coeff(k), 1e-13));
        }
    }

    #[test]
    fn division_by_self_is_one() {
        let a = Jet::variable(1.5, 7).tanh() + 2.0;
        let q = a / a;
        assert!(close(q.value(), 1.0, 1e-15));
        for k in 1..=7 {
            assert!(q.coeff(k).abs() < 1e-14);
        }
    }

    #[test]
    fn compose_and_revert_round_trip() {
        // s(x) = x + x^3/3 around 0.5.
        let x = Jet::variable(0.5, 6);
        let s = x + x.powi(3) * (1.0 / 3.0);
        let mut s_shift = s;
        s_shift.c[0] = s.value();
        let h = s_shift.revert();
        let back = s_shift.compose(&h);
        assert!(close(back.value(), s.value(), 1e-15));
        assert!(close(back.coeff(1), 1.0, 1e-13));
        for k in 2..=6 {
            assert!(back.coeff(k).abs() < 1e-12, "k={k} {}", back.coeff(k));
        }
    }

    #[test]
    fn shift_and_integrate_are_inverse() {
        let a = Jet::variable(-0.2, 9).exp().tanh();
        let b = a.shift().integrate(a.value());
        for k in 0..=9 {
            assert!(close(b.coeff(k), a.coeff(k), 1e-14));
        }
    }
}
