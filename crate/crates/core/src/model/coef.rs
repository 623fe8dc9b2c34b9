use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::{Jet, MAX_ORDER};

/// A real function of the observed state with derivatives.
pub trait Coefficient: Send + Sync + fmt::Debug {
    /// Taylor jet of the given order at `x`.
    fn jet(&self, x: f64, order: usize) -> Result<Jet>;

    /// Highest derivative order this coefficient can deliver.
    fn max_order(&self) -> usize {
        MAX_ORDER
    }

    fn value(&self, x: f64) -> f64 {
        self.jet(x, 0).map(|j| j.value()).unwrap_or(f64::NAN)
    }

    /// The closed form, when there is one.
    fn expr(&self) -> Option<&Expr> {
        None
    }
}

pub type Coef = Arc<dyn Coefficient>;

fn check_order(order: usize, available: usize) -> Result<()> {
    if order > available {
        Err(Error::Capability {
            requested: order,
            available,
        })
    } else {
        Ok(())
    }
}

/// Coefficient given by the closed-form grammar; derivatives are exact.
#[derive(Debug, Clone)]
pub struct ExprCoef(pub Expr);

impl Coefficient for ExprCoef {
    fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        check_order(order, MAX_ORDER)?;
        Ok(self.0.jet(x, order))
    }

    fn expr(&self) -> Option<&Expr> {
        Some(&self.0)
    }
}

pub fn expr_coef(e: Expr) -> Coef {
    Arc::new(ExprCoef(e))
}

/// Coefficient known only through point values. Derivatives come from
/// central differences with step `h = max(1, |x|) * eps^(1/3)` for the first
/// derivative (`eps^(1/4)` for the second); truncation error is `O(h^2)`.
/// Orders above two are refused.
pub struct FiniteDiff {
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    label: String,
}

impl FiniteDiff {
    pub fn new(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        FiniteDiff {
            f: Box::new(f),
            label: label.into(),
        }
    }
}

impl fmt::Debug for FiniteDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FiniteDiff({})", self.label)
    }
}

impl Coefficient for FiniteDiff {
    fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        check_order(order, 2)?;
        let f0 = (self.f)(x);
        let scale = x.abs().max(1.0);
        let mut d = vec![f0];
        if order >= 1 {
            let h = scale * f64::EPSILON.cbrt();
            d.push(((self.f)(x + h) - (self.f)(x - h)) / (2.0 * h));
        }
        if order >= 2 {
            let h = scale * f64::EPSILON.powf(0.25);
            d.push(((self.f)(x + h) - 2.0 * f0 + (self.f)(x - h)) / (h * h));
        }
        Ok(Jet::from_derivatives(&d))
    }

    fn max_order(&self) -> usize {
        2
    }
}

type JetFn = dyn Fn(f64, usize) -> Result<Jet> + Send + Sync;

/// Coefficient defined in terms of other coefficients (model transforms).
pub struct Derived {
    label: String,
    max_order: usize,
    f: Box<JetFn>,
}

impl Derived {
    pub fn new(
        label: impl Into<String>,
        max_order: usize,
        f: impl Fn(f64, usize) -> Result<Jet> + Send + Sync + 'static,
    ) -> Self {
        Derived {
            label: label.into(),
            max_order,
            f: Box::new(f),
        }
    }
}

impl fmt::Debug for Derived {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Derived({})", self.label)
    }
}

impl Coefficient for Derived {
    fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        check_order(order, self.max_order)?;
        (self.f)(x, order)
    }

    fn max_order(&self) -> usize {
        self.max_order
    }
}
