//! Closed-form coefficient grammar.
//!
//! Coefficients are written as compositions of polynomials, exponentials,
//! `tanh`, `sqrt` and `ln`. In JSON every node is externally tagged:
//!
//! ```json
//! {"add": [{"const": 1.0}, {"mul": [{"const": 0.5}, {"tanh": "x"}]}]}
//! ```
//!
//! Named parameters (`{"param": "lambda"}`) are substituted when a model is
//! built, so one definition can serve several parameter sets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::jet::Jet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Const(f64),
    X,
    Param(String),
    /// `sum_k c[k] * x^k`
    Poly(Vec<f64>),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Tanh(Box<Expr>),
    Sqrt(Box<Expr>),
    Ln(Box<Expr>),
}

impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn x() -> Expr {
        Expr::X
    }

    pub fn p(name: &str) -> Expr {
        Expr::Param(name.to_string())
    }

    pub fn add(items: Vec<Expr>) -> Expr {
        Expr::Add(items)
    }

    pub fn mul(items: Vec<Expr>) -> Expr {
        Expr::Mul(items)
    }

    pub fn exp(self) -> Expr {
        Expr::Exp(Box::new(self))
    }

    pub fn tanh(self) -> Expr {
        Expr::Tanh(Box::new(self))
    }

    pub fn sqrt(self) -> Expr {
        Expr::Sqrt(Box::new(self))
    }

    pub fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }

    /// Replaces every `param` node by its value. Unknown names are an error.
    pub fn bind(&self, params: &BTreeMap<String, f64>) -> Result<Expr> {
        let rec = |e: &Expr| e.bind(params);
        let all = |v: &[Expr]| v.iter().map(|e| e.bind(params)).collect::<Result<Vec<_>>>();
        Ok(match self {
            Expr::Param(name) => Expr::Const(
                *params
                    .get(name)
                    .ok_or_else(|| config(format!("unknown parameter '{name}'")))?,
            ),
            Expr::Const(v) => Expr::Const(*v),
            Expr::X => Expr::X,
            Expr::Poly(c) => Expr::Poly(c.clone()),
            Expr::Add(v) => Expr::Add(all(v)?),
            Expr::Mul(v) => Expr::Mul(all(v)?),
            Expr::Div(a, b) => Expr::Div(Box::new(rec(a)?), Box::new(rec(b)?)),
            Expr::Neg(a) => Expr::Neg(Box::new(rec(a)?)),
            Expr::Exp(a) => Expr::Exp(Box::new(rec(a)?)),
            Expr::Tanh(a) => Expr::Tanh(Box::new(rec(a)?)),
            Expr::Sqrt(a) => Expr::Sqrt(Box::new(rec(a)?)),
            Expr::Ln(a) => Expr::Ln(Box::new(rec(a)?)),
        })
    }

    /// Structural checks that do not depend on the evaluation point.
    pub fn validate(&self) -> Result<()> {
        match self {
            Expr::Param(name) => Err(config(format!("unbound parameter '{name}'"))),
            Expr::Const(v) if !v.is_finite() => Err(config("non-finite constant")),
            Expr::Poly(c) if c.is_empty() => Err(config("empty polynomial")),
            Expr::Poly(c) if c.iter().any(|v| !v.is_finite()) => Err(config("non-finite polynomial coefficient")),
            Expr::Add(v) | Expr::Mul(v) if v.is_empty() => Err(config("empty add/mul list")),
            Expr::Add(v) | Expr::Mul(v) => v.iter().try_for_each(Expr::validate),
            Expr::Div(a, b) => {
                a.validate()?;
                b.validate()
            }
            Expr::Neg(a) | Expr::Exp(a) | Expr::Tanh(a) | Expr::Sqrt(a) | Expr::Ln(a) => a.validate(),
            _ => Ok(()),
        }
    }

    pub fn jet(&self, x0: f64, order: usize) -> Jet {
        match self {
            Expr::Const(v) => Jet::constant(*v, order),
            Expr::X => Jet::variable(x0, order),
            Expr::Param(_) => Jet::constant(f64::NAN, order),
            Expr::Poly(c) => {
                let x = Jet::variable(x0, order);
                let mut r = Jet::constant(*c.last().unwrap_or(&0.0), order);
                for k in (0..c.len().saturating_sub(1)).rev() {
                    r = r * x + c[k];
                }
                r
            }
            Expr::Add(v) => v
                .iter()
                .fold(Jet::constant(0.0, order), |acc, e| acc + e.jet(x0, order)),
            Expr::Mul(v) => v
                .iter()
                .fold(Jet::constant(1.0, order), |acc, e| acc * e.jet(x0, order)),
            Expr::Div(a, b) => a.jet(x0, order) / b.jet(x0, order),
            Expr::Neg(a) => -a.jet(x0, order),
            Expr::Exp(a) => a.jet(x0, order).exp(),
            Expr::Tanh(a) => a.jet(x0, order).tanh(),
            Expr::Sqrt(a) => a.jet(x0, order).sqrt(),
            Expr::Ln(a) => a.jet(x0, order).ln(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.jet(x, 0).value()
    }
}
