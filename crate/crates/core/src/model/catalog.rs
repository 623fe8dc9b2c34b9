//! Built-in models and the JSON model definition format.
//!
//! A model file is a JSON object:
//!
//! ```json
//! {
//!   "name": "my-model",
//!   "builtin": "mono-rho-tanh",
//!   "mu0": {"const": 0.0},
//!   "mu1": {"add": [{"const": 1.0}, {"mul": [{"const": 0.5}, {"tanh": "x"}]}]},
//!   "sigma": {"const": 1.0},
//!   "lambda": 1.0, "cost_a": 1.0, "cost_b": 1.0, "cost_c": 1.0,
//!   "x_domain": [-8.0, 8.0],
//!   "params": {"k": 0.5},
//!   "mirror": false
//! }
//! ```
//!
//! Every field is optional when `builtin` names a catalog entry; the given
//! fields override it. Expressions may refer to `lambda`, `cost_a`, `cost_b`,
//! `cost_c` and to any name in `params` through `{"param": "name"}`.
//! A catalog file (see [`CATALOG_ENV`]) holds `{"models": [ ...specs... ]}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coef::expr_coef;
use super::{DiffusionModel, Params};
use crate::error::{config, Result};
use crate::expr::Expr;

/// Environment variable naming an extra catalog file.
pub const CATALOG_ENV: &str = "GSLAB_CATALOG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu1: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Expr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_domain: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub mirror: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct CatalogFile {
    models: Vec<ModelSpec>,
}

/// Qualitative properties a catalog entry is expected to have.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traits {
    pub rho_monotone_up: bool,
    pub rho_monotone_down: bool,
    pub rho_constant: bool,
    pub mu1_gt_mu0: bool,
    pub has_trap: bool,
}

#[derive(Clone, Debug)]
pub struct ModelCatalogEntry {
    pub name: String,
    pub model: DiffusionModel,
    pub expected_traits: Traits,
}

const BUILTINS: [&str; 6] = [
    "const-rho",
    "paper-trap",
    "mono-rho-tanh",
    "mono-rho-dec",
    "mono-rho-tanh-mirror",
    "mono-rho-dec-mirror",
];

pub fn builtin_names() -> &'static [&'static str] {
    &BUILTINS
}

fn base(name: &str, mu0: Expr, mu1: Expr, sigma: Expr) -> ModelSpec {
    ModelSpec {
        name: Some(name.to_string()),
        mu0: Some(mu0),
        mu1: Some(mu1),
        sigma: Some(sigma),
        ..ModelSpec::default()
    }
}

fn tanh_mu0() -> Expr {
    Expr::mul(vec![Expr::c(-0.25), Expr::x().tanh()])
}

/// Definition of a built-in model (with default parameters).
pub fn builtin_spec(name: &str) -> Option<ModelSpec> {
    let zero = Expr::c(0.0);
    let one = Expr::c(1.0);
    Some(match name {
        "const-rho" => base(name, zero, one.clone(), one),
        "paper-trap" => {
            // mu1 = sigma^2 = 2 lambda (1 + e^{-x})
            let s2 = Expr::mul(vec![
                Expr::c(2.0),
                Expr::p("lambda"),
                Expr::add(vec![Expr::c(1.0), Expr::x().neg().exp()]),
            ]);
            base(name, zero, s2.clone(), s2.sqrt())
        }
        "mono-rho-tanh" => base(
            name,
            zero,
            Expr::add(vec![one.clone(), Expr::mul(vec![Expr::c(0.5), Expr::x().tanh()])]),
            one,
        ),
        "mono-rho-dec" => base(
            name,
            tanh_mu0(),
            Expr::add(vec![
                tanh_mu0(),
                Expr::c(1.5),
                Expr::mul(vec![Expr::c(-0.5), Expr::mul(vec![Expr::c(0.5), Expr::x()]).tanh()]),
            ]),
            one,
        ),
        "mono-rho-tanh-mirror" | "mono-rho-dec-mirror" => {
            let mut s = builtin_spec(name.trim_end_matches("-mirror"))?;
            s.name = Some(name.to_string());
            s.mirror = true;
            s
        }
        _ => return None,
    })
}

fn expected_traits(name: &str) -> Traits {
    let t = Traits::default();
    match name {
        "const-rho" => Traits {
            rho_constant: true,
            mu1_gt_mu0: true,
            ..t
        },
        "paper-trap" => Traits {
            rho_monotone_down: true,
            mu1_gt_mu0: true,
            has_trap: true,
            ..t
        },
        "mono-rho-tanh" => Traits {
            rho_monotone_up: true,
            mu1_gt_mu0: true,
            ..t
        },
        "mono-rho-dec" => Traits {
            rho_monotone_down: true,
            mu1_gt_mu0: true,
            ..t
        },
        "mono-rho-tanh-mirror" => Traits {
            rho_monotone_up: true,
            ..t
        },
        "mono-rho-dec-mirror" => Traits {
            rho_monotone_down: true,
            ..t
        },
        _ => t,
    }
}

impl ModelSpec {
    /// Expands a `builtin` reference and applies this definition's overrides.
    pub fn resolve(&self) -> Result<ModelSpec> {
        let mut out = match &self.builtin {
            Some(b) => builtin_spec(b).ok_or_else(|| config(format!("unknown builtin model '{b}'")))?,
            None => ModelSpec::default(),
        };
        if let Some(n) = &self.name {
            out.name = Some(n.clone());
        }
        macro_rules! take {
            ($($f:ident),*) => { $( if self.$f.is_some() { out.$f = self.$f.clone(); } )* };
        }
        take!(mu0, mu1, sigma, lambda, cost_a, cost_b, cost_c, x_domain);
        for (k, v) in &self.params {
            out.params.insert(k.clone(), *v);
        }
        out.mirror ^= self.mirror;
        out.builtin = None;
        Ok(out)
    }

    /// Builds the model from the resolved definition.
    pub fn build(&self) -> Result<DiffusionModel> {
        let spec = self.resolve()?;
        let params = Params {
            lambda: spec.lambda.unwrap_or(1.0),
            cost_a: spec.cost_a.unwrap_or(1.0),
            cost_b: spec.cost_b.unwrap_or(1.0),
            cost_c: spec.cost_c.unwrap_or(1.0),
        };
        let mut names = spec.params.clone();
        names.insert("lambda".into(), params.lambda);
        names.insert("cost_a".into(), params.cost_a);
        names.insert("cost_b".into(), params.cost_b);
        names.insert("cost_c".into(), params.cost_c);
        let get = |e: &Option<Expr>, what: &str| -> Result<Expr> {
            let e = e
                .as_ref()
                .ok_or_else(|| config(format!("model definition lacks '{what}'")))?
                .bind(&names)?;
            e.validate()?;
            Ok(e)
        };
        let mu0 = get(&spec.mu0, "mu0")?;
        let mu1 = get(&spec.mu1, "mu1")?;
        let sigma = get(&spec.sigma, "sigma")?;
        let [lo, hi] = spec.x_domain.unwrap_or([-8.0, 8.0]);
        let name = spec.name.clone().unwrap_or_else(|| "custom".to_string());
        let base_name = if spec.mirror {
            name.trim_end_matches("-mirror").to_string()
        } else {
            name.clone()
        };
        let (lo, hi) = if spec.mirror { (-hi, -lo) } else { (lo, hi) };
        let m = DiffusionModel::new(
            base_name,
            expr_coef(mu0),
            expr_coef(mu1),
            expr_coef(sigma),
            params,
            (lo, hi),
        )?;
        let mut m = if spec.mirror { m.mirror()? } else { m };
        m.name = name;
        Ok(m.with_spec(spec))
    }
}

/// All built-in models with their expected traits.
pub fn catalog() -> Vec<ModelCatalogEntry> {
    BUILTINS
        .iter()
        .map(|&n| ModelCatalogEntry {
            name: n.to_string(),
            model: builtin_spec(n)
                .expect("builtin")
                .build()
                .expect("builtin models are valid"),
            expected_traits: expected_traits(n),
        })
        .collect()
}

fn load_catalog(path: &Path) -> Result<Vec<ModelSpec>> {
    let text = std::fs::read_to_string(path)?;
    let file: CatalogFile = serde_json::from_str(&text)?;
    Ok(file.models)
}

/// Resolves a model reference: an existing JSON file, an entry of the
/// catalog file (explicit path, else `$GSLAB_CATALOG`), or a built-in name.
pub fn resolve_model(reference: &str, catalog_path: Option<&Path>) -> Result<DiffusionModel> {
    let p = Path::new(reference);
    if p.is_file() {
        let text = std::fs::read_to_string(p)?;
        let spec: ModelSpec =
            serde_json::from_str(&text).map_err(|e| config(format!("malformed model file {}: {e}", p.display())))?;
        return spec.build();
    }
    let env_path = std::env::var_os(CATALOG_ENV).map(std::path::PathBuf::from);
    if let Some(cat) = catalog_path.map(Path::to_path_buf).or(env_path) {
        let specs = load_catalog(&cat).map_err(|e| config(format!("cannot read catalog {}: {e}", cat.display())))?;
        if let Some(s) = specs.iter().find(|s| s.name.as_deref() == Some(reference)) {
            return s.build();
        }
    }
    match builtin_spec(reference) {
        Some(s) => s.build(),
        None => Err(config(format!(
            "unknown model '{reference}' (built-ins: {})",
            BUILTINS.join(", ")
        ))),
    }
}
