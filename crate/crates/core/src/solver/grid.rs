use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::model::DiffusionModel;
use crate::Mode;

/// Requested tensor grid over `(phi, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub n_phi: usize,
    pub n_x: usize,
    pub phi_min: f64,
    pub phi_max: f64,
    /// Defaults to the model's domain.
    pub x_range: Option<(f64, f64)>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_phi: 257,
            n_x: 257,
            phi_min: 1e-3,
            phi_max: 1e3,
            x_range: None,
        }
    }
}

impl GridConfig {
    pub fn with_size(n_phi: usize, n_x: usize) -> Self {
        GridConfig {
            n_phi,
            n_x,
            ..GridConfig::default()
        }
    }

    /// Same ranges, `2(n-1)+1` nodes per axis.
    pub fn refined(&self) -> Self {
        GridConfig {
            n_phi: 2 * (self.n_phi - 1) + 1,
            n_x: 2 * (self.n_x - 1) + 1,
            ..self.clone()
        }
    }
}

/// Log-uniform `phi` nodes times uniform `x` nodes. Testing grids carry an
/// extra `phi = 0` row in front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub mode: Mode,
    pub phi: Vec<f64>,
    pub x: Vec<f64>,
    pub h_logphi: f64,
    pub h_x: f64,
    pub zero_row: bool,
}

impl Grid2D {
    pub fn n_phi(&self) -> usize {
        self.phi.len()
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    /// Flat index of node `(phi row k, x column j)`.
    #[inline]
    pub fn idx(&self, k: usize, j: usize) -> usize {
        k * self.x.len() + j
    }

    /// First row with `phi > 0`.
    pub fn first_positive(&self) -> usize {
        usize::from(self.zero_row)
    }

    /// Row nearest to `phi` on the logarithmic scale.
    pub fn nearest_row(&self, phi: f64) -> usize {
        let k0 = self.first_positive();
        let lp0 = self.phi[k0].ln();
        let k = ((phi.ln() - lp0) / self.h_logphi).round();
        (k.max(0.0) as usize + k0).min(self.phi.len() - 1)
    }

    pub fn same_shape(&self, o: &Grid2D) -> bool {
        self.phi.len() == o.phi.len()
            && self.x.len() == o.x.len()
            && self
                .phi
                .iter()
                .zip(&o.phi)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1e-300))
            && self.x.iter().zip(&o.x).all(|(a, b)| (a - b).abs() <= 1e-12)
    }
}

/// Builds the grid and checks it against the model's reference level.
pub fn build_grid(cfg: &GridConfig, model: &DiffusionModel, mode: Mode) -> Result<Grid2D> {
    if cfg.n_phi < 16 || cfg.n_x < 16 {
        return Err(config(format!(
            "grid needs at least 16 nodes per axis, got {}x{}",
            cfg.n_phi, cfg.n_x
        )));
    }
    if !(cfg.phi_min > 0.0 && cfg.phi_max > cfg.phi_min && cfg.phi_max.is_finite()) {
        return Err(config(format!(
            "phi range [{}, {}] is not a positive interval",
            cfg.phi_min, cfg.phi_max
        )));
    }
    let p = &model.params;
    let reference = (p.cost_b / p.cost_a).max(p.lambda / p.cost_c);
    if cfg.phi_max <= 20.0 * reference {
        return Err(config(format!(
            "phi_max = {} must exceed 20 * max(b/a, lambda/c) = {}",
            cfg.phi_max,
            20.0 * reference
        )));
    }
    let own = model.reference_phi(mode);
    if cfg.phi_min >= own {
        return Err(config(format!(
            "phi_min = {} must lie below the reference level {own}",
            cfg.phi_min
        )));
    }
    let (dlo, dhi) = model.x_domain();
    let (xlo, xhi) = cfg.x_range.unwrap_or((dlo, dhi));
    if !(xlo < xhi && xlo >= dlo && xhi <= dhi) {
        return Err(config(format!(
            "x range [{xlo}, {xhi}] must be a subinterval of the model domain [{dlo}, {dhi}]"
        )));
    }
    let h_logphi = (cfg.phi_max / cfg.phi_min).ln() / (cfg.n_phi - 1) as f64;
    let lp0 = cfg.phi_min.ln();
    let mut phi = Vec::with_capacity(cfg.n_phi + 1);
    let zero_row = mode.is_testing();
    if zero_row {
        phi.push(0.0);
    }
    for k in 0..cfg.n_phi {
        phi.push(if k + 1 == cfg.n_phi {
            cfg.phi_max
        } else {
            (lp0 + h_logphi * k as f64).exp()
        });
    }
    let h_x = (xhi - xlo) / (cfg.n_x - 1) as f64;
    let x = (0..cfg.n_x)
        .map(|j| if j + 1 == cfg.n_x { xhi } else { xlo + h_x * j as f64 })
        .collect();
    Ok(Grid2D {
        mode,
        phi,
        x,
        h_logphi,
        h_x,
        zero_row,
    })
}
