//! Obstacle problems in canonical coordinates `(u, x)`, `u = F(x) - log phi`.
//!
//! In these coordinates the single Brownian motion drives `x` only and `u`
//! is transported with speed `a(u, x) = a0(x) - a1(x) e^u`, so the operator
//! is `a d_u + drift d_x + diff d_xx - rate` with no cross term. The scheme
//! is upwind in `u` and in the `x` drift, central in `d_xx`: a monotone
//! discretisation of the rank-one diffusion whose stencil follows the noise
//! direction exactly.
//!
//! Lines of constant `u` are solved exactly as tridiagonal obstacle
//! problems; lines are swept alternately downward and upward in `u`, which
//! is exact in one pass wherever the transport has a fixed sign. The `x`
//! edges reflect at fixed `phi`: the ghost value beyond the edge is read,
//! by interpolation in `u`, at the mirror node of the same `phi`.

use super::lcp::{LineSystem, TridiagLcp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ColumnCoeffs {
    /// `F(x_j)`.
    pub f: f64,
    pub a0: f64,
    pub a1: f64,
    pub drift: f64,
    /// Half the squared volatility.
    pub diff: f64,
    /// Weight of the running cost.
    pub w: f64,
    pub rate: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Obstacle {
    /// `min(a phi, b)`
    Testing { a: f64, b: f64 },
    /// `0`
    Detection,
}

impl Obstacle {
    #[inline]
    pub fn psi(&self, phi: f64) -> f64 {
        match *self {
            Obstacle::Testing { a, b } => (a * phi).min(b),
            Obstacle::Detection => 0.0,
        }
    }
}

pub(crate) struct CanonSpec {
    pub cols: Vec<ColumnCoeffs>,
    pub hx: f64,
    pub obstacle: Obstacle,
    /// Running cost per node is `w * (cost0 + cost1 * phi)`.
    pub cost0: f64,
    pub cost1: f64,
    pub hu: f64,
    /// Range of `log phi` that must be covered.
    pub logphi: (f64, f64),
    pub tol: f64,
    pub max_sweeps: usize,
}

pub(crate) struct CanonSolution {
    pub u0: f64,
    pub hu: f64,
    pub nu: usize,
    pub nx: usize,
    pub v: Vec<f64>,
    pub psi: Vec<f64>,
    pub f: Vec<f64>,
    pub residual: f64,
    /// Largest update of each sweep.
    pub history: Vec<f64>,
    pub sweeps: usize,
    /// Largest increase of any node between sweeps (zero for a monotone
    /// decreasing iteration).
    pub max_increase: f64,
}

impl CanonSolution {
    /// Linear interpolation in `u` of `psi - v` (the obstacle defect) along
    /// column `j`.
    pub fn defect_at(&self, j: usize, u: f64) -> f64 {
        let p = ((u - self.u0) / self.hu).clamp(0.0, (self.nu - 1) as f64);
        let i = (p.floor() as usize).min(self.nu - 2);
        let t = p - i as f64;
        let d = |i: usize| {
            let k = i * self.nx + j;
            self.psi[k] - self.v[k]
        };
        (1.0 - t) * d(i) + t * d(i + 1)
    }
}

struct Ghost {
    i: usize,
    t: f64,
}

fn locate(u: f64, u0: f64, hu: f64, nu: usize) -> Ghost {
    let p = ((u - u0) / hu).clamp(0.0, (nu - 1) as f64);
    let i = (p.floor() as usize).min(nu - 2);
    Ghost { i, t: p - i as f64 }
}

pub(crate) fn solve(spec: &CanonSpec) -> Result<CanonSolution> {
    let nx = spec.cols.len();
    let hx = spec.hx;
    let hu = spec.hu;
    let (fmin, fmax) = spec
        .cols
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c.f), b.max(c.f)));
    let df_lo = spec.cols[1].f - spec.cols[0].f;
    let df_hi = spec.cols[nx - 1].f - spec.cols[nx - 2].f;
    let margin = 2.0 * df_lo.abs().max(df_hi.abs()) + 6.0 * hu;
    let (ylo, yhi) = spec.logphi;
    // Anchor the lattice at F(x_0) - y_max so that shifts by whole x-cells
    // stay on the lattice when F is linear with unit slope.
    let anchor = spec.cols[0].f - yhi;
    let below = ((anchor - (fmin - yhi - margin)) / hu).ceil();
    let u0 = anchor - below * hu;
    let nu = (((fmax - ylo + margin) - u0) / hu).ceil() as usize + 1;
    let n = nu * nx;

    let eu: Vec<f64> = (0..nu).map(|i| (u0 + hu * i as f64).exp()).collect();
    let mut psi = vec![0.0; n];
    let mut cost = vec![0.0; n];
    let mut a = vec![0.0; n];
    for i in 0..nu {
        let u = u0 + hu * i as f64;
        for (j, c) in spec.cols.iter().enumerate() {
            let phi = (c.f - u).exp();
            let k = i * nx + j;
            psi[k] = spec.obstacle.psi(phi);
            cost[k] = c.w * (spec.cost0 + spec.cost1 * phi);
            a[k] = c.a0 - c.a1 * eu[i];
        }
    }
    let testing = matches!(spec.obstacle, Obstacle::Testing { .. });
    let fixed = |i: usize| i == 0 || (testing && i == nu - 1);
    let ghost_lo: Vec<Ghost> = (0..nu)
        .map(|i| locate(u0 + hu * i as f64 + 2.0 * df_lo, u0, hu, nu))
        .collect();
    let ghost_hi: Vec<Ghost> = (0..nu)
        .map(|i| locate(u0 + hu * i as f64 - 2.0 * df_hi, u0, hu, nu))
        .collect();

    let mut v = psi.clone();
    let mut stop = vec![true; n];
    let mut lower = vec![0.0; nx];
    let mut diag = vec![0.0; nx];
    let mut upper = vec![0.0; nx];
    let mut rhs = vec![0.0; nx];
    let mut line = vec![0.0; nx];
    let mut lcp = TridiagLcp::new();
    let mut history = Vec::new();
    let mut max_increase = 0.0f64;
    let inv_hx2 = 1.0 / (hx * hx);

    // Row assembly shared by the sweep and the residual evaluation.
    let assemble = |i: usize, v: &[f64], lower: &mut [f64], diag: &mut [f64], upper: &mut [f64], rhs: &mut [f64]| {
        let interp = |g: &Ghost, col: usize| (1.0 - g.t) * v[g.i * nx + col] + g.t * v[(g.i + 1) * nx + col];
        for (j, c) in spec.cols.iter().enumerate() {
            let k = i * nx + j;
            let ak = a[k];
            let iu = if ak > 0.0 { i + 1 } else { i.wrapping_sub(1) };
            let (cu, vu) = if ak != 0.0 && iu < nu {
                (ak.abs() / hu, v[iu * nx + j])
            } else {
                (0.0, 0.0)
            };
            let dxx = c.diff * inv_hx2;
            let cl = dxx + (-c.drift).max(0.0) / hx;
            let cr = dxx + c.drift.max(0.0) / hx;
            diag[j] = cu + cl + cr + c.rate;
            let mut r = cost[k] + cu * vu;
            lower[j] = cl;
            upper[j] = cr;
            if j == 0 {
                r += cl * interp(&ghost_lo[i], 1);
                lower[j] = 0.0;
            }
            if j + 1 == nx {
                r += cr * interp(&ghost_hi[i], nx - 2);
                upper[j] = 0.0;
            }
            rhs[j] = r;
        }
    };

    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    for sweep in 0..spec.max_sweeps {
        let mut change = 0.0f64;
        sweeps = sweep + 1;
        let rows: Box<dyn Iterator<Item = usize>> = if sweep % 2 == 0 {
            Box::new((0..nu).rev())
        } else {
            Box::new(0..nu)
        };
        for i in rows {
            if fixed(i) {
                continue;
            }
            assemble(i, &v, &mut lower, &mut diag, &mut upper, &mut rhs);
            let s = i * nx;
            line.copy_from_slice(&v[s..s + nx]);
            let sys = LineSystem {
                lower: &lower,
                diag: &diag,
                upper: &upper,
                rhs: &rhs,
                psi: &psi[s..s + nx],
            };
            lcp.solve(&sys, &mut line, &mut stop[s..s + nx]);
            for j in 0..nx {
                let d = line[j] - v[s + j];
                max_increase = max_increase.max(d);
                change = change.max(d.abs());
            }
            v[s..s + nx].copy_from_slice(&line);
        }
        history.push(change);
        if !change.is_finite() {
            break;
        }
        // The full residual is only worth computing once updates are small.
        if change > spec.tol && sweep + 1 < spec.max_sweeps {
            continue;
        }
        residual = 0.0;
        for i in 0..nu {
            if fixed(i) {
                continue;
            }
            assemble(i, &v, &mut lower, &mut diag, &mut upper, &mut rhs);
            let s = i * nx;
            for j in 0..nx {
                let mut av = diag[j] * v[s + j];
                if j > 0 {
                    av -= lower[j] * v[s + j - 1];
                }
                if j + 1 < nx {
                    av -= upper[j] * v[s + j + 1];
                }
                let r = ((av - rhs[j]) / diag[j]).max(v[s + j] - psi[s + j]);
                residual = residual.max(r.abs());
            }
        }
        if residual <= spec.tol || !residual.is_finite() {
            break;
        }
    }
    if !(residual <= spec.tol) {
        return Err(Error::Solver {
            sweeps,
            last: residual,
            history,
        });
    }
    Ok(CanonSolution {
        u0,
        hu,
        nu,
        nx,
        v,
        psi,
        f: spec.cols.iter().map(|c| c.f).collect(),
        residual,
        history,
        sweeps,
        max_increase,
    })
}
