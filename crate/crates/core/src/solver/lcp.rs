//! Tridiagonal obstacle problems solved exactly by policy iteration.
//!
//! Solves `max(A v - r, v - psi) = 0` (so `v <= psi`) where row `j` of `A` is
//! `diag[j] v[j] - lower[j] v[j-1] - upper[j] v[j+1]` with nonnegative
//! off-diagonal weights and `diag >= lower + upper` (an M-matrix whenever one
//! row is strictly dominant or fixed). Each policy fixes a set of "stop" rows
//! at the obstacle; the linear system for the others is solved by the Thomas
//! algorithm. For M-matrices the iteration terminates in at most `n + 1`
//! steps.

#[derive(Default)]
pub struct TridiagLcp {
    c: Vec<f64>,
    d: Vec<f64>,
}

pub struct LineSystem<'a> {
    pub lower: &'a [f64],
    pub diag: &'a [f64],
    pub upper: &'a [f64],
    pub rhs: &'a [f64],
    pub psi: &'a [f64],
}

impl TridiagLcp {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves in place. `v` and `stop` carry the warm start in and the
    /// solution out. Returns the number of policy iterations.
    pub fn solve(&mut self, sys: &LineSystem<'_>, v: &mut [f64], stop: &mut [bool]) -> usize {
        let n = sys.diag.len();
        self.c.resize(n, 0.0);
        self.d.resize(n, 0.0);
        let scale = sys.psi.iter().fold(0.0f64, |m, p| m.max(p.abs())).max(1e-300);
        let mut iters = 0;
        loop {
            iters += 1;
            self.thomas(sys, v, stop);
            let mut changed = false;
            for j in 0..n {
                if stop[j] {
                    let mut av = sys.diag[j] * v[j];
                    if j > 0 {
                        av -= sys.lower[j] * v[j - 1];
                    }
                    if j + 1 < n {
                        av -= sys.upper[j] * v[j + 1];
                    }
                    let res = av - sys.rhs[j];
                    if res > 1e-13 * (sys.rhs[j].abs() + sys.diag[j] * scale) {
                        stop[j] = false;
                        changed = true;
                    }
                } else if v[j] > sys.psi[j] + 1e-15 * scale {
                    stop[j] = true;
                    changed = true;
                }
            }
            if !changed || iters > n + 2 {
                return iters;
            }
        }
    }

    fn thomas(&mut self, sys: &LineSystem<'_>, v: &mut [f64], stop: &[bool]) {
        let n = sys.diag.len();
        let (c, d) = (&mut self.c, &mut self.d);
        for j in 0..n {
            let (a, b, cc, r) = if stop[j] {
                (0.0, 1.0, 0.0, sys.psi[j])
            } else {
                (
                    if j > 0 { -sys.lower[j] } else { 0.0 },
                    sys.diag[j],
                    if j + 1 < n { -sys.upper[j] } else { 0.0 },
                    sys.rhs[j],
                )
            };
            if j == 0 {
                c[0] = cc / b;
                d[0] = r / b;
            } else {
                let m = b - a * c[j - 1];
                c[j] = cc / m;
                d[j] = (r - a * d[j - 1]) / m;
            }
        }
        v[n - 1] = d[n - 1];
        for j in (0..n - 1).rev() {
            v[j] = d[j] - c[j] * v[j + 1];
        }
        for j in 0..n {
            if stop[j] {
                v[j] = sys.psi[j];
            }
        }
    }
}
