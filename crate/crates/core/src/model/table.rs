//! Dense cubic Hermite tables on a uniform node set.

/// Node lattice shared by several tabulated functions.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub x0: f64,
    pub h: f64,
    pub n: usize,
}

impl Lattice {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 2 && hi > lo);
        Lattice {
            x0: lo,
            h: (hi - lo) / (n - 1) as f64,
            n,
        }
    }

    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.n {
            self.x0 + self.h * (self.n - 1) as f64
        } else {
            self.x0 + self.h * k as f64
        }
    }

    /// Cell index and local coordinate in `[0, 1]`, clamped to the lattice.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.x0) / self.h;
        if s <= 0.0 {
            return (0, 0.0);
        }
        let k = s.floor() as usize;
        if k >= self.n - 1 {
            return (self.n - 2, 1.0);
        }
        (k, s - k as f64)
    }
}

/// Values and first derivatives at the lattice nodes.
#[derive(Clone, Debug)]
pub struct Hermite {
    pub v: Vec<f64>,
    pub d: Vec<f64>,
}

impl Hermite {
    #[inline]
    pub fn at(&self, lat: &Lattice, k: usize, t: f64) -> f64 {
        let h = lat.h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.v[k] + h10 * h * self.d[k] + h01 * self.v[k + 1] + h11 * h * self.d[k + 1]
    }

    pub fn eval(&self, lat: &Lattice, x: f64) -> f64 {
        let (k, t) = lat.locate(x);
        self.at(lat, k, t)
    }
}
