//! Closed-form spacetime jets for checking vector-field and null-form
//! identities off the grid.
//!
//! Coordinates are `y = (t, x1, x2, x3)`; index 0 is time throughout.

/// Value, gradient and Hessian of a function at one spacetime point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub grad: [f64; 4],
    pub hess: [[f64; 4]; 4],
}

/// Value and gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet1 {
    pub value: f64,
    pub grad: [f64; 4],
}

impl Jet2 {
    pub fn constant(value: f64) -> Self {
        Jet2 {
            value,
            grad: [0.0; 4],
            hess: [[0.0; 4]; 4],
        }
    }

    /// `c + k . y`.
    pub fn affine(c: f64, k: [f64; 4], y: [f64; 4]) -> Self {
        let value = c + (0..4).map(|m| k[m] * y[m]).sum::<f64>();
        Jet2 {
            value,
            grad: k,
            hess: [[0.0; 4]; 4],
        }
    }

    /// `amp * exp(-a |x - x0|^2 - b (t - t0)^2)` at `y`, with `centre = (t0, x0)`.
    pub fn gaussian(amp: f64, a: f64, b: f64, centre: [f64; 4], y: [f64; 4]) -> Self {
        let w = [b, a, a, a];
        let d: [f64; 4] = std::array::from_fn(|m| y[m] - centre[m]);
        let p: f64 = (0..4).map(|m| w[m] * d[m] * d[m]).sum();
        let value = amp * (-p).exp();
        // grad P = -2 w d, hess P = -2 diag(w); f' = f P', f'' = f (P' P'^T + P'').
        let dp: [f64; 4] = std::array::from_fn(|m| -2.0 * w[m] * d[m]);
        let grad = std::array::from_fn(|m| value * dp[m]);
        let hess = std::array::from_fn(|m| {
            std::array::from_fn(|n| {
                let diag = if m == n { -2.0 * w[m] } else { 0.0 };
                value * (dp[m] * dp[n] + diag)
            })
        });
        Jet2 { value, grad, hess }
    }

    pub fn mul(&self, o: &Jet2) -> Jet2 {
        let value = self.value * o.value;
        let grad = std::array::from_fn(|m| self.grad[m] * o.value + self.value * o.grad[m]);
        let hess = std::array::from_fn(|m| {
            std::array::from_fn(|n| {
                self.hess[m][n] * o.value
                    + self.grad[m] * o.grad[n]
                    + self.grad[n] * o.grad[m]
                    + self.value * o.hess[m][n]
            })
        });
        Jet2 { value, grad, hess }
    }

    pub fn first(&self) -> Jet1 {
        Jet1 {
            value: self.value,
            grad: self.grad,
        }
    }

    /// `d_mu` of this function, one order lower.
    pub fn partial(&self, mu: usize) -> Jet1 {
        Jet1 {
            value: self.grad[mu],
            grad: self.hess[mu],
        }
    }
}

/// First-order differential operator `sum_mu c^mu(y) d_mu`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Field {
    /// `d_mu`, `mu` in 0..4.
    Partial(usize),
    /// `x_a d_b - x_b d_a`, spatial indices 1..=3.
    Rotation(usize, usize),
    /// `x_a d_t + t d_a`.
    Boost(usize),
    /// Semi-hyperboloidal `d_a + (x_a / t) d_t`.
    Tangent(usize),
}

impl Field {
    /// Coefficients `c^mu` and their gradients `d_nu c^mu` at `y`.
    pub fn coefficients(&self, y: [f64; 4]) -> ([f64; 4], [[f64; 4]; 4]) {
        let mut c = [0.0; 4];
        let mut dc = [[0.0; 4]; 4];
        match *self {
            Field::Partial(mu) => c[mu] = 1.0,
            Field::Rotation(a, b) => {
                c[b] = y[a];
                dc[b][a] = 1.0;
                c[a] -= y[b];
                dc[a][b] -= 1.0;
            }
            Field::Boost(a) => {
                c[0] = y[a];
                dc[0][a] = 1.0;
                c[a] = y[0];
                dc[a][0] = 1.0;
            }
            Field::Tangent(a) => {
                let t = y[0];
                c[a] = 1.0;
                c[0] = y[a] / t;
                dc[0][a] = 1.0 / t;
                dc[0][0] = -y[a] / (t * t);
            }
        }
        (c, dc)
    }

    pub fn apply(&self, u: &Jet2, y: [f64; 4]) -> Jet1 {
        let (c, dc) = self.coefficients(y);
        let value = (0..4).map(|m| c[m] * u.grad[m]).sum();
        let grad = std::array::from_fn(|n| {
            (0..4)
                .map(|m| dc[m][n] * u.grad[m] + c[m] * u.hess[m][n])
                .sum()
        });
        Jet1 { value, grad }
    }

    pub fn apply1(&self, u: &Jet1, y: [f64; 4]) -> f64 {
        let (c, _) = self.coefficients(y);
        (0..4).map(|m| c[m] * u.grad[m]).sum()
    }
}

/// `Q0(u, w) = -u_t w_t + grad u . grad w`.
pub fn q0(u: &Jet1, w: &Jet1) -> f64 {
    -u.grad[0] * w.grad[0] + (1..4).map(|a| u.grad[a] * w.grad[a]).sum::<f64>()
}

/// `Q_ab(u, w) = d_a u d_b w - d_b u d_a w`.
pub fn qab(u: &Jet1, w: &Jet1, a: usize, b: usize) -> f64 {
    u.grad[a] * w.grad[b] - u.grad[b] * w.grad[a]
}

/// `Q0(u, w)` together with its gradient.
pub fn q0_jet(u: &Jet2, w: &Jet2) -> Jet1 {
    let sign = [-1.0, 1.0, 1.0, 1.0];
    let value = q0(&u.first(), &w.first());
    let grad = std::array::from_fn(|n| {
        (0..4)
            .map(|m| sign[m] * (u.hess[m][n] * w.grad[m] + u.grad[m] * w.hess[m][n]))
            .sum()
    });
    Jet1 { value, grad }
}

/// `Q_ab(u, w)` together with its gradient.
pub fn qab_jet(u: &Jet2, w: &Jet2, a: usize, b: usize) -> Jet1 {
    let value = qab(&u.first(), &w.first(), a, b);
    let grad = std::array::from_fn(|n| {
        u.hess[a][n] * w.grad[b] + u.grad[a] * w.hess[b][n]
            - u.hess[b][n] * w.grad[a]
            - u.grad[b] * w.hess[a][n]
    });
    Jet1 { value, grad }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn([f64; 4]) -> Jet2, y: [f64; 4]) {
        let h = 1e-5;
        let j = f(y);
        for m in 0..4 {
            let mut yp = y;
            let mut ym = y;
            yp[m] += h;
            ym[m] -= h;
            let (p, q) = (f(yp), f(ym));
            let g = (p.value - q.value) / (2.0 * h);
            assert!((g - j.grad[m]).abs() < 1e-7 * (1.0 + j.grad[m].abs()));
            for n in 0..4 {
                let hh = (p.grad[n] - q.grad[n]) / (2.0 * h);
                assert!((hh - j.hess[m][n]).abs() < 1e-6 * (1.0 + j.hess[m][n].abs()));
            }
        }
    }

    #[test]
    fn gaussian_jet_matches_differences() {
        let c = [3.0, 0.5, -0.2, 0.1];
        fd_check(
            |y| Jet2::gaussian(1.3, 0.2, 0.15, c, y),
            [3.4, 0.1, 0.3, -0.4],
        );
    }

    #[test]
    fn product_jet_matches_differences() {
        let f = |y: [f64; 4]| {
            Jet2::gaussian(1.0, 0.3, 0.1, [2.5, 0.0, 0.2, 0.0], y)
                .mul(&Jet2::gaussian(0.7, 0.1, 0.2, [3.0, 1.0, 0.0, -0.5], y))
                .mul(&Jet2::affine(1.0, [0.1, -0.2, 0.3, 0.05], y))
        };
        fd_check(f, [2.8, 0.4, -0.3, 0.2]);
    }

    #[test]
    fn rotation_kills_radial_function() {
        let y = [4.0, 0.3, -0.7, 1.1];
        let u = Jet2::gaussian(1.0, 0.4, 0.2, [3.0, 0.0, 0.0, 0.0], y);
        for (a, b) in [(1, 2), (1, 3), (2, 3)] {
            assert!(Field::Rotation(a, b).apply(&u, y).value.abs() < 1e-15);
        }
    }
}
