//! Method-of-lines reference: fourth-order centred differences in space,
//! classical RK4 in time. Shares no code with the spectral path beyond the
//! state container, so agreement between the two is a meaningful check.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CouplingTensors, FieldState};
use crate::spectral::ScalarField;

/// Growth of `max |v|, |w|` over one step beyond which the step is
/// declared unstable.
const GROWTH_LIMIT: f64 = 1e6;

struct Stencil {
    n: usize,
    inv_dx: f64,
}

impl Stencil {
    fn at(&self, i: [usize; 3]) -> usize {
        (i[0] * self.n + i[1]) * self.n + i[2]
    }

    fn shift(&self, idx: usize, axis: usize, by: isize) -> usize {
        let n = self.n;
        let mut i = [idx / (n * n), (idx / n) % n, idx % n];
        i[axis] = (i[axis] as isize + by).rem_euclid(n as isize) as usize;
        self.at(i)
    }

    /// `(f[-2] - 8 f[-1] + 8 f[1] - f[2]) / (12 dx)`.
    fn d1(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let c = self.inv_dx / 12.0;
        (0..f.len())
            .into_par_iter()
            .map(|p| {
                c * (f[self.shift(p, axis, -2)] - 8.0 * f[self.shift(p, axis, -1)]
                    + 8.0 * f[self.shift(p, axis, 1)]
                    - f[self.shift(p, axis, 2)])
            })
            .collect()
    }

    /// Sum over axes of `(-f[-2] + 16 f[-1] - 30 f + 16 f[1] - f[2]) / (12 dx^2)`.
    fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        let c = self.inv_dx * self.inv_dx / 12.0;
        (0..f.len())
            .into_par_iter()
            .map(|p| {
                let mut s = 0.0;
                for a in 0..3 {
                    s += -f[self.shift(p, a, -2)] + 16.0 * f[self.shift(p, a, -1)] - 30.0 * f[p]
                        + 16.0 * f[self.shift(p, a, 1)]
                        - f[self.shift(p, a, 2)];
                }
                c * s
            })
            .collect()
    }
}

type Stage = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn derivative(
    st: &Stencil,
    m: f64,
    couplings: &CouplingTensors,
    v: &[Vec<f64>],
    w: &[Vec<f64>],
) -> Stage {
    let grads: Vec<[Vec<f64>; 3]> = v
        .iter()
        .map(|f| [st.d1(f, 0), st.d1(f, 1), st.d1(f, 2)])
        .collect();
    // part(j, 0) = d_t v_j, part(j, a) = d_a v_j.
    let part = |j: usize, a: usize| -> &[f64] {
        if a == 0 {
            &w[j]
        } else {
            &grads[j][a - 1]
        }
    };
    let mut dw: Vec<Vec<f64>> = v
        .iter()
        .map(|f| {
            st.laplacian(f)
                .into_iter()
                .zip(f)
                .map(|(l, x)| l - m * m * x)
                .collect()
        })
        .collect();
    for e in couplings.n_entries() {
        for p in 0..dw[e.i].len() {
            let mut q = -part(e.j, 0)[p] * part(e.k, 0)[p];
            for a in 1..4 {
                q += part(e.j, a)[p] * part(e.k, a)[p];
            }
            dw[e.i][p] += e.value * q;
        }
    }
    for e in couplings.m_entries() {
        for p in 0..dw[e.i].len() {
            let q = part(e.j, e.alpha)[p] * part(e.k, e.beta)[p]
                - part(e.j, e.beta)[p] * part(e.k, e.alpha)[p];
            dw[e.i][p] += e.value * q;
        }
    }
    (w.to_vec(), dw)
}

fn axpy(base: &[Vec<f64>], h: f64, d: &[Vec<f64>]) -> Vec<Vec<f64>> {
    base.iter()
        .zip(d)
        .map(|(b, x)| b.iter().zip(x).map(|(u, y)| u + h * y).collect())
        .collect()
}

/// One RK4 step of the semi-discrete system. Requires `dt <= dx / 2`.
pub fn oracle_rk4_step(
    state: &FieldState,
    couplings: &CouplingTensors,
    dt: f64,
) -> Result<FieldState> {
    let grid = state.grid();
    if !(dt.is_finite() && dt > 0.0) || dt > 0.5 * grid.dx() * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "oracle step dt = {dt} must lie in (0, dx/2 = {}]",
            0.5 * grid.dx()
        )));
    }
    if couplings.species() != state.species() {
        return Err(Error::InvalidParameter("species count mismatch".into()));
    }
    let st = Stencil {
        n: grid.n(),
        inv_dx: 1.0 / grid.dx(),
    };
    let m = state.m;
    let v0: Vec<Vec<f64>> = state.v.iter().map(|f| f.values().to_vec()).collect();
    let w0: Vec<Vec<f64>> = state.w.iter().map(|f| f.values().to_vec()).collect();

    let k1 = derivative(&st, m, couplings, &v0, &w0);
    let k2 = derivative(
        &st,
        m,
        couplings,
        &axpy(&v0, 0.5 * dt, &k1.0),
        &axpy(&w0, 0.5 * dt, &k1.1),
    );
    let k3 = derivative(
        &st,
        m,
        couplings,
        &axpy(&v0, 0.5 * dt, &k2.0),
        &axpy(&w0, 0.5 * dt, &k2.1),
    );
    let k4 = derivative(
        &st,
        m,
        couplings,
        &axpy(&v0, dt, &k3.0),
        &axpy(&w0, dt, &k3.1),
    );

    let combine =
        |base: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>], c: &[Vec<f64>], d: &[Vec<f64>]| {
            base.iter()
                .enumerate()
                .map(|(i, x)| {
                    x.iter()
                        .enumerate()
                        .map(|(p, u)| {
                            u + dt / 6.0 * (a[i][p] + 2.0 * b[i][p] + 2.0 * c[i][p] + d[i][p])
                        })
                        .collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>()
        };
    let v1 = combine(&v0, &k1.0, &k2.0, &k3.0, &k4.0);
    let w1 = combine(&w0, &k1.1, &k2.1, &k3.1, &k4.1);

    let before = state.max_abs().max(f64::MIN_POSITIVE);
    let after = v1
        .iter()
        .chain(&w1)
        .flat_map(|f| f.iter())
        .fold(0.0f64, |acc, x| {
            if x.is_finite() {
                acc.max(x.abs())
            } else {
                f64::INFINITY
            }
        });
    if !after.is_finite() || after > GROWTH_LIMIT * before {
        return Err(Error::NumericalFailure {
            t: state.t + dt,
            max_abs: after,
        });
    }
    let v = v1
        .into_iter()
        .map(|f| ScalarField::from_values(grid, f))
        .collect::<Result<Vec<_>>>()?;
    let w = w1
        .into_iter()
        .map(|f| ScalarField::from_values(grid, f))
        .collect::<Result<Vec<_>>>()?;
    FieldState::new(grid, state.t + dt, m, v, w)
}
