//! Commuting vector fields on grid states.
//!
//! First derivatives come from the state itself (`d_t v = w`, spectral
//! `d_a`); the second time derivative needed by order-2 words is taken from
//! the equation, `d_t w = lap v - m^2 v + F`. Nothing is differenced in time.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{assemble_rhs, CouplingTensors, FieldState};
use crate::spectral::{Grid, ScalarField};

use super::SnapshotBuffer;

/// `d_mu`, `Omega_ab` or `L_a`, with index 0 for time and 1..=3 for space.
pub use crate::analytic::Field as VectorField;

/// Highest total order of a word.
pub const MAX_ORDER: usize = 2;

fn check_field(f: &VectorField) -> Result<()> {
    let ok = match *f {
        VectorField::Partial(mu) => mu < 4,
        VectorField::Rotation(a, b) => (1..4).contains(&a) && (1..4).contains(&b),
        VectorField::Boost(a) | VectorField::Tangent(a) => (1..4).contains(&a),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "bad vector-field index in {f:?}"
        )))
    }
}

/// Derivatives of one species on the grid, up to second order.
struct GridJet<'a> {
    grid: &'a Grid,
    t: f64,
    u: &'a [f64],
    /// `d_mu u`, index 0 = `u_t`.
    d1: [Vec<f64>; 4],
    /// `d_mu d_nu u`, symmetric; filled only for order-2 words.
    d2: Option<Vec<Vec<f64>>>,
}

impl<'a> GridJet<'a> {
    fn new(
        state: &'a FieldState,
        i: usize,
        second: bool,
        couplings: Option<&CouplingTensors>,
    ) -> Result<Self> {
        let grid = state.grid();
        let v = &state.v[i];
        let w = &state.w[i];
        let vh = grid.transform(v.values());
        let [g1, g2, g3] = grid.gradient_from_spectrum(&vh);
        let d1 = [w.values().to_vec(), g1, g2, g3];
        let d2 = if second {
            let wh = grid.transform(w.values());
            let dw = grid.gradient_from_spectrum(&wh);
            let mut d2 = vec![Vec::new(); 16];
            // Spatial Hessian from d_a d_b of the spectrum.
            let axes = crate::spectral::Axis::ALL;
            for a in 0..3 {
                let da = grid.differentiate_spectrum(&vh, axes[a]);
                for b in a..3 {
                    let dab = grid.inverse_transform(grid.differentiate_spectrum(&da, axes[b]));
                    d2[(a + 1) * 4 + b + 1] = dab.clone();
                    d2[(b + 1) * 4 + a + 1] = dab;
                }
            }
            for a in 0..3 {
                d2[a + 1] = dw[a].clone();
                d2[(a + 1) * 4] = dw[a].clone();
            }
            let lap = grid.laplacian(v.values());
            let m2 = state.m * state.m;
            let mut utt: Vec<f64> = lap
                .iter()
                .zip(v.values())
                .map(|(l, x)| l - m2 * x)
                .collect();
            if let Some(c) = couplings {
                let f = assemble_rhs(state, c)?;
                for (a, b) in utt.iter_mut().zip(f[i].values()) {
                    *a += b;
                }
            }
            d2[0] = utt;
            Some(d2)
        } else {
            None
        };
        Ok(GridJet {
            grid,
            t: state.t,
            u: v.values(),
            d1,
            d2,
        })
    }

    fn point(&self, p: usize) -> [f64; 4] {
        let x = self.grid.position(p);
        [self.t, x[0], x[1], x[2]]
    }

    fn apply(&self, word: &[VectorField]) -> Vec<f64> {
        let n = self.grid.len();
        (0..n)
            .into_par_iter()
            .map(|p| {
                let y = self.point(p);
                match word {
                    [] => self.u[p],
                    [g] => {
                        let (c, _) = g.coefficients(y);
                        (0..4).map(|m| c[m] * self.d1[m][p]).sum()
                    }
                    [g1, g2] => {
                        // G1 (c^mu d_mu u) = G1(c^mu) d_mu u + c^mu e^nu d_nu d_mu u.
                        let d2 = self.d2.as_ref().expect("second derivatives");
                        let (c, dc) = g2.coefficients(y);
                        let (e, _) = g1.coefficients(y);
                        let mut s = 0.0;
                        for m in 0..4 {
                            let g1c: f64 = (0..4).map(|nu| e[nu] * dc[m][nu]).sum();
                            let inner: f64 = (0..4).map(|nu| e[nu] * d2[nu * 4 + m][p]).sum();
                            s += g1c * self.d1[m][p] + c[m] * inner;
                        }
                        s
                    }
                    _ => unreachable!(),
                }
            })
            .collect()
    }
}

/// `Gamma_1 ... Gamma_k v_i` for a word of order `k <= 2`; `word[0]` acts last.
///
/// `couplings` supplies the source in `d_t w`; pass `None` for the free
/// equation.
pub fn apply_word(
    state: &FieldState,
    i: usize,
    word: &[VectorField],
    couplings: Option<&CouplingTensors>,
) -> Result<ScalarField> {
    if word.len() > MAX_ORDER {
        return Err(Error::OrderTooHigh(word.len()));
    }
    if i >= state.species() {
        return Err(Error::InvalidParameter(format!("species {i} out of range")));
    }
    for f in word {
        check_field(f)?;
    }
    let jet = GridJet::new(state, i, word.len() == 2, couplings)?;
    ScalarField::from_values(state.grid(), jet.apply(word))
}

/// [`apply_word`] on the buffered snapshot at time `t`.
pub fn apply_vector_field(
    buffer: &SnapshotBuffer,
    t: f64,
    i: usize,
    word: &[VectorField],
    couplings: Option<&CouplingTensors>,
) -> Result<ScalarField> {
    if word.len() > MAX_ORDER {
        return Err(Error::OrderTooHigh(word.len()));
    }
    apply_word(buffer.get(t)?, i, word, couplings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::T0;

    fn gaussian_state(t: f64) -> FieldState {
        // u = exp(-0.6 |x - c|^2 - 0.3 (t - 3)^2) sampled with its exact u_t.
        let g = Grid::from_size(64, 16.0).unwrap();
        let c = [0.4, -0.3, 0.2];
        let f = |x: [f64; 3]| {
            let r2: f64 = (0..3).map(|a| (x[a] - c[a]).powi(2)).sum();
            (-0.6 * r2 - 0.3 * (t - 3.0).powi(2)).exp()
        };
        let v = ScalarField::from_fn(&g, f);
        let w = ScalarField::from_fn(&g, |x| -0.6 * (t - 3.0) * f(x));
        FieldState::new(&g, t, 0.0, vec![v], vec![w]).unwrap()
    }

    #[test]
    fn rotation_of_radial_field_vanishes() {
        let g = Grid::from_size(64, 16.0).unwrap();
        let v = ScalarField::from_fn(&g, |x| {
            (-0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()
        });
        let s = FieldState::new(&g, T0, 0.0, vec![v], vec![ScalarField::zeros(&g)]).unwrap();
        for (a, b) in [(1, 2), (1, 3), (2, 3)] {
            let r = apply_word(&s, 0, &[VectorField::Rotation(a, b)], None).unwrap();
            assert!(r.max_abs() < 1e-10);
        }
    }

    #[test]
    fn boost_of_zero_state_is_zero() {
        let g = Grid::from_size(8, 6.0).unwrap();
        let s = FieldState::zeros(&g, 1, T0, 0.5).unwrap();
        let r = apply_word(&s, 0, &[VectorField::Boost(2), VectorField::Boost(1)], None).unwrap();
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn order_three_rejected() {
        let g = Grid::from_size(8, 6.0).unwrap();
        let s = FieldState::zeros(&g, 1, T0, 0.5).unwrap();
        let w = [VectorField::Partial(1); 3];
        assert!(matches!(
            apply_word(&s, 0, &w, None),
            Err(Error::OrderTooHigh(3))
        ));
    }

    #[test]
    fn boost_matches_definition() {
        let s = gaussian_state(3.7);
        let l = apply_word(&s, 0, &[VectorField::Boost(2)], None).unwrap();
        let g = s.grid().clone();
        let d2 = g.gradient(s.v[0].values())[1].clone();
        for p in 0..g.len() {
            let x = g.position(p);
            let expect = x[1] * s.w[0].values()[p] + s.t * d2[p];
            assert!((l.values()[p] - expect).abs() < 1e-14);
        }
    }

    /// `[d_b, L_a] v = delta_ab d_t v` on analytic data.
    #[test]
    fn partial_boost_commutator() {
        let s = gaussian_state(3.7);
        for a in 1..4 {
            for b in 1..4 {
                let ab = apply_word(
                    &s,
                    0,
                    &[VectorField::Partial(b), VectorField::Boost(a)],
                    None,
                )
                .unwrap();
                let ba = apply_word(
                    &s,
                    0,
                    &[VectorField::Boost(a), VectorField::Partial(b)],
                    None,
                )
                .unwrap();
                let diff = ab.sub(&ba).unwrap();
                let expect = if a == b {
                    s.w[0].clone()
                } else {
                    ScalarField::zeros(s.grid())
                };
                assert!(diff.sub(&expect).unwrap().max_abs() < 1e-8);
            }
        }
    }

    /// `[L_a, L_b] v = Omega_ab v`; this needs `u_tt`, which for a free
    /// solution comes from the equation.
    #[test]
    fn boost_boost_commutator_on_free_solution() {
        let g = Grid::from_size(64, 24.0).unwrap();
        let init = crate::model::make_initial_data(
            &g,
            &crate::model::BumpSpec::uniform(1, 0.05, 0.02).unwrap(),
            0.5,
            3.0,
        )
        .unwrap()
        .band_limited();
        let s = crate::integrator::linear_propagator(&init, 1.0).unwrap();
        for (a, b) in [(1, 2), (1, 3), (2, 3)] {
            let ab =
                apply_word(&s, 0, &[VectorField::Boost(a), VectorField::Boost(b)], None).unwrap();
            let ba =
                apply_word(&s, 0, &[VectorField::Boost(b), VectorField::Boost(a)], None).unwrap();
            let om = apply_word(&s, 0, &[VectorField::Rotation(a, b)], None).unwrap();
            let err = ab.sub(&ba).unwrap().sub(&om).unwrap().max_abs();
            assert!(err < 1e-10 * om.max_abs().max(1e-3), "{err}");
        }
    }
}
