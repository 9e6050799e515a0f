//! Nonlinear change of unknowns removing the `Q0` interaction, and the
//! splitting of the new unknown into pieces that solve linear equations.
//!
//! With `V_i = v_i + 1/2 N_i^{jk} v_j v_k`, the identity
//! `(-box + m^2)(ab) = a(-box b + m^2 b) + b(-box a + m^2 a) - 2 Q0(a, b) - m^2 ab`
//! gives
//!
//! ```text
//! -box V_i + m^2 V_i = M_i^{jk ab} Q_ab(v_j, v_k)
//!                      - 1/2 m^2 N_i^{jk} v_j v_k
//!                      + 1/2 N_i^{jk} (v_j F_k + v_k F_j)
//! ```
//!
//! with no quadratic `Q0` term left. `V_i` is split as
//! `V_c + V_m + V_h + d_g V^g`: `V_c` carries the cubic source and the data of
//! `V`, `V_m` the mass term, and `V^g` the currents `S^g` with
//! `M Q_ab(v_j, v_k) = d_g S^g`. The homogeneous piece `V_h` starts from
//! `(0, -S^0(t0))`, which cancels the rate `d_g V^g` acquires at `t0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrator::LinearFlow;
use crate::model::{assemble_rhs, CouplingTensors, FieldState};
use crate::spectral::{Axis, Grid, ScalarField};

use crate::diagnostics::SnapshotBuffer;

fn product(grid: &Grid, a: &[f64], b: &[f64], dealias: bool) -> Vec<f64> {
    let p: Vec<f64> = a.par_iter().zip(b.par_iter()).map(|(x, y)| x * y).collect();
    if dealias {
        grid.dealias(&p)
    } else {
        p
    }
}

fn add_scaled(out: &mut [f64], c: f64, x: &[f64]) {
    out.par_iter_mut()
        .zip(x.par_iter())
        .for_each(|(o, v)| *o += c * v);
}

/// `(V_i, d_t V_i)` for every species; products are dealiased.
pub fn transform_v(
    state: &FieldState,
    couplings: &CouplingTensors,
) -> Result<(Vec<ScalarField>, Vec<ScalarField>)> {
    if couplings.species() != state.species() {
        return Err(Error::InvalidParameter("species count mismatch".into()));
    }
    let grid = state.grid();
    let mut big: Vec<Vec<f64>> = state.v.iter().map(|f| f.values().to_vec()).collect();
    let mut rate: Vec<Vec<f64>> = state.w.iter().map(|f| f.values().to_vec()).collect();
    for e in couplings.n_entries() {
        let (vj, vk) = (state.v[e.j].values(), state.v[e.k].values());
        let (wj, wk) = (state.w[e.j].values(), state.w[e.k].values());
        add_scaled(&mut big[e.i], 0.5 * e.value, &product(grid, vj, vk, true));
        add_scaled(&mut rate[e.i], 0.5 * e.value, &product(grid, wj, vk, true));
        add_scaled(&mut rate[e.i], 0.5 * e.value, &product(grid, vj, wk, true));
    }
    let wrap = |xs: Vec<Vec<f64>>| {
        xs.into_iter()
            .map(|x| ScalarField::from_values(grid, x))
            .collect::<Result<Vec<_>>>()
    };
    Ok((wrap(big)?, wrap(rate)?))
}

/// Sources of the linear equations for the pieces of `V`.
#[derive(Clone, Debug)]
pub struct AuxSources {
    /// `1/2 N_i^{jk} (v_j F_k + v_k F_j)`.
    pub cubic: Vec<ScalarField>,
    /// `-1/2 m^2 N_i^{jk} v_j v_k`.
    pub mass: Vec<ScalarField>,
    /// `S^g_i`, `g = 0..4`, with `M_i^{jk ab} Q_ab(v_j, v_k) = d_g S^g_i`.
    pub currents: [Vec<ScalarField>; 4],
}

impl AuxSources {
    /// `M Q_ab(v, v)` reassembled as `d_g S^g`, using `d_t S^0` supplied
    /// by the caller.
    pub fn divergence(&self, grid: &Grid, i: usize, dt_s0: &[f64]) -> Vec<f64> {
        let mut out = dt_s0.to_vec();
        for (a, axis) in Axis::ALL.iter().enumerate() {
            let spec = grid.transform(self.currents[a + 1][i].values());
            let d = grid.inverse_transform(grid.differentiate_spectrum(&spec, *axis));
            add_scaled(&mut out, 1.0, &d);
        }
        out
    }
}

/// Sources evaluated from `state`, with or without dealiasing the products.
pub fn aux_sources_with(
    state: &FieldState,
    couplings: &CouplingTensors,
    dealias: bool,
) -> Result<AuxSources> {
    if couplings.species() != state.species() {
        return Err(Error::InvalidParameter("species count mismatch".into()));
    }
    let grid = state.grid();
    let species = state.species();
    let len = grid.len();
    let m2 = state.m * state.m;
    let zeros = || vec![vec![0.0; len]; species];
    let mut cubic = zeros();
    let mut mass = zeros();
    let mut currents = [zeros(), zeros(), zeros(), zeros()];

    let has_n = couplings.n_entries().next().is_some();
    if has_n {
        let f = if dealias {
            assemble_rhs(state, couplings)?
                .into_iter()
                .map(ScalarField::into_values)
                .collect::<Vec<_>>()
        } else {
            let g: Vec<[Vec<f64>; 3]> = state.v.iter().map(|v| grid.gradient(v.values())).collect();
            let spatial: Vec<[&[f64]; 3]> = g
                .iter()
                .map(|x| [x[0].as_slice(), x[1].as_slice(), x[2].as_slice()])
                .collect();
            let rates: Vec<&[f64]> = state.w.iter().map(|w| w.values()).collect();
            let mut out = zeros();
            crate::model::accumulate_source(&mut out, couplings, &rates, &spatial);
            out
        };
        for e in couplings.n_entries() {
            let (vj, vk) = (state.v[e.j].values(), state.v[e.k].values());
            add_scaled(
                &mut cubic[e.i],
                0.5 * e.value,
                &product(grid, vj, &f[e.k], dealias),
            );
            add_scaled(
                &mut cubic[e.i],
                0.5 * e.value,
                &product(grid, vk, &f[e.j], dealias),
            );
            if m2 != 0.0 {
                add_scaled(
                    &mut mass[e.i],
                    -0.5 * m2 * e.value,
                    &product(grid, vj, vk, dealias),
                );
            }
        }
    }

    if couplings.m_entries().next().is_some() {
        let grads: Vec<[Vec<f64>; 3]> = state.v.iter().map(|v| grid.gradient(v.values())).collect();
        let part = |k: usize, mu: usize| -> &[f64] {
            if mu == 0 {
                state.w[k].values()
            } else {
                &grads[k][mu - 1]
            }
        };
        for e in couplings.m_entries() {
            let vj = state.v[e.j].values();
            add_scaled(
                &mut currents[e.alpha][e.i],
                e.value,
                &product(grid, vj, part(e.k, e.beta), dealias),
            );
            add_scaled(
                &mut currents[e.beta][e.i],
                -e.value,
                &product(grid, vj, part(e.k, e.alpha), dealias),
            );
        }
    }

    let wrap = |xs: Vec<Vec<f64>>| -> Result<Vec<ScalarField>> {
        xs.into_iter()
            .map(|x| ScalarField::from_values(grid, x))
            .collect()
    };
    let [c0, c1, c2, c3] = currents;
    Ok(AuxSources {
        cubic: wrap(cubic)?,
        mass: wrap(mass)?,
        currents: [wrap(c0)?, wrap(c1)?, wrap(c2)?, wrap(c3)?],
    })
}

/// [`aux_sources_with`] with dealiased products.
pub fn aux_sources(state: &FieldState, couplings: &CouplingTensors) -> Result<AuxSources> {
    aux_sources_with(state, couplings, true)
}

/// Right-hand side of the equation for `V_i`, dealiased.
pub fn transformed_rhs(state: &FieldState, couplings: &CouplingTensors) -> Result<Vec<Vec<f64>>> {
    let src = aux_sources(state, couplings)?;
    let m_only = couplings.without_n();
    let f_m = assemble_rhs(state, &m_only)?;
    Ok((0..state.species())
        .map(|i| {
            let mut out = f_m[i].values().to_vec();
            add_scaled(&mut out, 1.0, src.cubic[i].values());
            add_scaled(&mut out, 1.0, src.mass[i].values());
            out
        })
        .collect())
}

/// The pieces of `V`, each stored as a value/rate pair per species.
#[derive(Clone, Debug)]
pub struct AuxiliaryState {
    pub t: f64,
    pub m: f64,
    /// Cubic piece, carrying the data of `V`.
    pub vc: FieldState,
    /// Mass piece.
    pub vm: FieldState,
    /// `V^g` for `g = 0..4`.
    pub vn: [FieldState; 4],
    /// Homogeneous piece with data `(0, -S^0(t0))`.
    pub hom: FieldState,
}

impl AuxiliaryState {
    /// Data at the time of `initial`.
    pub fn new(initial: &FieldState, couplings: &CouplingTensors) -> Result<Self> {
        let grid = initial.grid();
        let (t, m, n0) = (initial.t, initial.m, initial.species());
        let (big, rate) = transform_v(initial, couplings)?;
        let zero = FieldState::zeros(grid, n0, t, m)?;
        let src = aux_sources(initial, couplings)?;
        let hom = FieldState::new(
            grid,
            t,
            m,
            vec![ScalarField::zeros(grid); n0],
            src.currents[0].iter().map(|s| s.scaled(-1.0)).collect(),
        )?;
        Ok(AuxiliaryState {
            t,
            m,
            vc: FieldState::new(grid, t, m, big, rate)?,
            vm: zero.clone(),
            vn: [zero.clone(), zero.clone(), zero.clone(), zero],
            hom,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.vc.grid()
    }

    fn parts_mut(&mut self) -> impl Iterator<Item = &mut FieldState> {
        let [a, b, c, d] = &mut self.vn;
        [&mut self.vc, &mut self.vm, a, b, c, d, &mut self.hom].into_iter()
    }

    /// `V_c + V_m + V_h + d_t V^0 + d_a V^a` for species `i`.
    pub fn reassemble(&self, i: usize) -> Vec<f64> {
        let grid = self.grid();
        let mut out = self.vc.v[i].values().to_vec();
        add_scaled(&mut out, 1.0, self.vm.v[i].values());
        add_scaled(&mut out, 1.0, self.hom.v[i].values());
        add_scaled(&mut out, 1.0, self.vn[0].w[i].values());
        for (a, axis) in Axis::ALL.iter().enumerate() {
            let spec = grid.transform(self.vn[a + 1].v[i].values());
            let d = grid.inverse_transform(grid.differentiate_spectrum(&spec, *axis));
            add_scaled(&mut out, 1.0, &d);
        }
        out
    }
}

/// `d_t w = lap v - m^2 v + F` for every species.
fn acceleration(state: &FieldState, couplings: &CouplingTensors) -> Result<Vec<Vec<f64>>> {
    let grid = state.grid();
    let f = assemble_rhs(state, couplings)?;
    let m2 = state.m * state.m;
    Ok(state
        .v
        .iter()
        .zip(&f)
        .map(|(v, fi)| {
            let lap = grid.laplacian(v.values());
            lap.iter()
                .zip(v.values())
                .zip(fi.values())
                .map(|((l, x), s)| l - m2 * x + s)
                .collect()
        })
        .collect())
}

/// Cubic Hermite interpolation of a state between two saved states: `v`
/// from `(v, w)` and `w` from `(w, d_t w)`.
struct Segment<'a> {
    a: &'a FieldState,
    b: &'a FieldState,
    acc_a: Vec<Vec<f64>>,
    acc_b: Vec<Vec<f64>>,
}

impl<'a> Segment<'a> {
    fn new(a: &'a FieldState, b: &'a FieldState, couplings: &CouplingTensors) -> Result<Self> {
        Ok(Segment {
            a,
            b,
            acc_a: acceleration(a, couplings)?,
            acc_b: acceleration(b, couplings)?,
        })
    }

    fn at(&self, t: f64) -> Result<FieldState> {
        let h = self.b.t - self.a.t;
        let th = (t - self.a.t) / h;
        let (t2, t3) = (th * th, th * th * th);
        let c = [
            2.0 * t3 - 3.0 * t2 + 1.0,
            (t3 - 2.0 * t2 + th) * h,
            -2.0 * t3 + 3.0 * t2,
            (t3 - t2) * h,
        ];
        let grid = self.a.grid();
        let mix = |p0: &[f64], d0: &[f64], p1: &[f64], d1: &[f64]| -> Vec<f64> {
            (0..p0.len())
                .into_par_iter()
                .map(|k| c[0] * p0[k] + c[1] * d0[k] + c[2] * p1[k] + c[3] * d1[k])
                .collect()
        };
        let n0 = self.a.species();
        let v = (0..n0)
            .map(|i| {
                ScalarField::from_values(
                    grid,
                    mix(
                        self.a.v[i].values(),
                        self.a.w[i].values(),
                        self.b.v[i].values(),
                        self.b.w[i].values(),
                    ),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let w = (0..n0)
            .map(|i| {
                ScalarField::from_values(
                    grid,
                    mix(
                        self.a.w[i].values(),
                        &self.acc_a[i],
                        self.b.w[i].values(),
                        &self.acc_b[i],
                    ),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        FieldState::new(grid, t, self.a.m, v, w)
    }
}

/// Advances `aux` from `a.t` to `b.t` in `substeps` Strang steps: half
/// linear flow, a kick by the sources at the substep midpoint, half linear
/// flow. `v` at the midpoints is Hermite-interpolated between `a` and `b`.
pub fn coevolve_interval(
    aux: &AuxiliaryState,
    a: &FieldState,
    b: &FieldState,
    couplings: &CouplingTensors,
    substeps: usize,
) -> Result<AuxiliaryState> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be >= 1".into()));
    }
    let slack = 1e-9 * a.t.abs().max(1.0);
    if (aux.t - a.t).abs() > slack {
        return Err(Error::Buffer(format!(
            "auxiliary state at t = {} but interval starts at {}",
            aux.t, a.t
        )));
    }
    if !(b.t > a.t) {
        return Err(Error::Buffer(format!("empty interval [{}, {}]", a.t, b.t)));
    }
    if a.grid() != aux.grid() || b.grid() != aux.grid() {
        return Err(Error::GridMismatch);
    }
    if a.m != aux.m || b.m != aux.m {
        return Err(Error::Metadata(
            "mass differs between auxiliary and primary states".into(),
        ));
    }
    let seg = Segment::new(a, b, couplings)?;
    let h = (b.t - a.t) / substeps as f64;
    let half = LinearFlow::new(aux.grid(), aux.m, 0.5 * h)?;
    let mut out = aux.clone();
    for k in 0..substeps {
        let mid = seg.at(a.t + (k as f64 + 0.5) * h)?;
        let src = aux_sources(&mid, couplings)?;
        for p in out.parts_mut() {
            half.apply(p)?;
        }
        let kick = |p: &mut FieldState, s: &[ScalarField]| {
            for (w, f) in p.w.iter_mut().zip(s) {
                add_scaled(w.values_mut(), h, f.values());
            }
        };
        kick(&mut out.vc, &src.cubic);
        kick(&mut out.vm, &src.mass);
        for g in 0..4 {
            kick(&mut out.vn[g], &src.currents[g]);
        }
        for p in out.parts_mut() {
            half.apply(p)?;
        }
    }
    // Pin the clocks to the primary states.
    out.t = b.t;
    for p in out.parts_mut() {
        p.t = b.t;
    }
    Ok(out)
}

/// [`coevolve_interval`] over `[aux.t, aux.t + save_dt]` from the buffer.
pub fn coevolve_step(
    aux: &AuxiliaryState,
    buffer: &SnapshotBuffer,
    couplings: &CouplingTensors,
    substeps: usize,
) -> Result<AuxiliaryState> {
    let a = buffer.get(aux.t)?;
    let b = buffer.get(aux.t + buffer.save_dt())?;
    coevolve_interval(aux, a, b, couplings, substeps)
}

/// Largest over species of `||V_i - (V_c + V_m + V_h + d_g V^g)_i|| / max(||V_i||, 1e-14)`.
pub fn decomposition_residual(
    aux: &AuxiliaryState,
    state: &FieldState,
    couplings: &CouplingTensors,
) -> Result<f64> {
    if (aux.t - state.t).abs() > 1e-9 * state.t.abs().max(1.0) {
        return Err(Error::Metadata(format!(
            "auxiliary state at t = {}, primary at t = {}",
            aux.t, state.t
        )));
    }
    if aux.m != state.m {
        return Err(Error::Metadata("mass mismatch".into()));
    }
    if aux.grid() != state.grid() {
        return Err(Error::GridMismatch);
    }
    let (big, _) = transform_v(state, couplings)?;
    let grid = state.grid();
    let mut worst = 0.0f64;
    for (i, vi) in big.iter().enumerate() {
        let sum = aux.reassemble(i);
        let diff = ScalarField::from_values(
            grid,
            vi.values().iter().zip(&sum).map(|(a, b)| a - b).collect(),
        )?;
        worst = worst.max(diff.l2_norm() / vi.l2_norm().max(1e-14));
    }
    Ok(worst)
}

/// Which field is tested against the transformed equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualTarget {
    /// `V`, the transformed unknown.
    Transformed,
    /// `v` itself; the missing `Q0` term then shows up in the residual.
    Untransformed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KgResidual {
    /// `||R||_{L^2}`.
    pub absolute: f64,
    /// `||R|| / ||(m^2 - lap) U||`.
    pub relative: f64,
}

/// `psi(z) = 2 (1 - cos z) / z^2`, continuous at 0.
fn psi(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 - z * z / 12.0
    } else {
        2.0 * (1.0 - z.cos()) / (z * z)
    }
}

/// Residual of species `i` in `-box V + m^2 V = G` at time `t`, using the
/// snapshots at `t - h`, `t`, `t + h` (`h = save_dt`).
///
/// The time derivative is differenced exactly for the linear part: per
/// Fourier mode `R = [U(t+h) + U(t-h) - 2 cos(h xi) U(t)] / h^2 - psi(h xi) G(t)`,
/// which vanishes for free solutions and is `O(h^2)` in the smoothness of
/// the source otherwise.
pub fn kg_residual(
    buffer: &SnapshotBuffer,
    t: f64,
    i: usize,
    couplings: &CouplingTensors,
    target: ResidualTarget,
) -> Result<KgResidual> {
    let [prev, cur, next] = buffer.triple(t)?;
    if i >= cur.species() {
        return Err(Error::InvalidParameter(format!("species {i} out of range")));
    }
    let h = buffer.save_dt();
    let field = |s: &FieldState| -> Result<Vec<f64>> {
        Ok(match target {
            ResidualTarget::Transformed => transform_v(s, couplings)?.0[i].values().to_vec(),
            ResidualTarget::Untransformed => s.v[i].values().to_vec(),
        })
    };
    let grid = cur.grid();
    let (up, u0, un) = (field(prev)?, field(cur)?, field(next)?);
    let g = transformed_rhs(cur, couplings)?;
    let (sp, s0, sn, sg) = (
        grid.transform(&up),
        grid.transform(&u0),
        grid.transform(&un),
        grid.transform(&g[i]),
    );
    let m = cur.m;
    let mut res = Vec::with_capacity(grid.len());
    let mut op = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let xi2 = grid.kappa_sq(idx) + m * m;
        let xi = xi2.sqrt();
        let z = h * xi;
        res.push((sp[idx] + sn[idx] - s0[idx] * (2.0 * z.cos())) / (h * h) - sg[idx] * psi(z));
        op.push(s0[idx] * xi2);
    }
    let r = grid.inverse_transform(res);
    let o = grid.inverse_transform(op);
    let dv = grid.cell_volume();
    let norm = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() * dv).sqrt();
    let absolute = norm(&r);
    let scale = norm(&o);
    Ok(KgResidual {
        absolute,
        relative: if scale > 0.0 {
            absolute / scale
        } else {
            absolute
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{evolve, linear_propagator, Schedule, StepParams};
    use crate::model::{make_initial_data, BumpSpec, T0};
    use std::f64::consts::PI;

    fn couplings(n: f64, m: f64) -> CouplingTensors {
        let mut c = CouplingTensors::new(2);
        if n != 0.0 {
            c.add_n(0, 0, 1, n).unwrap();
            c.add_n(1, 1, 1, -0.5 * n).unwrap();
        }
        if m != 0.0 {
            c.add_m(0, 1, 0, 0, 2, m).unwrap();
            c.add_m(1, 0, 1, 1, 3, 0.5 * m).unwrap();
        }
        c
    }

    fn low_mode_state(m: f64) -> FieldState {
        let l = 2.0 * PI;
        let g = Grid::from_size(16, l).unwrap();
        let v0 = ScalarField::from_fn(&g, |x| 0.3 * x[0].sin() + 0.1 * x[1].cos());
        let v1 = ScalarField::from_fn(&g, |x| 0.2 * (x[2] + x[0]).cos());
        let w0 = ScalarField::from_fn(&g, |x| 0.1 * x[2].cos());
        let w1 = ScalarField::from_fn(&g, |x| -0.4 * x[1].sin());
        FieldState::new(&g, T0, m, vec![v0, v1], vec![w0, w1]).unwrap()
    }

    #[test]
    fn transform_trivial_cases() {
        let s = low_mode_state(0.3);
        let (big, rate) = transform_v(&s, &couplings(0.0, 1.0)).unwrap();
        assert_eq!(big[0].values(), s.v[0].values());
        assert_eq!(rate[1].values(), s.w[1].values());
        let z = FieldState::zeros(s.grid(), 2, T0, 0.3).unwrap();
        let (big, _) = transform_v(&z, &couplings(1.0, 1.0)).unwrap();
        assert_eq!(big[0].max_abs(), 0.0);
    }

    /// Low modes: the dealiased product equals the pointwise one.
    #[test]
    fn transform_matches_pointwise_formula() {
        let s = low_mode_state(0.3);
        let c = couplings(1.0, 0.0);
        let (big, rate) = transform_v(&s, &c).unwrap();
        for p in 0..s.grid().len() {
            let (v0, v1) = (s.v[0].values()[p], s.v[1].values()[p]);
            let (w0, w1) = (s.w[0].values()[p], s.w[1].values()[p]);
            let e0 = v0 + 0.5 * v0 * v1;
            let e1 = v1 + 0.5 * (-0.5) * v1 * v1;
            assert!((big[0].values()[p] - e0).abs() < 1e-12);
            assert!((big[1].values()[p] - e1).abs() < 1e-12);
            let r0 = w0 + 0.5 * (w0 * v1 + v0 * w1);
            assert!((rate[0].values()[p] - r0).abs() < 1e-12);
        }
    }

    #[test]
    fn source_trivial_cases() {
        let s = low_mode_state(0.0);
        let src = aux_sources(&s, &couplings(1.0, 0.0)).unwrap();
        assert!(src.mass.iter().all(|f| f.max_abs() == 0.0));
        assert!(src.currents.iter().flatten().all(|f| f.max_abs() == 0.0));
        let s = low_mode_state(0.5);
        let src = aux_sources(&s, &couplings(0.0, 1.0)).unwrap();
        assert!(src
            .cubic
            .iter()
            .chain(&src.mass)
            .all(|f| f.max_abs() == 0.0));
    }

    /// One species, one mode, every product evaluated by hand at each point.
    #[test]
    fn cubic_source_pointwise_oracle() {
        let l = 2.0 * PI;
        let g = Grid::from_size(8, l).unwrap();
        let v = ScalarField::from_fn(&g, |x| 0.5 * x[0].sin());
        let w = ScalarField::from_fn(&g, |x| 0.3 * x[0].cos());
        let s = FieldState::new(&g, T0, 0.4, vec![v], vec![w]).unwrap();
        let mut c = CouplingTensors::new(1);
        c.add_n(0, 0, 0, 1.5).unwrap();
        let src = aux_sources_with(&s, &c, false).unwrap();
        for p in 0..g.len() {
            let x = g.position(p)[0];
            let (u, ut, ux) = (0.5 * x.sin(), 0.3 * x.cos(), 0.5 * x.cos());
            let f = 1.5 * (-ut * ut + ux * ux);
            let cubic = 0.5 * 1.5 * (2.0 * u * f);
            let mass = -0.5 * 0.16 * 1.5 * u * u;
            assert!((src.cubic[0].values()[p] - cubic).abs() < 1e-12);
            assert!((src.mass[0].values()[p] - mass).abs() < 1e-12);
        }
    }

    /// `d_g S^g` reproduces `M Q_ab(v, v)`.
    #[test]
    fn currents_have_the_bracket_as_divergence() {
        let s = low_mode_state(0.0);
        let c = couplings(0.0, 1.0);
        let src = aux_sources(&s, &c).unwrap();
        let f = assemble_rhs(&s, &c).unwrap();
        // d_t S^0 from a short forward step of the full evolution.
        let h = 1e-4;
        let fwd = crate::integrator::strang_step(&s, &c, StepParams::new(h, 4).unwrap()).unwrap();
        let s0f = aux_sources(&fwd, &c).unwrap();
        for i in 0..2 {
            let dt_s0: Vec<f64> = s0f.currents[0][i]
                .values()
                .iter()
                .zip(src.currents[0][i].values())
                .map(|(a, b)| (a - b) / h)
                .collect();
            let div = src.divergence(s.grid(), i, &dt_s0);
            let err = div
                .iter()
                .zip(f[i].values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-3 * f[i].max_abs().max(1e-3), "{err}");
        }
    }

    #[test]
    fn residual_zero_at_start_and_without_couplings() {
        let g = Grid::from_size(32, 16.0).unwrap();
        let spec = BumpSpec::uniform(2, 0.05, 0.02).unwrap();
        let init = make_initial_data(&g, &spec, 0.5, 4.0)
            .unwrap()
            .band_limited();
        let c = couplings(1.0, 1.0);
        let aux = AuxiliaryState::new(&init, &c).unwrap();
        assert!(decomposition_residual(&aux, &init, &c).unwrap() < 1e-12);

        let free = CouplingTensors::new(2);
        let mut aux = AuxiliaryState::new(&init, &free).unwrap();
        let mut prev = init.clone();
        for _ in 0..4 {
            let next = linear_propagator(&prev, 0.5).unwrap();
            aux = coevolve_interval(&aux, &prev, &next, &free, 1).unwrap();
            assert!(decomposition_residual(&aux, &next, &free).unwrap() < 1e-12);
            prev = next;
        }
        assert!(aux.vm.max_abs() == 0.0 && aux.vn.iter().all(|p| p.max_abs() == 0.0));
    }

    #[test]
    fn massless_mass_piece_stays_zero() {
        let g = Grid::from_size(16, 16.0).unwrap();
        let spec = BumpSpec::uniform(2, 0.05, 0.02).unwrap();
        let init = make_initial_data(&g, &spec, 0.0, 4.0)
            .unwrap()
            .band_limited();
        let c = couplings(1.0, 1.0);
        let mut aux = AuxiliaryState::new(&init, &c).unwrap();
        let mut prev = init.clone();
        for _ in 0..4 {
            let next = crate::integrator::strang_step(&prev, &c, StepParams::new(0.5, 2).unwrap())
                .unwrap();
            aux = coevolve_interval(&aux, &prev, &next, &c, 1).unwrap();
            prev = next;
        }
        assert!(aux.vm.max_abs() < 1e-14);
    }

    #[test]
    fn metadata_mismatch_rejected() {
        let s = low_mode_state(0.3);
        let c = couplings(1.0, 0.0);
        let aux = AuxiliaryState::new(&s, &c).unwrap();
        let mut later = s.clone();
        later.t += 1.0;
        assert!(decomposition_residual(&aux, &later, &c).is_err());
        assert!(coevolve_interval(&aux, &later, &s, &c, 1).is_err());
    }

    fn run_buffer(c: &CouplingTensors, save_dt: f64, dt: f64, t_end: f64) -> SnapshotBuffer {
        let g = Grid::from_size(32, 24.0).unwrap();
        let spec = BumpSpec::uniform(2, 0.05, 0.02).unwrap();
        let init = make_initial_data(&g, &spec, 0.5, t_end)
            .unwrap()
            .band_limited();
        let mut buf = SnapshotBuffer::keep_all(save_dt).unwrap();
        let mut obs = |s: &FieldState| buf.push(s.clone());
        evolve(
            init,
            c,
            StepParams::new(dt, 2).unwrap(),
            Schedule { t_end, save_dt },
            &mut [&mut obs],
        )
        .unwrap();
        buf
    }

    #[test]
    fn free_evolution_has_zero_kg_residual() {
        let c = CouplingTensors::new(2);
        let buf = run_buffer(&c, 0.25, 0.25, 3.0);
        let r = kg_residual(&buf, 2.5, 0, &c, ResidualTarget::Transformed).unwrap();
        assert!(r.relative < 1e-12, "{r:?}");
        assert!(kg_residual(&buf, 3.0, 0, &c, ResidualTarget::Transformed).is_err());
    }

    #[test]
    fn q0_is_removed_by_the_transform() {
        let c = couplings(1.0, 0.0);
        let buf = run_buffer(&c, 0.25, 0.125, 3.5);
        let with = kg_residual(&buf, 3.0, 0, &c, ResidualTarget::Transformed).unwrap();
        let without = kg_residual(&buf, 3.0, 0, &c, ResidualTarget::Untransformed).unwrap();
        assert!(
            with.absolute * 10.0 < without.absolute,
            "{with:?} {without:?}"
        );
    }
}
