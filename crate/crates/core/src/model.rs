//! The coupled system: coupling tensors, null forms, right-hand side and
//! compactly supported initial data.
//!
//! Conventions: `eta = diag(-1, 1, 1, 1)`, spacetime index 0 is time,
//! `Q0(u, w) = -u_t w_t + grad u . grad w` and
//! `Q_ab(u, w) = d_a u d_b w - d_b u d_a w`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectral::{check_mass, Grid, ScalarField};

/// Initial time of every evolution.
pub const T0: f64 = 2.0;

/// Sparse coefficients `N_i^{jk}` and `M_i^{jk alpha beta}`.
///
/// `M` entries are stored with `alpha < beta`; an entry supplied as
/// `(beta, alpha)` is folded in with the opposite sign and `alpha == beta`
/// entries are dropped since `Q_{alpha alpha}` vanishes.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CouplingTensors {
    species: usize,
    n: BTreeMap<(usize, usize, usize), f64>,
    m: BTreeMap<(usize, usize, usize, usize, usize), f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NullEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BracketEntry {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub alpha: usize,
    pub beta: usize,
    pub value: f64,
}

impl CouplingTensors {
    pub fn new(species: usize) -> Self {
        CouplingTensors {
            species,
            ..Default::default()
        }
    }

    pub fn species(&self) -> usize {
        self.species
    }

    fn check_species(&self, idx: &[usize]) -> Result<()> {
        match idx.iter().find(|&&s| s >= self.species) {
            Some(s) => Err(Error::InvalidParameter(format!(
                "species index {s} out of range for {} species",
                self.species
            ))),
            None => Ok(()),
        }
    }

    /// Adds `value` to `N_i^{jk}`.
    pub fn add_n(&mut self, i: usize, j: usize, k: usize, value: f64) -> Result<()> {
        self.check_species(&[i, j, k])?;
        if !value.is_finite() {
            return Err(Error::InvalidParameter("non-finite coupling".into()));
        }
        *self.n.entry((i, j, k)).or_insert(0.0) += value;
        Ok(())
    }

    /// Adds `value` to `M_i^{jk alpha beta}`.
    pub fn add_m(
        &mut self,
        i: usize,
        j: usize,
        k: usize,
        alpha: usize,
        beta: usize,
        value: f64,
    ) -> Result<()> {
        self.check_species(&[i, j, k])?;
        if alpha > 3 || beta > 3 {
            return Err(Error::InvalidParameter(format!(
                "spacetime index ({alpha}, {beta}) out of range"
            )));
        }
        if !value.is_finite() {
            return Err(Error::InvalidParameter("non-finite coupling".into()));
        }
        if alpha == beta {
            return Ok(());
        }
        let (a, b, v) = if alpha < beta {
            (alpha, beta, value)
        } else {
            (beta, alpha, -value)
        };
        *self.m.entry((i, j, k, a, b)).or_insert(0.0) += v;
        Ok(())
    }

    pub fn n_entries(&self) -> impl Iterator<Item = NullEntry> + '_ {
        self.n
            .iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|(&(i, j, k), &value)| NullEntry { i, j, k, value })
    }

    pub fn m_entries(&self) -> impl Iterator<Item = BracketEntry> + '_ {
        self.m
            .iter()
            .filter(|(_, &v)| v != 0.0)
            .map(|(&(i, j, k, alpha, beta), &value)| BracketEntry {
                i,
                j,
                k,
                alpha,
                beta,
                value,
            })
    }

    pub fn is_zero(&self) -> bool {
        self.n_entries().next().is_none() && self.m_entries().next().is_none()
    }

    pub fn without_n(&self) -> Self {
        CouplingTensors {
            species: self.species,
            n: BTreeMap::new(),
            m: self.m.clone(),
        }
    }

    pub fn without_m(&self) -> Self {
        CouplingTensors {
            species: self.species,
            n: self.n.clone(),
            m: BTreeMap::new(),
        }
    }

    /// Whether every `M` entry uses spatial indices only, in which case the
    /// right-hand side does not depend on time derivatives through `M`.
    pub fn m_is_spatial(&self) -> bool {
        self.m_entries().all(|e| e.alpha != 0 && e.beta != 0)
    }
}

/// All species' values and time derivatives at one instant.
#[derive(Clone, Debug)]
pub struct FieldState {
    pub t: f64,
    pub m: f64,
    pub v: Vec<ScalarField>,
    pub w: Vec<ScalarField>,
    grid: Grid,
}

impl FieldState {
    pub fn new(
        grid: &Grid,
        t: f64,
        m: f64,
        v: Vec<ScalarField>,
        w: Vec<ScalarField>,
    ) -> Result<Self> {
        check_mass(m)?;
        if v.len() != w.len() {
            return Err(Error::InvalidParameter(format!(
                "{} value fields but {} rate fields",
                v.len(),
                w.len()
            )));
        }
        if v.iter().chain(&w).any(|f| f.grid() != grid) {
            return Err(Error::GridMismatch);
        }
        Ok(FieldState {
            t,
            m,
            v,
            w,
            grid: grid.clone(),
        })
    }

    pub fn zeros(grid: &Grid, species: usize, t: f64, m: f64) -> Result<Self> {
        let z = ScalarField::zeros(grid);
        FieldState::new(grid, t, m, vec![z.clone(); species], vec![z; species])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn species(&self) -> usize {
        self.v.len()
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(&self.w).all(|f| f.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.v
            .iter()
            .chain(&self.w)
            .map(|f| f.max_abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_rate(&self) -> f64 {
        self.w.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
    }

    /// Multiplies every field by `factor`.
    pub fn scaled(&self, factor: f64) -> FieldState {
        FieldState {
            t: self.t,
            m: self.m,
            v: self.v.iter().map(|f| f.scaled(factor)).collect(),
            w: self.w.iter().map(|f| f.scaled(factor)).collect(),
            grid: self.grid.clone(),
        }
    }

    /// 2/3-rule projection of every field.
    pub fn band_limited(&self) -> FieldState {
        FieldState {
            t: self.t,
            m: self.m,
            v: self.v.iter().map(|f| f.dealiased()).collect(),
            w: self.w.iter().map(|f| f.dealiased()).collect(),
            grid: self.grid.clone(),
        }
    }

    /// Largest difference over all fields.
    pub fn max_abs_diff(&self, other: &FieldState) -> Result<f64> {
        if self.grid != other.grid || self.species() != other.species() {
            return Err(Error::GridMismatch);
        }
        let mut d: f64 = 0.0;
        for (a, b) in self
            .v
            .iter()
            .chain(&self.w)
            .zip(other.v.iter().chain(&other.w))
        {
            d = d.max(a.sub(b)?.max_abs());
        }
        Ok(d)
    }

    /// Fraction of `max |v_i|` found outside radius
    /// `(t - t0) + 1 + 3 dx`, maximised over species.
    pub fn outside_cone_fraction(&self, t0: f64) -> f64 {
        let radius = (self.t - t0) + 1.0 + 3.0 * self.grid.dx();
        let mut worst: f64 = 0.0;
        for f in &self.v {
            let peak = f.max_abs();
            if peak == 0.0 {
                continue;
            }
            let outside = f
                .values()
                .iter()
                .enumerate()
                .filter(|(idx, _)| self.grid.radius(*idx) > radius)
                .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
            worst = worst.max(outside / peak);
        }
        worst
    }
}

/// First derivatives of every species: index 0 holds `d_t v = w`,
/// indices 1..=3 the spatial gradient.
#[derive(Clone, Debug)]
pub struct SpacetimeGradients {
    pub d: Vec<[Vec<f64>; 4]>,
}

impl SpacetimeGradients {
    pub fn of_state(state: &FieldState) -> Self {
        let grid = state.grid();
        let d = state
            .v
            .iter()
            .zip(&state.w)
            .map(|(v, w)| {
                let [g1, g2, g3] = grid.gradient(v.values());
                [w.values().to_vec(), g1, g2, g3]
            })
            .collect();
        SpacetimeGradients { d }
    }
}

/// Accumulates the null-form source for every species into `out`.
///
/// `rates[j]` supplies `d_t v_j`; `spatial` supplies `d_a v_j` (frozen
/// spatial gradients). No dealiasing happens here.
pub(crate) fn accumulate_source(
    out: &mut [Vec<f64>],
    couplings: &CouplingTensors,
    rates: &[&[f64]],
    spatial: &[[&[f64]; 3]],
) {
    let comp = |j: usize, alpha: usize| -> &[f64] {
        if alpha == 0 {
            rates[j]
        } else {
            spatial[j][alpha - 1]
        }
    };
    for e in couplings.n_entries() {
        let (wj, wk) = (rates[e.j], rates[e.k]);
        let (gj, gk) = (&spatial[e.j], &spatial[e.k]);
        out[e.i].par_iter_mut().enumerate().for_each(|(p, o)| {
            *o += e.value
                * (-wj[p] * wk[p]
                    + gj[0][p] * gk[0][p]
                    + gj[1][p] * gk[1][p]
                    + gj[2][p] * gk[2][p]);
        });
    }
    for e in couplings.m_entries() {
        let (aj, bj) = (comp(e.j, e.alpha), comp(e.j, e.beta));
        let (ak, bk) = (comp(e.k, e.alpha), comp(e.k, e.beta));
        out[e.i].par_iter_mut().enumerate().for_each(|(p, o)| {
            *o += e.value * (aj[p] * bk[p] - bj[p] * ak[p]);
        });
    }
}

/// Right-hand side from precomputed gradients, dealiased.
pub fn rhs_from_gradients(
    grid: &Grid,
    grads: &SpacetimeGradients,
    couplings: &CouplingTensors,
) -> Vec<ScalarField> {
    let species = grads.d.len();
    let mut out = vec![vec![0.0; grid.len()]; species];
    let rates: Vec<&[f64]> = grads.d.iter().map(|d| d[0].as_slice()).collect();
    let spatial: Vec<[&[f64]; 3]> = grads
        .d
        .iter()
        .map(|d| [d[1].as_slice(), d[2].as_slice(), d[3].as_slice()])
        .collect();
    accumulate_source(&mut out, couplings, &rates, &spatial);
    out.into_iter()
        .map(|f| {
            if f.iter().all(|&x| x == 0.0) {
                ScalarField::from_values_unchecked(grid, f)
            } else {
                ScalarField::from_values_unchecked(grid, grid.dealias(&f))
            }
        })
        .collect()
}

/// `F_i = N_i^{jk} Q0(v_j, v_k) + M_i^{jk alpha beta} Q_{alpha beta}(v_j, v_k)`.
pub fn assemble_rhs(state: &FieldState, couplings: &CouplingTensors) -> Result<Vec<ScalarField>> {
    if couplings.species() != state.species() {
        return Err(Error::InvalidParameter(format!(
            "couplings for {} species, state has {}",
            couplings.species(),
            state.species()
        )));
    }
    let grads = SpacetimeGradients::of_state(state);
    Ok(rhs_from_gradients(state.grid(), &grads, couplings))
}

fn same_grid(fields: &[&ScalarField]) -> Result<Grid> {
    let grid = fields[0].grid().clone();
    if fields.iter().any(|f| f.grid() != &grid) {
        return Err(Error::GridMismatch);
    }
    Ok(grid)
}

/// `Q0(u, w) = -u_t w_t + sum_a d_a u d_a w`, dealiased.
pub fn eval_q0(
    u: &ScalarField,
    u_t: &ScalarField,
    w: &ScalarField,
    w_t: &ScalarField,
) -> Result<ScalarField> {
    let grid = same_grid(&[u, u_t, w, w_t])?;
    let gu = grid.gradient(u.values());
    let gw = grid.gradient(w.values());
    let raw: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            -u_t.values()[p] * w_t.values()[p]
                + gu[0][p] * gw[0][p]
                + gu[1][p] * gw[1][p]
                + gu[2][p] * gw[2][p]
        })
        .collect();
    Ok(ScalarField::from_values_unchecked(
        &grid,
        grid.dealias(&raw),
    ))
}

/// `Q_{alpha beta}(u, w) = d_alpha u d_beta w - d_beta u d_alpha w`, with
/// `d_0` read from the supplied time derivatives. Zero when `alpha == beta`.
pub fn eval_qab(
    u: &ScalarField,
    u_t: &ScalarField,
    w: &ScalarField,
    w_t: &ScalarField,
    alpha: usize,
    beta: usize,
) -> Result<ScalarField> {
    let grid = same_grid(&[u, u_t, w, w_t])?;
    if alpha > 3 || beta > 3 {
        return Err(Error::InvalidParameter(format!(
            "spacetime index ({alpha}, {beta}) out of range"
        )));
    }
    if alpha == beta {
        return Ok(ScalarField::zeros(&grid));
    }
    let [gu1, gu2, gu3] = grid.gradient(u.values());
    let [gw1, gw2, gw3] = grid.gradient(w.values());
    let du: [&[f64]; 4] = [u_t.values(), &gu1, &gu2, &gu3];
    let dw: [&[f64]; 4] = [w_t.values(), &gw1, &gw2, &gw3];
    let raw: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|p| du[alpha][p] * dw[beta][p] - du[beta][p] * dw[alpha][p])
        .collect();
    Ok(ScalarField::from_values_unchecked(
        &grid,
        grid.dealias(&raw),
    ))
}

/// `chi(r) = exp(1 - 1/(1 - r^2))` inside the unit ball, zero outside.
pub fn bump_profile(r: f64) -> f64 {
    if r < 1.0 {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

/// Per-species amplitudes of `(v_i, d_t v_i)` at `t0`, each a multiple of
/// the unit bump.
#[derive(Clone, Debug, PartialEq)]
pub struct BumpSpec {
    pub value_amplitude: Vec<f64>,
    pub rate_amplitude: Vec<f64>,
}

impl BumpSpec {
    pub const MAX_AMPLITUDE: f64 = 0.1;

    pub fn new(value_amplitude: Vec<f64>, rate_amplitude: Vec<f64>) -> Result<Self> {
        if value_amplitude.len() != rate_amplitude.len() {
            return Err(Error::InvalidParameter(
                "amplitude lists differ in length".into(),
            ));
        }
        if let Some(e) = value_amplitude
            .iter()
            .chain(&rate_amplitude)
            .find(|e| !(e.is_finite() && e.abs() <= Self::MAX_AMPLITUDE))
        {
            return Err(Error::InvalidParameter(format!(
                "bump amplitude {e} outside the small-data range |eps| <= {}",
                Self::MAX_AMPLITUDE
            )));
        }
        Ok(BumpSpec {
            value_amplitude,
            rate_amplitude,
        })
    }

    pub fn uniform(species: usize, value: f64, rate: f64) -> Result<Self> {
        BumpSpec::new(vec![value; species], vec![rate; species])
    }

    pub fn species(&self) -> usize {
        self.value_amplitude.len()
    }
}

/// Samples the bump data at `t0 = 2`, checking the box admits `t_end`.
pub fn make_initial_data(grid: &Grid, spec: &BumpSpec, m: f64, t_end: f64) -> Result<FieldState> {
    check_mass(m)?;
    let gs = grid.spec();
    if !gs.admits_horizon(T0, t_end) {
        return Err(Error::BoxTooSmall {
            box_length: gs.box_length,
            t_end,
            required: crate::spectral::GridSpec::min_box_length(gs.n, T0, t_end),
        });
    }
    let chi = ScalarField::from_fn(grid, |x| {
        bump_profile((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt())
    });
    let v = spec
        .value_amplitude
        .iter()
        .map(|&e| chi.scaled(e))
        .collect();
    let w = spec.rate_amplitude.iter().map(|&e| chi.scaled(e)).collect();
    FieldState::new(grid, T0, m, v, w)
}
