//! Observables computed from evolved states: energies, norms, vector
//! fields, hyperboloidal energies, decay fits and the energy inequality.

mod buffer;
pub mod fit;
pub mod hyperboloid;
pub mod vector_fields;

pub use buffer::SnapshotBuffer;
pub use fit::{decay_fit, decay_model, energy_inequality_check, DecayFit, InequalityReport};
pub use hyperboloid::{
    hyperboloid_window, hyperboloidal_energy, HyperboloidAccumulator, HyperboloidEnergy,
};
pub use vector_fields::{apply_vector_field, apply_word, VectorField};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::FieldState;
use crate::spectral::{check_mass, Grid, ScalarField};

/// Relative level below which a value counts as outside the support.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-10;

/// `int |u_t|^2 + |grad u|^2 + m^2 u^2 dx`, evaluated in Fourier space with
/// the exact symbol `xi_m^2`, so the exact linear flow conserves it to
/// round-off.
pub fn energy_of(u: &ScalarField, u_t: &ScalarField, m: f64) -> Result<f64> {
    check_mass(m)?;
    if u.grid() != u_t.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = u.grid();
    let uh = grid.transform(u.values());
    let wh = grid.transform(u_t.values());
    let n3 = grid.len() as f64;
    // Collected before summing so the result does not depend on scheduling.
    let terms: Vec<f64> = uh
        .par_iter()
        .zip(wh.par_iter())
        .enumerate()
        .map(|(idx, (a, b))| b.norm_sqr() + (grid.kappa_sq(idx) + m * m) * a.norm_sqr())
        .collect();
    let sum: f64 = terms.iter().sum();
    let l3 = grid.spec().box_length.powi(3);
    Ok(l3 * sum / (n3 * n3))
}

/// `E_m(t, v_i)` of species `i`.
pub fn flat_energy(state: &FieldState, i: usize) -> Result<f64> {
    let (v, w) = species(state, i)?;
    energy_of(v, w, state.m)
}

fn species(state: &FieldState, i: usize) -> Result<(&ScalarField, &ScalarField)> {
    if i >= state.species() {
        return Err(Error::InvalidParameter(format!(
            "species {i} out of range (have {})",
            state.species()
        )));
    }
    Ok((&state.v[i], &state.w[i]))
}

/// Largest `|x|` at which `|u| > threshold * max |u|`; zero for a zero field.
pub fn support_radius(u: &ScalarField, threshold: f64) -> f64 {
    let peak = u.max_abs();
    if peak == 0.0 {
        return 0.0;
    }
    let grid = u.grid();
    u.values()
        .par_iter()
        .enumerate()
        .filter(|(_, x)| x.abs() > threshold * peak)
        .map(|(idx, _)| grid.radius(idx))
        .reduce(|| 0.0, f64::max)
}

/// Per-species observables at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeciesRecord {
    pub energy: f64,
    pub l2: f64,
    pub sup: f64,
    pub support_radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub species: Vec<SpeciesRecord>,
    /// `||F_i||_{L^2}` when requested.
    pub source_l2: Option<Vec<f64>>,
}

impl DiagnosticsRecord {
    pub fn of_state(state: &FieldState, support_threshold: f64) -> Result<Self> {
        let species = (0..state.species())
            .map(|i| {
                let v = &state.v[i];
                Ok(SpeciesRecord {
                    energy: flat_energy(state, i)?,
                    l2: v.l2_norm(),
                    sup: v.max_abs(),
                    support_radius: support_radius(v, support_threshold),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DiagnosticsRecord {
            t: state.t,
            species,
            source_l2: None,
        })
    }

    pub fn with_sources(mut self, sources: &[ScalarField]) -> Self {
        self.source_l2 = Some(sources.iter().map(|f| f.l2_norm()).collect());
        self
    }

    pub fn is_valid(&self) -> bool {
        self.t.is_finite()
            && self.species.iter().all(|r| {
                [r.energy, r.l2, r.sup, r.support_radius]
                    .iter()
                    .all(|x| x.is_finite() && *x >= 0.0)
            })
            && self
                .source_l2
                .as_ref()
                .map_or(true, |s| s.iter().all(|x| x.is_finite() && *x >= 0.0))
    }
}

/// Points of `grid` inside the cone `|x| <= t - 1`, as flat indices.
pub fn cone_points(grid: &Grid, t: f64) -> Vec<usize> {
    (0..grid.len())
        .filter(|&p| grid.radius(p) <= t - 1.0)
        .collect()
}
