//! Periodic-grid Fourier machinery.
//!
//! The physical box is `[-L/2, L/2)^3` sampled on `n^3` points with the
//! origin on a grid point. Spectral arrays use the natural FFT index order
//! along each axis: `0, 1, .., n/2 - 1, -n/2, .., -1`, with angular
//! wavenumber `kappa = 2 pi j / L`.
//!
//! Public transforms follow `f(x) = sum_kappa c(kappa) exp(i kappa . x)`
//! with `x` the physical coordinate. Internal helpers skip both the
//! normalisation and the phase shift since every operator here is a
//! diagonal multiplier.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Spatial axis of the periodic box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X1,
    X2,
    X3,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X1, Axis::X2, Axis::X3];

    pub fn index(self) -> usize {
        match self {
            Axis::X1 => 0,
            Axis::X2 => 1,
            Axis::X3 => 2,
        }
    }

    pub fn from_index(a: usize) -> Option<Axis> {
        match a {
            0 => Some(Axis::X1),
            1 => Some(Axis::X2),
            2 => Some(Axis::X3),
            _ => None,
        }
    }
}

/// Size parameters of the periodic cubic grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub box_length: f64,
}

impl GridSpec {
    pub fn new(n: usize, box_length: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 8, got {n}"
            )));
        }
        if !(box_length.is_finite() && box_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "box length must be positive, got {box_length}"
            )));
        }
        Ok(GridSpec { n, box_length })
    }

    pub fn dx(&self) -> f64 {
        self.box_length / self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(3)
    }

    /// Physical coordinate of 1-D index `i`.
    pub fn coordinate(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.dx()
    }

    /// Signed integer wavenumber of spectral index `j`.
    pub fn mode_number(&self, j: usize) -> i64 {
        if j < self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }

    /// Spectral index holding the signed mode number `k`.
    pub fn mode_index(&self, k: i64) -> Option<usize> {
        let half = (self.n / 2) as i64;
        if k < -half || k >= half {
            return None;
        }
        Some(if k >= 0 {
            k as usize
        } else {
            (k + self.n as i64) as usize
        })
    }

    pub fn wavenumber(&self, j: usize) -> f64 {
        2.0 * PI / self.box_length * self.mode_number(j) as f64
    }

    pub fn flat_index(&self, i0: usize, i1: usize, i2: usize) -> usize {
        (i0 * self.n + i1) * self.n + i2
    }

    pub fn split_index(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let [i0, i1, i2] = self.split_index(idx);
        [
            self.coordinate(i0),
            self.coordinate(i1),
            self.coordinate(i2),
        ]
    }

    /// Smallest box length whose half-width keeps unit-ball data evolved
    /// from `t0` to `t_end` at least two cells away from the boundary.
    pub fn min_box_length(n: usize, t0: f64, t_end: f64) -> f64 {
        (1.0 + (t_end - t0)) / (0.5 - 2.0 / n as f64)
    }

    /// `L/2 >= 1 + (t_end - t0) + 2 dx`.
    pub fn admits_horizon(&self, t0: f64, t_end: f64) -> bool {
        0.5 * self.box_length >= 1.0 + (t_end - t0) + 2.0 * self.dx() - 1e-12
    }

    /// Latest time at which unit-ball data launched at `t0` stay two cells
    /// inside the box.
    pub fn horizon(&self, t0: f64) -> f64 {
        t0 + 0.5 * self.box_length - 1.0 - 2.0 * self.dx()
    }
}

struct GridInner {
    spec: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch_len: usize,
    kappa: Vec<f64>,
    coords: Vec<f64>,
    /// 2/3-rule retention per 1-D spectral index.
    retain: Vec<bool>,
}

/// A grid together with its FFT plans. Cloning is cheap.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("spec", &self.inner.spec)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner.spec == other.inner.spec
    }
}

impl Grid {
    pub fn new(spec: GridSpec) -> Self {
        let n = spec.n;
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let kappa = (0..n).map(|j| spec.wavenumber(j)).collect();
        let coords = (0..n).map(|i| spec.coordinate(i)).collect();
        let retain = (0..n)
            .map(|j| 3 * spec.mode_number(j).unsigned_abs() < n as u64)
            .collect();
        Grid {
            inner: Arc::new(GridInner {
                spec,
                forward,
                inverse,
                scratch_len,
                kappa,
                coords,
                retain,
            }),
        }
    }

    pub fn from_size(n: usize, box_length: f64) -> Result<Self> {
        Ok(Grid::new(GridSpec::new(n, box_length)?))
    }

    pub fn spec(&self) -> GridSpec {
        self.inner.spec
    }

    pub fn n(&self) -> usize {
        self.inner.spec.n
    }

    pub fn dx(&self) -> f64 {
        self.inner.spec.dx()
    }

    pub fn len(&self) -> usize {
        self.inner.spec.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.inner.spec.cell_volume()
    }

    /// Angular wavenumbers along one axis, in spectral index order.
    pub fn kappa(&self) -> &[f64] {
        &self.inner.kappa
    }

    /// Physical coordinates along one axis.
    pub fn coords(&self) -> &[f64] {
        &self.inner.coords
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let [i0, i1, i2] = self.inner.spec.split_index(idx);
        let c = &self.inner.coords;
        [c[i0], c[i1], c[i2]]
    }

    pub fn radius(&self, idx: usize) -> f64 {
        let [a, b, c] = self.position(idx);
        (a * a + b * b + c * c).sqrt()
    }

    /// `|kappa|^2` at a flat spectral index.
    pub fn kappa_sq(&self, idx: usize) -> f64 {
        let [j0, j1, j2] = self.inner.spec.split_index(idx);
        let k = &self.inner.kappa;
        k[j0] * k[j0] + k[j1] * k[j1] + k[j2] * k[j2]
    }

    /// Whether a spectral index survives 2/3-rule truncation.
    pub fn retained(&self, idx: usize) -> bool {
        let [j0, j1, j2] = self.inner.spec.split_index(idx);
        let r = &self.inner.retain;
        r[j0] && r[j1] && r[j2]
    }

    fn fft_axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let n = self.n();
        let plan = if inverse {
            &self.inner.inverse
        } else {
            &self.inner.forward
        };
        let scratch_len = self.inner.scratch_len;
        if axis == 2 {
            data.par_chunks_mut(n).for_each_init(
                || vec![Complex64::new(0.0, 0.0); scratch_len],
                |scratch, line| plan.process_with_scratch(line, scratch),
            );
            return;
        }
        // Gather lines along `axis` into contiguous storage, transform, scatter.
        let mut lines = vec![Complex64::new(0.0, 0.0); data.len()];
        {
            let src: &[Complex64] = data;
            lines.par_chunks_mut(n).enumerate().for_each_init(
                || vec![Complex64::new(0.0, 0.0); scratch_len],
                |scratch, (line, chunk)| {
                    let (p, q) = (line / n, line % n);
                    for (i, slot) in chunk.iter_mut().enumerate() {
                        let idx = if axis == 0 {
                            (i * n + p) * n + q
                        } else {
                            (p * n + i) * n + q
                        };
                        *slot = src[idx];
                    }
                    plan.process_with_scratch(chunk, scratch);
                },
            );
        }
        data.par_chunks_mut(n * n)
            .enumerate()
            .for_each(|(i0, plane)| {
                for i1 in 0..n {
                    for i2 in 0..n {
                        plane[i1 * n + i2] = if axis == 0 {
                            lines[(i1 * n + i2) * n + i0]
                        } else {
                            lines[(i0 * n + i2) * n + i1]
                        };
                    }
                }
            });
    }

    /// Unnormalised forward transform of real samples.
    pub fn transform(&self, values: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(values.len(), self.len());
        let mut data: Vec<Complex64> = values.par_iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for axis in 0..3 {
            self.fft_axis(&mut data, axis, false);
        }
        data
    }

    /// Inverse of [`Grid::transform`], keeping the real part.
    pub fn inverse_transform(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(data.len(), self.len());
        for axis in 0..3 {
            self.fft_axis(&mut data, axis, true);
        }
        let scale = 1.0 / self.len() as f64;
        data.into_par_iter().map(|c| c.re * scale).collect()
    }

    /// Multiplies spectral data by `i kappa_axis`, dropping the Nyquist
    /// mode along that axis so real fields stay real.
    pub fn differentiate_spectrum(&self, spec: &[Complex64], axis: Axis) -> Vec<Complex64> {
        let n = self.n();
        let kappa = &self.inner.kappa;
        let a = axis.index();
        spec.par_iter()
            .enumerate()
            .map(|(idx, &c)| {
                let j = match a {
                    0 => idx / (n * n),
                    1 => (idx / n) % n,
                    _ => idx % n,
                };
                if j == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    c * Complex64::new(0.0, kappa[j])
                }
            })
            .collect()
    }

    /// All three first derivatives of a real field.
    pub fn gradient(&self, values: &[f64]) -> [Vec<f64>; 3] {
        let spec = self.transform(values);
        self.gradient_from_spectrum(&spec)
    }

    pub fn gradient_from_spectrum(&self, spec: &[Complex64]) -> [Vec<f64>; 3] {
        Axis::ALL.map(|axis| self.inverse_transform(self.differentiate_spectrum(spec, axis)))
    }

    /// Spectral Laplacian of a real field.
    pub fn laplacian(&self, values: &[f64]) -> Vec<f64> {
        let mut spec = self.transform(values);
        spec.par_iter_mut().enumerate().for_each(|(idx, c)| {
            *c *= -self.kappa_sq(idx);
        });
        self.inverse_transform(spec)
    }

    /// Zeroes modes outside the 2/3-rule band in place.
    pub fn truncate_spectrum(&self, spec: &mut [Complex64]) {
        spec.par_iter_mut().enumerate().for_each(|(idx, c)| {
            if !self.retained(idx) {
                *c = Complex64::new(0.0, 0.0);
            }
        });
    }

    /// 2/3-rule projection of real samples.
    pub fn dealias(&self, values: &[f64]) -> Vec<f64> {
        let mut spec = self.transform(values);
        self.truncate_spectrum(&mut spec);
        self.inverse_transform(spec)
    }

    /// Phase factor `(-1)^(j0+j1+j2)` that moves the transform origin from
    /// the first sample to the physical origin.
    fn origin_phase(&self, idx: usize) -> f64 {
        let spec = self.inner.spec;
        let [j0, j1, j2] = spec.split_index(idx);
        let s = spec.mode_number(j0) + spec.mode_number(j1) + spec.mode_number(j2);
        if s.rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Real-valued field sampled on the grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    /// Wraps samples without the finiteness scan; callers guarantee it.
    pub(crate) fn from_values_unchecked(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| f(grid.position(idx)))
            .collect();
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(sum |f|^2 dx^3)^(1/2)`.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v * v).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn dealiased(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.grid.dealias(&self.values),
        }
    }
}

/// Normalised Fourier coefficients of a real field.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Coefficient of the mode `exp(i 2 pi (k . x) / L)` for signed mode numbers `k`.
    pub fn coefficient(&self, k: [i64; 3]) -> Option<Complex64> {
        let spec = self.grid.spec();
        let j0 = spec.mode_index(k[0])?;
        let j1 = spec.mode_index(k[1])?;
        let j2 = spec.mode_index(k[2])?;
        Some(self.coeffs[spec.flat_index(j0, j1, j2)])
    }
}

pub fn forward_dft(f: &ScalarField) -> Result<SpectralField> {
    if let Some(index) = f.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let grid = &f.grid;
    let scale = 1.0 / grid.len() as f64;
    let mut coeffs = grid.transform(&f.values);
    coeffs
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, c)| *c *= scale * grid.origin_phase(idx));
    Ok(SpectralField {
        grid: grid.clone(),
        coeffs,
    })
}

pub fn inverse_dft(spec: &SpectralField) -> ScalarField {
    let grid = &spec.grid;
    let scale = grid.len() as f64;
    let data: Vec<Complex64> = spec
        .coeffs
        .par_iter()
        .enumerate()
        .map(|(idx, &c)| c * (scale * grid.origin_phase(idx)))
        .collect();
    ScalarField {
        grid: grid.clone(),
        values: grid.inverse_transform(data),
    }
}

pub fn spatial_derivative(f: &ScalarField, axis: Axis) -> Result<ScalarField> {
    if let Some(index) = f.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let grid = &f.grid;
    let spec = grid.transform(&f.values);
    Ok(ScalarField {
        grid: grid.clone(),
        values: grid.inverse_transform(grid.differentiate_spectrum(&spec, axis)),
    })
}

pub fn check_mass(m: f64) -> Result<()> {
    if (0.0..=1.0).contains(&m) {
        Ok(())
    } else {
        Err(Error::MassOutOfRange(m))
    }
}

/// `xi_m(kappa) = sqrt(|kappa|^2 + m^2)` at every spectral index.
pub fn dispersion_multiplier(grid: &Grid, m: f64) -> Result<Vec<f64>> {
    check_mass(m)?;
    Ok((0..grid.len())
        .into_par_iter()
        .map(|idx| (grid.kappa_sq(idx) + m * m).sqrt())
        .collect())
}
