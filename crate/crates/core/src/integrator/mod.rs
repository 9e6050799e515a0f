//! Time evolution.
//!
//! The linear Klein-Gordon part is advanced exactly in Fourier space,
//! mode by mode:
//!
//! ```text
//! v^ <- cos(h xi) v^ + sin(h xi)/xi w^
//! w^ <- -xi sin(h xi) v^ + cos(h xi) w^
//! ```
//!
//! and the null-form source is applied as a kick on `w` with `v` frozen.
//! [`strang_step`] composes half linear, full kick, half linear.
//! [`fd::oracle_rk4_step`] is an independent method-of-lines reference.

pub mod fd;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{accumulate_source, CouplingTensors, FieldState};
use crate::spectral::{check_mass, Grid, ScalarField};

pub use fd::oracle_rk4_step;

/// Below this value of `|h xi|` the ratio `sin(h xi)/xi` is summed as a series.
const SERIES_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepParams {
    pub dt: f64,
    pub kick_substeps: usize,
    /// Apply the 2/3-rule projection to every source evaluation in the kick.
    pub dealias: bool,
}

impl StepParams {
    pub fn new(dt: f64, kick_substeps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if kick_substeps == 0 {
            return Err(Error::InvalidParameter("kick substeps must be >= 1".into()));
        }
        Ok(StepParams {
            dt,
            kick_substeps,
            dealias: true,
        })
    }

    pub fn with_dealias(mut self, dealias: bool) -> Self {
        self.dealias = dealias;
        self
    }

    /// `dt <= dx`.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.dt > grid.dx() * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "dt = {} exceeds dx = {}",
                self.dt,
                grid.dx()
            )));
        }
        Ok(())
    }
}

impl Default for StepParams {
    fn default() -> Self {
        StepParams {
            dt: 0.05,
            kick_substeps: 2,
            dealias: true,
        }
    }
}

/// `sin(h xi)/xi`, continuous through `xi = 0`.
pub(crate) fn sin_over(h: f64, xi: f64) -> f64 {
    let z = h * xi;
    if z.abs() < SERIES_THRESHOLD {
        let z2 = z * z;
        h * (1.0 - z2 / 6.0 + z2 * z2 / 120.0)
    } else {
        z.sin() / xi
    }
}

/// Precomputed exact linear flow over a fixed interval for a fixed mass.
#[derive(Clone, Debug)]
pub struct LinearFlow {
    grid: Grid,
    dt: f64,
    m: f64,
    cos: Vec<f64>,
    sin_over_xi: Vec<f64>,
    minus_xi_sin: Vec<f64>,
}

impl LinearFlow {
    pub fn new(grid: &Grid, m: f64, dt: f64) -> Result<Self> {
        check_mass(m)?;
        let len = grid.len();
        let mut cos = vec![0.0; len];
        let mut sin_over_xi = vec![0.0; len];
        let mut minus_xi_sin = vec![0.0; len];
        cos.par_iter_mut()
            .zip(sin_over_xi.par_iter_mut())
            .zip(minus_xi_sin.par_iter_mut())
            .enumerate()
            .for_each(|(idx, ((c, s), ms))| {
                let xi = (grid.kappa_sq(idx) + m * m).sqrt();
                *c = (dt * xi).cos();
                *s = sin_over(dt, xi);
                *ms = -xi * (dt * xi).sin();
            });
        Ok(LinearFlow {
            grid: grid.clone(),
            dt,
            m,
            cos,
            sin_over_xi,
            minus_xi_sin,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    /// Advances one `(value, rate)` pair in place.
    pub fn apply_pair(&self, v: &mut ScalarField, w: &mut ScalarField) {
        let grid = &self.grid;
        let mut vh = grid.transform(v.values());
        let mut wh = grid.transform(w.values());
        vh.par_iter_mut()
            .zip(wh.par_iter_mut())
            .enumerate()
            .for_each(|(idx, (a, b))| {
                let (c, s, ms) = (self.cos[idx], self.sin_over_xi[idx], self.minus_xi_sin[idx]);
                let (va, wb) = (*a, *b);
                *a = va * c + wb * s;
                *b = va * ms + wb * c;
            });
        *v = ScalarField::from_values_unchecked(grid, grid.inverse_transform(vh));
        *w = ScalarField::from_values_unchecked(grid, grid.inverse_transform(wh));
    }

    pub fn apply(&self, state: &mut FieldState) -> Result<()> {
        if state.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if state.m != self.m {
            return Err(Error::Metadata(format!(
                "flow built for m = {}, state has m = {}",
                self.m, state.m
            )));
        }
        for (v, w) in state.v.iter_mut().zip(state.w.iter_mut()) {
            self.apply_pair(v, w);
        }
        state.t += self.dt;
        Ok(())
    }
}

/// Exact solution of `-box v + m^2 v = 0` over `dt` (any sign).
pub fn linear_propagator(state: &FieldState, dt: f64) -> Result<FieldState> {
    let flow = LinearFlow::new(state.grid(), state.m, dt)?;
    let mut out = state.clone();
    flow.apply(&mut out)?;
    Ok(out)
}

fn kick_in_place(
    state: &mut FieldState,
    couplings: &CouplingTensors,
    dt: f64,
    substeps: usize,
    dealias: bool,
) -> Result<()> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("kick substeps must be >= 1".into()));
    }
    if couplings.species() != state.species() {
        return Err(Error::InvalidParameter(format!(
            "couplings for {} species, state has {}",
            couplings.species(),
            state.species()
        )));
    }
    if couplings.is_zero() {
        return Ok(());
    }
    let grid = state.grid().clone();
    let species = state.species();
    let len = grid.len();
    let grads: Vec<[Vec<f64>; 3]> = state.v.iter().map(|v| grid.gradient(v.values())).collect();
    let spatial: Vec<[&[f64]; 3]> = grads
        .iter()
        .map(|g| [g[0].as_slice(), g[1].as_slice(), g[2].as_slice()])
        .collect();
    let mut w: Vec<Vec<f64>> = state.w.iter().map(|w| w.values().to_vec()).collect();
    let h = dt / substeps as f64;

    // Only the rates enter F through Q0 and the time-indexed brackets, so a
    // purely spatial source is constant over the kick.
    let constant_source = couplings.n_entries().next().is_none() && couplings.m_is_spatial();
    let eval = |rates: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let mut f = vec![vec![0.0; len]; species];
        let r: Vec<&[f64]> = rates.iter().map(|x| x.as_slice()).collect();
        accumulate_source(&mut f, couplings, &r, &spatial);
        if dealias {
            // Projecting each stage (not just the increment) keeps the kick a
            // second-order solver of the projected equation.
            for fi in f.iter_mut() {
                *fi = grid.dealias(fi);
            }
        }
        f
    };
    if constant_source {
        let f = eval(&w);
        for (wi, fi) in w.iter_mut().zip(&f) {
            wi.par_iter_mut().zip(fi).for_each(|(a, b)| *a += dt * b);
        }
    } else {
        for _ in 0..substeps {
            let f0 = eval(&w);
            let mid: Vec<Vec<f64>> = w
                .iter()
                .zip(&f0)
                .map(|(wi, fi)| wi.iter().zip(fi).map(|(a, b)| a + 0.5 * h * b).collect())
                .collect();
            let f1 = eval(&mid);
            for (wi, fi) in w.iter_mut().zip(&f1) {
                wi.par_iter_mut().zip(fi).for_each(|(a, b)| *a += h * b);
            }
        }
    }

    for (i, next) in w.into_iter().enumerate() {
        if next.iter().any(|x| !x.is_finite()) {
            let max_abs = next
                .iter()
                .filter(|x| x.is_finite())
                .fold(0.0f64, |m, x| m.max(x.abs()));
            return Err(Error::NumericalFailure {
                t: state.t,
                max_abs: if max_abs == 0.0 {
                    f64::INFINITY
                } else {
                    max_abs
                },
            });
        }
        state.w[i] = ScalarField::from_values_unchecked(&grid, next);
    }
    Ok(())
}

/// Advances `w` by `w' = F(v, w, grad v)` over `dt` with `v` and its spatial
/// gradient frozen, using `substeps` explicit midpoint steps.
pub fn nonlinear_kick(
    state: &FieldState,
    couplings: &CouplingTensors,
    dt: f64,
    substeps: usize,
) -> Result<FieldState> {
    let mut out = state.clone();
    kick_in_place(&mut out, couplings, dt, substeps, true)?;
    Ok(out)
}

/// Reusable Strang stepper holding the half-step linear flow.
#[derive(Clone, Debug)]
pub struct Stepper {
    half: LinearFlow,
    params: StepParams,
}

impl Stepper {
    pub fn new(grid: &Grid, m: f64, params: StepParams) -> Result<Self> {
        Ok(Stepper {
            half: LinearFlow::new(grid, m, 0.5 * params.dt)?,
            params,
        })
    }

    pub fn params(&self) -> StepParams {
        self.params
    }

    pub fn step(&self, state: &mut FieldState, couplings: &CouplingTensors) -> Result<()> {
        self.half.apply(state)?;
        kick_in_place(
            state,
            couplings,
            self.params.dt,
            self.params.kick_substeps,
            self.params.dealias,
        )?;
        self.half.apply(state)?;
        if !state.is_finite() {
            return Err(Error::NumericalFailure {
                t: state.t,
                max_abs: state.max_abs_rate(),
            });
        }
        Ok(())
    }
}

/// `L(dt/2) o K(dt) o L(dt/2)`.
pub fn strang_step(
    state: &FieldState,
    couplings: &CouplingTensors,
    params: StepParams,
) -> Result<FieldState> {
    let stepper = Stepper::new(state.grid(), state.m, params)?;
    let mut out = state.clone();
    stepper.step(&mut out, couplings)?;
    Ok(out)
}

/// Callback invoked on the initial state and after every save interval.
pub trait Observer {
    fn observe(&mut self, state: &FieldState) -> Result<()>;
}

impl<F: FnMut(&FieldState) -> Result<()>> Observer for F {
    fn observe(&mut self, state: &FieldState) -> Result<()> {
        self(state)
    }
}

/// When observers fire during [`evolve`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub t_end: f64,
    pub save_dt: f64,
}

impl Schedule {
    /// Number of save intervals and steps per interval for a start time and
    /// a maximal step; the effective step divides `save_dt` exactly.
    pub fn plan(&self, t_start: f64, max_dt: f64) -> Result<(usize, usize, f64)> {
        let span = self.t_end - t_start;
        if span < -1e-12 {
            return Err(Error::InvalidParameter(format!(
                "t_end = {} precedes the state time {t_start}",
                self.t_end
            )));
        }
        if !(self.save_dt > 0.0) {
            return Err(Error::InvalidParameter("save_dt must be positive".into()));
        }
        let saves = (span / self.save_dt).round();
        if (saves * self.save_dt - span).abs() > 1e-9 * self.save_dt.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "t_end - t0 = {span} is not a multiple of save_dt = {}",
                self.save_dt
            )));
        }
        let per_save = (self.save_dt / max_dt - 1e-9).ceil().max(1.0) as usize;
        Ok((saves as usize, per_save, self.save_dt / per_save as f64))
    }
}

/// Steps from `initial.t` to `schedule.t_end`, calling every observer on the
/// initial state and after each save interval.
///
/// `params.dt` is an upper bound: the step actually taken divides the save
/// interval. On failure the observers have already seen every state up to
/// the last completed save.
pub fn evolve(
    initial: FieldState,
    couplings: &CouplingTensors,
    params: StepParams,
    schedule: Schedule,
    observers: &mut [&mut dyn Observer],
) -> Result<FieldState> {
    let (saves, per_save, dt) = schedule.plan(initial.t, params.dt)?;
    let params = StepParams { dt, ..params };
    let stepper = Stepper::new(initial.grid(), initial.m, params)?;
    let t0 = initial.t;
    let mut state = initial;
    for obs in observers.iter_mut() {
        obs.observe(&state)?;
    }
    for s in 0..saves {
        for _ in 0..per_save {
            stepper.step(&mut state, couplings)?;
        }
        // Pin the clock to the schedule to avoid drift from repeated sums.
        state.t = t0 + (s + 1) as f64 * schedule.save_dt;
        for obs in observers.iter_mut() {
            obs.observe(&state)?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_initial_data, BumpSpec, T0};
    use std::f64::consts::PI;

    fn grid(n: usize, l: f64) -> Grid {
        Grid::from_size(n, l).unwrap()
    }

    fn couplings() -> CouplingTensors {
        let mut c = CouplingTensors::new(2);
        c.add_n(0, 0, 1, 1.0).unwrap();
        c.add_n(1, 0, 0, -0.5).unwrap();
        c.add_m(0, 1, 1, 0, 1, 1.0).unwrap();
        c.add_m(1, 0, 1, 2, 3, 0.7).unwrap();
        c
    }

    #[test]
    fn zero_state_stays_zero() {
        let g = grid(8, 4.0);
        let s = FieldState::zeros(&g, 2, T0, 0.5).unwrap();
        let out = linear_propagator(&s, 0.3).unwrap();
        assert_eq!(out.max_abs(), 0.0);
        assert!((out.t - (T0 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn single_mode_is_eigenfunction() {
        let l = 7.0;
        let g = grid(16, l);
        let k = [2.0 * PI / l * 2.0, 2.0 * PI / l, 0.0];
        for m in [0.0, 0.3, 1.0] {
            let v = ScalarField::from_fn(&g, |x| (k[0] * x[0] + k[1] * x[1]).cos());
            let s =
                FieldState::new(&g, T0, m, vec![v.clone()], vec![ScalarField::zeros(&g)]).unwrap();
            let dt = 0.731;
            let out = linear_propagator(&s, dt).unwrap();
            let xi = (k[0] * k[0] + k[1] * k[1] + m * m).sqrt();
            let expect = v.scaled((dt * xi).cos());
            assert!(out.v[0].sub(&expect).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn massless_zero_mode_grows_linearly() {
        let g = grid(8, 3.0);
        let v = ScalarField::from_fn(&g, |_| 0.25);
        let w = ScalarField::from_fn(&g, |_| -1.5);
        let s = FieldState::new(&g, T0, 0.0, vec![v], vec![w]).unwrap();
        let out = linear_propagator(&s, 0.4).unwrap();
        for x in out.v[0].values() {
            assert!((x - (0.25 - 0.4 * 1.5)).abs() < 1e-14);
        }
        for x in out.w[0].values() {
            assert!((x + 1.5).abs() < 1e-14);
        }
    }

    #[test]
    fn series_branch_is_continuous() {
        for xi in [0.0f64, 1e-9, 1e-6, 9.9e-5, 1.01e-4, 1e-3] {
            let h: f64 = 1.0;
            let exact = if xi == 0.0 { h } else { (h * xi).sin() / xi };
            assert!((sin_over(h, xi) - exact).abs() < 1e-15);
        }
    }

    #[test]
    fn time_reversal() {
        let g = grid(16, 12.0);
        let spec = BumpSpec::uniform(2, 1e-3, 5e-4).unwrap();
        let s = make_initial_data(&g, &spec, 0.6, 4.0).unwrap();
        let back = linear_propagator(&linear_propagator(&s, 0.37).unwrap(), -0.37).unwrap();
        assert!(back.max_abs_diff(&s).unwrap() < 1e-12 * s.max_abs());
    }

    #[test]
    fn kick_trivial_cases() {
        let g = grid(16, 12.0);
        let spec = BumpSpec::uniform(2, 1e-2, 5e-3).unwrap();
        let s = make_initial_data(&g, &spec, 0.0, 4.0).unwrap();
        let out = nonlinear_kick(&s, &CouplingTensors::new(2), 0.1, 2).unwrap();
        assert_eq!(out.max_abs_diff(&s).unwrap(), 0.0);
        assert!(nonlinear_kick(&s, &couplings(), 0.1, 0).is_err());
    }

    #[test]
    fn spatial_bracket_kick_is_exact_euler() {
        let g = grid(16, 12.0);
        let spec = BumpSpec::uniform(2, 1e-2, 5e-3).unwrap();
        let s = make_initial_data(&g, &spec, 0.0, 4.0).unwrap();
        let mut c = CouplingTensors::new(2);
        c.add_m(0, 0, 1, 1, 2, 1.0).unwrap();
        c.add_m(1, 1, 0, 2, 3, -2.0).unwrap();
        let dt = 0.2;
        let out = nonlinear_kick(&s, &c, dt, 3).unwrap();
        let f = crate::model::assemble_rhs(&s, &c).unwrap();
        for i in 0..2 {
            let expect: Vec<f64> = s.w[i]
                .values()
                .iter()
                .zip(f[i].values())
                .map(|(a, b)| a + dt * b)
                .collect();
            let err = out.w[i]
                .values()
                .iter()
                .zip(&expect)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-16, "err = {err}");
            assert_eq!(out.v[i].values(), s.v[i].values());
        }
    }

    /// Scalar RK2 oracle applied independently at every grid point.
    #[test]
    fn q0_self_kick_matches_pointwise_rk2() {
        let l = 5.0;
        let g = grid(8, l);
        let k = 2.0 * PI / l;
        let v = ScalarField::from_fn(&g, |x| 0.4 * (k * x[0]).sin() * (k * x[1]).cos());
        let w = ScalarField::from_fn(&g, |x| 0.3 * (k * x[2]).cos() - 0.1);
        let s = FieldState::new(&g, T0, 0.0, vec![v.clone()], vec![w.clone()]).unwrap();
        let mut c = CouplingTensors::new(1);
        c.add_n(0, 0, 0, 1.0).unwrap();
        let (dt, sub) = (0.3, 4);
        let mut out = s.clone();
        kick_in_place(&mut out, &c, dt, sub, false).unwrap();
        let grad = g.gradient(v.values());
        let h = dt / sub as f64;
        for p in 0..g.len() {
            let g2 = grad[0][p].powi(2) + grad[1][p].powi(2) + grad[2][p].powi(2);
            let f = |y: f64| -y * y + g2;
            let mut y = w.values()[p];
            for _ in 0..sub {
                let mid = y + 0.5 * h * f(y);
                y += h * f(mid);
            }
            assert!((out.w[0].values()[p] - y).abs() < 1e-14);
        }
    }

    #[test]
    fn strang_with_zero_couplings_is_linear_flow() {
        let g = grid(16, 12.0);
        let spec = BumpSpec::uniform(2, 1e-3, 2e-3).unwrap();
        let s = make_initial_data(&g, &spec, 0.8, 4.0).unwrap();
        let p = StepParams::new(0.25, 2).unwrap();
        let a = strang_step(&s, &CouplingTensors::new(2), p).unwrap();
        let b = linear_propagator(&s, 0.25).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-15);
        assert!((a.t - b.t).abs() < 1e-15);
    }

    #[test]
    fn repeated_linear_steps_compose() {
        let g = grid(16, 12.0);
        let spec = BumpSpec::uniform(1, 1e-3, 2e-3).unwrap();
        let s = make_initial_data(&g, &spec, 0.0, 4.0).unwrap();
        let p = StepParams::new(0.2, 2).unwrap();
        let stepper = Stepper::new(&g, 0.0, p).unwrap();
        let mut a = s.clone();
        for _ in 0..10 {
            stepper.step(&mut a, &CouplingTensors::new(1)).unwrap();
        }
        let b = linear_propagator(&s, 2.0).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-13 * s.max_abs());
    }

    /// Self-convergence: errors against a fine-step reference shrink as dt^2.
    #[test]
    fn strang_is_second_order() {
        let g = grid(16, 10.0);
        // Large amplitude so the splitting error dominates round-off.
        let spec = BumpSpec::uniform(2, 0.1, 0.05).unwrap();
        let s = make_initial_data(&g, &spec, 0.5, 3.0)
            .unwrap()
            .band_limited();
        let c = couplings();
        let run = |dt: f64| {
            let p = StepParams::new(dt, 2).unwrap();
            evolve(
                s.clone(),
                &c,
                p,
                Schedule {
                    t_end: T0 + 1.0,
                    save_dt: 1.0,
                },
                &mut [],
            )
            .unwrap()
        };
        let reference = run(1.0 / 512.0);
        let e0 = run(0.1).max_abs_diff(&reference).unwrap();
        let e1 = run(0.05).max_abs_diff(&reference).unwrap();
        let e2 = run(0.025).max_abs_diff(&reference).unwrap();
        for (a, b) in [(e0, e1), (e1, e2)] {
            let order = (a / b).log2();
            assert!((1.8..=2.2).contains(&order), "order {order} ({a}, {b})");
        }
    }

    #[test]
    fn evolve_without_steps_sees_initial_state_once() {
        let g = grid(8, 8.0);
        let s = FieldState::zeros(&g, 1, T0, 0.0).unwrap();
        let mut count = 0;
        let mut obs = |_: &FieldState| {
            count += 1;
            Ok(())
        };
        let out = evolve(
            s,
            &CouplingTensors::new(1),
            StepParams::default(),
            Schedule {
                t_end: T0,
                save_dt: 0.5,
            },
            &mut [&mut obs],
        )
        .unwrap();
        assert_eq!(out.t, T0);
        assert_eq!(count, 1);
    }

    #[test]
    fn schedule_validation() {
        let sch = Schedule {
            t_end: 5.0,
            save_dt: 0.4,
        };
        assert!(sch.plan(2.0, 0.1).is_err());
        let sch = Schedule {
            t_end: 4.0,
            save_dt: 0.5,
        };
        let (saves, per, dt) = sch.plan(2.0, 0.3).unwrap();
        assert_eq!((saves, per), (4, 2));
        assert!((dt - 0.25).abs() < 1e-15);
    }

    #[test]
    fn blow_up_is_reported() {
        let g = grid(8, 8.0);
        let v = ScalarField::from_fn(&g, |x| 1e150 * (x[0]).sin());
        let w = ScalarField::from_fn(&g, |x| 1e150 * (x[1]).cos());
        let s = FieldState::new(&g, T0, 0.0, vec![v], vec![w]).unwrap();
        let mut c = CouplingTensors::new(1);
        c.add_n(0, 0, 0, 1.0).unwrap();
        let err = strang_step(&s, &c, StepParams::new(0.5, 2).unwrap()).unwrap_err();
        assert!(err.is_numerical());
    }
}
