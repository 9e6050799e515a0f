//! Energies on the hyperboloids `t^2 = s^2 + |x|^2`.
//!
//! For each grid point `x` inside the cone, the fields are evaluated at
//! `t(x) = sqrt(s^2 + |x|^2)` by cubic Hermite interpolation between the two
//! saved states bracketing `t(x)`: `u` from `(v, w)`, `d_a u` from
//! `(d_a v, d_a w)`, and `u_t` as the derivative of the cubic for `u`.
//! The integral uses the flat measure `dx`.
//!
//! The three integrands agree algebraically:
//!
//! 1. `u_t^2 + |grad u|^2 + 2 (x_a/t) u_t d_a u + m^2 u^2`
//! 2. `((s/t) u_t)^2 + sum_a (d_a u + (x_a/t) u_t)^2 + m^2 u^2`
//! 3. `(u_t + (x_a/t) d_a u)^2 + (s/t)^2 |grad u|^2 + sum_{a<b} (Omega_ab u / t)^2 + m^2 u^2`

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::FieldState;
use crate::spectral::Grid;

use super::buffer::TIME_SLACK;
use super::SnapshotBuffer;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperboloidEnergy {
    pub s: f64,
    pub species: usize,
    /// Integrals of the three integrand forms.
    pub forms: [f64; 3],
    /// `||(s/t) d_t u||^2`.
    pub time_part: f64,
    /// `sum_a ||d_a u + (x_a/t) d_t u||^2`.
    pub tangential_part: f64,
    /// `m^2 ||u||^2`.
    pub mass_part: f64,
    pub points: usize,
}

impl HyperboloidEnergy {
    /// `max(|E1 - E2|, |E3 - E2|) / E2`, or 0 when all vanish.
    pub fn max_discrepancy(&self) -> f64 {
        let [a, b, c] = self.forms;
        let d = (a - b).abs().max((c - b).abs());
        if d == 0.0 {
            0.0
        } else {
            d / b.abs()
        }
    }
}

/// Range of `t(x)` over the grid points of the section, or `None` when the
/// section contains no point.
pub fn hyperboloid_window(grid: &Grid, s: f64) -> Option<(f64, f64)> {
    let pts = section_points(grid, s);
    Some((pts.first()?.1, pts.last()?.1))
}

/// Grid points with `|x| <= t(x) - 1`, sorted by `t(x)`.
fn section_points(grid: &Grid, s: f64) -> Vec<(usize, f64)> {
    let rmax = (s * s - 1.0) / 2.0;
    let mut pts: Vec<(usize, f64)> = (0..grid.len())
        .filter_map(|p| {
            let r = grid.radius(p);
            (r <= rmax).then(|| (p, (s * s + r * r).sqrt()))
        })
        .collect();
    pts.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    pts
}

/// One saved state with the spatial gradients of `v` and `w`.
struct Snap {
    t: f64,
    v: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    dv: Vec<[Vec<f64>; 3]>,
    dw: Vec<[Vec<f64>; 3]>,
}

impl Snap {
    fn of(state: &FieldState) -> Self {
        let grid = state.grid();
        Snap {
            t: state.t,
            v: state.v.iter().map(|f| f.values().to_vec()).collect(),
            w: state.w.iter().map(|f| f.values().to_vec()).collect(),
            dv: state.v.iter().map(|f| grid.gradient(f.values())).collect(),
            dw: state.w.iter().map(|f| grid.gradient(f.values())).collect(),
        }
    }
}

struct Section {
    s: f64,
    points: Vec<(usize, f64)>,
    cursor: usize,
    missed: usize,
    /// Per species: form1, form2 parts (time, tangential, mass), form3.
    sums: Vec<[f64; 5]>,
    reported: bool,
}

impl Section {
    fn done(&self) -> bool {
        self.cursor == self.points.len()
    }

    fn energy(&self, species: usize, dv: f64) -> HyperboloidEnergy {
        let [f1, time, tang, mass, f3] = self.sums[species];
        HyperboloidEnergy {
            s: self.s,
            species,
            forms: [f1 * dv, (time + tang + mass) * dv, f3 * dv],
            time_part: time * dv,
            tangential_part: tang * dv,
            mass_part: mass * dv,
            points: self.points.len(),
        }
    }
}

/// Streams saved states in time order and accumulates every requested
/// section as its points are bracketed, so no long history is stored.
pub struct HyperboloidAccumulator {
    grid: Grid,
    m: f64,
    species: usize,
    sections: Vec<Section>,
    prev: Option<Snap>,
    first_t: Option<f64>,
}

/// Integrand terms `[form1, time, tangential, mass, form3]` at one point.
fn integrand(s: f64, t: f64, x: [f64; 3], m: f64, u: f64, ut: f64, du: [f64; 3]) -> [f64; 5] {
    let xt = [x[0] / t, x[1] / t, x[2] / t];
    let grad2 = du[0] * du[0] + du[1] * du[1] + du[2] * du[2];
    let radial: f64 = (0..3).map(|a| xt[a] * du[a]).sum();
    let mass = m * m * u * u;
    let f1 = ut * ut + grad2 + 2.0 * ut * radial + mass;
    let st = s / t;
    let time = st * st * ut * ut;
    let tang: f64 = (0..3).map(|a| (du[a] + xt[a] * ut).powi(2)).sum();
    let mut rot = 0.0;
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        rot += ((x[a] * du[b] - x[b] * du[a]) / t).powi(2);
    }
    let f3 = (ut + radial).powi(2) + st * st * grad2 + rot + mass;
    [f1, time, tang, mass, f3]
}

impl HyperboloidAccumulator {
    pub fn new(grid: &Grid, m: f64, species: usize, s_list: &[f64]) -> Result<Self> {
        let sections = s_list
            .iter()
            .map(|&s| {
                if !(s.is_finite() && s > 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "hyperboloid parameter s = {s} must exceed 1"
                    )));
                }
                Ok(Section {
                    s,
                    points: section_points(grid, s),
                    cursor: 0,
                    missed: 0,
                    sums: vec![[0.0; 5]; species],
                    reported: false,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HyperboloidAccumulator {
            grid: grid.clone(),
            m,
            species,
            sections,
            prev: None,
            first_t: None,
        })
    }

    pub fn s_list(&self) -> Vec<f64> {
        self.sections.iter().map(|s| s.s).collect()
    }

    pub fn push(&mut self, state: &FieldState) -> Result<()> {
        if state.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        if state.m != self.m || state.species() != self.species {
            return Err(Error::Metadata(
                "state does not match the accumulator's mass or species count".into(),
            ));
        }
        if let Some(p) = &self.prev {
            if state.t <= p.t {
                return Err(Error::Buffer(format!(
                    "states must arrive in increasing time, got {} after {}",
                    state.t, p.t
                )));
            }
        }
        self.first_t.get_or_insert(state.t);
        if self.sections.iter().all(Section::done) {
            return Ok(());
        }
        let next = Snap::of(state);
        let eps = TIME_SLACK * next.t.max(1.0);
        match self.prev.take() {
            None => {
                // Points strictly before the first state can never be covered.
                for sec in &mut self.sections {
                    while sec.cursor < sec.points.len() && sec.points[sec.cursor].1 < next.t - eps {
                        sec.cursor += 1;
                        sec.missed += 1;
                    }
                }
            }
            Some(prev) => {
                for sec in &mut self.sections {
                    let start = sec.cursor;
                    while sec.cursor < sec.points.len() && sec.points[sec.cursor].1 <= next.t + eps
                    {
                        sec.cursor += 1;
                    }
                    let batch = &sec.points[start..sec.cursor];
                    if batch.is_empty() {
                        continue;
                    }
                    let early = batch.iter().filter(|(_, t)| *t < prev.t - eps).count();
                    sec.missed += early;
                    let (s, m, grid) = (sec.s, self.m, &self.grid);
                    for i in 0..self.species {
                        let terms: Vec<[f64; 5]> = batch
                            .par_iter()
                            .filter(|(_, t)| *t >= prev.t - eps)
                            .map(|&(p, t)| {
                                let h = next.t - prev.t;
                                let th = ((t - prev.t) / h).clamp(0.0, 1.0);
                                let (t2, t3) = (th * th, th * th * th);
                                let (h00, h10, h01, h11) = (
                                    2.0 * t3 - 3.0 * t2 + 1.0,
                                    t3 - 2.0 * t2 + th,
                                    -2.0 * t3 + 3.0 * t2,
                                    t3 - t2,
                                );
                                let (d00, d10, d01, d11) = (
                                    6.0 * t2 - 6.0 * th,
                                    3.0 * t2 - 4.0 * th + 1.0,
                                    -6.0 * t2 + 6.0 * th,
                                    3.0 * t2 - 2.0 * th,
                                );
                                let herm = |a0: f64, b0: f64, a1: f64, b1: f64| {
                                    h00 * a0 + h10 * h * b0 + h01 * a1 + h11 * h * b1
                                };
                                let u =
                                    herm(prev.v[i][p], prev.w[i][p], next.v[i][p], next.w[i][p]);
                                let ut = (d00 * prev.v[i][p]
                                    + d10 * h * prev.w[i][p]
                                    + d01 * next.v[i][p]
                                    + d11 * h * next.w[i][p])
                                    / h;
                                let du = std::array::from_fn(|a| {
                                    herm(
                                        prev.dv[i][a][p],
                                        prev.dw[i][a][p],
                                        next.dv[i][a][p],
                                        next.dw[i][a][p],
                                    )
                                });
                                integrand(s, t, grid.position(p), m, u, ut, du)
                            })
                            .collect();
                        let acc = &mut sec.sums[i];
                        for term in &terms {
                            for k in 0..5 {
                                acc[k] += term[k];
                            }
                        }
                    }
                }
            }
        }
        self.prev = Some(next);
        Ok(())
    }

    /// Sections finished since the last call.
    pub fn take_completed(&mut self) -> Vec<HyperboloidEnergy> {
        let dv = self.grid.cell_volume();
        let mut out = Vec::new();
        for sec in &mut self.sections {
            if sec.done() && sec.missed == 0 && !sec.reported {
                sec.reported = true;
                out.extend((0..self.species).map(|i| sec.energy(i, dv)));
            }
        }
        out
    }

    /// All sections; fails on the first one not fully covered.
    pub fn finish(self) -> Result<Vec<HyperboloidEnergy>> {
        let dv = self.grid.cell_volume();
        let have_to = self.prev.as_ref().map_or(f64::NAN, |p| p.t);
        let mut out = Vec::new();
        for sec in &self.sections {
            if !sec.done() || sec.missed > 0 {
                let (from, to) = match (sec.points.first(), sec.points.last()) {
                    (Some(a), Some(b)) => (a.1, b.1),
                    _ => (sec.s, sec.s),
                };
                return Err(Error::SectionNotCovered {
                    s: sec.s,
                    needed_from: from,
                    needed_to: to,
                    have_from: self.first_t.unwrap_or(f64::NAN),
                    have_to,
                });
            }
            out.extend((0..self.species).map(|i| sec.energy(i, dv)));
        }
        Ok(out)
    }
}

/// Energy of species `i` on the section `s` in one of the three forms
/// (1, 2 or 3), from the buffer's contiguous window.
pub fn hyperboloidal_energy(buffer: &SnapshotBuffer, s: f64, i: usize, form: usize) -> Result<f64> {
    if !(1..=3).contains(&form) {
        return Err(Error::InvalidParameter(format!(
            "form must be 1, 2 or 3, got {form}"
        )));
    }
    let first = buffer
        .window_states()
        .next()
        .ok_or_else(|| Error::Buffer("empty buffer".into()))?;
    if i >= first.species() {
        return Err(Error::InvalidParameter(format!("species {i} out of range")));
    }
    let mut acc = HyperboloidAccumulator::new(first.grid(), first.m, first.species(), &[s])?;
    for st in buffer.window_states() {
        acc.push(st)?;
    }
    let e = acc.finish()?;
    Ok(e[i].forms[form - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{evolve, Schedule, StepParams};
    use crate::model::{make_initial_data, BumpSpec, CouplingTensors, T0};

    #[test]
    fn integrand_forms_agree_pointwise() {
        let (s, t) = (3.0, 4.1);
        let r = (t * t - s * s) as f64;
        let x = [r.sqrt() * 0.6, r.sqrt() * 0.8, 0.0];
        let f = integrand(s, t, x, 0.7, 0.3, -1.2, [0.4, -0.9, 2.0]);
        let form2 = f[1] + f[2] + f[3];
        assert!((f[0] - form2).abs() < 1e-14 * form2);
        assert!((f[4] - form2).abs() < 1e-14 * form2);
    }

    #[test]
    fn zero_state_gives_zero() {
        let g = Grid::from_size(16, 16.0).unwrap();
        let mut buf = SnapshotBuffer::keep_all(0.5).unwrap();
        for k in 0..5 {
            buf.push(FieldState::zeros(&g, 1, T0 + 0.5 * k as f64, 0.3).unwrap())
                .unwrap();
        }
        for form in 1..=3 {
            assert_eq!(hyperboloidal_energy(&buf, 2.2, 0, form).unwrap(), 0.0);
        }
    }

    #[test]
    fn uncovered_section_rejected() {
        let g = Grid::from_size(16, 16.0).unwrap();
        let mut buf = SnapshotBuffer::keep_all(0.5).unwrap();
        for k in 0..3 {
            buf.push(FieldState::zeros(&g, 1, T0 + 0.5 * k as f64, 0.0).unwrap())
                .unwrap();
        }
        let err = hyperboloidal_energy(&buf, 3.0, 0, 2).unwrap_err();
        match err {
            Error::SectionNotCovered {
                needed_to, have_to, ..
            } => {
                assert!(needed_to > have_to);
                assert!((needed_to - 5.0).abs() < 0.1);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn forms_agree_on_evolved_data() {
        let g = Grid::from_size(32, 16.0).unwrap();
        let spec = BumpSpec::uniform(2, 0.05, 0.03).unwrap();
        let init = make_initial_data(&g, &spec, 0.0, 7.0)
            .unwrap()
            .band_limited();
        let mut c = CouplingTensors::new(2);
        c.add_n(0, 0, 1, 1.0).unwrap();
        c.add_m(1, 0, 0, 0, 1, 1.0).unwrap();
        let mut acc = HyperboloidAccumulator::new(&g, 0.0, 2, &[2.5, 3.0]).unwrap();
        let mut obs = |s: &FieldState| acc.push(s);
        evolve(
            init,
            &c,
            StepParams::new(0.1, 2).unwrap(),
            Schedule {
                t_end: 6.0,
                save_dt: 0.2,
            },
            &mut [&mut obs],
        )
        .unwrap();
        let energies = acc.finish().unwrap();
        assert_eq!(energies.len(), 4);
        for e in energies {
            assert!(e.forms[1] > 0.0);
            assert!(e.max_discrepancy() < 1e-12, "{e:?}");
            assert!(e.time_part >= 0.0 && e.tangential_part >= 0.0);
        }
    }
}
