//! Mass scans and the vanishing-mass convergence study.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::diagnostics::{apply_word, energy_of, VectorField};
use crate::error::{Error, Result};
use crate::model::FieldState;

use super::config::RunConfig;
use super::run::{read_manifest, run_single, snapshot_path, Manifest, RunOutcome};
use super::snapshot::read_snapshot;

pub const SCAN_FILE: &str = "scan.txt";
pub const CONVERGENCE_FILE: &str = "convergence.csv";

/// Band the observed order must fall in.
pub const ORDER_BAND: (f64, f64) = (1.7, 2.3);

/// Sub-directory of a scan holding the run with mass `m`.
pub fn run_dir(scan_dir: &Path, m: f64) -> PathBuf {
    scan_dir.join(format!("m_{m}"))
}

/// The config with the mass list sorted descending; requires `m = 0`.
pub fn scan_masses(config: &RunConfig) -> Result<Vec<f64>> {
    let mut ms = config.scan_masses.clone();
    if ms.is_empty() {
        return Err(Error::Config {
            line: 0,
            message: "scan.masses is empty".into(),
        });
    }
    if !ms.contains(&0.0) {
        return Err(Error::Config {
            line: 0,
            message: "scan.masses must include 0, the reference wave system".into(),
        });
    }
    ms.sort_by(|a, b| b.total_cmp(a));
    ms.dedup();
    Ok(ms)
}

/// Runs every mass of `config.scan_masses` in parallel, one directory each.
pub fn run_scan(config: &RunConfig, scan_dir: &Path) -> Result<Vec<(f64, RunOutcome)>> {
    let masses = scan_masses(config)?;
    config.validate()?;
    std::fs::create_dir_all(scan_dir).map_err(|e| Error::io(scan_dir, e))?;
    let path = scan_dir.join(SCAN_FILE);
    std::fs::write(&path, config.to_text()).map_err(|e| Error::io(&path, e))?;
    masses
        .par_iter()
        .map(|&m| {
            let mut c = config.clone();
            c.mass = m;
            c.scan_masses.clear();
            c.output_dir = None;
            run_single(&c, &run_dir(scan_dir, m)).map(|o| (m, o))
        })
        .collect()
}

/// Ok when two runs share grid, data, couplings, step and save schedule.
pub fn check_comparable(a: &RunConfig, b: &RunConfig) -> Result<()> {
    let mismatch = |what: &str| Err(Error::Incomparable(format!("{what} differs")));
    if a.grid_spec()? != b.grid_spec()? {
        return mismatch("grid");
    }
    if a.band_limit_data != b.band_limit_data || a.bump != b.bump || a.species != b.species {
        return mismatch("initial data");
    }
    if a.couplings != b.couplings {
        return mismatch("coupling tensors");
    }
    if a.dt != b.dt || a.kick_substeps != b.kick_substeps {
        return mismatch("time step");
    }
    if a.t_end != b.t_end || a.save_dt != b.save_dt || a.checkpoints != b.checkpoints {
        return mismatch("save schedule");
    }
    Ok(())
}

/// Words `Gamma` entering `D(m, t)` at order `k`: the identity, then
/// `d_alpha` and `L_a` for `k = 1`.
pub fn difference_words(k: usize) -> Result<Vec<Vec<VectorField>>> {
    if k > 1 {
        return Err(Error::OrderTooHigh(k));
    }
    let mut w = vec![vec![]];
    if k == 1 {
        w.extend((0..4).map(|mu| vec![VectorField::Partial(mu)]));
        w.extend((1..4).map(|a| vec![VectorField::Boost(a)]));
    }
    Ok(w)
}

/// `D = sum_Gamma E_m(Gamma (v - v_ref))^{1/2}`, energies summed over
/// species and taken with the mass of `state`. `d_t Gamma` of each run comes
/// from its own equation before the difference is formed.
pub fn difference_norm(
    state: &FieldState,
    config: &RunConfig,
    reference: &FieldState,
    ref_config: &RunConfig,
    k: usize,
) -> Result<f64> {
    if state.grid() != reference.grid() {
        return Err(Error::GridMismatch);
    }
    if (state.t - reference.t).abs() > 1e-9 * state.t.abs().max(1.0) {
        return Err(Error::Incomparable(format!(
            "snapshot times {} and {}",
            state.t, reference.t
        )));
    }
    if state.species() != reference.species() {
        return Err(Error::Incomparable("species count".into()));
    }
    let mut d = 0.0;
    for word in difference_words(k)? {
        let mut rate_word = vec![VectorField::Partial(0)];
        rate_word.extend_from_slice(&word);
        let mut e = 0.0;
        for i in 0..state.species() {
            let u = apply_word(state, i, &word, Some(&config.couplings))?.sub(&apply_word(
                reference,
                i,
                &word,
                Some(&ref_config.couplings),
            )?)?;
            let ut = apply_word(state, i, &rate_word, Some(&config.couplings))?.sub(
                &apply_word(reference, i, &rate_word, Some(&ref_config.couplings))?,
            )?;
            e += energy_of(&u, &ut, state.m)?;
        }
        d += e.sqrt();
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub m: f64,
    pub t: f64,
    pub d: f64,
    /// `log2(D(m, t) / D(m/2, t))` when `m/2` is in the scan.
    pub order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateTable {
    pub k: usize,
    pub rows: Vec<RateRow>,
    /// Least-squares exponent of `D(m, t)` against `t` per mass, over
    /// checkpoints with `D > 0`.
    pub growth: Vec<(f64, f64)>,
}

impl RateTable {
    pub fn order(&self, m: f64, t: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.m == m && (r.t - t).abs() < 1e-9 * t.max(1.0))
            .and_then(|r| r.order)
    }

    /// Finite observed orders, all inside [`ORDER_BAND`].
    pub fn orders_in_band(&self) -> bool {
        self.rows
            .iter()
            .filter_map(|r| r.order)
            .filter(|p| p.is_finite())
            .all(|p| p >= ORDER_BAND.0 && p <= ORDER_BAND.1)
    }
}

/// Builds the rate table from checkpoint states keyed by mass.
pub fn rate_table(runs: &[(RunConfig, Vec<FieldState>)], k: usize) -> Result<RateTable> {
    let reference = runs
        .iter()
        .find(|(c, _)| c.mass == 0.0)
        .ok_or_else(|| Error::Incomparable("no m = 0 reference run".into()))?;
    for (c, _) in runs {
        check_comparable(c, &reference.0)?;
    }
    let mut rows = Vec::new();
    for (c, states) in runs.iter().filter(|(c, _)| c.mass > 0.0) {
        for s in states {
            let r = reference
                .1
                .iter()
                .find(|r| (r.t - s.t).abs() < 1e-9 * s.t.max(1.0))
                .ok_or_else(|| Error::Incomparable(format!("reference lacks t = {}", s.t)))?;
            rows.push(RateRow {
                m: c.mass,
                t: s.t,
                d: difference_norm(s, c, r, &reference.0, k)?,
                order: None,
            });
        }
    }
    let snapshot = rows.clone();
    for row in &mut rows {
        let half = row.m / 2.0;
        if let Some(h) = snapshot.iter().find(|r| {
            (r.m - half).abs() <= 1e-12 * row.m && (r.t - row.t).abs() < 1e-9 * row.t.max(1.0)
        }) {
            if row.d > 0.0 && h.d > 0.0 {
                row.order = Some((row.d / h.d).log2());
            }
        }
    }
    let mut masses: Vec<f64> = rows.iter().map(|r| r.m).collect();
    masses.sort_by(|a, b| b.total_cmp(a));
    masses.dedup();
    let growth = masses
        .into_iter()
        .filter_map(|m| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.m == m && r.d > 0.0)
                .map(|r| (r.t.ln(), r.d.ln()))
                .collect();
            if pts.len() < 2 {
                return None;
            }
            let n = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            (sxx > 0.0).then(|| (m, sxy / sxx))
        })
        .collect();
    Ok(RateTable { k, rows, growth })
}

fn load_run(dir: &Path) -> Result<(RunConfig, Vec<FieldState>)> {
    let Manifest { meta, config } = read_manifest(dir)?;
    if meta.get("status").map(String::as_str) != Some("completed") {
        return Err(Error::Incomparable(format!(
            "{} did not complete",
            dir.display()
        )));
    }
    let states = config
        .checkpoints
        .iter()
        .map(|&t| read_snapshot(&snapshot_path(dir, t)))
        .collect::<Result<Vec<_>>>()?;
    Ok((config, states))
}

/// Convergence study over a scan directory written by [`run_scan`]; also
/// writes `convergence.csv` there.
pub fn convergence_study(scan_dir: &Path, k: usize) -> Result<RateTable> {
    let scan = scan_dir.join(SCAN_FILE);
    let text = std::fs::read_to_string(&scan).map_err(|e| Error::io(&scan, e))?;
    let config = RunConfig::parse(&text)?;
    if config.checkpoints.is_empty() {
        return Err(Error::Incomparable("scan has no checkpoints".into()));
    }
    let runs = scan_masses(&config)?
        .into_iter()
        .map(|m| load_run(&run_dir(scan_dir, m)))
        .collect::<Result<Vec<_>>>()?;
    let table = rate_table(&runs, k)?;
    let path = scan_dir.join(CONVERGENCE_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["k", "m", "t", "D", "D_over_t", "p"])?;
    for r in &table.rows {
        w.write_record([
            k.to_string(),
            format!("{}", r.m),
            format!("{}", r.t),
            format!("{:e}", r.d),
            format!("{:e}", r.d / r.t),
            r.order.map(|p| format!("{p}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::simulate;

    #[test]
    fn mass_list_needs_zero() {
        let mut c = RunConfig::default();
        c.scan_masses = vec![0.1, 0.4];
        assert!(scan_masses(&c).is_err());
        c.scan_masses = vec![0.1, 0.0, 0.4];
        assert_eq!(scan_masses(&c).unwrap(), vec![0.4, 0.1, 0.0]);
    }

    #[test]
    fn self_difference_is_zero() {
        let mut c =
            RunConfig::parse("grid.n = 16\ntime.t_end = 3\ndiagnostics.checkpoints = 3\n").unwrap();
        c.mass = 0.0;
        let o = simulate(&c).unwrap();
        let s = &o.checkpoints[0];
        for k in 0..2 {
            assert_eq!(difference_norm(s, &c, s, &c, k).unwrap(), 0.0);
        }
        assert!(difference_words(2).is_err());
    }

    #[test]
    fn incomparable_runs_rejected() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.dt = 0.125;
        assert!(matches!(
            check_comparable(&a, &b),
            Err(Error::Incomparable(_))
        ));
        b = a.clone();
        b.mass = 0.3;
        assert!(check_comparable(&a, &b).is_ok());
    }
}
