use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::decomposition::{
    coevolve_step, decomposition_residual, kg_residual, AuxiliaryState, ResidualTarget,
};
use crate::diagnostics::{
    decay_fit, energy_inequality_check, DecayFit, DiagnosticsRecord, HyperboloidAccumulator,
    HyperboloidEnergy, InequalityReport, SnapshotBuffer, SpeciesRecord,
};
use crate::error::{Error, Result};
use crate::integrator::{evolve, Observer, Schedule, StepParams};
use crate::model::{assemble_rhs, make_initial_data, FieldState, T0};
use crate::spectral::Grid;

use super::config::RunConfig;
use super::snapshot::write_snapshot;

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const HYPERBOLOIDAL_FILE: &str = "hyperboloidal.csv";
pub const DECAY_FILE: &str = "decay.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const FAILURE_FILE: &str = "failure.txt";
pub const SNAPSHOT_DIR: &str = "snapshots";
const CONFIG_MARKER: &str = "# --- config ---";

/// A hyperboloid section and the save time at which its last point was
/// bracketed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompletedSection {
    pub t: f64,
    pub energy: HyperboloidEnergy,
}

/// Transformed-equation checks for one species at one save time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualRecord {
    pub t: f64,
    pub species: usize,
    /// Relative `kg_residual` of `V`; absent at the first and last save.
    pub kg_transformed: Option<f64>,
    /// The same with `v` in place of `V`.
    pub kg_untransformed: Option<f64>,
    pub kg_transformed_abs: Option<f64>,
    pub kg_untransformed_abs: Option<f64>,
    pub decomposition: f64,
    pub vm_l2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub t: f64,
    pub message: String,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub grid: Grid,
    /// Step actually taken; divides `save_dt`.
    pub dt: f64,
    pub records: Vec<DiagnosticsRecord>,
    pub sections: Vec<CompletedSection>,
    pub residuals: Vec<ResidualRecord>,
    /// One entry per species when a decay window is configured.
    pub decay: Vec<std::result::Result<DecayFit, String>>,
    pub inequality: Option<InequalityReport>,
    /// Largest `outside_cone_fraction` seen.
    pub max_outside_cone: f64,
    pub checkpoints: Vec<FieldState>,
    /// Last state observed (the final state of a completed run).
    pub last: Option<FieldState>,
    pub failure: Option<Failure>,
    pub elapsed_seconds: f64,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn checkpoint(&self, t: f64) -> Option<&FieldState> {
        self.checkpoints.iter().find(|s| same_time(s.t, t))
    }
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

struct Recorder<'a> {
    config: &'a RunConfig,
    records: Vec<DiagnosticsRecord>,
    hyper: Option<HyperboloidAccumulator>,
    sections: Vec<CompletedSection>,
    residual_buffer: Option<SnapshotBuffer>,
    aux: Option<AuxiliaryState>,
    residuals: Vec<ResidualRecord>,
    max_outside_cone: f64,
    checkpoints: Vec<FieldState>,
    last: Option<FieldState>,
}

impl Recorder<'_> {
    fn residual_step(&mut self, state: &FieldState) -> Result<()> {
        let cfg = self.config;
        let Some(buffer) = self.residual_buffer.as_mut() else {
            return Ok(());
        };
        buffer.push(state.clone())?;
        let aux = match self.aux.take() {
            None => AuxiliaryState::new(state, &cfg.couplings)?,
            Some(a) => coevolve_step(&a, buffer, &cfg.couplings, cfg.aux_substeps)?,
        };
        let decomposition = decomposition_residual(&aux, state, &cfg.couplings)?;
        for i in 0..state.species() {
            self.residuals.push(ResidualRecord {
                t: state.t,
                species: i,
                kg_transformed: None,
                kg_untransformed: None,
                kg_transformed_abs: None,
                kg_untransformed_abs: None,
                decomposition,
                vm_l2: aux.vm.v[i].l2_norm(),
            });
        }
        self.aux = Some(aux);
        // The previous save now has neighbours on both sides.
        let prev_t = state.t - cfg.save_dt;
        if prev_t > T0 + 0.5 * cfg.save_dt {
            for i in 0..state.species() {
                let v = kg_residual(
                    buffer,
                    prev_t,
                    i,
                    &cfg.couplings,
                    ResidualTarget::Transformed,
                )?;
                let u = kg_residual(
                    buffer,
                    prev_t,
                    i,
                    &cfg.couplings,
                    ResidualTarget::Untransformed,
                )?;
                if let Some(r) = self
                    .residuals
                    .iter_mut()
                    .rev()
                    .find(|r| r.species == i && same_time(r.t, prev_t))
                {
                    r.kg_transformed = Some(v.relative);
                    r.kg_untransformed = Some(u.relative);
                    r.kg_transformed_abs = Some(v.absolute);
                    r.kg_untransformed_abs = Some(u.absolute);
                }
            }
        }
        Ok(())
    }
}

impl Observer for Recorder<'_> {
    fn observe(&mut self, state: &FieldState) -> Result<()> {
        let cfg = self.config;
        let mut rec = DiagnosticsRecord::of_state(state, cfg.support_threshold)?;
        if cfg.sources {
            rec = rec.with_sources(&assemble_rhs(state, &cfg.couplings)?);
        }
        self.records.push(rec);
        self.max_outside_cone = self.max_outside_cone.max(state.outside_cone_fraction(T0));
        if let Some(h) = self.hyper.as_mut() {
            h.push(state)?;
            for energy in h.take_completed() {
                self.sections.push(CompletedSection { t: state.t, energy });
            }
        }
        if cfg.checkpoints.iter().any(|&c| same_time(c, state.t)) {
            self.checkpoints.push(state.clone());
        }
        self.residual_step(state)?;
        self.last = Some(state.clone());
        Ok(())
    }
}

/// Initial data for `config`.
pub fn initial_state(config: &RunConfig) -> Result<FieldState> {
    let grid = Grid::new(config.grid_spec()?);
    let s = make_initial_data(&grid, &config.bump, config.mass, config.t_end)?;
    Ok(if config.band_limit_data {
        s.band_limited()
    } else {
        s
    })
}

/// Runs `config` in memory. Numerical blow-up is reported in
/// [`RunOutcome::failure`] with everything observed before it kept.
pub fn simulate(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let start = Instant::now();
    let init = initial_state(config)?;
    let grid = init.grid().clone();
    let params = StepParams::new(config.dt, config.kick_substeps)?;
    let schedule = Schedule {
        t_end: config.t_end,
        save_dt: config.save_dt,
    };
    let (_, _, dt) = schedule.plan(T0, config.dt)?;
    let hyper = if config.hyperboloids.is_empty() {
        None
    } else {
        Some(HyperboloidAccumulator::new(
            &grid,
            config.mass,
            config.species,
            &config.hyperboloids,
        )?)
    };
    let residual_buffer = if config.residuals {
        Some(SnapshotBuffer::new(
            config.save_dt,
            Some(2.0 * config.save_dt),
        )?)
    } else {
        None
    };
    let mut rec = Recorder {
        config,
        records: Vec::new(),
        hyper,
        sections: Vec::new(),
        residual_buffer,
        aux: None,
        residuals: Vec::new(),
        max_outside_cone: 0.0,
        checkpoints: Vec::new(),
        last: None,
    };
    let failure = match evolve(init, &config.couplings, params, schedule, &mut [&mut rec]) {
        Ok(_) => None,
        Err(e) if e.is_numerical() => Some(Failure {
            t: match e {
                Error::NumericalFailure { t, .. } => t,
                _ => f64::NAN,
            },
            message: e.to_string(),
        }),
        Err(e) => return Err(e),
    };

    let mut decay = Vec::new();
    if let (Some(window), None) = (config.decay_window, &failure) {
        for i in 0..config.species {
            decay.push(decay_fit(&rec.records, i, window, config.mass).map_err(|e| e.to_string()));
        }
    }
    let inequality = if config.sources && failure.is_none() {
        let norms: Vec<Vec<f64>> = rec
            .records
            .iter()
            .map(|r| r.source_l2.clone().unwrap_or_default())
            .collect();
        Some(energy_inequality_check(&rec.records, &norms)?)
    } else {
        None
    };
    Ok(RunOutcome {
        config: config.clone(),
        grid,
        dt,
        records: rec.records,
        sections: rec.sections,
        residuals: rec.residuals,
        decay,
        inequality,
        max_outside_cone: rec.max_outside_cone,
        checkpoints: rec.checkpoints,
        last: rec.last,
        failure,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `config` and writes its directory: `diagnostics.csv`,
/// `hyperboloidal.csv` and `decay.csv` when enabled, checkpoint snapshots,
/// `manifest.txt`, and `failure.txt` after a blow-up.
pub fn run_single(config: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outcome = simulate(config)?;
    write_outputs(&outcome, dir)?;
    Ok(outcome)
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Column names of `diagnostics.csv` for a config.
pub fn diagnostics_header(config: &RunConfig) -> Vec<String> {
    let mut h: Vec<String> = ["t", "species", "E_m", "l2", "sup", "support_radius"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for s in &config.hyperboloids {
        h.push(format!("hyp_E_s{s}"));
    }
    if config.sources {
        h.push("source_l2".into());
    }
    if config.residuals {
        for c in [
            "kg_residual",
            "kg_residual_untransformed",
            "decomposition_residual",
            "vm_l2",
        ] {
            h.push(c.into());
        }
    }
    h
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    let cfg = &outcome.config;
    let mut rows = Vec::new();
    for rec in &outcome.records {
        for (i, s) in rec.species.iter().enumerate() {
            let mut row = vec![
                num(rec.t),
                i.to_string(),
                num(s.energy),
                num(s.l2),
                num(s.sup),
                num(s.support_radius),
            ];
            for &hs in &cfg.hyperboloids {
                row.push(opt(outcome
                    .sections
                    .iter()
                    .find(|c| c.energy.s == hs && c.energy.species == i && same_time(c.t, rec.t))
                    .map(|c| c.energy.forms[1])));
            }
            if cfg.sources {
                row.push(opt(rec.source_l2.as_ref().and_then(|v| v.get(i).copied())));
            }
            if cfg.residuals {
                let r = outcome
                    .residuals
                    .iter()
                    .find(|r| r.species == i && same_time(r.t, rec.t));
                row.push(opt(r.and_then(|r| r.kg_transformed)));
                row.push(opt(r.and_then(|r| r.kg_untransformed)));
                row.push(opt(r.map(|r| r.decomposition)));
                row.push(opt(r.map(|r| r.vm_l2)));
            }
            rows.push(row);
        }
    }
    write_csv(&dir.join(DIAGNOSTICS_FILE), &diagnostics_header(cfg), &rows)?;

    if !cfg.hyperboloids.is_empty() {
        let header: Vec<String> = [
            "s",
            "species",
            "t_completed",
            "form1",
            "form2",
            "form3",
            "time_part",
            "tangential_part",
            "mass_part",
            "points",
            "max_discrepancy",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let rows: Vec<Vec<String>> = outcome
            .sections
            .iter()
            .map(|c| {
                let e = &c.energy;
                vec![
                    num(e.s),
                    e.species.to_string(),
                    num(c.t),
                    num(e.forms[0]),
                    num(e.forms[1]),
                    num(e.forms[2]),
                    num(e.time_part),
                    num(e.tangential_part),
                    num(e.mass_part),
                    e.points.to_string(),
                    num(e.max_discrepancy()),
                ]
            })
            .collect();
        write_csv(&dir.join(HYPERBOLOIDAL_FILE), &header, &rows)?;
    }

    if !outcome.decay.is_empty() {
        let header: Vec<String> = [
            "species",
            "slope",
            "intercept",
            "c_fit",
            "residual",
            "max_ratio",
            "samples",
            "error",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let rows: Vec<Vec<String>> = outcome
            .decay
            .iter()
            .enumerate()
            .map(|(i, f)| match f {
                Ok(f) => vec![
                    i.to_string(),
                    num(f.slope),
                    num(f.intercept),
                    num(f.c_fit),
                    num(f.residual),
                    num(f.max_ratio),
                    f.samples.to_string(),
                    String::new(),
                ],
                Err(e) => {
                    let mut r = vec![i.to_string()];
                    r.extend(std::iter::repeat(String::new()).take(6));
                    r.push(e.clone());
                    r
                }
            })
            .collect();
        write_csv(&dir.join(DECAY_FILE), &header, &rows)?;
    }

    if !outcome.checkpoints.is_empty() {
        let snap = dir.join(SNAPSHOT_DIR);
        std::fs::create_dir_all(&snap).map_err(|e| Error::io(&snap, e))?;
        for s in &outcome.checkpoints {
            write_snapshot(&snapshot_path(dir, s.t), s)?;
        }
    }

    let failure_path = dir.join(FAILURE_FILE);
    if let Some(f) = &outcome.failure {
        let text = format!("t = {}\nmessage = {}\n", f.t, f.message);
        std::fs::write(&failure_path, text).map_err(|e| Error::io(&failure_path, e))?;
    } else if failure_path.exists() {
        std::fs::remove_file(&failure_path).map_err(|e| Error::io(&failure_path, e))?;
    }

    let manifest = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest, manifest_text(outcome)).map_err(|e| Error::io(&manifest, e))
}

/// Path of the checkpoint snapshot at time `t` inside a run directory.
pub fn snapshot_path(dir: &Path, t: f64) -> PathBuf {
    dir.join(SNAPSHOT_DIR).join(format!("t_{t:09.4}.kgms"))
}

fn manifest_text(o: &RunOutcome) -> String {
    let mut s = String::new();
    let gs = o.grid.spec();
    let _ = writeln!(s, "code.name = {}", env!("CARGO_PKG_NAME"));
    let _ = writeln!(s, "code.version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        s,
        "status = {}",
        if o.completed() { "completed" } else { "failed" }
    );
    if let Some(f) = &o.failure {
        let _ = writeln!(s, "failure.t = {}", f.t);
        let _ = writeln!(s, "failure.message = {}", f.message);
    }
    let _ = writeln!(s, "resolved.box_length = {}", gs.box_length);
    let _ = writeln!(s, "resolved.dx = {}", gs.dx());
    let _ = writeln!(s, "resolved.dt = {}", o.dt);
    let _ = writeln!(s, "resolved.saves = {}", o.records.len());
    let _ = writeln!(s, "max_outside_cone_fraction = {:e}", o.max_outside_cone);
    if let Some(r) = &o.inequality {
        let _ = writeln!(s, "inequality.min_slack = {:e}", r.min_slack);
        let _ = writeln!(s, "inequality.t_at_min = {}", r.t_at_min);
    }
    let _ = writeln!(s, "elapsed_seconds = {:.3}", o.elapsed_seconds);
    let _ = writeln!(s, "{CONFIG_MARKER}");
    s.push_str(&o.config.to_text());
    s
}

/// Metadata and config of a finished run directory.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub meta: BTreeMap<String, String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn completed(&self) -> bool {
        self.meta.get("status").map(String::as_str) == Some("completed")
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let (head, config) = text
        .split_once(CONFIG_MARKER)
        .ok_or_else(|| Error::Metadata(format!("{}: no config section", path.display())))?;
    let meta = head
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    Ok(Manifest {
        meta,
        config: RunConfig::parse(config)?,
    })
}

/// Reads the per-species columns of `diagnostics.csv` back into records.
pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |m: String| Error::Metadata(format!("{}: {m}", path.display()));
    let mut out: Vec<DiagnosticsRecord> = Vec::new();
    for row in r.records() {
        let row = row?;
        let field = |k: usize| -> Result<f64> {
            row.get(k)
                .ok_or_else(|| bad(format!("short row {row:?}")))?
                .parse()
                .map_err(|_| bad(format!("bad number in row {row:?}")))
        };
        let t = field(0)?;
        let rec = SpeciesRecord {
            energy: field(2)?,
            l2: field(3)?,
            sup: field(4)?,
            support_radius: field(5)?,
        };
        match out.last_mut() {
            Some(last) if same_time(last.t, t) => last.species.push(rec),
            _ => out.push(DiagnosticsRecord {
                t,
                species: vec![rec],
                source_l2: None,
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(text: &str) -> RunConfig {
        let base = "\
grid.n = 16
system.species = 2
system.mass = 0.5
bump.v0 = 0
bump.v1 = 1e-3
N 0 0 1 1.0
M 1 0 1 1 2 0.5
time.t_end = 4
time.dt = 0.25
time.save_dt = 0.5
";
        RunConfig::parse(&format!("{base}{text}")).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_norms() {
        let c = small("bump.v1 = 0\n");
        let o = simulate(&c).unwrap();
        assert!(o.completed());
        assert_eq!(o.records.len(), 5);
        for r in &o.records {
            for s in &r.species {
                assert_eq!(
                    (s.energy, s.l2, s.sup, s.support_radius),
                    (0.0, 0.0, 0.0, 0.0)
                );
            }
        }
    }

    #[test]
    fn writes_directory() {
        let dir = tempfile::tempdir().unwrap();
        let c = small("diagnostics.checkpoints = 3\ndiagnostics.sources = true\ndiagnostics.residuals = true\n");
        let o = run_single(&c, dir.path()).unwrap();
        assert_eq!(o.checkpoints.len(), 1);
        let s = crate::harness::read_snapshot(&snapshot_path(dir.path(), 3.0)).unwrap();
        assert_eq!(s.v[0].values(), o.checkpoints[0].v[0].values());
        let text = std::fs::read_to_string(dir.path().join(DIAGNOSTICS_FILE)).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "t,species,E_m,l2,sup,support_radius,source_l2,kg_residual,\
             kg_residual_untransformed,decomposition_residual,vm_l2"
        );
        assert_eq!(text.lines().count(), 1 + 2 * 5);
        let m = read_manifest(dir.path()).unwrap();
        assert!(m.completed());
        assert_eq!(m.config, c);
        let back = read_diagnostics(&dir.path().join(DIAGNOSTICS_FILE)).unwrap();
        assert_eq!(back.len(), 5);
        assert_eq!(back[2].species[1], o.records[2].species[1]);
        // Interior saves carry the kg residual, the ends do not.
        let r: Vec<_> = o.residuals.iter().filter(|r| r.species == 0).collect();
        assert!(r[0].kg_transformed.is_none() && r[4].kg_transformed.is_none());
        assert!(r[1..4].iter().all(|r| r.kg_transformed.is_some()));
        assert!(r[0].decomposition < 1e-12);
    }

    #[test]
    fn blow_up_keeps_partial_outputs() {
        // Amplitudes at the small-data ceiling with huge couplings overflow
        // within a few steps.
        let c = RunConfig::parse(
            "grid.n = 16\nsystem.species = 1\nbump.v0 = 0.1\nbump.v1 = 0.1\n\
             N 0 0 0 1e150\ntime.t_end = 12\ntime.dt = 0.5\ntime.save_dt = 0.5\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let o = run_single(&c, dir.path()).unwrap();
        let f = o.failure.as_ref().expect("blow-up");
        assert!(f.t > T0 && f.t <= 12.0);
        assert!(!o.records.is_empty());
        assert!(dir.path().join(FAILURE_FILE).exists());
        assert!(!read_manifest(dir.path()).unwrap().completed());
    }
}
