//! Run configuration in a flat `key = value` text format.
//!
//! ```text
//! # comment
//! grid.n = 64
//! grid.box_length = auto
//! system.species = 2
//! system.mass = 0.5
//! bump.v0 = 0, 0
//! bump.v1 = 1e-3, 1e-3
//! N 0 0 1 1.0          # N_i^{jk}, 0-based species indices
//! M 0 1 0 0 1 -1.0     # M_i^{jk alpha beta}, 0 = time
//! time.t_end = 12
//! time.dt = 0.25
//! time.save_dt = 0.5
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{BumpSpec, CouplingTensors, T0};
use crate::spectral::GridSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoxLength {
    /// Smallest box admitting the run's horizon.
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub box_length: BoxLength,
    /// Project the initial bump onto the 2/3-rule band before evolving.
    pub band_limit_data: bool,
    pub species: usize,
    pub mass: f64,
    pub couplings: CouplingTensors,
    pub bump: BumpSpec,
    pub t_end: f64,
    pub dt: f64,
    pub save_dt: f64,
    pub kick_substeps: usize,
    pub hyperboloids: Vec<f64>,
    pub decay_window: Option<(f64, f64)>,
    /// Record `||F_i||` per save.
    pub sources: bool,
    /// Record the transformed-equation residuals and co-evolve the
    /// decomposition.
    pub residuals: bool,
    pub aux_substeps: usize,
    pub checkpoints: Vec<f64>,
    pub support_threshold: f64,
    pub output_dir: Option<PathBuf>,
    pub scan_masses: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 32,
            box_length: BoxLength::Auto,
            band_limit_data: true,
            species: 1,
            mass: 0.0,
            couplings: CouplingTensors::new(1),
            bump: BumpSpec::uniform(1, 0.0, 1e-3).expect("valid amplitude"),
            t_end: 4.0,
            dt: 0.25,
            save_dt: 0.5,
            kick_substeps: 2,
            hyperboloids: Vec::new(),
            decay_window: None,
            sources: false,
            residuals: false,
            aux_substeps: 1,
            checkpoints: Vec::new(),
            support_threshold: crate::diagnostics::DEFAULT_SUPPORT_THRESHOLD,
            output_dir: None,
            scan_masses: Vec::new(),
        }
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn parse_f64(line: usize, key: &str, s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| {
        err(
            line,
            format!("{key}: expected a number, got '{}'", s.trim()),
        )
    })?;
    if !v.is_finite() {
        return Err(err(line, format!("{key}: value must be finite")));
    }
    Ok(v)
}

fn parse_usize(line: usize, key: &str, s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| {
        err(
            line,
            format!("{key}: expected a non-negative integer, got '{}'", s.trim()),
        )
    })
}

fn parse_bool(line: usize, key: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(err(
            line,
            format!("{key}: expected true or false, got '{other}'"),
        )),
    }
}

fn parse_list(line: usize, key: &str, s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| parse_f64(line, key, x)).collect()
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut n_lines: Vec<(usize, [usize; 3], f64)> = Vec::new();
        let mut m_lines: Vec<(usize, [usize; 5], f64)> = Vec::new();
        let mut v0: Option<(usize, Vec<f64>)> = None;
        let mut v1: Option<(usize, Vec<f64>)> = None;
        let mut species_line = 0;

        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut words = body.split_whitespace();
            let head = words.next().unwrap_or("");
            if head == "N" || head == "M" {
                let rest: Vec<&str> = words.collect();
                let want = if head == "N" { 4 } else { 6 };
                if rest.len() != want {
                    return Err(err(
                        line,
                        format!("{head} line needs {want} fields, got {}", rest.len()),
                    ));
                }
                let idx = rest[..want - 1]
                    .iter()
                    .map(|x| parse_usize(line, head, x))
                    .collect::<Result<Vec<_>>>()?;
                let value = parse_f64(line, head, rest[want - 1])?;
                if head == "N" {
                    n_lines.push((line, [idx[0], idx[1], idx[2]], value));
                } else {
                    m_lines.push((line, [idx[0], idx[1], idx[2], idx[3], idx[4]], value));
                }
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected 'key = value', got '{body}'")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "grid.n" => cfg.n = parse_usize(line, key, value)?,
                "grid.box_length" => {
                    cfg.box_length = if value == "auto" {
                        BoxLength::Auto
                    } else {
                        BoxLength::Fixed(parse_f64(line, key, value)?)
                    }
                }
                "grid.band_limit_data" => cfg.band_limit_data = parse_bool(line, key, value)?,
                "system.species" => {
                    cfg.species = parse_usize(line, key, value)?;
                    species_line = line;
                }
                "system.mass" => cfg.mass = parse_f64(line, key, value)?,
                "bump.v0" => v0 = Some((line, parse_list(line, key, value)?)),
                "bump.v1" => v1 = Some((line, parse_list(line, key, value)?)),
                "time.t0" => {
                    let t0 = parse_f64(line, key, value)?;
                    if t0 != T0 {
                        return Err(err(line, format!("time.t0 is fixed at {T0}")));
                    }
                }
                "time.t_end" => cfg.t_end = parse_f64(line, key, value)?,
                "time.dt" => cfg.dt = parse_f64(line, key, value)?,
                "time.save_dt" => cfg.save_dt = parse_f64(line, key, value)?,
                "time.kick_substeps" => cfg.kick_substeps = parse_usize(line, key, value)?,
                "diagnostics.hyperboloids" => cfg.hyperboloids = parse_list(line, key, value)?,
                "diagnostics.decay_window" => {
                    let w = parse_list(line, key, value)?;
                    if w.len() != 2 || w[0] >= w[1] {
                        return Err(err(line, "decay_window needs 'a, b' with a < b"));
                    }
                    cfg.decay_window = Some((w[0], w[1]));
                }
                "diagnostics.sources" => cfg.sources = parse_bool(line, key, value)?,
                "diagnostics.residuals" => cfg.residuals = parse_bool(line, key, value)?,
                "diagnostics.aux_substeps" => cfg.aux_substeps = parse_usize(line, key, value)?,
                "diagnostics.checkpoints" => cfg.checkpoints = parse_list(line, key, value)?,
                "diagnostics.support_threshold" => {
                    cfg.support_threshold = parse_f64(line, key, value)?
                }
                "output.dir" => cfg.output_dir = Some(PathBuf::from(value)),
                "scan.masses" => cfg.scan_masses = parse_list(line, key, value)?,
                other => return Err(err(line, format!("unknown key '{other}'"))),
            }
        }

        if cfg.species == 0 {
            return Err(err(species_line, "system.species must be at least 1"));
        }
        let amplitudes = |x: Option<(usize, Vec<f64>)>| -> Result<(usize, Vec<f64>)> {
            match x {
                Some((line, v)) if v.len() == 1 => Ok((line, vec![v[0]; cfg.species])),
                Some((line, v)) if v.len() == cfg.species => Ok((line, v)),
                Some((line, v)) => Err(err(
                    line,
                    format!("{} amplitudes for {} species", v.len(), cfg.species),
                )),
                None => Ok((0, vec![0.0; cfg.species])),
            }
        };
        let (l0, a0) = amplitudes(v0)?;
        let (l1, a1) = amplitudes(v1)?;
        cfg.bump = BumpSpec::new(a0, a1).map_err(|e| err(l0.max(l1), e.to_string()))?;

        cfg.couplings = CouplingTensors::new(cfg.species);
        for (line, [i, j, k], value) in n_lines {
            cfg.couplings
                .add_n(i, j, k, value)
                .map_err(|e| err(line, e.to_string()))?;
        }
        for (line, [i, j, k, a, b], value) in m_lines {
            cfg.couplings
                .add_m(i, j, k, a, b, value)
                .map_err(|e| err(line, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::parse(&text)?;
        if let (Some(dir), Some(parent)) = (&cfg.output_dir, path.parent()) {
            if dir.is_relative() {
                cfg.output_dir = Some(parent.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let l = match self.box_length {
            BoxLength::Fixed(l) => l,
            BoxLength::Auto => GridSpec::min_box_length(self.n, T0, self.t_end),
        };
        GridSpec::new(self.n, l)
    }

    /// Checks everything that does not need a run.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| err(0, m);
        let gs = self.grid_spec().map_err(|e| bad(e.to_string()))?;
        crate::spectral::check_mass(self.mass).map_err(|e| bad(e.to_string()))?;
        if !(self.t_end >= T0) {
            return Err(bad(format!(
                "time.t_end = {} precedes t0 = {T0}",
                self.t_end
            )));
        }
        if !gs.admits_horizon(T0, self.t_end) {
            return Err(bad(format!(
                "box length {} too small for t_end = {}; need at least {}",
                gs.box_length,
                self.t_end,
                GridSpec::min_box_length(self.n, T0, self.t_end)
            )));
        }
        if !(self.dt > 0.0 && self.dt <= gs.dx() * (1.0 + 1e-12)) {
            return Err(bad(format!(
                "time.dt = {} must lie in (0, dx = {}]",
                self.dt,
                gs.dx()
            )));
        }
        if !(self.save_dt > 0.0) {
            return Err(bad("time.save_dt must be positive".into()));
        }
        let saves = (self.t_end - T0) / self.save_dt;
        if (saves - saves.round()).abs() > 1e-9 * saves.max(1.0) {
            return Err(bad(format!(
                "t_end - t0 = {} is not a multiple of save_dt = {}",
                self.t_end - T0,
                self.save_dt
            )));
        }
        if self.kick_substeps == 0 || self.aux_substeps == 0 {
            return Err(bad("substep counts must be at least 1".into()));
        }
        if self.bump.species() != self.species || self.couplings.species() != self.species {
            return Err(bad(
                "species count disagrees with amplitudes or couplings".into()
            ));
        }
        for &s in &self.hyperboloids {
            if !(s > 1.0) {
                return Err(bad(format!("hyperboloid s = {s} must exceed 1")));
            }
        }
        if let Some((a, b)) = self.decay_window {
            if a < T0 || b > self.t_end + 1e-9 {
                return Err(bad(format!(
                    "decay window [{a}, {b}] outside [{T0}, {}]",
                    self.t_end
                )));
            }
        }
        for &c in &self.checkpoints {
            let k = (c - T0) / self.save_dt;
            if c < T0 || c > self.t_end + 1e-9 || (k - k.round()).abs() > 1e-9 * k.abs().max(1.0) {
                return Err(bad(format!(
                    "checkpoint {c} is not a save time in [{T0}, {}]",
                    self.t_end
                )));
            }
        }
        if !(self.support_threshold > 0.0 && self.support_threshold < 1.0) {
            return Err(bad("support_threshold must lie in (0, 1)".into()));
        }
        for &m in &self.scan_masses {
            crate::spectral::check_mass(m).map_err(|e| bad(e.to_string()))?;
        }
        Ok(())
    }

    /// Canonical text; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "grid.n = {}", self.n);
        match self.box_length {
            BoxLength::Auto => {
                let _ = writeln!(s, "grid.box_length = auto");
            }
            BoxLength::Fixed(l) => {
                let _ = writeln!(s, "grid.box_length = {l}");
            }
        }
        let _ = writeln!(s, "grid.band_limit_data = {}", self.band_limit_data);
        let _ = writeln!(s, "system.species = {}", self.species);
        let _ = writeln!(s, "system.mass = {}", self.mass);
        let _ = writeln!(s, "bump.v0 = {}", fmt_list(&self.bump.value_amplitude));
        let _ = writeln!(s, "bump.v1 = {}", fmt_list(&self.bump.rate_amplitude));
        for e in self.couplings.n_entries() {
            let _ = writeln!(s, "N {} {} {} {}", e.i, e.j, e.k, e.value);
        }
        for e in self.couplings.m_entries() {
            let _ = writeln!(
                s,
                "M {} {} {} {} {} {}",
                e.i, e.j, e.k, e.alpha, e.beta, e.value
            );
        }
        let _ = writeln!(s, "time.t_end = {}", self.t_end);
        let _ = writeln!(s, "time.dt = {}", self.dt);
        let _ = writeln!(s, "time.save_dt = {}", self.save_dt);
        let _ = writeln!(s, "time.kick_substeps = {}", self.kick_substeps);
        let _ = writeln!(
            s,
            "diagnostics.hyperboloids = {}",
            fmt_list(&self.hyperboloids)
        );
        if let Some((a, b)) = self.decay_window {
            let _ = writeln!(s, "diagnostics.decay_window = {a}, {b}");
        }
        let _ = writeln!(s, "diagnostics.sources = {}", self.sources);
        let _ = writeln!(s, "diagnostics.residuals = {}", self.residuals);
        let _ = writeln!(s, "diagnostics.aux_substeps = {}", self.aux_substeps);
        let _ = writeln!(
            s,
            "diagnostics.checkpoints = {}",
            fmt_list(&self.checkpoints)
        );
        let _ = writeln!(
            s,
            "diagnostics.support_threshold = {}",
            self.support_threshold
        );
        if let Some(d) = &self.output_dir {
            let _ = writeln!(s, "output.dir = {}", d.display());
        }
        if !self.scan_masses.is_empty() {
            let _ = writeln!(s, "scan.masses = {}", fmt_list(&self.scan_masses));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two species
grid.n = 16
grid.box_length = auto
system.species = 2
system.mass = 0.5
bump.v0 = 1e-3, 0
bump.v1 = 0, 2e-3
N 0 0 1 1.0
M 1 0 1 2 1 0.5   # stored as alpha < beta with the sign flipped
time.t_end = 4
time.dt = 0.25
time.save_dt = 0.5
diagnostics.hyperboloids = 2.5
";

    #[test]
    fn parses_sample() {
        let c = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.n, 16);
        assert_eq!(c.species, 2);
        let m: Vec<_> = c.couplings.m_entries().collect();
        assert_eq!((m[0].alpha, m[0].beta, m[0].value), (1, 2, -0.5));
        assert_eq!(c.bump.rate_amplitude, vec![0.0, 2e-3]);
        let gs = c.grid_spec().unwrap();
        assert!(gs.admits_horizon(T0, 4.0));
    }

    #[test]
    fn text_round_trip() {
        let c = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = SAMPLE.replace("N 0 0 1 1.0", "N 0 0 5 1.0");
        match RunConfig::parse(&bad) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 8),
            other => panic!("{other:?}"),
        }
        let bad = SAMPLE.replace("time.dt = 0.25", "time.dtt = 0.25");
        assert!(matches!(
            RunConfig::parse(&bad),
            Err(Error::Config { line: 11, .. })
        ));
        assert!(RunConfig::parse("time.t0 = 3").is_err());
        assert!(RunConfig::parse("grid.n = 16\ngrid.box_length = 5").is_err());
        assert!(RunConfig::parse("time.save_dt = 0.3\ntime.t_end = 3").is_err());
    }
}
