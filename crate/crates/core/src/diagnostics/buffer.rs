use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::model::FieldState;

/// Relative slack when comparing snapshot times.
pub(crate) const TIME_SLACK: f64 = 1e-9;

/// Time-ordered snapshots at uniform spacing `save_dt`.
///
/// Keeps a sliding window of recent states plus every state whose time is a
/// designated checkpoint. A window of `None` retains everything.
#[derive(Clone, Debug)]
pub struct SnapshotBuffer {
    save_dt: f64,
    window: Option<f64>,
    checkpoints: Vec<f64>,
    recent: VecDeque<FieldState>,
    retained: Vec<FieldState>,
    last_t: Option<f64>,
}

impl SnapshotBuffer {
    pub fn new(save_dt: f64, window: Option<f64>) -> Result<Self> {
        if !(save_dt.is_finite() && save_dt > 0.0) {
            return Err(Error::Buffer(format!(
                "save_dt must be positive, got {save_dt}"
            )));
        }
        if let Some(w) = window {
            if !(w >= 2.0 * save_dt * (1.0 - TIME_SLACK)) {
                return Err(Error::Buffer(format!(
                    "window {w} shorter than two save intervals ({})",
                    2.0 * save_dt
                )));
            }
        }
        Ok(SnapshotBuffer {
            save_dt,
            window,
            checkpoints: Vec::new(),
            recent: VecDeque::new(),
            retained: Vec::new(),
            last_t: None,
        })
    }

    /// Unbounded buffer.
    pub fn keep_all(save_dt: f64) -> Result<Self> {
        SnapshotBuffer::new(save_dt, None)
    }

    pub fn with_checkpoints(mut self, times: &[f64]) -> Self {
        self.checkpoints = times.to_vec();
        self
    }

    pub fn save_dt(&self) -> f64 {
        self.save_dt
    }

    fn same_time(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= TIME_SLACK * self.save_dt.max(a.abs())
    }

    fn is_checkpoint(&self, t: f64) -> bool {
        self.checkpoints.iter().any(|&c| self.same_time(c, t))
    }

    pub fn push(&mut self, state: FieldState) -> Result<()> {
        let reference = self.recent.back().or(self.retained.last());
        if let Some(r) = reference {
            if r.grid() != state.grid() {
                return Err(Error::GridMismatch);
            }
            if r.m != state.m || r.species() != state.species() {
                return Err(Error::Metadata(format!(
                    "buffer holds m = {} with {} species, got m = {} with {}",
                    r.m,
                    r.species(),
                    state.m,
                    state.species()
                )));
            }
        }
        if let Some(last) = self.last_t {
            let gap = state.t - last;
            if (gap - self.save_dt).abs() > TIME_SLACK * self.save_dt.max(1.0) {
                return Err(Error::Buffer(format!(
                    "snapshot at t = {} is {gap} after the previous one, expected {}",
                    state.t, self.save_dt
                )));
            }
        }
        self.last_t = Some(state.t);
        if self.is_checkpoint(state.t) {
            self.retained.push(state.clone());
        }
        self.recent.push_back(state);
        if let Some(w) = self.window {
            let newest = self.last_t.unwrap_or(0.0);
            while let Some(front) = self.recent.front() {
                if front.t < newest - w - TIME_SLACK * w {
                    self.recent.pop_front();
                } else {
                    break;
                }
            }
        }
        Ok(())
    }

    /// Snapshot at time `t`, from the window or the checkpoints.
    pub fn get(&self, t: f64) -> Result<&FieldState> {
        self.recent
            .iter()
            .chain(self.retained.iter())
            .find(|s| self.same_time(s.t, t))
            .ok_or_else(|| Error::Buffer(format!("no snapshot at t = {t}")))
    }

    /// Neighbours `(t - save_dt, t, t + save_dt)`.
    pub fn triple(&self, t: f64) -> Result<[&FieldState; 3]> {
        Ok([
            self.get(t - self.save_dt)?,
            self.get(t)?,
            self.get(t + self.save_dt)?,
        ])
    }

    /// Contiguous states of the sliding window, oldest first.
    pub fn window_states(&self) -> impl Iterator<Item = &FieldState> {
        self.recent.iter()
    }

    pub fn checkpoints(&self) -> &[FieldState] {
        &self.retained
    }

    /// Time range covered by the sliding window.
    pub fn covered(&self) -> Option<(f64, f64)> {
        Some((self.recent.front()?.t, self.recent.back()?.t))
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Grid;

    fn state(t: f64) -> FieldState {
        FieldState::zeros(&Grid::from_size(8, 8.0).unwrap(), 1, t, 0.0).unwrap()
    }

    #[test]
    fn sliding_window_and_checkpoints() {
        let mut b = SnapshotBuffer::new(0.5, Some(1.0))
            .unwrap()
            .with_checkpoints(&[2.5]);
        for k in 0..8 {
            b.push(state(2.0 + 0.5 * k as f64)).unwrap();
        }
        assert_eq!(b.covered(), Some((4.5, 5.5)));
        assert!(b.get(2.5).is_ok());
        assert!(b.get(3.0).is_err());
        assert_eq!(b.triple(5.0).unwrap()[2].t, 5.5);
    }

    #[test]
    fn rejects_irregular_spacing_and_mismatch() {
        let mut b = SnapshotBuffer::keep_all(0.5).unwrap();
        b.push(state(2.0)).unwrap();
        assert!(b.push(state(2.7)).is_err());
        let other = FieldState::zeros(&Grid::from_size(16, 8.0).unwrap(), 1, 2.5, 0.0).unwrap();
        assert!(matches!(b.push(other), Err(Error::GridMismatch)));
        let mut heavy = state(2.5);
        heavy.m = 0.5;
        assert!(b.push(heavy).is_err());
        assert!(SnapshotBuffer::new(0.5, Some(0.7)).is_err());
    }
}
