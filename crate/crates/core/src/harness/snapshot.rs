//! Binary snapshots of a [`FieldState`].
//!
//! Layout, all little-endian: the magic `KGMS`, a `u32` version, `u32`
//! species count, `u32` points per axis, then `f64` box length, time and
//! mass, then every `v_i` followed by every `w_i` in row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::FieldState;
use crate::spectral::{Grid, ScalarField};

pub const MAGIC: &[u8; 4] = b"KGMS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 3 + 8 * 3;

pub fn encode_snapshot(state: &FieldState) -> Vec<u8> {
    let gs = state.grid().spec();
    let n0 = state.species();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * n0 * gs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n0 as u32).to_le_bytes());
    out.extend_from_slice(&(gs.n as u32).to_le_bytes());
    for x in [gs.box_length, state.t, state.m] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for f in state.v.iter().chain(&state.w) {
        for x in f.values() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, k: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < k {
            return Err(Error::SnapshotFormat {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<FieldState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::SnapshotFormat {
            offset: 0,
            message: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::SnapshotFormat {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n0 = r.u32("species count")? as usize;
    let n_at = r.pos;
    let n = r.u32("grid size")? as usize;
    let l = r.f64("box length")?;
    let t = r.f64("time")?;
    let m = r.f64("mass")?;
    let grid = Grid::from_size(n, l).map_err(|e| Error::SnapshotFormat {
        offset: n_at,
        message: e.to_string(),
    })?;
    let points = grid.len();
    let expected = HEADER_LEN + 16 * n0 * points;
    if bytes.len() != expected {
        return Err(Error::SnapshotFormat {
            offset: bytes.len().min(expected),
            message: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    let mut fields = Vec::with_capacity(2 * n0);
    for _ in 0..2 * n0 {
        let start = r.pos;
        let raw = r.take(8 * points, "field data")?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(k) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::SnapshotFormat {
                offset: start + 8 * k,
                message: "non-finite value".into(),
            });
        }
        fields.push(ScalarField::from_values(&grid, values)?);
    }
    let w = fields.split_off(n0);
    FieldState::new(&grid, t, m, fields, w).map_err(|e| Error::SnapshotFormat {
        offset: HEADER_LEN - 16,
        message: e.to_string(),
    })
}

pub fn write_snapshot(path: &Path, state: &FieldState) -> Result<()> {
    std::fs::write(path, encode_snapshot(state)).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<FieldState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}
