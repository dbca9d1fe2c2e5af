//! Checkpoints, JSON artifacts and small CSV tables.
//!
//! Checkpoint layout (`CTNS1`), all numbers little-endian:
//!
//! | offset | size | content |
//! |---|---|---|
//! | 0 | 5 | ASCII `CTNS1` |
//! | 5 | 1 | `N`, the dimension (2 or 3) |
//! | 6 | 24 | cells per axis, 3 × `u64` (unused axes hold 1) |
//! | 30 | 24 | side lengths, 3 × `f64` (unused axes hold 1.0) |
//! | 54 | 8 | `t`, `f64` |
//! | 62 | 8 | level of `n`, `f64` |
//! | 70 | 8·C | deviation of `n`, C = number of cells, x fastest |
//! | … | 8 | level of `c`, `f64` |
//! | … | 8·C | deviation of `c` |
//! | … | 8·F_a | `u` face values for each axis `a = 0..N`, F_a = faces normal to `a` |
//!
//! The file ends right after the last face value.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{OffsetField, RectDomain, ScalarField, SystemState, VectorField};
use crate::monitor::fmt17;
use crate::sensitivity::EtaGap;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CTNS1";

pub fn encode_checkpoint(state: &SystemState) -> Vec<u8> {
    let d = state.domain();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(d.dim() as u8);
    for c in d.cells3() {
        out.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for a in 0..3 {
        let l = d.lengths().get(a).copied().unwrap_or(1.0);
        out.extend_from_slice(&l.to_le_bytes());
    }
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    put(state.t);
    for f in [&state.n, &state.c] {
        put(f.level);
        f.deviation.values().iter().for_each(|&v| put(v));
    }
    for comp in state.u.components() {
        comp.iter().for_each(|&v| put(v));
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self.buf.get(self.pos..end).ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<SystemState> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(5)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a CTNS1 checkpoint".into()));
    }
    let dim = cur.take(1)?[0] as usize;
    if !(dim == 2 || dim == 3) {
        return Err(Error::Format(format!("checkpoint dimension {dim}")));
    }
    let cells: Vec<usize> = (0..3).map(|_| cur.u64().map(|v| v as usize)).collect::<Result<_>>()?;
    let lengths = cur.f64s(3)?;
    let d = RectDomain::new(&lengths[..dim], &cells[..dim])?;
    let t = cur.f64()?;
    let scalar = |cur: &mut Cursor| -> Result<OffsetField> {
        let level = cur.f64()?;
        let dev = cur.f64s(d.n_cells())?;
        Ok(OffsetField { level, deviation: ScalarField::from_values(&d, dev)? })
    };
    let n = scalar(&mut cur)?;
    let c = scalar(&mut cur)?;
    let comps = (0..dim).map(|a| cur.f64s(d.face_count(a))).collect::<Result<Vec<_>>>()?;
    let u = VectorField::from_components(&d, comps)?;
    if cur.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", buf.len() - cur.pos)));
    }
    let state = SystemState { n, c, u, t };
    if !state.is_finite() {
        return Err(Error::NonFinite("checkpoint".into()));
    }
    Ok(state)
}

pub fn write_checkpoint(path: &Path, state: &SystemState) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<SystemState> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Format(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, to_json(v)?)?;
    Ok(())
}

pub fn write_eta_gaps(w: impl Write, gaps: &[EtaGap]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Format(format!("csv: {e}"));
    wr.write_record(["eta", "eta_next", "gap_n_Linf", "gap_c_Linf"]).map_err(err)?;
    for g in gaps {
        wr.write_record([g.eta, g.eta_next, g.gap_n, g.gap_c].map(fmt17)).map_err(err)?;
    }
    wr.flush()?;
    Ok(())
}
