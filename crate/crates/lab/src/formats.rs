//! Binary field snapshots (`SDF1`) and noise ledgers (`SDL1`).
//!
//! `SDF1`: magic, then `n`, `N`, `d` as little-endian `u32`, then
//! `d N^n` little-endian `f64` values, component-major, each component in
//! row-major axis order.
//!
//! `SDL1`: magic, then `r`, `s` (`f64`), `K_max`, `d` (`u32`), `seed`
//! (`u64`), `dt` (`f64`), `refine`, `steps`, `stored` (`u32`), then
//! `stored` increments, each an `SDF1` record. A ledger with `stored = 0`
//! is regenerated from its seed.

use std::io::{Read, Write};

use phasefield_core::{NoiseLedger, NoiseSpec, Spectral, TorusGrid, VectorField};

use crate::error::{LabError, Result};

pub const SDF_MAGIC: &[u8; 4] = b"SDF1";
pub const SDL_MAGIC: &[u8; 4] = b"SDL1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| LabError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_sdf(grid: TorusGrid, comps: &[&[f64]]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 8 * comps.len() * grid.len());
    out.extend_from_slice(SDF_MAGIC);
    put_u32(&mut out, grid.dim())?;
    put_u32(&mut out, grid.points())?;
    put_u32(&mut out, comps.len())?;
    for c in comps {
        if c.len() != grid.len() {
            return Err(LabError::Format("component length does not match the grid".into()));
        }
        for v in c.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| LabError::Format("truncated input".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn magic(&mut self, m: &[u8; 4]) -> Result<()> {
        if self.take(4)? != m {
            return Err(LabError::Format(format!("missing {} magic", String::from_utf8_lossy(m))));
        }
        Ok(())
    }

    fn sdf(&mut self) -> Result<(TorusGrid, Vec<Vec<f64>>)> {
        self.magic(SDF_MAGIC)?;
        let (n, points, d) = (self.u32()?, self.u32()?, self.u32()?);
        let grid = TorusGrid::new(n, points)?;
        let mut comps = Vec::with_capacity(d);
        for _ in 0..d {
            let raw = self.take(8 * grid.len())?;
            comps.push(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect());
        }
        Ok((grid, comps))
    }
}

pub fn decode_sdf(buf: &[u8]) -> Result<(TorusGrid, Vec<Vec<f64>>)> {
    let mut c = Cursor { buf, pos: 0 };
    let out = c.sdf()?;
    if c.pos != buf.len() {
        return Err(LabError::Format("trailing bytes after SDF1 record".into()));
    }
    Ok(out)
}

/// Snapshot as one record: `phi` first, then the components of `c`.
pub fn encode_snapshot(phi: &[f64], c: &VectorField) -> Result<Vec<u8>> {
    let mut comps: Vec<&[f64]> = vec![phi];
    comps.extend(c.comps().iter().map(|v| v.as_slice()));
    encode_sdf(c.grid(), &comps)
}

pub fn encode_ledger(ledger: &NoiseLedger, full: bool) -> Result<Vec<u8>> {
    let spec = ledger.spec();
    let mut out = Vec::new();
    out.extend_from_slice(SDL_MAGIC);
    out.extend_from_slice(&spec.r.to_le_bytes());
    out.extend_from_slice(&spec.s.to_le_bytes());
    put_u32(&mut out, spec.k_max)?;
    put_u32(&mut out, spec.d)?;
    out.extend_from_slice(&spec.seed.to_le_bytes());
    out.extend_from_slice(&ledger.dt().to_le_bytes());
    put_u32(&mut out, ledger.refine())?;
    put_u32(&mut out, ledger.steps())?;
    if !full {
        put_u32(&mut out, 0)?;
        return Ok(out);
    }
    put_u32(&mut out, ledger.steps())?;
    let grid = ledger.grid();
    let mut ws = Spectral::new(grid);
    for n in 0..ledger.steps() {
        let inc = ledger.increment(n, &mut ws)?;
        let comps: Vec<&[f64]> = inc.comps().iter().map(|v| v.as_slice()).collect();
        out.extend(encode_sdf(grid, &comps)?);
    }
    Ok(out)
}

/// Reads a ledger; `grid` is needed when no increments are stored.
pub fn decode_ledger(buf: &[u8], grid: TorusGrid) -> Result<NoiseLedger> {
    let mut c = Cursor { buf, pos: 0 };
    c.magic(SDL_MAGIC)?;
    let (r, s) = (c.f64()?, c.f64()?);
    let (k_max, d) = (c.u32()?, c.u32()?);
    let seed = c.u64()?;
    let dt = c.f64()?;
    let (refine, steps, stored) = (c.u32()?, c.u32()?, c.u32()?);
    let spec = NoiseSpec { r, s, k_max, d, seed };
    if stored == 0 {
        if c.pos != buf.len() {
            return Err(LabError::Format("trailing bytes after SDL1 header".into()));
        }
        return Ok(NoiseLedger::lazy_refined(spec, grid, dt, steps, refine));
    }
    if stored != steps {
        return Err(LabError::Format("partial ledgers are not supported".into()));
    }
    let mut incs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (g, comps) = c.sdf()?;
        if g != grid || comps.len() != d {
            return Err(LabError::Format("increment shape does not match the ledger".into()));
        }
        incs.push(VectorField::new(g, comps)?);
    }
    if c.pos != buf.len() {
        return Err(LabError::Format("trailing bytes after SDL1 record".into()));
    }
    Ok(NoiseLedger::from_increments(spec, grid, dt, incs))
}

pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(bytes).map_err(|e| LabError::io(path, e))
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| LabError::io(path, e))?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sdf_layout() {
        let g = TorusGrid::new(2, 8).unwrap();
        let a: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let b = encode_sdf(g, &[&a]).unwrap();
        assert_eq!(&b[..4], b"SDF1");
        assert_eq!(&b[4..16], &[2, 0, 0, 0, 8, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(b.len(), 16 + 64 * 8);
        assert_eq!(f64::from_le_bytes(b[16 + 8 * 5..16 + 8 * 6].try_into().unwrap()), 5.0);
        let (g2, c) = decode_sdf(&b).unwrap();
        assert_eq!(g2, g);
        assert_eq!(c[0], a);
        assert!(decode_sdf(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn ledger_round_trip() {
        let g = TorusGrid::new(2, 16).unwrap();
        let mut spec = NoiseSpec::new(2, 9);
        spec.k_max = 4;
        let lazy = NoiseLedger::lazy_refined(spec, g, 1e-3, 3, 2);
        let mut ws = Spectral::new(g);
        for full in [false, true] {
            let back = decode_ledger(&encode_ledger(&lazy, full).unwrap(), g).unwrap();
            assert_eq!(back.steps(), 3);
            for n in 0..3 {
                assert_eq!(back.increment(n, &mut ws).unwrap(), lazy.increment(n, &mut ws).unwrap());
            }
        }
    }
}
