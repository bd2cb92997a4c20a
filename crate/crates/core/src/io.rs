//! Binary field files.
//!
//! ```text
//! "LMFG"  u32 version=1  u8 dims  u32 n_i (per axis)  f64 L_i (per axis)  f64 values...
//! ```
//!
//! All integers and floats little-endian; values row-major. A file may hold
//! several slices back to back, in which case the payload length is a multiple
//! of the node count.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const MAGIC: &[u8; 4] = b"LMFG";
pub const VERSION: u32 = 1;

fn write_header<W: Write>(w: &mut W, grid: &Grid) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[grid.dims() as u8])?;
    for a in 0..grid.dims() {
        w.write_all(&(grid.n(a) as u32).to_le_bytes())?;
    }
    for a in 0..grid.dims() {
        w.write_all(&grid.half_width(a).to_le_bytes())?;
    }
    Ok(())
}

/// Writes one or more slices sharing a grid.
pub fn write_fields<W: Write>(w: &mut W, fields: &[&Field]) -> Result<()> {
    let first = fields.first().ok_or_else(|| Error::InvalidParameter("no fields".into()))?;
    write_header(w, first.grid())?;
    for f in fields {
        if f.grid() != first.grid() {
            return Err(Error::GridMismatch);
        }
        for v in f.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write_field<W: Write>(w: &mut W, field: &Field) -> Result<()> {
    write_fields(w, &[field])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads every slice in the stream.
pub fn read_fields<R: Read>(r: &mut R) -> Result<Vec<Field>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported version {version}")));
    }
    let mut dims = [0u8; 1];
    r.read_exact(&mut dims)?;
    let dims = dims[0] as usize;
    if !(1..=2).contains(&dims) {
        return Err(Error::Parse(format!("bad dimension {dims}")));
    }
    let mut n = Vec::with_capacity(dims);
    for _ in 0..dims {
        n.push(read_u32(r)? as usize);
    }
    let mut l = Vec::with_capacity(dims);
    for _ in 0..dims {
        l.push(read_f64(r)?);
    }
    let grid = Grid::new(&n, &l)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let slice_bytes = 8 * grid.len();
    if payload.is_empty() || payload.len() % slice_bytes != 0 {
        return Err(Error::Parse(format!(
            "payload of {} bytes is not a multiple of {slice_bytes}",
            payload.len()
        )));
    }
    payload
        .chunks_exact(slice_bytes)
        .map(|chunk| {
            let vals = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            Field::new(&grid, vals)
        })
        .collect()
}

pub fn read_field<R: Read>(r: &mut R) -> Result<Field> {
    let mut all = read_fields(r)?;
    if all.len() != 1 {
        return Err(Error::Parse(format!("expected one slice, found {}", all.len())));
    }
    Ok(all.remove(0))
}
