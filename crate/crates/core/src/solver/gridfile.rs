//! `PDEGRID1` binary trajectory files.
//!
//! Layout: the 8 magic bytes `PDEGRID1`, a little-endian `u32` header
//! length, a UTF-8 JSON header `{"nt","nx","t","x0","dx"}`, then `nt*nx`
//! little-endian `f64` values in time-major order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Grid1D, SpaceTimeField};

const MAGIC: &[u8; 8] = b"PDEGRID1";

#[derive(Debug, Error)]
pub enum GridFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("missing PDEGRID1 magic bytes")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("inconsistent grid: {0}")]
    Shape(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    nt: usize,
    nx: usize,
    t: Vec<f64>,
    x0: f64,
    dx: f64,
}

pub fn write_grid(w: &mut impl Write, field: &SpaceTimeField) -> Result<(), GridFileError> {
    let header = serde_json::to_vec(&Header {
        nt: field.nt(),
        nx: field.grid.nx,
        t: field.times.clone(),
        x0: field.grid.x0,
        dx: field.grid.dx,
    })?;
    let len = u32::try_from(header.len())
        .map_err(|_| GridFileError::Shape("header longer than 4 GiB".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&header)?;
    for v in &field.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid(r: &mut impl Read) -> Result<SpaceTimeField, GridFileError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GridFileError::BadMagic);
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.t.len() != header.nt {
        return Err(GridFileError::Shape(format!(
            "nt={} but {} timestamps",
            header.nt,
            header.t.len()
        )));
    }
    if header.nx == 0 || !(header.dx > 0.0) {
        return Err(GridFileError::Shape(format!(
            "nx={}, dx={}",
            header.nx, header.dx
        )));
    }
    let count = header
        .nt
        .checked_mul(header.nx)
        .ok_or_else(|| GridFileError::Shape("nt*nx overflows".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(GridFileError::Shape(format!(
            "expected {} value bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let grid = Grid1D {
        nx: header.nx,
        x0: header.x0,
        dx: header.dx,
    };
    SpaceTimeField::new(grid, header.t, values).map_err(|e| GridFileError::Shape(e.to_string()))
}

pub fn write_grid_file(
    path: impl AsRef<Path>,
    field: &SpaceTimeField,
) -> Result<(), GridFileError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_grid(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<SpaceTimeField, GridFileError> {
    read_grid(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SpaceTimeField {
        let grid = Grid1D::periodic(8, 0.0, 1.0).unwrap();
        let values = (0..16).map(|i| i as f64 * 0.1 - 0.3).collect();
        SpaceTimeField::new(grid, vec![0.0, 0.5], values).unwrap()
    }

    #[test]
    fn round_trip() {
        let field = sample();
        let mut buf = Vec::new();
        write_grid(&mut buf, &field).unwrap();
        assert_eq!(&buf[..8], b"PDEGRID1");
        let len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&buf[12..12 + len]).unwrap();
        assert_eq!(
            header,
            r#"{"nt":2,"nx":8,"t":[0.0,0.5],"x0":0.0,"dx":0.125}"#
        );
        assert_eq!(buf.len(), 12 + len + 16 * 8);
        assert_eq!(read_grid(&mut buf.as_slice()).unwrap(), field);
    }

    #[test]
    fn corrupt_inputs() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_grid(&mut bad.as_slice()),
            Err(GridFileError::BadMagic)
        ));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(
            read_grid(&mut &short[..]),
            Err(GridFileError::Shape(_))
        ));
    }
}
