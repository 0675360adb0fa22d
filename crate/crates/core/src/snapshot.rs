//! Field snapshot files: a JSON sidecar plus a raw little-endian binary of
//! interleaved `re, im` float64 pairs in row-major order.
//!
//! Several fields on the same grid may be stacked in one binary (`rows > 1`);
//! explicit kernel matrices and rank-r kernel pairs use that layout.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

pub const DTYPE: &str = "f64";
pub const LAYOUT: &str = "row-major interleaved re,im";
pub const ENDIANNESS: &str = "little";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub length: f64,
    pub t: f64,
    pub dtype: String,
    pub layout: String,
    pub endianness: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub rows: usize,
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

impl SnapshotHeader {
    pub fn for_grid(grid: &Grid, t: f64, rows: usize) -> SnapshotHeader {
        SnapshotHeader {
            d: grid.dim(),
            n: grid.n(),
            length: grid.length(),
            t,
            dtype: DTYPE.into(),
            layout: LAYOUT.into(),
            endianness: ENDIANNESS.into(),
            rows,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dtype != DTYPE || self.layout != LAYOUT || self.endianness != ENDIANNESS {
            return Err(Error::Snapshot(format!(
                "unsupported encoding dtype={:?} layout={:?} endianness={:?}",
                self.dtype, self.layout, self.endianness
            )));
        }
        if self.rows == 0 {
            return Err(Error::Snapshot("rows must be >= 1".into()));
        }
        Ok(())
    }
}

/// Path of the binary companion of a sidecar.
pub fn binary_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

pub fn encode(fields: &[&Field]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fields.iter().map(|f| f.values().len() * 16).sum());
    for f in fields {
        for c in f.values() {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    out
}

/// Writes `<stem>.json` and `<stem>.bin`; returns both paths.
pub fn write_rows(sidecar: &Path, fields: &[&Field], t: f64) -> Result<(PathBuf, PathBuf)> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Snapshot("no fields to write".into()))?;
    for f in fields {
        if !crate::grid::same_grid(f.grid(), first.grid()) {
            return Err(Error::GridMismatch("snapshot rows on different grids".into()));
        }
    }
    let header = SnapshotHeader::for_grid(first.grid(), t, fields.len());
    let bin = binary_path(sidecar);
    fs::write(sidecar, serde_json::to_string_pretty(&header)?)?;
    fs::write(&bin, encode(fields))?;
    Ok((sidecar.to_path_buf(), bin))
}

pub fn write_field(sidecar: &Path, field: &Field, t: f64) -> Result<(PathBuf, PathBuf)> {
    write_rows(sidecar, &[field], t)
}

pub fn decode(header: &SnapshotHeader, bytes: &[u8], grid: &Arc<Grid>) -> Result<Vec<Field>> {
    let per_row = grid.len();
    let expected = 16 * per_row * header.rows;
    if bytes.len() != expected {
        return Err(Error::Snapshot(format!(
            "binary holds {} bytes, header requires exactly {expected}",
            bytes.len()
        )));
    }
    let mut rows = Vec::with_capacity(header.rows);
    for r in 0..header.rows {
        let chunk = &bytes[r * 16 * per_row..(r + 1) * 16 * per_row];
        let values: Vec<Complex64> = chunk
            .chunks_exact(16)
            .map(|b| {
                let re = f64::from_le_bytes(b[0..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(b[8..16].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        rows.push(Field::new(grid.clone(), values)?);
    }
    Ok(rows)
}

/// Reads every row stored under a sidecar, building a fresh grid from the header.
pub fn read_rows(sidecar: &Path) -> Result<(SnapshotHeader, Vec<Field>)> {
    let header: SnapshotHeader = serde_json::from_str(&fs::read_to_string(sidecar)?)
        .map_err(|e| Error::Snapshot(format!("{}: {e}", sidecar.display())))?;
    header.validate()?;
    let grid = Grid::new(header.d, header.n, header.length)?;
    let bytes = fs::read(binary_path(sidecar))?;
    let rows = decode(&header, &bytes, &grid)?;
    Ok((header, rows))
}

/// Reads rows and checks them against an existing grid.
pub fn read_rows_on(sidecar: &Path, grid: &Arc<Grid>) -> Result<(SnapshotHeader, Vec<Field>)> {
    let (header, _) = read_rows(sidecar)?;
    if header.d != grid.dim() || header.n != grid.n() || header.length != grid.length() {
        return Err(Error::GridMismatch(format!(
            "snapshot grid (d={}, n={}, L={}) does not match {:?}",
            header.d, header.n, header.length, grid
        )));
    }
    let bytes = fs::read(binary_path(sidecar))?;
    let rows = decode(&header, &bytes, grid)?;
    Ok((header, rows))
}

pub fn read_field(sidecar: &Path) -> Result<(Field, f64)> {
    let (header, mut rows) = read_rows(sidecar)?;
    if rows.len() != 1 {
        return Err(Error::Snapshot(format!("expected one row, found {}", rows.len())));
    }
    Ok((rows.remove(0), header.t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sidecar_has_the_documented_keys() {
        let g = Grid::new(1, 8, 2.0).unwrap();
        let h = SnapshotHeader::for_grid(&g, 0.5, 1);
        let v: serde_json::Value = serde_json::to_value(&h).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["L", "d", "dtype", "endianness", "layout", "n", "t"]);
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(1, 8, 2.0).unwrap();
        let f = Field::from_fn(&g, |x| Complex64::new(x[0], -x[0]));
        let side = dir.path().join("u.json");
        write_field(&side, &f, 0.0).unwrap();
        let bin = binary_path(&side);
        let mut bytes = fs::read(&bin).unwrap();
        bytes.pop();
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_field(&side), Err(Error::Snapshot(_))));
        bytes.extend_from_slice(&[0u8; 2]);
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_field(&side), Err(Error::Snapshot(_))));
    }

    #[test]
    fn little_endian_interleaved_layout() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let mut f = Field::zeros(&g);
        f.values_mut()[0] = Complex64::new(1.0, -2.0);
        let bytes = encode(&[&f]);
        assert_eq!(bytes.len(), 16 * 8);
        assert_eq!(&bytes[0..8], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[8..16], &(-2.0f64).to_le_bytes());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(vals in proptest::collection::vec(-1e6f64..1e6, 32), t in 0.0f64..10.0) {
            let dir = tempfile::tempdir().unwrap();
            let g = Grid::new(1, 16, 3.5).unwrap();
            let data: Vec<Complex64> = vals.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
            let f = Field::new(g, data).unwrap();
            let side = dir.path().join("snap.json");
            write_field(&side, &f, t).unwrap();
            let (back, t2) = read_field(&side).unwrap();
            prop_assert_eq!(t2.to_bits(), t.to_bits());
            for (a, b) in f.values().iter().zip(back.values()) {
                prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
                prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }
    }
}
