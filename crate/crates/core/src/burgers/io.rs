//! Dataset files.
//!
//! Little-endian: magic `FNOD`, version `u32`, spatial dimension `u32`,
//! sample count `u64`, grid size `u64`, channels `u32`, inputs then targets
//! as `f64` in `[N][n][c]` order, and finally the CRC-64/XZ of every
//! preceding byte. Files always describe the unit-length domain.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crc::{Crc, CRC_64_XZ};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Grid1D;
use crate::tensor::Tensor3;

const MAGIC: &[u8; 4] = b"FNOD";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 4;
const CHECKSUM: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

fn encode(ds: &Dataset) -> Vec<u8> {
    let values = ds.inputs.data().len() + ds.targets.data().len();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * values + 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&1u32.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ds.grid.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(ds.inputs.channels() as u32).to_le_bytes());
    for v in ds.inputs.data().iter().chain(ds.targets.data()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = CHECKSUM.checksum(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn write_dataset<W: Write>(mut out: W, ds: &Dataset) -> Result<()> {
    if ds.inputs.channels() != ds.targets.channels() {
        return Err(Error::Size("dataset files need equal input and target channels".into()));
    }
    out.write_all(&encode(ds)).map_err(|e| Error::io("<dataset>", e))
}

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    }
}

fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN + 8 {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(0, "bad magic, not a dataset file"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let dim = u32_at(8);
    if dim != 1 {
        return Err(format_err(8, format!("spatial dimension {dim} is not supported")));
    }
    let count = u64_at(12);
    let n = u64_at(20);
    let channels = u32_at(28) as u64;
    let values = count
        .checked_mul(n)
        .and_then(|v| v.checked_mul(channels))
        .and_then(|v| v.checked_mul(2));
    let expected = values
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add((HEADER_LEN + 8) as u64));
    if expected != Some(bytes.len() as u64) {
        return Err(format_err(
            12,
            format!(
                "header shape [{count}, {n}, {channels}] needs {} bytes, file has {}",
                expected.map_or("too many".into(), |e| e.to_string()),
                bytes.len()
            ),
        ));
    }
    let body_end = bytes.len() - 8;
    let stored = u64_at(body_end);
    if CHECKSUM.checksum(&bytes[..body_end]) != stored {
        return Err(format_err(body_end, "checksum mismatch"));
    }
    let grid = Grid1D::unit(n as usize).map_err(|e| format_err(20, e.to_string()))?;
    let per = (count * n * channels) as usize;
    let read = |start: usize| -> Vec<f64> {
        bytes[start..start + 8 * per]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    let (count, n, channels) = (count as usize, n as usize, channels as usize);
    Dataset::new(
        Tensor3::from_vec(count, n, channels, read(HEADER_LEN))?,
        Tensor3::from_vec(count, n, channels, read(HEADER_LEN + 8 * per))?,
        grid,
    )
}

pub fn read_dataset<R: Read>(mut input: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<dataset>", e))?;
    decode(&bytes)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    if ds.inputs.channels() != ds.targets.channels() {
        return Err(Error::Size("dataset files need equal input and target channels".into()));
    }
    fs::write(path, encode(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
