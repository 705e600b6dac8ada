//! Binary parameter checkpoints.
//!
//! Little-endian: magic `MUFN`, version `u32`, the `FnoConfig` as a
//! length-prefixed (`u64`) JSON document, then every tensor in declaration
//! order as `rank: u64`, `dims: [u64; rank]`, values as `f64`. Each spectral
//! block writes its multiplier `a` as a rank-0 tensor followed by `r` with
//! dims `[K, m, m]` and interleaved `re, im` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dense, FnoConfig, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MUFN";
const VERSION: u32 = 1;

struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }

    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn tensor(&mut self, dims: &[usize], values: &[f64]) -> std::io::Result<()> {
        self.u64(dims.len() as u64)?;
        for &d in dims {
            self.u64(d as u64)?;
        }
        for v in values {
            self.bytes(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn dense(&mut self, d: &Dense) -> std::io::Result<()> {
        self.tensor(&[d.rows, d.cols], &d.weight)?;
        self.tensor(&[d.rows], &d.bias)
    }
}

pub fn write_checkpoint<W: Write>(out: W, config: &FnoConfig, params: &ModelParams) -> Result<()> {
    if !params.matches_config(config) {
        return Err(Error::Size("parameters do not match the configuration".into()));
    }
    let json = serde_json::to_vec(config).expect("config serializes");
    let io = |e| Error::io("<checkpoint>", e);
    let mut w = Writer { inner: out };
    w.bytes(MAGIC).map_err(io)?;
    w.bytes(&VERSION.to_le_bytes()).map_err(io)?;
    w.u64(json.len() as u64).map_err(io)?;
    w.bytes(&json).map_err(io)?;
    w.dense(&params.lift).map_err(io)?;
    for b in &params.blocks {
        w.dense(&b.pointwise).map_err(io)?;
        let s = &b.spectral;
        w.tensor(&[], &[s.scale]).map_err(io)?;
        w.tensor(&[s.modes, s.channels, s.channels], &s.data).map_err(io)?;
    }
    w.dense(&params.proj_hidden).map_err(io)?;
    w.dense(&params.proj_out).map_err(io)?;
    Ok(())
}

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| Error::Format {
            offset: self.offset,
            reason: format!("truncated input ({e})"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn tensor_into(&mut self, dims: &[usize], values: &mut [f64]) -> Result<()> {
        let at = self.offset;
        let rank = self.u64()? as usize;
        let mut found = Vec::with_capacity(rank.min(8));
        for _ in 0..rank.min(8) {
            found.push(self.u64()? as usize);
        }
        if found != dims || rank > 8 {
            return Err(Error::Format {
                offset: at,
                reason: format!("expected tensor dims {dims:?}, found {found:?}"),
            });
        }
        let mut b = [0u8; 8];
        for v in values.iter_mut() {
            self.fill(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        Ok(())
    }

    fn dense_into(&mut self, d: &mut Dense) -> Result<()> {
        self.tensor_into(&[d.rows, d.cols], &mut d.weight)?;
        self.tensor_into(&[d.rows], &mut d.bias)
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<(FnoConfig, ModelParams)> {
    let mut r = Reader {
        inner: input,
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.fill(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, not a checkpoint".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let len = r.u64()?;
    if len > 1 << 20 {
        return Err(Error::Format {
            offset: 8,
            reason: format!("implausible config length {len}"),
        });
    }
    let at = r.offset;
    let mut json = vec![0u8; len as usize];
    r.fill(&mut json)?;
    let config: FnoConfig = serde_json::from_slice(&json).map_err(|e| Error::Format {
        offset: at,
        reason: format!("config: {e}"),
    })?;
    config.validate()?;
    let mut params = ModelParams::zeros(&config);
    r.dense_into(&mut params.lift)?;
    for b in &mut params.blocks {
        r.dense_into(&mut b.pointwise)?;
        let mut scale = [0.0];
        r.tensor_into(&[], &mut scale)?;
        b.spectral.scale = scale[0];
        let dims = [b.spectral.modes, b.spectral.channels, b.spectral.channels];
        r.tensor_into(&dims, &mut b.spectral.data)?;
    }
    r.dense_into(&mut params.proj_hidden)?;
    r.dense_into(&mut params.proj_out)?;
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &FnoConfig, params: &ModelParams) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, config, params)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(FnoConfig, ModelParams)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
