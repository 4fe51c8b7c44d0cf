//! Binary container helpers and the model file format.
//!
//! All integers are little-endian `u64`, all reals little-endian IEEE-754
//! `f64`. A model file is laid out as:
//!
//! ```text
//! magic      8 bytes  "SSSEMDL\0"
//! version    u8       1
//! shape tag  u8       1 = multi-attribute linear, 2 = multinomial linear, 3 = MLP
//! dims       3 × u64  (attributes, features, 0) | (classes, features, 0) | (inputs, hidden, classes)
//! d          u64      parameter count
//! values     d × f64
//! seed       u64
//! l2_coeff   f64
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{shape_code, shape_from_code, LossConfig, ModelParams};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 8] = b"SSSEMDL\0";
pub const MODEL_VERSION: u8 = 1;

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Cursor over a byte buffer that reports the offset of any failure.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        Error::parse(format!("{} byte offset {}", self.what, self.pos), msg)
    }

    pub fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < len {
            return Err(self.error(format!(
                "unexpected end of data: needed {len} bytes, {} remain",
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let start = self.pos;
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| {
            Error::parse(
                format!("{} byte offset {start}", self.what),
                format!("length {v} does not fit in memory"),
            )
        })
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Guard against absurd lengths before allocating.
    pub fn expect_remaining(&self, bytes: usize) -> Result<()> {
        if self.buf.len() - self.pos < bytes {
            return Err(self.error(format!(
                "declared payload of {bytes} bytes exceeds the {} remaining",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }

    pub fn magic(&mut self, magic: &[u8; 8], version: u8) -> Result<()> {
        if self.take(8)? != magic {
            self.pos = 0;
            return Err(self.error("bad magic string"));
        }
        let v = self.u8()?;
        if v != version {
            return Err(self.error(format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.error(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory
/// followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn model_to_bytes<T: Scalar>(params: &ModelParams<T>, loss: &LossConfig<T>) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MODEL_MAGIC);
    w.u8(MODEL_VERSION);
    let (tag, a, b, c) = shape_code(&params.shape());
    w.u8(tag);
    for dim in [a, b, c] {
        w.u64(dim as u64);
    }
    w.u64(params.len() as u64);
    for v in params.values() {
        w.f64(v.as_f64());
    }
    w.u64(params.seed());
    w.f64(loss.l2_coeff.as_f64());
    w.finish()
}

pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(ModelParams<T>, LossConfig<T>)> {
    let mut r = ByteReader::new(bytes, "model file");
    r.magic(MODEL_MAGIC, MODEL_VERSION)?;
    let tag = r.u8()?;
    let (a, b, c) = (r.usize()?, r.usize()?, r.usize()?);
    let shape = shape_from_code(tag, a, b, c)
        .ok_or_else(|| r.error(format!("unknown shape tag {tag}")))?;
    let d = r.usize()?;
    if d != shape.num_params() {
        return Err(r.error(format!(
            "parameter count {d} does not match shape {shape:?}"
        )));
    }
    r.expect_remaining(d.saturating_mul(8))?;
    let values = (0..d)
        .map(|_| r.f64().map(T::of_f64))
        .collect::<Result<Vec<_>>>()?;
    let seed = r.u64()?;
    let l2 = r.f64()?;
    r.finish()?;
    let params = ModelParams::new(values, shape, seed)?;
    let loss = LossConfig::new(T::of_f64(l2))?;
    Ok((params, loss))
}

pub fn save_model<T: Scalar>(
    params: &ModelParams<T>,
    loss: &LossConfig<T>,
    path: &Path,
) -> Result<()> {
    write_atomic(path, &model_to_bytes(params, loss))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<(ModelParams<T>, LossConfig<T>)> {
    model_from_bytes(&read_file(path)?)
}
