//! Binary checkpoint container.
//!
//! Little-endian layout, version 1:
//!
//! ```text
//! magic "GMCK" | u32 format version
//! u64 dim | u64 hidden | u64 head_count | u64 seed | u64 param version
//! f64 init_scale | f64 lazy_scale
//! f64 x hidden                          b1
//! head_count x (f64 x 2*hidden, f64 x 2) w2, b2
//! u64 row count, then per row in ascending index order: u32 index, f64 x hidden
//! ```

use std::collections::HashMap;
use std::path::Path;

use super::mlp::{HeadParams, ModelParams};
use super::{ModelError, NUM_CLASSES};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GMCK";
const FORMAT_VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::Checkpoint("truncated checkpoint".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, ModelError> {
        usize::try_from(self.u64()?).map_err(|_| ModelError::Checkpoint("size overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

impl ModelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.hidden * (self.rows.len() + 1 + 3 * self.heads.len()));
        let put_f64s = |out: &mut Vec<u8>, vals: &[f64]| {
            for v in vals {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        };
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [
            self.dim as u64,
            self.hidden as u64,
            self.heads.len() as u64,
            self.seed,
            self.version,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_f64s(&mut out, &[self.init_scale, self.lazy_scale]);
        put_f64s(&mut out, &self.b1);
        for head in &self.heads {
            put_f64s(&mut out, &head.w2);
            put_f64s(&mut out, &head.b2);
        }
        let mut rows: Vec<(&u32, &Vec<f64>)> = self.rows.iter().collect();
        rows.sort_unstable_by_key(|(i, _)| **i);
        out.extend_from_slice(&(rows.len() as u64).to_le_bytes());
        for (i, row) in rows {
            out.extend_from_slice(&i.to_le_bytes());
            put_f64s(&mut out, row);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams, ModelError> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let format = r.u32()?;
        if format != FORMAT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {format}"
            )));
        }
        let dim = r.usize()?;
        let hidden = r.usize()?;
        let head_count = r.usize()?;
        let seed = r.u64()?;
        let version = r.u64()?;
        let init_scale = r.f64()?;
        let lazy_scale = r.f64()?;
        let b1 = r.f64s(hidden)?;
        let mut heads = Vec::with_capacity(head_count);
        for _ in 0..head_count {
            let w2 = r.f64s(hidden * NUM_CLASSES)?;
            let b2 = [r.f64()?, r.f64()?];
            heads.push(HeadParams { w2, b2 });
        }
        let n_rows = r.usize()?;
        let mut rows = HashMap::with_capacity(n_rows);
        for _ in 0..n_rows {
            let i = r.u32()?;
            if i as usize >= dim {
                return Err(ModelError::Checkpoint(format!("row index {i} out of range")));
            }
            rows.insert(i, r.f64s(hidden)?);
        }
        if !r.buf.is_empty() {
            return Err(ModelError::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(ModelParams {
            dim,
            hidden,
            seed,
            init_scale,
            lazy_scale,
            rows,
            b1,
            heads,
            version,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelParams, ModelError> {
        ModelParams::from_bytes(&std::fs::read(path)?)
    }
}
