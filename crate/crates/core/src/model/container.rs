//! The `OPSC` named-tensor container shared by checkpoints and calibration
//! statistics.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OPSC"  u32 version=1  u32 metadata_len  metadata (UTF-8 "key=value\n" lines)
//! u32 n_tensors
//! per tensor: u32 name_len  name  u8 dtype(0=f32)  u8 rank(2)  u64 dims[rank]  f32 payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

pub const MAGIC: &[u8; 4] = b"OPSC";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const RANK: u8 = 2;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor2D)>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        let payload: usize = self.tensors.iter().map(|(n, t)| n.len() + 22 + 4 * t.numel()).sum();
        let mut out = Vec::with_capacity(16 + meta.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(RANK);
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(fmt_err(0, format!("bad magic {magic:?}, expected \"OPSC\"")));
        }
        let at = r.pos;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(fmt_err(at, format!("unsupported version {version}")));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let at = r.pos;
        let meta = std::str::from_utf8(r.take(meta_len, "metadata")?)
            .map_err(|e| fmt_err(at, format!("metadata is not UTF-8: {e}")))?;
        let mut metadata = Vec::new();
        for line in meta.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt_err(at, format!("metadata line without `=`: {line:?}")))?;
            metadata.push((k.to_string(), v.to_string()));
        }

        let n_tensors = r.u32("tensor count")?;
        let mut tensors = Vec::with_capacity(n_tensors.min(4096) as usize);
        for _ in 0..n_tensors {
            let name_len = r.u32("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|e| fmt_err(at, format!("tensor name is not UTF-8: {e}")))?
                .to_string();
            let at = r.pos;
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(fmt_err(at, format!("tensor {name}: unsupported dtype {dtype}")));
            }
            let at = r.pos;
            let rank = r.u8("rank")?;
            if rank != RANK {
                return Err(fmt_err(at, format!("tensor {name}: rank {rank}, expected 2")));
            }
            let at = r.pos;
            let rows = r.u64("dims")?;
            let cols = r.u64("dims")?;
            let nbytes = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(4))
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| fmt_err(at, format!("tensor {name}: dims {rows}x{cols} overflow")))?;
            let raw = r.take(nbytes, "tensor payload")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor2D::new(rows as usize, cols as usize, data).expect("length checked");
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(fmt_err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn fmt_err(offset: usize, reason: String) -> Error {
    Error::Format {
        offset: offset as u64,
        reason,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(fmt_err(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
