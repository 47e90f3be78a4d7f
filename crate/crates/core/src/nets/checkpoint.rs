//! Single-file parameter checkpoints.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes   "QFCK"
//! version      u32       1
//! meta_len     u32       length of the JSON metadata block
//! meta         meta_len  UTF-8 JSON object
//! count        u32       number of entries
//! entries, each:
//!   name_len   u16
//!   name       name_len  UTF-8
//!   rank       u8
//!   dims       rank × u32
//!   data       product(dims) × f32
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use super::NetError;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"QFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub entries: Vec<NamedTensor>,
    index: HashMap<String, usize>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self::new(Value::Object(Default::default()))
    }
}

fn err(msg: impl Into<String>) -> NetError {
    NetError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(metadata: Value) -> Self {
        Self { metadata, entries: Vec::new(), index: HashMap::new() }
    }

    /// Adds entries; a repeated name replaces the earlier entry.
    pub fn extend(&mut self, tensors: impl IntoIterator<Item = NamedTensor>) {
        for t in tensors {
            match self.index.get(&t.name) {
                Some(&i) => self.entries[i] = t,
                None => {
                    self.index.insert(t.name.clone(), self.entries.len());
                    self.entries.push(t);
                }
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor, NetError> {
        self.get(name).ok_or_else(|| NetError::MissingEntry(name.to_string()))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.iter().any(|e| e.name.starts_with(prefix))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), NetError> {
        let io = |e: std::io::Error| err(e.to_string());
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| err(e.to_string()))?;
        w.write_all(&CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(meta.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&meta).map_err(io)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes()).map_err(io)?;
        for e in &self.entries {
            let numel: usize = e.shape.iter().product();
            if numel != e.data.len() {
                return Err(err(format!("entry {} has {} values for shape {:?}", e.name, e.data.len(), e.shape)));
            }
            let name = e.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| err(format!("entry name too long: {}", e.name)))?;
            let rank = u8::try_from(e.shape.len()).map_err(|_| err(format!("rank too large: {}", e.name)))?;
            w.write_all(&name_len.to_le_bytes()).map_err(io)?;
            w.write_all(name).map_err(io)?;
            w.write_all(&[rank]).map_err(io)?;
            for &d in &e.shape {
                let d = u32::try_from(d).map_err(|_| err(format!("dimension too large: {}", e.name)))?;
                w.write_all(&d.to_le_bytes()).map_err(io)?;
            }
            let mut buf = Vec::with_capacity(4 * e.data.len());
            for v in &e.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, NetError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| err(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(err("bad magic; not a checkpoint file"));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let meta_len = cur.u32()? as usize;
        let metadata: Value = serde_json::from_slice(cur.take(meta_len)?).map_err(|e| err(format!("metadata: {e}")))?;
        let count = cur.u32()? as usize;
        let mut ckpt = Checkpoint::new(metadata);
        for _ in 0..count {
            let name_len = cur.u16()? as usize;
            let name =
                std::str::from_utf8(cur.take(name_len)?).map_err(|_| err("entry name is not UTF-8"))?.to_string();
            let rank = cur.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = cur.take(numel.checked_mul(4).ok_or_else(|| err("entry too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if ckpt.get(&name).is_some() {
                return Err(err(format!("duplicate entry {name}")));
            }
            ckpt.extend([NamedTensor { name, shape, data }]);
        }
        if cur.pos != bytes.len() {
            return Err(err(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(ckpt)
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let tmp = path.with_extension("tmp");
        {
            let f = fs::File::create(&tmp).map_err(|e| err(format!("{}: {e}", tmp.display())))?;
            self.write_to(std::io::BufWriter::new(f))?;
        }
        fs::rename(&tmp, path).map_err(|e| err(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let bytes = fs::read(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| err("unexpected end of file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, NetError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
