//! Binary checkpoint format.
//!
//! ```text
//! "DTNT" | version u32 | config len u32 | config text | epoch u32 |
//! tensor count u32 | per tensor: name len u32, name, rank u32,
//! extents u32 × rank, values f32 × numel
//! ```
//!
//! All integers and floats are little-endian. Tensors are written sorted by
//! name and include buffers.

use std::collections::BTreeSet;
use std::path::Path;

use super::{Architecture, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DTNT";
pub const FORMAT_VERSION: u32 = 1;

/// Training metadata stored next to the parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CheckpointMeta {
    /// Number of completed epochs when the snapshot was taken.
    pub epoch: u32,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn save_bytes(model: &Model<f32>, meta: CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let text = model.config().to_text();
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&meta.epoch.to_le_bytes());
    let tensors = model.params.all_tensors();
    put_u32(&mut out, tensors.len())?;
    for (name, t) in tensors {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &e in t.shape() {
            put_u32(&mut out, e)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save(model: &Model<f32>, meta: CheckpointMeta, path: &Path) -> Result<()> {
    std::fs::write(path, save_bytes(model, meta)?).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated file while reading {what}"
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

pub fn load_bytes(bytes: &[u8]) -> Result<(Model<f32>, CheckpointMeta)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic bytes, not a checkpoint".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let config = ModelConfig::from_text(r.text("config")?)?;
    let meta = CheckpointMeta {
        epoch: r.u32("epoch")?,
    };
    let arch = Architecture::new(&config)?;
    let mut params = arch.init::<f32>()?;
    let expected: BTreeSet<String> = params.all_tensors().keys().map(|k| k.to_string()).collect();
    let mut seen = BTreeSet::new();
    let count = r.u32("tensor count")?;
    for _ in 0..count {
        let name = r.text("tensor name")?.to_string();
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("extent").map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(
            len.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
            &name,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !expected.contains(&name) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
        }
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        params
            .set(&name, Tensor::new(shape, data)?)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
    }
    if let Some(missing) = expected.difference(&seen).next() {
        return Err(Error::Checkpoint(format!("missing tensor `{missing}`")));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((Model { arch, params }, meta))
}

pub fn load(path: &Path) -> Result<(Model<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
