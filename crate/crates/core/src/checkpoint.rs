//! Binary checkpoint: magic, config snapshot, then `path → shape + f32 LE data` records.
//!
//! ```text
//! "MRRW1" | u32 len | config TOML | u32 count | count × entry
//! entry = u8 kind (0 param, 1 buffer) | u32 len | path | u32 rank | rank × u32 dim | f32 data
//! ```

use std::collections::HashSet;
use std::path::Path;

use mrrawnet_tensor::Tensor;

use crate::config::ModelConfig;
use crate::error::{io_err, Error, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 5] = b"MRRW1";

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    let cfg = model.config.to_toml();
    put_u32(&mut out, cfg.len());
    out.extend_from_slice(cfg.as_bytes());
    let params = model.store.params().iter().map(|p| (0u8, &p.name, &p.value));
    let buffers = model.store.buffers().iter().map(|b| (1u8, &b.name, &b.value));
    let entries: Vec<_> = params.chain(buffers).collect();
    put_u32(&mut out, entries.len());
    for (kind, name, value) in entries {
        out.push(kind);
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, value.rank());
        for &d in value.shape() {
            put_u32(&mut out, d);
        }
        for &v in value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(io_err(path))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint { detail, .. } => Error::Checkpoint {
            path: path.to_owned(),
            detail,
        },
        other => other,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(bad("missing MRRW1 magic"));
    }
    let n = r.u32()?;
    let text = std::str::from_utf8(r.take(n)?).map_err(|_| bad("config is not UTF-8"))?;
    let cfg = ModelConfig::from_toml(text)?;
    let mut model = Model::assemble(&cfg, 0)?;
    let count = r.u32()?;
    let mut seen = HashSet::new();
    for _ in 0..count {
        let _kind = r.take(1)?[0];
        let n = r.u32()?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| bad("parameter path is not UTF-8"))?
            .to_owned();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let Some(slot) = model.store.get_mut(&name) else {
            return Err(mismatch(&name, "not part of the configured model"));
        };
        if slot.shape() != shape.as_slice() {
            return Err(mismatch(
                &name,
                format!("shape {:?} in file, model expects {:?}", shape, slot.shape()),
            ));
        }
        *slot = Tensor::new(shape, data)?;
        seen.insert(name);
    }
    let names = model.store.params().iter().map(|p| &p.name);
    let names = names.chain(model.store.buffers().iter().map(|b| &b.name));
    for name in names {
        if !seen.contains(name) {
            return Err(mismatch(name, "missing from checkpoint"));
        }
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(model)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field fits u32").to_le_bytes());
}

fn bad(detail: &str) -> Error {
    Error::Checkpoint {
        path: "<memory>".into(),
        detail: detail.to_owned(),
    }
}

fn mismatch(param: &str, detail: impl Into<String>) -> Error {
    Error::CheckpointParam {
        param: param.to_owned(),
        detail: detail.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_rounds_to_f32() {
        let m = Model::assemble(&ModelConfig::micro(), 3).unwrap();
        let back = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back.config, m.config);
        for (p, q) in m.store.params().iter().zip(back.store.params()) {
            assert_eq!(p.name, q.name);
            for (a, b) in p.value.data().iter().zip(q.value.data()) {
                assert_eq!(*a as f32 as f64, *b);
            }
        }
        assert_eq!(to_bytes(&back), to_bytes(&m));
    }

    #[test]
    fn mismatch_names_the_parameter() {
        let m = Model::assemble(&ModelConfig::micro(), 3).unwrap();
        let mut other = ModelConfig::micro();
        other.head.embed_dim = 16;
        let bytes = to_bytes(&m);
        let text = m.config.to_toml();
        let patched = other.to_toml();
        assert_eq!(text.len(), patched.len());
        let mut forged = bytes.clone();
        let start = MAGIC.len() + 4;
        forged[start..start + text.len()].copy_from_slice(patched.as_bytes());
        let err = from_bytes(&forged).unwrap_err().to_string();
        assert!(err.contains("embed/weight"), "{err}");
    }

    #[test]
    fn corrupt_inputs() {
        assert!(from_bytes(b"NOPE").is_err());
        let m = Model::assemble(&ModelConfig::micro(), 3).unwrap();
        let bytes = to_bytes(&m);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
