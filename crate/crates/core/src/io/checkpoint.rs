//! Model checkpoints: `TMXC`, u32 version, u32 length + model config JSON,
//! u32 tensor count, then per tensor a u32-length name, u32 rows, u32 cols
//! and little-endian f64 values. All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TMXC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.config.validate()?;
    if !ckpt.params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&ckpt.config).expect("serializable config");
    push_u32(&mut out, config.len())?;
    out.extend_from_slice(&config);
    let named = ckpt.params.named();
    push_u32(&mut out, named.len())?;
    for (name, t) in named {
        push_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        push_u32(&mut out, t.len())?;
        push_u32(&mut out, t.channels())?;
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.origin.to_owned(),
            offset: offset as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(self.fail(self.pos, format!("truncated {what}: expected {n} bytes, found {left}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8], origin: &str) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(r.fail(0, "bad magic, expected \"TMXC\""));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(r.fail(
            4,
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let len = r.u32("config length")?;
    let at = r.pos;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len, "config")?).map_err(|e| r.fail(at, format!("bad config: {e}")))?;
    config.validate().map_err(|e| r.fail(at, format!("bad config: {e}")))?;
    let mut params = init_params(&config, 0);
    let expected: Vec<(String, (usize, usize))> = params.named().into_iter().map(|(n, t)| (n, t.shape())).collect();
    let count_at = r.pos;
    let count = r.u32("tensor count")?;
    if count != expected.len() {
        return Err(r.fail(
            count_at,
            format!("expected {} tensors for this config, found {count}", expected.len()),
        ));
    }
    for ((name, shape), slot) in expected.iter().zip(params.leaves_mut()) {
        let at = r.pos;
        let n = r.u32("tensor name length")?;
        let got = r.take(n, "tensor name")?;
        if got != name.as_bytes() {
            return Err(r.fail(
                at,
                format!("expected tensor {name:?}, found {:?}", String::from_utf8_lossy(got)),
            ));
        }
        let at = r.pos;
        let rows = r.u32("tensor rows")?;
        let cols = r.u32("tensor cols")?;
        if (rows, cols) != *shape {
            return Err(r.fail(
                at,
                format!(
                    "tensor {name} has shape {rows}x{cols}, expected {}x{}",
                    shape.0, shape.1
                ),
            ));
        }
        let at = r.pos;
        let payload = r.take(8 * rows * cols, "tensor payload")?;
        for (v, chunk) in slot.as_mut_slice().iter_mut().zip(payload.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        if !slot.is_finite() {
            return Err(r.fail(at, format!("non-finite value in tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { config, params })
}

pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}
