//! Binary clip-feature files: `TMXF`, u32 version, u32 T, u32 D, then
//! `T * D` little-endian f32 values in time-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::SeqTensor;

pub const FEATURE_MAGIC: [u8; 4] = *b"TMXF";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_BYTES: usize = 16;

/// Serializes a sequence. Values must be finite and representable as f32.
pub fn encode_features(seq: &SeqTensor) -> Result<Vec<u8>> {
    let (t, d) = seq.shape();
    let (t32, d32) = match (u32::try_from(t), u32::try_from(d)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Err(Error::invalid(format!("feature shape {t}x{d} does not fit in u32"))),
    };
    let mut out = Vec::with_capacity(FEATURE_HEADER_BYTES + 4 * t * d);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&t32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for (i, &v) in seq.as_slice().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite(format!(
                "feature value at clip {}, channel {} ({v})",
                i / d,
                i % d
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4-byte slice"))
}

/// Parses a feature file image; `origin` names the source in errors.
pub fn decode_features(bytes: &[u8], origin: &str) -> Result<SeqTensor> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: origin.to_owned(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < FEATURE_HEADER_BYTES {
        return Err(fail(
            bytes.len(),
            format!(
                "truncated header: expected {FEATURE_HEADER_BYTES} bytes, found {}",
                bytes.len()
            ),
        ));
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(fail(0, format!("bad magic {:?}, expected \"TMXF\"", &bytes[..4])));
    }
    let version = u32_at(bytes, 4);
    if version != FEATURE_VERSION {
        return Err(fail(
            4,
            format!("unsupported version {version}, expected {FEATURE_VERSION}"),
        ));
    }
    let t = u32_at(bytes, 8) as usize;
    let d = u32_at(bytes, 12) as usize;
    if t == 0 || d == 0 {
        return Err(fail(8, format!("empty shape {t}x{d}")));
    }
    let expected = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(8, format!("shape {t}x{d} overflows")))?;
    let actual = bytes.len() - FEATURE_HEADER_BYTES;
    if actual != expected {
        let kind = if actual < expected { "truncated" } else { "oversized" };
        return Err(fail(
            bytes.len(),
            format!("{kind} payload: expected {expected} bytes for {t}x{d}, found {actual}"),
        ));
    }
    let mut data = Vec::with_capacity(t * d);
    for (i, chunk) in bytes[FEATURE_HEADER_BYTES..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(fail(
                FEATURE_HEADER_BYTES + 4 * i,
                format!("non-finite value {v} at clip {}, channel {}", i / d, i % d),
            ));
        }
        data.push(f64::from(v));
    }
    SeqTensor::from_vec(t, d, data)
}

pub fn write_feature_file(path: impl AsRef<Path>, seq: &SeqTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(seq)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<SeqTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_features(&bytes, &path.display().to_string())
}
