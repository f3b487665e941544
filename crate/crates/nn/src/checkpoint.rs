//! `CKPT1` parameter files.
//!
//! Layout (all integers u32 little-endian): the 5 magic bytes `CKPT1`, the
//! entry count, then per entry the name length, UTF-8 name bytes, rank, the
//! extents, and `product(extents)` f32 little-endian values.

use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CKPT1";

pub fn encode_checkpoint<T: Scalar>(params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(NnError::Format { offset: self.pos, message: format!("truncated while reading {what}") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(5, "magic")? != CHECKPOINT_MAGIC {
        return Err(NnError::Format { offset: 0, message: "bad magic, expected CKPT1".into() });
    }
    let count = cur.u32("entry count")?;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = cur.u32("name length")?;
        let at = cur.pos;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| NnError::Format { offset: at, message: "parameter name is not UTF-8".into() })?
            .to_string();
        let rank = cur.u32("rank")?;
        let shape = (0..rank).map(|_| cur.u32("extent")).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let payload = cur.take(len.saturating_mul(4), "payload")?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        entries.push((name, Tensor::from_vec(&shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(NnError::Format { offset: cur.pos, message: "trailing bytes after last entry".into() });
    }
    Ok(entries)
}

/// Overwrite the values of `params` from checkpoint entries. Every parameter
/// must be present with a matching shape; extra entries are rejected.
pub fn load_into<T: Scalar>(params: &mut ParamStore<T>, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    if entries.len() != params.len() {
        return Err(NnError::Config(format!(
            "checkpoint has {} entries, model has {} parameters",
            entries.len(),
            params.len()
        )));
    }
    for (name, t) in entries {
        let id = params
            .id_of(name)
            .ok_or_else(|| NnError::Config(format!("checkpoint entry `{name}` is not a model parameter")))?;
        let p = params.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(NnError::Config(format!(
                "`{name}`: checkpoint shape {:?}, model shape {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.cast();
    }
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(params: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(params: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    load_into(params, &decode_checkpoint(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.push("a.weight", Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap()).unwrap();
        s.push("a.bias", Tensor::from_vec(&[2], vec![0.5, -0.125]).unwrap()).unwrap();
        s
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&store());
        assert_eq!(&bytes[..5], b"CKPT1");
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &8u32.to_le_bytes());
        assert_eq!(&bytes[13..21], b"a.weight");
        assert_eq!(&bytes[21..25], &4u32.to_le_bytes());
        // 5 + 4 + (4+8+4+16+16) + (4+6+4+4+8)
        assert_eq!(bytes.len(), 5 + 4 + 48 + 26);
    }

    #[test]
    fn round_trip_restores_values() {
        let src = store();
        let bytes = encode_checkpoint(&src);
        let mut dst = store();
        for p in dst.iter_mut() {
            p.value.fill(9.0);
        }
        load_into(&mut dst, &decode_checkpoint(&bytes).unwrap()).unwrap();
        assert_eq!(dst.checksum(), src.checksum());
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_checkpoint(&store());
        for cut in [0, 3, 7, 20, bytes.len() - 1] {
            match decode_checkpoint(&bytes[..cut]) {
                Err(NnError::Format { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: expected format error, got {other:?}"),
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let bytes = encode_checkpoint(&store());
        let mut other = ParamStore::<f32>::new();
        other.push("a.weight", Tensor::zeros(&[4])).unwrap();
        other.push("a.bias", Tensor::zeros(&[2])).unwrap();
        assert!(load_into(&mut other, &decode_checkpoint(&bytes).unwrap()).is_err());
    }
}
