//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian u32): magic `LFCK`, version, entry
//! count, then per entry the name length and UTF-8 name, the rank, the dims,
//! and the raw little-endian f32 values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelParams};
use crate::ndmath::Array;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_RANK: usize = 8;
const MAX_NAME: usize = 4096;

pub fn checkpoint_bytes<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Array<f32>)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, a) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(a.rank() as u32).to_le_bytes());
        for &d in a.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in a.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
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

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Array<f32>)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        c.pos = 0;
        return Err(c.err("bad magic, expected LFCK"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        c.pos -= 4;
        return Err(c.err(format!("unsupported version {version}")));
    }
    let count = c.u32("entry count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = c.u32("name length")?;
        if name_len == 0 || name_len > MAX_NAME {
            c.pos -= 4;
            return Err(c.err(format!("implausible name length {name_len}")));
        }
        let raw = c.take(name_len, "name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| c.err("name is not UTF-8"))?
            .to_string();
        let rank = c.u32("rank")?;
        if rank > MAX_RANK {
            c.pos -= 4;
            return Err(c.err(format!("{name}: implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dims")?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&l| l.checked_mul(4).is_some_and(|b| b <= bytes.len() - c.pos))
            .ok_or_else(|| c.err(format!("{name}: shape {shape:?} exceeds the file")))?;
        let raw = c.take(len * 4, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((name, Array::new(&shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(c.err(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params.named()))?;
    Ok(())
}

/// Raw named tensors from a checkpoint file.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Array<f32>)>> {
    parse_checkpoint(&std::fs::read(path)?)
}

/// Loads a checkpoint into a model of the given configuration, rejecting
/// files whose shape table does not match.
pub fn load_checkpoint(path: impl AsRef<Path>, config: &ModelConfig) -> Result<ModelParams> {
    ModelParams::from_tensors(config, read_checkpoint(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_model;
    use proptest::prelude::*;

    fn small() -> ModelParams {
        let cfg = ModelConfig {
            latent_dim: 32,
            height: 12,
            width: 12,
            ..Default::default()
        };
        build_model(&cfg, 4).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lfck");
        save_checkpoint(&m, &p).unwrap();
        let back = load_checkpoint(&p, m.config()).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.tensors().iter().zip(back.tensors()) {
            let bits = |x: &Array<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"LFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let bytes = checkpoint_bytes(small().named());
        for i in 0..8 {
            let mut b = bytes.clone();
            b[i] ^= 0x5a;
            assert!(matches!(parse_checkpoint(&b), Err(Error::Checkpoint { .. })), "byte {i}");
        }
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(parse_checkpoint(cut), Err(Error::Checkpoint { .. })));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(parse_checkpoint(&longer).is_err());
    }

    #[test]
    fn shape_table_mismatch_is_rejected() {
        let m = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lfck");
        save_checkpoint(&m, &p).unwrap();
        let mut other = m.config().clone();
        other.latent_dim = 64;
        assert!(load_checkpoint(&p, &other).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(
            dims in prop::collection::vec(1usize..4, 0..4),
            seed in any::<u32>(),
        ) {
            let len: usize = dims.iter().product();
            let data: Vec<f32> = (0..len)
                .map(|i| f32::from_bits(seed.wrapping_add((i as u32).wrapping_mul(2654435761)) & 0x7f7f_ffff))
                .collect();
            let a = Array::new(&dims, data).unwrap();
            let bytes = checkpoint_bytes([("t", &a)]);
            let back = parse_checkpoint(&bytes).unwrap();
            prop_assert_eq!(back.len(), 1);
            prop_assert_eq!(back[0].1.shape(), a.shape());
            let same = back[0].1.data().iter().zip(a.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
    }
}
