//! CKPT1: `b"CKPT1"`, u32 config length, config text, u32 array count, then
//! per array a u32 name length, the name, a u32 element count and the
//! elements as little-endian f32. All integers are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::write_atomic;

use super::TrainConfig;

const MAGIC: &[u8; 5] = b"CKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub arrays: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Result<&[f32]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Parse(format!("checkpoint has no array {name:?}")))
    }
}

pub fn encode_ckpt1(ckpt: &Checkpoint) -> Vec<u8> {
    let config = ckpt.config.to_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(ckpt.arrays.len() as u32).to_le_bytes());
    for (name, data) in &ckpt.arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Parse("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Parse("checkpoint text is not UTF-8".into()))
    }
}

pub fn decode_ckpt1(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::Parse("not a CKPT1 checkpoint".into()));
    }
    let len = r.u32()?;
    let config = TrainConfig::parse(r.text(len)?)?;
    let count = r.u32()?;
    let mut arrays = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()?;
        let name = r.text(len)?.to_string();
        let len = r.u32()?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Parse("array too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        arrays.push((name, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { config, arrays })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_ckpt1(ckpt))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_ckpt1(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config: TrainConfig { seed: 9, steps: 3, ..Default::default() },
            arrays: vec![("a".into(), vec![1.0, -0.0, f32::MIN_POSITIVE]), ("bb".into(), vec![])],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode_ckpt1(&sample());
        let back = decode_ckpt1(&bytes).unwrap();
        assert_eq!(encode_ckpt1(&back), bytes);
        assert_eq!(back.array("a").unwrap()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = encode_ckpt1(&sample());
        assert!(decode_ckpt1(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_ckpt1(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(decode_ckpt1(&magic), Err(Error::Parse(_))));
        assert!(sample().array("missing").is_err());
    }
}
