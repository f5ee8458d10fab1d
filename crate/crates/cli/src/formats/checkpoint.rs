//! Parameter checkpoint: a flat binary container of
//! (name, shape, little-endian f64 data) records behind a magic/version
//! tag. Byte-stable for identical training runs.

use std::path::Path;

use detangle_core::nn::{Checkpoint, CheckpointEntry};
use detangle_core::DenseArray;

use crate::error::{io_data, CliError, Result};

const MAGIC: &[u8; 8] = b"DTGLCKPT";
const VERSION: u32 = 1;

pub fn to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.entries.len() as u32).to_le_bytes());
    for entry in &ckpt.entries {
        let name = entry.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.push(entry.value.rank() as u8);
        for &extent in entry.value.shape() {
            out.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in entry.value.data() {
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
        if self.pos + n > self.bytes.len() {
            return Err(CliError::data(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CliError::data("not a checkpoint file (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::data(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| CliError::data(format!("checkpoint name not UTF-8: {e}")))?;
        let rank = r.u8()? as usize;
        if !(1..=3).contains(&rank) {
            return Err(CliError::data(format!("checkpoint entry `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64()?);
        }
        let value = DenseArray::from_vec(&shape, data).map_err(CliError::from)?;
        entries.push(CheckpointEntry { name, value });
    }
    if r.pos != bytes.len() {
        return Err(CliError::data(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint { entries })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(ckpt)).map_err(|e| io_data(e, path))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| io_data(e, path))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use detangle_core::model::{build_model, ModelConfig};

    fn sample() -> Checkpoint {
        build_model(&ModelConfig::desk_default(4), 3)
            .unwrap()
            .store
            .snapshot()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ckpt = sample();
        let bytes = to_bytes(&ckpt);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(ckpt, back);
        assert_eq!(bytes, to_bytes(&back));
    }

    #[test]
    fn same_build_same_bytes() {
        assert_eq!(to_bytes(&sample()), to_bytes(&sample()));
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = to_bytes(&sample());
        bytes.truncate(bytes.len() - 3);
        assert!(from_bytes(&bytes).is_err());
        assert!(from_bytes(b"not a checkpoint").is_err());

        let mut wrong_version = to_bytes(&sample());
        wrong_version[8] = 99;
        let err = from_bytes(&wrong_version).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
