//! Binary model-state file.
//!
//! Layout, all integers little-endian `u32` unless noted:
//! magic `DFST`, version, config length + JSON bytes, init seed (`u64`),
//! then two sections (parameters, buffers), each a count followed by
//! entries of name length + UTF-8 name, rank, dims, and `f32` values.

use std::io::{Read, Write};

use super::{DFast, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Named;
use crate::real::Real;
use crate::tensor::{numel, Tensor};

pub const STATE_MAGIC: &[u8; 4] = b"DFST";
pub const STATE_VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::State(format!("{v} does not fit in 32 bits")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::State("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn write_section<T: Real>(w: &mut impl Write, entries: &[Named<T>]) -> Result<()> {
    put_u32(w, entries.len())?;
    for e in entries {
        put_u32(w, e.name.len())?;
        w.write_all(e.name.as_bytes())?;
        put_u32(w, e.value.rank())?;
        for &d in e.value.shape() {
            put_u32(w, d)?;
        }
        let mut buf = Vec::with_capacity(4 * e.value.len());
        for &v in e.value.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a section and copies it into `into`, matching entries by name.
fn read_section<T: Real>(r: &mut impl Read, into: &mut [Named<T>], what: &str) -> Result<()> {
    let count = get_u32(r)?;
    if count != into.len() {
        return Err(Error::State(format!(
            "file holds {count} {what}, the model declares {}",
            into.len()
        )));
    }
    let mut seen = vec![false; into.len()];
    for _ in 0..count {
        let len = get_u32(r)?;
        if len > 4096 {
            return Err(Error::State(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::State("name is not UTF-8".into()))?;
        let rank = get_u32(r)?;
        if rank == 0 || rank > 8 {
            return Err(Error::State(format!("{name}: implausible rank {rank}")));
        }
        let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let slot = into
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::State(format!("unknown {what} entry {name}")))?;
        if into[slot].value.shape() != dims.as_slice() {
            return Err(Error::State(format!(
                "shape mismatch for {name}: file has {dims:?}, model expects {:?}",
                into[slot].value.shape()
            )));
        }
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::State(format!("duplicate entry {name}")));
        }
        let mut raw = vec![0u8; 4 * numel(&dims)];
        r.read_exact(&mut raw).map_err(truncated)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        into[slot].value = Tensor::new(&dims, data)?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(ModelConfig, u64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::State("not a model-state file (bad magic)".into()))?;
    if &magic != STATE_MAGIC {
        return Err(Error::State("not a model-state file (bad magic)".into()));
    }
    let version = get_u32(r)? as u32;
    if version != STATE_VERSION {
        return Err(Error::State(format!(
            "unsupported format version {version}, expected {STATE_VERSION}"
        )));
    }
    let len = get_u32(r)?;
    if len > 1 << 20 {
        return Err(Error::State(format!("implausible config length {len}")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(truncated)?;
    let cfg: ModelConfig =
        serde_json::from_slice(&json).map_err(|e| Error::State(format!("config does not parse: {e}")))?;
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed).map_err(truncated)?;
    Ok((cfg, u64::from_le_bytes(seed)))
}

impl<T: Real> DFast<T> {
    /// Writes parameters and running statistics; `seed` is stored alongside.
    pub fn save_state(&self, w: &mut impl Write, seed: u64) -> Result<()> {
        w.write_all(STATE_MAGIC)?;
        put_u32(w, STATE_VERSION as usize)?;
        let json = serde_json::to_vec(&self.cfg).map_err(|e| Error::State(e.to_string()))?;
        put_u32(w, json.len())?;
        w.write_all(&json)?;
        w.write_all(&seed.to_le_bytes())?;
        write_section(w, &self.store.params)?;
        write_section(w, &self.store.buffers)?;
        Ok(())
    }

    /// Rebuilds a model from its state file. Returns the stored seed too.
    pub fn load_state(r: &mut impl Read) -> Result<(Self, u64)> {
        let (cfg, seed) = read_header(r)?;
        let mut model = DFast::new(cfg, seed)?;
        read_section(r, &mut model.store.params, "parameters")?;
        read_section(r, &mut model.store.buffers, "buffers")?;
        Ok((model, seed))
    }

    /// Overwrites this model's parameters from a state file. Every stored
    /// tensor must match the shape this model declares under the same name.
    pub fn load_params(&mut self, r: &mut impl Read) -> Result<u64> {
        let (_, seed) = read_header(r)?;
        let mut store = self.store.clone();
        read_section(r, &mut store.params, "parameters")?;
        read_section(r, &mut store.buffers, "buffers")?;
        self.store = store;
        Ok(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_bytes_are_rejected() {
        let junk: Vec<u8> = (0..64u8).map(|b| b.wrapping_mul(37)).collect();
        let err = DFast::<f32>::load_state(&mut junk.as_slice()).err().unwrap();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn version_is_checked() {
        let m = DFast::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let mut buf = Vec::new();
        m.save_state(&mut buf, 3).unwrap();
        buf[4] = 9;
        let err = DFast::<f32>::load_state(&mut buf.as_slice()).err().unwrap();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncation_is_reported() {
        let m = DFast::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let mut buf = Vec::new();
        m.save_state(&mut buf, 3).unwrap();
        buf.truncate(buf.len() - 5);
        let err = DFast::<f32>::load_state(&mut buf.as_slice()).err().unwrap();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
