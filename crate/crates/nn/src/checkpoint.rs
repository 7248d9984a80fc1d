//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SKDCKPT\0"
//! version    u32
//! metadata   u32 length + UTF-8 bytes (free-form, usually model config JSON)
//! tensors    u32 count, then per tensor:
//!              u32 name length + UTF-8 name
//!              u32 rank, rank × u32 dims
//!              prod(dims) × f32 values
//! optimizer  u8 flag; when 1: u64 step, then a tensor section holding the
//!            first moments followed by a tensor section holding the second moments
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SKDCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub first_moment: Vec<(String, Tensor)>,
    pub second_moment: Vec<(String, Tensor)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, metadata: impl Into<String>) -> Self {
        Self {
            metadata: metadata.into(),
            tensors: store
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            optimizer: None,
        }
    }

    pub fn with_optimizer(mut self, store: &ParamStore, adam: &AdamState) -> Self {
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        self.optimizer = Some(OptimizerSnapshot {
            step: adam.step,
            first_moment: names
                .iter()
                .cloned()
                .zip(adam.first_moment.iter().cloned())
                .collect(),
            second_moment: names
                .into_iter()
                .zip(adam.second_moment.iter().cloned())
                .collect(),
        });
        self
    }

    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        store.load_named(&self.tensors)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(w, self.metadata.as_bytes())?;
        write_tensors(w, &self.tensors)?;
        match &self.optimizer {
            None => w.write_all(&[0])?,
            Some(opt) => {
                w.write_all(&[1])?;
                w.write_all(&opt.step.to_le_bytes())?;
                write_tensors(w, &opt.first_moment)?;
                write_tensors(w, &opt.second_moment)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let metadata = String::from_utf8(read_bytes(r)?)
            .map_err(|_| NnError::Checkpoint("metadata is not UTF-8".into()))?;
        let tensors = read_tensors(r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let optimizer = match flag[0] {
            0 => None,
            1 => {
                let mut step = [0u8; 8];
                r.read_exact(&mut step)?;
                Some(OptimizerSnapshot {
                    step: u64::from_le_bytes(step),
                    first_moment: read_tensors(r)?,
                    second_moment: read_tensors(r)?,
                })
            }
            other => return Err(NnError::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        Ok(Self {
            metadata,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    w.write_all(&(b.len() as u32).to_le_bytes())?;
    w.write_all(b)?;
    Ok(())
}

fn write_tensors(w: &mut impl Write, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        write_bytes(w, name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_tensors(r: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = String::from_utf8(read_bytes(r)?)
            .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

/// Rounds every parameter to the nearest `f32`, the precision checkpoints store.
pub fn round_to_f32(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamConfig;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "a.weight",
            Tensor::new(&[2, 3], vec![0.5, -1.25, 3.0, 0.0, 1e-3, -7.5]).unwrap(),
        );
        s.add("a.bias", Tensor::row_vector(&[0.25, 0.125, -0.0625]));
        s
    }

    #[test]
    fn round_trip_preserves_f32_values() {
        let s = store();
        let ck = Checkpoint::from_store(&s, r#"{"kind":"test"}"#);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.metadata, ck.metadata);
        let mut restored = ParamStore::new();
        restored.add("a.weight", Tensor::zeros(&[2, 3]));
        restored.add("a.bias", Tensor::zeros(&[1, 3]));
        back.restore_into(&mut restored).unwrap();
        for ((_, a), (_, b)) in restored.iter().zip(s.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn optimizer_state_round_trips() {
        let s = store();
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step = 42;
        adam.first_moment[0].data_mut()[1] = 0.5;
        let ck = Checkpoint::from_store(&s, "").with_optimizer(&s, &adam);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        let opt = back.optimizer.unwrap();
        assert_eq!(opt.step, 42);
        assert_eq!(opt.first_moment[0].1.data()[1], 0.5);
    }

    #[test]
    fn shape_mismatch_on_restore_fails() {
        let s = store();
        let ck = Checkpoint::from_store(&s, "");
        let mut other = ParamStore::new();
        other.add("a.weight", Tensor::zeros(&[3, 2]));
        other.add("a.bias", Tensor::zeros(&[1, 3]));
        assert!(ck.restore_into(&mut other).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOTACKPT\x01\0\0\0".to_vec();
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
