//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"LVCK"
//! version  u32            (currently 1)
//! seed     u64
//! count    u32            number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   ndim u32, dims u64 * ndim
//!   values f64 * product(dims)
//! ```

use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{write_file, Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"LVCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, seed: u64) -> Self {
        let tensors = store
            .iter()
            .map(|(_, p)| {
                let v = p.value();
                (p.name().to_string(), v.shape().to_vec(), v.data().iter().map(|x| x.as_f64()).collect())
            })
            .collect();
        Checkpoint { seed, tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, values) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::validation("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {version}")));
        }
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::validation("tensor name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push((name, shape, values));
        }
        if r.pos != bytes.len() {
            return Err(Error::validation("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { seed, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Builds a fresh store holding the checkpoint tensors in file order.
    pub fn to_store<T: Scalar>(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for (name, shape, values) in &self.tensors {
            store.add(name.clone(), Tensor::new(shape.clone(), values.iter().map(|&v| T::of(v)).collect())?)?;
        }
        Ok(store)
    }

    /// Overwrites every parameter of `store` with the tensor of the same name.
    pub fn restore_into<T: Scalar>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::validation(format!("checkpoint has {} tensors, model expects {}", self.tensors.len(), store.len())));
        }
        for (name, shape, values) in &self.tensors {
            let id = store
                .id(name)
                .ok_or_else(|| Error::validation(format!("checkpoint tensor `{name}` not in model")))?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(Error::validation(format!("shape mismatch for `{name}`: {:?} vs {:?}", shape, store.value(id).shape())));
            }
            *store.value_mut(id) = Tensor::new(shape.clone(), values.iter().map(|&v| T::of(v)).collect())?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::validation("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let mut store = ParamStore::<f64>::new();
        store.add("emb", Tensor::matrix(2, 2, vec![0.1, -2.5e-300, f64::MAX, 1.0 / 3.0]).unwrap()).unwrap();
        store.add("bias", Tensor::row(vec![7.0, 8.0, 9.0])).unwrap();
        let ck = Checkpoint::from_store(&store, 42);
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let mut other = ParamStore::<f64>::new();
        other.add("emb", Tensor::zeros(&[2, 2])).unwrap();
        other.add("bias", Tensor::zeros(&[1, 3])).unwrap();
        back.restore_into(&mut other).unwrap();
        assert_eq!(other.value(other.id("emb").unwrap()), store.value(store.id("emb").unwrap()));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
