//! Binary weight archive.
//!
//! ```text
//! "CURV" | u32 version | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u8 rank | u32 dims[rank] | f32 payload
//! ```
//!
//! Everything little-endian; payloads are row-major.

use std::path::Path;

use super::nets::{PolicyNetwork, QNetwork};
use super::tensor::{ParamSet, Tensor};
use super::{NeuralError, Result};

pub const MAGIC: &[u8; 4] = b"CURV";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    pub version: u32,
    pub tensors: Vec<ArchiveTensor>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                NeuralError::Archive(format!("truncated archive at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

impl WeightArchive {
    pub fn from_params(params: &ParamSet<f32>) -> Self {
        Self {
            version: FORMAT_VERSION,
            tensors: params
                .names()
                .iter()
                .zip(params.tensors())
                .map(|(name, t)| ArchiveTensor {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(NeuralError::Archive("bad magic, not a weight archive".into()));
        }
        let version = c.u32()?;
        if version != FORMAT_VERSION {
            return Err(NeuralError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let count = c.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(len)?)
                .map_err(|_| NeuralError::Archive("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = c.u8()? as usize;
            let shape = (0..rank)
                .map(|_| c.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = c.take(n.checked_mul(4).ok_or_else(|| {
                NeuralError::Archive(format!("tensor {name} is too large"))
            })?)?;
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push(ArchiveTensor { name, shape, data });
        }
        if c.pos != bytes.len() {
            return Err(NeuralError::Archive(format!(
                "{} trailing bytes after the last tensor",
                bytes.len() - c.pos
            )));
        }
        Ok(Self { version, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| NeuralError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| NeuralError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Copies archive values into `params`. Shapes are checked first, then
    /// missing tensors, then names the parameter set does not know.
    pub fn restore_into(&self, params: &mut ParamSet<f32>) -> Result<()> {
        for t in &self.tensors {
            if let Some(i) = params.index_of(&t.name) {
                let expected = params.get(i).shape();
                if expected != t.shape.as_slice() {
                    return Err(NeuralError::ShapeMismatch {
                        what: format!("archived tensor {}", t.name),
                        expected: expected.to_vec(),
                        actual: t.shape.clone(),
                    });
                }
            }
        }
        for name in params.names() {
            if !self.tensors.iter().any(|t| &t.name == name) {
                return Err(NeuralError::MissingTensor(name.clone()));
            }
        }
        if let Some(t) = self.tensors.iter().find(|t| params.index_of(&t.name).is_none()) {
            return Err(NeuralError::UnknownTensor(t.name.clone()));
        }
        for t in &self.tensors {
            let i = params.index_of(&t.name).expect("checked above");
            *params.get_mut(i) = Tensor::from_vec(&t.shape, t.data.clone())?;
        }
        Ok(())
    }
}

impl PolicyNetwork<f32> {
    pub fn to_archive(&self) -> WeightArchive {
        WeightArchive::from_params(self.params())
    }

    pub fn load_archive(&mut self, archive: &WeightArchive) -> Result<()> {
        archive.restore_into(self.params_mut())
    }
}

impl QNetwork<f32> {
    pub fn to_archive(&self) -> WeightArchive {
        WeightArchive::from_params(self.params())
    }

    pub fn load_archive(&mut self, archive: &WeightArchive) -> Result<()> {
        archive.restore_into(self.params_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let policy = PolicyNetwork::<f32>::new(&mut rng);
        let bytes = policy.to_archive().to_bytes();
        let mut fresh = PolicyNetwork::<f32>::new(&mut ChaCha8Rng::seed_from_u64(2));
        fresh.load_archive(&WeightArchive::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(fresh.params(), policy.params());
        assert_eq!(fresh.to_archive().to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let mut params = ParamSet::<f32>::default();
        params.push("w", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let bytes = WeightArchive::from_params(&params).to_bytes();
        let mut expected = b"CURV".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(b'w');
        expected.push(1);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn distinct_load_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = PolicyNetwork::<f32>::new(&mut rng);
        let mut q = QNetwork::<f32>::new(&mut rng);
        let archive = policy.to_archive();

        assert!(matches!(
            q.load_archive(&archive),
            Err(NeuralError::ShapeMismatch { .. })
        ));

        let mut missing = archive.clone();
        missing.tensors.retain(|t| !t.name.starts_with("head"));
        let mut target = PolicyNetwork::<f32>::new(&mut rng);
        assert!(matches!(
            target.load_archive(&missing),
            Err(NeuralError::MissingTensor(name)) if name == "head.weight"
        ));

        let mut extra = archive.clone();
        extra.tensors.push(ArchiveTensor {
            name: "bogus".into(),
            shape: vec![1],
            data: vec![0.0],
        });
        assert!(matches!(
            target.load_archive(&extra),
            Err(NeuralError::UnknownTensor(_))
        ));

        let mut bytes = archive.to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            WeightArchive::from_bytes(&bytes),
            Err(NeuralError::VersionMismatch { found: 9, .. })
        ));

        let bytes = archive.to_bytes();
        assert!(matches!(
            WeightArchive::from_bytes(&bytes[..bytes.len() - 3]),
            Err(NeuralError::Archive(_))
        ));
    }
}
