//! Flat binary tensor container.
//!
//! Layout:
//!
//! ```text
//! u64 LE      header length N in bytes
//! N bytes     UTF-8 JSON header
//! payload     f64 LE values of every tensor, concatenated in header order
//! ```
//!
//! Header example:
//!
//! ```json
//! {"meta": {"eps": 1e-8, "lambda": 1e-4},
//!  "tensors": [{"name": "conv1.weight", "dims": [4, 4, 3, 3]},
//!              {"name": "conv1.bias", "dims": [4]}]}
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ConvWeights, FusionBlock, Tensor4, DEFAULT_DEMOD_EPS, DEFAULT_SIMAM_LAMBDA};

const MAX_HEADER: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub meta: BTreeMap<String, f64>,
    /// Tensors in file order.
    pub tensors: Vec<(String, StoredTensor)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    meta: BTreeMap<String, f64>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dims: Vec<usize>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) {
        self.tensors.push((name.into(), StoredTensor { dims, data }));
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    dims: t.dims.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (name, t) in &self.tensors {
            if t.data.len() != t.dims.iter().product::<usize>() {
                return Err(Error::MalformedContainer(format!("tensor `{name}` data does not match its dims")));
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| Error::MalformedContainer("truncated header length".into()))?;
        let len = u64::from_le_bytes(len);
        if len > MAX_HEADER {
            return Err(Error::MalformedContainer(format!("header of {len} bytes is implausibly large")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)
            .map_err(|_| Error::MalformedContainer("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| Error::MalformedContainer(format!("bad header: {e}")))?;

        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut buf = [0u8; 8];
        for entry in header.tensors {
            let n: usize = entry.dims.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::MalformedContainer(format!("payload for `{}` is truncated", entry.name)))?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push((entry.name, StoredTensor { dims: entry.dims, data }));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::MalformedContainer(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn tensor4(&self, name: &str) -> Result<Tensor4> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::MalformedContainer(format!("missing tensor `{name}`")))?;
        let dims: [usize; 4] = t
            .dims
            .as_slice()
            .try_into()
            .map_err(|_| Error::MalformedContainer(format!("`{name}` must be 4-D, has dims {:?}", t.dims)))?;
        Tensor4::new(dims, t.data.clone())
    }

    fn vector(&self, name: &str) -> Result<Option<Vec<f64>>> {
        match self.get(name) {
            None => Ok(None),
            Some(t) if t.dims.len() == 1 => Ok(Some(t.data.clone())),
            Some(t) => Err(Error::MalformedContainer(format!("`{name}` must be 1-D, has dims {:?}", t.dims))),
        }
    }

    /// Reads `conv{1,2}.weight`, optional `conv{1,2}.bias`, and the `eps` and
    /// `lambda` meta values (defaults 1e-8 and 1e-4).
    pub fn fusion_block(&self) -> Result<FusionBlock> {
        let conv = |k: u8| -> Result<ConvWeights> {
            Ok(ConvWeights {
                weight: self.tensor4(&format!("conv{k}.weight"))?,
                bias: self.vector(&format!("conv{k}.bias"))?,
            })
        };
        Ok(FusionBlock {
            conv1: conv(1)?,
            conv2: conv(2)?,
            eps: self.meta.get("eps").copied().unwrap_or(DEFAULT_DEMOD_EPS),
            lambda: self.meta.get("lambda").copied().unwrap_or(DEFAULT_SIMAM_LAMBDA),
        })
    }

    /// Inverse of [`TensorFile::fusion_block`].
    pub fn from_fusion_block(block: &FusionBlock) -> Self {
        let mut file = TensorFile::default();
        file.meta.insert("eps".into(), block.eps);
        file.meta.insert("lambda".into(), block.lambda);
        for (k, conv) in [(1, &block.conv1), (2, &block.conv2)] {
            file.push(format!("conv{k}.weight"), conv.weight.dims().to_vec(), conv.weight.data().to_vec());
            if let Some(b) = &conv.bias {
                file.push(format!("conv{k}.bias"), vec![b.len()], b.clone());
            }
        }
        file
    }
}
