//! Single-file model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes   "FMCA"
//! version      u32       1
//! fingerprint  u64       Architecture::fingerprint of the descriptor below
//! task         u32       task index the model was produced for
//! arch_len     u32       byte length of the descriptor
//! arch         arch_len  UTF-8 JSON Architecture
//! count        u32       number of entries
//! per entry:
//!   name_len   u32
//!   name       name_len  UTF-8 key; `*.running_mean` / `*.running_var` are
//!                        batch-norm statistics, everything else a parameter
//!   rank       u32
//!   dims       rank x u64
//!   payload    product(dims) x f32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::nn::{Architecture, Network};
use crate::params::ParamTree;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FMCA";
pub const VERSION: u32 = 1;

/// A model snapshot: architecture, task index, parameters and batch-norm
/// running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub task: u32,
    pub params: ParamTree,
    pub bn_stats: ParamTree,
}

fn is_bn_stat(key: &str) -> bool {
    key.ends_with(".running_mean") || key.ends_with(".running_var")
}

impl Checkpoint {
    pub fn from_network(net: &Network, task: u32) -> Self {
        Self {
            arch: net.arch().clone(),
            task,
            params: net.params().clone(),
            bn_stats: net.bn_stats().clone(),
        }
    }

    pub fn to_network(&self, seed: u64) -> Result<Network> {
        Network::from_parts(self.arch.clone(), self.params.clone(), self.bn_stats.clone(), seed)
    }

    pub fn fingerprint(&self) -> u64 {
        self.arch.fingerprint()
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes()
    }

    /// Copy with every value rounded through `f32`, i.e. what a save/load
    /// round-trip returns.
    pub fn quantized(&self) -> Checkpoint {
        let round = |tree: &ParamTree| -> ParamTree {
            tree.iter()
                .map(|(k, t)| {
                    let data = t.data().iter().map(|&v| v as f32 as f64).collect();
                    (k.to_owned(), Tensor::from_parts(t.shape().to_vec(), data))
                })
                .collect()
        };
        Checkpoint {
            arch: self.arch.clone(),
            task: self.task,
            params: round(&self.params),
            bn_stats: round(&self.bn_stats),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arch = serde_json::to_vec(&self.arch).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + arch.len() + 4 * (self.params.numel() + self.bn_stats.numel()));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint().to_le_bytes());
        out.extend_from_slice(&self.task.to_le_bytes());
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(&arch);
        let count = (self.params.len() + self.bn_stats.len()) as u32;
        out.extend_from_slice(&count.to_le_bytes());
        for (key, t) in self.params.iter().chain(self.bn_stats.iter()) {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(CheckpointError::Malformed(format!("`{key}` overflows f32")).into());
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let fingerprint = r.u64("fingerprint")?;
        let task = r.u32("task index")?;
        let arch_len = r.u32("architecture length")? as usize;
        let arch_bytes = r.take(arch_len, "architecture")?;
        let arch: Architecture = serde_json::from_slice(arch_bytes)
            .map_err(|e| CheckpointError::Malformed(format!("architecture descriptor: {e}")))?;
        if arch.fingerprint() != fingerprint {
            return Err(CheckpointError::Fingerprint {
                found: fingerprint,
                expected: arch.fingerprint(),
            });
        }
        let count = r.u32("entry count")?;
        let mut params = ParamTree::new();
        let mut bn_stats = ParamTree::new();
        for _ in 0..count {
            let name_len = r.u32("entry name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "entry name")?)
                .map_err(|_| CheckpointError::Malformed("entry name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u32("entry rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64("entry dims")? as usize);
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("`{name}` dims overflow")))?;
            let payload_len = numel
                .checked_mul(4)
                .ok_or_else(|| CheckpointError::Malformed(format!("`{name}` payload overflows")))?;
            let payload = r.take(payload_len, "entry payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            let tensor = Tensor::new(dims, data).map_err(|e| CheckpointError::Malformed(format!("`{name}`: {e}")))?;
            let tree = if is_bn_stat(&name) { &mut bn_stats } else { &mut params };
            tree.insert(name.clone(), tensor)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let ckpt = Checkpoint {
            arch,
            task,
            params,
            bn_stats,
        };
        // the entries must be exactly the slots the architecture implies
        ckpt.to_network(0)
            .map_err(|e| CheckpointError::Malformed(format!("entries do not fit architecture: {e}")))?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|source| CheckpointError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(Self::from_bytes(&bytes)?)
    }

    /// Loads and checks the stored architecture against `expected`.
    pub fn load_for(path: impl AsRef<Path>, expected: &Architecture) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.fingerprint() != expected.fingerprint() {
            return Err(Error::Checkpoint(CheckpointError::Fingerprint {
                found: ckpt.fingerprint(),
                expected: expected.fingerprint(),
            }));
        }
        Ok(ckpt)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated(what)),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
