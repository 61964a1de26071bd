//! Binary model snapshot.
//!
//! ```text
//! magic        8 bytes   "NAIRSNAP"
//! version      u32 LE    FORMAT_VERSION
//! header_len   u32 LE
//! header       header_len bytes of UTF-8 `key = value` lines:
//!                num_users, num_items, every hyperparameter (kind, dim,
//!                attention_dim, beta, fism_alpha, activation, ...) and
//!                optional `meta.*` training metadata
//! tensor_count u32 LE
//! tensors      tensor_count times:
//!                name_len u32 LE, name (UTF-8), rows u64 LE, cols u64 LE,
//!                rows*cols f64 LE values in row-major order
//! ```
//!
//! Tensors appear in the order P (N×d), Q (N×d), user_bias (M×1),
//! item_bias (N×1), W (a×d), V (a×1), b (a×1). The snapshot version is the
//! hex SHA-256 of the encoded bytes.

use std::fs;
use std::path::Path;

use nairs_core::model::{Hyperparams, ModelParams};
use sha2::{Digest, Sha256};

use crate::config;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NAIRSNAP";
pub const FORMAT_VERSION: u32 = 1;
pub const TENSOR_NAMES: [&str; 7] = ["P", "Q", "user_bias", "item_bias", "W", "V", "b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: ModelParams,
    pub hyperparams: Hyperparams,
    /// Training metadata stored under `meta.<key>`; order is preserved.
    pub metadata: Vec<(String, String)>,
}

fn shapes(params: &ModelParams) -> [(usize, usize); 7] {
    let (m, n, d, a) = (
        params.num_users(),
        params.num_items(),
        params.dim(),
        params.attn.attention_dim(),
    );
    [(n, d), (n, d), (m, 1), (n, 1), (a, d), (a, 1), (a, 1)]
}

impl Snapshot {
    pub fn new(params: ModelParams, hyperparams: Hyperparams) -> Self {
        Snapshot {
            params,
            hyperparams,
            metadata: Vec::new(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut header = format!(
            "num_users = {}\nnum_items = {}\n",
            self.params.num_users(),
            self.params.num_items()
        );
        header.push_str(&config::format_hyperparams(&self.hyperparams));
        for (k, v) in &self.metadata {
            header.push_str(&format!("meta.{k} = {}\n", v.replace('\n', " ")));
        }

        let mut out = Vec::with_capacity(64 + header.len() + 8 * self.params.tensors().iter().map(|t| t.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(TENSOR_NAMES.len() as u32).to_le_bytes());
        for ((name, (rows, cols)), data) in TENSOR_NAMES.iter().zip(shapes(&self.params)).zip(self.params.tensors()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(rows as u64).to_le_bytes());
            out.extend_from_slice(&(cols as u64).to_le_bytes());
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Snapshot("not a model snapshot (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| Error::Snapshot("header is not UTF-8".into()))?;

        let mut hp = Hyperparams::default();
        let mut num_users = None;
        let mut num_items = None;
        let mut metadata = Vec::new();
        for (k, v) in config::parse_pairs(header)? {
            match k.as_str() {
                "num_users" => num_users = Some(parse_count(&k, &v)?),
                "num_items" => num_items = Some(parse_count(&k, &v)?),
                _ => {
                    if let Some(meta) = k.strip_prefix("meta.") {
                        metadata.push((meta.to_string(), v));
                    } else if !config::apply(&mut hp, &k, &v)? {
                        return Err(Error::Snapshot(format!("unknown header key `{k}`")));
                    }
                }
            }
        }
        let (Some(m), Some(n)) = (num_users, num_items) else {
            return Err(Error::Snapshot("header lacks num_users or num_items".into()));
        };

        // Reject impossible headers before allocating.
        let (d, a) = (hp.dim as u128, hp.attention_dim as u128);
        let elems = m as u128 + n as u128 * (2 * d + 1) + a * (d + 2);
        if elems * 8 > (bytes.len() - r.pos) as u128 {
            return Err(Error::Snapshot(format!("truncated: header declares {elems} values")));
        }
        let mut params = ModelParams::zeros(m, n, hp.dim, hp.attention_dim);
        let expected = shapes(&params);
        let count = r.u32()? as usize;
        if count != TENSOR_NAMES.len() {
            return Err(Error::Snapshot(format!("expected {} tensors, found {count}", TENSOR_NAMES.len())));
        }
        for (i, dst) in params.tensors_mut().into_iter().enumerate() {
            let name_len = r.u32()? as usize;
            let name = r.take(name_len)?;
            if name != TENSOR_NAMES[i].as_bytes() {
                return Err(Error::Snapshot(format!(
                    "tensor {i}: expected `{}`, found `{}`",
                    TENSOR_NAMES[i],
                    String::from_utf8_lossy(name)
                )));
            }
            let shape = (r.u64()? as usize, r.u64()? as usize);
            if shape != expected[i] {
                return Err(Error::Snapshot(format!(
                    "tensor `{}` has shape {}x{}, header implies {}x{}",
                    TENSOR_NAMES[i], shape.0, shape.1, expected[i].0, expected[i].1
                )));
            }
            for x in dst.iter_mut() {
                *x = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Snapshot(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Snapshot {
            params,
            hyperparams: hp,
            metadata,
        })
    }

    /// Writes the snapshot and returns its version.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.encode();
        write_atomic(path, &bytes)?;
        Ok(version_of(&bytes))
    }

    /// Reads a snapshot and its version.
    pub fn load(path: &Path) -> Result<(Snapshot, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let snap = Snapshot::decode(&bytes)?;
        Ok((snap, version_of(&bytes)))
    }

    pub fn version(&self) -> String {
        version_of(&self.encode())
    }
}

pub fn version_of(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn parse_count(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Snapshot(format!("invalid `{key}` value `{v}`")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.bytes.len())))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
