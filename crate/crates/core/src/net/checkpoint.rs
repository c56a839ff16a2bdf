//! Binary checkpoint format.
//!
//! Layout, all integers little-endian `u32`:
//! `b"HFDNCKPT"`, format version, descriptor length, descriptor (UTF-8
//! `key=value` lines), tensor count, then per tensor: name length, name,
//! four dims `(n, c, h, w)`, and `n*c*h*w` little-endian `f32` values.
//!
//! The descriptor holds the architecture, the binning range and free-form
//! `meta.*` entries. Parameter tensors come first in registry order; any
//! extra tensors (optimizer state) follow.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::arch::NetArch;
use super::params::NetParams;
use crate::bins::Binning;
use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

pub const MAGIC: &[u8; 8] = b"HFDNCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams<f32>,
    pub binning: Binning,
    pub meta: BTreeMap<String, String>,
    pub extra: Vec<(String, Tensor4<f32>)>,
}

impl Checkpoint {
    pub fn new(params: NetParams<f32>, binning: Binning) -> Result<Self> {
        if params.arch().num_bins != binning.num_bins() {
            return Err(Error::invalid(format!(
                "network has {} bins, binning has {}",
                params.arch().num_bins,
                binning.num_bins()
            )));
        }
        Ok(Checkpoint {
            params,
            binning,
            meta: BTreeMap::new(),
            extra: Vec::new(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut desc = self.params.arch().descriptor();
        desc.push_str(&format!("d_min={}\n", self.binning.d_min()));
        desc.push_str(&format!("d_max={}\n", self.binning.d_max()));
        for (k, v) in &self.meta {
            desc.push_str(&format!("meta.{k}={v}\n"));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, desc.len() as u32);
        out.extend_from_slice(desc.as_bytes());
        let tensors: Vec<(&str, &Tensor4<f32>)> = self
            .params
            .tensors()
            .iter()
            .map(|t| (t.name.as_str(), &t.value))
            .chain(self.extra.iter().map(|(n, t)| (n.as_str(), t)))
            .collect();
        put_u32(&mut out, tensors.len() as u32);
        for (name, t) in tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            for d in t.shape().as_array() {
                put_u32(&mut out, d as u32);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint; `origin` only labels error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::format(origin, "not a checkpoint (bad magic)"));
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let len = r.u32("descriptor length")? as usize;
        let desc = std::str::from_utf8(r.take(len, "descriptor")?)
            .map_err(|_| Error::format(origin, "descriptor is not UTF-8"))?;
        let mut keys = HashMap::new();
        let mut meta = BTreeMap::new();
        for line in desc.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(origin, format!("bad descriptor line `{line}`")))?;
            match k.strip_prefix("meta.") {
                Some(m) => meta.insert(m.to_string(), v.to_string()),
                None => keys.insert(k.to_string(), v.to_string()),
            };
        }
        let wrap = |e: Error| Error::format(origin, e.to_string());
        let arch = NetArch::from_descriptor(|k| keys.get(k).cloned()).map_err(wrap)?;
        let float = |k: &str| -> Result<f64> {
            keys.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::format(origin, format!("descriptor lacks numeric `{k}`")))
        };
        let binning =
            Binning::new(float("d_min")?, float("d_max")?, arch.num_bins).map_err(wrap)?;

        let count = r.u32("tensor count")? as usize;
        let mut records: Vec<(String, Tensor4<f32>)> = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let nlen = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(nlen, "tensor name")?)
                .map_err(|_| Error::format(origin, format!("tensor {i}: name is not UTF-8")))?
                .to_string();
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("tensor dims")? as usize;
            }
            let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
            let raw = r.take(shape.len() * 4, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push((name, Tensor4::from_vec(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                origin,
                format!("{} trailing bytes after tensor data", bytes.len() - r.pos),
            ));
        }

        let mut params = NetParams::<f32>::zeroed(arch).map_err(wrap)?;
        let n_params = params.tensors().len();
        if records.len() < n_params {
            return Err(Error::format(
                origin,
                format!("{} tensors, architecture needs {n_params}", records.len()),
            ));
        }
        let extra = records.split_off(n_params);
        let index: HashMap<&str, &Tensor4<f32>> =
            records.iter().map(|(n, t)| (n.as_str(), t)).collect();
        params
            .load_values(|name| index.get(name).map(|t| (t.shape(), t.data())))
            .map_err(wrap)?;
        Ok(Checkpoint {
            params,
            binning,
            meta,
            extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn extra_tensor(&self, name: &str) -> Option<&Tensor4<f32>> {
        self.extra.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.origin,
                format!(
                    "truncated reading {what}: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
