//! Reader and writer for DFRW, the flat little-endian container holding the
//! VGG19 convolution weights and the input normalization constants.
//!
//! Layout:
//!
//! ```text
//! "DFRW"            4 bytes magic
//! version           u32 = 1
//! manifest_len      u32
//! manifest          UTF-8 JSON, manifest_len bytes
//! repeated until EOF:
//!   name_len        u32
//!   name            UTF-8, e.g. "conv3_2.weight" or "conv3_2.bias"
//!   ndim            u32
//!   dims            u32 × ndim
//!   data            f32 × Π dims, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DFRW";
pub const VERSION: u32 = 1;

/// JSON manifest stored between the fixed header and the tensor records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Layer names in network order.
    #[serde(default)]
    pub layer_order: Vec<String>,
    pub preprocess: Preprocess,
    /// Checksum of the weights the file was exported from; informational for the engine.
    #[serde(default)]
    pub source_checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DfrwFile {
    pub manifest: Manifest,
    pub tensors: Vec<RawTensor>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, entry: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::format(
                entry,
                format!(
                    "truncated: needed {len} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            )),
        }
    }

    fn u32(&mut self, entry: &str) -> Result<u32> {
        let b = self.take(4, entry)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn parse(bytes: &[u8]) -> Result<DfrwFile> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "header")? != MAGIC {
        return Err(Error::format("header", "bad magic"));
    }
    let version = cur.u32("header")?;
    if version != VERSION {
        return Err(Error::format(
            "header",
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let manifest_len = cur.u32("manifest")? as usize;
    let manifest: Manifest = serde_json::from_slice(cur.take(manifest_len, "manifest")?)
        .map_err(|e| Error::format("manifest", e.to_string()))?;

    let mut tensors = Vec::new();
    while !cur.at_end() {
        let ordinal = format!("tensor #{}", tensors.len());
        let name_len = cur.u32(&ordinal)? as usize;
        let name = std::str::from_utf8(cur.take(name_len, &ordinal)?)
            .map_err(|_| Error::format(&ordinal, "name is not valid UTF-8"))?
            .to_owned();
        let ndim = cur.u32(&name)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32(&name)? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::format(&name, format!("dims {dims:?} overflow")))?;
        let data = cur
            .take(count, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(RawTensor { name, dims, data });
    }
    Ok(DfrwFile { manifest, tensors })
}

pub fn read(path: &Path) -> Result<DfrwFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes)
}

pub fn encode(file: &DfrwFile) -> Result<Vec<u8>> {
    let manifest =
        serde_json::to_vec(&file.manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in &file.tensors {
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::format(
                &t.name,
                format!("dims {:?} disagree with {} values", t.dims, t.data.len()),
            ));
        }
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write(path: &Path, file: &DfrwFile) -> Result<()> {
    fs::write(path, encode(file)?).map_err(|e| Error::io(path, e))
}
