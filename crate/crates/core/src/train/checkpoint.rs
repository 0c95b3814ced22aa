//! Named-tensor archive:
//! `"SNWF" | version u32 | count u64 | {name_len u32, name, dtype u8, rank u32, dims u64.., data} | crc32`,
//! all little-endian, CRC over every preceding byte.

use std::path::Path;

use snowformer_tensor::{DType, ParamStore, Scalar, Tensor};

use crate::error::{io_err, Error, Result};
use crate::train::optim::{Adam, AdamConfig};

pub const MAGIC: &[u8; 4] = b"SNWF";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const MAX_RANK: usize = 8;

pub const OPT_STEP: &str = "opt.step";

/// One stored tensor, kept as raw little-endian bytes until typed.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Entry {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.numel() * T::DTYPE.size_of());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        Self {
            name: name.into(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::ParamMismatch(vec![format!(
                "{}: stored as {}, requested {}",
                self.name,
                self.dtype,
                T::DTYPE
            )]));
        }
        let data = self.bytes.chunks_exact(T::DTYPE.size_of()).map(T::read_le).collect();
        Ok(Tensor::new(&self.shape, data)?)
    }
}

pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dtype.tag());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&e.bytes);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn entry(&mut self) -> Option<std::result::Result<Entry, String>> {
        let name_len = self.u32()? as usize;
        let name = match std::str::from_utf8(self.take(name_len)?) {
            Ok(n) => n.to_string(),
            Err(_) => return Some(Err("tensor name is not UTF-8".into())),
        };
        let Some(dtype) = DType::from_tag(self.take(1)?[0]) else {
            return Some(Err(format!("{name}: unknown dtype tag")));
        };
        let rank = self.u32()? as usize;
        if rank > MAX_RANK {
            return Some(Err(format!("{name}: rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(self.u64()?).ok()?;
            numel = numel.checked_mul(d)?;
            shape.push(d);
        }
        let bytes = self.take(numel.checked_mul(dtype.size_of())?)?.to_vec();
        Some(Ok(Entry {
            name,
            dtype,
            shape,
            bytes,
        }))
    }
}

/// Parses a checkpoint image; `path` only labels errors.
pub fn decode(buf: &[u8], path: &Path) -> Result<Vec<Entry>> {
    if buf.len() < HEADER_LEN || &buf[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.into(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let declared = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let crc_ok = buf.len() >= HEADER_LEN + 4 && {
        let (body, tail) = buf.split_at(buf.len() - 4);
        crc32fast::hash(body) == u32::from_le_bytes(tail.try_into().unwrap())
    };
    let body = if crc_ok { &buf[..buf.len() - 4] } else { buf };
    let mut cur = Cursor {
        buf: body,
        pos: HEADER_LEN,
    };
    let mut entries = Vec::new();
    while (entries.len() as u64) < declared {
        match cur.entry() {
            Some(Ok(e)) => entries.push(e),
            Some(Err(_)) if !crc_ok => return Err(Error::Checksum { path: path.into() }),
            Some(Err(msg)) => {
                return Err(Error::Corrupt {
                    path: path.into(),
                    detail: msg,
                })
            }
            None => {
                return Err(Error::TensorCountMismatch {
                    path: path.into(),
                    declared,
                    found: entries.len() as u64,
                })
            }
        }
    }
    if !crc_ok {
        // All records parsed: either the trailer was cut off or bytes were altered.
        if body.len() < cur.pos + 4 {
            return Err(Error::TensorCountMismatch {
                path: path.into(),
                declared,
                found: declared.saturating_sub(1),
            });
        }
        return Err(Error::Checksum { path: path.into() });
    }
    if cur.pos != body.len() {
        return Err(Error::Checksum { path: path.into() });
    }
    Ok(entries)
}

pub fn write_entries(path: &Path, entries: &[Entry]) -> Result<()> {
    std::fs::write(path, encode(entries)).map_err(io_err(path))
}

pub fn read_entries(path: &Path) -> Result<Vec<Entry>> {
    let buf = std::fs::read(path).map_err(io_err(path))?;
    decode(&buf, path)
}

pub fn write_checkpoint<T: Scalar>(path: &Path, tensors: &[(&str, &Tensor<T>)]) -> Result<()> {
    let entries: Vec<Entry> = tensors.iter().map(|(n, t)| Entry::from_tensor(*n, t)).collect();
    write_entries(path, &entries)
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    read_entries(path)?
        .into_iter()
        .map(|e| Ok((e.name.clone(), e.to_tensor()?)))
        .collect()
}

/// Model parameters in registry order, then the optimizer step and moments.
pub fn training_entries<T: Scalar>(params: &ParamStore<T>, opt: Option<&Adam<T>>) -> Vec<Entry> {
    let mut entries: Vec<Entry> = params.iter().map(|(n, t)| Entry::from_tensor(n, t)).collect();
    if let Some(opt) = opt {
        entries.push(Entry::from_tensor(OPT_STEP, &Tensor::scalar(opt.step as f64)));
        for (prefix, bufs) in [("opt.m.", &opt.m), ("opt.v.", &opt.v)] {
            for ((n, _), t) in params.iter().zip(bufs) {
                entries.push(Entry::from_tensor(format!("{prefix}{n}"), t));
            }
        }
    }
    entries
}

pub fn save_training<T: Scalar>(path: &Path, params: &ParamStore<T>, opt: Option<&Adam<T>>) -> Result<()> {
    write_entries(path, &training_entries(params, opt))
}

/// Loads weights into `params` and returns the optimizer state if the file has one.
///
/// Every missing, unexpected or mis-shaped key is reported in one
/// [`Error::ParamMismatch`]; `params` is untouched on error.
pub fn load_training<T: Scalar>(
    path: &Path,
    params: &mut ParamStore<T>,
    adam: AdamConfig,
) -> Result<Option<Adam<T>>> {
    let entries = read_entries(path)?;
    let lookup: std::collections::HashMap<&str, &Entry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut problems = Vec::new();
    let mut check = |name: &str, shape: &[usize]| -> Option<&Entry> {
        match lookup.get(name) {
            None => {
                problems.push(format!("{name}: missing from checkpoint"));
                None
            }
            Some(e) if e.shape != shape => {
                problems.push(format!("{name}: checkpoint shape {:?}, model shape {shape:?}", e.shape));
                None
            }
            Some(e) if e.dtype != T::DTYPE => {
                problems.push(format!("{name}: stored as {}, model uses {}", e.dtype, T::DTYPE));
                None
            }
            Some(e) => Some(e),
        }
    };
    let mut weights = Vec::with_capacity(params.len());
    for (n, t) in params.iter() {
        weights.push(check(n, t.shape()).cloned());
    }
    let has_opt = lookup.contains_key(OPT_STEP);
    let mut moments = Vec::new();
    if has_opt {
        for prefix in ["opt.m.", "opt.v."] {
            for (n, t) in params.iter() {
                moments.push(check(&format!("{prefix}{n}"), t.shape()).cloned());
            }
        }
    }
    for e in &entries {
        let base = e
            .name
            .strip_prefix("opt.m.")
            .or_else(|| e.name.strip_prefix("opt.v."))
            .unwrap_or(&e.name);
        if e.name != OPT_STEP && params.id(base).is_none() {
            problems.push(format!("{}: not a parameter of this model", e.name));
        }
    }
    if !problems.is_empty() {
        return Err(Error::ParamMismatch(problems));
    }
    for (slot, e) in params.values_mut().iter_mut().zip(&weights) {
        *slot = e.as_ref().expect("checked").to_tensor()?;
    }
    if !has_opt {
        return Ok(None);
    }
    let step = lookup[OPT_STEP].to_tensor::<f64>()?.item() as u64;
    let mut tensors = moments
        .iter()
        .map(|e| e.as_ref().expect("checked").to_tensor())
        .collect::<Result<Vec<Tensor<T>>>>()?;
    let v = tensors.split_off(params.len());
    Ok(Some(Adam {
        cfg: adam,
        step,
        m: tensors,
        v,
    }))
}
