//! Scorer weights file: named f32 tensors in a flat binary container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "LNRW" | version u32 = 1 | entry_count u32
//! per entry: name_len u16 | name utf-8 | rank u8 | dims u32 x rank | f32 x prod(dims)
//! ```
//!
//! Entries are written in sorted name order, so serialization is
//! byte-deterministic. MLP stacks use the key convention
//! `<prefix>.<layer>.weight` (shape `[out, in]`) and `<prefix>.<layer>.bias`
//! (shape `[out]`); hidden layers apply relu, the final layer is linear, and
//! an absent prefix is the identity MLP.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::mlp::{Activation, Layer, Mlp};
use super::Matrix;
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LNRW";
pub const WEIGHTS_VERSION: u32 = 1;

const MAX_RANK: u8 = 8;
const MAX_ELEMS: u64 = 1 << 30;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(Error::BadWeights {
                name: "<tensor>".into(),
                reason: format!("shape {shape:?} wants {want} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(m: &Matrix) -> Self {
        Tensor { shape: vec![m.rows(), m.cols()], data: m.data().to_vec() }
    }
}

pub type TensorMap = BTreeMap<String, Tensor>;

pub fn write_weights(path: &Path, tensors: &TensorMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::BadWeights { name: name.clone(), reason: "name too long".into() });
        }
        if t.shape.len() > MAX_RANK as usize {
            return Err(Error::BadWeights {
                name: name.clone(),
                reason: format!("rank {} above {MAX_RANK}", t.shape.len()),
            });
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[t.shape.len() as u8])?;
        for &d in &t.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::BadWeights { name: "<file>".into(), reason: "truncated".into() }
            } else {
                Error::Io(e)
            }
        })?;
        Ok(buf)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }
}

pub fn read_weights(path: &Path) -> Result<TensorMap> {
    let mut r = Cursor { inner: BufReader::new(File::open(path)?) };
    let magic = r.bytes::<4>()?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::BadWeights {
            name: path.display().to_string(),
            reason: format!("bad magic {magic:?}"),
        });
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::BadWeights {
            name: path.display().to_string(),
            reason: format!("unsupported version {version}"),
        });
    }
    let count = r.u32()?;
    let mut out = TensorMap::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.inner.read_exact(&mut name_buf).map_err(|_| Error::BadWeights {
            name: "<file>".into(),
            reason: "truncated name".into(),
        })?;
        let name = String::from_utf8(name_buf).map_err(|_| Error::BadWeights {
            name: "<file>".into(),
            reason: "name is not utf-8".into(),
        })?;
        let rank = r.u8()?;
        if rank > MAX_RANK {
            return Err(Error::BadWeights { name, reason: format!("rank {rank} above {MAX_RANK}") });
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let d = r.u32()? as u64;
            elems = elems.saturating_mul(d);
            shape.push(d as usize);
        }
        if elems > MAX_ELEMS {
            return Err(Error::BadWeights { name, reason: format!("{elems} elements too large") });
        }
        let mut data = Vec::with_capacity(elems as usize);
        for _ in 0..elems {
            data.push(r.f32()?);
        }
        if out.insert(name.clone(), Tensor { shape, data }).is_some() {
            return Err(Error::BadWeights { name, reason: "duplicate entry".into() });
        }
    }
    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe)? {
        0 => Ok(out),
        _ => Err(Error::BadWeights {
            name: path.display().to_string(),
            reason: "trailing bytes after last entry".into(),
        }),
    }
}

pub fn tensor_to_matrix(t: &Tensor, name: &str) -> Result<Matrix> {
    match t.shape.as_slice() {
        [r, c] => Matrix::new(*r, *c, t.data.clone()),
        other => Err(Error::BadWeights {
            name: name.into(),
            reason: format!("expected rank 2, found shape {other:?}"),
        }),
    }
}

pub fn tensor_to_vec(t: &Tensor, name: &str) -> Result<Vec<f32>> {
    match t.shape.as_slice() {
        [_] => Ok(t.data.clone()),
        other => Err(Error::BadWeights {
            name: name.into(),
            reason: format!("expected rank 1, found shape {other:?}"),
        }),
    }
}

/// Builds the MLP stored under `prefix`. Layers must be contiguous from 0;
/// an absent layer 0 yields the identity MLP.
pub fn mlp_from_weights(tensors: &TensorMap, prefix: &str) -> Result<Mlp> {
    let mut raw = Vec::new();
    loop {
        let i = raw.len();
        let wname = format!("{prefix}.{i}.weight");
        let Some(wt) = tensors.get(&wname) else { break };
        let bname = format!("{prefix}.{i}.bias");
        let bt = tensors.get(&bname).ok_or_else(|| Error::MissingWeights(bname.clone()))?;
        let weight = tensor_to_matrix(wt, &wname)?;
        let bias = tensor_to_vec(bt, &bname)?;
        raw.push((weight, bias));
    }
    // Any weight entry for this prefix beyond the contiguous run is a hole.
    let declared = tensors
        .keys()
        .filter(|k| k.starts_with(prefix) && k[prefix.len()..].starts_with('.') && k.ends_with(".weight"))
        .count();
    if declared != raw.len() {
        return Err(Error::BadWeights {
            name: prefix.into(),
            reason: format!("{declared} weight entries but only {} contiguous layers", raw.len()),
        });
    }
    let n = raw.len();
    let layers = raw
        .into_iter()
        .enumerate()
        .map(|(i, (weight, bias))| {
            let act = if i + 1 < n { Activation::Relu } else { Activation::Identity };
            Layer::new(weight, bias, act)
        })
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(layers)
}

/// Inserts `<prefix>.<layer>.weight` / `.bias` entries for a hand-built
/// stack; the inverse of [`mlp_from_weights`] for fixture generation.
pub fn insert_mlp(tensors: &mut TensorMap, prefix: &str, layers: &[(Matrix, Vec<f32>)]) {
    for (i, (w, b)) in layers.iter().enumerate() {
        tensors.insert(format!("{prefix}.{i}.weight"), Tensor::matrix(w));
        tensors.insert(format!("{prefix}.{i}.bias"), Tensor::vector(b.clone()));
    }
}
