//! Versioned binary parameter file.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic          8 bytes  "PAGCKPT1"
//! tensor_count   u32
//! tensor_count × { name_len u32, name utf-8, ndim u32, dims u32×ndim, data f32×prod(dims) }
//! meta_count     u32
//! meta_count   × { key_len u32, key utf-8, tag u8, payload }
//!                tag 0: u64 · tag 1: f64 · tag 2: len u32 + utf-8 bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PAGCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetaValue {
    U64(u64),
    F64(f64),
    Str(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    pub meta: Vec<(String, MetaValue)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn meta(&self, key: &str) -> Option<&MetaValue> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        match self.meta(key) {
            Some(MetaValue::U64(v)) => Ok(*v),
            _ => Err(Error::Checkpoint(format!("missing u64 entry {key}"))),
        }
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        match self.meta(key) {
            Some(MetaValue::F64(v)) => Ok(*v),
            _ => Err(Error::Checkpoint(format!("missing f64 entry {key}"))),
        }
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        match self.meta(key) {
            Some(MetaValue::Str(v)) => Ok(v),
            _ => Err(Error::Checkpoint(format!("missing string entry {key}"))),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u32(w, self.tensors.len())?;
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Checkpoint(format!("tensor {} shape/data mismatch", t.name)));
            }
            write_str(w, &t.name)?;
            write_u32(w, t.shape.len())?;
            for &d in &t.shape {
                write_u32(w, d)?;
            }
            for &x in &t.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        write_u32(w, self.meta.len())?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            match v {
                MetaValue::U64(x) => {
                    w.write_all(&[0])?;
                    w.write_all(&x.to_le_bytes())?;
                }
                MetaValue::F64(x) => {
                    w.write_all(&[1])?;
                    w.write_all(&x.to_le_bytes())?;
                }
                MetaValue::Str(s) => {
                    w.write_all(&[2])?;
                    write_str(w, s)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let n = read_u32(r)?;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = read_str(r)?;
            let ndim = read_u32(r)?;
            let shape = (0..ndim).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let mut bytes = vec![0u8; len * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        let m = read_u32(r)?;
        let mut meta = Vec::with_capacity(m.min(1 << 16));
        for _ in 0..m {
            let key = read_str(r)?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let value = match tag[0] {
                0 => MetaValue::U64(u64::from_le_bytes(read_8(r)?)),
                1 => MetaValue::F64(f64::from_le_bytes(read_8(r)?)),
                2 => MetaValue::Str(read_str(r)?),
                t => return Err(Error::Checkpoint(format!("unknown meta tag {t}"))),
            };
            meta.push((key, value));
        }
        Ok(Self { tensors, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint("count exceeds u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn read_8<R: Read>(r: &mut R) -> Result<[u8; 8]> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)?;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
}
