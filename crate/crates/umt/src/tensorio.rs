//! Named-tensor container used for model snapshots and trainer
//! checkpoints.
//!
//! Layout, all integers little-endian: magic `UMTK`, version u16, tensor
//! count u32, then per tensor: name length u16, name bytes, dtype u8
//! (1 = f64, 2 = u64), rank u8, u32 dims, payload length u64, payload.
//! A trailing u32 CRC32 covers every byte after the magic and version.

use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use ndarray::Array2;
use std::io::{BufReader, Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"UMTK";
const VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;
const DTYPE_U64: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    F64(Array2<f64>),
    U64(Vec<u64>),
}

impl Tensor {
    pub fn as_f64(&self) -> Option<&Array2<f64>> {
        match self {
            Tensor::F64(a) => Some(a),
            Tensor::U64(_) => None,
        }
    }

    pub fn as_u64(&self) -> Option<&[u64]> {
        match self {
            Tensor::U64(v) => Some(v),
            Tensor::F64(_) => None,
        }
    }
}

pub fn save_tensors(path: &Path, tensors: &IndexMap<String, Tensor>) -> Result<()> {
    let mut body = Vec::new();
    let count = u32::try_from(tensors.len())
        .map_err(|_| Error::DimOverflow("too many tensors".into()))?;
    body.write_u32::<LittleEndian>(count)?;
    for (name, tensor) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::invalid(format!("tensor name {name:?} too long")))?;
        if name_len == 0 {
            return Err(Error::invalid("tensor names must be non-empty"));
        }
        body.write_u16::<LittleEndian>(name_len)?;
        body.write_all(name.as_bytes())?;
        match tensor {
            Tensor::F64(a) => {
                body.write_u8(DTYPE_F64)?;
                body.write_u8(2)?;
                for dim in [a.nrows(), a.ncols()] {
                    let v = u32::try_from(dim).map_err(|_| {
                        Error::DimOverflow(format!("dimension {dim} of {name} exceeds u32"))
                    })?;
                    body.write_u32::<LittleEndian>(v)?;
                }
                body.write_u64::<LittleEndian>((a.len() * 8) as u64)?;
                let std = a.as_standard_layout();
                for &v in std.iter() {
                    body.write_all(&v.to_le_bytes())?;
                }
            }
            Tensor::U64(v) => {
                body.write_u8(DTYPE_U64)?;
                body.write_u8(1)?;
                let len = u32::try_from(v.len()).map_err(|_| {
                    Error::DimOverflow(format!("length of {name} exceeds u32"))
                })?;
                body.write_u32::<LittleEndian>(len)?;
                body.write_u64::<LittleEndian>((v.len() * 8) as u64)?;
                for &x in v {
                    body.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_u16::<LittleEndian>(VERSION)?;
    out.write_all(&body)?;
    out.write_u32::<LittleEndian>(crc32fast::hash(&body))?;
    out.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<IndexMap<String, Tensor>> {
    let mut file = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = file.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let mut body = Vec::new();
    file.read_to_end(&mut body)?;
    if body.len() < 8 {
        return Err(Error::Truncated {
            expected: 8,
            got: body.len() as u64,
        });
    }
    let crc_off = body.len() - 4;
    let stored = u32::from_le_bytes(body[crc_off..].try_into().unwrap());
    let computed = crc32fast::hash(&body[..crc_off]);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }
    let mut cur = std::io::Cursor::new(&body[..crc_off]);
    let count = cur.read_u32::<LittleEndian>()?;
    let mut out = IndexMap::new();
    for _ in 0..count {
        let name_len = cur.read_u16::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        cur.read_exact(&mut name_bytes).map_err(truncated(crc_off))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::invalid("tensor name is not valid UTF-8"))?;
        let dtype = cur.read_u8()?;
        let rank = cur.read_u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.read_u32::<LittleEndian>()? as usize);
        }
        let byte_len = cur.read_u64::<LittleEndian>()? as usize;
        let mut payload = vec![0u8; byte_len];
        cur.read_exact(&mut payload).map_err(truncated(crc_off))?;
        let elems: usize = dims.iter().product();
        if byte_len != elems * 8 {
            return Err(Error::invalid(format!(
                "tensor {name}: {byte_len} payload bytes for {elems} elements"
            )));
        }
        let tensor = match (dtype, rank) {
            (DTYPE_F64, 2) => {
                let values: Vec<f64> = payload
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                let a = Array2::from_shape_vec((dims[0], dims[1]), values)
                    .map_err(|e| Error::invalid(format!("tensor {name}: {e}")))?;
                Tensor::F64(a)
            }
            (DTYPE_U64, 1) => {
                let values: Vec<u64> = payload
                    .chunks_exact(8)
                    .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                Tensor::U64(values)
            }
            (DTYPE_F64, r) | (DTYPE_U64, r) => {
                return Err(Error::invalid(format!(
                    "tensor {name}: unsupported rank {r} for dtype {dtype}"
                )));
            }
            _ => return Err(Error::UnsupportedDtype(dtype)),
        };
        if out.insert(name.clone(), tensor).is_some() {
            return Err(Error::invalid(format!("duplicate tensor name {name:?}")));
        }
    }
    Ok(out)
}

fn truncated(total: usize) -> impl Fn(std::io::Error) -> Error {
    move |_| Error::Truncated {
        expected: total as u64,
        got: 0,
    }
}
