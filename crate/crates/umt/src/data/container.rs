//! Binary clip container and the tab-separated corpus manifest.
//!
//! Container layout, all integers little-endian:
//! magic `UMTC`, version u16, dtype u8 (0 = f32), reserved u8, then u32
//! frame count / height / width / channels, u64 payload length in bytes,
//! the row-major `(t, y, x, c)` f32 payload, and a trailing u32 CRC32 of
//! the payload bytes.

use super::VideoClip;
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array4;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const CLIP_MAGIC: [u8; 4] = *b"UMTC";
const CLIP_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

pub fn write_clip(path: &Path, clip: &VideoClip) -> Result<()> {
    let (t, h, w, c) = clip.frames.dim();
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(&CLIP_MAGIC)?;
    out.write_u16::<LittleEndian>(CLIP_VERSION)?;
    out.write_u8(DTYPE_F32)?;
    out.write_u8(0)?;
    for dim in [t, h, w, c] {
        let v = u32::try_from(dim)
            .map_err(|_| Error::DimOverflow(format!("dimension {dim} exceeds u32")))?;
        out.write_u32::<LittleEndian>(v)?;
    }
    let elems = (t as u64) * (h as u64) * (w as u64) * (c as u64);
    let payload_len = elems
        .checked_mul(4)
        .ok_or_else(|| Error::DimOverflow("payload length exceeds u64".into()))?;
    out.write_u64::<LittleEndian>(payload_len)?;
    let mut hasher = crc32fast::Hasher::new();
    // Standard layout guarantees iteration order matches the declared
    // row-major payload order.
    let frames = clip.frames.as_standard_layout();
    for &v in frames.iter() {
        let bytes = v.to_le_bytes();
        hasher.update(&bytes);
        out.write_all(&bytes)?;
    }
    out.write_u32::<LittleEndian>(hasher.finalize())?;
    out.flush()?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<VideoClip> {
    let mut file = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if magic != CLIP_MAGIC {
        return Err(Error::BadMagic {
            expected: CLIP_MAGIC,
            found: magic,
        });
    }
    let version = file.read_u16::<LittleEndian>()?;
    if version != CLIP_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CLIP_VERSION,
        });
    }
    let dtype = file.read_u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let _reserved = file.read_u8()?;
    let t = file.read_u32::<LittleEndian>()? as usize;
    let h = file.read_u32::<LittleEndian>()? as usize;
    let w = file.read_u32::<LittleEndian>()? as usize;
    let c = file.read_u32::<LittleEndian>()? as usize;
    let payload_len = file.read_u64::<LittleEndian>()?;
    let elems = (t as u64)
        .checked_mul(h as u64)
        .and_then(|v| v.checked_mul(w as u64))
        .and_then(|v| v.checked_mul(c as u64))
        .ok_or_else(|| Error::DimOverflow(format!("{t}x{h}x{w}x{c} overflows")))?;
    let expected = elems
        .checked_mul(4)
        .ok_or_else(|| Error::DimOverflow("payload length exceeds u64".into()))?;
    if payload_len != expected {
        return Err(Error::invalid(format!(
            "declared payload {payload_len} bytes, dimensions imply {expected}"
        )));
    }
    let mut payload = vec![0u8; payload_len as usize];
    let mut got = 0usize;
    while got < payload.len() {
        let n = file.read(&mut payload[got..])?;
        if n == 0 {
            return Err(Error::Truncated {
                expected,
                got: got as u64,
            });
        }
        got += n;
    }
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(&payload);
    let computed = hasher.finalize();
    let stored = file.read_u32::<LittleEndian>().map_err(|_| Error::Truncated {
        expected: expected + 4,
        got: expected,
    })?;
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let frames = Array4::from_shape_vec((t, h, w, c), values)
        .map_err(|e| Error::invalid(format!("payload reshape failed: {e}")))?;
    VideoClip::new(
        frames,
        (0..t).collect(),
        path.display().to_string(),
        None,
    )
}

/// One corpus entry: clip path, optional integer label, caption token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Option<i64>,
    pub caption: Vec<u32>,
}

/// Writes `path<TAB>label<TAB>comma-separated-ids` lines; a missing label
/// leaves the middle field empty.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    for e in entries {
        let label = e.label.map(|l| l.to_string()).unwrap_or_default();
        let ids: Vec<String> = e.caption.iter().map(|t| t.to_string()).collect();
        writeln!(out, "{}\t{}\t{}", e.path.display(), label, ids.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::invalid(format!(
                "manifest line {}: expected 3 tab-separated fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let label = if fields[1].is_empty() {
            None
        } else {
            Some(fields[1].parse::<i64>().map_err(|_| {
                Error::invalid(format!("manifest line {}: bad label {:?}", lineno + 1, fields[1]))
            })?)
        };
        let caption = if fields[2].is_empty() {
            Vec::new()
        } else {
            fields[2]
                .split(',')
                .map(|s| {
                    s.parse::<u32>().map_err(|_| {
                        Error::invalid(format!(
                            "manifest line {}: bad token id {s:?}",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<Vec<u32>>>()?
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(fields[0]),
            label,
            caption,
        });
    }
    Ok(entries)
}
