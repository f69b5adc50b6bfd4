//! Raw per-image interchange files.
//!
//! Every raster starts with the same 16-byte little-endian header:
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 8    | magic                     |
//! | 8      | 4    | width (u32)               |
//! | 12     | 4    | height (u32)              |
//!
//! Depth files (`OCCDEPTH`) follow with `width*height` f32 depths in meters,
//! row-major. Semantic mask files (`OCCSMASK`) follow with `width*height`
//! u8 class ids, then `width*height` f32 logits, both row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::SemanticMask;
use crate::unproject::DepthMap;

pub const HEADER_LEN: usize = 16;
pub const DEPTH_MAGIC: [u8; 8] = *b"OCCDEPTH";
pub const MASK_MAGIC: [u8; 8] = *b"OCCSMASK";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterHeader {
    pub magic: [u8; 8],
    pub width: u32,
    pub height: u32,
}

impl RasterHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[..8].copy_from_slice(&self.magic);
        out[8..12].copy_from_slice(&self.width.to_le_bytes());
        out[12..16].copy_from_slice(&self.height.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8], what: &'static str) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                what,
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        Ok(Self {
            magic: bytes[..8].try_into().unwrap(),
            width: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
            height: u32::from_le_bytes(bytes[12..16].try_into().unwrap()),
        })
    }

    fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// Total file length for a raster of the given kind and size.
pub fn expected_len(magic: [u8; 8], width: u32, height: u32) -> usize {
    let n = width as usize * height as usize;
    match &magic {
        m if *m == DEPTH_MAGIC => HEADER_LEN + 4 * n,
        _ => HEADER_LEN + 5 * n,
    }
}

fn check(bytes: &[u8], magic: [u8; 8], what: &'static str) -> Result<RasterHeader> {
    let h = RasterHeader::decode(bytes, what)?;
    if h.magic != magic {
        return Err(Error::BadMagic {
            what,
            expected: magic.to_vec(),
            found: h.magic.to_vec(),
        });
    }
    let expected = expected_len(magic, h.width, h.height);
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{what} header says {}x{} ({expected} bytes) but file holds {} bytes",
            h.width,
            h.height,
            bytes.len()
        )));
    }
    Ok(h)
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let header = RasterHeader {
        magic: DEPTH_MAGIC,
        width: depth.width(),
        height: depth.height(),
    };
    let mut out = Vec::with_capacity(expected_len(DEPTH_MAGIC, depth.width(), depth.height()));
    out.extend_from_slice(&header.encode());
    for d in depth.data() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    let h = check(bytes, DEPTH_MAGIC, "depth map")?;
    DepthMap::new(h.width, h.height, f32s(&bytes[HEADER_LEN..]))
}

pub fn encode_mask(mask: &SemanticMask) -> Vec<u8> {
    let header = RasterHeader {
        magic: MASK_MAGIC,
        width: mask.width(),
        height: mask.height(),
    };
    let mut out = Vec::with_capacity(expected_len(MASK_MAGIC, mask.width(), mask.height()));
    out.extend_from_slice(&header.encode());
    out.extend_from_slice(mask.classes());
    for l in mask.logits() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<SemanticMask> {
    let h = check(bytes, MASK_MAGIC, "semantic mask")?;
    let n = h.pixels();
    let classes = bytes[HEADER_LEN..HEADER_LEN + n].to_vec();
    let logits = f32s(&bytes[HEADER_LEN + n..]);
    SemanticMask::from_parts(h.width, h.height, classes, logits)
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_depth(&bytes)
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    fs::write(path, encode_depth(depth)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<SemanticMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes)
}

pub fn write_mask(path: &Path, mask: &SemanticMask) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

/// Reads only the header of a raster file and its on-disk length.
pub fn probe(path: &Path, what: &'static str) -> Result<(RasterHeader, u64)> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut buf = [0u8; HEADER_LEN];
    let mut read = 0;
    while read < HEADER_LEN {
        let n = f.read(&mut buf[read..]).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        read += n;
    }
    Ok((RasterHeader::decode(&buf[..read], what)?, len))
}
