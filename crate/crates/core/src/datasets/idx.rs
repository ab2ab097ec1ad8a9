// IDX container: big-endian u32 magic (0x00000803 images, 0x00000801 labels),
// one big-endian u32 per dimension, then the unsigned byte payload.

use std::path::Path;

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// One `rows * cols` row-major buffer per image.
    pub images: Vec<Vec<u8>>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            msg: "truncated header".into(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            msg: format!("magic {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    bytes.get(start..start + len).ok_or_else(|| Error::Format {
        offset: bytes.len() as u64,
        msg: format!("payload truncated: need {len} bytes from offset {start}"),
    })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let data = payload(bytes, 16, count * size)?;
    let images = if size == 0 {
        vec![Vec::new(); count]
    } else {
        data.chunks(size).map(<[u8]>::to_vec).collect()
    };
    Ok(IdxImages { rows, cols, images })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.to_vec())
}

pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.images.len() * images.rows * images.cols);
    for word in [
        IMAGE_MAGIC,
        images.images.len() as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for img in &images.images {
        out.extend_from_slice(img);
    }
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
