//! IDX container reading and writing: 4-byte big-endian magic, big-endian
//! dimension sizes, then raw unsigned bytes. Images must be 28x28.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct IdxReader<'a> {
    cursor: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl<'a> IdxReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let pos = self.cursor.position() as usize;
        self.cursor.read_u32::<BigEndian>().map_err(|_| Error::Truncated {
            path: self.path.to_path_buf(),
            needed: pos + 4,
            available: self.cursor.get_ref().len(),
        })
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let start = self.cursor.position() as usize;
        let buf = *self.cursor.get_ref();
        if start + n > buf.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                needed: start + n,
                available: buf.len(),
            });
        }
        self.cursor.set_position((start + n) as u64);
        Ok(&buf[start..start + n])
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Decode an image file into an (N, 1, 28, 28) tensor with values byte/255.
pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let mut r = IdxReader {
        cursor: Cursor::new(&bytes),
        path,
    };
    let magic = r.u32()?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: IMAGE_MAGIC,
            actual: magic,
        });
    }
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows != 28 || cols != 28 {
        return Err(Error::BadImageSize { rows, cols });
    }
    let payload = r.bytes(count * rows * cols)?;
    let data: Vec<f64> = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[count, 1, rows, cols], data)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    let mut r = IdxReader {
        cursor: Cursor::new(&bytes),
        path,
    };
    let magic = r.u32()?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: LABEL_MAGIC,
            actual: magic,
        });
    }
    let count = r.u32()? as usize;
    let payload = r.bytes(count)?;
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Decode a matched image/label pair, checking that the counts agree.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<(Tensor, Vec<usize>)> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::CountMismatch {
            images: images.shape()[0],
            labels: labels.len(),
        });
    }
    Ok((images, labels))
}

pub fn write_idx_images(path: &Path, images: &[u8], count: usize) -> Result<()> {
    assert_eq!(images.len(), count * 28 * 28);
    let mut out = Vec::with_capacity(16 + images.len());
    out.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
    out.write_u32::<BigEndian>(count as u32).unwrap();
    out.write_u32::<BigEndian>(28).unwrap();
    out.write_u32::<BigEndian>(28).unwrap();
    out.extend_from_slice(images);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
    out.write_u32::<BigEndian>(labels.len() as u32).unwrap();
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
