use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::HarnessError;
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// An unsigned-byte IDX container: big-endian magic, big-endian dimension
/// sizes, then the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<u32>,
    pub payload: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

impl IdxFile {
    pub fn parse(bytes: &[u8]) -> Result<Self, HarnessError> {
        let magic = be_u32(bytes, 0).ok_or_else(|| {
            HarnessError::Data(format!(
                "IDX header truncated: {} bytes, need at least 4",
                bytes.len()
            ))
        })?;
        let rank = match magic {
            IMAGES_MAGIC => 3,
            LABELS_MAGIC => 1,
            other => {
                return Err(HarnessError::Data(format!(
                    "unsupported IDX magic 0x{other:08x}; expected 0x{IMAGES_MAGIC:08x} or 0x{LABELS_MAGIC:08x}"
                )))
            }
        };
        let header = 4 + 4 * rank;
        let dims: Vec<u32> = (0..rank)
            .map(|i| be_u32(bytes, 4 + 4 * i))
            .collect::<Option<_>>()
            .ok_or_else(|| {
                HarnessError::Data(format!(
                    "IDX header truncated: {} bytes, need {header}",
                    bytes.len()
                ))
            })?;
        let expected = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
        let actual = bytes.len() - header;
        match expected {
            Some(e) if e == actual => Ok(Self {
                magic,
                dims,
                payload: bytes[header..].to_vec(),
            }),
            _ => Err(HarnessError::Data(format!(
                "IDX payload length {actual} does not match dims {dims:?}"
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    /// Reads a file, transparently decompressing gzip.
    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let raw =
            fs::read(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
            let mut out = Vec::new();
            GzDecoder::new(raw.as_slice())
                .read_to_end(&mut out)
                .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
            out
        } else {
            raw
        };
        Self::parse(&bytes).map_err(|e| match e {
            HarnessError::Data(m) => HarnessError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Writes the file, gzip-compressed when the name ends in `.gz`.
    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let bytes = self.to_bytes();
        let out = if path.extension().is_some_and(|e| e == "gz") {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&bytes)?;
            enc.finish()?
        } else {
            bytes
        };
        fs::write(path, out)?;
        Ok(())
    }

    /// Images as an `n x (rows * cols)` tensor scaled to `[0, 1]`.
    pub fn images(&self) -> Result<Tensor, HarnessError> {
        if self.magic != IMAGES_MAGIC {
            return Err(HarnessError::Data(format!(
                "IDX magic 0x{:08x} does not hold images",
                self.magic
            )));
        }
        let n = self.dims[0] as usize;
        let width = self.dims[1] as usize * self.dims[2] as usize;
        let data = self.payload.iter().map(|&b| f64::from(b) / 255.0).collect();
        Tensor::new(vec![n, width], data).map_err(|e| HarnessError::Data(e.to_string()))
    }

    pub fn labels(&self) -> Result<Vec<usize>, HarnessError> {
        if self.magic != LABELS_MAGIC {
            return Err(HarnessError::Data(format!(
                "IDX magic 0x{:08x} does not hold labels",
                self.magic
            )));
        }
        Ok(self.payload.iter().map(|&b| usize::from(b)).collect())
    }
}

/// Loads an IDX image file as a flattened tensor in `[0, 1]`.
pub fn load_idx_images(path: &Path) -> Result<Tensor, HarnessError> {
    IdxFile::read(path)?.images()
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>, HarnessError> {
    IdxFile::read(path)?.labels()
}
