//! Tensor archive: the rendered images of one CSV, bit-exact.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    8 bytes "VIZPTNSR"
//! version  u32     1
//! height   u32
//! width    u32
//! count    u64
//! labels   u32 count, then u32 length + UTF-8 bytes per label
//! records  count × (u8 label, 0xFF when unlabeled; height·width·3 pixel bytes)
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layout::ImageTensor;

pub const MAGIC: &[u8; 8] = b"VIZPTNSR";
pub const VERSION: u32 = 1;
pub const UNLABELED: u8 = 0xFF;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorArchive {
    pub height: usize,
    pub width: usize,
    pub class_labels: Vec<String>,
    pub images: Vec<ImageTensor>,
}

impl TensorArchive {
    pub fn new(
        height: usize,
        width: usize,
        class_labels: Vec<String>,
        images: Vec<ImageTensor>,
    ) -> Result<Self> {
        let archive = TensorArchive {
            height,
            width,
            class_labels,
            images,
        };
        archive.validate()?;
        Ok(archive)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_labels.len() >= UNLABELED as usize {
            return Err(Error::format("tensor archive", "too many class labels"));
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.height != self.height
                || img.width != self.width
                || img.pixels.len() != self.height * self.width * 3
            {
                return Err(Error::Geometry(format!(
                    "image {i} is {}x{}, archive is {}x{}",
                    img.height, img.width, self.height, self.width
                )));
            }
            if let Some(l) = img.label {
                if l >= self.class_labels.len() {
                    return Err(Error::LabelRange {
                        label: l,
                        classes: self.class_labels.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<Option<usize>> {
        self.images.iter().map(|i| i.label).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(64 + self.images.len() * (1 + self.height * self.width * 3));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.images.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.class_labels.len() as u32).to_le_bytes());
        for l in &self.class_labels {
            out.extend_from_slice(&(l.len() as u32).to_le_bytes());
            out.extend_from_slice(l.as_bytes());
        }
        for img in &self.images {
            out.push(img.label.map_or(UNLABELED, |l| l as u8));
            out.extend_from_slice(&img.pixels);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("tensor archive", m);
        let mut rest = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if rest.len() < n {
                return Err(bad("unexpected end of data"));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        if u32_at(take(4)?) != VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let height = u32_at(take(4)?);
        let width = u32_at(take(4)?);
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let n_labels = u32_at(take(4)?);
        let mut class_labels = Vec::with_capacity(n_labels.min(256));
        for _ in 0..n_labels {
            let len = u32_at(take(4)?);
            let s = std::str::from_utf8(take(len)?).map_err(|_| bad("label is not UTF-8"))?;
            class_labels.push(s.to_string());
        }
        let per_image = height * width * 3;
        let mut images = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let label = take(1)?[0];
            let pixels = take(per_image)?.to_vec();
            images.push(ImageTensor {
                height,
                width,
                pixels,
                label: (label != UNLABELED).then_some(label as usize),
            });
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        TensorArchive::new(height, width, class_labels, images)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
