//! IDX files: big-endian u32 magic and dimensions followed by u8 payload.

use std::fs;
use std::path::Path;

use super::{Dataset, RawImages, Split};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let b = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.err(format!("truncated {what}")))?;
        let v = u32::from_be_bytes([b[0], b[1], b[2], b[3]]);
        self.pos = end;
        Ok(v)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| self.err("size overflow"))?;
        let b = self.bytes.get(self.pos..end).ok_or_else(|| {
            self.err(format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos))
        })?;
        self.pos = end;
        Ok(b)
    }

    fn magic(&mut self, want: u32) -> Result<()> {
        let got = self.u32("magic number")?;
        if got != want {
            self.pos -= 4;
            return Err(self.err(format!("bad magic 0x{got:08x}, expected 0x{want:08x}")));
        }
        Ok(())
    }
}

/// Reads an image file (`N×H×W`, one channel) and its label file.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<RawImages> {
    let img_bytes = fs::read(images_path)?;
    let mut img = Cursor {
        path: images_path,
        bytes: &img_bytes,
        pos: 0,
    };
    img.magic(IMAGE_MAGIC)?;
    let n = img.u32("image count")? as usize;
    let h = img.u32("row count")? as usize;
    let w = img.u32("column count")? as usize;
    let pixels = img.take(n * h * w, "pixel data")?.to_vec();
    if img.pos != img_bytes.len() {
        return Err(img.err("trailing bytes after pixel data"));
    }

    let lab_bytes = fs::read(labels_path)?;
    let mut lab = Cursor {
        path: labels_path,
        bytes: &lab_bytes,
        pos: 0,
    };
    lab.magic(LABEL_MAGIC)?;
    let m = lab.u32("label count")? as usize;
    if m != n {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {m} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    let labels = lab.take(m, "label data")?.iter().map(|&b| b as usize).collect();
    if lab.pos != lab_bytes.len() {
        return Err(lab.err("trailing bytes after label data"));
    }
    Ok(RawImages {
        shape: [n, 1, h, w],
        pixels,
        labels,
    })
}

pub fn write_idx(raw: &RawImages, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [n, c, h, w] = raw.shape;
    if c != 1 {
        return Err(Error::Config(format!("IDX images are single-channel, got {c} channels")));
    }
    if let Some(&y) = raw.labels.iter().find(|&&y| y > u8::MAX as usize) {
        return Err(Error::Config(format!("label {y} does not fit in one byte")));
    }
    let mut img = Vec::with_capacity(16 + raw.pixels.len());
    for v in [IMAGE_MAGIC, n as u32, h as u32, w as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(&raw.pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [LABEL_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(raw.labels.iter().map(|&y| y as u8));
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

impl Dataset {
    /// Loads an IDX pair, standardizing by the file's own channel statistics.
    pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let raw = read_idx(images_path, labels_path)?;
        let classes = raw.max_label().map_or(2, |m| (m + 1).max(2));
        Dataset::from_raw_self_stats(raw, classes, Split::Train)
    }
}
