//! IDX file reading and writing (the MNIST distribution format).
//!
//! All header integers are big endian. Image files start with magic 2051
//! followed by count, rows and cols; label files start with magic 2049
//! followed by count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::target::{digit_label, TargetImage};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }

    pub fn image_file(self) -> String {
        format!("{}-images-idx3-ubyte", self.prefix())
    }

    pub fn label_file(self) -> String {
        format!("{}-labels-idx1-ubyte", self.prefix())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format(format!("truncated {what} header")))?;
    Ok(u32::from_be_bytes(b))
}

pub fn read_images<R: Read>(mut r: R) -> Result<IdxImages> {
    let magic = read_u32(&mut r, "image")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("bad image magic {magic}, expected {IMAGE_MAGIC}")));
    }
    let count = read_u32(&mut r, "image")? as usize;
    let rows = read_u32(&mut r, "image")? as usize;
    let cols = read_u32(&mut r, "image")? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    r.read_exact(&mut pixels)
        .map_err(|_| Error::Format(format!("truncated image data: expected {count} images of {rows}x{cols}")))?;
    Ok(IdxImages { rows, cols, pixels })
}

pub fn read_labels<R: Read>(mut r: R) -> Result<Vec<u8>> {
    let magic = read_u32(&mut r, "label")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("bad label magic {magic}, expected {LABEL_MAGIC}")));
    }
    let count = read_u32(&mut r, "label")? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)
        .map_err(|_| Error::Format(format!("truncated label data: expected {count} labels")))?;
    Ok(labels)
}

pub fn write_images<W: Write>(mut w: W, images: &IdxImages) -> Result<()> {
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    w.write_all(&(images.len() as u32).to_be_bytes())?;
    w.write_all(&(images.rows as u32).to_be_bytes())?;
    w.write_all(&(images.cols as u32).to_be_bytes())?;
    w.write_all(&images.pixels)?;
    Ok(())
}

pub fn write_labels<W: Write>(mut w: W, labels: &[u8]) -> Result<()> {
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

/// Builds targets from parsed IDX data, optionally resampled to `size`.
pub fn to_targets(images: &IdxImages, labels: &[u8], size: Option<(usize, usize)>) -> Result<Vec<TargetImage>> {
    if images.len() != labels.len() {
        return Err(Error::Format(format!(
            "image/label count mismatch: {} images, {} labels",
            images.len(),
            labels.len()
        )));
    }
    (0..images.len())
        .map(|i| {
            let t = TargetImage::from_u8(images.rows, images.cols, images.image(i), digit_label(labels[i]))?;
            Ok(match size {
                Some((h, w)) if (h, w) != (t.height, t.width) => t.resized(h, w),
                _ => t,
            })
        })
        .collect()
}

/// Loads one split of an IDX dataset from `dir`.
pub fn load_mnist(dir: &Path, split: Split, size: Option<(usize, usize)>) -> Result<Vec<TargetImage>> {
    let images = read_images(BufReader::new(File::open(dir.join(split.image_file()))?))?;
    let labels = read_labels(BufReader::new(File::open(dir.join(split.label_file()))?))?;
    to_targets(&images, &labels, size)
}

/// Writes a split in IDX format to `dir` (used for synthetic fixtures).
pub fn save_split(dir: &Path, split: Split, images: &IdxImages, labels: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(split.image_file()))?);
    write_images(&mut w, images)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join(split.label_file()))?);
    write_labels(&mut w, labels)?;
    w.flush()?;
    Ok(())
}

pub fn has_split(dir: &Path, split: Split) -> bool {
    dir.join(split.image_file()).is_file() && dir.join(split.label_file()).is_file()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (IdxImages, Vec<u8>) {
        let images = IdxImages {
            rows: 2,
            cols: 3,
            pixels: vec![0, 0, 0, 0, 0, 0, 255, 0, 128, 0, 0, 255],
        };
        (images, vec![8, 1])
    }

    #[test]
    fn header_layout_is_big_endian() {
        let (images, labels) = sample();
        let mut buf = Vec::new();
        write_images(&mut buf, &images).unwrap();
        assert_eq!(&buf[..4], &[0, 0, 8, 3]);
        assert_eq!(&buf[4..8], &[0, 0, 0, 2]);
        let mut lbuf = Vec::new();
        write_labels(&mut lbuf, &labels).unwrap();
        assert_eq!(&lbuf[..4], &[0, 0, 8, 1]);
        let back = read_images(&buf[..]).unwrap();
        assert_eq!(back, images);
        assert_eq!(read_labels(&lbuf[..]).unwrap(), labels);
    }

    #[test]
    fn zero_image_and_label_text() {
        let (images, labels) = sample();
        let t = to_targets(&images, &labels, None).unwrap();
        assert!(t[0].pixels.iter().all(|&v| v == 0.0));
        assert_eq!(t[0].label, "number eight");
        assert_eq!(t[1].pixels[0], 1.0);
    }

    #[test]
    fn errors() {
        let (images, labels) = sample();
        let mut buf = Vec::new();
        write_images(&mut buf, &images).unwrap();
        let mut bad = buf.clone();
        bad[3] = 4;
        assert!(matches!(read_images(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read_images(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(read_labels(&buf[..]), Err(Error::Format(_))));
        assert!(to_targets(&images, &labels[..1], None).is_err());
    }

    #[test]
    fn directory_roundtrip_with_resize() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = sample();
        save_split(dir.path(), Split::Test, &images, &labels).unwrap();
        assert!(has_split(dir.path(), Split::Test));
        assert!(!has_split(dir.path(), Split::Train));
        let t = load_mnist(dir.path(), Split::Test, Some((1, 1))).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].pixels.len(), 1);
    }
}
