use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

use super::{Dataset, Provenance};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Pixels strictly above this value become ones.
pub const MNIST_THRESHOLD: u8 = 150;

/// Raw IDX3 image data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Corrupt(format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated("IDX header".into()))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Corrupt(format!("bad IDX3 magic number {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < expected {
        return Err(Error::Truncated(format!(
            "IDX3 declares {expected} pixel bytes, found {}",
            body.len()
        )));
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: body[..expected].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Corrupt(format!("bad IDX1 magic number {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::Truncated(format!(
            "IDX1 declares {count} labels, found {}",
            body.len()
        )));
    }
    Ok(body[..count].to_vec())
}

/// Loads an IDX3 image file (plain or gzip).
pub fn load_idx_images(path: &Path) -> Result<IdxImages> {
    parse_idx_images(&read_maybe_gz(path)?)
}

/// Loads an IDX1 label file (plain or gzip).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read_maybe_gz(path)?)
}

/// Binarizes one image, optionally cropping the central `s×s` window first.
/// Rows are concatenated top to bottom.
pub(crate) fn binarize(image: &[u8], rows: usize, cols: usize, threshold: u8, crop: Option<usize>) -> Vec<u8> {
    let (h, w, r0, c0) = match crop {
        Some(s) => (s, s, (rows - s) / 2, (cols - s) / 2),
        None => (rows, cols, 0, 0),
    };
    let mut out = Vec::with_capacity(h * w);
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            out.push(u8::from(image[r * cols + c] > threshold));
        }
    }
    out
}

/// Binary MNIST dataset: pixels strictly above `threshold` become one.
/// `crop` keeps the central `s×s` window (n = s²); `limit` keeps the first
/// images only.
pub fn load_mnist_binary(
    images_path: &Path,
    threshold: u8,
    crop: Option<usize>,
    limit: Option<usize>,
) -> Result<Dataset> {
    let images = load_idx_images(images_path)?;
    images_to_dataset(&images, threshold, crop, limit)
}

pub(crate) fn images_to_dataset(
    images: &IdxImages,
    threshold: u8,
    crop: Option<usize>,
    limit: Option<usize>,
) -> Result<Dataset> {
    if let Some(s) = crop {
        if s == 0 || s > images.rows || s > images.cols {
            return Err(Error::InvalidArgument(format!(
                "crop size {s} must be in 1..={}",
                images.rows.min(images.cols)
            )));
        }
    }
    let count = limit.map_or(images.count, |l| l.min(images.count));
    let rows = (0..count)
        .map(|i| binarize(images.image(i), images.rows, images.cols, threshold, crop))
        .collect::<Vec<_>>();
    let n = crop.map_or(images.rows * images.cols, |s| s * s);
    Dataset::new(n, rows, Provenance::Mnist { threshold, crop })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx3(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    #[test]
    fn two_by_two_fixture() {
        let images = parse_idx_images(&idx3(1, 2, 2, &[0, 149, 151, 255])).unwrap();
        let d = images_to_dataset(&images, 150, None, None).unwrap();
        assert_eq!(d.rows(), &[vec![0, 0, 1, 1]]);
    }

    #[test]
    fn threshold_value_itself_is_zero() {
        let images = parse_idx_images(&idx3(1, 1, 2, &[150, 151])).unwrap();
        let d = images_to_dataset(&images, 150, None, None).unwrap();
        assert_eq!(d.rows()[0], vec![0, 1]);
    }

    #[test]
    fn blank_image_is_all_zero() {
        let images = parse_idx_images(&idx3(1, 28, 28, &[0; 784])).unwrap();
        let d = images_to_dataset(&images, 150, None, None).unwrap();
        assert_eq!(d.n(), 784);
        assert!(d.rows()[0].iter().all(|&b| b == 0));
    }

    #[test]
    fn row_major_flattening_and_crop() {
        let pixels: Vec<u8> = (0..16).map(|i| if i == 6 { 255 } else { 0 }).collect();
        let images = parse_idx_images(&idx3(1, 4, 4, &pixels)).unwrap();
        let full = images_to_dataset(&images, 150, None, None).unwrap();
        // pixel (row 1, col 2) lands at bit 4·1 + 2
        assert_eq!(full.rows()[0].iter().position(|&b| b == 1), Some(6));
        let crop = images_to_dataset(&images, 150, Some(2), None).unwrap();
        assert_eq!(crop.n(), 4);
        assert_eq!(crop.rows()[0], vec![0, 1, 0, 0]);
    }

    #[test]
    fn header_errors() {
        let mut bad = idx3(1, 2, 2, &[0; 4]);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Corrupt(_))));
        assert!(matches!(
            parse_idx_images(&idx3(2, 2, 2, &[0; 5])),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(parse_idx_images(&[0, 0]), Err(Error::Truncated(_))));
        let mut labels = LABEL_MAGIC.to_be_bytes().to_vec();
        labels.extend_from_slice(&3u32.to_be_bytes());
        labels.extend_from_slice(&[1, 2, 3]);
        assert_eq!(parse_idx_labels(&labels).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn raising_threshold_never_adds_ones() {
        let pixels: Vec<u8> = (0..=255).collect();
        let images = parse_idx_images(&idx3(1, 16, 16, &pixels)).unwrap();
        let mut prev = images_to_dataset(&images, 0, None, None).unwrap().rows()[0].clone();
        for t in [50u8, 100, 150, 200, 254] {
            let cur = images_to_dataset(&images, t, None, None).unwrap().rows()[0].clone();
            assert!(cur.iter().zip(&prev).all(|(c, p)| c <= p));
            prev = cur;
        }
    }
}
