use std::path::Path;

use image::GrayImage;

use crate::error::{Error, Result};

/// 8-bit mask levels at or above this are foreground.
pub const MASK_THRESHOLD: u8 = 128;

/// Strictly binary `height × width` map, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(
                "mask",
                format!("{width}x{height} mask needs {} values, got {}", width * height, bits.len()),
            ));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { width, height, bits }
    }

    /// Thresholds an 8-bit single-channel buffer at [`MASK_THRESHOLD`].
    pub fn from_gray(width: usize, height: usize, levels: &[u8]) -> Result<Self> {
        Self::new(width, height, levels.iter().map(|&v| v >= MASK_THRESHOLD).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-range coordinates read as background.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground as `0.0 / 1.0`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn invert(&self) -> Self {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn mirrored(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Shifts the mask by `(dx, dy)`; uncovered pixels become background.
    pub fn translated(&self, dx: isize, dy: isize) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get_signed(x as isize - dx, y as isize - dy)
        })
    }

    /// Mean foreground coordinate `(x, y)`, or `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn to_gray(&self) -> GrayImage {
        let levels = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, levels).expect("buffer sized from dims")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::file(path, e))?.into_luma8();
        Self::from_gray(img.width() as usize, img.height() as usize, img.as_raw())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_gray().save(path).map_err(|e| Error::file(path, e))
    }
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.width, self.height)?;
        if self.width * self.height <= 1024 {
            for row in self.bits.chunks(self.width) {
                writeln!(f, "{}", row.iter().map(|&b| if b { '#' } else { '.' }).collect::<String>())?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_at_128() {
        let m = BinaryMask::from_gray(4, 1, &[0, 127, 128, 255]).unwrap();
        assert_eq!(m.bits(), &[false, false, true, true]);
    }

    #[test]
    fn translation_drops_pixels_at_the_border() {
        let m = BinaryMask::from_fn(3, 1, |x, _| x == 2);
        assert!(m.translated(1, 0).is_empty());
        assert_eq!(m.translated(-1, 0).bits(), &[false, true, false]);
    }

    #[test]
    fn centroid_of_square() {
        let m = BinaryMask::from_fn(10, 10, |x, y| (2..6).contains(&x) && (4..8).contains(&y));
        assert_eq!(m.centroid(), Some((3.5, 5.5)));
        assert_eq!(BinaryMask::empty(3, 3).centroid(), None);
    }
}
