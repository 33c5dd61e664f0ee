//! Binary raster masks shared by tissue detection, epithelium segmentation
//! and density computation.

use alloc::vec;
use alloc::vec::Vec;

/// Binary mask, row-major, one byte per pixel (0 or 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    /// Wrap raw bytes; any nonzero byte counts as foreground.
    pub fn from_bytes(width: usize, height: usize, bytes: Vec<u8>) -> Option<Self> {
        if bytes.len() != width * height {
            return None;
        }
        let data = bytes.into_iter().map(|b| u8::from(b != 0)).collect();
        Some(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = u8::from(v != 0);
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Number of foreground pixels.
    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&b| b as usize).sum()
    }

    /// Mean of the mask over the rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn mean_over(&self, x0: usize, y0: usize, w: usize, h: usize) -> f64 {
        debug_assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut ones = 0usize;
        for y in y0..y0 + h {
            let row = &self.data[y * self.width + x0..y * self.width + x0 + w];
            ones += row.iter().map(|&b| b as usize).sum::<usize>();
        }
        ones as f64 / (w * h) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_and_mean() {
        let mut m = BinMask::zeros(4, 2);
        m.set(0, 0, 1);
        m.set(3, 1, 7); // nonzero normalizes to 1
        assert_eq!(m.count_ones(), 2);
        assert_eq!(m.mean_over(0, 0, 4, 2), 0.25);
        assert_eq!(m.mean_over(0, 0, 2, 1), 0.5);
    }

    #[test]
    fn from_bytes_checks_len() {
        assert!(BinMask::from_bytes(3, 3, vec![0; 8]).is_none());
        let m = BinMask::from_bytes(2, 2, vec![0, 255, 1, 0]).unwrap();
        assert_eq!(m.count_ones(), 2);
    }
}
