//! Tissue masking and fixed-grid tessellation.
//!
//! Tissue detection is classical: Otsu's threshold on the HSV saturation
//! channel (background is near-white and therefore low-saturation), followed
//! by small-component removal. Tessellation keeps grid-aligned tiles whose
//! tissue fraction clears a minimum.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::mask::BinMask;

/// Default tile edge for the MIL grid, in pixels.
pub const DEFAULT_TILE_SIZE: usize = 224;
/// Default minimum tissue fraction for a tile to survive tessellation.
pub const DEFAULT_MIN_TISSUE_FRAC: f64 = 0.5;
/// Assumed spatial resolution of MIL tiles; configurable, not asserted.
pub const DEFAULT_MPP: f64 = 0.5;

/// Interleaved 8-bit RGB raster.
#[derive(Clone, Debug)]
pub struct RgbRaster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PreprocessError {
    EmptyImage,
    BadBufferLen { expected: usize, actual: usize },
    BadTissueFrac { value_times_1000: i64 },
    ZeroTileSize,
}

impl fmt::Display for PreprocessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PreprocessError::EmptyImage => write!(f, "image has zero pixels"),
            PreprocessError::BadBufferLen { expected, actual } => {
                write!(f, "rgb buffer holds {actual} bytes, expected {expected}")
            }
            PreprocessError::BadTissueFrac { value_times_1000 } => {
                write!(f, "min_tissue_frac out of [0,1]: {}", *value_times_1000 as f64 / 1000.0)
            }
            PreprocessError::ZeroTileSize => write!(f, "tile size must be >= 1"),
        }
    }
}

impl core::error::Error for PreprocessError {}

impl RgbRaster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, PreprocessError> {
        if width == 0 || height == 0 {
            return Err(PreprocessError::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(PreprocessError::BadBufferLen {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> (u8, u8, u8) {
        let i = (y * self.width + x) * 3;
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }

    /// Box-filter downsample by an integer factor.
    pub fn downsample(&self, factor: usize) -> RgbRaster {
        if factor <= 1 {
            return self.clone();
        }
        let w = (self.width / factor).max(1);
        let h = (self.height / factor).max(1);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0u32; 3];
                let mut n = 0u32;
                for sy in y * factor..((y + 1) * factor).min(self.height) {
                    for sx in x * factor..((x + 1) * factor).min(self.width) {
                        let (r, g, b) = self.pixel(sx, sy);
                        acc[0] += r as u32;
                        acc[1] += g as u32;
                        acc[2] += b as u32;
                        n += 1;
                    }
                }
                for channel in acc {
                    data.push((channel / n) as u8);
                }
            }
        }
        RgbRaster { width: w, height: h, data }
    }
}

/// HSV saturation scaled to 0..=255 (0 for black and pure grays/whites).
fn saturation(r: u8, g: u8, b: u8) -> u8 {
    let mx = r.max(g).max(b) as u32;
    let mn = r.min(g).min(b) as u32;
    if mx == 0 {
        return 0;
    }
    ((mx - mn) * 255 / mx) as u8
}

/// Otsu threshold over a 256-bin histogram; `None` when every pixel falls in
/// a single bin (no split exists).
fn otsu(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied < 2 {
        return None;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    let mut best_t = 0usize;
    let mut best_var = -1.0f64;
    for t in 0..255 {
        w0 += hist[t];
        if w0 == 0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0 {
            break;
        }
        sum0 += t as f64 * hist[t] as f64;
        let mean0 = sum0 / w0 as f64;
        let mean1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (mean0 - mean1) * (mean0 - mean1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    Some(best_t as u8)
}

/// Tissue mask plus the degenerate-image flag.
#[derive(Clone, Debug)]
pub struct TissueMask {
    pub mask: BinMask,
    /// True when the image had no saturation contrast at all (e.g. pure
    /// white); the mask is then empty.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct TissueMaskConfig {
    /// Connected components smaller than this (4-connectivity) are dropped.
    pub min_component_px: usize,
}

impl Default for TissueMaskConfig {
    fn default() -> Self {
        Self { min_component_px: 16 }
    }
}

/// Binary tissue mask at the raster's resolution: foreground where the
/// saturation clears Otsu's threshold, minus small specks.
pub fn tissue_mask(image: &RgbRaster, cfg: &TissueMaskConfig) -> TissueMask {
    let (w, h) = (image.width(), image.height());
    let mut sat = vec![0u8; w * h];
    let mut hist = [0u64; 256];
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = image.pixel(x, y);
            let s = saturation(r, g, b);
            sat[y * w + x] = s;
            hist[s as usize] += 1;
        }
    }
    let threshold = match otsu(&hist) {
        Some(t) => t,
        None => return TissueMask { mask: BinMask::zeros(w, h), degenerate: true },
    };
    let mut mask = BinMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if sat[y * w + x] > threshold {
                mask.set(x, y, 1);
            }
        }
    }
    remove_small_components(&mut mask, cfg.min_component_px);
    TissueMask { mask, degenerate: false }
}

/// Drop 4-connected foreground components below `min_px` pixels.
fn remove_small_components(mask: &mut BinMask, min_px: usize) {
    if min_px <= 1 {
        return;
    }
    let (w, h) = (mask.width(), mask.height());
    let mut visited = vec![false; w * h];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut component: Vec<(usize, usize)> = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if mask.get(x0, y0) == 0 || visited[y0 * w + x0] {
                continue;
            }
            stack.clear();
            component.clear();
            stack.push((x0, y0));
            visited[y0 * w + x0] = true;
            while let Some((x, y)) = stack.pop() {
                component.push((x, y));
                let neighbors = [
                    (x.wrapping_sub(1), y),
                    (x + 1, y),
                    (x, y.wrapping_sub(1)),
                    (x, y + 1),
                ];
                for (nx, ny) in neighbors {
                    if nx < w && ny < h && mask.get(nx, ny) == 1 && !visited[ny * w + nx] {
                        visited[ny * w + nx] = true;
                        stack.push((nx, ny));
                    }
                }
            }
            if component.len() < min_px {
                for &(x, y) in &component {
                    mask.set(x, y, 0);
                }
            }
        }
    }
}

/// One grid tile: identifier and top-left pixel position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tile {
    pub tile_id: String,
    pub x_px: usize,
    pub y_px: usize,
}

/// Non-overlapping fixed-size tile grid over the mask frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TileGrid {
    pub tile_size_px: usize,
    pub mpp: f64,
    pub tiles: Vec<Tile>,
}

/// Grid-aligned tiles (row-major) whose tissue fraction is at least
/// `min_tissue_frac`. Coordinates are in the mask's pixel frame.
pub fn tessellate(
    mask: &BinMask,
    tile_size_px: usize,
    min_tissue_frac: f64,
    mpp: f64,
) -> Result<TileGrid, PreprocessError> {
    if tile_size_px == 0 {
        return Err(PreprocessError::ZeroTileSize);
    }
    if !(0.0..=1.0).contains(&min_tissue_frac) {
        return Err(PreprocessError::BadTissueFrac {
            value_times_1000: (min_tissue_frac * 1000.0) as i64,
        });
    }
    let cols = mask.width() / tile_size_px;
    let rows = mask.height() / tile_size_px;
    let mut tiles = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            let x = col * tile_size_px;
            let y = row * tile_size_px;
            let frac = mask.mean_over(x, y, tile_size_px, tile_size_px);
            if frac >= min_tissue_frac {
                tiles.push(Tile {
                    tile_id: format!("tile_r{row:04}_c{col:04}"),
                    x_px: x,
                    y_px: y,
                });
            }
        }
    }
    Ok(TileGrid { tile_size_px, mpp, tiles })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(width: usize, height: usize, rgb: (u8, u8, u8)) -> RgbRaster {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.push(rgb.0);
            data.push(rgb.1);
            data.push(rgb.2);
        }
        RgbRaster::new(width, height, data).unwrap()
    }

    #[test]
    fn pure_white_image_gives_empty_mask_with_warning() {
        let img = solid(64, 64, (255, 255, 255));
        let out = tissue_mask(&img, &TissueMaskConfig::default());
        assert!(out.degenerate);
        assert_eq!(out.mask.count_ones(), 0);
    }

    #[test]
    fn half_white_half_pink_masks_exactly_the_pink_half() {
        let mut data = Vec::new();
        for y in 0..64 {
            for _x in 0..64 {
                if y < 32 {
                    data.extend_from_slice(&[255, 255, 255]);
                } else {
                    data.extend_from_slice(&[230, 80, 160]); // saturated pink
                }
            }
        }
        let img = RgbRaster::new(64, 64, data).unwrap();
        let out = tissue_mask(&img, &TissueMaskConfig::default());
        assert!(!out.degenerate);
        assert_eq!(out.mask.count_ones(), 64 * 32);
        assert_eq!(out.mask.mean_over(0, 32, 64, 32), 1.0);
        assert_eq!(out.mask.mean_over(0, 0, 64, 32), 0.0);
    }

    /// H&E-like blob: filled ellipse in pink over white with mild noise.
    fn blob_image(w: usize, h: usize, seed: u64) -> (RgbRaster, usize) {
        let mut generator = crate::rng::rng_from_seed(seed);
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (ax, ay) = (w as f64 * 0.3, h as f64 * 0.22);
        let mut data = Vec::with_capacity(w * h * 3);
        let mut blob_px = 0usize;
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 - cx) / ax;
                let dy = (y as f64 - cy) / ay;
                if dx * dx + dy * dy <= 1.0 {
                    blob_px += 1;
                    let jitter = (crate::rng::uniform_usize(&mut generator, 30)) as u8;
                    data.extend_from_slice(&[200 + jitter / 2, 90 + jitter, 150 + jitter / 3]);
                } else {
                    let glare = 250 + (crate::rng::uniform_usize(&mut generator, 6)) as u8 / 2;
                    data.extend_from_slice(&[glare, glare, glare]);
                }
            }
        }
        (RgbRaster::new(w, h, data).unwrap(), blob_px)
    }

    #[test]
    fn blob_area_recovered_within_ten_percent() {
        let (img, blob_px) = blob_image(160, 120, 5);
        let out = tissue_mask(&img, &TissueMaskConfig::default());
        let got = out.mask.count_ones() as f64;
        let want = blob_px as f64;
        assert!(
            (got - want).abs() <= 0.1 * want,
            "mask area {got} vs blob area {want}"
        );
    }

    #[test]
    fn small_specks_are_removed() {
        let mut data = Vec::new();
        for y in 0..40 {
            for x in 0..40 {
                // A 2x2 speck plus a 10x10 block of pink.
                let in_speck = x < 2 && y < 2;
                let in_block = (20..30).contains(&x) && (20..30).contains(&y);
                if in_speck || in_block {
                    data.extend_from_slice(&[230, 80, 160]);
                } else {
                    data.extend_from_slice(&[255, 255, 255]);
                }
            }
        }
        let img = RgbRaster::new(40, 40, data).unwrap();
        let out = tissue_mask(&img, &TissueMaskConfig { min_component_px: 16 });
        assert_eq!(out.mask.count_ones(), 100, "speck removed, block kept");
        assert_eq!(out.mask.get(0, 0), 0);
        assert_eq!(out.mask.get(25, 25), 1);
    }

    #[test]
    fn downsample_averages_blocks() {
        let img = solid(8, 8, (100, 200, 40));
        let down = img.downsample(4);
        assert_eq!((down.width(), down.height()), (2, 2));
        assert_eq!(down.pixel(0, 0), (100, 200, 40));
    }

    fn full_mask(w: usize, h: usize) -> BinMask {
        let mut m = BinMask::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                m.set(x, y, 1);
            }
        }
        m
    }

    #[test]
    fn tessellate_full_mask_yields_grid_product() {
        let mask = full_mask(448, 448);
        let grid = tessellate(&mask, 224, 0.5, 0.5).unwrap();
        assert_eq!(grid.tiles.len(), 4);
        assert_eq!(grid.tiles[0].tile_id, "tile_r0000_c0000");
        assert_eq!(grid.tiles[3], Tile {
            tile_id: "tile_r0001_c0001".into(),
            x_px: 224,
            y_px: 224
        });
    }

    #[test]
    fn tessellate_empty_mask_yields_nothing() {
        let mask = BinMask::zeros(448, 448);
        let grid = tessellate(&mask, 224, 0.5, 0.5).unwrap();
        assert!(grid.tiles.is_empty());
    }

    #[test]
    fn tessellate_respects_default_constants() {
        assert_eq!(DEFAULT_TILE_SIZE, 224);
        assert_eq!(DEFAULT_MIN_TISSUE_FRAC, 0.5);
    }

    #[test]
    fn tessellate_is_monotone_in_min_fraction() {
        let mut generator = crate::rng::rng_from_seed(9);
        let mut mask = BinMask::zeros(100, 80);
        for y in 0..80 {
            for x in 0..100 {
                if crate::rng::uniform_usize(&mut generator, 2) == 1 {
                    mask.set(x, y, 1);
                }
            }
        }
        let mut last = usize::MAX;
        for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let grid = tessellate(&mask, 20, frac, 0.5).unwrap();
            assert!(grid.tiles.len() <= last, "raising the threshold must not add tiles");
            assert!(grid.tiles.len() <= (100 / 20) * (80 / 20));
            last = grid.tiles.len();
        }
    }

    #[test]
    fn tiles_fit_in_bounds_and_do_not_overlap() {
        let mask = full_mask(450, 230);
        let grid = tessellate(&mask, 100, 0.0, 0.5).unwrap();
        assert_eq!(grid.tiles.len(), 4 * 2);
        for t in &grid.tiles {
            assert!(t.x_px + 100 <= 450 && t.y_px + 100 <= 230);
        }
        for a in &grid.tiles {
            for b in &grid.tiles {
                if a.tile_id == b.tile_id {
                    continue;
                }
                let apart = a.x_px.abs_diff(b.x_px) >= 100 || a.y_px.abs_diff(b.y_px) >= 100;
                assert!(apart, "tiles {a:?} and {b:?} overlap");
            }
        }
    }
}
