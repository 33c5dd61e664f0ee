//! Portable graymap (P5) IO for masks and probability grids.
//!
//! Binary masks use maxval 255 (0 background, 255 foreground). Probability
//! grids quantize to 16 bits (maxval 65535, big-endian samples per the PGM
//! spec).

use std::fs;
use std::path::Path;

use imilia_core::episeg::ProbGrid;
use imilia_core::BinMask;

use crate::error::{ImiliaError, Result};

/// Write a binary mask as an 8-bit P5 graymap.
pub fn write_mask(path: &Path, mask: &BinMask) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&b| if b != 0 { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| ImiliaError::io(path, e))
}

/// Read an 8-bit P5 graymap as a binary mask (any nonzero sample is
/// foreground).
pub fn read_mask(path: &Path) -> Result<BinMask> {
    let bytes = fs::read(path).map_err(|e| ImiliaError::io(path, e))?;
    let (width, height, maxval, offset) = parse_header(path, &bytes)?;
    if maxval > 255 {
        return Err(ImiliaError::format(path, "expected an 8-bit mask graymap"));
    }
    let expected = width * height;
    if bytes.len() - offset != expected {
        return Err(ImiliaError::format(
            path,
            format!("payload {} bytes, want {expected}", bytes.len() - offset),
        ));
    }
    BinMask::from_bytes(width, height, bytes[offset..].to_vec())
        .ok_or_else(|| ImiliaError::format(path, "inconsistent mask dims"))
}

/// Write a probability grid as a 16-bit P5 graymap (values scaled by 65535).
pub fn write_prob_grid(path: &Path, grid: &ProbGrid) -> Result<()> {
    let mut out = format!("P5\n{} {}\n65535\n", grid.cols, grid.rows).into_bytes();
    for &v in &grid.values {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| ImiliaError::io(path, e))
}

/// Read a 16-bit P5 graymap back into a probability grid.
pub fn read_prob_grid(path: &Path) -> Result<ProbGrid> {
    let bytes = fs::read(path).map_err(|e| ImiliaError::io(path, e))?;
    let (width, height, maxval, offset) = parse_header(path, &bytes)?;
    if maxval != 65535 {
        return Err(ImiliaError::format(path, "expected a 16-bit probability graymap"));
    }
    let expected = width * height * 2;
    if bytes.len() - offset != expected {
        return Err(ImiliaError::format(
            path,
            format!("payload {} bytes, want {expected}", bytes.len() - offset),
        ));
    }
    let values = bytes[offset..]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    Ok(ProbGrid { rows: height, cols: width, values })
}

/// Parse a P5 header; returns `(width, height, maxval, payload offset)`.
fn parse_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize, u32, usize)> {
    let bad = |msg: &str| ImiliaError::format(path, msg.to_string());
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(bad("not a P5 graymap"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Skip whitespace and comment lines.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?;
        *field = text.parse().map_err(|_| bad("bad header number"))?;
    }
    // Exactly one whitespace byte separates maxval from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing payload separator"));
    }
    pos += 1;
    Ok((fields[0], fields[1], fields[2] as u32, pos))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pgm");
        let mut mask = BinMask::zeros(5, 3);
        mask.set(0, 0, 1);
        mask.set(4, 2, 1);
        write_mask(&p, &mask).unwrap();
        let loaded = read_mask(&p).unwrap();
        assert_eq!(loaded, mask);
    }

    #[test]
    fn prob_grid_roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let grid = ProbGrid {
            rows: 2,
            cols: 3,
            values: vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.123456],
        };
        write_prob_grid(&p, &grid).unwrap();
        let loaded = read_prob_grid(&p).unwrap();
        assert_eq!((loaded.rows, loaded.cols), (2, 3));
        for (a, b) in loaded.values.iter().zip(&grid.values) {
            assert!((a - b).abs() <= 0.5 / 65535.0, "{a} vs {b}");
        }
    }

    #[test]
    fn writes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.pgm");
        let b = dir.path().join("b.pgm");
        let grid = ProbGrid { rows: 1, cols: 4, values: vec![0.1, 0.2, 0.3, 0.4] };
        write_prob_grid(&a, &grid).unwrap();
        write_prob_grid(&b, &grid).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn rejects_non_p5() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        fs::write(&p, b"P2\n1 1\n255\n0").unwrap();
        assert!(read_mask(&p).is_err());
    }
}
