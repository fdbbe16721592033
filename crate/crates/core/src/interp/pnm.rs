//! Binary PGM (P5) and PPM (P6) export of attention masks.

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError};
use crate::tensor::Tensor;

/// Maps `[0, 1]` linearly onto `0..=255`, rounding halves up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// `P5` graymap of an `rows x cols` mask.
pub fn encode_pgm(mask: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(mask.len(), rows * cols);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(mask.iter().map(|&v| quantize(v)));
    out
}

/// 256-entry RGB lookup table indexed by the quantized mask value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Colormap(pub Vec<[u8; 3]>);

impl Colormap {
    /// Viridis, read from the shipped table.
    pub fn viridis() -> Self {
        Self::parse(include_str!("../../data/viridis.txt")).expect("shipped colormap parses")
    }

    /// One `r g b` line per entry; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let bad = |detail: String| FormatError::Malformed { what: "colormap", detail };
        let mut table = Vec::with_capacity(256);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<u8> = line
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(format!("line {}: {e}", n + 1)))?;
            let rgb: [u8; 3] = v.try_into().map_err(|_| bad(format!("line {}: expected three values", n + 1)))?;
            table.push(rgb);
        }
        if table.len() != 256 {
            return Err(bad(format!("{} entries, expected 256", table.len())));
        }
        Ok(Colormap(table))
    }
}

/// `P6` pixmap: the colormapped mask at half opacity over the image's RGB
/// channels. Output has the image's size; each mask cell covers a block of
/// pixels.
pub fn encode_overlay_ppm(mask: &[f64], rows: usize, cols: usize, image: &Tensor, cmap: &Colormap) -> Vec<u8> {
    let s = image.shape();
    assert!(s.len() == 3 && s[0] >= 3, "image must be [channels >= 3, H, W]");
    let (h, w) = (s[1], s[2]);
    assert!(h % rows == 0 && w % cols == 0, "image {h}x{w} is not a multiple of mask {rows}x{cols}");
    let (fy, fx) = (h / rows, w / cols);
    let px = image.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            let color = cmap.0[quantize(mask[(y / fy) * cols + x / fx]) as usize];
            for (ch, &c) in color.iter().enumerate() {
                let base = quantize(px[(ch * h + y) * w + x]) as u16;
                out.push((base + c as u16).div_ceil(2) as u8);
            }
        }
    }
    out
}

/// Writes `mask` as P5, or as a P6 overlay when an image is given.
pub fn dump_mask(mask: &[f64], rows: usize, cols: usize, path: &Path, overlay: Option<(&Tensor, &Colormap)>) -> Result<(), Error> {
    let bytes = match overlay {
        None => encode_pgm(mask, rows, cols),
        Some((image, cmap)) => encode_overlay_ppm(mask, rows, cols, image, cmap),
    };
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))?;
    Ok(())
}
