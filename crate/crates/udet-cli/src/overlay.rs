//! Overlay rendering: grayscale input with ground-truth and prediction
//! contours at distinct gray levels, written as a binary portable graymap.

use std::path::Path;

use udet_core::metrics::BinaryMask;
use udet_core::tensor::Tensor4;
use udet_core::{Result, UdetError};

const BASE_MAX: u8 = 180;
const GT_LEVEL: u8 = 215;
const PRED_LEVEL: u8 = 255;

/// Mask pixels bordering the background (4-neighborhood) or the image edge.
fn contour(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) != 1 {
                continue;
            }
            let on_edge = y == 0 || x == 0 || y == h - 1 || x == w - 1;
            let has_bg = on_edge
                || mask.get(y - 1, x) == 0
                || mask.get(y + 1, x) == 0
                || mask.get(y, x - 1) == 0
                || mask.get(y, x + 1) == 0;
            if has_bg {
                out.push((y, x));
            }
        }
    }
    out
}

pub fn write_overlay_pgm(
    path: &Path,
    image: &Tensor4<f32>,
    gt: Option<&BinaryMask>,
    pred: &BinaryMask,
) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || s.c != 1 {
        return Err(UdetError::shape("overlay", format!("expected (1,1,h,w), got {s}")));
    }
    if (s.h, s.w) != (pred.height(), pred.width()) {
        return Err(UdetError::shape("overlay", "prediction size mismatch"));
    }
    let mut pixels: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * BASE_MAX as f32).round() as u8)
        .collect();
    if let Some(gt) = gt {
        if (s.h, s.w) != (gt.height(), gt.width()) {
            return Err(UdetError::shape("overlay", "ground-truth size mismatch"));
        }
        for (y, x) in contour(gt) {
            pixels[y * s.w + x] = GT_LEVEL;
        }
    }
    for (y, x) in contour(pred) {
        pixels[y * s.w + x] = PRED_LEVEL;
    }

    let mut bytes = format!("P5\n{} {}\n255\n", s.w, s.h).into_bytes();
    bytes.extend_from_slice(&pixels);
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use udet_core::Shape4;

    #[test]
    fn contour_of_a_square_is_its_border() {
        let mut m = BinaryMask::zeros(6, 6);
        for y in 1..5 {
            for x in 1..5 {
                m.set(y, x, 1);
            }
        }
        let c = contour(&m);
        assert_eq!(c.len(), 12); // 4x4 block: 16 - 4 interior
        assert!(!c.contains(&(2, 2)));
    }

    #[test]
    fn overlay_layers_use_distinct_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.pgm");
        let img = Tensor4::full(Shape4::new(1, 1, 4, 4), 0.5f32);
        let mut pred = BinaryMask::zeros(4, 4);
        pred.set(1, 1, 1);
        let mut gt = BinaryMask::zeros(4, 4);
        gt.set(2, 2, 1);
        write_overlay_pgm(&path, &img, Some(&gt), &pred).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_end = bytes.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        let px = &bytes[header_end..];
        assert_eq!(px.len(), 16);
        assert_eq!(px[1 * 4 + 1], PRED_LEVEL);
        assert_eq!(px[2 * 4 + 2], GT_LEVEL);
        assert_eq!(px[0], (0.5f32 * BASE_MAX as f32).round() as u8);
    }
}
