//! The two image preprocessing rules: pad for understanding, crop for generation.

use crate::error::{Error, Result};
use crate::visual::ImageBuffer;

/// Gray used to pad the short side of understanding images.
pub const PAD_GRAY: f32 = 127.0 / 255.0;

fn check(raw: &ImageBuffer, side: usize) -> Result<()> {
    if raw.height == 0 || raw.width == 0 || side == 0 {
        return Err(Error::shape("cannot preprocess an empty image"));
    }
    Ok(())
}

/// Long side resized to `side`, aspect kept, short side centered on a gray canvas.
pub fn preprocess_understanding(raw: &ImageBuffer, side: usize) -> Result<ImageBuffer> {
    check(raw, side)?;
    let long = raw.height.max(raw.width);
    let scaled = |v: usize| ((v * side) as f64 / long as f64).round().max(1.0) as usize;
    let (h, w) = (scaled(raw.height).min(side), scaled(raw.width).min(side));
    let resized = raw.resize_bilinear(h, w)?;
    let mut out = ImageBuffer::filled(side, side, [PAD_GRAY; 3])?;
    let (oy, ox) = ((side - h) / 2, (side - w) / 2);
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(y + oy, x + ox, resized.pixel(y, x));
        }
    }
    Ok(out)
}

/// Short side resized to `side`, long side center-cropped to `side`.
pub fn preprocess_generation(raw: &ImageBuffer, side: usize) -> Result<ImageBuffer> {
    check(raw, side)?;
    let short = raw.height.min(raw.width);
    let scaled = |v: usize| ((v * side) as f64 / short as f64).round().max(side as f64) as usize;
    let (h, w) = (scaled(raw.height), scaled(raw.width));
    let resized = raw.resize_bilinear(h, w)?;
    let (oy, ox) = ((h - side) / 2, (w - side) / 2);
    let mut out = ImageBuffer::filled(side, side, [0.0; 3])?;
    for y in 0..side {
        for x in 0..side {
            out.set_pixel(y, x, resized.pixel(y + oy, x + ox));
        }
    }
    Ok(out)
}
