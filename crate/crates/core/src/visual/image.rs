use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// RGB image with channel values in `[0, 1]`, stored row-major as `H × W × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("image must be non-empty, got {width}x{height}")));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Ok(Self { height, width, data })
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("image must be non-empty, got {width}x{height}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "expected {} values for a {width}x{height} RGB image, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn is_square(&self, side: usize) -> bool {
        self.height == side && self.width == side
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_data(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
            w.write_image_data(&self.to_rgb8())
                .map_err(|e| Error::Image(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(|e| Error::Image(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Image("png too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = info.color_type.samples();
        let mut rgb = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            let line = &buf[y * info.line_size..y * info.line_size + w * channels];
            for px in line.chunks(channels) {
                match channels {
                    1 | 2 => rgb.extend_from_slice(&[px[0], px[0], px[0]]),
                    _ => rgb.extend_from_slice(&px[..3]),
                }
            }
        }
        Self::from_rgb8(h, w, &rgb)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes)
    }

    /// Splits into non-overlapping `p × p` patches in raster order; each patch
    /// becomes one row laid out as `(dy, dx, channel)`.
    pub fn patchify(&self, p: usize) -> Result<Mat<f32>> {
        if p == 0 || !self.height.is_multiple_of(p) || !self.width.is_multiple_of(p) {
            return Err(Error::shape(format!(
                "{}x{} image cannot be split into {p}-pixel patches",
                self.width, self.height
            )));
        }
        let (gh, gw) = (self.height / p, self.width / p);
        let mut out = Mat::zeros(gh * gw, p * p * 3);
        for gy in 0..gh {
            for gx in 0..gw {
                let row = out.row_mut(gy * gw + gx);
                for dy in 0..p {
                    let src = ((gy * p + dy) * self.width + gx * p) * 3;
                    row[dy * p * 3..(dy + 1) * p * 3].copy_from_slice(&self.data[src..src + p * 3]);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`patchify`](Self::patchify); values are clamped to `[0, 1]`.
    pub fn from_patches(patches: &Mat<f32>, height: usize, width: usize, p: usize) -> Result<Self> {
        let (gh, gw) = (height / p, width / p);
        if gh * p != height || gw * p != width || patches.rows != gh * gw || patches.cols != p * p * 3 {
            return Err(Error::shape("patch matrix does not match image geometry"));
        }
        let mut data = vec![0.0f32; height * width * 3];
        for gy in 0..gh {
            for gx in 0..gw {
                let row = patches.row(gy * gw + gx);
                for dy in 0..p {
                    let dst = ((gy * p + dy) * width + gx * p) * 3;
                    for (d, &s) in data[dst..dst + p * 3].iter_mut().zip(&row[dy * p * 3..(dy + 1) * p * 3]) {
                        *d = s.clamp(0.0, 1.0);
                    }
                }
            }
        }
        Ok(Self { height, width, data })
    }

    /// Bilinear resampling with half-pixel centers; a same-size resize is exact.
    pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> Result<Self> {
        if new_h == 0 || new_w == 0 {
            return Err(Error::shape("resize target must be non-empty"));
        }
        if new_h == self.height && new_w == self.width {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / new_h as f64;
        let sx = self.width as f64 / new_w as f64;
        let mut data = Vec::with_capacity(new_h * new_w * 3);
        for y in 0..new_h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = (fy - y0 as f64) as f32;
            for x in 0..new_w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = (fx - x0 as f64) as f32;
                let (a, b, c, d) = (self.pixel(y0, x0), self.pixel(y0, x1), self.pixel(y1, x0), self.pixel(y1, x1));
                for ch in 0..3 {
                    let top = a[ch] + (b[ch] - a[ch]) * wx;
                    let bot = c[ch] + (d[ch] - c[ch]) * wx;
                    data.push((top + (bot - top) * wy).clamp(0.0, 1.0));
                }
            }
        }
        Ok(Self {
            height: new_h,
            width: new_w,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(h: usize, w: usize) -> ImageBuffer {
        let data = (0..h * w * 3).map(|i| (i % 251) as f32 / 255.0).collect();
        ImageBuffer::from_data(h, w, data).unwrap()
    }

    #[test]
    fn png_roundtrip_is_exact_for_8bit_values() {
        let img = gradient(5, 7);
        let back = ImageBuffer::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn patchify_roundtrip() {
        let img = gradient(8, 12);
        let p = img.patchify(4).unwrap();
        assert_eq!((p.rows, p.cols), (6, 48));
        assert_eq!(&p.row(1)[..3], &img.pixel(0, 4));
        assert_eq!(ImageBuffer::from_patches(&p, 8, 12, 4).unwrap(), img);
        assert!(img.patchify(5).is_err());
    }

    #[test]
    fn identity_resize_and_constant_resize() {
        let img = gradient(6, 4);
        assert_eq!(img.resize_bilinear(6, 4).unwrap(), img);
        let c = ImageBuffer::filled(3, 5, [0.25, 0.5, 1.0]).unwrap();
        let r = c.resize_bilinear(7, 2).unwrap();
        assert!(r.data.chunks(3).all(|p| p == [0.25, 0.5, 1.0]));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ImageBuffer::filled(0, 3, [0.0; 3]).is_err());
        assert!(ImageBuffer::from_data(1, 1, vec![0.0, 2.0, 0.0]).is_err());
        assert!(ImageBuffer::from_data(1, 2, vec![0.0; 3]).is_err());
    }
}
