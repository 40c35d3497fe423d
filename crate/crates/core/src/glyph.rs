//! Grayscale glyph rasters and the A–Z character set.

use crate::error::{Error, Result};
use std::path::Path;

/// The 26 character classes, in class-index order.
pub const CHARSET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
pub const NUM_CHARS: usize = 26;

/// Square sides allowed by the progressive ladder.
pub const RESOLUTIONS: [usize; 5] = [4, 8, 16, 32, 64];

pub fn char_index(c: char) -> Result<usize> {
    if c.is_ascii_uppercase() {
        Ok((c as u8 - b'A') as usize)
    } else {
        Err(Error::InvalidChar(c))
    }
}

pub fn char_at(index: usize) -> char {
    assert!(index < NUM_CHARS);
    (b'A' + index as u8) as char
}

/// Parses a specimen string into class indices, rejecting anything outside A–Z.
pub fn parse_chars(chars: &str) -> Result<Vec<usize>> {
    if chars.is_empty() {
        return Err(Error::invalid("empty character string"));
    }
    chars.chars().map(char_index).collect()
}

/// Square grayscale image, 0 = background, 1 = ink.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphImage {
    side: usize,
    pixels: Vec<f32>,
}

impl GlyphImage {
    pub fn new(side: usize, pixels: Vec<f32>) -> Result<Self> {
        if !RESOLUTIONS.contains(&side) {
            return Err(Error::Shape(format!("glyph side {side} is not in {RESOLUTIONS:?}")));
        }
        if pixels.len() != side * side {
            return Err(Error::Shape(format!(
                "glyph of side {side} needs {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { side, pixels })
    }

    /// Builds from `f64` values, clamping into `[0, 1]`.
    pub fn from_f64(side: usize, values: &[f64]) -> Result<Self> {
        Self::new(side, values.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect())
    }

    pub fn blank(side: usize) -> Result<Self> {
        Self::new(side, vec![0.0; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.side + x]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| v as f64).collect()
    }

    /// Area-mean downsampling to a smaller ladder side.
    pub fn downsample(&self, side: usize) -> Result<GlyphImage> {
        if side == self.side {
            return Ok(self.clone());
        }
        if side > self.side || self.side % side != 0 {
            return Err(Error::Shape(format!("cannot downsample {} to {side}", self.side)));
        }
        let f = self.side / side;
        let norm = 1.0 / (f * f) as f32;
        let mut out = vec![0.0f32; side * side];
        for y in 0..self.side {
            for x in 0..self.side {
                out[(y / f) * side + x / f] += self.pixels[y * self.side + x];
            }
        }
        for v in &mut out {
            *v = (*v * norm).clamp(0.0, 1.0);
        }
        GlyphImage::new(side, out)
    }

    /// Nearest-neighbour upsampling to a larger ladder side.
    pub fn upsample(&self, side: usize) -> Result<GlyphImage> {
        if side == self.side {
            return Ok(self.clone());
        }
        if side < self.side || side % self.side != 0 {
            return Err(Error::Shape(format!("cannot upsample {} to {side}", self.side)));
        }
        let f = side / self.side;
        let mut out = vec![0.0f32; side * side];
        for y in 0..side {
            for x in 0..side {
                out[y * side + x] = self.pixels[(y / f) * self.side + x / f];
            }
        }
        GlyphImage::new(side, out)
    }

    /// Resize to any ladder side, down by area mean or up by replication.
    pub fn resize(&self, side: usize) -> Result<GlyphImage> {
        if side <= self.side {
            self.downsample(side)
        } else {
            self.upsample(side)
        }
    }

    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_gray8(side: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(side, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Lossless 8-bit PNG; ink is written dark on a white background.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.to_gray8().into_iter().map(|b| 255 - b).collect();
        save_gray_png(path, self.side as u32, self.side as u32, &bytes)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.to_gray8().into_iter().map(|b| 255 - b).collect();
        encode_gray_png(self.side as u32, self.side as u32, &bytes)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        if w != h {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("glyph must be square, got {w}x{h}"),
            });
        }
        let bytes: Vec<u8> = gray.into_raw().into_iter().map(|b| 255 - b).collect();
        Self::from_gray8(w as usize, &bytes).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

pub fn save_gray_png(path: &Path, width: u32, height: u32, bytes: &[u8]) -> Result<()> {
    image::save_buffer(path, bytes, width, height, image::ColorType::L8).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn encode_gray_png(width: u32, height: u32, bytes: &[u8]) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(bytes, width, height, image::ExtendedColorType::L8)
        .map_err(|e| Error::Image {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_side_and_range() {
        assert!(GlyphImage::new(5, vec![0.0; 25]).is_err());
        assert!(GlyphImage::new(4, vec![1.5; 16]).is_err());
        assert!(GlyphImage::new(4, vec![0.5; 16]).is_ok());
    }

    #[test]
    fn downsample_is_area_mean() {
        let mut px = vec![0.0; 64];
        px[0] = 1.0;
        px[1] = 1.0;
        let img = GlyphImage::new(8, px).unwrap();
        let small = img.downsample(4).unwrap();
        assert_eq!(small.get(0, 0), 0.5);
        assert_eq!(small.pixels().iter().sum::<f32>(), 0.5);
    }

    #[test]
    fn png_round_trip_is_lossless_at_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<f32> = (0..64).map(|i| (i * 4) as f32 / 255.0).collect();
        let img = GlyphImage::new(8, px).unwrap();
        let path = dir.path().join("g.png");
        img.save_png(&path).unwrap();
        assert_eq!(GlyphImage::load_png(&path).unwrap(), img);
    }

    #[test]
    fn char_parsing() {
        assert_eq!(parse_chars("ABZ").unwrap(), vec![0, 1, 25]);
        assert!(matches!(parse_chars("Ab"), Err(Error::InvalidChar('b'))));
        assert!(parse_chars("").is_err());
    }
}
