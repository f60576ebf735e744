//! In-memory raster images and 8-bit PNG tile storage.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Edge length of an imagery tile in pixels.
pub const TILE_PX: usize = 256;
pub const CHANNELS: usize = 3;

/// 8-bit RGB tile pixels, row-major `(y, x, channel)`. Real-valued access
/// dequantises by `/255` so every value lies in `[0, 1]`.
#[derive(Clone, PartialEq, Eq)]
pub struct TilePixels {
    data: Vec<u8>,
}

impl std::fmt::Debug for TilePixels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TilePixels({}x{}x{})", TILE_PX, TILE_PX, CHANNELS)
    }
}

impl TilePixels {
    pub fn from_raw(data: Vec<u8>) -> Result<Self> {
        if data.len() != TILE_PX * TILE_PX * CHANNELS {
            return Err(Error::Domain(format!(
                "tile buffer has {} bytes, expected {}",
                data.len(),
                TILE_PX * TILE_PX * CHANNELS
            )));
        }
        Ok(TilePixels { data })
    }

    /// Quantises a real-valued image (must be 256x256x3, values clamped to
    /// `[0, 1]`).
    pub fn quantize(img: &Image) -> Result<Self> {
        if img.height() != TILE_PX || img.width() != TILE_PX {
            return Err(Error::Domain(format!(
                "tile image must be {TILE_PX}x{TILE_PX}, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        let data = img
            .as_slice()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Ok(TilePixels { data })
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        f64::from(self.data[(y * TILE_PX + x) * CHANNELS + c]) / 255.0
    }

    pub fn to_image(&self) -> Image {
        Image {
            height: TILE_PX,
            width: TILE_PX,
            data: self.data.iter().map(|&v| f64::from(v) / 255.0).collect(),
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_rgb8_png(path, TILE_PX, TILE_PX, &self.data)
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let info = reader.info();
        if info.width as usize != TILE_PX || info.height as usize != TILE_PX {
            return Err(Error::Format(format!(
                "{}: expected {TILE_PX}x{TILE_PX}, got {}x{}",
                path.display(),
                info.width,
                info.height
            )));
        }
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Format(format!(
                "{}: expected 8-bit RGB",
                path.display()
            )));
        }
        let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(TILE_PX * TILE_PX * 3)];
        let frame = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        buf.truncate(frame.buffer_size());
        TilePixels::from_raw(buf)
    }
}

pub(crate) fn write_rgb8_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    writer
        .finish()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Real-valued RGB image of arbitrary size, row-major `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::Domain(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                height * width * CHANNELS
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// Writes the image as 8-bit PNG (values clamped to `[0, 1]`).
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        write_rgb8_png(path, self.width, self.height, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let raw: Vec<u8> = (0..TILE_PX * TILE_PX * CHANNELS)
            .map(|i| (i * 31 % 251) as u8)
            .collect();
        let px = TilePixels::from_raw(raw).unwrap();
        let path = dir.path().join("t.png");
        px.write_png(&path).unwrap();
        assert_eq!(TilePixels::read_png(&path).unwrap(), px);
    }

    #[test]
    fn dequantised_values_are_unit_range() {
        let px = TilePixels::from_raw(vec![255; TILE_PX * TILE_PX * CHANNELS]).unwrap();
        let img = px.to_image();
        assert!(img.is_unit_range());
        assert_eq!(img.get(10, 20, 2), 1.0);
        assert_eq!(TilePixels::quantize(&img).unwrap(), px);
    }

    #[test]
    fn wrong_shape_rejected() {
        assert!(TilePixels::from_raw(vec![0; 10]).is_err());
        assert!(TilePixels::quantize(&Image::zeros(8, 8)).is_err());
    }
}
