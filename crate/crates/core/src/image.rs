//! Planar `[channels, height, width]` frames with values nominally in `[0, 1]`,
//! plus 8-bit PNG input/output.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{}x{}x{} image needs {} values, got {}",
                channels,
                height,
                width,
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    /// Build from a function of `(channel, y, x)`.
    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!("image {:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {}x{}+{}+{} outside {}x{}",
                height, width, top, left, self.height, self.width
            )));
        }
        Ok(Image::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    pub fn clamp01(&self) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Round every value to the nearest multiple of 1/255.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f64::from(to_u8(*v)) / 255.0);
        out
    }

    pub fn to_u8_interleaved(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    out.push(to_u8(self.get(c, y, x)));
                }
            }
        }
        out
    }

    pub fn from_u8_interleaved(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
        if bytes.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "expected {} bytes, got {}",
                channels * height * width,
                bytes.len()
            )));
        }
        Ok(Image::from_fn(channels, height, width, |c, y, x| {
            f64::from(bytes[(y * width + x) * channels + c]) / 255.0
        }))
    }

    /// Write as 8-bit gray (1 channel) or RGB (3 channels).
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            c => {
                return Err(Error::Shape(format!("cannot write a {c}-channel PNG")));
            }
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| Error::Png {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut writer = encoder.write_header().map_err(png_err)?;
        writer.write_image_data(&self.to_u8_interleaved()).map_err(png_err)?;
        writer.finish().map_err(png_err)
    }

    /// Read an 8-bit gray, gray+alpha, RGB or RGBA PNG. Alpha is dropped.
    pub fn read_png(path: &Path) -> Result<Image> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let png_err = |reason: String| Error::Png {
            path: path.to_path_buf(),
            reason,
        };
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| png_err(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| png_err("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| png_err(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        match info.color_type {
            png::ColorType::Grayscale => Image::from_u8_interleaved(1, h, w, bytes),
            png::ColorType::Rgb => Image::from_u8_interleaved(3, h, w, bytes),
            png::ColorType::GrayscaleAlpha | png::ColorType::Rgba => {
                let src = if info.color_type == png::ColorType::Rgba { 4 } else { 2 };
                let keep = src - 1;
                let stripped: Vec<u8> = bytes.chunks(src).flat_map(|px| px[..keep].to_vec()).collect();
                Image::from_u8_interleaved(keep, h, w, &stripped)
            }
            other => Err(png_err(format!("unsupported color type {other:?}"))),
        }
    }
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
