//! 8-bit grayscale/RGB image buffers with PGM/PPM input and output.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{PoseError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(PoseError::InvalidArgument(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(PoseError::LengthMismatch {
                expected: width * height * channels,
                actual: data.len(),
            });
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, value: &[u8]) {
        let i = (y * self.width + x) * self.channels;
        if value.len() == self.channels {
            self.data[i..i + self.channels].copy_from_slice(value);
        } else if self.channels == 1 {
            self.data[i] = luma(value);
        } else {
            self.data[i..i + 3].fill(value[0]);
        }
    }

    /// Intensity plane as f64, luma-weighted for RGB input.
    pub fn to_gray_f64(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|c| 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64)
                .collect(),
        }
    }

    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn rotate180(&self) -> ImageBuffer {
        let mut data = Vec::with_capacity(self.data.len());
        for px in self.data.chunks_exact(self.channels).rev() {
            data.extend_from_slice(px);
        }
        ImageBuffer { data, ..*self }
    }

    /// Bicubic (Catmull-Rom) resize.
    pub fn resize(&self, width: usize, height: usize) -> ImageBuffer {
        let filter = image::imageops::FilterType::CatmullRom;
        let (w, h) = (width as u32, height as u32);
        let data = match self.to_dynamic() {
            DynamicImage::ImageLuma8(img) => image::imageops::resize(&img, w, h, filter).into_raw(),
            DynamicImage::ImageRgb8(img) => image::imageops::resize(&img, w, h, filter).into_raw(),
            _ => unreachable!("only luma8/rgb8 are constructed"),
        };
        ImageBuffer {
            width,
            height,
            channels: self.channels,
            data,
        }
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, self.data.clone()).expect("sized"))
        } else {
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, self.data.clone()).expect("sized"))
        }
    }

    /// Reads a binary or ASCII PGM/PPM file.
    pub fn read_pnm(path: &Path) -> Result<ImageBuffer> {
        if !path.exists() {
            return Err(PoseError::MissingImage(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| {
            PoseError::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            }
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let out = match img {
            DynamicImage::ImageLuma8(g) => ImageBuffer::new(w, h, 1, g.into_raw())?,
            DynamicImage::ImageRgb8(c) => ImageBuffer::new(w, h, 3, c.into_raw())?,
            other if other.color().has_color() => {
                ImageBuffer::new(w, h, 3, other.to_rgb8().into_raw())?
            }
            other => ImageBuffer::new(w, h, 1, other.to_luma8().into_raw())?,
        };
        Ok(out)
    }

    /// Binary PGM (P5) for grayscale, PPM (P6) for RGB.
    pub fn encode_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.encode_pnm())
    }
}

fn luma(rgb: &[u8]) -> u8 {
    (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64).round() as u8
}
