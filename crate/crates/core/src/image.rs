//! Interleaved `H×W×C` float images with intensities in `[0, 1]`, plus PNG I/O.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image. Values are expected to lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "buffer of {} values does not fit {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = self.index(row, col, 0);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.dims(), other.dims())))
        }
    }

    /// Copy of the rectangle `[row, row+height) × [col, col+width)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> ImageTensor {
        assert!(row + height <= self.height && col + width <= self.width, "crop out of bounds");
        let ch = self.channels;
        let mut data = Vec::with_capacity(height * width * ch);
        for r in row..row + height {
            let start = self.index(r, col, 0);
            data.extend_from_slice(&self.data[start..start + width * ch]);
        }
        ImageTensor { height, width, channels: ch, data }
    }

    /// Replicate a single-channel image to `channels`; a no-op if the count already matches.
    pub fn expand_channels(&self, channels: usize) -> Result<ImageTensor> {
        if self.channels == channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(Error::Shape(format!(
                "cannot expand {} channels to {channels}",
                self.channels
            )));
        }
        Ok(ImageTensor::from_fn(self.height, self.width, channels, |r, c, _| self.get(r, c, 0)))
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Sum of absolute element differences, accumulated in f64.
    pub fn l1_distance(&self, other: &ImageTensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum()
    }

    /// Resize with a triangle filter. Identity when the size already matches.
    pub fn resize(&self, height: usize, width: usize) -> ImageTensor {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let rgb = self.expand_channels(3).expect("resize supports 1 or 3 channels");
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(rgb.width as u32, rgb.height as u32, rgb.data).unwrap();
        let out = image::imageops::resize(
            &buf,
            width as u32,
            height as u32,
            image::imageops::FilterType::Triangle,
        );
        let mut data = out.into_raw();
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        let resized = ImageTensor { height, width, channels: 3, data };
        if self.channels == 1 {
            ImageTensor::from_fn(height, width, 1, |r, c, _| resized.get(r, c, 0))
        } else {
            resized
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let rgb = self.expand_channels(3).expect("rgb export needs 1 or 3 channels");
        let bytes = rgb.data.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, bytes).unwrap()
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decode an image file to 3-channel intensities in `[0, 1]`. Grayscale sources are replicated.
pub fn load_rgb(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(from_dynamic(img))
}

pub fn from_dynamic(img: DynamicImage) -> ImageTensor {
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    ImageTensor { height: h as usize, width: w as usize, channels: 3, data: rgb.into_raw() }
}

/// Decode a ground-truth mask; any nonzero pixel is anomalous.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })?;
    let gray = img.to_luma16();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| v != 0).collect();
    Ok(BinaryMask { height: h as usize, width: w as usize, data })
}

pub fn save_png(img: &ImageTensor, path: &Path) -> Result<()> {
    let out: DynamicImage = if img.channels == 1 {
        let bytes = img.data.iter().map(|&v| quantize(v)).collect();
        DynamicImage::ImageLuma8(GrayImage::from_raw(img.width as u32, img.height as u32, bytes).unwrap())
    } else {
        DynamicImage::ImageRgb8(img.to_rgb8())
    };
    out.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
}

/// Single-channel binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!("mask buffer {} != {height}x{width}", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &BinaryMask) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .unwrap()
            .save(path)
            .map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> BinaryMask {
        if (height, width) == self.dims() {
            return self.clone();
        }
        let mut out = BinaryMask::new(height, width);
        for r in 0..height {
            let sr = r * self.height / height;
            for c in 0..width {
                let sc = c * self.width / width;
                out.set(r, c, self.get(sr, sc));
            }
        }
        out
    }
}
