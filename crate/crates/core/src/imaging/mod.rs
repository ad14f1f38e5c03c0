//! Classic image operators: grayscale conversion, Otsu thresholding, Gaussian
//! blur, Canny edges, Moore-neighbour contour tracing, and the preprocessing
//! front end shared by the threshold, contour and edge pipelines.
//!
//! All operators are pure functions over 8-bit images and use clamp-to-border
//! sampling wherever a neighbourhood leaves the image.

mod canny;
mod contour;
mod ops;
mod pnm;
mod preprocess;

pub use canny::{canny_edges, CannyParams};
pub use contour::{contour_area, draw_contours, find_contours, Contour};
pub use ops::{gaussian_blur, gaussian_kernel, histogram, otsu_threshold, threshold_binary, to_grayscale};
pub use pnm::{decode_pnm, encode_pnm, read_pnm, write_pnm};
pub use preprocess::{preprocess, Method, PreprocessParams};

use crate::{Error, Result};

/// Interleaved 8-bit image with one (gray) or three (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
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

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Sample of a 1-channel image with coordinates clamped to the border.
    pub(crate) fn clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[(y * self.width + x) * self.channels]
    }
}

/// Single-channel image whose samples are all 0 or 255.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::invalid(format!(
                "binary image {width}x{height} with {} samples",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::invalid(format!("binary image sample {v} is not 0 or 255")));
        }
        Ok(Self { width, height, data })
    }

    /// Builds from a foreground predicate over row-major indices.
    pub(crate) fn from_mask(width: usize, height: usize, mask: impl Fn(usize) -> bool) -> Self {
        let data = (0..width * height).map(|i| if mask(i) { 255 } else { 0 }).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    /// Foreground test that treats everything outside the image as background.
    pub(crate) fn is_set_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.is_set(x as usize, y as usize)
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

impl From<BinaryImage> for Image {
    fn from(b: BinaryImage) -> Self {
        Image {
            width: b.width,
            height: b.height,
            channels: 1,
            data: b.data,
        }
    }
}
