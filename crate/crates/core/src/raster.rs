//! In-memory RGB images and binary foreground masks.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage<T> {
    width: usize,
    height: usize,
    pixels: Vec<[T; 3]>,
}

impl<T: Scalar> RgbImage<T> {
    pub fn filled(width: usize, height: usize, color: [T; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    /// Pixels in row-major order; returns `None` on a length mismatch.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[T; 3]>) -> Option<Self> {
        (pixels.len() == width * height).then_some(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[T; 3]] {
        &self.pixels
    }

    /// Color at column `u`, row `v`.
    pub fn get(&self, u: usize, v: usize) -> [T; 3] {
        self.pixels[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, c: [T; 3]) {
        self.pixels[v * self.width + u] = c;
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Option<Self> {
        (data.len() == width * height).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}
