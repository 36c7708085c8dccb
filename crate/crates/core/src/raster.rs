//! Interleaved floating-point raster shared by whole images and patches.

use crate::error::{Error, Result};

/// `height x width x channels` samples stored row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {height}x{width}x{channels} raster",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Copy of the `height x width` window whose top-left corner is `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Image> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop {height}x{width}+{y0}+{x0} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let row_len = width * self.channels;
        let mut data = Vec::with_capacity(height * row_len);
        for y in y0..y0 + height {
            let start = self.index(y, x0, 0);
            data.extend_from_slice(&self.data[start..start + row_len]);
        }
        Ok(Image {
            height,
            width,
            channels: self.channels,
            data,
        })
    }

    /// Write `src` into `self` with its top-left corner at `(y0, x0)`.
    pub fn paste(&mut self, src: &Image, y0: usize, x0: usize) -> Result<()> {
        if src.channels != self.channels
            || y0 + src.height > self.height
            || x0 + src.width > self.width
        {
            return Err(Error::ShapeMismatch(format!(
                "cannot paste {}x{}x{} at ({y0},{x0}) into {}x{}x{}",
                src.height, src.width, src.channels, self.height, self.width, self.channels
            )));
        }
        let row_len = src.width * src.channels;
        for y in 0..src.height {
            let dst = self.index(y0 + y, x0, 0);
            let s = src.index(y, 0, 0);
            self.data[dst..dst + row_len].copy_from_slice(&src.data[s..s + row_len]);
        }
        Ok(())
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_paste_are_inverse() {
        let img = Image::from_fn(6, 5, 2, |y, x, c| (y * 100 + x * 10 + c) as f32);
        let win = img.crop(2, 1, 3, 4).unwrap();
        assert_eq!(win.get(0, 0, 1), img.get(2, 1, 1));
        let mut blank = Image::new(6, 5, 2);
        blank.paste(&win, 2, 1).unwrap();
        assert_eq!(blank.get(4, 4, 0), img.get(4, 4, 0));
        assert!(img.crop(4, 0, 3, 1).is_err());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Image::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
    }
}
