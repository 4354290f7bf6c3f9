//! Linear-RGB float image buffer.

use crate::err::{Error, Result};

/// Row-major interleaved RGB, values in [0, 1] for rendered output.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Image::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Mean squared error over all channels; fixed summation order.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.same_dims(other)?;
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(&other.data) {
            let d = a - b;
            acc += d * d;
        }
        Ok(acc / self.data.len() as f64)
    }

    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Elementwise |a - b|.
    pub fn abs_diff(&self, other: &Image) -> Result<Image> {
        self.same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Ok(Image { width: self.width, height: self.height, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Accumulate `other * scale` into self; fixed order.
    pub fn accumulate(&mut self, other: &Image, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * scale;
        }
    }

    /// Rec. 709 luminance.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|px| 0.2126 * px[0] + 0.7152 * px[1] + 0.0722 * px[2])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_uniform_difference() {
        let a = Image::filled(4, 4, [0.0, 0.0, 0.0]);
        let b = Image::filled(4, 4, [0.5, 0.5, 0.5]);
        assert!((a.mse(&b).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Image::new(4, 4);
        let b = Image::new(4, 5);
        assert!(a.mse(&b).is_err());
    }
}
