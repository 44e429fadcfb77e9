//! Single-channel images with strictly positive samples.

use crate::error::{Error, Result};

/// A single-channel amplitude or intensity image.
///
/// Every sample is finite and strictly positive so that the log transform is
/// defined everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("raster dims must be >= 1, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{} samples for a {height}x{width} raster",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("raster sample {i} is not finite")));
        }
        if let Some(i) = data.iter().position(|&v| v <= 0.0) {
            return Err(Error::domain(format!(
                "raster sample {i} = {} is not strictly positive",
                data[i]
            )));
        }
        Ok(Raster { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Result<Self> {
        let data = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        Self::new(height, width, data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Copies the `h x w` window at (`row`, `col`).
    pub fn window(&self, row: usize, col: usize, h: usize, w: usize) -> Result<Raster> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::shape(format!(
                "window {h}x{w} at ({row}, {col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w);
        for r in row..row + h {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + w]);
        }
        Ok(Raster { height: h, width: w, data })
    }

    pub(crate) fn same_dims(&self, other: &Raster, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}
