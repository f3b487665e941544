use serde::{Deserialize, Serialize};

use crate::error::{dimension, Result};

/// H×W crack mask with entries exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return dimension(format!("{height}×{width} mask needs {} values, got {}", height * width, data.len()));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return dimension(format!("mask entries must be 0 or 1, found {v}"));
        }
        Ok(Self { height, width, data })
    }

    /// Row-major predicate evaluation.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    /// `false` outside the mask.
    pub fn get_signed(&self, y: isize, x: isize) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width && self.get(y as usize, x as usize)
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = u8::from(value);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return dimension(format!("crop {height}×{width} at ({y0},{x0}) exceeds {}×{}", self.height, self.width));
        }
        Ok(Self::from_fn(height, width, |y, x| self.get(y0 + y, x0 + x)))
    }

    pub fn check_same_size(&self, other: &BinaryMask) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return dimension(format!(
                "mask sizes differ: {}×{} vs {}×{}",
                self.height, self.width, other.height, other.width
            ));
        }
        Ok(())
    }
}
