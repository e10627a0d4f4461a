use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid extent along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// Linear index, x fastest.
    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / (self.nx * self.ny);
        (x, y, z)
    }
}

impl core::fmt::Display for Dims {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Dense scalar grid with isotropic voxel spacing. Images, masks and
/// relevance maps all use this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    dims: Dims,
    spacing_mm: f64,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing_mm: f64, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpec(format!("volume dims {dims} must be positive")));
        }
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!("{} voxels for dims {dims}", data.len())));
        }
        if !(spacing_mm > 0.0 && spacing_mm.is_finite()) {
            return Err(Error::InvalidSpec(format!("spacing {spacing_mm} must be positive")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume voxels"));
        }
        Ok(Self { dims, spacing_mm, data })
    }

    pub fn zeros(dims: Dims, spacing_mm: f64) -> Self {
        Self::filled(dims, spacing_mm, 0.0)
    }

    pub fn filled(dims: Dims, spacing_mm: f64, value: f32) -> Self {
        assert!(!dims.is_empty() && spacing_mm > 0.0);
        Self { dims, spacing_mm, data: vec![value; dims.len()] }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable voxel access. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f32) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    /// Same grid, values mapped voxelwise.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { dims: self.dims, spacing_mm: self.spacing_mm, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn ensure_same_dims(&self, other: &Volume) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!("{} vs {}", self.dims, other.dims)));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    /// True when every voxel is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let d = Dims::new(3, 4, 5);
        for i in 0..d.len() {
            let (x, y, z) = d.coords(i);
            assert_eq!(d.index(x, y, z), i);
        }
        assert_eq!(d.index(1, 0, 0), 1);
        assert_eq!(d.index(0, 1, 0), 3);
        assert_eq!(d.index(0, 0, 1), 12);
    }

    #[test]
    fn rejects_bad_volumes() {
        assert!(Volume::new(Dims::cube(2), 1.0, vec![0.0; 7]).is_err());
        assert!(Volume::new(Dims::cube(2), 0.0, vec![0.0; 8]).is_err());
        assert!(Volume::new(Dims::cube(2), 1.0, vec![f32::NAN; 8]).is_err());
        assert!(Volume::new(Dims::new(0, 2, 2), 1.0, vec![]).is_err());
        assert!(Volume::new(Dims::cube(2), 1.0, vec![0.5; 8]).is_ok());
    }
}
