//! Shallow feature maps to compact per-sample representations.
//!
//! A feature map is spatially average-pooled to one value per channel, then the
//! channel axis is reduced by averaging non-overlapping contiguous groups.

use serde::{Deserialize, Serialize};

use crate::error::{PfbError, Result};

/// An `H x W x C` feature map stored row-major in `(h, w, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(PfbError::DimensionMismatch(format!(
                "feature map dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(PfbError::DimensionMismatch(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PfbError::DimensionMismatch("feature map contains non-finite values".into()));
        }
        Ok(Self { height, width, channels, values })
    }

    /// Wraps a flat feature vector as a `1 x 1 x C` map.
    pub fn from_vector(values: Vec<f64>) -> Result<Self> {
        let channels = values.len();
        Self::new(1, 1, channels, values)
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Pooled, channel-downsampled feature vector of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation(Vec<f64>);

impl Representation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(PfbError::DimensionMismatch("representation must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PfbError::DimensionMismatch("representation contains non-finite values".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Representation {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Mean of every channel over all spatial positions.
pub fn spatial_pool(map: &FeatureMap) -> Vec<f64> {
    let c = map.channels;
    let mut out = vec![0.0; c];
    for pixel in map.values.chunks_exact(c) {
        for (acc, v) in out.iter_mut().zip(pixel) {
            *acc += v;
        }
    }
    let n = (map.height * map.width) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Averages contiguous groups of `v.len() / target_dim` entries.
pub fn channel_downsample(v: &[f64], target_dim: usize) -> Result<Representation> {
    if target_dim == 0 || target_dim > v.len() || !v.len().is_multiple_of(target_dim) {
        return Err(PfbError::DimensionMismatch(format!(
            "target dim {target_dim} must divide input dim {}",
            v.len()
        )));
    }
    let group = v.len() / target_dim;
    let out = v
        .chunks_exact(group)
        .map(|g| g.iter().sum::<f64>() / group as f64)
        .collect();
    Representation::new(out)
}

/// Pool then downsample.
pub fn represent(map: &FeatureMap, target_dim: usize) -> Result<Representation> {
    channel_downsample(&spatial_pool(map), target_dim)
}
