use crate::error::{Error, Result};
use crate::tensor::Mat;

/// A 2-D grid of feature vectors, before flattening into a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub grid_h: usize,
    pub grid_w: usize,
    pub feat_dim: usize,
    /// `grid_h × grid_w × feat_dim`, row-major.
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(grid_h: usize, grid_w: usize, feat_dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid_h * grid_w * feat_dim {
            return Err(Error::shape(format!(
                "feature grid {grid_h}x{grid_w}x{feat_dim} needs {} values, got {}",
                grid_h * grid_w * feat_dim,
                data.len()
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            feat_dim,
            data,
        })
    }

    pub fn cell(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.grid_w + x) * self.feat_dim;
        &self.data[i..i + self.feat_dim]
    }

    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raster-scan order: one row per cell, left to right then top to bottom.
    pub fn flatten(&self) -> Mat<f32> {
        Mat::from_vec(self.len(), self.feat_dim, self.data.clone())
    }

    pub fn unflatten(features: &Mat<f32>, grid_h: usize, grid_w: usize) -> Result<Self> {
        if features.rows != grid_h * grid_w {
            return Err(Error::shape(format!(
                "{} features cannot fill a {grid_h}x{grid_w} grid",
                features.rows
            )));
        }
        Self::new(grid_h, grid_w, features.cols, features.data.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flatten_is_row_major() {
        // [[a, b], [c, d]] with 1-d features
        let g = FeatureGrid::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g.flatten().data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(g.cell(1, 0), &[3.0]);
        let one = FeatureGrid::new(1, 1, 3, vec![0.5; 3]).unwrap();
        assert_eq!(one.flatten().rows, 1);
    }

    proptest! {
        #[test]
        fn unflatten_inverts_flatten(h in 1usize..5, w in 1usize..5, d in 1usize..4, seed in any::<u64>()) {
            let data: Vec<f32> = (0..h * w * d).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f32).collect();
            let g = FeatureGrid::new(h, w, d, data).unwrap();
            prop_assert_eq!(FeatureGrid::unflatten(&g.flatten(), h, w).unwrap(), g);
        }
    }
}
