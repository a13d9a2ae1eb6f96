use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Scalar};

/// Per-code hit counters, safe to bump from many threads at once.
#[derive(Debug, Default)]
pub struct CodeUsage {
    counts: Vec<AtomicU64>,
}

impl Clone for CodeUsage {
    fn clone(&self) -> Self {
        Self::from_counts(&self.counts())
    }
}

impl CodeUsage {
    pub fn new(k: usize) -> Self {
        Self {
            counts: (0..k).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    pub fn from_counts(counts: &[u64]) -> Self {
        Self {
            counts: counts.iter().map(|&c| AtomicU64::new(c)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn hit(&self, id: usize) {
        self.counts[id].fetch_add(1, Ordering::Relaxed);
    }

    pub fn counts(&self) -> Vec<u64> {
        self.counts.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    pub fn reset(&self) {
        for c in &self.counts {
            c.store(0, Ordering::Relaxed);
        }
    }

    /// Fraction of codes hit at least once.
    pub fn utilization(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts().iter().filter(|&&c| c > 0).count() as f64 / self.counts.len() as f64
    }
}

/// Nearest code by squared Euclidean distance; ties go to the lowest index.
pub fn nearest_code<T: Scalar>(codes: &Mat<T>, latent: &[T]) -> usize {
    let mut best = 0;
    let mut best_d = T::infinity();
    for k in 0..codes.rows {
        let d = codes
            .row(k)
            .iter()
            .zip(latent)
            .fold(T::zero(), |acc, (&c, &z)| acc + (c - z) * (c - z));
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// `K × D` code table plus its usage counters.
#[derive(Debug, Clone, Copy)]
pub struct VqCodebook<'a, T: Scalar> {
    pub codes: &'a Mat<T>,
    pub usage: Option<&'a CodeUsage>,
}

/// Output of [`VqCodebook::quantize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized<T> {
    pub ids: Vec<u32>,
    pub vectors: Mat<T>,
}

impl<'a, T: Scalar> VqCodebook<'a, T> {
    pub fn new(codes: &'a Mat<T>, usage: Option<&'a CodeUsage>) -> Self {
        Self { codes, usage }
    }

    pub fn k(&self) -> usize {
        self.codes.rows
    }

    pub fn dim(&self) -> usize {
        self.codes.cols
    }

    /// Maps each latent row to its nearest code and bumps the usage counters.
    pub fn quantize(&self, latents: &Mat<T>) -> Result<Quantized<T>> {
        if self.codes.rows == 0 {
            return Err(Error::config("codebook is empty"));
        }
        if latents.cols != self.codes.cols {
            return Err(Error::shape(format!(
                "latent width {} does not match code width {}",
                latents.cols, self.codes.cols
            )));
        }
        let ids: Vec<u32> = (0..latents.rows)
            .map(|r| nearest_code(self.codes, latents.row(r)) as u32)
            .collect();
        if let Some(u) = self.usage {
            for &id in &ids {
                u.hit(id as usize);
            }
        }
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        Ok(Quantized {
            vectors: self.codes.select_rows(&rows),
            ids,
        })
    }

    pub fn lookup(&self, ids: &[u32]) -> Result<Mat<T>> {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.codes.rows) {
            return Err(Error::domain(format!("image id {bad} >= codebook size {}", self.codes.rows)));
        }
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        Ok(self.codes.select_rows(&rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_nearest() {
        // distances 0.81 + 0.64 = 1.45 vs 0.01 + 0.04 = 0.05
        let codes = Mat::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        let cb = VqCodebook::new(&codes, None);
        let q = cb.quantize(&Mat::from_vec(1, 2, vec![0.9f64, 0.8])).unwrap();
        assert_eq!(q.ids, vec![1]);
        assert_eq!(q.vectors.data, vec![1.0, 1.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut data = vec![5.0; 6 * 2];
        data[4..6].copy_from_slice(&[1.0, 0.0]);
        data[10..12].copy_from_slice(&[-1.0, 0.0]);
        let codes = Mat::from_vec(6, 2, data);
        let ids = VqCodebook::new(&codes, None)
            .quantize(&Mat::from_vec(1, 2, vec![0.0f64, 0.0]))
            .unwrap()
            .ids;
        assert_eq!(ids, vec![2]);
    }

    #[test]
    fn empty_codebook_is_config_error() {
        let codes: Mat<f32> = Mat::zeros(0, 3);
        let r = VqCodebook::new(&codes, None).quantize(&Mat::zeros(1, 3));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn usage_counts_and_idempotence() {
        let codes = Mat::from_vec(3, 1, vec![0.0f32, 1.0, 2.0]);
        let usage = CodeUsage::new(3);
        let cb = VqCodebook::new(&codes, Some(&usage));
        let q = cb.quantize(&Mat::from_vec(4, 1, vec![0.1, 0.2, 1.9, 2.4])).unwrap();
        assert_eq!(q.ids, vec![0, 0, 2, 2]);
        assert_eq!(cb.quantize(&q.vectors).unwrap().ids, q.ids);
        assert_eq!(usage.counts(), vec![4, 0, 4]);
        assert!((usage.utilization() - 2.0 / 3.0).abs() < 1e-12);
        assert!(cb.lookup(&[3]).is_err());
    }
}
