//! Row-major point storage and the Euclidean kernels shared by search and the oracle.

use crate::error::{GarlicError, Result};

/// A dense set of `n` points in `R^d`, stored row-major as 32-bit floats.
///
/// Point ids are the implicit row indices `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    dim: usize,
    data: Vec<f32>,
}

impl VectorSet {
    /// Wraps row-major `data` of dimension `dim`.
    ///
    /// Requires `dim >= 2`, at least one row, and finite entries.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim < 2 {
            return Err(GarlicError::InvalidInput(format!(
                "vector dimension must be at least 2, got {dim}"
            )));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(GarlicError::InvalidInput(format!(
                "data length {} is not a positive multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GarlicError::InvalidInput(format!(
                "non-finite value in row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(GarlicError::InvalidInput(format!(
                    "row {i} has dimension {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies the listed rows into a new set, in the given order.
    pub fn subset(&self, ids: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            if i >= self.len() {
                return Err(GarlicError::InvalidInput(format!(
                    "row id {i} out of range for {} rows",
                    self.len()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.dim, data)
    }

    /// CRC32 over the little-endian bytes of every entry.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for v in &self.data {
            hasher.update(&v.to_le_bytes());
        }
        hasher.finalize()
    }
}

/// Squared Euclidean distance accumulated in 64-bit.
#[inline]
pub fn sq_euclidean(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            let t = x[l] as f64 - y[l] as f64;
            acc[l] += t * t;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let t = *x as f64 - *y as f64;
        tail += t * t;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Euclidean distance between a stored point and a 64-bit vector.
#[inline]
pub fn euclidean_f64(a: &[f32], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = *x as f64 - y;
        acc += t * t;
    }
    acc.sqrt()
}

#[inline]
pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    sq_euclidean(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(VectorSet::new(1, vec![1.0, 2.0]).is_err());
        assert!(VectorSet::new(2, vec![]).is_err());
        assert!(VectorSet::new(2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(VectorSet::new(2, vec![1.0, f32::NAN]).is_err());
        let v = VectorSet::new(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn euclidean_matches_naive() {
        let a: Vec<f32> = (0..11).map(|i| i as f32 * 0.3).collect();
        let b: Vec<f32> = (0..11).map(|i| (i * i) as f32 * 0.1).collect();
        let naive: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
            .sum();
        assert!((sq_euclidean(&a, &b) - naive).abs() < 1e-9);
    }
}
