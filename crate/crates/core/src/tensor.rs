//! Dense row-major f64 tensor with lightweight allocation accounting.
//!
//! The accounting (element counts, not bytes) exists so tests can assert
//! storage claims, e.g. that the KV pathway allocates Θ(L_m·d_v) and that
//! the factored delta apply never materializes a d_out×d_in matrix.

use crate::error::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

static LIVE_ELEMS: AtomicUsize = AtomicUsize::new(0);
static PEAK_ELEMS: AtomicUsize = AtomicUsize::new(0);
static TOTAL_ELEMS: AtomicUsize = AtomicUsize::new(0);

/// Cumulative and high-water element counts across all live tensors.
pub mod alloc_stats {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Snapshot {
        pub live: usize,
        pub peak: usize,
        pub total: usize,
    }

    pub fn snapshot() -> Snapshot {
        Snapshot {
            live: LIVE_ELEMS.load(Ordering::Relaxed),
            peak: PEAK_ELEMS.load(Ordering::Relaxed),
            total: TOTAL_ELEMS.load(Ordering::Relaxed),
        }
    }

    /// Resets the peak to the current live count (total keeps accumulating).
    pub fn reset_peak() {
        PEAK_ELEMS.store(LIVE_ELEMS.load(Ordering::Relaxed), Ordering::Relaxed);
    }

    /// Elements allocated since `before` was taken.
    pub fn allocated_since(before: Snapshot) -> usize {
        snapshot().total - before.total
    }
}

fn record_alloc(n: usize) {
    let live = LIVE_ELEMS.fetch_add(n, Ordering::Relaxed) + n;
    TOTAL_ELEMS.fetch_add(n, Ordering::Relaxed);
    PEAK_ELEMS.fetch_max(live, Ordering::Relaxed);
}

fn record_free(n: usize) {
    LIVE_ELEMS.fetch_sub(n, Ordering::Relaxed);
}

#[derive(Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dim(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        record_alloc(data.len());
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        record_alloc(n);
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n: usize = shape.iter().product();
        record_alloc(n);
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar_like(v: f64) -> Self {
        Tensor::filled(&[1], v)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dim(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|&x| f(x)).collect();
        record_alloc(data.len());
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn scale(&self, a: f64) -> Tensor {
        self.map(|x| a * x)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dim(format!(
                "add shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        record_alloc(data.len());
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dim(format!(
                "sub shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        record_alloc(data.len());
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// In-place `self += other`, no allocation.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dim(format!(
                "add_assign shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// 2D transpose.
    pub fn transpose2(&self) -> Tensor {
        debug_assert_eq!(self.rank(), 2);
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Max absolute difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Dim(format!(
                "max_abs_diff shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| crate::math::abs(a - b))
            .fold(0.0, f64::max))
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        record_alloc(self.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
        }
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        record_free(self.data.len());
    }
}
