//! Dense rank-3 tensors.
//!
//! The shape convention follows the data flowing through the policy network:
//! `(m, h, d)` = assets x time x channels, stored row-major with channels
//! contiguous. Parameter tensors reuse the same container with repurposed
//! axes (e.g. convolution kernels are `out_channels x in_channels x taps`).

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    m: usize,
    h: usize,
    d: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(m: usize, h: usize, d: usize) -> Self {
        Tensor3 {
            m,
            h,
            d,
            data: vec![0.0; m * h * d],
        }
    }

    pub fn ones(m: usize, h: usize, d: usize) -> Self {
        Tensor3 {
            m,
            h,
            d,
            data: vec![1.0; m * h * d],
        }
    }

    pub fn from_vec(m: usize, h: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * h * d {
            return Err(CoreError::shape(
                "Tensor3::from_vec",
                format!("{} values for {m}x{h}x{d}", m * h * d),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor3 { m, h, d, data })
    }

    /// 1x1x1 tensor holding one value.
    pub fn scalar(v: f64) -> Self {
        Tensor3 {
            m: 1,
            h: 1,
            d: 1,
            data: vec![v],
        }
    }

    /// Column vector over assets: m x 1 x 1.
    pub fn from_assets(values: &[f64]) -> Self {
        Tensor3 {
            m: values.len(),
            h: 1,
            d: 1,
            data: values.to_vec(),
        }
    }

    pub fn random_uniform(m: usize, h: usize, d: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..m * h * d).map(|_| rng.uniform_in(lo, hi)).collect();
        Tensor3 { m, h, d, data }
    }

    pub fn random_normal(m: usize, h: usize, d: usize, std: f64, rng: &mut Rng) -> Self {
        let data = (0..m * h * d).map(|_| std * rng.normal()).collect();
        Tensor3 { m, h, d, data }
    }

    pub fn assets(&self) -> usize {
        self.m
    }

    pub fn time_len(&self) -> usize {
        self.h
    }

    pub fn channels(&self) -> usize {
        self.d
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m, self.h, self.d)
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.m, self.h, self.d)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a 1x1x1 tensor.
    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.m && j < self.h && k < self.d);
        (i * self.h + j) * self.d + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let ix = self.idx(i, j, k);
        self.data[ix] = v;
    }

    /// Channel slice at one (asset, time) cell.
    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.h + j) * self.d;
        &self.data[base..base + self.d]
    }

    #[inline]
    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let base = (i * self.h + j) * self.d;
        &mut self.data[base..base + self.d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copy of the time range [start, start+len) across all assets/channels.
    pub fn time_slice(&self, start: usize, len: usize) -> Result<Tensor3> {
        if start + len > self.h {
            return Err(CoreError::shape(
                "time_slice",
                format!("range within 0..{}", self.h),
                format!("{start}..{}", start + len),
            ));
        }
        let mut out = Tensor3::zeros(self.m, len, self.d);
        for i in 0..self.m {
            for j in 0..len {
                out.cell_mut(i, j).copy_from_slice(self.cell(i, start + j));
            }
        }
        Ok(out)
    }
}

/// Elementwise sum of two same-shape tensors.
pub fn tensor_add(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    if a.shape() != b.shape() {
        return Err(CoreError::shape("tensor_add", a.shape_str(), b.shape_str()));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Tensor3::from_vec(a.m, a.h, a.d, data)
}

/// Term-wise (Hadamard) product of two same-shape tensors.
pub fn hadamard(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    if a.shape() != b.shape() {
        return Err(CoreError::shape("hadamard", a.shape_str(), b.shape_str()));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Tensor3::from_vec(a.m, a.h, a.d, data)
}
