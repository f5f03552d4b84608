//! Flat dense tensors over f32 or f64.
//!
//! The engine keeps shapes dynamic (a `Vec<usize>`) and data in one
//! contiguous buffer; convolution kernels index raw slices. Determinism is
//! part of the contract: every reduction runs in a fixed order and parallel
//! kernels only split disjoint output regions, so results are bitwise
//! reproducible for a given seed regardless of thread count.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, Div, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Element type of the engine: `f32` for speed, `f64` for gradient checks.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Sum<Self>
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn standard_normal<R: Rng>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn standard_normal<R: Rng>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn standard_normal<R: Rng>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![S::zero(); n] }
    }

    pub fn from_data(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Self { shape: shape.to_vec(), data }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// I.i.d. standard normal entries drawn in index order.
    pub fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| S::standard_normal(rng)).collect();
        Self { shape: shape.to_vec(), data }
    }

    /// Normal entries with the given standard deviation.
    pub fn randn_scaled<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let s = S::from_f64(std);
        let data = (0..n).map(|_| S::standard_normal(rng) * s).collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape changes size");
        self.shape = shape.to_vec();
        self
    }

    pub fn fill(&mut self, value: S) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn scale(&mut self, value: S) {
        self.data.iter_mut().for_each(|x| *x = *x * value);
    }

    pub fn add_assign(&mut self, other: &Tensor<S>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn sub(&self, other: &Tensor<S>) -> Tensor<S> {
        assert_eq!(self.shape, other.shape, "sub shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|x| x.to_f64()).sum::<f64>() / self.data.len() as f64
    }

    /// Mean squared difference against `target`, accumulated in f64.
    pub fn mse(&self, target: &Tensor<S>) -> f64 {
        assert_eq!(self.shape, target.shape, "mse shape mismatch");
        let n = self.data.len();
        let ss: f64 = self
            .data
            .iter()
            .zip(&target.data)
            .map(|(&a, &b)| {
                let d = a.to_f64() - b.to_f64();
                d * d
            })
            .sum();
        ss / n as f64
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64()).collect()
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape: shape.to_vec(), data: data.iter().map(|&x| S::from_f64(x)).collect() }
    }
}

impl<S: Scalar> Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}[{} elems]", self.shape, self.data.len())
    }
}

/// Concatenates along the channel axis of `[B, C, ...]` tensors.
pub fn concat_channels<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(a.shape()[0], b.shape()[0], "batch mismatch");
    assert_eq!(a.shape()[2..], b.shape()[2..], "spatial mismatch");
    let batch = a.shape()[0];
    let (ca, cb) = (a.shape()[1], b.shape()[1]);
    let spatial: usize = a.shape()[2..].iter().product();
    let mut shape = a.shape().to_vec();
    shape[1] = ca + cb;
    let mut out = Tensor::zeros(&shape);
    let (sa, sb) = (ca * spatial, cb * spatial);
    for bi in 0..batch {
        let dst = &mut out.data_mut()[bi * (sa + sb)..(bi + 1) * (sa + sb)];
        dst[..sa].copy_from_slice(&a.data()[bi * sa..(bi + 1) * sa]);
        dst[sa..].copy_from_slice(&b.data()[bi * sb..(bi + 1) * sb]);
    }
    out
}

/// Splits a `[B, Ca+Cb, ...]` tensor back into channel halves.
pub fn split_channels<S: Scalar>(x: &Tensor<S>, ca: usize) -> (Tensor<S>, Tensor<S>) {
    let batch = x.shape()[0];
    let c = x.shape()[1];
    assert!(ca <= c, "split point beyond channel count");
    let cb = c - ca;
    let spatial: usize = x.shape()[2..].iter().product();
    let mut shape_a = x.shape().to_vec();
    shape_a[1] = ca;
    let mut shape_b = x.shape().to_vec();
    shape_b[1] = cb;
    let mut a = Tensor::zeros(&shape_a);
    let mut b = Tensor::zeros(&shape_b);
    let (sa, sb) = (ca * spatial, cb * spatial);
    for bi in 0..batch {
        let src = &x.data()[bi * (sa + sb)..(bi + 1) * (sa + sb)];
        a.data_mut()[bi * sa..(bi + 1) * sa].copy_from_slice(&src[..sa]);
        b.data_mut()[bi * sb..(bi + 1) * sb].copy_from_slice(&src[sa..]);
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_roundtrips() {
        let a = Tensor::<f64>::from_data(&[2, 2, 3], (0..12).map(|i| i as f64).collect());
        let b = Tensor::<f64>::from_data(&[2, 1, 3], (100..106).map(|i| i as f64).collect());
        let c = concat_channels(&a, &b);
        assert_eq!(c.shape(), &[2, 3, 3]);
        let (a2, b2) = split_channels(&c, 2);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn mse_of_known_vectors() {
        let a = Tensor::<f64>::from_data(&[4], vec![0.0, 0.0, 0.0, 0.0]);
        let b = Tensor::<f64>::from_data(&[4], vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(a.mse(&b), 1.0);
    }
}
