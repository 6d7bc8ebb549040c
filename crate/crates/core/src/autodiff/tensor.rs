use std::fmt::Debug;

use rand_distr::{Distribution, Normal};

use crate::error::{AmfError, Result};
use crate::rng;

/// Storage element of a tensor.
///
/// Kernels read values through `to_f64`, accumulate in 64-bit and round
/// once on store, so `f32` tensors have 32-bit value semantics with 64-bit
/// reductions and `f64` tensors are exact to double precision.
pub trait Real: Copy + Default + PartialEq + PartialOrd + Debug + Send + Sync + 'static {
    const NAME: &'static str;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Initial contents for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Zeros,
    Constant(f64),
    /// Normal draws in flat index order from a ChaCha8 stream seeded by `seed`.
    Gaussian {
        mean: f64,
        std: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(AmfError::shape("tensor rank must be at least 1"));
    }
    if let Some(pos) = shape.iter().position(|&e| e == 0) {
        return Err(AmfError::shape(format!(
            "extent {pos} of {shape:?} is zero"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn create(shape: &[usize], fill: Fill) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match fill {
            Fill::Zeros => vec![T::default(); len],
            Fill::Constant(c) => vec![T::from_f64(c); len],
            Fill::Gaussian { mean, std, seed } => {
                if std < 0.0 || !std.is_finite() {
                    return Err(AmfError::shape(format!("invalid gaussian std {std}")));
                }
                let normal = Normal::new(mean, std)
                    .map_err(|e| AmfError::shape(format!("gaussian fill: {e}")))?;
                let mut r = rng::rng(seed);
                (0..len)
                    .map(|_| T::from_f64(normal.sample(&mut r)))
                    .collect()
            }
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Fill::Zeros)
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(AmfError::shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![T::from_f64(v)],
            grad: None,
        }
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(AmfError::shape(format!(
                "gradient of length {} for tensor {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    /// Adds `delta` into the gradient slot, creating it zeroed if absent.
    pub(crate) fn accumulate_grad(&mut self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.data.len());
        match &mut self.grad {
            Some(g) => {
                for (a, &d) in g.iter_mut().zip(delta) {
                    *a = T::from_f64(a.to_f64() + d.to_f64());
                }
            }
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn get(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let flat = index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| acc * e + i);
        self.data[flat]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(AmfError::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), len);
        }
        Ok(self)
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    /// Converts storage precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::from_f64(v.to_f64())).collect()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| T::from_f64(f(v.to_f64())))
                .collect(),
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }
}
