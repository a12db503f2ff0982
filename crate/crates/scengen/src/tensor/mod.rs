//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! The engine is deliberately small: eager single-graph recording on a
//! [`Tape`], tensors as shape + flat storage, and one backward pass per
//! graph. Training defaults to `f64` (which keeps finite-difference
//! gradient checks crisp); `f32` is available through the same generic
//! [`Element`] interface.
//!
//! A [`Tape`] and the [`Var`]s recorded on it are confined to one thread;
//! independent graphs run in parallel workers and share read-only
//! parameter [`Tensor`]s.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod loss;
pub mod nn;
mod ops;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use loss::{binary_cross_entropy, cross_entropy, gaussian_nll_2d, l1};
pub use tape::{GradMap, Tape, Var};

use std::fmt::Debug;
use std::sync::Arc;

/// Storage element: `f64` for training, `f32` for faster inference-style
/// work. Conversions and byte layout are pinned for checkpoints.
pub trait Element:
    num_traits::Float + num_traits::NumAssign + Debug + Default + Send + Sync + 'static
{
    const DTYPE: Dtype;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
}

/// Dense multi-dimensional array. Cloning is cheap (shared storage);
/// values are immutable once constructed.
#[derive(Clone, PartialEq)]
pub struct Tensor<E: Element = f64> {
    shape: Arc<[usize]>,
    data: Arc<Vec<E>>,
}

impl<E: Element> Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{:?}, ...]", &self.data[..8])
        }
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Self {
        assert_eq!(
            data.len(),
            numel_of(shape),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape: shape.into(), data: Arc::new(data) }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, E::zero())
    }

    pub fn filled(shape: &[usize], value: E) -> Self {
        Self::from_vec(shape, vec![value; numel_of(shape)])
    }

    pub fn scalar(value: E) -> Self {
        Self::from_vec(&[], vec![value])
    }

    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Self {
        Self::from_vec(shape, data.iter().map(|&v| E::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() needs a single-element tensor, got {:?}", self.shape);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Self::from_vec(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn reshaped(&self, shape: &[usize]) -> Self {
        assert_eq!(
            numel_of(shape),
            self.numel(),
            "cannot reshape {:?} to {:?}",
            self.shape,
            shape
        );
        Self { shape: shape.into(), data: Arc::clone(&self.data) }
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan() || v.is_infinite())
    }

    pub(crate) fn data_mut(data: &mut Arc<Vec<E>>) -> &mut Vec<E> {
        Arc::make_mut(data)
    }

    pub(crate) fn into_parts(self) -> (Arc<[usize]>, Arc<Vec<E>>) {
        (self.shape, self.data)
    }

    pub(crate) fn from_parts(shape: Arc<[usize]>, data: Arc<Vec<E>>) -> Self {
        Self { shape, data }
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_and_reshape() {
        let t = Tensor::<f64>::from_f64s(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.numel(), 6);
        assert_eq!(t.reshaped(&[3, 2]).shape(), &[3, 2]);
        assert_eq!(Tensor::<f64>::scalar(2.5).item(), 2.5);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn rejects_wrong_length() {
        Tensor::<f64>::from_vec(&[2, 2], vec![1.0]);
    }

    #[test]
    fn strides() {
        assert_eq!(strides_of(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides_of(&[]), Vec::<usize>::new());
    }
}
