//! Dense tensors and a small define-by-run reverse-mode autodiff graph.

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::{self, Scalar};

/// Norms at or below this are rejected by normalization.
pub const NORM_FLOOR: f64 = 1e-12;

/// Dense row-major tensor. Values are always finite.
///
/// Serialized as `{"shape": [...], "values": [...]}`; gradients are not persisted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "TensorRecord<T>", into = "TensorRecord<T>")]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct TensorRecord<T> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> TryFrom<TensorRecord<T>> for Tensor<T> {
    type Error = Error;

    fn try_from(r: TensorRecord<T>) -> Result<Self> {
        Tensor::new(r.shape, r.values)
    }
}

impl<T: Scalar> From<Tensor<T>> for TensorRecord<T> {
    fn from(t: Tensor<T>) -> Self {
        TensorRecord { shape: t.shape, values: t.values }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(shape_err("tensor", format!("dimensions must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {n} values but {} were given", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Self { shape, values, grad: None, requires_grad: false })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), values: vec![T::zero(); n], grad: None, requires_grad: false }
    }

    /// A `[1, n]` row tensor.
    pub fn row(values: Vec<T>) -> Result<Self> {
        Self::new(vec![1, values.len()], values)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("from_rows", "ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(shape_err("set_grad", format!("{} vs {}", grad.len(), self.values.len())));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Rows of a 2-D tensor (a 1-D tensor is one row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 { 1 } else { self.shape[0] }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("shape is nonempty")
    }

    pub fn row_slice(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Unit-norm copy of `v`.
pub fn l2_normalize<T: Scalar>(v: &Tensor<T>) -> Result<Tensor<T>> {
    let out = normalized(v.values())?;
    Tensor::new(v.shape().to_vec(), out)
}

pub(crate) fn normalized<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let n = scalar::norm(v);
    if n.to_f64_lossy() <= NORM_FLOOR {
        return Err(Error::NearZeroNorm { norm: n.to_f64_lossy() });
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(shape_err("cosine", format!("{} vs {}", a.len(), b.len())));
    }
    let na = scalar::norm(a);
    let nb = scalar::norm(b);
    for n in [na, nb] {
        if n.to_f64_lossy() <= NORM_FLOOR {
            return Err(Error::NearZeroNorm { norm: n.to_f64_lossy() });
        }
    }
    let c = scalar::dot(a, b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_three_four() {
        let v = Tensor::row(vec![3.0, 4.0]).unwrap();
        let u = l2_normalize(&v).unwrap();
        assert!((u.values()[0] - 0.6f64).abs() < 1e-15);
        assert!((u.values()[1] - 0.8f64).abs() < 1e-15);
    }

    #[test]
    fn normalize_unit_is_identity() {
        let s = 0.5f64.sqrt();
        let v = Tensor::row(vec![s, -s]).unwrap();
        let u = l2_normalize(&v).unwrap();
        for (a, b) in u.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_zero_fails() {
        let v = Tensor::<f64>::row(vec![0.0, 0.0]).unwrap();
        assert!(matches!(l2_normalize(&v), Err(Error::NearZeroNorm { .. })));
    }

    #[test]
    fn cosine_cases() {
        let v = Tensor::row(vec![0.3, -1.7, 2.2]).unwrap();
        assert!((cosine(&v, &v).unwrap() - 1.0f64).abs() < 1e-15);
        let e1 = Tensor::row(vec![1.0f64, 0.0]).unwrap();
        let e2 = Tensor::row(vec![0.0, 1.0]).unwrap();
        let m1 = Tensor::row(vec![-1.0, 0.0]).unwrap();
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert_eq!(cosine(&e1, &m1).unwrap(), -1.0);
        let z = Tensor::row(vec![0.0, 0.0]).unwrap();
        assert!(cosine(&e1, &z).is_err());
    }

    #[test]
    fn rejects_bad_tensors() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
        assert!(matches!(
            Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        let mut t = Tensor::<f32>::zeros(&[2, 3]);
        assert!(t.set_grad(vec![0.0; 5]).is_err());
        t.set_grad(vec![0.0; 6]).unwrap();
        assert_eq!(t.grad().unwrap().len(), 6);
    }
}
