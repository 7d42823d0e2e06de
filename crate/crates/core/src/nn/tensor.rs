//! Flat row-major tensors with an optional gradient buffer.

use super::{NnError, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape {shape:?} does not match {} values",
            values.len()
        );
        Tensor {
            shape,
            values,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![S::zero(); n],
            grad: None,
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor::new(vec![1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated (zeroed) on first use.
    pub fn grad_mut(&mut self) -> &mut [S] {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![S::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(S::zero());
        }
    }

    /// Accumulates `delta` into the gradient buffer.
    pub fn add_grad(&mut self, delta: &[S]) -> Result<(), NnError> {
        if delta.len() != self.values.len() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient of {} elements for tensor of {}",
                delta.len(),
                self.values.len()
            )));
        }
        let g = self.grad_mut();
        for (gi, &d) in g.iter_mut().zip(delta) {
            *gi += d;
        }
        Ok(())
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[S] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &mut self.values[r * cols..(r + 1) * cols]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            self.shape.clone(),
            self.values.iter().map(|v| T::cast_from(v.as_f64())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        let t = Tensor::new(vec![2, 3], vec![1.0f64; 6]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.row(1), &[1.0, 1.0, 1.0]);
    }

    #[test]
    #[should_panic]
    fn mismatched_shape_panics() {
        let _ = Tensor::new(vec![2, 3], vec![0.0f64; 5]);
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::zeros(vec![3]);
        t.add_grad(&[1.0f64, 2.0, 3.0]).unwrap();
        t.add_grad(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_shape_is_checked() {
        let mut t = Tensor::<f32>::zeros(vec![3]);
        assert!(t.add_grad(&[0.0, 0.0]).is_err());
    }
}
