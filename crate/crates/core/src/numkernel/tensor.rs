//! Dense f32 tensor with an optional gradient buffer.
//!
//! A `Tensor` is a cheap-to-clone handle (`Rc`) onto shared storage: the
//! value buffer, the shape, a `requires_grad` flag and a lazily allocated
//! gradient buffer. Values are immutable through normal operations; only
//! parameter updates (`data_mut`) and gradient accumulation mutate storage.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::rc::Rc;

use crate::error::{Error, Result};

struct Storage {
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f32>>>,
}

#[derive(Clone)]
pub struct Tensor {
    storage: Rc<Storage>,
}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Self {
            storage: Rc::new(Storage {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                requires_grad: Cell::new(false),
                grad: RefCell::new(None),
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zeros: consistent by construction")
    }

    pub fn scalar(v: f32) -> Self {
        Self::new(&[], vec![v]).expect("scalar: consistent by construction")
    }

    /// A trainable tensor: `requires_grad` set from the start.
    pub fn param(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    /// A constant (never differentiated) tensor; convenience for tests
    /// and for fixed weight vectors inside losses.
    pub fn constant(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.storage.shape
    }

    pub fn len(&self) -> usize {
        self.storage.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.storage.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.storage.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.data().clone()
    }

    /// Scalar value; panics if the tensor is not a single element.
    pub fn item(&self) -> f32 {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape());
        self.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.storage.requires_grad.get()
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.storage.requires_grad.set(flag);
    }

    /// Current gradient, cloned out, if one has been accumulated.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.storage.grad.borrow().clone()
    }

    /// Borrowed view of the gradient slot (used on the backward path to
    /// avoid cloning upstream gradients).
    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f32>>> {
        self.storage.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.storage.grad.borrow_mut() = None;
    }

    /// Add `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.len());
        let mut slot = self.storage.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Run `f` with mutable access to the gradient buffer (allocated as
    /// zeros on first use). Cheaper than `accumulate_grad` for scatter
    /// patterns that touch few entries.
    pub fn with_grad_mut<R>(&self, f: impl FnOnce(&mut [f32]) -> R) -> R {
        let mut slot = self.storage.grad.borrow_mut();
        let g = slot.get_or_insert_with(|| vec![0.0; self.len()]);
        f(g)
    }

    /// Seed the gradient of a scalar tensor with 1 (accumulating, so a
    /// second backward pass adds another unit of upstream gradient).
    pub(crate) fn seed_unit_grad(&self) {
        self.accumulate_grad(&[1.0]);
    }

    /// Two tensors are the same object (not merely equal values).
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.storage, &other.storage)
    }

    /// Error out if any stored value is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if let Some(pos) = self.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "{what}: non-finite value at flat index {pos}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_mismatch_is_an_error() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn grad_accumulates_and_resets() {
        let t = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(t.grad().is_none());
        t.accumulate_grad(&[0.5, 0.5]);
        t.accumulate_grad(&[0.5, 1.0]);
        assert_eq!(t.grad().unwrap(), vec![1.0, 1.5]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn ensure_finite_flags_nan() {
        let t = Tensor::new(&[3], vec![1.0, f32::NAN, 0.0]).unwrap();
        assert!(t.ensure_finite("t").is_err());
        let ok = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        assert!(ok.ensure_finite("ok").is_ok());
    }
}
