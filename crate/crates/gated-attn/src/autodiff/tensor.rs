//! Dense row-major f64 tensors with shared storage and an optional gradient
//! buffer. Cloning a `Tensor` is cheap: clones alias the same data, which is
//! how the tape keeps inputs alive for the backward pass.

use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;

#[derive(Debug)]
struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Tensor(Rc<Inner>);

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Inner {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            requires_grad: false,
            grad: RefCell::new(Vec::new()),
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(vec![0.0; shape.iter().product()], shape)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![v], &[1])
    }

    /// Marks this tensor as a trainable leaf and allocates its grad buffer.
    pub fn requires_grad(data: Vec<f64>, shape: &[usize]) -> Self {
        let n = data.len();
        assert_eq!(n, shape.iter().product::<usize>());
        Tensor(Rc::new(Inner {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            requires_grad: true,
            grad: RefCell::new(vec![0.0; n]),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn len(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn needs_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn grad(&self) -> Ref<'_, Vec<f64>> {
        self.0.grad.borrow()
    }

    pub fn grad_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.grad.borrow_mut()
    }

    pub fn zero_grad(&self) {
        for g in self.0.grad.borrow_mut().iter_mut() {
            *g = 0.0;
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of {} elements", d.len());
        d[0]
    }

    /// Identity for the tape's node table: two clones of one tensor share it.
    pub fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Detached copy: same values, no grad, new storage.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.to_vec(), &self.0.shape)
    }
}
