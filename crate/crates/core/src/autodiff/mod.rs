//! A small reverse-mode automatic differentiation engine over dense `f64`
//! tensors.
//!
//! Every backward rule is itself written in terms of differentiable tensor
//! operations, so gradients can be differentiated again. The critic's
//! gradient penalty needs exactly that: the norm of an input gradient is
//! part of the loss that is minimized over the critic parameters.
//!
//! Graphs are built eagerly and reference-counted; a [`Tensor`] is cheap to
//! clone. Recording can be suspended with [`no_grad`].

mod grad;
mod ops;

pub use grad::grad;

use std::cell::Cell;
use std::fmt;
use std::rc::Rc;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Restores the previous recording state when dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Suspends graph recording on this thread until the guard is dropped.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Geometry of a stride-1 "same" convolution in NHWC layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn cols_shape(&self) -> [usize; 2] {
        [
            self.batch * self.height * self.width,
            self.kernel * self.kernel * self.channels,
        ]
    }

    pub fn image_shape(&self) -> [usize; 4] {
        [self.batch, self.height, self.width, self.channels]
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Unary {
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Softplus,
    Sqrt,
}

pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    Affine(Tensor, f64),
    Unary(Tensor, Unary),
    Mask(Tensor, Rc<Vec<f64>>),
    MatMul(Tensor, Tensor, bool, bool),
    Reshape(Tensor),
    Broadcast(Tensor),
    SumTo(Tensor),
    Im2Col(Tensor, ConvGeom),
    Col2Im(Tensor, ConvGeom),
    Upsample(Tensor),
    SumPool(Tensor),
    Concat(Vec<Tensor>),
    Slice(Tensor, usize),
    Pad(Tensor, usize),
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<Vec<f64>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

/// Dense row-major tensor participating in the autodiff graph.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Constant tensor; never receives gradients.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Tensor {
        assert_eq!(
            data.len(),
            numel(shape),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Node {
            shape: shape.to_vec(),
            data: Rc::new(data),
            requires_grad: false,
            op: Op::Leaf,
        }))
    }

    /// Leaf that gradients can be taken with respect to.
    pub fn variable(data: Vec<f64>, shape: &[usize]) -> Tensor {
        let t = Tensor::new(data, shape);
        let node = Rc::try_unwrap(t.0).ok().expect("fresh tensor");
        Tensor(Rc::new(Node {
            requires_grad: true,
            ..node
        }))
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::new(vec![value], &[])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(vec![0.0; numel(shape)], shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::new(vec![value; numel(shape)], shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same values, cut from the graph. Shares storage.
    pub fn detach(&self) -> Tensor {
        Tensor(Rc::new(Node {
            shape: self.0.shape.clone(),
            data: Rc::clone(&self.0.data),
            requires_grad: false,
            op: Op::Leaf,
        }))
    }

    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Tensor {
        debug_assert_eq!(data.len(), numel(&shape));
        let requires_grad = grad_enabled() && op_requires_grad(&op);
        Tensor(Rc::new(Node {
            shape,
            data: Rc::new(data),
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
        }))
    }
}

fn op_requires_grad(op: &Op) -> bool {
    match op {
        Op::Leaf => false,
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b, _, _) => {
            a.requires_grad() || b.requires_grad()
        }
        Op::Concat(parts) => parts.iter().any(Tensor::requires_grad),
        Op::Affine(a, _)
        | Op::Unary(a, _)
        | Op::Mask(a, _)
        | Op::Reshape(a)
        | Op::Broadcast(a)
        | Op::SumTo(a)
        | Op::Im2Col(a, _)
        | Op::Col2Im(a, _)
        | Op::Upsample(a)
        | Op::SumPool(a)
        | Op::Slice(a, _)
        | Op::Pad(a, _) => a.requires_grad(),
    }
}
