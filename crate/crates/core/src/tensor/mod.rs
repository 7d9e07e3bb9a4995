//! Dense `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor produced by an operation on gradient-carrying inputs keeps a
//! handle on its parents together with whatever the backward rule needs.
//! Calling [`Tensor::backward`] on a scalar walks that graph in reverse
//! topological order. Spatial operations work on `[N, C, H, W]` tensors; a
//! single feature map is a batch of one.

mod conv;
mod norm;
mod ops;
mod spatial;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use conv::{conv2d, ConvSpec, Padding};
pub use norm::{batch_norm, batchnorm_relu, BatchNormOutput, NormMode, RunningStats};
pub use ops::{bce_with_logits, concat_channels, split_by_gate};
pub(crate) use ops::sigmoid;
pub use spatial::{avg_pool, bilinear_upsample, crop, replicate_pad_to_multiple};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Cheap-to-clone handle on an immutable n-dimensional array.
#[derive(Clone)]
pub struct Tensor {
    node: Arc<Node>,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    parents: Vec<Tensor>,
    op: Option<ops::Op>,
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                parents: Vec::new(),
                op: None,
            }),
        }
    }

    /// Result of an operation. The graph edge is only kept when some parent
    /// needs a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        op: ops::Op,
    ) -> Tensor {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        if !requires_grad {
            return Tensor::build(shape, data, false);
        }
        Tensor {
            node: Arc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                parents,
                op: Some(op),
            }),
        }
    }

    /// Constant tensor (no gradient is tracked through it).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::build(shape.to_vec(), data, false))
    }

    /// Leaf tensor that collects a gradient on [`Tensor::backward`].
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::build(shape.to_vec(), data, true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(shape.to_vec(), vec![value; n], false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(Vec::new(), vec![value], false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    pub fn len(&self) -> usize {
        self.node.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Accumulated gradient, if any backward pass reached this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().unwrap() = None;
    }

    /// Same values, detached from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.node.shape.clone(), self.node.data.clone(), false)
    }

    /// Concatenation of constant tensors along the leading (batch) axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack", "nothing to stack"))?;
        let inner = &first.shape()[1..];
        let mut data = Vec::with_capacity(first.len() * parts.len());
        let mut n = 0;
        for p in parts {
            if p.requires_grad() {
                return Err(Error::invalid("stack", "inputs must be constants"));
            }
            if p.shape().is_empty() || &p.shape()[1..] != inner {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} does not stack with {:?}", p.shape(), first.shape()),
                ));
            }
            n += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![n];
        shape.extend_from_slice(inner);
        Ok(Tensor::build(shape, data, false))
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("tensor of shape {:?} is not a scalar", self.shape()),
            ));
        }
        Ok(self.node.data[0])
    }

    /// `[N, C, H, W]` dimensions, or an error naming `op`.
    pub(crate) fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match *self.shape() {
            [n, c, h, w] => Ok([n, c, h, w]),
            ref other => Err(Error::shape(
                op,
                format!("expected a rank-4 [N, C, H, W] tensor, got shape {other:?}"),
            )),
        }
    }

    /// Reverse-mode sweep from a scalar.
    ///
    /// Gradients are added to whatever each tensor already holds, so calling
    /// this twice without [`Tensor::zero_grad`] doubles them.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape()),
            ));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.node.id, vec![1.0]);

        for tensor in order.iter().rev() {
            let Some(grad_out) = pending.remove(&tensor.node.id) else {
                continue;
            };
            if let Some(op) = &tensor.node.op {
                let parent_grads = op.backward(&tensor.node.parents, tensor, &grad_out);
                for (parent, grad) in tensor.node.parents.iter().zip(parent_grads) {
                    let Some(grad) = grad else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    match pending.get_mut(&parent.node.id) {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => {
                            pending.insert(parent.node.id, grad);
                        }
                    }
                }
            }
            let mut slot = tensor.node.grad.lock().unwrap();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&grad_out).for_each(|(a, g)| *a += g),
                None => *slot = Some(grad_out),
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` through gradient-carrying edges, parents first.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (tensor, children already pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((tensor, expanded)) = stack.pop() {
            if expanded {
                order.push(tensor);
                continue;
            }
            if !visited.insert(tensor.node.id) {
                continue;
            }
            stack.push((tensor.clone(), true));
            for parent in &tensor.node.parents {
                if parent.requires_grad() && !visited.contains(&parent.node.id) {
                    stack.push((parent.clone(), false));
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish_non_exhaustive()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::shape("tensor", format!("zero-sized dimension in {shape:?}")));
    }
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::shape(
            "tensor",
            format!("shape {shape:?} needs {expected} values, got {len}"),
        ));
    }
    Ok(())
}
