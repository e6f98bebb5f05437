use std::cell::RefCell;
use std::sync::atomic::{AtomicU32, Ordering};

use super::{Result, Shape, Tensor, TensorError};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a recorded node: the owning tape plus the node's position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u32,
    index: usize,
}

impl NodeId {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Local adjoint of a recorded op.
///
/// Receives the upstream gradient (same length as the op output) and a mask of
/// which inputs are tracked; returns one gradient per input, `None` where the
/// input is untracked.
pub(crate) type Adjoint = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    inputs: Vec<Option<NodeId>>,
    shape: Shape,
    adjoint: Option<Adjoint>,
}

/// Append-only record of one forward pass.
///
/// Nodes are pushed as ops execute, so every node's inputs precede it and a
/// single reverse sweep visits each node once.
pub struct Tape {
    id: u32,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a differentiable leaf.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let id = self.push(Node {
            inputs: Vec::new(),
            shape: value.shape().clone(),
            adjoint: None,
        });
        let mut t = value.detach();
        t.node = Some(id);
        t
    }

    fn push(&self, node: Node) -> NodeId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        NodeId {
            tape: self.id,
            index: nodes.len() - 1,
        }
    }

    fn check_owner(&self, t: &Tensor) -> Option<NodeId> {
        t.node().inspect(|id| {
            assert_eq!(
                id.tape, self.id,
                "tensor recorded on a different tape was passed to this tape"
            );
        })
    }

    /// Records an op output. When no input is tracked the result is a constant
    /// and `adjoint` is dropped.
    pub(crate) fn record(
        &self,
        shape: Shape,
        value: Vec<f64>,
        inputs: &[&Tensor],
        adjoint: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Tensor {
        let ids: Vec<Option<NodeId>> = inputs.iter().map(|t| self.check_owner(t)).collect();
        if ids.iter().all(Option::is_none) {
            return Tensor::from_parts(shape, value, None);
        }
        let id = self.push(Node {
            inputs: ids,
            shape: shape.clone(),
            adjoint: Some(Box::new(adjoint)),
        });
        Tensor::from_parts(shape, value, Some(id))
    }

    /// Records a user-defined op with a hand-written adjoint.
    ///
    /// `adjoint(upstream, needs)` must return one entry per input. This is the
    /// extension point for fused layers.
    pub fn custom(
        &self,
        shape: impl Into<Shape>,
        value: Vec<f64>,
        inputs: &[&Tensor],
        adjoint: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Tensor> {
        let shape = shape.into();
        if shape.numel() != value.len() {
            return Err(TensorError::BadLength {
                shape,
                len: value.len(),
            });
        }
        Ok(self.record(shape, value, inputs, adjoint))
    }

    /// Reverse sweep from a scalar loss. Gradients are kept for leaves only.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.shape().clone()));
        }
        let root = self.check_owner(loss).ok_or(TensorError::UntrackedLoss)?;
        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; root.index + 1];
        let mut leaves: Vec<Option<Vec<f64>>> = vec![None; root.index + 1];
        pending[root.index] = Some(vec![1.0]);

        for idx in (0..=root.index).rev() {
            let Some(upstream) = pending[idx].take() else {
                continue;
            };
            let node = &nodes[idx];
            let Some(adjoint) = node.adjoint.as_ref() else {
                leaves[idx] = Some(upstream);
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let local = adjoint(&upstream, &needs);
            debug_assert_eq!(local.len(), node.inputs.len());
            for (input, grad) in node.inputs.iter().zip(local) {
                let (Some(input), Some(grad)) = (input, grad) else {
                    continue;
                };
                debug_assert_eq!(grad.len(), nodes[input.index].shape.numel());
                match &mut pending[input.index] {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    slot => *slot = Some(grad),
                }
            }
        }

        let shapes = nodes[..=root.index].iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients {
            tape: self.id,
            grads: leaves,
            shapes,
        })
    }
}

/// Gradients of a loss with respect to the leaves of one tape.
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<Tensor> {
        if id.tape != self.tape {
            return None;
        }
        let g = self.grads.get(id.index)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[id.index].clone(), g.clone(), None))
    }

    /// Gradient for `leaf`, or `None` if the loss does not depend on it.
    pub fn wrt(&self, leaf: &Tensor) -> Option<Tensor> {
        self.get(leaf.node()?)
    }

    /// Like [`Gradients::wrt`] but yields zeros for unreached leaves.
    pub fn wrt_or_zero(&self, leaf: &Tensor) -> Tensor {
        self.wrt(leaf).unwrap_or_else(|| Tensor::zeros(leaf.shape().clone()))
    }

    /// All leaf gradients keyed by node id, in node order.
    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Tensor)> + '_ {
        self.grads.iter().enumerate().filter_map(move |(i, g)| {
            let g = g.as_ref()?;
            let id = NodeId {
                tape: self.tape,
                index: i,
            };
            Some((id, Tensor::from_parts(self.shapes[i].clone(), g.clone(), None)))
        })
    }
}
