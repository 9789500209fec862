use std::collections::HashMap;

use crate::error::{AutodiffError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How an elementwise binary op maps output positions back to its inputs.
#[derive(Clone, Debug)]
pub(crate) enum Bcast {
    Same,
    /// `b` repeats along the leading axes of `a`.
    BSuffix(usize),
    /// `a` repeats along the leading axes of `b`.
    ASuffix(usize),
    /// Fully general numpy-style broadcast with explicit index maps.
    General(Vec<usize>, Vec<usize>),
}

impl Bcast {
    #[inline]
    pub(crate) fn a_index(&self, o: usize) -> usize {
        match self {
            Bcast::Same | Bcast::BSuffix(_) => o,
            Bcast::ASuffix(n) => o % n,
            Bcast::General(ia, _) => ia[o],
        }
    }

    #[inline]
    pub(crate) fn b_index(&self, o: usize) -> usize {
        match self {
            Bcast::Same | Bcast::ASuffix(_) => o,
            Bcast::BSuffix(n) => o % n,
            Bcast::General(_, ib) => ib[o],
        }
    }
}

pub(crate) struct GruSaved<T> {
    pub r: Vec<T>,
    pub z: Vec<T>,
    pub n: Vec<T>,
    pub hw_n: Vec<T>,
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: Var,
    },
    Add {
        a: Var,
        b: Var,
        map: Bcast,
    },
    Sub {
        a: Var,
        b: Var,
        map: Bcast,
    },
    Mul {
        a: Var,
        b: Var,
        map: Bcast,
    },
    Scale {
        a: Var,
        c: T,
    },
    AddScalar {
        a: Var,
    },
    Relu {
        a: Var,
    },
    Tanh {
        a: Var,
    },
    Sigmoid {
        a: Var,
    },
    Exp {
        a: Var,
    },
    Log {
        a: Var,
    },
    Softmax {
        a: Var,
        tau: T,
    },
    LogSumExp {
        a: Var,
        probs: Vec<T>,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    SumLast {
        a: Var,
    },
    L2Normalize {
        a: Var,
        norms: Vec<T>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Stack {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape {
        a: Var,
    },
    GatherRows {
        a: Var,
        idx: Vec<usize>,
    },
    Pick {
        a: Var,
        idx: Vec<usize>,
    },
    MaskedMean {
        a: Var,
        mask: Vec<bool>,
        counts: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Vec<bool>,
        probs: Vec<T>,
    },
    GruCell {
        xp: Var,
        h: Var,
        w: Var,
        bias: Var,
        mask: Vec<bool>,
        saved: GruSaved<T>,
    },
    LayerNorm {
        a: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Append-only record of a computation.
///
/// A tape is built for one forward pass and dropped afterwards; parameters
/// live outside it (see [`crate::ParamSet::attach`]).
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are only ever produced for leaves with
    /// `requires_grad` set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        let mut leaves = HashMap::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { leaves });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                let t = Tensor::new(node.value.shape().to_vec(), g)?;
                leaves.insert(i, t);
            } else {
                self.propagate(i, &g, &mut grads);
            }
        }
        Ok(Gradients { leaves })
    }

    /// Gradient buffer for `v`, allocated on first use; `None` when `v`
    /// does not require a gradient.
    pub(crate) fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to leaf `v`, if `v` requires one
    /// and the loss depends on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.leaves.remove(&v.0)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
