//! Reverse-mode differentiation over reference-counted expression nodes.
//!
//! Every operation on [`Var`] produces a new node holding its value and, when
//! any input requires a gradient, a backward rule plus handles to its inputs.
//! Dropping the last handle to a subgraph frees it, so evaluation under
//! [`no_grad`] keeps only live values in memory.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::param::ParamId;
use super::tensor::Tensor;
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

struct GradGuard(bool);

impl Drop for GradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

/// Run `f` without recording backward rules.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _guard = GradGuard(prev);
    f()
}

/// Maps the output gradient to one optional gradient per input.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[Var], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// A differentiable tensor handle.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            value,
            parents: Vec::new(),
            backward: None,
            param: None,
            requires_grad: false,
        }))
    }

    pub(crate) fn param_leaf(value: Tensor, id: ParamId) -> Var {
        Var(Rc::new(Node {
            value,
            parents: Vec::new(),
            backward: None,
            param: Some(id),
            requires_grad: grad_enabled(),
        }))
    }

    pub(crate) fn from_op(value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Var {
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        if !requires_grad {
            return Var::constant(value);
        }
        Var(Rc::new(Node {
            value,
            parents,
            backward: Some(backward),
            param: None,
            requires_grad,
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn rank(&self) -> usize {
        self.0.value.rank()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    fn key(&self) -> *const () {
        Rc::as_ptr(&self.0) as *const ()
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamId, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn topo_order(root: &Var) -> Vec<Var> {
    let mut order = Vec::new();
    let mut visited: HashSet<*const ()> = HashSet::new();
    // (node, next parent index to visit)
    let mut stack: Vec<(Var, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.key());
    while let Some((node, next)) = stack.pop() {
        if next < node.0.parents.len() {
            let parent = node.0.parents[next].clone();
            stack.push((node, next + 1));
            if parent.0.requires_grad && visited.insert(parent.key()) {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

/// Back-propagate from a scalar `loss` to every parameter leaf it reaches.
pub fn backward(loss: &Var) -> Result<Gradients> {
    if loss.value().len() != 1 {
        return Err(Error::Argument(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let mut out = Gradients::default();
    if !loss.requires_grad() {
        return Ok(out);
    }
    let order = topo_order(loss);
    let mut pending: HashMap<*const (), Tensor> = HashMap::new();
    pending.insert(loss.key(), Tensor::full(loss.shape(), 1.0));

    for node in order.iter().rev() {
        let Some(grad) = pending.remove(&node.key()) else {
            continue;
        };
        if let Some(id) = node.0.param {
            match out.grads.get_mut(&id) {
                Some(acc) => acc.add_assign(&grad),
                None => {
                    out.grads.insert(id, grad);
                }
            }
            continue;
        }
        let Some(rule) = &node.0.backward else {
            continue;
        };
        let parent_grads = rule(&grad, &node.0.parents, &node.0.value);
        debug_assert_eq!(parent_grads.len(), node.0.parents.len());
        for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
            let Some(pg) = pg else { continue };
            if !parent.0.requires_grad {
                continue;
            }
            debug_assert_eq!(pg.shape(), parent.shape());
            match pending.get_mut(&parent.key()) {
                Some(acc) => acc.add_assign(&pg),
                None => {
                    pending.insert(parent.key(), pg);
                }
            }
        }
    }
    Ok(out)
}
