use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::tensor::Tensor;

thread_local! {
    static BACKWARD_NODES: Cell<usize> = const { Cell::new(0) };
}

/// Number of backward closures recorded by every graph on this thread.
///
/// Graphs never cross threads, so the count is exact for the caller.
/// Inference code paths are expected to leave it untouched.
pub fn total_backward_nodes_recorded() -> usize {
    BACKWARD_NODES.with(Cell::get)
}

/// Maps the output gradient to one optional gradient per parent. The slice
/// says which parents actually need a gradient.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// A tape of tensor operations.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
    recorded: Cell<usize>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.borrow().len())
            .field("grad_enabled", &self.grad_enabled)
            .field("recorded", &self.recorded.get())
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            recorded: Cell::new(0),
        }
    }

    /// A graph that never records backward closures. Leaves created on it do
    /// not require gradients.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    /// Backward closures recorded on this graph so far.
    pub fn recorded_backward_nodes(&self) -> usize {
        self.recorded.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            requires_grad: self.grad_enabled,
            parents: Vec::new(),
            backward: None,
        })
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
        })
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Appends an op result. The closure is kept only when some parent needs
    /// a gradient.
    pub(crate) fn record<F>(&self, value: Tensor, parents: &[Var<'_>], backward: F) -> Var<'_>
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let requires_grad =
            self.grad_enabled && parents.iter().any(|p| self.requires_grad_of(p.id));
        let backward: Option<BackwardFn> = if requires_grad {
            self.recorded.set(self.recorded.get() + 1);
            BACKWARD_NODES.with(|n| n.set(n.get() + 1));
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward,
        })
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(output.graph, self),
            "backward on a var from another graph"
        );
        let nodes = self.nodes.borrow();
        let root = &nodes[output.id];
        assert_eq!(root.value.len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        if !root.requires_grad {
            return Gradients { grads };
        }
        grads[output.id] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape, node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the var did not influence the output.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad_of(self.id)
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Var<'g> {
        self.graph.constant((*self.value()).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_grad_graph_records_nothing() {
        let g = Graph::no_grad();
        let x = g.leaf(Tensor::ones(&[4]));
        let y = x.mul(x).sum();
        assert!(!y.requires_grad());
        assert_eq!(g.recorded_backward_nodes(), 0);
    }

    #[test]
    fn fan_out_accumulates() {
        let g = Graph::new();
        let x = g.leaf(Tensor::new(&[2], vec![1.0, 2.0]));
        let y = x.add(x).add(x).sum();
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn detached_branch_gets_no_gradient() {
        let g = Graph::new();
        let x = g.leaf(Tensor::new(&[2], vec![1.0, 2.0]));
        let y = x.mul(x.detach()).sum();
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }
}
