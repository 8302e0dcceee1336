//! Gradient tape: records primitive operations in topological order and
//! replays their vector-Jacobian products in reverse.

use super::{Result, Tensor, TensorError};
use std::cell::RefCell;
use std::rc::Rc;

type Vjp = Box<dyn Fn(&[f64]) -> Vec<f64>>;

struct Node {
    /// Tape ids of traced parents; recording order guarantees parents precede children.
    parents: Vec<usize>,
    /// One vector-Jacobian product per traced parent, aligned with `parents`.
    vjps: Vec<Vjp>,
    shape: Vec<usize>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Append-only record of one forward computation. Cheap to clone (shared).
///
/// A tape is meant to live for a single training step: create it, register
/// leaves with [`Tape::var`], run the forward pass, call [`Tape::backward`],
/// then drop it.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ptr_eq(a: &Tape, b: &Tape) -> bool {
        Rc::ptr_eq(&a.inner, &b.inner)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register `t`'s values as a differentiable leaf on this tape.
    pub fn var(&self, t: &Tensor) -> Tensor {
        let id = self.push(vec![], vec![], t.shape().to_vec());
        t.detach().with_node(self.clone(), id)
    }

    pub(crate) fn push(&self, parents: Vec<usize>, vjps: Vec<Vjp>, shape: Vec<usize>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            parents,
            vjps,
            shape,
        });
        inner.nodes.len() - 1
    }

    /// Reverse sweep from a scalar loss. Every leaf reachable from the loss
    /// gets its accumulated gradient; unreachable leaves read back as zeros.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        let (tape, loss_id) = loss
            .node_handle()
            .ok_or(TensorError::NotOnTape { op: "backward" })?;
        if !Tape::ptr_eq(&tape, self) {
            return Err(TensorError::NotOnTape { op: "backward" });
        }
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let inner = self.inner.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; inner.nodes.len()];
        grads[loss_id] = Some(vec![1.0]);
        for id in (0..=loss_id).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let node = &inner.nodes[id];
            for (pid, vjp) in node.parents.iter().zip(node.vjps.iter()) {
                let contrib = vjp(&g);
                match &mut grads[*pid] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(contrib.iter()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let shapes = inner.nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of a backward sweep: gradient of the loss w.r.t. every tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `t`, which must be recorded on the swept tape.
    /// Nodes the loss never reached get a zero gradient.
    pub fn wrt(&self, t: &Tensor) -> Result<Tensor> {
        let (_, id) = t.node_handle().ok_or(TensorError::NotOnTape { op: "wrt" })?;
        let shape = self.shapes[id].clone();
        match &self.grads[id] {
            Some(g) => Tensor::from_vec(shape, g.clone()),
            None => Ok(Tensor::zeros(&shape)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_gradient() {
        // loss = sum(x*x), x=[1,2,3] -> grad x = [2,4,6]
        let tape = Tape::new();
        let x = tape.var(&Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let loss = x.mul(&x).unwrap().sum().unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn exp_gradient_at_zero() {
        // loss = sum(exp(x)), x=[0] -> grad x = [1]
        let tape = Tape::new();
        let x = tape.var(&Tensor::from_vec(vec![1], vec![0.0]).unwrap());
        let loss = x.exp().unwrap().sum().unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.var(&Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let err = tape.backward(&x).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn unreachable_leaf_gets_zero() {
        let tape = Tape::new();
        let x = tape.var(&Tensor::scalar(2.0));
        let y = tape.var(&Tensor::scalar(5.0));
        let loss = x.mul(&x).unwrap().sum().unwrap();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.wrt(&y).unwrap().data(), &[0.0]);
    }

    #[test]
    fn backward_is_linear() {
        // grad of (a*L1 + b*L2) == a*grad(L1) + b*grad(L2)
        let (a, b) = (2.5, -1.25);
        let xv = Tensor::from_vec(vec![3], vec![0.3, -1.1, 2.0]).unwrap();

        let grad_of = |f: &dyn Fn(&Tensor) -> Tensor| -> Vec<f64> {
            let tape = Tape::new();
            let x = tape.var(&xv);
            let loss = f(&x);
            tape.backward(&loss).unwrap().wrt(&x).unwrap().data().to_vec()
        };

        let l1 = |x: &Tensor| x.exp().unwrap().sum().unwrap();
        let l2 = |x: &Tensor| x.mul(x).unwrap().sum().unwrap();
        let combo = |x: &Tensor| {
            let t1 = l1(x).scale(a).unwrap();
            let t2 = l2(x).scale(b).unwrap();
            t1.add(&t2).unwrap()
        };

        let g1 = grad_of(&l1);
        let g2 = grad_of(&l2);
        let gc = grad_of(&combo);
        for i in 0..3 {
            let want = a * g1[i] + b * g2[i];
            assert!((gc[i] - want).abs() < 1e-12, "{} vs {}", gc[i], want);
        }
    }
}
