//! Dense tensors on a reverse-mode gradient tape.
//!
//! A [`Tape`] is an append-only arena of nodes; every parent handle precedes
//! the node that references it, so one reverse sweep visits each node exactly
//! once. Tensors are cheap handles: the value buffer is shared (`Arc`), the
//! tape binding (`Rc`) confines tracked tensors to one thread. Tensors without
//! a tape binding are plain immutable arrays and may cross threads.

mod check;
mod io;
mod ops;

pub use check::finite_diff_check;
pub use io::{read_checkpoint, write_checkpoint, CheckpointManifest, TensorRecord};

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) type BackwardFn<S> = Box<dyn Fn(&[S], &mut GradSink<'_, S>)>;

struct Node<S: Scalar> {
    parents: Vec<usize>,
    size: usize,
    /// `None` marks a leaf.
    backward: Option<BackwardFn<S>>,
}

struct TapeInner<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Records the forward pass for one reverse sweep.
pub struct Tape<S: Scalar = f64> {
    inner: Rc<RefCell<TapeInner<S>>>,
}

impl<S: Scalar> Clone for Tape<S> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `t` as a differentiable leaf and returns the bound handle.
    pub fn watch(&self, t: &Tensor<S>) -> Tensor<S> {
        let id = self.push(Vec::new(), t.len(), None);
        Tensor {
            shape: t.shape.clone(),
            data: Arc::clone(&t.data),
            node: Some(BoundNode {
                tape: self.clone(),
                id,
            }),
        }
    }

    pub(crate) fn record(&self, parents: Vec<usize>, size: usize, backward: BackwardFn<S>) -> usize {
        self.push(parents, size, Some(backward))
    }

    fn push(&self, parents: Vec<usize>, size: usize, backward: Option<BackwardFn<S>>) -> usize {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        debug_assert!(parents.iter().all(|&p| p < id), "parents must precede node");
        inner.nodes.push(Node {
            parents,
            size,
            backward,
        });
        id
    }

    fn same_tape(&self, other: &Tape<S>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Parent handles of a node, for structural inspection in tests.
    pub fn parents_of(&self, id: usize) -> Vec<usize> {
        self.inner.borrow().nodes[id].parents.clone()
    }
}

#[derive(Clone)]
pub(crate) struct BoundNode<S: Scalar> {
    pub(crate) tape: Tape<S>,
    pub(crate) id: usize,
}

/// Dense row-major tensor, optionally bound to a tape node.
pub struct Tensor<S: Scalar = f64> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
    node: Option<BoundNode<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: self.node.clone(),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![S::zero(); n]),
            node: None,
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![value; n]),
            node: None,
        }
    }

    /// One-element tensor.
    pub fn scalar(value: S) -> Self {
        Tensor::full(&[1], value)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![S::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = S::one();
        }
        Tensor {
            shape: vec![n, n],
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data.as_ref().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> S {
        assert!(self.len() == 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|b| b.id)
    }

    /// Same values, no tape binding.
    pub fn detached(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Reinterprets the flat buffer under a new shape of equal length.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let node = self.node.as_ref().map(|bn| {
            let pid = bn.id;
            let id = bn.tape.record(
                vec![pid],
                n,
                Box::new(move |g, sink| sink.add_slice(pid, g)),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            node,
        })
    }

    pub(crate) fn bound(&self) -> Option<&BoundNode<S>> {
        self.node.as_ref()
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<S>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn with_node(shape: Vec<usize>, data: Arc<Vec<S>>, node: Option<BoundNode<S>>) -> Self {
        Tensor { shape, data, node }
    }

    /// In-place mutation of an untracked tensor's values (copy-on-write when
    /// the buffer is shared). Parameter updates go through here.
    pub fn apply(&mut self, f: impl FnOnce(&mut [S])) {
        assert!(self.node.is_none(), "cannot mutate a tracked tensor");
        f(Arc::make_mut(&mut self.data).as_mut_slice());
    }

    /// Backpropagates from a scalar root; see [`backward`].
    pub fn backward(&self) -> Result<Gradients<S>> {
        backward(self)
    }
}

/// Joint tape binding of a set of tensors: the common tape if at least one
/// input is tracked. Panics when two inputs are bound to different tapes.
pub(crate) fn joint_tape<S: Scalar>(inputs: &[&Tensor<S>]) -> Option<Tape<S>> {
    let mut found: Option<Tape<S>> = None;
    for t in inputs {
        if let Some(bn) = &t.node {
            match &found {
                None => found = Some(bn.tape.clone()),
                Some(tape) => assert!(tape.same_tape(&bn.tape), "tensors bound to different tapes"),
            }
        }
    }
    found
}

/// Accumulates parent gradients during the reverse sweep.
pub struct GradSink<'a, S: Scalar> {
    bufs: &'a mut [Option<Vec<S>>],
    sizes: &'a [usize],
}

impl<'a, S: Scalar> GradSink<'a, S> {
    /// Runs `f` on the (lazily zero-initialized) gradient buffer of `node`.
    pub fn accum(&mut self, node: usize, f: impl FnOnce(&mut [S])) {
        let buf = self.bufs[node].get_or_insert_with(|| vec![S::zero(); self.sizes[node]]);
        f(buf);
    }

    pub fn add_slice(&mut self, node: usize, contrib: &[S]) {
        self.accum(node, |buf| {
            for (b, &c) in buf.iter_mut().zip(contrib) {
                *b += c;
            }
        });
    }
}

/// Gradients with respect to tape leaves after one reverse sweep.
pub struct Gradients<S: Scalar = f64> {
    bufs: Vec<Option<Vec<S>>>,
    tape: Tape<S>,
}

impl<S: Scalar> std::fmt::Debug for Gradients<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let populated = self.bufs.iter().filter(|b| b.is_some()).count();
        f.debug_struct("Gradients")
            .field("nodes", &self.bufs.len())
            .field("populated", &populated)
            .finish()
    }
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the root with respect to leaf `t`, materialized with the
    /// same shape; zero when `t` lies on no path to the root.
    pub fn wrt(&self, t: &Tensor<S>) -> Tensor<S> {
        let bn = t
            .node
            .as_ref()
            .expect("gradient requested for a tensor that is not on a tape");
        assert!(
            self.tape.same_tape(&bn.tape),
            "gradient requested from a different tape"
        );
        match &self.bufs[bn.id] {
            Some(buf) => Tensor::from_vec(&t.shape, buf.clone()).expect("shape preserved"),
            None => Tensor::zeros(&t.shape),
        }
    }

    /// Raw gradient buffer for a node id, if any path reached it.
    pub fn raw(&self, node: usize) -> Option<&[S]> {
        self.bufs.get(node).and_then(|b| b.as_deref())
    }
}

/// Reverse sweep from a scalar root: each leaf gradient equals
/// d(root)/d(leaf). The traversal is one pass over node ids in reverse
/// order; interior buffers are dropped as soon as they are consumed.
pub fn backward<S: Scalar>(root: &Tensor<S>) -> Result<Gradients<S>> {
    let bn = root.node.as_ref().ok_or_else(|| {
        Error::Contract("backward requires the root to be recorded on a tape".into())
    })?;
    if root.len() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a scalar root, got shape {:?}",
            root.shape
        )));
    }
    let inner = bn.tape.inner.borrow();
    let sizes: Vec<usize> = inner.nodes.iter().map(|n| n.size).collect();
    let mut bufs: Vec<Option<Vec<S>>> = (0..inner.nodes.len()).map(|_| None).collect();
    bufs[bn.id] = Some(vec![S::one()]);

    for id in (0..=bn.id).rev() {
        let node = &inner.nodes[id];
        let Some(back) = &node.backward else { continue };
        let Some(g) = bufs[id].take() else { continue };
        let mut sink = GradSink {
            bufs: &mut bufs,
            sizes: &sizes,
        };
        back(&g, &mut sink);
    }
    drop(inner);
    Ok(Gradients {
        bufs,
        tape: bn.tape.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_nodes_are_topologically_ordered() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.watch(&Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = x.mul(&x);
        let z = y.sum();
        let zid = z.node_id().unwrap();
        for id in 0..=zid {
            for p in tape.parents_of(id) {
                assert!(p < id);
            }
        }
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_input() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.watch(&Tensor::from_vec(&[4], vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let loss = x.mul(&x).sum();
        let grads = loss.backward().unwrap();
        let gx = grads.wrt(&x);
        for (g, v) in gx.values().iter().zip(x.values()) {
            assert_eq!(*g, 2.0 * v);
        }
    }

    #[test]
    fn leaf_off_path_gets_zero_gradient() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.watch(&Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let unused = tape.watch(&Tensor::from_vec(&[2], vec![5.0, 6.0]).unwrap());
        let loss = x.sum();
        let grads = loss.backward().unwrap();
        assert!(grads.wrt(&unused).values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_scalar_root_is_a_contract_violation() {
        let tape: Tape<f64> = Tape::new();
        let x = tape.watch(&Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let err = backward(&x).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn backward_of_sum_equals_sum_of_backwards() {
        // linearity of accumulation
        let run = |combined: bool| -> (Vec<f64>, Vec<f64>) {
            let tape: Tape<f64> = Tape::new();
            let x = tape.watch(&Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0]).unwrap());
            let a = x.mul(&x).sum();
            let b = x.sum().scale(3.0);
            if combined {
                let s = a.add(&b);
                let g = s.backward().unwrap().wrt(&x).to_vec();
                (g.clone(), g)
            } else {
                let ga = a.backward().unwrap().wrt(&x).to_vec();
                let gb = b.backward().unwrap().wrt(&x).to_vec();
                (ga, gb)
            }
        };
        let (gc, _) = run(true);
        let (ga, gb) = run(false);
        for i in 0..gc.len() {
            assert!((gc[i] - (ga[i] + gb[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_backward_is_deterministic() {
        let make = || {
            let tape: Tape<f64> = Tape::new();
            let x = tape.watch(&Tensor::from_vec(&[3], vec![0.1, 0.2, 0.7]).unwrap());
            let y = x.relu().mul(&x).sum();
            y.backward().unwrap().wrt(&x).to_vec()
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn reshape_checks_length() {
        let t: Tensor<f64> = Tensor::zeros(&[2, 3]);
        assert!(t.reshape(&[3, 2]).is_ok());
        assert!(matches!(
            t.reshape(&[4, 2]).unwrap_err(),
            Error::ShapeMismatch { .. }
        ));
    }
}
