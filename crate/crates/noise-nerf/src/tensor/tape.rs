//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records primitive ops in execution order (inputs always precede
//! outputs, so the record is topologically sorted). [`Tape::backward`] walks the
//! record once in reverse from a scalar root, accumulating per-node gradients.
//! [`Var`]s are cheap handles into the tape; a tape is single-threaded
//! (`Rc`-backed), but disjoint tapes can live on different threads.

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::{kernels, numel_of, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Exp,
    Sin,
    Cos,
    Relu,
    Sigmoid,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary { kind: UnaryKind, x: usize },
    /// Elementwise on equal shapes, or broadcast when either side is a one-element tensor.
    Binary { kind: BinaryKind, a: usize, b: usize },
    Matmul { a: usize, b: usize },
    /// `[m, n] + [n]`, the bias pattern.
    AddRow { x: usize, row: usize },
    ConcatCols { a: usize, b: usize },
    Reshape { x: usize },
    /// Per row of a `[r, n]` tensor: `out[i] = sum of x[..i]`.
    CumsumExclusiveRows { x: usize },
    /// `w: [r, n]` times `c: [r, n, k]`, w broadcast over the last axis.
    MulExpandLast { w: usize, c: usize },
    /// `[r, n, k] -> [r, k]`, summing the middle axis in ascending order.
    SumAxis1 { x: usize },
    SumAll { x: usize },
    MeanAll { x: usize },
    Scale { x: usize, c: f32 },
    AddConst { x: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
}

/// Ordered record of primitive operations; the differentiation context.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to one node on a tape.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

/// Per-node gradient accumulators produced by [`Tape::backward`].
pub struct Gradients {
    tape: Tape,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn same_tape(a: &Tape, b: &Tape) -> bool {
        Rc::ptr_eq(&a.inner, &b.inner)
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Registers a tensor as a leaf; its `requires_grad` flag decides whether
    /// gradients flow into it.
    pub fn leaf(&self, value: Tensor) -> Var {
        let needs = value.requires_grad();
        self.push(value, Op::Leaf, needs)
    }

    /// Registers a tensor as a non-differentiable constant.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value.with_requires_grad(false), Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.clone(), id: inner.nodes.len() - 1 }
    }

    /// Reverse sweep from a scalar root. Every node reachable backwards from the
    /// root gets its accumulator filled (if it participates in differentiation).
    pub fn backward(&self, root: &Var) -> Result<Gradients> {
        if !Tape::same_tape(self, &root.tape) {
            return Err(Error::invalid("backward root does not belong to this tape"));
        }
        let inner = self.inner.borrow();
        let nodes = &inner.nodes;
        let root_node = &nodes[root.id];
        if root_node.value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward root must be scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..nodes.len()).map(|_| None).collect();
        if root_node.needs_grad {
            grads[root.id] = Some(vec![1.0]);
        }
        for id in (0..=root.id).rev() {
            if grads[id].is_none() || !nodes[id].needs_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(id);
            let g = upper[0].as_deref().expect("checked above");
            backprop_node(nodes, id, g, lower);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.map(|data| Tensor::from_raw(nodes[id].value.shape().to_vec(), data)))
            .collect();
        Ok(Gradients { tape: self.clone(), grads })
    }
}

/// Adds `contribution` into the accumulator for node `target`, allocating it lazily.
fn accumulate(lower: &mut [Option<Vec<f32>>], nodes: &[Node], target: usize, contribution: &[f32]) {
    if !nodes[target].needs_grad {
        return;
    }
    let slot = lower[target].get_or_insert_with(|| vec![0.0; nodes[target].value.numel()]);
    debug_assert_eq!(slot.len(), contribution.len());
    for (d, &c) in slot.iter_mut().zip(contribution) {
        *d += c;
    }
}

/// As [`accumulate`], but reduces a full-size contribution into a one-element target
/// (the scalar-broadcast case). Sequential sum keeps the order fixed.
fn accumulate_scalar(lower: &mut [Option<Vec<f32>>], nodes: &[Node], target: usize, contribution: &[f32]) {
    if !nodes[target].needs_grad {
        return;
    }
    let slot = lower[target].get_or_insert_with(|| vec![0.0; 1]);
    slot[0] += kernels::sum(contribution);
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f32], lower: &mut [Option<Vec<f32>>]) {
    match nodes[id].op {
        Op::Leaf => {}
        Op::Unary { kind, x } => {
            let xv = nodes[x].value.data();
            let out = nodes[id].value.data();
            let contrib: Vec<f32> = match kind {
                UnaryKind::Neg => g.iter().map(|&gi| -gi).collect(),
                UnaryKind::Exp => g.iter().zip(out).map(|(&gi, &oi)| gi * oi).collect(),
                UnaryKind::Sin => g.iter().zip(xv).map(|(&gi, &xi)| gi * xi.cos()).collect(),
                UnaryKind::Cos => g.iter().zip(xv).map(|(&gi, &xi)| -gi * xi.sin()).collect(),
                UnaryKind::Relu => g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect(),
                UnaryKind::Sigmoid => g
                    .iter()
                    .zip(out)
                    .map(|(&gi, &oi)| gi * oi * (1.0 - oi))
                    .collect(),
                UnaryKind::Square => g.iter().zip(xv).map(|(&gi, &xi)| gi * 2.0 * xi).collect(),
            };
            accumulate(lower, nodes, x, &contrib);
        }
        Op::Binary { kind, a, b } => {
            let av = nodes[a].value.data();
            let bv = nodes[b].value.data();
            let a_scalar = av.len() == 1 && g.len() != 1;
            let b_scalar = bv.len() == 1 && g.len() != 1;
            let da: Vec<f32> = match kind {
                BinaryKind::Add => g.to_vec(),
                BinaryKind::Sub => g.to_vec(),
                BinaryKind::Mul => {
                    if b_scalar {
                        g.iter().map(|&gi| gi * bv[0]).collect()
                    } else if a_scalar {
                        g.iter().zip(bv).map(|(&gi, &bi)| gi * bi).collect()
                    } else {
                        g.iter().zip(bv).map(|(&gi, &bi)| gi * bi).collect()
                    }
                }
            };
            if a_scalar {
                accumulate_scalar(lower, nodes, a, &da);
            } else {
                accumulate(lower, nodes, a, &da);
            }
            let db: Vec<f32> = match kind {
                BinaryKind::Add => g.to_vec(),
                BinaryKind::Sub => g.iter().map(|&gi| -gi).collect(),
                BinaryKind::Mul => {
                    if a_scalar {
                        g.iter().map(|&gi| gi * av[0]).collect()
                    } else {
                        g.iter().zip(av).map(|(&gi, &ai)| gi * ai).collect()
                    }
                }
            };
            if b_scalar {
                accumulate_scalar(lower, nodes, b, &db);
            } else {
                accumulate(lower, nodes, b, &db);
            }
        }
        Op::Matmul { a, b } => {
            let (m, k) = mat_dims(&nodes[a].value);
            let n = mat_dims(&nodes[b].value).1;
            let da = kernels::matmul_grad_lhs(g, nodes[b].value.data(), m, k, n);
            accumulate(lower, nodes, a, &da);
            let db = kernels::matmul_grad_rhs(nodes[a].value.data(), g, m, k, n);
            accumulate(lower, nodes, b, &db);
        }
        Op::AddRow { x, row } => {
            accumulate(lower, nodes, x, g);
            let n = nodes[row].value.numel();
            let m = nodes[x].value.numel() / n;
            let mut drow = vec![0.0f32; n];
            for i in 0..m {
                let grow = &g[i * n..(i + 1) * n];
                for j in 0..n {
                    drow[j] += grow[j];
                }
            }
            accumulate(lower, nodes, row, &drow);
        }
        Op::ConcatCols { a, b } => {
            let (m, p) = mat_dims(&nodes[a].value);
            let q = mat_dims(&nodes[b].value).1;
            let mut da = vec![0.0f32; m * p];
            let mut db = vec![0.0f32; m * q];
            for i in 0..m {
                let grow = &g[i * (p + q)..(i + 1) * (p + q)];
                da[i * p..(i + 1) * p].copy_from_slice(&grow[..p]);
                db[i * q..(i + 1) * q].copy_from_slice(&grow[p..]);
            }
            accumulate(lower, nodes, a, &da);
            accumulate(lower, nodes, b, &db);
        }
        Op::Reshape { x } => {
            accumulate(lower, nodes, x, g);
        }
        Op::CumsumExclusiveRows { x } => {
            let (r, n) = mat_dims(&nodes[x].value);
            let mut dx = vec![0.0f32; r * n];
            for i in 0..r {
                let grow = &g[i * n..(i + 1) * n];
                let dxrow = &mut dx[i * n..(i + 1) * n];
                // out[j2] depends on x[j] for j < j2, so dx[j] = suffix sum of g.
                let mut acc = 0.0f32;
                for j in (0..n).rev() {
                    dxrow[j] = acc;
                    acc += grow[j];
                }
            }
            accumulate(lower, nodes, x, &dx);
        }
        Op::MulExpandLast { w, c } => {
            let (r, n) = mat_dims(&nodes[w].value);
            let k = nodes[c].value.shape()[2];
            let wv = nodes[w].value.data();
            let cv = nodes[c].value.data();
            let mut dw = vec![0.0f32; r * n];
            let mut dc = vec![0.0f32; r * n * k];
            for rn in 0..r * n {
                let base = rn * k;
                let mut acc = 0.0f32;
                for t in 0..k {
                    acc += g[base + t] * cv[base + t];
                    dc[base + t] = g[base + t] * wv[rn];
                }
                dw[rn] = acc;
            }
            accumulate(lower, nodes, w, &dw);
            accumulate(lower, nodes, c, &dc);
        }
        Op::SumAxis1 { x } => {
            let shape = nodes[x].value.shape();
            let (r, n, k) = (shape[0], shape[1], shape[2]);
            let mut dx = vec![0.0f32; r * n * k];
            for i in 0..r {
                let grow = &g[i * k..(i + 1) * k];
                for j in 0..n {
                    let base = (i * n + j) * k;
                    dx[base..base + k].copy_from_slice(grow);
                }
            }
            accumulate(lower, nodes, x, &dx);
        }
        Op::SumAll { x } => {
            let contrib = vec![g[0]; nodes[x].value.numel()];
            accumulate(lower, nodes, x, &contrib);
        }
        Op::MeanAll { x } => {
            let n = nodes[x].value.numel();
            let contrib = vec![g[0] / n as f32; n];
            accumulate(lower, nodes, x, &contrib);
        }
        Op::Scale { x, c } => {
            let contrib: Vec<f32> = g.iter().map(|&gi| gi * c).collect();
            accumulate(lower, nodes, x, &contrib);
        }
        Op::AddConst { x } => {
            accumulate(lower, nodes, x, g);
        }
    }
}

fn mat_dims(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    debug_assert_eq!(s.len(), 2);
    (s[0], s[1])
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].value.numel()
    }

    /// Clones the node's value off the tape.
    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    /// Zero-copy access to the node's data.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f32]) -> R) -> R {
        f(self.tape.inner.borrow().nodes[self.id].value.data())
    }

    /// Value of a scalar node.
    pub fn item(&self) -> Result<f32> {
        self.tape.inner.borrow().nodes[self.id].value.item()
    }

    fn needs_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].needs_grad
    }

    fn unary(&self, kind: UnaryKind) -> Var {
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            let data: Vec<f32> = match kind {
                UnaryKind::Neg => x.data().iter().map(|&v| -v).collect(),
                UnaryKind::Exp => x.data().iter().map(|&v| v.exp()).collect(),
                UnaryKind::Sin => x.data().iter().map(|&v| v.sin()).collect(),
                UnaryKind::Cos => x.data().iter().map(|&v| v.cos()).collect(),
                UnaryKind::Relu => x.data().iter().map(|&v| kernels::relu(v)).collect(),
                UnaryKind::Sigmoid => x.data().iter().map(|&v| kernels::sigmoid(v)).collect(),
                UnaryKind::Square => x.data().iter().map(|&v| v * v).collect(),
            };
            Tensor::from_raw(x.shape().to_vec(), data)
        };
        self.tape.push(value, Op::Unary { kind, x: self.id }, self.needs_grad())
    }

    pub fn neg(&self) -> Var {
        self.unary(UnaryKind::Neg)
    }

    pub fn exp(&self) -> Var {
        self.unary(UnaryKind::Exp)
    }

    pub fn sin(&self) -> Var {
        self.unary(UnaryKind::Sin)
    }

    pub fn cos(&self) -> Var {
        self.unary(UnaryKind::Cos)
    }

    pub fn relu(&self) -> Var {
        self.unary(UnaryKind::Relu)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn square(&self) -> Var {
        self.unary(UnaryKind::Square)
    }

    pub fn scale(&self, c: f32) -> Var {
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            Tensor::from_raw(x.shape().to_vec(), x.data().iter().map(|&v| v * c).collect())
        };
        self.tape.push(value, Op::Scale { x: self.id, c }, self.needs_grad())
    }

    pub fn add_const(&self, c: f32) -> Var {
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            Tensor::from_raw(x.shape().to_vec(), x.data().iter().map(|&v| v + c).collect())
        };
        self.tape.push(value, Op::AddConst { x: self.id }, self.needs_grad())
    }

    fn binary(&self, rhs: &Var, kind: BinaryKind) -> Result<Var> {
        if !Tape::same_tape(&self.tape, &rhs.tape) {
            return Err(Error::invalid("operands live on different tapes"));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[rhs.id].value;
            let f = |x: f32, y: f32| match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
            };
            if a.shape() == b.shape() {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::from_raw(a.shape().to_vec(), data)
            } else if a.is_scalar() {
                let x = a.data()[0];
                let data = b.data().iter().map(|&y| f(x, y)).collect();
                Tensor::from_raw(b.shape().to_vec(), data)
            } else if b.is_scalar() {
                let y = b.data()[0];
                let data = a.data().iter().map(|&x| f(x, y)).collect();
                Tensor::from_raw(a.shape().to_vec(), data)
            } else {
                return Err(Error::shape(format!(
                    "elementwise op needs equal shapes or a scalar operand: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        };
        let needs = self.needs_grad() || rhs.needs_grad();
        Ok(self.tape.push(value, Op::Binary { kind, a: self.id, b: rhs.id }, needs))
    }

    pub fn add(&self, rhs: &Var) -> Result<Var> {
        self.binary(rhs, BinaryKind::Add)
    }

    pub fn sub(&self, rhs: &Var) -> Result<Var> {
        self.binary(rhs, BinaryKind::Sub)
    }

    pub fn mul(&self, rhs: &Var) -> Result<Var> {
        self.binary(rhs, BinaryKind::Mul)
    }

    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        if !Tape::same_tape(&self.tape, &rhs.tape) {
            return Err(Error::invalid("operands live on different tapes"));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[rhs.id].value;
            if a.shape().len() != 2 || b.shape().len() != 2 {
                return Err(Error::shape("matmul operands must be rank 2"));
            }
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (k2, n) = (b.shape()[0], b.shape()[1]);
            if k != k2 {
                return Err(Error::shape(format!(
                    "matmul inner dims differ: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            Tensor::from_raw(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))
        };
        let needs = self.needs_grad() || rhs.needs_grad();
        Ok(self.tape.push(value, Op::Matmul { a: self.id, b: rhs.id }, needs))
    }

    /// Adds a rank-1 row vector to every row of a rank-2 tensor.
    pub fn add_row(&self, row: &Var) -> Result<Var> {
        if !Tape::same_tape(&self.tape, &row.tape) {
            return Err(Error::invalid("operands live on different tapes"));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            let r = &inner.nodes[row.id].value;
            if x.shape().len() != 2 || r.shape().len() != 1 || x.shape()[1] != r.shape()[0] {
                return Err(Error::shape(format!(
                    "add_row wants [m, n] + [n], got {:?} + {:?}",
                    x.shape(),
                    r.shape()
                )));
            }
            let n = r.shape()[0];
            let mut data = x.data().to_vec();
            for chunk in data.chunks_mut(n) {
                for (d, &b) in chunk.iter_mut().zip(r.data()) {
                    *d += b;
                }
            }
            Tensor::from_raw(x.shape().to_vec(), data)
        };
        let needs = self.needs_grad() || row.needs_grad();
        Ok(self.tape.push(value, Op::AddRow { x: self.id, row: row.id }, needs))
    }

    pub fn concat_cols(&self, rhs: &Var) -> Result<Var> {
        if !Tape::same_tape(&self.tape, &rhs.tape) {
            return Err(Error::invalid("operands live on different tapes"));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id].value;
            let b = &inner.nodes[rhs.id].value;
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[0] != b.shape()[0] {
                return Err(Error::shape(format!(
                    "concat_cols wants matching row counts, got {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (m, p) = (a.shape()[0], a.shape()[1]);
            let q = b.shape()[1];
            let mut data = Vec::with_capacity(m * (p + q));
            for i in 0..m {
                data.extend_from_slice(&a.data()[i * p..(i + 1) * p]);
                data.extend_from_slice(&b.data()[i * q..(i + 1) * q]);
            }
            Tensor::from_raw(vec![m, p + q], data)
        };
        let needs = self.needs_grad() || rhs.needs_grad();
        Ok(self.tape.push(value, Op::ConcatCols { a: self.id, b: rhs.id }, needs))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            crate::tensor::validate_shape(shape)?;
            if numel_of(shape) != x.numel() {
                return Err(Error::shape(format!(
                    "reshape {:?} -> {:?} changes element count",
                    x.shape(),
                    shape
                )));
            }
            Tensor::from_raw(shape.to_vec(), x.data().to_vec())
        };
        Ok(self.tape.push(value, Op::Reshape { x: self.id }, self.needs_grad()))
    }

    /// Exclusive prefix sum along each row of a rank-2 tensor.
    pub fn cumsum_exclusive_rows(&self) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            if x.shape().len() != 2 {
                return Err(Error::shape("cumsum_exclusive_rows wants rank 2"));
            }
            let (r, n) = (x.shape()[0], x.shape()[1]);
            let xv = x.data();
            let mut data = vec![0.0f32; r * n];
            for i in 0..r {
                let mut acc = 0.0f32;
                for j in 0..n {
                    data[i * n + j] = acc;
                    acc += xv[i * n + j];
                }
            }
            Tensor::from_raw(vec![r, n], data)
        };
        Ok(self.tape.push(value, Op::CumsumExclusiveRows { x: self.id }, self.needs_grad()))
    }

    /// `self: [r, n]` broadcast-multiplied over the last axis of `c: [r, n, k]`.
    pub fn mul_expand_last(&self, c: &Var) -> Result<Var> {
        if !Tape::same_tape(&self.tape, &c.tape) {
            return Err(Error::invalid("operands live on different tapes"));
        }
        let value = {
            let inner = self.tape.inner.borrow();
            let w = &inner.nodes[self.id].value;
            let cv = &inner.nodes[c.id].value;
            if w.shape().len() != 2
                || cv.shape().len() != 3
                || w.shape() != &cv.shape()[..2]
            {
                return Err(Error::shape(format!(
                    "mul_expand_last wants [r, n] x [r, n, k], got {:?} x {:?}",
                    w.shape(),
                    cv.shape()
                )));
            }
            let k = cv.shape()[2];
            let mut data = vec![0.0f32; cv.numel()];
            for (rn, &wv) in w.data().iter().enumerate() {
                let base = rn * k;
                for t in 0..k {
                    data[base + t] = wv * cv.data()[base + t];
                }
            }
            Tensor::from_raw(cv.shape().to_vec(), data)
        };
        let needs = self.needs_grad() || c.needs_grad();
        Ok(self.tape.push(value, Op::MulExpandLast { w: self.id, c: c.id }, needs))
    }

    /// Sums the middle axis of a rank-3 tensor, ascending, giving `[r, k]`.
    pub fn sum_axis1(&self) -> Result<Var> {
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            if x.shape().len() != 3 {
                return Err(Error::shape("sum_axis1 wants rank 3"));
            }
            let (r, n, k) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let xv = x.data();
            let mut data = vec![0.0f32; r * k];
            for i in 0..r {
                let orow = &mut data[i * k..(i + 1) * k];
                for j in 0..n {
                    let base = (i * n + j) * k;
                    for t in 0..k {
                        orow[t] += xv[base + t];
                    }
                }
            }
            Tensor::from_raw(vec![r, k], data)
        };
        Ok(self.tape.push(value, Op::SumAxis1 { x: self.id }, self.needs_grad()))
    }

    pub fn sum_all(&self) -> Var {
        let value = {
            let inner = self.tape.inner.borrow();
            Tensor::from_raw(vec![1], vec![kernels::sum(inner.nodes[self.id].value.data())])
        };
        self.tape.push(value, Op::SumAll { x: self.id }, self.needs_grad())
    }

    pub fn mean_all(&self) -> Var {
        let value = {
            let inner = self.tape.inner.borrow();
            let x = &inner.nodes[self.id].value;
            Tensor::from_raw(vec![1], vec![kernels::sum(x.data()) / x.numel() as f32])
        };
        self.tape.push(value, Op::MeanAll { x: self.id }, self.needs_grad())
    }

    /// Mean squared error against a same-shaped target.
    pub fn mse(&self, target: &Var) -> Result<Var> {
        if self.shape() != target.shape() {
            return Err(Error::shape(format!(
                "mse wants equal shapes, got {:?} vs {:?}",
                self.shape(),
                target.shape()
            )));
        }
        Ok(self.sub(target)?.square().mean_all())
    }
}

impl Gradients {
    /// Gradient of the backward root with respect to `v`, if any flowed there.
    pub fn wrt(&self, v: &Var) -> Option<&Tensor> {
        if !Tape::same_tape(&self.tape, &v.tape) {
            return None;
        }
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }
}
