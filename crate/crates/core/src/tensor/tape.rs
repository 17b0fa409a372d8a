use std::cell::RefCell;
use std::fmt;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    MeanRows(usize),
    L2NormalizeRows { input: usize, norms: Vec<f64> },
    ConcatRows(usize, usize),
    GatherRows { table: usize, ids: Vec<usize> },
    Log(usize),
    ClampMin { input: usize, floor: f64 },
    MulElem(usize, usize),
    Add(usize, usize),
    AddRowBias(usize, usize),
    Scale(usize, f64),
    SumAll(usize),
    Neg(usize),
    Tanh(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered record of executed operations.
///
/// Nodes are appended as operations run, so node ids are a topological
/// order and the backward pass is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A frozen input: never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// A trainable input.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Clears every stored gradient.
    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Reverse sweep from a scalar `loss`, accumulating into stored grads.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss was recorded on another tape".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Ok(());
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(vec![1.0]);
        let mut finished: Vec<(usize, Vec<f64>)> = Vec::new();

        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut adj);
            finished.push((id, g));
        }

        for (id, g) in finished {
            match nodes[id].grad.as_mut() {
                Some(acc) => kernels::add_assign(acc, &g),
                None => nodes[id].grad = Some(g),
            }
        }
        Ok(())
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }
}

fn accumulate(nodes: &[Node], adj: &mut [Option<Vec<f64>>], id: usize, contrib: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match adj[id].as_mut() {
        Some(acc) => kernels::add_assign(acc, &contrib),
        None => adj[id] = Some(contrib),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (r, s, c) = (av.rows(), av.cols(), bv.cols());
            if nodes[*a].requires_grad {
                accumulate(nodes, adj, *a, kernels::matmul_bt(g, bv.data(), r, s, c));
            }
            if nodes[*b].requires_grad {
                accumulate(nodes, adj, *b, kernels::matmul_at(av.data(), g, r, s, c));
            }
        }
        Op::Transpose(a) => {
            // g has the output shape c×r
            let (r, c) = (out.rows(), out.cols());
            accumulate(nodes, adj, *a, kernels::transpose(g, r, c));
        }
        Op::SoftmaxRows(a) => {
            let c = out.cols();
            let mut contrib = vec![0.0; g.len()];
            for (i, dst) in contrib.chunks_mut(c).enumerate() {
                let y = out.row(i);
                let gr = &g[i * c..(i + 1) * c];
                let dot: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    dst[j] = y[j] * (gr[j] - dot);
                }
            }
            accumulate(nodes, adj, *a, contrib);
        }
        Op::LogSoftmaxRows(a) => {
            let c = out.cols();
            let mut contrib = vec![0.0; g.len()];
            for (i, dst) in contrib.chunks_mut(c).enumerate() {
                let gr = &g[i * c..(i + 1) * c];
                let total: f64 = gr.iter().sum();
                for j in 0..c {
                    dst[j] = gr[j] - out.row(i)[j].exp() * total;
                }
            }
            accumulate(nodes, adj, *a, contrib);
        }
        Op::MeanRows(a) => {
            let av = &nodes[*a].value;
            let r = av.rows();
            let inv = 1.0 / r as f64;
            let row: Vec<f64> = g.iter().map(|v| v * inv).collect();
            accumulate(nodes, adj, *a, row.repeat(r));
        }
        Op::L2NormalizeRows { input, norms } => {
            let c = out.cols();
            let mut contrib = vec![0.0; g.len()];
            for (i, dst) in contrib.chunks_mut(c).enumerate() {
                let y = out.row(i);
                let gr = &g[i * c..(i + 1) * c];
                let dot: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    dst[j] = (gr[j] - y[j] * dot) / norms[i];
                }
            }
            accumulate(nodes, adj, *input, contrib);
        }
        Op::ConcatRows(a, b) => {
            let split = nodes[*a].value.numel();
            accumulate(nodes, adj, *a, g[..split].to_vec());
            accumulate(nodes, adj, *b, g[split..].to_vec());
        }
        Op::GatherRows { table, ids } => {
            let tv = &nodes[*table].value;
            let c = tv.cols();
            let mut contrib = vec![0.0; tv.numel()];
            for (k, &id) in ids.iter().enumerate() {
                kernels::add_assign(&mut contrib[id * c..(id + 1) * c], &g[k * c..(k + 1) * c]);
            }
            accumulate(nodes, adj, *table, contrib);
        }
        Op::Log(a) => {
            let av = nodes[*a].value.data();
            let contrib = g.iter().zip(av).map(|(gv, x)| gv / x).collect();
            accumulate(nodes, adj, *a, contrib);
        }
        Op::ClampMin { input, floor } => {
            let av = nodes[*input].value.data();
            let contrib = g
                .iter()
                .zip(av)
                .map(|(gv, x)| if x >= floor { *gv } else { 0.0 })
                .collect();
            accumulate(nodes, adj, *input, contrib);
        }
        Op::MulElem(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            if nodes[*a].requires_grad {
                let contrib = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                accumulate(nodes, adj, *a, contrib);
            }
            if nodes[*b].requires_grad {
                let contrib = g.iter().zip(av).map(|(x, y)| x * y).collect();
                accumulate(nodes, adj, *b, contrib);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, adj, *a, g.to_vec());
            accumulate(nodes, adj, *b, g.to_vec());
        }
        Op::AddRowBias(a, b) => {
            let c = out.cols();
            accumulate(nodes, adj, *a, g.to_vec());
            if nodes[*b].requires_grad {
                let mut col_sums = vec![0.0; c];
                for row in g.chunks(c) {
                    kernels::add_assign(&mut col_sums, row);
                }
                accumulate(nodes, adj, *b, col_sums);
            }
        }
        Op::Scale(a, s) => {
            accumulate(nodes, adj, *a, g.iter().map(|v| v * s).collect());
        }
        Op::SumAll(a) => {
            let n = nodes[*a].value.numel();
            accumulate(nodes, adj, *a, vec![g[0]; n]);
        }
        Op::Neg(a) => {
            accumulate(nodes, adj, *a, g.iter().map(|v| -v).collect());
        }
        Op::Tanh(a) => {
            let y = out.data();
            let contrib = g.iter().zip(y).map(|(gv, t)| gv * (1.0 - t * t)).collect();
            accumulate(nodes, adj, *a, contrib);
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient, shaped like the value. `None` before any backward
    /// reached this node.
    pub fn grad(&self) -> Option<Tensor> {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn backward(self) -> Result<()> {
        self.tape.backward(self)
    }

    fn same_tape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract(format!("{op}: operands live on different tapes")))
        }
    }

    fn unary(self, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, op: Op, value: Tensor) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other, "matmul")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul(&nodes[other.id].value)?
        };
        Ok(self.binary(other, Op::MatMul(self.id, other.id), value))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let value = self.with_value(Tensor::transpose)?;
        Ok(self.unary(Op::Transpose(self.id), value))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let value = self.with_value(|a| -> Result<Tensor> {
            a.require_matrix("softmax_rows")?;
            check_finite(a, "softmax_rows")?;
            let c = a.cols();
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            Tensor::new(a.shape().to_vec(), data)
        })?;
        Ok(self.unary(Op::SoftmaxRows(self.id), value))
    }

    pub fn log_softmax_rows(self) -> Result<Var<'t>> {
        let value = self.with_value(|a| -> Result<Tensor> {
            a.require_matrix("log_softmax_rows")?;
            check_finite(a, "log_softmax_rows")?;
            let c = a.cols();
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
            Tensor::new(a.shape().to_vec(), data)
        })?;
        Ok(self.unary(Op::LogSoftmaxRows(self.id), value))
    }

    /// Column-wise mean, `r×c → 1×c`.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let value = self.with_value(|a| -> Result<Tensor> {
            a.require_matrix("mean_rows")?;
            let (r, c) = (a.rows(), a.cols());
            if r == 0 {
                return Err(Error::EmptyInput { op: "mean_rows" });
            }
            let mut sums = vec![0.0; c];
            for row in a.data().chunks(c) {
                kernels::add_assign(&mut sums, row);
            }
            let inv = 1.0 / r as f64;
            Tensor::matrix(1, c, sums.into_iter().map(|s| s * inv).collect())
        })?;
        Ok(self.unary(Op::MeanRows(self.id), value))
    }

    pub fn l2_normalize_rows(self) -> Result<Var<'t>> {
        let (value, norms) = self.with_value(|a| -> Result<(Tensor, Vec<f64>)> {
            a.require_matrix("l2_normalize_rows")?;
            let c = a.cols();
            let mut data = a.data().to_vec();
            let mut norms = Vec::with_capacity(a.rows());
            for (i, row) in data.chunks_mut(c).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm >= 1e-12) {
                    return Err(Error::DegenerateRow { row: i, norm });
                }
                for v in row.iter_mut() {
                    *v /= norm;
                }
                norms.push(norm);
            }
            Ok((Tensor::new(a.shape().to_vec(), data)?, norms))
        })?;
        Ok(self.unary(
            Op::L2NormalizeRows {
                input: self.id,
                norms,
            },
            value,
        ))
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat_rows(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other, "concat_rows")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            a.require_matrix("concat_rows")?;
            b.require_matrix("concat_rows")?;
            if a.cols() != b.cols() {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::matrix(a.rows() + b.rows(), a.cols(), data)?
        };
        Ok(self.binary(other, Op::ConcatRows(self.id, other.id), value))
    }

    /// Selects rows of a lookup table; the backward pass scatter-adds.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t>> {
        let value = self.with_value(|t| -> Result<Tensor> {
            t.require_matrix("gather_rows")?;
            let c = t.cols();
            let mut data = Vec::with_capacity(ids.len() * c);
            for &id in ids {
                if id >= t.rows() {
                    return Err(Error::Input(format!(
                        "gather_rows: id {id} out of range for table with {} rows",
                        t.rows()
                    )));
                }
                data.extend_from_slice(t.row(id));
            }
            Tensor::matrix(ids.len(), c, data)
        })?;
        Ok(self.unary(
            Op::GatherRows {
                table: self.id,
                ids: ids.to_vec(),
            },
            value,
        ))
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log_elem(self) -> Result<Var<'t>> {
        let value = self.with_value(|a| -> Result<Tensor> {
            if let Some((index, &v)) = a.data().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::Numeric {
                    op: "log_elem",
                    index,
                    detail: format!("log of non-positive value {v}"),
                });
            }
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| v.ln()).collect())
        })?;
        Ok(self.unary(Op::Log(self.id), value))
    }

    /// `max(x, floor)` elementwise; gradient is cut where the floor is active.
    pub fn clamp_min(self, floor: f64) -> Var<'t> {
        let value = self.with_value(|a| {
            Tensor::new(
                a.shape().to_vec(),
                a.data().iter().map(|v| v.max(floor)).collect(),
            )
            .expect("same shape")
        });
        self.unary(
            Op::ClampMin {
                input: self.id,
                floor,
            },
            value,
        )
    }

    pub fn mul_elem(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.zip_same_shape(&other, "mul_elem", |a, b| a * b)?;
        Ok(self.binary(other, Op::MulElem(self.id, other.id), value))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.zip_same_shape(&other, "add", |a, b| a + b)?;
        Ok(self.binary(other, Op::Add(self.id, other.id), value))
    }

    /// Adds a `1×c` bias to every row of an `r×c` matrix.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias, "add_row_bias")?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            a.require_matrix("add_row_bias")?;
            if b.shape() != [1, a.cols()] {
                return Err(Error::Dimension {
                    op: "add_row_bias",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(a.cols()) {
                kernels::add_assign(row, b.data());
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.binary(bias, Op::AddRowBias(self.id, bias.id), value))
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let value = self.map(|v| v * factor);
        self.unary(Op::Scale(self.id, factor), value)
    }

    pub fn neg(self) -> Var<'t> {
        let value = self.map(|v| -v);
        self.unary(Op::Neg(self.id), value)
    }

    pub fn tanh(self) -> Var<'t> {
        let value = self.map(f64::tanh);
        self.unary(Op::Tanh(self.id), value)
    }

    /// Sum of every entry as a rank-0 scalar.
    pub fn sum_all(self) -> Var<'t> {
        let value = self.with_value(|a| Tensor::scalar(a.data().iter().sum()));
        self.unary(Op::SumAll(self.id), value)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        self.with_value(|a| {
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|&v| f(v)).collect())
                .expect("same shape")
        })
    }

    fn zip_same_shape(
        &self,
        other: &Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.same_tape(other, op)?;
        let nodes = self.tape.nodes.borrow();
        let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
        if a.shape() != b.shape() {
            return Err(Error::Dimension {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        Tensor::new(
            a.shape().to_vec(),
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }
}

fn check_finite(a: &Tensor, op: &'static str) -> Result<()> {
    match a.data().iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::Numeric {
            op,
            index,
            detail: format!("non-finite input {}", a.data()[index]),
        }),
        None => Ok(()),
    }
}
