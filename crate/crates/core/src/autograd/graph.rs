use super::tensor::{self, Activation, BinaryKind, ReduceKind, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Var, Var, BinaryKind),
    // saved pre-activation input
    Unary(Var, Activation),
    Reduce(Var, ReduceKind),
    Transpose(Var),
    AddBias(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Append-only record of one forward pass.
///
/// Inputs always precede outputs, so insertion order is a topological order
/// and [`Graph::backward`] is a single reverse sweep. Leaves created with
/// [`Graph::param`] receive gradients; constants and detached nodes do not.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        debug_assert!(value.grad().is_none());
        self.nodes.push(Node { value, op, tracked });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// A trainable leaf. Its gradient is available after `backward`.
    pub fn param(&mut self, value: &Tensor) -> Var {
        let mut value = value.clone();
        value.zero_grad();
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        let mut value = value;
        value.zero_grad();
        self.push(value, Op::Leaf, false)
    }

    /// Same values as `v`, with no link back to `v`'s ancestors.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::MatMul(a, b), tracked))
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let out = tensor::elementwise(self.value(a), self.value(b), kind)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(out, Op::Binary(a, b, kind), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let out = tensor::activation(self.value(a), kind);
        let tracked = self.tracked(a);
        self.push(out, Op::Unary(a, kind), tracked)
    }

    pub fn reduce(&mut self, a: Var, kind: ReduceKind) -> Var {
        let out = tensor::reduce(self.value(a), kind);
        let tracked = self.tracked(a);
        self.push(out, Op::Reduce(a, kind), tracked)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = tensor::transpose(self.value(a))?;
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Transpose(a), tracked))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = tensor::add_bias(self.value(x), self.value(bias))?;
        let tracked = self.tracked(x) || self.tracked(bias);
        Ok(self.push(out, Op::AddBias(x, bias), tracked))
    }

    pub fn mul_row(&mut self, x: Var, w: Var) -> Result<Var> {
        let out = tensor::mul_row(self.value(x), self.value(w))?;
        let tracked = self.tracked(x) || self.tracked(w);
        Ok(self.push(out, Op::MulRow(x, w), tracked))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = tensor::scale(self.value(a), c);
        let tracked = self.tracked(a);
        self.push(out, Op::Scale(a, c), tracked)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(out, Op::Reshape(a), tracked))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let n = self.value(d).numel() as f64;
        let s = self.reduce(d, ReduceKind::SqL2);
        Ok(self.scale(s, 1.0 / n))
    }

    /// Accumulated gradient of a leaf created by [`Graph::param`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// Propagates `∂loss/∂leaf` into every tracked leaf. Calling it again
    /// adds a second copy of the gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        if !self.tracked(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.tracked {
                continue;
            }
            match node.op {
                Op::Leaf => {
                    match &mut self.leaf_grads[id] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    if self.tracked(a) {
                        // dA = G · Bᵀ
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let g_row = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let b_row = &bv.data()[p * n..(p + 1) * n];
                                da[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                            }
                        }
                        accumulate(&mut adj, a, da);
                    }
                    if self.tracked(b) {
                        // dB = Aᵀ · G
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let g_row = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aval = av.data()[i * k + p];
                                for (o, gv) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                    *o += aval * gv;
                                }
                            }
                        }
                        accumulate(&mut adj, b, db);
                    }
                }
                Op::Binary(a, b, kind) => {
                    let (ta, tb) = (self.tracked(a), self.tracked(b));
                    match kind {
                        BinaryKind::Add => {
                            if ta {
                                accumulate(&mut adj, a, g.clone());
                            }
                            if tb {
                                accumulate(&mut adj, b, g);
                            }
                        }
                        BinaryKind::Sub => {
                            if ta {
                                accumulate(&mut adj, a, g.clone());
                            }
                            if tb {
                                accumulate(&mut adj, b, g.iter().map(|x| -x).collect());
                            }
                        }
                        BinaryKind::Mul => {
                            let av = self.nodes[a.0].value.data();
                            let bv = self.nodes[b.0].value.data();
                            if ta {
                                let da = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                                accumulate(&mut adj, a, da);
                            }
                            if tb {
                                let db = g.iter().zip(av).map(|(x, y)| x * y).collect();
                                accumulate(&mut adj, b, db);
                            }
                        }
                    }
                }
                Op::Unary(a, kind) => {
                    let x = self.nodes[a.0].value.data();
                    let y = node.value.data();
                    let da = g
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(gv, (&xv, &yv))| gv * kind.derivative(xv, yv))
                        .collect();
                    accumulate(&mut adj, a, da);
                }
                Op::Reduce(a, kind) => {
                    let x = self.nodes[a.0].value.data();
                    let g0 = g[0];
                    let da = match kind {
                        ReduceKind::Sum => vec![g0; x.len()],
                        ReduceKind::Mean => vec![g0 / x.len() as f64; x.len()],
                        ReduceKind::L1 => x.iter().map(|&v| g0 * sign(v)).collect(),
                        ReduceKind::SqL2 => x.iter().map(|&v| g0 * 2.0 * v).collect(),
                    };
                    accumulate(&mut adj, a, da);
                }
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    let (rows, cols) = (s[0], s[1]);
                    // output is rows×cols, input is cols×rows
                    let mut da = vec![0.0; rows * cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            da[j * rows + i] = g[i * cols + j];
                        }
                    }
                    accumulate(&mut adj, a, da);
                }
                Op::AddBias(x, bias) => {
                    let n = node.value.cols();
                    if self.tracked(bias) {
                        let mut db = vec![0.0; n];
                        for row in g.chunks(n) {
                            db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        accumulate(&mut adj, bias, db);
                    }
                    if self.tracked(x) {
                        accumulate(&mut adj, x, g);
                    }
                }
                Op::MulRow(x, w) => {
                    let xv = self.nodes[x.0].value.data();
                    let wv = self.nodes[w.0].value.data();
                    let n = wv.len();
                    if self.tracked(w) {
                        let mut dw = vec![0.0; n];
                        for (g_row, x_row) in g.chunks(n).zip(xv.chunks(n)) {
                            for j in 0..n {
                                dw[j] += g_row[j] * x_row[j];
                            }
                        }
                        accumulate(&mut adj, w, dw);
                    }
                    if self.tracked(x) {
                        let dx = g
                            .chunks(n)
                            .flat_map(|row| row.iter().zip(wv).map(|(a, b)| a * b))
                            .collect();
                        accumulate(&mut adj, x, dx);
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut adj, a, g.iter().map(|x| x * c).collect());
                }
                Op::Reshape(a) => accumulate(&mut adj, a, g),
            }
        }
        Ok(())
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}
