//! Operation recording and reverse-mode replay.
//!
//! Values are computed eagerly when an operation is pushed; the tape keeps
//! each node's value plus whatever the backward rule needs. Node ids are
//! assigned in push order, so the node list is already topologically sorted.

use crate::kernels::{gemm, log_softmax_row, softmax_row, MatRef};
use crate::tensor::row_stats;
use crate::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddTiled { x: Var, table: Var, block: usize },
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows { x: Var, probs: Vec<f64> },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    GroupMean { x: Var, group: usize },
    PickCols { x: Var, idx: Vec<usize> },
    Clamp { x: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
    Reshape(Var),
    AttentionScores {
        q: Var,
        k: Var,
        users: usize,
        heads: usize,
        scale: f64,
    },
    AttentionMix {
        alpha: Var,
        v: Var,
        users: usize,
        heads: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records a computation for one forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::gradients`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it required one.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Tensor::new(self.shapes[var.0].clone(), g.clone()).ok()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, Op::Leaf)
    }

    /// Free leaf that receives a gradient (useful for checks).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; [`Tape::backward`] accumulates its
    /// gradient into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_leaf(store.value(id).clone(), true, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = crate::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_map(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
            .expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_map("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_map("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_map("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_map("minimum", a, b, f64::min)?;
        Ok(self.push(value, Op::Minimum(a, b), &[a, b]))
    }

    /// Adds the vector `row [n]` to every row of `x [m, n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims("add_row")?;
        let r = self.value(row);
        if r.len() != n {
            return Err(TensorError::shape("add_row", format!("row {:?} vs width {n}", r.shape())));
        }
        let mut data = self.value(x).data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (d, &b) in chunk.iter_mut().zip(r.data()) {
                *d += b;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::AddRow(x, row), &[x, row]))
    }

    /// Adds rows `0..block` of `table` to each consecutive block of `block`
    /// rows of `x`.
    pub fn add_tiled(&mut self, x: Var, table: Var, block: usize) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims("add_tiled")?;
        let (tr, tc) = self.value(table).matrix_dims("add_tiled")?;
        if block == 0 || tc != n || tr < block || m % block != 0 {
            return Err(TensorError::shape(
                "add_tiled",
                format!("x [{m}, {n}], table [{tr}, {tc}], block {block}"),
            ));
        }
        let t = self.value(table).data();
        let mut data = self.value(x).data().to_vec();
        for (r, chunk) in data.chunks_mut(n).enumerate() {
            let tr = r % block;
            for (d, &b) in chunk.iter_mut().zip(&t[tr * n..(tr + 1) * n]) {
                *d += b;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::AddTiled { x, table, block }, &[x, table]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.map(x, |v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.map(x, |v| v + c);
        self.push(value, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v.max(0.0));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.map(x, f64::exp);
        self.push(value, Op::Exp(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v * v);
        self.push(value, Op::Square(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.map(x, |v| v.clamp(lo, hi));
        self.push(value, Op::Clamp { x, lo, hi }, &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let value = crate::softmax_rows(self.value(x))?;
        Ok(self.push(value, Op::SoftmaxRows(x), &[x]))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims("log_softmax_rows")?;
        if !self.value(x).is_finite() {
            return Err(TensorError::NonFinite { op: "log_softmax_rows" });
        }
        let mut out = vec![0.0; m * n];
        for (src, dst) in self.value(x).data().chunks(n).zip(out.chunks_mut(n)) {
            log_softmax_row(src, dst);
        }
        let probs = out.iter().map(|v| v.exp()).collect();
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::LogSoftmaxRows { x, probs }, &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, d) = self.value(x).matrix_dims("layer_norm")?;
        let (g, b) = (self.value(gain), self.value(bias));
        if d == 0 || g.len() != d || b.len() != d {
            return Err(TensorError::shape(
                "layer_norm",
                format!("width {d}, gain {:?}, bias {:?}", g.shape(), b.shape()),
            ));
        }
        let mut x_hat = vec![0.0; m * d];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * d];
        for r in 0..m {
            let src = &self.value(x).data()[r * d..(r + 1) * d];
            let (mean, inv) = row_stats(src, eps);
            inv_std[r] = inv;
            for j in 0..d {
                let h = (src[j] - mean) * inv;
                x_hat[r * d + j] = h;
                out[r * d + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let value = Tensor::new(vec![m, d], out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                x_hat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(value, Op::Mean(x), &[x])
    }

    /// `[m, n] -> [m]`, summing each row left to right.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims("row_sum")?;
        let data = if n == 0 {
            vec![0.0; m]
        } else {
            self.value(x)
                .data()
                .chunks(n)
                .map(|r| r.iter().fold(0.0, |acc, &v| acc + v))
                .collect()
        };
        let value = Tensor::new(vec![m], data)?;
        Ok(self.push(value, Op::RowSum(x), &[x]))
    }

    /// Averages consecutive groups of `group` rows: `[b * group, d] -> [b, d]`.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var> {
        let (m, d) = self.value(x).matrix_dims("group_mean")?;
        if group == 0 || m % group != 0 {
            return Err(TensorError::shape("group_mean", format!("{m} rows, group {group}")));
        }
        let b = m / group;
        let src = self.value(x).data();
        let mut out = vec![0.0; b * d];
        for r in 0..m {
            let dst = &mut out[(r / group) * d..(r / group + 1) * d];
            for (o, &v) in dst.iter_mut().zip(&src[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        let inv = 1.0 / group as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let value = Tensor::new(vec![b, d], out)?;
        Ok(self.push(value, Op::GroupMean { x, group }, &[x]))
    }

    /// Picks `x[i, idx[i]]` from each row: `[m, n] -> [m]`.
    pub fn pick_cols(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (m, n) = self.value(x).matrix_dims("pick_cols")?;
        if idx.len() != m {
            return Err(TensorError::shape("pick_cols", format!("{} indices for {m} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(TensorError::Index {
                op: "pick_cols",
                index: bad,
                limit: n,
            });
        }
        let data = idx.iter().enumerate().map(|(i, &j)| self.value(x).data()[i * n + j]).collect();
        let value = Tensor::new(vec![m], data)?;
        Ok(self.push(value, Op::PickCols { x, idx }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Scaled dot-product attention weights for `b` independent groups of
    /// `users` rows, split into `heads` column partitions.
    ///
    /// `q`, `k` are `[b * users, d]`; the result is `[b * heads * users, users]`
    /// where row `(g * heads + h) * users + i` holds softmax over `j` of
    /// `scale * <q_i, k_j>` restricted to head `h`'s columns.
    pub fn attention_scores(
        &mut self,
        q: Var,
        k: Var,
        users: usize,
        heads: usize,
        scale: f64,
    ) -> Result<Var> {
        let (rows, d) = self.value(q).matrix_dims("attention_scores")?;
        same_shape("attention_scores", self.value(q), self.value(k))?;
        if users == 0 || heads == 0 || rows % users != 0 || d % heads != 0 {
            return Err(TensorError::shape(
                "attention_scores",
                format!("[{rows}, {d}] with {users} users, {heads} heads"),
            ));
        }
        let groups = rows / users;
        let dh = d / heads;
        let (qd, kd) = (self.value(q).data(), self.value(k).data());
        let mut out = vec![0.0; groups * heads * users * users];
        let mut scores = vec![0.0; users];
        for g in 0..groups {
            for h in 0..heads {
                for i in 0..users {
                    let qi = &qd[(g * users + i) * d + h * dh..][..dh];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &kd[(g * users + j) * d + h * dh..][..dh];
                        *s = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                    }
                    let row = ((g * heads + h) * users + i) * users;
                    softmax_row(&scores, &mut out[row..row + users]);
                }
            }
        }
        let value = Tensor::new(vec![groups * heads * users, users], out)?;
        Ok(self.push(
            value,
            Op::AttentionScores {
                q,
                k,
                users,
                heads,
                scale,
            },
            &[q, k],
        ))
    }

    /// Mixes value rows with attention weights from [`Tape::attention_scores`]:
    /// head `h`'s columns of output row `i` are `sum_j alpha_ij v_j`.
    pub fn attention_mix(&mut self, alpha: Var, v: Var, users: usize, heads: usize) -> Result<Var> {
        let (rows, d) = self.value(v).matrix_dims("attention_mix")?;
        let (ar, ac) = self.value(alpha).matrix_dims("attention_mix")?;
        if users == 0 || heads == 0 || rows % users != 0 || d % heads != 0 || ac != users || ar != rows * heads {
            return Err(TensorError::shape(
                "attention_mix",
                format!("alpha [{ar}, {ac}], v [{rows}, {d}], {users} users, {heads} heads"),
            ));
        }
        let groups = rows / users;
        let dh = d / heads;
        let (a, vd) = (self.value(alpha).data(), self.value(v).data());
        let mut out = vec![0.0; rows * d];
        for g in 0..groups {
            for h in 0..heads {
                for i in 0..users {
                    let arow = &a[((g * heads + h) * users + i) * users..][..users];
                    let dst = (g * users + i) * d + h * dh;
                    for (j, &w) in arow.iter().enumerate() {
                        let vj = &vd[(g * users + j) * d + h * dh..][..dh];
                        for (o, &x) in out[dst..dst + dh].iter_mut().zip(vj) {
                            *o += w * x;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![rows, d], out)?;
        Ok(self.push(
            value,
            Op::AttentionMix {
                alpha,
                v,
                users,
                heads,
            },
            &[alpha, v],
        ))
    }

    /// Reverse pass from a scalar `loss`, returning gradients for every node
    /// that requires one.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 || lv.shape().iter().any(|&d| d != 1) {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    /// Reverse pass that accumulates parameter gradients into `store`
    /// (existing gradients are added to, not replaced).
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                for (dst, &src) in store.get_mut(*id).grad.data_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        let elementwise = |dst: &mut [f64], f: &dyn Fn(usize) -> f64| {
            for (k, d) in dst.iter_mut().enumerate() {
                *d += f(k);
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                let gm = MatRef::new(g, m, n);
                acc(*a, &mut |da| gemm(gm, MatRef::new(val(*b), k, n).t(), 1.0, da));
                acc(*b, &mut |db| gemm(MatRef::new(val(*a), m, k).t(), gm, 1.0, db));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| elementwise(d, &|k| g[k]));
                acc(*b, &mut |d| elementwise(d, &|k| g[k]));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| elementwise(d, &|k| g[k]));
                acc(*b, &mut |d| elementwise(d, &|k| -g[k]));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| elementwise(d, &|k| g[k] * bv[k]));
                acc(*b, &mut |d| elementwise(d, &|k| g[k] * av[k]));
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |d| elementwise(d, &|k| if av[k] <= bv[k] { g[k] } else { 0.0 }));
                acc(*b, &mut |d| elementwise(d, &|k| if av[k] <= bv[k] { 0.0 } else { g[k] }));
            }
            Op::AddRow(x, row) => {
                let n = shape(*row).iter().product::<usize>().max(1);
                acc(*x, &mut |d| elementwise(d, &|k| g[k]));
                acc(*row, &mut |d| {
                    for chunk in g.chunks(n) {
                        for (dd, &gg) in d.iter_mut().zip(chunk) {
                            *dd += gg;
                        }
                    }
                });
            }
            Op::AddTiled { x, table, block } => {
                let n = shape(*x)[1];
                acc(*x, &mut |d| elementwise(d, &|k| g[k]));
                acc(*table, &mut |d| {
                    for (r, chunk) in g.chunks(n).enumerate() {
                        let tr = r % block;
                        for (dd, &gg) in d[tr * n..(tr + 1) * n].iter_mut().zip(chunk) {
                            *dd += gg;
                        }
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |d| elementwise(d, &|k| g[k] * c)),
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, &mut |d| elementwise(d, &|k| g[k])),
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |d| elementwise(d, &|k| if xv[k] > 0.0 { g[k] } else { 0.0 }));
            }
            Op::Exp(x) => {
                let y = node.value.data();
                acc(*x, &mut |d| elementwise(d, &|k| g[k] * y[k]));
            }
            Op::Square(x) => {
                let xv = val(*x);
                acc(*x, &mut |d| elementwise(d, &|k| 2.0 * xv[k] * g[k]));
            }
            Op::Clamp { x, lo, hi } => {
                let xv = val(*x);
                acc(*x, &mut |d| {
                    elementwise(d, &|k| if xv[k] >= *lo && xv[k] <= *hi { g[k] } else { 0.0 })
                });
            }
            Op::SoftmaxRows(x) => {
                let n = node.value.cols().max(1);
                let y = node.value.data();
                acc(*x, &mut |d| {
                    for ((dr, yr), gr) in d.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows { x, probs } => {
                let n = node.value.cols().max(1);
                acc(*x, &mut |d| {
                    for ((dr, pr), gr) in d.chunks_mut(n).zip(probs.chunks(n)).zip(g.chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        for j in 0..n {
                            dr[j] += gr[j] - pr[j] * total;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                x_hat,
                inv_std,
            } => {
                let d = shape(*x)[1];
                let gv = val(*gain);
                acc(*x, &mut |dx| {
                    let mut dxh = vec![0.0; d];
                    for r in 0..inv_std.len() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &x_hat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxh[j] = gr[j] * gv[j];
                        }
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let c = inv_std[r] / d as f64;
                        for j in 0..d {
                            dx[r * d + j] += c * (d as f64 * dxh[j] - s1 - hr[j] * s2);
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (gr, hr) in g.chunks(d).zip(x_hat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for gr in g.chunks(d) {
                        for j in 0..d {
                            db[j] += gr[j];
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let inv = 1.0 / self.nodes[x.0].value.len() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0] * inv));
            }
            Op::RowSum(x) => {
                let n = shape(*x)[1].max(1);
                acc(*x, &mut |d| {
                    for (r, chunk) in d.chunks_mut(n).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += g[r]);
                    }
                });
            }
            Op::GroupMean { x, group } => {
                let dcols = shape(*x)[1];
                let inv = 1.0 / *group as f64;
                acc(*x, &mut |d| {
                    for (r, chunk) in d.chunks_mut(dcols).enumerate() {
                        let src = &g[(r / group) * dcols..(r / group + 1) * dcols];
                        for (v, &s) in chunk.iter_mut().zip(src) {
                            *v += s * inv;
                        }
                    }
                });
            }
            Op::PickCols { x, idx } => {
                let n = shape(*x)[1];
                acc(*x, &mut |d| {
                    for (i, &j) in idx.iter().enumerate() {
                        d[i * n + j] += g[i];
                    }
                });
            }
            Op::AttentionScores {
                q,
                k,
                users,
                heads,
                scale,
            } => {
                let (u, hs) = (*users, *heads);
                let (rows, d) = (shape(*q)[0], shape(*q)[1]);
                let dh = d / hs;
                let alpha = node.value.data();
                // d(scores) for every row, computed once and shared by both inputs.
                let mut ds = vec![0.0; alpha.len()];
                for ((dr, ar), gr) in ds.chunks_mut(u).zip(alpha.chunks(u)).zip(g.chunks(u)) {
                    let dot: f64 = ar.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..u {
                        dr[j] = scale * ar[j] * (gr[j] - dot);
                    }
                }
                let (qd, kd) = (val(*q), val(*k));
                let groups = rows / u;
                let sweep = |target: &[f64], dst: &mut [f64], query_side: bool| {
                    for gi in 0..groups {
                        for h in 0..hs {
                            for i in 0..u {
                                let srow = &ds[((gi * hs + h) * u + i) * u..][..u];
                                for (j, &s) in srow.iter().enumerate() {
                                    let (to, from) = if query_side { (i, j) } else { (j, i) };
                                    let src = &target[(gi * u + from) * d + h * dh..][..dh];
                                    let out = &mut dst[(gi * u + to) * d + h * dh..][..dh];
                                    for (o, &x) in out.iter_mut().zip(src) {
                                        *o += s * x;
                                    }
                                }
                            }
                        }
                    }
                };
                acc(*q, &mut |dq| sweep(kd, dq, true));
                acc(*k, &mut |dk| sweep(qd, dk, false));
            }
            Op::AttentionMix {
                alpha,
                v,
                users,
                heads,
            } => {
                let (u, hs) = (*users, *heads);
                let (rows, d) = (shape(*v)[0], shape(*v)[1]);
                let dh = d / hs;
                let groups = rows / u;
                let (ad, vd) = (val(*alpha), val(*v));
                acc(*alpha, &mut |da| {
                    for gi in 0..groups {
                        for h in 0..hs {
                            for i in 0..u {
                                let gz = &g[(gi * u + i) * d + h * dh..][..dh];
                                let row = ((gi * hs + h) * u + i) * u;
                                for j in 0..u {
                                    let vj = &vd[(gi * u + j) * d + h * dh..][..dh];
                                    da[row + j] += gz.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                        }
                    }
                });
                acc(*v, &mut |dv| {
                    for gi in 0..groups {
                        for h in 0..hs {
                            for i in 0..u {
                                let gz = &g[(gi * u + i) * d + h * dh..][..dh];
                                let row = ((gi * hs + h) * u + i) * u;
                                for j in 0..u {
                                    let w = ad[row + j];
                                    let out = &mut dv[(gi * u + j) * d + h * dh..][..dh];
                                    for (o, &x) in out.iter_mut().zip(gz) {
                                        *o += w * x;
                                    }
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}
