//! The computation graph: forward op recording and reverse-mode backward.

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::geom::{rotation_exp, so3_right_jacobian, Vec3};

pub type NodeId = usize;
pub type ParamId = usize;

/// Optimizer grouping: field parameters train on a different schedule than
/// camera pose parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Fields,
    Poses,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub group: ParamGroup,
}

/// Named trainable tensors with gradient accumulators.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub params: Vec<Param>,
    grads_ready: bool,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix, group: ParamGroup) -> ParamId {
        let grad = Matrix::zeros(value.rows, value.cols);
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
            group,
        });
        self.params.len() - 1
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.params[id].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data.fill(0.0);
        }
        self.grads_ready = false;
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub(super) fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    pub fn ids_in_group(&self, group: ParamGroup) -> Vec<ParamId> {
        (0..self.params.len())
            .filter(|&i| self.params[i].group == group)
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(Option<ParamId>),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Clamp(NodeId, f64, f64),
    SumAll(NodeId),
    RowSum(NodeId),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    RepeatRows(NodeId, usize),
    SumGroups(NodeId, usize),
    CumsumExclusiveRows(NodeId),
    Reshape(NodeId),
    /// Rows of the constant point matrix rotated by `exp(axis_angle)`.
    RotatePoints { axis_angle: NodeId, points: Matrix },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation tape. Build the forward pass, call
/// [`Graph::backward`] once, and read gradients off the [`ParamStore`].
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.shape(), (1, 1));
        self.nodes[id].value.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        debug_assert!(
            value.all_finite(),
            "non-finite tensor produced by {op:?}"
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Copy a parameter in as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.params[id].value.clone(), Op::Leaf(Some(id)), true)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf(None), false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::Dimension(format!("add {sa:?} vs {sb:?}")));
        }
        let mut value = self.nodes[a].value.clone();
        value.add_in_place(&self.nodes[b].value);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add(a, b), req))
    }

    /// `[N x M] + [1 x M]` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(Error::Dimension(format!("add_row {sa:?} vs {sb:?}")));
        }
        let bvals = &self.nodes[b].value;
        let mut value = self.nodes[a].value.clone();
        for r in 0..value.rows {
            for (v, &bv) in value.row_mut(r).iter_mut().zip(&bvals.data) {
                *v += bv;
            }
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::AddRow(a, b), req))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::Dimension(format!("sub {sa:?} vs {sb:?}")));
        }
        let value = Matrix {
            rows: sa.0,
            cols: sa.1,
            data: self.nodes[a]
                .value
                .data
                .iter()
                .zip(&self.nodes[b].value.data)
                .map(|(&x, &y)| x - y)
                .collect(),
        };
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Sub(a, b), req))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::Dimension(format!("mul {sa:?} vs {sb:?}")));
        }
        let value = Matrix {
            rows: sa.0,
            cols: sa.1,
            data: self.nodes[a]
                .value
                .data
                .iter()
                .zip(&self.nodes[b].value.data)
                .map(|(&x, &y)| x * y)
                .collect(),
        };
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Mul(a, b), req))
    }

    /// `[N x 1] * [N x M]` broadcast over columns.
    pub fn mul_col(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa.1 != 1 || sa.0 != sb.0 {
            return Err(Error::Dimension(format!("mul_col {sa:?} vs {sb:?}")));
        }
        let avals = &self.nodes[a].value;
        let bvals = &self.nodes[b].value;
        let mut value = bvals.clone();
        for r in 0..value.rows {
            let s = avals.data[r];
            for v in value.row_mut(r) {
                *v *= s;
            }
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MulCol(a, b), req))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a].value.map(|v| v * c);
        let req = self.requires(a);
        self.push(value, Op::Scale(a, c), req)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a].value.map(|v| v + c);
        let req = self.requires(a);
        self.push(value, Op::AddScalar(a), req)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa.1 != sb.0 {
            return Err(Error::Dimension(format!("matmul {sa:?} @ {sb:?}")));
        }
        let value = self.nodes[a].value.matmul(&self.nodes[b].value);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMul(a, b), req))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(|v| v.max(0.0));
        let req = self.requires(a);
        self.push(value, Op::Relu(a), req)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(|v| {
            if v > 30.0 {
                v
            } else if v < -30.0 {
                v.exp()
            } else {
                v.exp().ln_1p()
            }
        });
        let req = self.requires(a);
        self.push(value, Op::Softplus(a), req)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        });
        let req = self.requires(a);
        self.push(value, Op::Sigmoid(a), req)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::exp);
        let req = self.requires(a);
        self.push(value, Op::Exp(a), req)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::ln);
        let req = self.requires(a);
        self.push(value, Op::Ln(a), req)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::sin);
        let req = self.requires(a);
        self.push(value, Op::Sin(a), req)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::cos);
        let req = self.requires(a);
        self.push(value, Op::Cos(a), req)
    }

    /// Square root with subgradient 0 at 0, so exact zeros stay exact.
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::sqrt);
        let req = self.requires(a);
        self.push(value, Op::Sqrt(a), req)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(f64::abs);
        let req = self.requires(a);
        self.push(value, Op::Abs(a), req)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let value = self.nodes[a].value.map(|v| v.clamp(lo, hi));
        let req = self.requires(a);
        self.push(value, Op::Clamp(a, lo, hi), req)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.nodes[a].value.data.iter().sum();
        let req = self.requires(a);
        self.push(Matrix::scalar(total), Op::SumAll(a), req)
    }

    /// `[N x M] -> [N x 1]` row sums.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let src = &self.nodes[a].value;
        let data: Vec<f64> = (0..src.rows).map(|r| src.row(r).iter().sum()).collect();
        let value = Matrix::from_vec(src.rows, 1, data);
        let req = self.requires(a);
        self.push(value, Op::RowSum(a), req)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of nothing".into()));
        }
        let rows = self.nodes[parts[0]].value.rows;
        let mut cols = 0;
        for &p in parts {
            if self.nodes[p].value.rows != rows {
                return Err(Error::Dimension("concat row mismatch".into()));
            }
            cols += self.nodes[p].value.cols;
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let src = &self.nodes[p].value;
            for r in 0..rows {
                value.data[r * cols + offset..r * cols + offset + src.cols]
                    .copy_from_slice(src.row(r));
            }
            offset += src.cols;
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), req))
    }

    /// Stack parts vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Dimension("concat of nothing".into()));
        }
        let cols = self.nodes[parts[0]].value.cols;
        let mut rows = 0;
        for &p in parts {
            if self.nodes[p].value.cols != cols {
                return Err(Error::Dimension("concat column mismatch".into()));
            }
            rows += self.nodes[p].value.rows;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p].value.data);
        }
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            req,
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, c0: usize, c1: usize) -> Result<NodeId> {
        let src = &self.nodes[a].value;
        if c0 >= c1 || c1 > src.cols {
            return Err(Error::Dimension(format!(
                "slice {c0}..{c1} of {} cols",
                src.cols
            )));
        }
        let mut value = Matrix::zeros(src.rows, c1 - c0);
        for r in 0..src.rows {
            value
                .row_mut(r)
                .copy_from_slice(&src.row(r)[c0..c1]);
        }
        let req = self.requires(a);
        Ok(self.push(value, Op::SliceCols(a, c0, c1), req))
    }

    /// `[R x M] -> [R*k x M]`, each row repeated `k` times consecutively.
    pub fn repeat_rows(&mut self, a: NodeId, k: usize) -> NodeId {
        let src = &self.nodes[a].value;
        let mut value = Matrix::zeros(src.rows * k, src.cols);
        for r in 0..src.rows {
            for s in 0..k {
                let dst = (r * k + s) * src.cols;
                value.data[dst..dst + src.cols].copy_from_slice(src.row(r));
            }
        }
        let req = self.requires(a);
        self.push(value, Op::RepeatRows(a, k), req)
    }

    /// `[R*k x M] -> [R x M]`, summing each consecutive group of `k` rows.
    pub fn sum_groups(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        let src = &self.nodes[a].value;
        if !src.rows.is_multiple_of(k) {
            return Err(Error::Dimension(format!(
                "sum_groups: {} rows not divisible by {k}",
                src.rows
            )));
        }
        let rows = src.rows / k;
        let mut value = Matrix::zeros(rows, src.cols);
        for r in 0..rows {
            for s in 0..k {
                let srow = src.row(r * k + s);
                for (v, &x) in value.row_mut(r).iter_mut().zip(srow) {
                    *v += x;
                }
            }
        }
        let req = self.requires(a);
        Ok(self.push(value, Op::SumGroups(a, k), req))
    }

    /// Exclusive prefix sums along each row (first entry 0).
    pub fn cumsum_exclusive_rows(&mut self, a: NodeId) -> NodeId {
        let src = &self.nodes[a].value;
        let mut value = Matrix::zeros(src.rows, src.cols);
        for r in 0..src.rows {
            let mut acc = 0.0;
            let srow = src.row(r);
            let drow = value.row_mut(r);
            for (d, &s) in drow.iter_mut().zip(srow) {
                *d = acc;
                acc += s;
            }
        }
        let req = self.requires(a);
        self.push(value, Op::CumsumExclusiveRows(a), req)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let src = &self.nodes[a].value;
        if src.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "reshape {}x{} -> {rows}x{cols}",
                src.rows, src.cols
            )));
        }
        let value = Matrix::from_vec(rows, cols, src.data.clone());
        let req = self.requires(a);
        Ok(self.push(value, Op::Reshape(a), req))
    }

    /// Rotate constant points (rows) by `exp(axis_angle)`; axis_angle is a
    /// differentiable `[1 x 3]` node.
    pub fn rotate_points(&mut self, axis_angle: NodeId, points: Matrix) -> Result<NodeId> {
        if self.nodes[axis_angle].value.shape() != (1, 3) || points.cols != 3 {
            return Err(Error::Dimension("rotate_points wants [1x3] angle and [Nx3] points".into()));
        }
        let aa = &self.nodes[axis_angle].value.data;
        let r = rotation_exp(Vec3::new(aa[0], aa[1], aa[2]));
        let mut value = Matrix::zeros(points.rows, 3);
        for i in 0..points.rows {
            let p = points.row(i);
            let rotated = r.mul_vec(Vec3::new(p[0], p[1], p[2]));
            value.row_mut(i).copy_from_slice(&[rotated.x, rotated.y, rotated.z]);
        }
        let req = self.requires(axis_angle);
        Ok(self.push(value, Op::RotatePoints { axis_angle, points }, req))
    }

    /// Reverse pass from a scalar loss; accumulates into parameter grads.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        self.backward_done = true;
        if self.nodes[loss].value.shape() != (1, 1) {
            return Err(Error::Dimension("backward needs a scalar loss".into()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[loss] = Some(Matrix::scalar(1.0));

        fn accum(grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) {
            match &mut grads[id] {
                Some(g) => g.add_in_place(&delta),
                slot @ None => *slot = Some(delta),
            }
        }

        for id in (0..n).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf(Some(param)) => {
                    store.params[*param].grad.add_in_place(&g);
                }
                Op::Leaf(None) => {}
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(b) {
                        accum(&mut grads, b, g.clone());
                    }
                    if self.requires(a) {
                        accum(&mut grads, a, g);
                    }
                }
                Op::AddRow(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(b) {
                        let mut gb = Matrix::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (d, &x) in gb.data.iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                        accum(&mut grads, b, gb);
                    }
                    if self.requires(a) {
                        accum(&mut grads, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(b) {
                        accum(&mut grads, b, g.map(|v| -v));
                    }
                    if self.requires(a) {
                        accum(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        let mut ga = g.clone();
                        for (x, &y) in ga.data.iter_mut().zip(&self.nodes[b].value.data) {
                            *x *= y;
                        }
                        accum(&mut grads, a, ga);
                    }
                    if self.requires(b) {
                        let mut gb = g;
                        for (x, &y) in gb.data.iter_mut().zip(&self.nodes[a].value.data) {
                            *x *= y;
                        }
                        accum(&mut grads, b, gb);
                    }
                }
                Op::MulCol(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        let bv = &self.nodes[b].value;
                        let data: Vec<f64> = (0..g.rows)
                            .map(|r| g.row(r).iter().zip(bv.row(r)).map(|(&x, &y)| x * y).sum())
                            .collect();
                        accum(&mut grads, a, Matrix::from_vec(g.rows, 1, data));
                    }
                    if self.requires(b) {
                        let av = &self.nodes[a].value;
                        let mut gb = g;
                        for r in 0..gb.rows {
                            let s = av.data[r];
                            for v in gb.row_mut(r) {
                                *v *= s;
                            }
                        }
                        accum(&mut grads, b, gb);
                    }
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    accum(&mut grads, a, g.map(|v| v * c));
                }
                Op::AddScalar(a) => {
                    accum(&mut grads, *a, g);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        let ga = g.matmul_nt(&self.nodes[b].value);
                        accum(&mut grads, a, ga);
                    }
                    if self.requires(b) {
                        let gb = self.nodes[a].value.matmul_tn(&g);
                        accum(&mut grads, b, gb);
                    }
                }
                Op::Relu(a) => {
                    let a = *a;
                    let mut ga = g;
                    for (x, &v) in ga.data.iter_mut().zip(&self.nodes[a].value.data) {
                        if v <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Softplus(a) => {
                    let a = *a;
                    let mut ga = g;
                    for (x, &v) in ga.data.iter_mut().zip(&self.nodes[a].value.data) {
                        let s = if v >= 0.0 {
                            1.0 / (1.0 + (-v).exp())
                        } else {
                            let e = v.exp();
                            e / (1.0 + e)
                        };
                        *x *= s;
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let out = &self.nodes[id].value;
                    let mut ga = g;
                    for (x, &s) in ga.data.iter_mut().zip(&out.data) {
                        *x *= s * (1.0 - s);
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Exp(a) => {
                    let a = *a;
                    let out = &self.nodes[id].value;
                    let mut ga = g;
                    for (x, &e) in ga.data.iter_mut().zip(&out.data) {
                        *x *= e;
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Ln(a) => {
                    let a = *a;
                    let mut ga = g;
                    for (x, &v) in ga.data.iter_mut().zip(&self.nodes[a].value.data) {
                        *x /= v;
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Sin(a) => {
                    let a = *a;
                    let mut ga = g;
                    for (x, &v) in ga.data.iter_mut().zip(&self.nodes[a].value.data) {
                        *x *= v.cos();
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Cos(a) => {
                    let a = *a;
                    let mut ga = g;
                    for (x, &v) in ga.data.iter_mut().zip(&self.nodes[a].value.data) {
                        *x *= -v.sin();
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Sqrt(a) => {
                    let a = *a;
                    let out = &self.nodes[id].value;
                    let mut ga = g;
                    for (x, &s) in ga.data.iter_mut().zip(&out.data) {
                        *x = if s > 0.0 { *x / (2.0 * s) } else { 0.0 };
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Abs(a) => {
                    let a = *a;
                    let mut ga = g;
                    for (x, &v) in ga.data.iter_mut().zip(&self.nodes[a].value.data) {
                        *x *= if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let (a, lo, hi) = (*a, *lo, *hi);
                    let mut ga = g;
                    for (x, &v) in ga.data.iter_mut().zip(&self.nodes[a].value.data) {
                        if v <= lo || v >= hi {
                            *x = 0.0;
                        }
                    }
                    accum(&mut grads, a, ga);
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let s = g.data[0];
                    let src = &self.nodes[a].value;
                    accum(
                        &mut grads,
                        a,
                        Matrix::from_vec(src.rows, src.cols, vec![s; src.len()]),
                    );
                }
                Op::RowSum(a) => {
                    let a = *a;
                    let src = &self.nodes[a].value;
                    let mut ga = Matrix::zeros(src.rows, src.cols);
                    for r in 0..src.rows {
                        let s = g.data[r];
                        for v in ga.row_mut(r) {
                            *v = s;
                        }
                    }
                    accum(&mut grads, a, ga);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[p].value.cols;
                        if self.requires(p) {
                            let mut gp = Matrix::zeros(g.rows, w);
                            for r in 0..g.rows {
                                gp.row_mut(r)
                                    .copy_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            accum(&mut grads, p, gp);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.nodes[p].value.rows;
                        if self.requires(p) {
                            let gp = Matrix::from_vec(
                                rows,
                                g.cols,
                                g.data[offset * g.cols..(offset + rows) * g.cols].to_vec(),
                            );
                            accum(&mut grads, p, gp);
                        }
                        offset += rows;
                    }
                }
                Op::SliceCols(a, c0, _c1) => {
                    let (a, c0) = (*a, *c0);
                    let src = &self.nodes[a].value;
                    let mut ga = Matrix::zeros(src.rows, src.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r)[c0..c0 + g.cols].copy_from_slice(g.row(r));
                    }
                    accum(&mut grads, a, ga);
                }
                Op::RepeatRows(a, k) => {
                    let (a, k) = (*a, *k);
                    let src_rows = self.nodes[a].value.rows;
                    let mut ga = Matrix::zeros(src_rows, g.cols);
                    for r in 0..src_rows {
                        for s in 0..k {
                            let grow = g.row(r * k + s);
                            for (v, &x) in ga.row_mut(r).iter_mut().zip(grow) {
                                *v += x;
                            }
                        }
                    }
                    accum(&mut grads, a, ga);
                }
                Op::SumGroups(a, k) => {
                    let (a, k) = (*a, *k);
                    let src_rows = self.nodes[a].value.rows;
                    let mut ga = Matrix::zeros(src_rows, g.cols);
                    for r in 0..g.rows {
                        let grow = g.row(r);
                        for s in 0..k {
                            ga.row_mut(r * k + s).copy_from_slice(grow);
                        }
                    }
                    accum(&mut grads, a, ga);
                }
                Op::CumsumExclusiveRows(a) => {
                    let a = *a;
                    // out[j] = sum_{j' < j} in[j']  =>  d in[j] = sum_{j' > j} g[j']
                    let mut ga = Matrix::zeros(g.rows, g.cols);
                    for r in 0..g.rows {
                        let grow = g.row(r);
                        let garow = ga.row_mut(r);
                        let mut acc = 0.0;
                        for j in (0..grow.len()).rev() {
                            garow[j] = acc;
                            acc += grow[j];
                        }
                    }
                    accum(&mut grads, a, ga);
                }
                Op::Reshape(a) => {
                    let a = *a;
                    let src = &self.nodes[a].value;
                    accum(
                        &mut grads,
                        a,
                        Matrix::from_vec(src.rows, src.cols, g.data),
                    );
                }
                Op::RotatePoints { axis_angle, points } => {
                    let axis_angle = *axis_angle;
                    let aa = &self.nodes[axis_angle].value.data;
                    let a_vec = Vec3::new(aa[0], aa[1], aa[2]);
                    let r = rotation_exp(a_vec);
                    let jr = so3_right_jacobian(a_vec);
                    // dL/da = -(sum_i (R^T G_i) x p_i)^T Jr
                    let mut acc = Vec3::ZERO;
                    let rt = r.transpose();
                    for i in 0..points.rows {
                        let grow = g.row(i);
                        let gi = Vec3::new(grow[0], grow[1], grow[2]);
                        let p = points.row(i);
                        let pi = Vec3::new(p[0], p[1], p[2]);
                        acc += rt.mul_vec(gi).cross(pi);
                    }
                    let grad_row = jr.transpose().mul_vec(-acc);
                    accum(
                        &mut grads,
                        axis_angle,
                        Matrix::row_vector(&[grad_row.x, grad_row.y, grad_row.z]),
                    );
                }
            }
        }
        store.mark_grads_ready();
        Ok(())
    }
}
