//! Matrix-valued Wengert tape.
//!
//! Values are dense matrices; every recorded operation knows its forward
//! value, its tangent (forward-mode) rule and its adjoint (reverse-mode)
//! rule. The forward and adjoint rules are themselves expressed as tape
//! operations by [`Tape::jvp`] and [`Tape::vjp`], so a Jacobian-vector
//! product recorded on the tape can in turn be differentiated by
//! [`Tape::gradient`]. That is what makes penalties such as
//! `|J_g(z)^T r|^2` differentiable with respect to network parameters.

use thiserror::Error;

use super::func::Elementwise;
use super::matrix::{gemm_into, op_shape, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `op(a) * op(b)`
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    /// `order`-th derivative of `func`, elementwise.
    Apply { x: Var, func: Elementwise, order: u8 },
    /// `m x n -> m x 1`
    RowSum(Var),
    /// `m x n -> 1 x n`
    ColSum(Var),
    /// `m x 1 -> m x n`
    BroadcastCols(Var, usize),
    /// `1 x n -> m x n`
    BroadcastRows(Var, usize),
    /// Contiguous block of a column vector, reshaped row-major.
    Slice { src: Var, offset: usize, rows: usize, cols: usize },
    /// Inverse of `Slice`: zeros of length `len` with `src` written at `offset`.
    Embed { src: Var, offset: usize, len: usize },
    SelectRows { src: Var, start: usize, count: usize },
    EmbedRows { src: Var, start: usize, total: usize },
    /// `max(x, floor)`
    FloorAt { x: Var, floor: f64 },
    /// Indicator `x > floor`; carries no derivative.
    Above { x: Var, floor: f64 },
    Atan2 { y: Var, x: Var },
    /// Sum of all entries taken in ascending order of value, so the result
    /// does not depend on the order of the entries.
    SortedSum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Apply { .. } => "apply",
            Op::RowSum(_) => "row_sum",
            Op::ColSum(_) => "col_sum",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::Slice { .. } => "slice",
            Op::Embed { .. } => "embed",
            Op::SelectRows { .. } => "select_rows",
            Op::EmbedRows { .. } => "embed_rows",
            Op::FloorAt { .. } => "floor_at",
            Op::Above { .. } => "above",
            Op::Atan2 { .. } => "atan2",
            Op::SortedSum(_) => "sorted_sum",
        }
    }

    fn args(&self) -> ArgIter {
        let (a, b) = match *self {
            Op::Leaf => (None, None),
            Op::MatMul { a, b, .. }
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Atan2 { y: a, x: b } => (Some(a), Some(b)),
            Op::Scale(a, _)
            | Op::Apply { x: a, .. }
            | Op::RowSum(a)
            | Op::ColSum(a)
            | Op::BroadcastCols(a, _)
            | Op::BroadcastRows(a, _)
            | Op::Slice { src: a, .. }
            | Op::Embed { src: a, .. }
            | Op::SelectRows { src: a, .. }
            | Op::EmbedRows { src: a, .. }
            | Op::FloorAt { x: a, .. }
            | Op::SortedSum(a) => (Some(a), None),
            Op::Above { .. } => (None, None),
        };
        ArgIter([a, b], 0)
    }
}

struct ArgIter([Option<Var>; 2], usize);

impl Iterator for ArgIter {
    type Item = Var;

    fn next(&mut self) -> Option<Var> {
        while self.1 < 2 {
            let v = self.0[self.1];
            self.1 += 1;
            if v.is_some() {
                return v;
            }
        }
        None
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// Recording context for differentiable matrix expressions.
///
/// Shape errors and non-finite values do not abort recording; the first one
/// is remembered and reported by [`Tape::check`] (and by every entry point
/// that returns a `Result`).
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    error: Option<DiffError>,
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

    /// First recorded error, if any.
    pub fn check(&self) -> Result<(), DiffError> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        if m.len() == 1 {
            m.as_slice()[0]
        } else {
            f64::NAN
        }
    }

    /// Leaf that gradients are taken with respect to.
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        if self.error.is_none() && !value.is_finite() {
            self.error = Some(DiffError::NonFinite {
                node: self.nodes.len(),
                op: "leaf",
            });
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn fail(&mut self, op: &'static str, detail: String) -> Var {
        if self.error.is_none() {
            self.error = Some(DiffError::Shape { op, detail });
        }
        self.poisoned()
    }

    fn poisoned(&mut self) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: Matrix::zeros(0, 0),
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Var {
        if self.error.is_some() {
            return self.poisoned();
        }
        let value = self.forward(&op, |v| &self.nodes[v.0].value);
        let requires_grad =
            !matches!(op, Op::Above { .. }) && op.args().any(|a| self.nodes[a.0].requires_grad);
        if !value.is_finite() {
            self.error = Some(DiffError::NonFinite {
                node: self.nodes.len(),
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn forward<'a>(&'a self, op: &Op, get: impl Fn(Var) -> &'a Matrix) -> Matrix {
        match *op {
            Op::Leaf => unreachable!("leaves carry their own value"),
            Op::MatMul { a, b, ta, tb } => get(a).matmul_t(get(b), ta, tb),
            Op::Add(a, b) => get(a).zip_map(get(b), |x, y| x + y),
            Op::Sub(a, b) => get(a).zip_map(get(b), |x, y| x - y),
            Op::Mul(a, b) => get(a).zip_map(get(b), |x, y| x * y),
            Op::Div(a, b) => get(a).zip_map(get(b), |x, y| x / y),
            Op::Scale(a, s) => get(a).map(|x| s * x),
            Op::Apply { x, func, order } => get(x).map(|v| func.eval(order, v)),
            Op::RowSum(a) => get(a).row_sums(),
            Op::ColSum(a) => get(a).col_sums(),
            Op::BroadcastCols(a, n) => {
                let src = get(a);
                let mut out = Matrix::zeros(src.rows(), n);
                for i in 0..src.rows() {
                    let v = src.as_slice()[i];
                    out.as_mut_slice()[i * n..(i + 1) * n].fill(v);
                }
                out
            }
            Op::BroadcastRows(a, m) => {
                let src = get(a);
                let n = src.cols();
                let mut out = Matrix::zeros(m, n);
                for i in 0..m {
                    out.as_mut_slice()[i * n..(i + 1) * n].copy_from_slice(src.as_slice());
                }
                out
            }
            Op::Slice {
                src,
                offset,
                rows,
                cols,
            } => Matrix::from_vec(
                rows,
                cols,
                get(src).as_slice()[offset..offset + rows * cols].to_vec(),
            ),
            Op::Embed { src, offset, len } => {
                let s = get(src);
                let mut out = Matrix::zeros(len, 1);
                out.as_mut_slice()[offset..offset + s.len()].copy_from_slice(s.as_slice());
                out
            }
            Op::SelectRows { src, start, count } => {
                let s = get(src);
                let n = s.cols();
                Matrix::from_vec(count, n, s.as_slice()[start * n..(start + count) * n].to_vec())
            }
            Op::EmbedRows { src, start, total } => {
                let s = get(src);
                let n = s.cols();
                let mut out = Matrix::zeros(total, n);
                out.as_mut_slice()[start * n..start * n + s.len()].copy_from_slice(s.as_slice());
                out
            }
            Op::FloorAt { x, floor } => get(x).map(|v| v.max(floor)),
            Op::Above { x, floor } => get(x).map(|v| if v > floor { 1.0 } else { 0.0 }),
            Op::Atan2 { y, x } => get(y).zip_map(get(x), f64::atan2),
            Op::SortedSum(a) => Matrix::scalar(sorted_sum(get(a).as_slice())),
        }
    }

    /// Re-evaluates the tape up to `output`, optionally with some leaves
    /// replaced by new values of the same shape.
    pub fn replay(&self, overrides: &[(Var, Matrix)], output: Var) -> Result<Matrix, DiffError> {
        self.check()?;
        let mut values: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        for (v, m) in overrides {
            let node = &self.nodes[v.0];
            if !matches!(node.op, Op::Leaf) || node.value.shape() != m.shape() {
                return Err(DiffError::Shape {
                    op: "replay",
                    detail: format!("override for node {} must be a leaf of the same shape", v.0),
                });
            }
            if v.0 <= output.0 {
                values[v.0] = Some(m.clone());
            }
        }
        for i in 0..=output.0 {
            if values[i].is_some() {
                continue;
            }
            let node = &self.nodes[i];
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => {
                    let vals = &values;
                    self.forward(op, |v| vals[v.0].as_ref().expect("topological order"))
                }
            };
            if !value.is_finite() {
                return Err(DiffError::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
            values[i] = Some(value);
        }
        Ok(values.pop().flatten().expect("output evaluated"))
    }

    // ---- operation builders -------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (m, k) = op_shape(self.shape(a), ta);
        let (k2, n) = op_shape(self.shape(b), tb);
        if k != k2 {
            return self.fail("matmul", format!("{m}x{k} times {k2}x{n}"));
        }
        self.push(Op::MatMul { a, b, ta, tb })
    }

    fn same_shape(&mut self, op: &'static str, a: Var, b: Var) -> bool {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            self.fail(op, format!("{sa:?} vs {sb:?}"));
            false
        } else {
            true
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        if !self.same_shape("add", a, b) {
            return self.poisoned();
        }
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        if !self.same_shape("sub", a, b) {
            return self.poisoned();
        }
        self.push(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        if !self.same_shape("mul", a, b) {
            return self.poisoned();
        }
        self.push(Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        if !self.same_shape("div", a, b) {
            return self.poisoned();
        }
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.push(Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn apply(&mut self, func: Elementwise, x: Var) -> Var {
        self.apply_derivative(func, 0, x)
    }

    pub fn apply_derivative(&mut self, func: Elementwise, order: u8, x: Var) -> Var {
        self.push(Op::Apply { x, func, order })
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        self.push(Op::RowSum(a))
    }

    pub fn col_sum(&mut self, a: Var) -> Var {
        self.push(Op::ColSum(a))
    }

    /// Sum of all entries as a `1 x 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let c = self.col_sum(a);
        self.row_sum(c)
    }

    /// Order-independent sum of all entries as a `1 x 1` node.
    pub fn sorted_sum(&mut self, a: Var) -> Var {
        self.push(Op::SortedSum(a))
    }

    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Var {
        if self.shape(a).1 != 1 {
            return self.fail("broadcast_cols", format!("{:?} is not a column", self.shape(a)));
        }
        self.push(Op::BroadcastCols(a, n))
    }

    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Var {
        if self.shape(a).0 != 1 {
            return self.fail("broadcast_rows", format!("{:?} is not a row", self.shape(a)));
        }
        self.push(Op::BroadcastRows(a, m))
    }

    /// Block `[offset, offset + rows*cols)` of a column vector, as a
    /// row-major `rows x cols` matrix.
    pub fn slice(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let (len, c) = self.shape(src);
        if c != 1 || offset + rows * cols > len {
            return self.fail(
                "slice",
                format!("block {offset}+{rows}x{cols} outside column of {len}x{c}"),
            );
        }
        self.push(Op::Slice {
            src,
            offset,
            rows,
            cols,
        })
    }

    pub fn embed(&mut self, src: Var, offset: usize, len: usize) -> Var {
        if offset + self.value(src).len() > len {
            return self.fail("embed", format!("{} entries at {offset} exceed {len}", self.value(src).len()));
        }
        self.push(Op::Embed { src, offset, len })
    }

    pub fn select_rows(&mut self, src: Var, start: usize, count: usize) -> Var {
        if start + count > self.shape(src).0 {
            return self.fail("select_rows", format!("rows {start}..{} of {:?}", start + count, self.shape(src)));
        }
        self.push(Op::SelectRows { src, start, count })
    }

    pub fn embed_rows(&mut self, src: Var, start: usize, total: usize) -> Var {
        if start + self.shape(src).0 > total {
            return self.fail("embed_rows", format!("{:?} at row {start} exceeds {total}", self.shape(src)));
        }
        self.push(Op::EmbedRows { src, start, total })
    }

    /// Elementwise `max(x, floor)`.
    pub fn floor_at(&mut self, x: Var, floor: f64) -> Var {
        self.push(Op::FloorAt { x, floor })
    }

    /// Elementwise indicator `x > floor` (a constant for differentiation).
    pub fn above(&mut self, x: Var, floor: f64) -> Var {
        self.push(Op::Above { x, floor })
    }

    pub fn atan2(&mut self, y: Var, x: Var) -> Var {
        if !self.same_shape("atan2", y, x) {
            return self.poisoned();
        }
        self.push(Op::Atan2 { y, x })
    }

    fn zeros_like(&mut self, v: Var) -> Var {
        let (r, c) = self.shape(v);
        self.constant(Matrix::zeros(r, c))
    }

    fn add_opt(&mut self, a: Option<Var>, b: Option<Var>) -> Option<Var> {
        match (a, b) {
            (Some(a), Some(b)) => Some(self.add(a, b)),
            (a, None) => a,
            (None, b) => b,
        }
    }

    // ---- symbolic forward and reverse transforms ----------------------

    /// Records `J * direction`, where `J` is the Jacobian of `output` with
    /// respect to `input` (forward mode). The result is an ordinary node and
    /// can itself be differentiated.
    ///
    /// `input` must have been recorded before `output`.
    pub fn jvp(&mut self, input: Var, output: Var, direction: Var) -> Var {
        if self.shape(input) != self.shape(direction) {
            let detail = format!(
                "direction {:?} vs input {:?}",
                self.shape(direction),
                self.shape(input)
            );
            return self.fail("jvp", detail);
        }
        if output < input {
            return self.zeros_like(output);
        }
        let base = input.0;
        let mut tangent: Vec<Option<Var>> = vec![None; output.0 - base + 1];
        tangent[0] = Some(direction);
        for i in base + 1..=output.0 {
            let op = self.nodes[i].op.clone();
            let t = |v: Var| {
                if v.0 >= base {
                    tangent[v.0 - base]
                } else {
                    None
                }
            };
            let node = Var(i);
            let d = match op {
                Op::Leaf | Op::Above { .. } => None,
                Op::MatMul { a, b, ta, tb } => {
                    let (da, db) = (t(a), t(b));
                    let l = da.map(|da| self.matmul_t(da, b, ta, tb));
                    let r = db.map(|db| self.matmul_t(a, db, ta, tb));
                    self.add_opt(l, r)
                }
                Op::Add(a, b) => {
                    let (da, db) = (t(a), t(b));
                    self.add_opt(da, db)
                }
                Op::Sub(a, b) => match (t(a), t(b)) {
                    (Some(da), Some(db)) => Some(self.sub(da, db)),
                    (Some(da), None) => Some(da),
                    (None, Some(db)) => Some(self.neg(db)),
                    (None, None) => None,
                },
                Op::Mul(a, b) => {
                    let (da, db) = (t(a), t(b));
                    let l = da.map(|da| self.mul(da, b));
                    let r = db.map(|db| self.mul(a, db));
                    self.add_opt(l, r)
                }
                Op::Div(a, b) => match (t(a), t(b)) {
                    (None, None) => None,
                    (da, db) => {
                        // d(a/b) = (da - c*db) / b
                        let cdb = db.map(|db| {
                            let m = self.mul(node, db);
                            self.neg(m)
                        });
                        let num = self.add_opt(da, cdb).expect("one tangent present");
                        Some(self.div(num, b))
                    }
                },
                Op::Scale(a, s) => t(a).map(|da| self.scale(da, s)),
                Op::Apply { x, func, order } => t(x).map(|dx| {
                    let d = self.apply_derivative(func, order + 1, x);
                    self.mul(d, dx)
                }),
                Op::RowSum(a) => t(a).map(|da| self.row_sum(da)),
                Op::ColSum(a) => t(a).map(|da| self.col_sum(da)),
                Op::BroadcastCols(a, n) => t(a).map(|da| self.broadcast_cols(da, n)),
                Op::BroadcastRows(a, m) => t(a).map(|da| self.broadcast_rows(da, m)),
                Op::Slice {
                    src,
                    offset,
                    rows,
                    cols,
                } => t(src).map(|d| self.slice(d, offset, rows, cols)),
                Op::Embed { src, offset, len } => t(src).map(|d| self.embed(d, offset, len)),
                Op::SelectRows { src, start, count } => {
                    t(src).map(|d| self.select_rows(d, start, count))
                }
                Op::EmbedRows { src, start, total } => {
                    t(src).map(|d| self.embed_rows(d, start, total))
                }
                Op::FloorAt { x, floor } => t(x).map(|dx| {
                    let mask = self.above(x, floor);
                    self.mul(mask, dx)
                }),
                Op::Atan2 { y, x } => match (t(y), t(x)) {
                    (None, None) => None,
                    (dy, dx) => {
                        // d atan2(y, x) = (x dy - y dx) / (x^2 + y^2)
                        let l = dy.map(|dy| self.mul(x, dy));
                        let r = dx.map(|dx| {
                            let m = self.mul(y, dx);
                            self.neg(m)
                        });
                        let num = self.add_opt(l, r).expect("one tangent present");
                        let r2 = self.radius_sq(y, x);
                        Some(self.div(num, r2))
                    }
                },
                Op::SortedSum(a) => t(a).map(|da| self.sorted_sum(da)),
            };
            tangent[i - base] = d;
        }
        match tangent[output.0 - base] {
            Some(t) => t,
            None => self.zeros_like(output),
        }
    }

    fn radius_sq(&mut self, y: Var, x: Var) -> Var {
        let xx = self.mul(x, x);
        let yy = self.mul(y, y);
        self.add(xx, yy)
    }

    /// Records `J^T * covector`, where `J` is the Jacobian of `output` with
    /// respect to `input` (reverse mode expressed as tape operations). The
    /// result can itself be differentiated.
    pub fn vjp(&mut self, input: Var, output: Var, covector: Var) -> Var {
        if self.shape(output) != self.shape(covector) {
            let detail = format!(
                "covector {:?} vs output {:?}",
                self.shape(covector),
                self.shape(output)
            );
            return self.fail("vjp", detail);
        }
        if output < input {
            return self.zeros_like(input);
        }
        let base = input.0;
        let span = output.0 - base + 1;
        let mut depends = vec![false; span];
        depends[0] = true;
        for i in base + 1..=output.0 {
            let op = &self.nodes[i].op;
            depends[i - base] = !matches!(op, Op::Above { .. })
                && op.args().any(|a| a.0 >= base && depends[a.0 - base]);
        }
        let mut adj: Vec<Option<Var>> = vec![None; span];
        adj[span - 1] = Some(covector);
        for i in (base + 1..=output.0).rev() {
            let Some(g) = adj[i - base] else { continue };
            if !depends[i - base] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let node = Var(i);
            let wants = |v: Var| v.0 >= base && depends[v.0 - base];
            let mut contrib: [(Option<Var>, Option<Var>); 2] = [(None, None), (None, None)];
            match op {
                Op::Leaf | Op::Above { .. } => {}
                Op::MatMul { a, b, ta, tb } => {
                    if wants(a) {
                        let ga = if ta {
                            self.matmul_t(b, g, tb, true)
                        } else {
                            self.matmul_t(g, b, false, !tb)
                        };
                        contrib[0] = (Some(a), Some(ga));
                    }
                    if wants(b) {
                        let gb = if tb {
                            self.matmul_t(g, a, true, ta)
                        } else {
                            self.matmul_t(a, g, !ta, false)
                        };
                        contrib[1] = (Some(b), Some(gb));
                    }
                }
                Op::Add(a, b) => {
                    contrib[0] = (Some(a), Some(g));
                    contrib[1] = (Some(b), Some(g));
                }
                Op::Sub(a, b) => {
                    contrib[0] = (Some(a), Some(g));
                    if wants(b) {
                        contrib[1] = (Some(b), Some(self.neg(g)));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        contrib[0] = (Some(a), Some(self.mul(g, b)));
                    }
                    if wants(b) {
                        contrib[1] = (Some(b), Some(self.mul(g, a)));
                    }
                }
                Op::Div(a, b) => {
                    if wants(a) {
                        contrib[0] = (Some(a), Some(self.div(g, b)));
                    }
                    if wants(b) {
                        let gc = self.mul(g, node);
                        let q = self.div(gc, b);
                        contrib[1] = (Some(b), Some(self.neg(q)));
                    }
                }
                Op::Scale(a, s) => contrib[0] = (Some(a), Some(self.scale(g, s))),
                Op::Apply { x, func, order } => {
                    let d = self.apply_derivative(func, order + 1, x);
                    contrib[0] = (Some(x), Some(self.mul(g, d)));
                }
                Op::RowSum(a) => {
                    let n = self.shape(a).1;
                    contrib[0] = (Some(a), Some(self.broadcast_cols(g, n)));
                }
                Op::ColSum(a) => {
                    let m = self.shape(a).0;
                    contrib[0] = (Some(a), Some(self.broadcast_rows(g, m)));
                }
                Op::BroadcastCols(a, _) => contrib[0] = (Some(a), Some(self.row_sum(g))),
                Op::BroadcastRows(a, _) => contrib[0] = (Some(a), Some(self.col_sum(g))),
                Op::Slice { src, offset, .. } => {
                    let len = self.shape(src).0;
                    contrib[0] = (Some(src), Some(self.embed(g, offset, len)));
                }
                Op::Embed { src, offset, .. } => {
                    let (r, c) = self.shape(src);
                    contrib[0] = (Some(src), Some(self.slice(g, offset, r, c)));
                }
                Op::SelectRows { src, start, .. } => {
                    let total = self.shape(src).0;
                    contrib[0] = (Some(src), Some(self.embed_rows(g, start, total)));
                }
                Op::EmbedRows { src, start, .. } => {
                    let count = self.shape(src).0;
                    contrib[0] = (Some(src), Some(self.select_rows(g, start, count)));
                }
                Op::FloorAt { x, floor } => {
                    let mask = self.above(x, floor);
                    contrib[0] = (Some(x), Some(self.mul(g, mask)));
                }
                Op::Atan2 { y, x } => {
                    let r2 = self.radius_sq(y, x);
                    let w = self.div(g, r2);
                    if wants(y) {
                        contrib[0] = (Some(y), Some(self.mul(w, x)));
                    }
                    if wants(x) {
                        let m = self.mul(w, y);
                        contrib[1] = (Some(x), Some(self.neg(m)));
                    }
                }
                Op::SortedSum(a) => {
                    let (m, n) = self.shape(a);
                    let row = self.broadcast_cols(g, n);
                    contrib[0] = (Some(a), Some(self.broadcast_rows(row, m)));
                }
            }
            for (target, value) in contrib {
                if let (Some(t), Some(v)) = (target, value) {
                    if wants(t) {
                        let slot = t.0 - base;
                        adj[slot] = self.add_opt(adj[slot], Some(v));
                    }
                }
            }
        }
        match adj[0] {
            Some(a) => a,
            None => self.zeros_like(input),
        }
    }

    // ---- numeric reverse sweep ----------------------------------------

    /// Gradient of the `1 x 1` node `output` with respect to the variable
    /// leaf `wrt`, by a numeric reverse sweep over the whole tape.
    pub fn gradient(&self, output: Var, wrt: Var) -> Result<Matrix, DiffError> {
        self.check()?;
        if self.shape(output) != (1, 1) {
            return Err(DiffError::Shape {
                op: "gradient",
                detail: format!("objective has shape {:?}, expected 1x1", self.shape(output)),
            });
        }
        let (wr, wc) = self.shape(wrt);
        if !self.nodes[output.0].requires_grad || output < wrt {
            return Ok(Matrix::zeros(wr, wc));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Matrix::scalar(1.0));
        for i in (wrt.0 + 1..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut adj);
        }
        let grad = adj[wrt.0].take().unwrap_or_else(|| Matrix::zeros(wr, wc));
        if !grad.is_finite() {
            return Err(DiffError::NonFinite {
                node: wrt.0,
                op: "gradient",
            });
        }
        Ok(grad)
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {
                slot(&self.nodes, adj, $v)
            };
        }
        match node.op {
            Op::Leaf | Op::Above { .. } => {}
            Op::MatMul { a, b, ta, tb } => {
                if wants(a) {
                    let out = acc!(a);
                    if ta {
                        gemm_into(val(b), tb, g, true, 1.0, 1.0, out);
                    } else {
                        gemm_into(g, false, val(b), !tb, 1.0, 1.0, out);
                    }
                }
                if wants(b) {
                    let out = acc!(b);
                    if tb {
                        gemm_into(g, true, val(a), ta, 1.0, 1.0, out);
                    } else {
                        gemm_into(val(a), !ta, g, false, 1.0, 1.0, out);
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    acc!(a).axpy(1.0, g);
                }
                if wants(b) {
                    acc!(b).axpy(1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    acc!(a).axpy(1.0, g);
                }
                if wants(b) {
                    acc!(b).axpy(-1.0, g);
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    zip3_acc(acc!(a), g, val(b), |g, y| g * y);
                }
                if wants(b) {
                    zip3_acc(acc!(b), g, val(a), |g, x| g * x);
                }
            }
            Op::Div(a, b) => {
                if wants(a) {
                    zip3_acc(acc!(a), g, val(b), |g, y| g / y);
                }
                if wants(b) {
                    let c = &node.value;
                    let out = acc!(b);
                    for (((o, &g), &c), &y) in out
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(c.as_slice())
                        .zip(val(b).as_slice())
                    {
                        *o -= g * c / y;
                    }
                }
            }
            Op::Scale(a, s) => acc!(a).axpy(s, g),
            Op::Apply { x, func, order } => {
                zip3_acc(acc!(x), g, val(x), |g, x| g * func.eval(order + 1, x));
            }
            Op::RowSum(a) => {
                let out = acc!(a);
                let n = out.cols();
                for (i, &gi) in g.as_slice().iter().enumerate() {
                    out.as_mut_slice()[i * n..(i + 1) * n]
                        .iter_mut()
                        .for_each(|o| *o += gi);
                }
            }
            Op::ColSum(a) => {
                let out = acc!(a);
                let n = out.cols();
                for row in out.as_mut_slice().chunks_mut(n) {
                    for (o, &gj) in row.iter_mut().zip(g.as_slice()) {
                        *o += gj;
                    }
                }
            }
            Op::BroadcastCols(a, _) => acc!(a).axpy(1.0, &g.row_sums()),
            Op::BroadcastRows(a, _) => acc!(a).axpy(1.0, &g.col_sums()),
            Op::Slice { src, offset, .. } => {
                let out = acc!(src);
                for (o, &gv) in out.as_mut_slice()[offset..offset + g.len()]
                    .iter_mut()
                    .zip(g.as_slice())
                {
                    *o += gv;
                }
            }
            Op::Embed { src, offset, .. } => {
                let out = acc!(src);
                let n = out.len();
                for (o, &gv) in out.as_mut_slice().iter_mut().zip(&g.as_slice()[offset..offset + n]) {
                    *o += gv;
                }
            }
            Op::SelectRows { src, start, .. } => {
                let out = acc!(src);
                let n = out.cols();
                for (o, &gv) in out.as_mut_slice()[start * n..start * n + g.len()]
                    .iter_mut()
                    .zip(g.as_slice())
                {
                    *o += gv;
                }
            }
            Op::EmbedRows { src, start, .. } => {
                let out = acc!(src);
                let n = out.cols();
                let len = out.len();
                for (o, &gv) in out
                    .as_mut_slice()
                    .iter_mut()
                    .zip(&g.as_slice()[start * n..start * n + len])
                {
                    *o += gv;
                }
            }
            Op::FloorAt { x, floor } => {
                zip3_acc(acc!(x), g, val(x), |g, x| if x > floor { g } else { 0.0 });
            }
            Op::Atan2 { y, x } => {
                let (yv, xv) = (val(y), val(x));
                if wants(y) {
                    let out = acc!(y);
                    for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
                        let (yy, xx) = (yv.as_slice()[k], xv.as_slice()[k]);
                        *o += g.as_slice()[k] * xx / (xx * xx + yy * yy);
                    }
                }
                if wants(x) {
                    let out = acc!(x);
                    for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
                        let (yy, xx) = (yv.as_slice()[k], xv.as_slice()[k]);
                        *o -= g.as_slice()[k] * yy / (xx * xx + yy * yy);
                    }
                }
            }
            Op::SortedSum(a) => {
                let s = g.as_slice()[0];
                acc!(a).as_mut_slice().iter_mut().for_each(|o| *o += s);
            }
        }
    }
}

fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Matrix>], v: Var) -> &'a mut Matrix {
    let (r, c) = nodes[v.0].value.shape();
    adj[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
}

fn zip3_acc(out: &mut Matrix, g: &Matrix, other: &Matrix, f: impl Fn(f64, f64) -> f64) {
    for ((o, &g), &x) in out
        .as_mut_slice()
        .iter_mut()
        .zip(g.as_slice())
        .zip(other.as_slice())
    {
        *o += f(g, x);
    }
}

/// Sum in ascending order of value; equal multisets give equal sums.
pub fn sorted_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}
