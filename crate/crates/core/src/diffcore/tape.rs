use std::collections::HashMap;
use std::rc::Rc;

use super::array::{matmul_into, matmul_nt_into, matmul_tn_into};
use super::{Array, DiffError, ParamId, ParamKey, ParamStore, SparseMatrix};

/// Predictions entering a binary cross-entropy are clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p> {
    Owned(Array),
    Borrowed(&'p Array),
}

impl Value<'_> {
    fn get(&self) -> &Array {
        match self {
            Value::Owned(a) => a,
            Value::Borrowed(a) => a,
        }
    }
}

enum Op {
    Constant,
    Param(ParamKey),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Concat(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    BceSum(Var, Var),
    Mse(Var, Var),
    SparseMatMul(Rc<SparseMatrix>, Var),
    LogSoftmax(Var),
    Pick(Var, Rc<Vec<usize>>),
    GatherRows(Var, Rc<Vec<Option<usize>>>),
    GroupCenter(Var, Rc<Vec<usize>>, usize),
}

struct Node<'p> {
    op: Op,
    value: Value<'p>,
    /// Whether any parameter is upstream of this node.
    needs_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::Minimum(a, b)
            | Op::BceSum(a, b)
            | Op::Mse(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
            Op::Affine(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumCols(a)
            | Op::SparseMatMul(_, a)
            | Op::LogSoftmax(a)
            | Op::Pick(a, _)
            | Op::GatherRows(a, _)
            | Op::GroupCenter(a, _, _) => vec![*a],
        }
    }
}

/// Gradients of a scalar loss with respect to every parameter reached.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    entries: Vec<(ParamKey, Array)>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Array)> {
        self.entries.iter().map(|(k, a)| (k, a))
    }

    pub fn get(&self, store: &ParamStore, id: ParamId) -> Option<&Array> {
        let key = store.key(id);
        self.entries.iter().find(|(k, _)| *k == key).map(|(_, a)| a)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Append-only computation graph. Node order is a topological order, so
/// the backward pass is a single reverse sweep.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<ParamKey, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &Array, b: &Array) -> DiffError {
    DiffError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        self.nodes[v.0].value.get()
    }

    fn push(&mut self, op: Op, value: Array) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by tape op");
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn constant_ref(&mut self, value: &'p Array) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Value::Borrowed(value),
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter by reference. Repeated calls for the same
    /// parameter return the same node.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        let key = store.key(id);
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(key),
            value: Value::Borrowed(store.value(id)),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        let [r, k] = av.as_matrix_shape();
        let [k2, m] = bv.as_matrix_shape();
        if k != k2 {
            return Err(shape_err("matmul", av, bv));
        }
        let mut out = vec![0.0; r * m];
        matmul_into(av.data(), bv.data(), &mut out, r, k, m);
        Ok(self.push(Op::MatMul(a, b), Array::matrix(r, m, out)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.as_matrix_shape() != bv.as_matrix_shape() {
            return Err(shape_err(op, av, bv));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av, rv));
        }
        let c = av.cols();
        let mut out = av.clone();
        let r = rv.data();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let out = Array::matrix(av.rows(), c, out.into_data());
        Ok(self.push(Op::AddRow(a, row), out))
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).map(|x| scale * x + shift);
        self.push(Op::Affine(a, scale), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// Concatenates along columns; all inputs need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(DiffError::Shape {
                op: "concat",
                left: vec![],
                right: vec![],
            });
        };
        let rows = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(shape_err("concat", self.value(first), pv));
            }
            total += pv.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Array::matrix(rows, total, out)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Log(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    /// Clamps to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("minimum", a, b)?;
        let v = self.value(a).zip_map(self.value(b), f64::min);
        Ok(self.push(Op::Minimum(a, b), v))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Array::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s: f64 = av.data().iter().sum();
        let m = s / av.len().max(1) as f64;
        self.push(Op::Mean(a), Array::scalar(m))
    }

    /// Row-wise sum over columns: `r×c → r×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out: Vec<f64> = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let n = out.len();
        self.push(Op::SumCols(a), Array::matrix(n, 1, out))
    }

    /// Sum over all cells of `-[t ln p + (1-t) ln(1-p)]`, `p` clamped.
    pub fn bce_sum(&mut self, target: Var, pred: Var) -> Result<Var, DiffError> {
        self.same_shape("bce_loss", target, pred)?;
        let (tv, pv) = (self.value(target), self.value(pred));
        let mut s = 0.0;
        for (&t, &p) in tv.data().iter().zip(pv.data()) {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            s -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
        Ok(self.push(Op::BceSum(target, pred), Array::scalar(s)))
    }

    /// Mean binary cross-entropy over all cells.
    pub fn bce_loss(&mut self, target: Var, pred: Var) -> Result<Var, DiffError> {
        let n = self.value(pred).len().max(1);
        let s = self.bce_sum(target, pred)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Mean squared error over all cells.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("mse", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.len().max(1) as f64;
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::Mse(a, b), Array::scalar(s / n)))
    }

    /// `S · x` for a constant sparse matrix `S`.
    pub fn sparse_matmul(&mut self, s: Rc<SparseMatrix>, x: Var) -> Result<Var, DiffError> {
        let xv = self.value(x);
        if s.cols() != xv.rows() {
            return Err(DiffError::Shape {
                op: "sparse_matmul",
                left: vec![s.rows(), s.cols()],
                right: xv.shape().to_vec(),
            });
        }
        let m = xv.cols();
        let mut out = vec![0.0; s.rows() * m];
        s.mul_into(xv.data(), m, &mut out);
        let rows = s.rows();
        Ok(self.push(Op::SparseMatMul(s, x), Array::matrix(rows, m, out)))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = av.data().to_vec();
        for row in out.chunks_mut(c) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Array::matrix(av.rows(), c, out);
        self.push(Op::LogSoftmax(a), out)
    }

    /// Selects column `idx[r]` of each row `r`: `r×c → r×1`.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Result<Var, DiffError> {
        let av = self.value(a);
        if idx.len() != av.rows() {
            return Err(DiffError::Shape {
                op: "pick",
                left: av.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let c = av.cols();
        let mut out = Vec::with_capacity(idx.len());
        for (r, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(DiffError::Index {
                    what: "pick column",
                    index: j,
                    size: c,
                });
            }
            out.push(av.get(r, j));
        }
        let n = out.len();
        Ok(self.push(Op::Pick(a, Rc::new(idx)), Array::matrix(n, 1, out)))
    }

    /// Builds a new matrix whose row `k` is row `idx[k]` of `a`, or zeros
    /// for `None`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<Option<usize>>) -> Result<Var, DiffError> {
        let av = self.value(a);
        let (rows, c) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            match i {
                Some(i) if i < rows => out.extend_from_slice(av.row(i)),
                Some(i) => {
                    return Err(DiffError::Index {
                        what: "gather_rows",
                        index: i,
                        size: rows,
                    })
                }
                None => out.extend(std::iter::repeat_n(0.0, c)),
            }
        }
        let n = idx.len();
        Ok(self.push(Op::GatherRows(a, Rc::new(idx)), Array::matrix(n, c, out)))
    }

    /// Subtracts from each row the mean of the rows sharing its group label.
    pub fn group_center(&mut self, a: Var, groups: Vec<usize>) -> Result<Var, DiffError> {
        let av = self.value(a);
        if groups.len() != av.rows() {
            return Err(DiffError::Shape {
                op: "group_center",
                left: av.shape().to_vec(),
                right: vec![groups.len()],
            });
        }
        let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
        let out = group_center_values(av, &groups, n_groups);
        Ok(self.push(Op::GroupCenter(a, Rc::new(groups), n_groups), out))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(DiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array::filled(lv.shape(), 1.0));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let need = |v: &Var| self.nodes[v.0].needs_grad;
            let y = node.value.get();
            match &node.op {
                Op::Constant => {}
                Op::Param(key) => out.entries.push((*key, g)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let [r, k] = av.as_matrix_shape();
                    let m = bv.cols();
                    if need(a) {
                        let ga = acc_slot(&mut grads, *a, av);
                        matmul_nt_into(g.data(), bv.data(), ga.data_mut(), r, m, k);
                    }
                    if need(b) {
                        let gb = acc_slot(&mut grads, *b, bv);
                        matmul_tn_into(av.data(), g.data(), gb.data_mut(), r, k, m);
                    }
                }
                Op::Add(a, b) => {
                    if need(a) {
                        acc_slot(&mut grads, *a, y).add_assign(&g);
                    }
                    if need(b) {
                        acc_slot(&mut grads, *b, y).add_assign(&g);
                    }
                }
                Op::Sub(a, b) => {
                    if need(a) {
                        acc_slot(&mut grads, *a, y).add_assign(&g);
                    }
                    if need(b) {
                        let gb = acc_slot(&mut grads, *b, y);
                        for (o, &v) in gb.data_mut().iter_mut().zip(g.data()) {
                            *o -= v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if need(a) {
                        let ga = acc_slot(&mut grads, *a, av);
                        for ((o, &gv), &bb) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *o += gv * bb;
                        }
                    }
                    if need(b) {
                        let gb = acc_slot(&mut grads, *b, bv);
                        for ((o, &gv), &aa) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *o += gv * aa;
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if need(a) {
                        acc_slot(&mut grads, *a, y).add_assign(&g);
                    }
                    if !need(row) {
                        continue;
                    }
                    let rv = self.value(*row);
                    let c = rv.cols();
                    let gr = acc_slot(&mut grads, *row, rv);
                    for chunk in g.data().chunks(c) {
                        for (o, &v) in gr.data_mut().iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                }
                Op::Affine(a, s) => {
                    let ga = acc_slot(&mut grads, *a, y);
                    for (o, &v) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += s * v;
                    }
                }
                Op::Concat(parts) => {
                    let total = y.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pv = self.value(*p);
                        let c = pv.cols();
                        if !need(p) {
                            offset += c;
                            continue;
                        }
                        let gp = acc_slot(&mut grads, *p, pv);
                        for r in 0..pv.rows() {
                            let src = &g.data()[r * total + offset..r * total + offset + c];
                            for (o, &v) in gp.row_mut(r).iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                        offset += c;
                    }
                }
                Op::Relu(a) => {
                    let ga = acc_slot(&mut grads, *a, y);
                    for ((o, &gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if yv > 0.0 {
                            *o += gv;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc_slot(&mut grads, *a, y);
                    for ((o, &gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc_slot(&mut grads, *a, y);
                    for ((o, &gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Exp(a) => {
                    let ga = acc_slot(&mut grads, *a, y);
                    for ((o, &gv), &yv) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *o += gv * yv;
                    }
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    let ga = acc_slot(&mut grads, *a, av);
                    for ((o, &gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += gv / x;
                    }
                }
                Op::Square(a) => {
                    let av = self.value(*a);
                    let ga = acc_slot(&mut grads, *a, av);
                    for ((o, &gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o += 2.0 * gv * x;
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let av = self.value(*a);
                    let ga = acc_slot(&mut grads, *a, av);
                    for ((o, &gv), &x) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        if x >= *lo && x <= *hi {
                            *o += gv;
                        }
                    }
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc_slot(&mut grads, *a, av);
                    for (((o, &gv), &x), &z) in
                        ga.data_mut().iter_mut().zip(g.data()).zip(av.data()).zip(bv.data())
                    {
                        if x <= z {
                            *o += gv;
                        }
                    }
                    let gb = acc_slot(&mut grads, *b, bv);
                    for (((o, &gv), &x), &z) in
                        gb.data_mut().iter_mut().zip(g.data()).zip(av.data()).zip(bv.data())
                    {
                        if x > z {
                            *o += gv;
                        }
                    }
                }
                Op::Sum(a) => {
                    let gv = g.item();
                    let av = self.value(*a);
                    for o in acc_slot(&mut grads, *a, av).data_mut() {
                        *o += gv;
                    }
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    let gv = g.item() / av.len().max(1) as f64;
                    for o in acc_slot(&mut grads, *a, av).data_mut() {
                        *o += gv;
                    }
                }
                Op::SumCols(a) => {
                    let av = self.value(*a);
                    let ga = acc_slot(&mut grads, *a, av);
                    for r in 0..av.rows() {
                        let gv = g.data()[r];
                        for o in ga.row_mut(r) {
                            *o += gv;
                        }
                    }
                }
                Op::BceSum(t, p) => {
                    let (tv, pv) = (self.value(*t), self.value(*p));
                    let gv = g.item();
                    let lo = BCE_CLAMP;
                    let hi = 1.0 - BCE_CLAMP;
                    if need(p) {
                        let gp = acc_slot(&mut grads, *p, pv);
                        for ((o, &tt), &pp) in gp.data_mut().iter_mut().zip(tv.data()).zip(pv.data()) {
                            if (lo..=hi).contains(&pp) {
                                *o += gv * (pp - tt) / (pp * (1.0 - pp));
                            }
                        }
                    }
                    if need(t) {
                        let gt = acc_slot(&mut grads, *t, tv);
                        for (o, &pp) in gt.data_mut().iter_mut().zip(pv.data()) {
                            let pc = pp.clamp(lo, hi);
                            *o -= gv * (pc.ln() - (1.0 - pc).ln());
                        }
                    }
                }
                Op::Mse(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let scale = 2.0 * g.item() / av.len().max(1) as f64;
                    let diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, z)| x - z).collect();
                    if need(a) {
                        let ga = acc_slot(&mut grads, *a, av);
                        for (o, d) in ga.data_mut().iter_mut().zip(&diff) {
                            *o += scale * d;
                        }
                    }
                    if need(b) {
                        let gb = acc_slot(&mut grads, *b, bv);
                        for (o, d) in gb.data_mut().iter_mut().zip(&diff) {
                            *o -= scale * d;
                        }
                    }
                }
                Op::SparseMatMul(s, x) => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let gx = acc_slot(&mut grads, *x, xv);
                    s.mul_transpose_into(g.data(), m, gx.data_mut());
                }
                Op::LogSoftmax(a) => {
                    let c = y.cols();
                    let ga = acc_slot(&mut grads, *a, y);
                    for r in 0..y.rows() {
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let yr = y.row(r);
                        let gs: f64 = gr.iter().sum();
                        for ((o, &gv), &lv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += gv - lv.exp() * gs;
                        }
                    }
                }
                Op::Pick(a, idx) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let ga = acc_slot(&mut grads, *a, av);
                    for (r, &j) in idx.iter().enumerate() {
                        ga.data_mut()[r * c + j] += g.data()[r];
                    }
                }
                Op::GatherRows(a, idx) => {
                    let av = self.value(*a);
                    let ga = acc_slot(&mut grads, *a, av);
                    for (k, i) in idx.iter().enumerate() {
                        if let Some(i) = i {
                            let src = g.row(k);
                            for (o, &v) in ga.row_mut(*i).iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::GroupCenter(a, groups, n_groups) => {
                    let centered = group_center_values(&g, groups, *n_groups);
                    let av = self.value(*a);
                    acc_slot(&mut grads, *a, av).add_assign(&centered);
                }
            }
        }
        Ok(out)
    }
}

fn acc_slot<'g>(grads: &'g mut [Option<Array>], v: Var, like: &Array) -> &'g mut Array {
    grads[v.0].get_or_insert_with(|| Array::zeros(like.shape()))
}

fn group_center_values(a: &Array, groups: &[usize], n_groups: usize) -> Array {
    let c = a.cols();
    let mut sums = vec![0.0; n_groups * c];
    let mut counts = vec![0usize; n_groups];
    for (r, &gidx) in groups.iter().enumerate() {
        counts[gidx] += 1;
        for (s, &v) in sums[gidx * c..(gidx + 1) * c].iter_mut().zip(a.row(r)) {
            *s += v;
        }
    }
    let mut out = a.clone();
    for (r, &gidx) in groups.iter().enumerate() {
        let n = counts[gidx] as f64;
        for (o, &s) in out.row_mut(r).iter_mut().zip(&sums[gidx * c..(gidx + 1) * c]) {
            *o -= s / n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Array {
        Array::row_vector(v.to_vec())
    }

    #[test]
    fn relu_example() {
        let mut t = Tape::new();
        let x = t.constant(row(&[-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn bce_closed_form_at_quarter() {
        let mut t = Tape::new();
        let target = t.constant(row(&[0.25]));
        let pred = t.constant(row(&[0.25]));
        let l = t.bce_loss(target, pred).unwrap();
        let want = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
        assert!((t.value(l).item() - want).abs() < 1e-15);
        assert!((want - 0.5623).abs() < 1e-4);
    }

    #[test]
    fn bce_clamps_extreme_predictions() {
        let mut t = Tape::new();
        let target = t.constant(row(&[1.0, 0.0]));
        let pred = t.constant(row(&[0.0, 1.0]));
        let l = t.bce_loss(target, pred).unwrap();
        assert!((t.value(l).item() + BCE_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn sparse_matmul_two_clique() {
        let mut t = Tape::new();
        let s = Rc::new(SparseMatrix::from_dense(&Array::matrix(2, 2, vec![0.5; 4])));
        let x = t.constant(Array::matrix(2, 1, vec![1.0, 3.0]));
        let y = t.sparse_matmul(s, x).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 2.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Array::zeros(&[2, 3]));
        let b = t.constant(Array::zeros(&[2, 2]));
        let err = t.add(a, b).unwrap_err();
        assert_eq!(
            err,
            DiffError::Shape {
                op: "add",
                left: vec![2, 3],
                right: vec![2, 2]
            }
        );
        assert!(err.to_string().contains("[2, 3]") && err.to_string().contains("[2, 2]"));
        assert!(t.matmul(a, a).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let a = t.constant(Array::zeros(&[2, 2]));
        assert_eq!(t.backward(a).unwrap_err(), DiffError::NonScalarLoss(vec![2, 2]));
    }

    #[test]
    fn constant_loss_has_no_param_gradients() {
        let mut store = ParamStore::new();
        let w = store.add("w", row(&[1.0, 2.0])).unwrap();
        let mut t = Tape::new();
        let _wv = t.param(&store, w);
        let c = t.constant(Array::scalar(4.0));
        let grads = t.backward(c).unwrap();
        assert!(grads.get(&store, w).is_none());
        let mut store2 = store.clone();
        store2.accumulate(&grads);
        assert!(store2.grad(w).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn param_nodes_are_shared() {
        let mut store = ParamStore::new();
        let w = store.add("w", Array::scalar(3.0)).unwrap();
        let mut t = Tape::new();
        let a = t.param(&store, w);
        let b = t.param(&store, w);
        assert_eq!(a, b);
        let y = t.mul(a, b).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(&store, w).unwrap().item(), 6.0);
    }

    #[test]
    fn group_center_removes_group_means() {
        let mut t = Tape::new();
        let a = t.constant(Array::matrix(3, 1, vec![0.0, 2.0, 5.0]));
        let c = t.group_center(a, vec![0, 0, 1]).unwrap();
        assert_eq!(t.value(c).data(), &[-1.0, 1.0, 0.0]);
    }
}
