use std::borrow::Cow;

use super::{AdResult, AutodiffError, ParamId, ParamStore, Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Embedding(Var, Vec<usize>),
    Conv1dSame(Var, Var),
    MaxOverTime(Var, Vec<usize>),
    MeanOverRows(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Pick(Var, Vec<usize>),
    WeightedSum(Var, Vec<T>),
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run computation graph over a borrowed parameter registry.
pub struct Graph<'p, T: Real> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<'p, T>>,
    param_nodes: Vec<Option<Var>>,
    consumed: bool,
}

/// Per-parameter gradients; parameters the loss does not reach have none.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            grads: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::as_mut)
    }

    /// Gradient of one parameter, zeros when unreachable from the loss.
    pub fn dense(&self, store: &ParamStore<T>, id: ParamId) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor<T>) {
        self.grads[id.0] = Some(grad);
    }

    /// Adds another gradient set into this one.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => m.add_assign(t),
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(c);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::all_finite)
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn softmax_row<T: Real>(x: &[T], out: &mut [T]) {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum = sum + *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn conv_left_pad(width: usize) -> usize {
    (width - 1) / 2
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
            consumed: false,
        }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    /// Drops all recorded nodes so the graph can be rebuilt.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_nodes.iter_mut().for_each(|p| *p = None);
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> AdResult<Var> {
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                self.requires(*a) || self.requires(*b)
            }
            Op::Conv1dSame(a, b) => self.requires(*a) || self.requires(*b),
            Op::Concat(vs) | Op::StackRows(vs) => vs.iter().any(|v| self.requires(*v)),
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Log(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Embedding(a, _)
            | Op::MaxOverTime(a, _)
            | Op::MeanOverRows(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::Pick(a, _)
            | Op::WeightedSum(a, _) => self.requires(*a),
        };
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> AdResult<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Leaf for a registered parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.store.get(id)),
            op: Op::Param(id),
            requires_grad: self.store.entry(id).trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> AdResult<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> AdResult<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(shape_err(op, format!("expected a matrix, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    /// `[m × k] · [k × n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    /// Elementwise sum; `b` may also be a single row broadcast over the
    /// leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> AdResult<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let out = if av.shape() == bv.shape() {
            av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect()
        } else if bv.len() == av.cols() && bv.rows() == 1 && av.rank() >= 1 {
            let c = av.cols();
            av.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + bv.data()[i % c])
                .collect()
        } else {
            return Err(shape_err("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        };
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Add(a, b), "add")
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> AdResult<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_values(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> AdResult<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_values(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), "mul")
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn scale(&mut self, a: Var, c: T) -> AdResult<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn tanh(&mut self, a: Var) -> AdResult<Var> {
        let out = self.value(a).map(T::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    /// Logistic sigmoid.
    pub fn sigmoid(&mut self, a: Var) -> AdResult<Var> {
        let out = self.value(a).map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> AdResult<Var> {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a), "relu")
    }

    /// Natural logarithm; non-positive inputs trip the finiteness check.
    pub fn log(&mut self, a: Var) -> AdResult<Var> {
        let out = self.value(a).map(|x| if x < T::zero() { T::nan() } else { x.ln() });
        self.push(out, Op::Log(a), "log")
    }

    /// Concatenation of matrices with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> AdResult<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let mut rows = None;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat")?;
            if *rows.get_or_insert(r) != r {
                return Err(shape_err("concat", "row counts differ".into()));
            }
            total += c;
        }
        let rows = rows.unwrap_or(0);
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        self.push(Tensor::new(vec![rows, total], out)?, Op::Concat(parts.to_vec()), "concat")
    }

    /// Stacks matrices with equal column counts along the first axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> AdResult<Var> {
        if parts.is_empty() {
            return Err(shape_err("stack_rows", "no inputs".into()));
        }
        let mut cols = None;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "stack_rows")?;
            if *cols.get_or_insert(c) != c {
                return Err(shape_err("stack_rows", "column counts differ".into()));
            }
            rows += r;
        }
        let cols = cols.unwrap_or(0);
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::new(vec![rows, cols], out)?, Op::StackRows(parts.to_vec()), "stack_rows")
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> AdResult<Var> {
        let (r, c) = self.matrix_dims(a, "slice_rows")?;
        if start >= end || end > r {
            return Err(AutodiffError::Index {
                op: "slice_rows",
                detail: format!("{start}..{end} of {r} rows"),
            });
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        self.push(Tensor::new(vec![end - start, c], data)?, Op::SliceRows(a, start), "slice_rows")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> AdResult<Var> {
        let (r, c) = self.matrix_dims(a, "slice_cols")?;
        if start >= end || end > c {
            return Err(AutodiffError::Index {
                op: "slice_cols",
                detail: format!("{start}..{end} of {c} columns"),
            });
        }
        let av = self.value(a);
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&av.row_slice(i)[start..end]);
        }
        self.push(Tensor::new(vec![r, end - start], data)?, Op::SliceCols(a, start), "slice_cols")
    }

    pub fn transpose(&mut self, a: Var) -> AdResult<Var> {
        let (r, c) = self.matrix_dims(a, "transpose")?;
        let av = self.value(a).data();
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                data.push(av[i * c + j]);
            }
        }
        self.push(Tensor::new(vec![c, r], data)?, Op::Transpose(a), "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> AdResult<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push(out, Op::Reshape(a), "reshape")
    }

    /// Rows of `table` (`[V × e]`) selected by `ids`, giving `[ids.len() × e]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> AdResult<Var> {
        let (v, e) = self.matrix_dims(table, "embedding_lookup")?;
        if ids.is_empty() {
            return Err(shape_err("embedding_lookup", "no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(AutodiffError::Index {
                op: "embedding_lookup",
                detail: format!("id {bad} >= vocabulary size {v}"),
            });
        }
        let tv = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            data.extend_from_slice(tv.row_slice(i));
        }
        self.push(
            Tensor::new(vec![ids.len(), e], data)?,
            Op::Embedding(table, ids.to_vec()),
            "embedding_lookup",
        )
    }

    /// 1-D convolution over time of `input` (`[n × e]`) with `kernel`
    /// (`[k × e × m]`), zero-padded so the output is `[n × m]`. Tap `i` of the
    /// kernel reads position `t + i - (k - 1) / 2`.
    pub fn conv1d_same(&mut self, input: Var, kernel: Var) -> AdResult<Var> {
        let (n, e) = self.matrix_dims(input, "conv1d_same")?;
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 3 || ks[1] != e {
            return Err(shape_err("conv1d_same", format!("input [{n}x{e}], kernel {ks:?}")));
        }
        let (k, m) = (ks[0], ks[2]);
        if k == 0 || k > n {
            return Err(shape_err("conv1d_same", format!("kernel width {k} vs length {n}")));
        }
        let left = conv_left_pad(k);
        let x = self.value(input).data();
        let w = self.value(kernel).data();
        let mut out = vec![T::zero(); n * m];
        for t in 0..n {
            let orow = &mut out[t * m..(t + 1) * m];
            for i in 0..k {
                let Some(src) = (t + i).checked_sub(left).filter(|&s| s < n) else {
                    continue;
                };
                for c in 0..e {
                    let xv = x[src * e + c];
                    let wrow = &w[(i * e + c) * m..(i * e + c + 1) * m];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o = *o + xv * wv;
                    }
                }
            }
        }
        self.push(Tensor::new(vec![n, m], out)?, Op::Conv1dSame(input, kernel), "conv1d_same")
    }

    /// Column-wise maximum of `[n × d]`, giving `[1 × d]`. Ties resolve to the
    /// earliest row.
    pub fn max_over_time(&mut self, a: Var) -> AdResult<Var> {
        let (n, d) = self.matrix_dims(a, "max_over_time")?;
        let av = self.value(a);
        let mut arg = vec![0; d];
        let mut out = av.row_slice(0).to_vec();
        for t in 1..n {
            for (j, &v) in av.row_slice(t).iter().enumerate() {
                if v > out[j] {
                    out[j] = v;
                    arg[j] = t;
                }
            }
        }
        self.push(Tensor::new(vec![1, d], out)?, Op::MaxOverTime(a, arg), "max_over_time")
    }

    /// Column means of `[n × d]`, giving `[1 × d]`.
    pub fn mean_over_rows(&mut self, a: Var) -> AdResult<Var> {
        let (n, d) = self.matrix_dims(a, "mean_over_rows")?;
        let av = self.value(a);
        let mut out = vec![T::zero(); d];
        for t in 0..n {
            for (o, &v) in out.iter_mut().zip(av.row_slice(t)) {
                *o = *o + v;
            }
        }
        let nn = T::from_usize(n).expect("row count fits");
        out.iter_mut().for_each(|o| *o = *o / nn);
        self.push(Tensor::new(vec![1, d], out)?, Op::MeanOverRows(a), "mean_over_rows")
    }

    /// Softmax along the last axis, stabilized by subtracting the row max.
    pub fn softmax_rows(&mut self, a: Var) -> AdResult<Var> {
        let av = self.value(a);
        let c = av.cols();
        if c == 0 {
            return Err(shape_err("softmax_rows", "zero-width rows".into()));
        }
        let mut out = vec![T::zero(); av.len()];
        for (x, o) in av.data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(x, o);
        }
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// `log(softmax(x))` along the last axis, computed without forming the
    /// softmax.
    pub fn log_softmax_rows(&mut self, a: Var) -> AdResult<Var> {
        let av = self.value(a);
        let c = av.cols();
        if c == 0 {
            return Err(shape_err("log_softmax_rows", "zero-width rows".into()));
        }
        let mut out = vec![T::zero(); av.len()];
        for (x, o) in av.data().chunks(c).zip(out.chunks_mut(c)) {
            let max = x.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &v in x {
                sum = sum + (v - max).exp();
            }
            let lse = max + sum.ln();
            for (o, &v) in o.iter_mut().zip(x) {
                *o = v - lse;
            }
        }
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::LogSoftmaxRows(a), "log_softmax_rows")
    }

    /// Element `cols[r]` of every row `r`, giving `[1 × rows]`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> AdResult<Var> {
        let av = self.value(a);
        let (r, c) = (av.rows(), av.cols());
        if cols.len() != r {
            return Err(shape_err("pick", format!("{} indices for {r} rows", cols.len())));
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(AutodiffError::Index {
                op: "pick",
                detail: format!("column {bad} of {c}"),
            });
        }
        let data = cols.iter().enumerate().map(|(i, &j)| av.at(i, j)).collect();
        self.push(Tensor::new(vec![1, r], data)?, Op::Pick(a, cols.to_vec()), "pick")
    }

    /// `Σ_i w_i x_i` as a scalar, summed in index order.
    pub fn weighted_sum(&mut self, a: Var, weights: &[T]) -> AdResult<Var> {
        let av = self.value(a);
        if weights.len() != av.len() {
            return Err(shape_err("weighted_sum", format!("{} weights for {} values", weights.len(), av.len())));
        }
        let mut s = T::zero();
        for (&x, &w) in av.data().iter().zip(weights) {
            s = s + w * x;
        }
        self.push(Tensor::scalar(s), Op::WeightedSum(a, weights.to_vec()), "weighted_sum")
    }

    pub fn sum(&mut self, a: Var) -> AdResult<Var> {
        let ones = vec![T::one(); self.value(a).len()];
        self.weighted_sum(a, &ones)
    }

    /// Reverse pass from a scalar loss. The graph must be [`reset`](Self::reset)
    /// before it can be differentiated again.
    pub fn backward(&mut self, loss: Var) -> AdResult<Gradients<T>> {
        if self.consumed {
            return Err(AutodiffError::Consumed);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), T::one()));
        let mut out = Gradients::empty(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, g, &mut grads, &mut out)?;
        }
        if !out.all_finite() {
            return Err(AutodiffError::NonFinite { op: "backward" });
        }
        Ok(out)
    }

    fn slot<'a>(
        &self,
        grads: &'a mut [Option<Tensor<T>>],
        v: Var,
    ) -> Option<&'a mut Tensor<T>> {
        if !self.requires(v) {
            return None;
        }
        let shape = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(shape)))
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        out: &mut Gradients<T>,
    ) -> AdResult<()> {
        let node = &self.nodes[idx];
        let y = node.value.as_ref();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => match out.get_mut(*id) {
                Some(acc) => acc.add_assign(&g),
                None => out.set(*id, g),
            },
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(da) = self.slot(grads, *a) {
                    let da = da.data_mut();
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let mut s = T::zero();
                            for (&x, &w) in grow.iter().zip(brow) {
                                s = s + x * w;
                            }
                            da[i * k + p] = da[i * k + p] + s;
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    let db = db.data_mut();
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av_ip = av[i * k + p];
                            let drow = &mut db[p * n..(p + 1) * n];
                            for (d, &x) in drow.iter_mut().zip(grow) {
                                *d = *d + av_ip * x;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.add_assign(&g);
                }
                let same = self.shape(*a) == self.shape(*b);
                if let Some(db) = self.slot(grads, *b) {
                    if same {
                        db.add_assign(&g);
                    } else {
                        let c = db.len();
                        let dbd = db.data_mut();
                        for row in gd.chunks(c) {
                            for (d, &x) in dbd.iter_mut().zip(row) {
                                *d = *d + x;
                            }
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.add_assign(&g);
                }
                if let Some(db) = self.slot(grads, *b) {
                    for (d, &x) in db.data_mut().iter_mut().zip(gd) {
                        *d = *d - x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &x), &w) in da.data_mut().iter_mut().zip(gd).zip(bv) {
                        *d = *d + x * w;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, &x), &w) in db.data_mut().iter_mut().zip(gd).zip(av) {
                        *d = *d + x * w;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = self.slot(grads, *a) {
                    for (d, &x) in da.data_mut().iter_mut().zip(gd) {
                        *d = *d + x * *c;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &x), &yv) in da.data_mut().iter_mut().zip(gd).zip(y.data()) {
                        *d = *d + x * (T::one() - yv * yv);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &x), &yv) in da.data_mut().iter_mut().zip(gd).zip(y.data()) {
                        *d = *d + x * yv * (T::one() - yv);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &x), &yv) in da.data_mut().iter_mut().zip(gd).zip(y.data()) {
                        if yv > T::zero() {
                            *d = *d + x;
                        }
                    }
                }
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &x), &v) in da.data_mut().iter_mut().zip(gd).zip(av) {
                        *d = *d + x / v;
                    }
                }
            }
            Op::Concat(parts) => {
                let total = y.cols();
                let rows = y.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if let Some(dp) = self.slot(grads, p) {
                        let dpd = dp.data_mut();
                        for r in 0..rows {
                            let src = &gd[r * total + offset..r * total + offset + c];
                            for (d, &x) in dpd[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *d = *d + x;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(dp) = self.slot(grads, p) {
                        for (d, &x) in dp.data_mut().iter_mut().zip(&gd[offset..offset + n]) {
                            *d = *d + x;
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let c = y.cols();
                if let Some(da) = self.slot(grads, *a) {
                    let dst = &mut da.data_mut()[start * c..start * c + gd.len()];
                    for (d, &x) in dst.iter_mut().zip(gd) {
                        *d = *d + x;
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let w = y.cols();
                let c = self.shape(*a)[1];
                if let Some(da) = self.slot(grads, *a) {
                    let dad = da.data_mut();
                    for (r, row) in gd.chunks(w).enumerate() {
                        for (d, &x) in dad[r * c + start..r * c + start + w].iter_mut().zip(row) {
                            *d = *d + x;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                if let Some(da) = self.slot(grads, *a) {
                    let dad = da.data_mut();
                    for i in 0..r {
                        for j in 0..c {
                            dad[i * c + j] = dad[i * c + j] + gd[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    for (d, &x) in da.data_mut().iter_mut().zip(gd) {
                        *d = *d + x;
                    }
                }
            }
            Op::Embedding(table, ids) => {
                let e = y.cols();
                if let Some(dt) = self.slot(grads, *table) {
                    let dtd = dt.data_mut();
                    for (t, &id) in ids.iter().enumerate() {
                        let src = &gd[t * e..(t + 1) * e];
                        for (d, &x) in dtd[id * e..(id + 1) * e].iter_mut().zip(src) {
                            *d = *d + x;
                        }
                    }
                }
            }
            Op::Conv1dSame(input, kernel) => {
                let (n, e) = (self.shape(*input)[0], self.shape(*input)[1]);
                let ks = self.shape(*kernel);
                let (k, m) = (ks[0], ks[2]);
                let left = conv_left_pad(k);
                let x = self.value(*input).data();
                let w = self.value(*kernel).data();
                if let Some(dx) = self.slot(grads, *input) {
                    let dxd = dx.data_mut();
                    for t in 0..n {
                        let grow = &gd[t * m..(t + 1) * m];
                        for i in 0..k {
                            let Some(src) = (t + i).checked_sub(left).filter(|&s| s < n) else {
                                continue;
                            };
                            for c in 0..e {
                                let wrow = &w[(i * e + c) * m..(i * e + c + 1) * m];
                                let mut s = T::zero();
                                for (&gv, &wv) in grow.iter().zip(wrow) {
                                    s = s + gv * wv;
                                }
                                dxd[src * e + c] = dxd[src * e + c] + s;
                            }
                        }
                    }
                }
                if let Some(dk) = self.slot(grads, *kernel) {
                    let dkd = dk.data_mut();
                    for t in 0..n {
                        let grow = &gd[t * m..(t + 1) * m];
                        for i in 0..k {
                            let Some(src) = (t + i).checked_sub(left).filter(|&s| s < n) else {
                                continue;
                            };
                            for c in 0..e {
                                let xv = x[src * e + c];
                                let drow = &mut dkd[(i * e + c) * m..(i * e + c + 1) * m];
                                for (d, &gv) in drow.iter_mut().zip(grow) {
                                    *d = *d + xv * gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxOverTime(a, arg) => {
                let d = y.cols();
                if let Some(da) = self.slot(grads, *a) {
                    let dad = da.data_mut();
                    for (j, &t) in arg.iter().enumerate() {
                        dad[t * d + j] = dad[t * d + j] + gd[j];
                    }
                }
            }
            Op::MeanOverRows(a) => {
                let (n, d) = (self.shape(*a)[0], self.shape(*a)[1]);
                let nn = T::from_usize(n).expect("row count fits");
                if let Some(da) = self.slot(grads, *a) {
                    let dad = da.data_mut();
                    for t in 0..n {
                        for j in 0..d {
                            dad[t * d + j] = dad[t * d + j] + gd[j] / nn;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                if let Some(da) = self.slot(grads, *a) {
                    for ((drow, grow), yrow) in da
                        .data_mut()
                        .chunks_mut(c)
                        .zip(gd.chunks(c))
                        .zip(y.data().chunks(c))
                    {
                        let mut dot = T::zero();
                        for (&gv, &yv) in grow.iter().zip(yrow) {
                            dot = dot + gv * yv;
                        }
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = *d + yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let c = y.cols();
                if let Some(da) = self.slot(grads, *a) {
                    for ((drow, grow), yrow) in da
                        .data_mut()
                        .chunks_mut(c)
                        .zip(gd.chunks(c))
                        .zip(y.data().chunks(c))
                    {
                        let mut total = T::zero();
                        for &gv in grow {
                            total = total + gv;
                        }
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = *d + gv - yv.exp() * total;
                        }
                    }
                }
            }
            Op::Pick(a, cols) => {
                let c = self.value(*a).cols();
                if let Some(da) = self.slot(grads, *a) {
                    let dad = da.data_mut();
                    for (r, &j) in cols.iter().enumerate() {
                        dad[r * c + j] = dad[r * c + j] + gd[r];
                    }
                }
            }
            Op::WeightedSum(a, w) => {
                let s = gd[0];
                if let Some(da) = self.slot(grads, *a) {
                    for (d, &wv) in da.data_mut().iter_mut().zip(w) {
                        *d = *d + wv * s;
                    }
                }
            }
        }
        Ok(())
    }
}
