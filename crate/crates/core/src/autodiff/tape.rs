use super::kernels;
use super::{AutodiffError, Parameter, Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    MeanAxis {
        a: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
    },
    Reshape(Var),
    Transpose {
        a: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        width: usize,
    },
    Softmax {
        a: Var,
        width: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        width: usize,
    },
    Gelu(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
        classes: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<usize>,
}

/// Records operations in execution order so that adjoints can be replayed in
/// reverse. A tape supports exactly one backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    grad_enabled: bool,
    differentiated: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
            differentiated: false,
        }
    }

    /// A tape that never tracks gradients; `backward` on it is an error.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, param: Option<usize>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(
        &mut self,
        op_name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad, None))
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    /// Free leaf whose gradient can be read back with [`Tape::grad`].
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, None)
    }

    /// Leaf bound to entry `id` of a parameter list; see [`Tape::accumulate_into`].
    pub fn parameter(&mut self, id: usize, param: &Parameter<T>) -> Var {
        self.push(param.value().clone(), Op::Leaf, true, Some(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::from_parts(vec![m, n], out);
        self.push_op("matmul", value, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    /// `[B×m×k] · [B×k×n] → [B×m×n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("batch_matmul", sa, sb));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for ((ab, bb), cb) in ad
            .chunks_exact(m * k)
            .zip(bd.chunks_exact(k * n))
            .zip(out.chunks_exact_mut(m * n))
        {
            kernels::matmul_acc(ab, bb, cb, m, k, n);
        }
        let value = Tensor::from_parts(vec![batch, m, n], out);
        self.push_op("batch_matmul", value, Op::BatchMatMul { a, b, batch, m, k, n }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_parts(sa.to_vec(), data);
        self.push_op("add", value, Op::Add(a, b), &[a, b])
    }

    /// Adds `b` to every trailing block of `a`; `b`'s shape must equal the
    /// trailing dimensions of `a` (bias rows, positional tables).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add_broadcast", sa, sb));
        }
        let bd = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_exact_mut(bd.len()) {
            for (x, &y) in chunk.iter_mut().zip(bd) {
                *x += y;
            }
        }
        let value = Tensor::from_parts(sa.to_vec(), data);
        self.push_op("add_broadcast", value, Op::AddBroadcast(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::from_parts(sa.to_vec(), data);
        self.push_op("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var, AutodiffError> {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| x * factor).collect();
        let value = Tensor::from_parts(src.shape().to_vec(), data);
        self.push_op("scale", value, Op::Scale(a, factor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let mut total = T::zero();
        for &x in self.value(a).data() {
            total += x;
        }
        self.push_op("sum", Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let src = self.value(a);
        let mut total = T::zero();
        for &x in src.data() {
            total += x;
        }
        let value = Tensor::scalar(total / T::real(src.len() as f64));
        self.push_op("mean", value, Op::Mean(a), &[a])
    }

    /// Mean along `axis`, removing that axis.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::Axis { axis, shape });
        }
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for j in 0..axis_len {
                let base = (o * axis_len + j) * inner;
                for (d, &x) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *d += x;
                }
            }
        }
        let inv = T::one() / T::real(axis_len as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::from_parts(out_shape, out);
        self.push_op(
            "mean_axis",
            value,
            Op::MeanAxis {
                a,
                outer,
                axis_len,
                inner,
            },
            &[a],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push_op("reshape", value, Op::Reshape(a), &[a])
    }

    /// Swaps the last two axes (plain matrix transpose for rank 2).
    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 {
            return Err(AutodiffError::Axis { axis: 1, shape });
        }
        let r = shape.len();
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let batch = shape[..r - 2].iter().product();
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for (s, d) in src.chunks_exact(rows * cols).zip(out.chunks_exact_mut(rows * cols)) {
            kernels::transpose_into(s, d, rows, cols);
        }
        let mut out_shape = shape;
        out_shape.swap(r - 2, r - 1);
        let value = Tensor::from_parts(out_shape, out);
        self.push_op("transpose", value, Op::Transpose { a, batch, rows, cols }, &[a])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        let first = *inputs.first().ok_or(AutodiffError::EmptyConcat)?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(AutodiffError::Axis { axis, shape: base });
        }
        let mut axis_total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            axis_total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let width = axis_total * inner;
        let mut out = vec![T::zero(); outer * width];
        let mut parts = Vec::with_capacity(inputs.len());
        let mut offset = 0;
        for &v in inputs {
            let w = self.shape(v)[axis] * inner;
            let src = self.value(v).data();
            for o in 0..outer {
                out[o * width + offset..o * width + offset + w].copy_from_slice(&src[o * w..(o + 1) * w]);
            }
            parts.push((v, w));
            offset += w;
        }
        let mut out_shape = base;
        out_shape[axis] = axis_total;
        let value = Tensor::from_parts(out_shape, out);
        self.push_op("concat", value, Op::Concat { parts, outer, width }, inputs)
    }

    /// Softmax over the last axis, stabilized by subtracting each row's max.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let src = self.value(a);
        if !src.is_finite() {
            return Err(AutodiffError::NonFinite { op: "softmax_rows" });
        }
        let width = *src.shape().last().unwrap_or(&1);
        let mut out = vec![T::zero(); src.len()];
        for (row, o) in src.data().chunks_exact(width).zip(out.chunks_exact_mut(width)) {
            kernels::softmax_row(row, o);
        }
        let value = Tensor::from_parts(src.shape().to_vec(), out);
        self.push_op("softmax_rows", value, Op::Softmax { a, width }, &[a])
    }

    /// Normalizes each row (last axis) to zero mean and unit population
    /// variance, then applies `gain` and `shift`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var, AutodiffError> {
        let sx = self.shape(x);
        let width = *sx.last().unwrap_or(&1);
        if width < 2 || self.shape(gain) != [width] || self.shape(shift) != [width] {
            return Err(shape_err("layer_norm", sx, self.shape(gain)));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(shift).data());
        let n = T::real(width as f64);
        let eps = T::real(eps);
        let rows = src.len() / width;
        let mut xhat = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); src.len()];
        for ((row, xh), o) in src
            .chunks_exact(width)
            .zip(xhat.chunks_exact_mut(width))
            .zip(out.chunks_exact_mut(width))
        {
            let mut mean = T::zero();
            for &v in row {
                mean += v;
            }
            mean = mean / n;
            let mut var = T::zero();
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            let inv = T::one() / (var / n + eps).sqrt();
            inv_std.push(inv);
            for j in 0..width {
                xh[j] = (row[j] - mean) * inv;
                o[j] = xh[j] * g[j] + b[j];
            }
        }
        let value = Tensor::from_parts(sx.to_vec(), out);
        self.push_op(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
                width,
            },
            &[x, gain, shift],
        )
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let src = self.value(a);
        let data = src.data().iter().map(|&x| kernels::gelu(x)).collect();
        let value = Tensor::from_parts(src.shape().to_vec(), data);
        self.push_op("gelu", value, Op::Gelu(a), &[a])
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, AutodiffError> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() {
            return Err(AutodiffError::Shape {
                op: "cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let classes = s[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(AutodiffError::LabelOutOfRange { label, classes });
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); src.len()];
        let mut total = T::zero();
        for ((row, p), &label) in src
            .chunks_exact(classes)
            .zip(probs.chunks_exact_mut(classes))
            .zip(labels)
        {
            total += kernels::nll_row(row, label);
            kernels::softmax_row(row, p);
        }
        let value = Tensor::scalar(total / T::real(labels.len() as f64));
        self.push_op(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
                classes,
            },
            &[logits],
        )
    }

    pub fn is_differentiated(&self) -> bool {
        self.differentiated
    }

    /// Replays adjoints from the scalar `loss` back to every leaf that tracks
    /// gradients. Nodes are stored in execution order, so reverse index order
    /// is a reverse topological order.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if !self.grad_enabled {
            return Err(AutodiffError::GradDisabled);
        }
        if self.differentiated {
            return Err(AutodiffError::BackwardReplayed);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        self.differentiated = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(nodes, grads, node, &g);
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::from_parts(node.value.shape().to_vec(), g.clone()))
    }

    /// Adds each parameter leaf's gradient into `params[id].grad`.
    pub fn accumulate_into(&self, params: &mut [Parameter<T>]) {
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                for (dst, &src) in params[id].grad_mut().data_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    /// `backward` followed by `accumulate_into`.
    pub fn backward_into(&mut self, loss: Var, params: &mut [Parameter<T>]) -> Result<(), AutodiffError> {
        self.backward(loss)?;
        self.accumulate_into(params);
        Ok(())
    }
}

fn slot<'a, T: Real>(nodes: &[Node<T>], grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut [T]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
}

fn backprop_node<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], node: &Node<T>, g: &[T]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            if let Some(ga) = slot(nodes, grads, a) {
                kernels::matmul_nt_acc(g, val(b), ga, m, k, n);
            }
            if let Some(gb) = slot(nodes, grads, b) {
                kernels::matmul_tn_acc(val(a), g, gb, m, k, n);
            }
        }
        &Op::BatchMatMul { a, b, batch, m, k, n } => {
            if let Some(ga) = slot(nodes, grads, a) {
                for i in 0..batch {
                    kernels::matmul_nt_acc(
                        &g[i * m * n..(i + 1) * m * n],
                        &val(b)[i * k * n..(i + 1) * k * n],
                        &mut ga[i * m * k..(i + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
            }
            if let Some(gb) = slot(nodes, grads, b) {
                for i in 0..batch {
                    kernels::matmul_tn_acc(
                        &val(a)[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        &mut gb[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
        &Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(gv) = slot(nodes, grads, v) {
                    add_into(gv, g);
                }
            }
        }
        &Op::AddBroadcast(a, b) => {
            if let Some(ga) = slot(nodes, grads, a) {
                add_into(ga, g);
            }
            if let Some(gb) = slot(nodes, grads, b) {
                let w = gb.len();
                for chunk in g.chunks_exact(w) {
                    add_into(gb, chunk);
                }
            }
        }
        &Op::Mul(a, b) => {
            if let Some(ga) = slot(nodes, grads, a) {
                for ((d, &gi), &bi) in ga.iter_mut().zip(g).zip(val(b)) {
                    *d += gi * bi;
                }
            }
            if let Some(gb) = slot(nodes, grads, b) {
                for ((d, &gi), &ai) in gb.iter_mut().zip(g).zip(val(a)) {
                    *d += gi * ai;
                }
            }
        }
        &Op::Scale(a, s) => {
            if let Some(ga) = slot(nodes, grads, a) {
                for (d, &gi) in ga.iter_mut().zip(g) {
                    *d += gi * s;
                }
            }
        }
        &Op::Sum(a) => {
            if let Some(ga) = slot(nodes, grads, a) {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        &Op::Mean(a) => {
            if let Some(ga) = slot(nodes, grads, a) {
                let share = g[0] / T::real(ga.len() as f64);
                ga.iter_mut().for_each(|d| *d += share);
            }
        }
        &Op::MeanAxis {
            a,
            outer,
            axis_len,
            inner,
        } => {
            if let Some(ga) = slot(nodes, grads, a) {
                let inv = T::one() / T::real(axis_len as f64);
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..axis_len {
                        let base = (o * axis_len + j) * inner;
                        for (d, &gi) in ga[base..base + inner].iter_mut().zip(src) {
                            *d += gi * inv;
                        }
                    }
                }
            }
        }
        &Op::Reshape(a) => {
            if let Some(ga) = slot(nodes, grads, a) {
                add_into(ga, g);
            }
        }
        &Op::Transpose { a, batch, rows, cols } => {
            if let Some(ga) = slot(nodes, grads, a) {
                let block = rows * cols;
                for i in 0..batch {
                    let back = kernels::transpose(&g[i * block..(i + 1) * block], cols, rows);
                    add_into(&mut ga[i * block..(i + 1) * block], &back);
                }
            }
        }
        Op::Concat { parts, outer, width } => {
            let mut offset = 0;
            for &(v, w) in parts {
                if let Some(gv) = slot(nodes, grads, v) {
                    for o in 0..*outer {
                        add_into(
                            &mut gv[o * w..(o + 1) * w],
                            &g[o * width + offset..o * width + offset + w],
                        );
                    }
                }
                offset += w;
            }
        }
        &Op::Softmax { a, width } => {
            if let Some(ga) = slot(nodes, grads, a) {
                let y = node.value.data();
                for ((d, gr), yr) in ga
                    .chunks_exact_mut(width)
                    .zip(g.chunks_exact(width))
                    .zip(y.chunks_exact(width))
                {
                    let mut dot = T::zero();
                    for (&gi, &yi) in gr.iter().zip(yr) {
                        dot += gi * yi;
                    }
                    for ((di, &gi), &yi) in d.iter_mut().zip(gr).zip(yr) {
                        *di += yi * (gi - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            shift,
            xhat,
            inv_std,
            width,
        } => {
            let w = *width;
            let gv = val(*gain);
            if let Some(gg) = slot(nodes, grads, *gain) {
                for (gr, xr) in g.chunks_exact(w).zip(xhat.chunks_exact(w)) {
                    for ((d, &gi), &xi) in gg.iter_mut().zip(gr).zip(xr) {
                        *d += gi * xi;
                    }
                }
            }
            if let Some(gs) = slot(nodes, grads, *shift) {
                for gr in g.chunks_exact(w) {
                    add_into(gs, gr);
                }
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                let n = T::real(w as f64);
                let mut dxhat = vec![T::zero(); w];
                for (((d, gr), xr), &inv) in gx
                    .chunks_exact_mut(w)
                    .zip(g.chunks_exact(w))
                    .zip(xhat.chunks_exact(w))
                    .zip(inv_std)
                {
                    let mut sum = T::zero();
                    let mut sum_x = T::zero();
                    for j in 0..w {
                        dxhat[j] = gr[j] * gv[j];
                        sum += dxhat[j];
                        sum_x += dxhat[j] * xr[j];
                    }
                    for j in 0..w {
                        d[j] += inv / n * (n * dxhat[j] - sum - xr[j] * sum_x);
                    }
                }
            }
        }
        &Op::Gelu(a) => {
            if let Some(ga) = slot(nodes, grads, a) {
                for ((d, &gi), &x) in ga.iter_mut().zip(g).zip(val(a)) {
                    *d += gi * kernels::gelu_grad(x);
                }
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
            classes,
        } => {
            if let Some(gl) = slot(nodes, grads, *logits) {
                let scale = g[0] / T::real(labels.len() as f64);
                for ((d, p), &label) in gl
                    .chunks_exact_mut(*classes)
                    .zip(probs.chunks_exact(*classes))
                    .zip(labels)
                {
                    for (j, (di, &pj)) in d.iter_mut().zip(p).enumerate() {
                        let target = if j == label { T::one() } else { T::zero() };
                        *di += scale * (pj - target);
                    }
                }
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
