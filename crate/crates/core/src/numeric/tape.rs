//! Reverse-mode gradient tape over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and enough
//! bookkeeping to push a gradient back to its inputs. Nodes are appended in
//! evaluation order, so walking the node list backwards is a valid reverse
//! topological order. A tape is built per batch and thrown away afterwards.

use crate::error::{Error, Result};

use super::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Conv1d { x: Var, kernel: Var, bias: Var },
    Relu(Var),
    MaskFrames { x: Var, lengths: Vec<usize> },
    Softmax(Var),
    LogSoftmax(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Gather { x: Var, index: Vec<usize> },
    GroupMean { x: Var, groups: Vec<Vec<usize>> },
    WeightedSum { x: Var, weights: Vec<f64> },
    Combine { terms: Vec<(Var, f64)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf created with [`Tape::leaf`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    /// Node indices whose backward rule ran, in the order they ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sigmoid_scalar(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Row-wise softmax of a `[rows, d]` slice into `out`.
pub(crate) fn softmax_rows(x: &[f64], d: usize, out: &mut [f64]) {
    for (row, dst) in x.chunks(d).zip(out.chunks_mut(d)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in dst.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        dst.iter_mut().for_each(|o| *o /= sum);
    }
}

fn log_softmax_rows(x: &[f64], d: usize, out: &mut [f64]) {
    for (row, dst) in x.chunks(d).zip(out.chunks_mut(d)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        for (o, &v) in dst.iter_mut().zip(row) {
            *o = v - lse;
        }
    }
}

/// Indices of the `k` largest entries of `values`, ties going to the lower index.
pub(crate) fn topk_indices(values: impl Iterator<Item = f64>, k: usize) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = values.enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.truncate(k);
    order.into_iter().map(|(i, _)| i).collect()
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

    /// Differentiable input (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input (data).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    /// `x · w + b` over the trailing dimension of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] {
            return Err(shape_err("linear", xs, ws));
        }
        if bs != [ws[1]] {
            return Err(shape_err("linear bias", ws, bs));
        }
        let (din, dout) = (ws[0], ws[1]);
        let xv = self.value(x);
        let rows = xv.rows();
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = dout;
        let mut out = vec![0.0; rows * dout];
        let bias = self.value(b).data();
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(bias);
        }
        gemm(
            rows,
            din,
            dout,
            xv.data(),
            din as isize,
            1,
            self.value(w).data(),
            dout as isize,
            1,
            &mut out,
            true,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, needs))
    }

    /// Same-length temporal convolution over `[N, T, Din]` with a `[k, Din, Dout]`
    /// kernel; frames outside `[0, T)` read as zero.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernel).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        if xs.len() != 3 || ks.len() != 3 || xs[2] != ks[1] {
            return Err(shape_err("conv1d", &xs, &ks));
        }
        if ks[0] % 2 == 0 {
            return Err(Error::config(format!(
                "temporal kernel width must be odd, got {}",
                ks[0]
            )));
        }
        if bs != [ks[2]] {
            return Err(shape_err("conv1d bias", &ks, &bs));
        }
        let (n, t, din) = (xs[0], xs[1], xs[2]);
        let (width, dout) = (ks[0], ks[2]);
        let half = (width / 2) as isize;
        let mut out = vec![0.0; n * t * dout];
        let bias_v = self.value(bias).data();
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(bias_v);
        }
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        for b in 0..n {
            for j in 0..width {
                let offset = j as isize - half;
                let Some((lo, hi)) = tap_range(t, offset) else {
                    continue;
                };
                let src = (b * t) as isize + lo as isize + offset;
                gemm(
                    hi - lo,
                    din,
                    dout,
                    &xv[src as usize * din..],
                    din as isize,
                    1,
                    &kv[j * din * dout..],
                    dout as isize,
                    1,
                    &mut out[(b * t + lo) * dout..],
                    true,
                );
            }
        }
        let needs = self.needs(x) || self.needs(kernel) || self.needs(bias);
        let value = Tensor::new(vec![n, t, dout], out)?;
        Ok(self.push(value, Op::Conv1d { x, kernel, bias }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(value, Op::Relu(x), needs)
    }

    /// Zero every frame `t >= lengths[n]` of an `[N, T, ...]` tensor.
    pub fn mask_frames(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() < 2 || xs[0] != lengths.len() {
            return Err(shape_err("mask_frames", xs, &[lengths.len()]));
        }
        let (n, t) = (xs[0], xs[1]);
        if let Some(&bad) = lengths.iter().find(|&&l| l > t) {
            return Err(Error::argument(format!(
                "mask_frames: length {bad} exceeds padded length {t}"
            )));
        }
        let frame = self.value(x).numel() / (n * t).max(1);
        let mut value = self.value(x).clone();
        for (b, &len) in lengths.iter().enumerate() {
            let start = (b * t + len) * frame;
            let end = (b + 1) * t * frame;
            value.data_mut()[start..end].iter_mut().for_each(|v| *v = 0.0);
        }
        let needs = self.needs(x);
        let lengths = lengths.to_vec();
        Ok(self.push(value, Op::MaskFrames { x, lengths }, needs))
    }

    /// Softmax over the trailing dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        softmax_rows(xv.data(), xv.last_dim(), out.data_mut());
        let needs = self.needs(x);
        self.push(out, Op::Softmax(x), needs)
    }

    /// Log-softmax over the trailing dimension.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(xv.shape());
        log_softmax_rows(xv.data(), xv.last_dim(), out.data_mut());
        let needs = self.needs(x);
        self.push(out, Op::LogSoftmax(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid_scalar);
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid(x), needs)
    }

    /// `log σ(x)`, evaluated without forming `σ(x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(log_sigmoid_scalar);
        let needs = self.needs(x);
        self.push(value, Op::LogSigmoid(x), needs)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(value, Op::Scale(x, factor), needs)
    }

    /// Elementwise product of same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    /// Flat-index gather into a 1-d tensor.
    pub fn gather(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.numel()) {
            return Err(Error::argument(format!(
                "gather index {bad} out of range for {:?}",
                xv.shape()
            )));
        }
        let data = index.iter().map(|&i| xv.data()[i]).collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::from_vec(data), Op::Gather { x, index }, needs))
    }

    /// Mean of each group of flat indices; the result takes `shape`.
    pub fn group_mean(&mut self, x: Var, groups: Vec<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if groups.len() != shape.iter().product::<usize>() {
            return Err(shape_err("group_mean", shape, &[groups.len()]));
        }
        let mut data = Vec::with_capacity(groups.len());
        for g in &groups {
            if g.is_empty() {
                return Err(Error::argument("group_mean: empty group"));
            }
            if let Some(&bad) = g.iter().find(|&&i| i >= xv.numel()) {
                return Err(Error::argument(format!("group_mean index {bad} out of range")));
            }
            data.push(g.iter().map(|&i| xv.data()[i]).sum::<f64>() / g.len() as f64);
        }
        let needs = self.needs(x);
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(value, Op::GroupMean { x, groups }, needs))
    }

    /// Mean of the `k` largest entries of a 1-d tensor; ties go to the lower index.
    pub fn topk_mean(&mut self, x: Var, k: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 1 {
            return Err(shape_err("topk_mean", xv.shape(), &[]));
        }
        if k == 0 || k > xv.numel() {
            return Err(Error::argument(format!(
                "topk_mean: k = {k} outside [1, {}]",
                xv.numel()
            )));
        }
        let group = topk_indices(xv.data().iter().copied(), k);
        self.group_mean(x, vec![group], &[])
    }

    /// Per-video, per-class top-k temporal pooling of an `[N, T, C]` tensor
    /// into `[N, C]`, looking only at the first `lengths[n]` frames.
    pub fn topk_pool_time(&mut self, x: Var, lengths: &[usize], k: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 3 || xs[0] != lengths.len() || k.len() != lengths.len() {
            return Err(shape_err("topk_pool_time", &xs, &[lengths.len(), k.len()]));
        }
        let (n, t, c) = (xs[0], xs[1], xs[2]);
        let data = self.value(x).data();
        let mut groups = Vec::with_capacity(n * c);
        for b in 0..n {
            let (len, kb) = (lengths[b], k[b]);
            if len > t || kb == 0 || kb > len {
                return Err(Error::argument(format!(
                    "topk_pool_time: video {b} has length {len} (padded {t}) and k = {kb}"
                )));
            }
            for cls in 0..c {
                let column = (0..len).map(|f| data[(b * t + f) * c + cls]);
                let picked = topk_indices(column, kb);
                groups.push(picked.into_iter().map(|f| (b * t + f) * c + cls).collect());
            }
        }
        self.group_mean(x, groups, &[n, c])
    }

    /// Scalar `Σ weights[i] · x[i]`.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() != weights.len() {
            return Err(shape_err("weighted_sum", xv.shape(), &[weights.len()]));
        }
        let s = xv.data().iter().zip(&weights).map(|(a, w)| a * w).sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, needs))
    }

    /// `Σ coef · term` over same-shaped terms.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::argument("combine: no terms"));
        };
        let shape = self.value(first).shape().to_vec();
        let mut out = Tensor::zeros(&shape);
        let mut needs = false;
        for &(v, coef) in terms {
            let tv = self.value(v);
            if tv.shape() != shape.as_slice() {
                return Err(shape_err("combine", &shape, tv.shape()));
            }
            for (o, a) in out.data_mut().iter_mut().zip(tv.data()) {
                *o += coef * a;
            }
            needs |= self.needs(v);
        }
        let terms = terms.to_vec();
        Ok(self.push(out, Op::Combine { terms }, needs))
    }

    /// Back-propagate from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward", self.value(loss).shape(), &[]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut visited = Vec::new();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            self.backward_node(node, &dy, &mut grads);
        }
        for (idx, g) in grads.iter_mut().enumerate() {
            let node = &self.nodes[idx];
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                *g = None;
            }
        }
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
        if !self.needs(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    gemm(
                        rows,
                        dout,
                        din,
                        dy.data(),
                        dout as isize,
                        1,
                        wv.data(),
                        1,
                        dout as isize,
                        dx.data_mut(),
                        false,
                    );
                    self.accumulate(grads, *x, dx);
                }
                if self.needs(*w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    gemm(
                        din,
                        rows,
                        dout,
                        xv.data(),
                        1,
                        din as isize,
                        dy.data(),
                        dout as isize,
                        1,
                        dw.data_mut(),
                        false,
                    );
                    self.accumulate(grads, *w, dw);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, column_sums(dy.data(), dout));
                }
            }
            Op::Conv1d { x, kernel, bias } => {
                let (xv, kv) = (self.value(*x), self.value(*kernel));
                let (n, t, din) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (width, dout) = (kv.shape()[0], kv.shape()[2]);
                let half = (width / 2) as isize;
                let mut dx = self.needs(*x).then(|| Tensor::zeros(xv.shape()));
                let mut dk = self.needs(*kernel).then(|| Tensor::zeros(kv.shape()));
                for b in 0..n {
                    for j in 0..width {
                        let offset = j as isize - half;
                        let Some((lo, hi)) = tap_range(t, offset) else {
                            continue;
                        };
                        let src = ((b * t) as isize + lo as isize + offset) as usize;
                        let dst = b * t + lo;
                        if let Some(dx) = dx.as_mut() {
                            gemm(
                                hi - lo,
                                dout,
                                din,
                                &dy.data()[dst * dout..],
                                dout as isize,
                                1,
                                &kv.data()[j * din * dout..],
                                1,
                                dout as isize,
                                &mut dx.data_mut()[src * din..],
                                true,
                            );
                        }
                        if let Some(dk) = dk.as_mut() {
                            gemm(
                                din,
                                hi - lo,
                                dout,
                                &xv.data()[src * din..],
                                1,
                                din as isize,
                                &dy.data()[dst * dout..],
                                dout as isize,
                                1,
                                &mut dk.data_mut()[j * din * dout..],
                                true,
                            );
                        }
                    }
                }
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, *kernel, dk);
                }
                if self.needs(*bias) {
                    self.accumulate(grads, *bias, column_sums(dy.data(), dout));
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut dx = dy.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MaskFrames { x, lengths } => {
                let shape = dy.shape();
                let (n, t) = (shape[0], shape[1]);
                let frame = dy.numel() / (n * t).max(1);
                let mut dx = dy.clone();
                for (b, &len) in lengths.iter().enumerate() {
                    dx.data_mut()[(b * t + len) * frame..(b + 1) * t * frame]
                        .iter_mut()
                        .for_each(|v| *v = 0.0);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let d = y.last_dim();
                let mut dx = Tensor::zeros(y.shape());
                for ((yr, gr), dr) in y
                    .data()
                    .chunks(d)
                    .zip(dy.data().chunks(d))
                    .zip(dx.data_mut().chunks_mut(d))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let d = y.last_dim();
                let mut dx = Tensor::zeros(y.shape());
                for ((yr, gr), dr) in y
                    .data()
                    .chunks(d)
                    .zip(dy.data().chunks(d))
                    .zip(dx.data_mut().chunks_mut(d))
                {
                    let total: f64 = gr.iter().sum();
                    for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = gv - yv.exp() * total;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let mut dx = dy.clone();
                for (g, &s) in dx.data_mut().iter_mut().zip(y.data()) {
                    *g *= s * (1.0 - s);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSigmoid(x) => {
                let xv = self.value(*x);
                let mut dx = dy.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    *g *= sigmoid_scalar(-v);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Scale(x, factor) => {
                self.accumulate(grads, *x, dy.map(|g| g * factor));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = Tensor::new(
                    dy.shape().to_vec(),
                    dy.data().iter().zip(bv.data()).map(|(g, v)| g * v).collect(),
                )
                .expect("same shape");
                let db = Tensor::new(
                    dy.shape().to_vec(),
                    dy.data().iter().zip(av.data()).map(|(g, v)| g * v).collect(),
                )
                .expect("same shape");
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Gather { x, index } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (&i, &g) in index.iter().zip(dy.data()) {
                    dx.data_mut()[i] += g;
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GroupMean { x, groups } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (group, &g) in groups.iter().zip(dy.data()) {
                    let share = g / group.len() as f64;
                    for &i in group {
                        dx.data_mut()[i] += share;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::WeightedSum { x, weights } => {
                let g = dy.item();
                let shape = self.value(*x).shape().to_vec();
                let dx = Tensor::new(shape, weights.iter().map(|w| w * g).collect())
                    .expect("weights match input size");
                self.accumulate(grads, *x, dx);
            }
            Op::Combine { terms } => {
                for &(v, coef) in terms {
                    self.accumulate(grads, v, dy.map(|g| g * coef));
                }
            }
        }
    }
}

/// Output-frame range `[lo, hi)` whose input frame `t + offset` lies inside `[0, t)`.
fn tap_range(t: usize, offset: isize) -> Option<(usize, usize)> {
    let lo = (-offset).max(0) as usize;
    let hi = (t as isize - offset).min(t as isize);
    (hi > lo as isize).then_some((lo, hi as usize))
}

fn column_sums(data: &[f64], cols: usize) -> Tensor {
    let mut out = vec![0.0; cols];
    for row in data.chunks(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_vec(out)
}
