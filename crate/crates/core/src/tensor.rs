//! Dense row-major tensors and a reverse-mode tape covering the handful of
//! operations the network uses.
//!
//! Every op checks its output for NaN/Inf and fails with the op name and the
//! shapes involved instead of letting non-finite values propagate.

use rand::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite output (input shapes {shapes:?})")]
    NonFinite {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("dropout rate {0} must lie in [0, 1)")]
    DropoutRate(f64),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape {
        op,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} vs {} values", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::vector(vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn check_finite(self, op: &'static str, inputs: &[&Tensor]) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(TensorError::NonFinite {
                op,
                shapes: inputs.iter().map(|t| t.shape.clone()).collect(),
            })
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
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
    Gather { table: Var, rows: Vec<usize> },
    Conv1d { input: Var, filters: Var, bias: Var },
    Relu(Var),
    Tanh(Var),
    MaxPool { input: Var, argmax: Vec<usize> },
    Dense { input: Var, weights: Var, bias: Var },
    Concat(Vec<Var>),
    Vstack(Vec<Var>),
    Dropout { input: Var, mask: Vec<f64> },
    Sum(Var),
    CosineDistance { pred: Var, target: Vec<f64>, degenerate: bool },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Execution record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Threshold under which a prediction vector counts as zero in the cosine
/// distance.
pub const COSINE_EPS: f64 = 1e-12;

// --- forward kernels, shared by the tape and by callers that need no grads

/// Valid 1-D convolution: `input[L×D]`, `filters[K×k×D]`, `bias[K]` → `[(L−k+1)×K]`.
pub fn conv1d_valid(input: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "conv1d_valid";
    if input.rank() != 2 || filters.rank() != 3 || bias.rank() != 1 {
        return Err(shape_err(OP, "expected input[L×D], filters[K×k×D], bias[K]"));
    }
    let (l, d) = (input.shape[0], input.shape[1]);
    let (kn, k, fd) = (filters.shape[0], filters.shape[1], filters.shape[2]);
    if fd != d || bias.shape[0] != kn {
        return Err(shape_err(
            OP,
            format!("input {:?}, filters {:?}, bias {:?}", input.shape, filters.shape, bias.shape),
        ));
    }
    if l < k {
        return Err(shape_err(OP, format!("sequence length {l} shorter than filter width {k}")));
    }
    let t_out = l - k + 1;
    let mut out = vec![0.0; t_out * kn];
    let window = k * d;
    for t in 0..t_out {
        // rows t..t+k are contiguous, matching the filter layout [k×D]
        let x = &input.data[t * d..t * d + window];
        for j in 0..kn {
            let f = &filters.data[j * window..(j + 1) * window];
            let dot: f64 = x.iter().zip(f).map(|(a, b)| a * b).sum();
            out[t * kn + j] = bias.data[j] + dot;
        }
    }
    Tensor {
        shape: vec![t_out, kn],
        data: out,
    }
    .check_finite(OP, &[input, filters, bias])
}

/// Column-wise maximum of `input[T×K]`, with the first maximizing row per column.
pub fn global_max_pool(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    const OP: &str = "global_max_pool";
    if input.rank() != 2 {
        return Err(shape_err(OP, format!("expected rank 2, got {:?}", input.shape)));
    }
    let (t, k) = (input.shape[0], input.shape[1]);
    if t == 0 {
        return Err(shape_err(OP, "empty sequence"));
    }
    let mut best = input.data[..k].to_vec();
    let mut arg = vec![0; k];
    for r in 1..t {
        for j in 0..k {
            let v = input.data[r * k + j];
            if v > best[j] {
                best[j] = v;
                arg[j] = r;
            }
        }
    }
    Ok((Tensor::vector(best).check_finite(OP, &[input])?, arg))
}

/// `weights[B×A] · input[A] + bias[B]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "dense";
    if input.rank() != 1 || weights.rank() != 2 || bias.rank() != 1 {
        return Err(shape_err(OP, "expected input[A], weights[B×A], bias[B]"));
    }
    let (b, a) = (weights.shape[0], weights.shape[1]);
    if input.shape[0] != a || bias.shape[0] != b {
        return Err(shape_err(
            OP,
            format!("input {:?}, weights {:?}, bias {:?}", input.shape, weights.shape, bias.shape),
        ));
    }
    let out = (0..b)
        .map(|i| {
            let w = &weights.data[i * a..(i + 1) * a];
            bias.data[i] + w.iter().zip(&input.data).map(|(x, y)| x * y).sum::<f64>()
        })
        .collect();
    Tensor::vector(out).check_finite(OP, &[input, weights, bias])
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn tanh_act(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| v.tanh()).collect(),
    }
}

/// Concatenation of rank-1 tensors.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(shape_err("concat", "no parts"));
    }
    if let Some(p) = parts.iter().find(|p| p.rank() != 1) {
        return Err(shape_err("concat", format!("part of shape {:?} is not rank 1", p.shape)));
    }
    Ok(Tensor::vector(
        parts.iter().flat_map(|p| p.data.iter().copied()).collect(),
    ))
}

/// Inverted-dropout keep mask: each entry is `0` with probability `rate`,
/// otherwise `1/(1−rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::DropoutRate(rate));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

/// Dropout outside of a tape.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, training: bool, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::DropoutRate(rate));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), rate, rng)?;
    Ok(Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1 − cos(p, t)`; a near-zero `p` yields `(1, true)`.
pub fn cosine_distance(pred: &[f64], target: &[f64]) -> (f64, bool) {
    let np = dot(pred, pred).sqrt();
    let nt = dot(target, target).sqrt();
    if np < COSINE_EPS {
        return (1.0, true);
    }
    let c = (dot(pred, target) / (np * nt)).clamp(-1.0, 1.0);
    (1.0 - c, false)
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a leaf. Gradients are reported for every leaf; constants are
    /// leaves whose gradient the caller ignores.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Rows of a rank-2 table, stacked in the given order.
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(shape_err("gather", format!("table shape {:?}", t.shape)));
        }
        if rows.is_empty() {
            return Err(shape_err("gather", "no rows requested"));
        }
        let (n, w) = (t.shape[0], t.shape[1]);
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(shape_err("gather", format!("row {r} out of {n}")));
        }
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let out = Tensor {
            shape: vec![rows.len(), w],
            data,
        };
        Ok(self.push(
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn conv1d_valid(&mut self, input: Var, filters: Var, bias: Var) -> Result<Var> {
        let out = conv1d_valid(self.value(input), self.value(filters), self.value(bias))?;
        Ok(self.push(out, Op::Conv1d { input, filters, bias }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = tanh_act(self.value(x));
        self.push(out, Op::Tanh(x))
    }

    pub fn global_max_pool(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = global_max_pool(self.value(input))?;
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let out = dense(self.value(input), self.value(weights), self.value(bias))?;
        Ok(self.push(out, Op::Dense { input, weights, bias }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = concat(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Rank-2 tensors of equal width stacked along rows.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("vstack", "no parts"));
        };
        let width = self.value(first).shape.get(1).copied().unwrap_or(0);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.shape[1] != width {
                return Err(shape_err("vstack", format!("part of shape {:?}, width {width}", v.shape)));
            }
            rows += v.shape[0];
            data.extend_from_slice(&v.data);
        }
        let out = Tensor {
            shape: vec![rows, width],
            data,
        };
        Ok(self.push(out, Op::Vstack(parts.to_vec())))
    }

    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::DropoutRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).len(), rate, rng)?;
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().zip(&mask).map(|(a, m)| a * m).collect(),
        };
        Ok(self.push(out, Op::Dropout { input: x, mask }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// `1 − cos(pred, target)` as a scalar node. A near-zero prediction gives
    /// distance 1 and no gradient.
    pub fn cosine_distance(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.rank() != 1 || p.len() != target.len() {
            return Err(shape_err(
                "cosine_distance",
                format!("prediction {:?} vs {} targets", p.shape, target.len()),
            ));
        }
        let (d, degenerate) = cosine_distance(&p.data, target);
        let out = Tensor::scalar(d).check_finite("cosine_distance", &[p])?;
        Ok(self.push(
            out,
            Op::CosineDistance {
                pred,
                target: target.to_vec(),
                degenerate,
            },
        ))
    }

    /// Whether a recorded cosine node hit the zero-prediction guard.
    pub fn is_degenerate(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::CosineDistance { degenerate: true, .. })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = &self.nodes[loss.0].value.shape;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar(shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Gather { table, rows } => {
                    let w = self.nodes[table.0].value.shape[1];
                    let gt = acc(&mut grads, &self.nodes, *table);
                    for (k, &r) in rows.iter().enumerate() {
                        for c in 0..w {
                            gt[r * w + c] += g[k * w + c];
                        }
                    }
                }
                Op::Conv1d { input, filters, bias } => {
                    let x = &self.nodes[input.0].value;
                    let f = &self.nodes[filters.0].value;
                    let (d, kn, k) = (x.shape[1], f.shape[0], f.shape[1]);
                    let t_out = node.value.shape[0];
                    let window = k * d;
                    {
                        let gb = acc(&mut grads, &self.nodes, *bias);
                        for t in 0..t_out {
                            for j in 0..kn {
                                gb[j] += g[t * kn + j];
                            }
                        }
                    }
                    {
                        let gf = acc(&mut grads, &self.nodes, *filters);
                        for t in 0..t_out {
                            let xs = &x.data[t * d..t * d + window];
                            for j in 0..kn {
                                let gj = g[t * kn + j];
                                if gj == 0.0 {
                                    continue;
                                }
                                for (dst, xv) in gf[j * window..(j + 1) * window].iter_mut().zip(xs) {
                                    *dst += gj * xv;
                                }
                            }
                        }
                    }
                    {
                        let gx = acc(&mut grads, &self.nodes, *input);
                        for t in 0..t_out {
                            for j in 0..kn {
                                let gj = g[t * kn + j];
                                if gj == 0.0 {
                                    continue;
                                }
                                let fs = &f.data[j * window..(j + 1) * window];
                                for (dst, fv) in gx[t * d..t * d + window].iter_mut().zip(fs) {
                                    *dst += gj * fv;
                                }
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value.data;
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for ((dst, gi), xi) in gx.iter_mut().zip(&g).zip(xv) {
                        if *xi > 0.0 {
                            *dst += gi;
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value.data;
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for ((dst, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *dst += gi * (1.0 - yi * yi);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let k = argmax.len();
                    let gx = acc(&mut grads, &self.nodes, *input);
                    for (j, &r) in argmax.iter().enumerate() {
                        gx[r * k + j] += g[j];
                    }
                }
                Op::Dense { input, weights, bias } => {
                    let x = &self.nodes[input.0].value.data;
                    let w = &self.nodes[weights.0].value;
                    let (b, a) = (w.shape[0], w.shape[1]);
                    {
                        let gb = acc(&mut grads, &self.nodes, *bias);
                        for (dst, gi) in gb.iter_mut().zip(&g) {
                            *dst += gi;
                        }
                    }
                    {
                        let gw = acc(&mut grads, &self.nodes, *weights);
                        for i in 0..b {
                            for j in 0..a {
                                gw[i * a + j] += g[i] * x[j];
                            }
                        }
                    }
                    {
                        let gx = acc(&mut grads, &self.nodes, *input);
                        for i in 0..b {
                            for j in 0..a {
                                gx[j] += g[i] * w.data[i * a + j];
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        let gp = acc(&mut grads, &self.nodes, *p);
                        for (dst, gi) in gp.iter_mut().zip(&g[off..off + n]) {
                            *dst += gi;
                        }
                        off += n;
                    }
                }
                Op::Vstack(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        let gp = acc(&mut grads, &self.nodes, *p);
                        for (dst, gi) in gp.iter_mut().zip(&g[off..off + n]) {
                            *dst += gi;
                        }
                        off += n;
                    }
                }
                Op::Dropout { input, mask } => {
                    let gx = acc(&mut grads, &self.nodes, *input);
                    for ((dst, gi), m) in gx.iter_mut().zip(&g).zip(mask) {
                        *dst += gi * m;
                    }
                }
                Op::Sum(x) => {
                    let gx = acc(&mut grads, &self.nodes, *x);
                    for dst in gx.iter_mut() {
                        *dst += g[0];
                    }
                }
                Op::CosineDistance {
                    pred,
                    target,
                    degenerate,
                } => {
                    if *degenerate {
                        continue;
                    }
                    let p = &self.nodes[pred.0].value.data;
                    let np = dot(p, p).sqrt();
                    let nt = dot(target, target).sqrt();
                    let c = dot(p, target) / (np * nt);
                    let gp = acc(&mut grads, &self.nodes, *pred);
                    // d(1 − cos)/dp = −(t/(‖p‖‖t‖) − cos·p/‖p‖²)
                    for ((dst, pi), ti) in gp.iter_mut().zip(p).zip(target) {
                        *dst += -g[0] * (ti / (np * nt) - c * pi / (np * np));
                    }
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape.clone()).collect();
        let leaf = self.nodes.iter().map(|n| matches!(n.op, Op::Leaf)).collect();
        Ok(Gradients { grads, shapes, leaf })
    }
}

/// Gradients of the loss with respect to the tape's leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    leaf: Vec<bool>,
}

impl Gradients {
    /// Gradient for a leaf; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        debug_assert!(self.leaf[v.0], "gradients are kept for leaves only");
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(shape),
        }
    }

    /// Moves the gradient out, avoiding a copy for large tables.
    pub fn take(&mut self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(data) => Tensor { shape, data },
            None => Tensor::zeros(shape),
        }
    }
}
