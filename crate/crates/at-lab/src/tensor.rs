//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! A [`Tensor`] is a plain value: row-major `f64` storage plus a shape.
//! Differentiation happens on a [`Tape`]: every operation pushed onto the
//! tape records its inputs, and [`Tape::backward`] walks the recording in
//! reverse to accumulate gradients into each node's grad slot. A tape is
//! built fresh per forward pass and owned by a single caller; independent
//! tapes can run concurrently.

use crate::error::{Error, Result};

/// Dense n-dimensional value array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// A scalar is a single value of shape `[]` or `[1]`.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::NotScalar {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    pub fn as_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::NotMatrix {
                op,
                shape: self.shape.clone(),
            }),
        }
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Matrix product `self [m×k] · other [k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_2d("matmul")?;
        let (k2, n) = other.as_2d("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        dgemm_acc(m, k, n, &self.data, false, &other.data, false, &mut out);
        Tensor::matrix(m, n, out)
    }

    /// Adds a length-`n` bias vector to every row of an `m×n` matrix.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = self.as_2d("add_row")?;
        if bias.shape != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += bias.data[j];
            }
        }
        Tensor::matrix(m, n, data)
    }

    pub fn relu(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        }
    }

    /// Row-wise softmax of an `m×C` matrix, computed through a shifted
    /// logsumexp so large logits do not overflow.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (m, c) = self.as_2d("softmax_rows")?;
        let mut data = vec![0.0; m * c];
        for i in 0..m {
            let row = &self.data[i * c..(i + 1) * c];
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..c {
                let e = (row[j] - hi).exp();
                data[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                data[i * c + j] /= denom;
            }
        }
        Tensor::matrix(m, c, data)
    }

    /// Argmax over the last axis of an `m×C` matrix. A row whose maximum is
    /// attained by more than one column yields `None` (a tie).
    pub fn argmax_rows(&self) -> Result<Vec<Option<usize>>> {
        let (m, c) = self.as_2d("argmax_rows")?;
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let row = &self.data[i * c..(i + 1) * c];
            let mut best = 0usize;
            let mut ties = false;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                    ties = false;
                } else if row[j] == row[best] {
                    ties = true;
                }
            }
            out.push(if ties { None } else { Some(best) });
        }
        Ok(out)
    }
}

/// `out += op(a) · op(b)` with optional transposition, backed by dgemm.
fn dgemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    out: &mut [f64],
) {
    // Strides describe the (possibly transposed) operand in place; the
    // untransposed layouts are a: m×k, b: k×n, out: m×n, all row-major.
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScalarMul(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Matmul(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    ClampMin(Var, f64),
    /// Row-wise logsumexp of an `m×C` matrix, yielding `[m]`.
    LogSumExp(Var),
    /// Picks `input[i, idx[i]]`, yielding `[m]`.
    IndexSelect(Var, Vec<usize>),
    /// Row-wise max over columns `j != idx[i]`, yielding `[m]`.
    MaxOther(Var, Vec<usize>),
    Softmax(Var),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Recording of one forward computation.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a constant/input tensor. Leaves still receive gradients;
    /// callers that want a detached value simply ignore the grad slot.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last backward pass, if any.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, op_name: &'static str) -> Result<Vec<f64>> {
        self.nodes[a.0]
            .value
            .same_shape(&self.nodes[b.0].value, op_name)?;
        Ok(self.nodes[a.0].value.data.to_vec())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut data = self.binary_same_shape(a, b, "add")?;
        for (d, &x) in data.iter_mut().zip(self.nodes[b.0].value.data.iter()) {
            *d += x;
        }
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut data = self.binary_same_shape(a, b, "sub")?;
        for (d, &x) in data.iter_mut().zip(self.nodes[b.0].value.data.iter()) {
            *d -= x;
        }
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut data = self.binary_same_shape(a, b, "mul")?;
        for (d, &x) in data.iter_mut().zip(self.nodes[b.0].value.data.iter()) {
            *d *= x;
        }
        let shape = self.nodes[a.0].value.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b)))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let value = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|&v| c * v).collect(),
        };
        self.push(value, Op::ScalarMul(a, c))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|&v| v * v).collect(),
        };
        self.push(value, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.numel() as f64;
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.matmul(&self.nodes[b.0].value)?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.add_row(&self.nodes[bias.0].value)?;
        Ok(self.push(value, Op::AddRow(a, bias)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.relu();
        self.push(value, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|&v| v.ln()).collect(),
        };
        self.push(value, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|&v| v.exp()).collect(),
        };
        self.push(value, Op::Exp(a))
    }

    /// Elementwise `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = Tensor {
            shape: self.nodes[a.0].value.shape.clone(),
            data: self.nodes[a.0].value.data.iter().map(|&v| v.max(floor)).collect(),
        };
        self.push(value, Op::ClampMin(a, floor))
    }

    /// Row-wise logsumexp of an `m×C` matrix, shift-stabilized.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let (m, c) = self.nodes[a.0].value.as_2d("logsumexp")?;
        let mut data = Vec::with_capacity(m);
        for i in 0..m {
            let row = &self.nodes[a.0].value.data[i * c..(i + 1) * c];
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&v| (v - hi).exp()).sum();
            data.push(hi + s.ln());
        }
        Ok(self.push(Tensor::from_vec(data), Op::LogSumExp(a)))
    }

    /// Picks one column per row of an `m×C` matrix.
    pub fn index_select(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, c) = self.nodes[a.0].value.as_2d("index_select")?;
        if idx.len() != m {
            return Err(Error::ShapeMismatch {
                op: "index_select",
                left: vec![m, c],
                right: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(m);
        for (i, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(Error::LabelOutOfRange {
                    row: i,
                    label: j,
                    classes: c,
                });
            }
            data.push(self.nodes[a.0].value.data[i * c + j]);
        }
        Ok(self.push(Tensor::from_vec(data), Op::IndexSelect(a, idx.to_vec())))
    }

    /// Per row, the maximum over columns other than `idx[i]` (ties resolve
    /// to the first index). Requires at least two columns.
    pub fn max_other(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, c) = self.nodes[a.0].value.as_2d("max_other")?;
        if idx.len() != m || c < 2 {
            return Err(Error::ShapeMismatch {
                op: "max_other",
                left: vec![m, c],
                right: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(m);
        for (i, &y) in idx.iter().enumerate() {
            if y >= c {
                return Err(Error::LabelOutOfRange {
                    row: i,
                    label: y,
                    classes: c,
                });
            }
            let row = &self.nodes[a.0].value.data[i * c..(i + 1) * c];
            let mut best = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if j != y && v > best {
                    best = v;
                }
            }
            data.push(best);
        }
        Ok(self.push(Tensor::from_vec(data), Op::MaxOther(a, idx.to_vec())))
    }

    /// Row-wise softmax of an `m×C` matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.softmax_rows()?;
        Ok(self.push(value, Op::Softmax(a)))
    }

    /// `x·W + b` for `x: m×d_in`, `W: d_in×d_out`, `b: d_out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Mean over the batch of `−log softmax(logits)[i, labels[i]]`, via
    /// logsumexp for stability.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lse = self.logsumexp(logits)?;
        let picked = self.index_select(logits, labels)?;
        let nll = self.sub(lse, picked)?;
        Ok(self.mean(nll))
    }

    /// Reverse pass from a scalar. Gradients accumulate additively into the
    /// grad slots; call [`Tape::reset_grads`] first to start from zero.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NotScalar {
                shape: self.nodes[loss.0].value.shape.clone(),
            });
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            let shape = self.nodes[i].value.shape.clone();
            match &mut self.nodes[i].grad {
                Some(acc) => {
                    for (a, &v) in acc.data.iter_mut().zip(g.iter()) {
                        *a += v;
                    }
                }
                slot => *slot = Some(Tensor { shape, data: g }),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let slot = acc(grads, *a, g.len());
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
                let slot = acc(grads, *b, g.len());
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
            }
            Op::Sub(a, b) => {
                let slot = acc(grads, *a, g.len());
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
                let slot = acc(grads, *b, g.len());
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s -= v;
                }
            }
            Op::Mul(a, b) => {
                let bv = self.nodes[b.0].value.data.clone();
                let av = self.nodes[a.0].value.data.clone();
                let slot = acc(grads, *a, g.len());
                for ((s, &v), &x) in slot.iter_mut().zip(g).zip(bv.iter()) {
                    *s += v * x;
                }
                let slot = acc(grads, *b, g.len());
                for ((s, &v), &x) in slot.iter_mut().zip(g).zip(av.iter()) {
                    *s += v * x;
                }
            }
            Op::ScalarMul(a, c) => {
                let slot = acc(grads, *a, g.len());
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s += c * v;
                }
            }
            Op::Square(a) => {
                let av = &self.nodes[a.0].value.data;
                let slot = acc(grads, *a, g.len());
                for ((s, &v), &x) in slot.iter_mut().zip(g).zip(av.iter()) {
                    *s += 2.0 * x * v;
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.numel();
                let slot = acc(grads, *a, n);
                for s in slot.iter_mut() {
                    *s += g[0];
                }
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel();
                let gv = g[0] / n as f64;
                let slot = acc(grads, *a, n);
                for s in slot.iter_mut() {
                    *s += gv;
                }
            }
            Op::Matmul(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let (m, k) = (av.shape[0], av.shape[1]);
                let n = bv.shape[1];
                // dL/dA = G·Bᵀ  (m×n · n×k), dL/dB = Aᵀ·G  (k×m · m×n)
                let a_data = av.data.clone();
                let b_data = bv.data.clone();
                let slot = acc(grads, *a, m * k);
                dgemm_acc(m, n, k, g, false, &b_data, true, slot);
                let slot = acc(grads, *b, k * n);
                dgemm_acc(k, m, n, &a_data, true, g, false, slot);
            }
            Op::AddRow(a, bias) => {
                let (m, n) = (
                    self.nodes[a.0].value.shape[0],
                    self.nodes[a.0].value.shape[1],
                );
                let slot = acc(grads, *a, m * n);
                for (s, &v) in slot.iter_mut().zip(g) {
                    *s += v;
                }
                let slot = acc(grads, *bias, n);
                for i in 0..m {
                    for j in 0..n {
                        slot[j] += g[i * n + j];
                    }
                }
            }
            Op::Relu(a) => {
                // Subgradient at 0 is taken as 0.
                let av = &self.nodes[a.0].value.data;
                let slot = acc(grads, *a, g.len());
                for ((s, &v), &x) in slot.iter_mut().zip(g).zip(av.iter()) {
                    if x > 0.0 {
                        *s += v;
                    }
                }
            }
            Op::Log(a) => {
                let av = &self.nodes[a.0].value.data;
                let slot = acc(grads, *a, g.len());
                for ((s, &v), &x) in slot.iter_mut().zip(g).zip(av.iter()) {
                    *s += v / x;
                }
            }
            Op::Exp(a) => {
                let out = &node.value.data;
                let slot = acc(grads, *a, g.len());
                for ((s, &v), &e) in slot.iter_mut().zip(g).zip(out.iter()) {
                    *s += v * e;
                }
            }
            Op::ClampMin(a, floor) => {
                let av = &self.nodes[a.0].value.data;
                let slot = acc(grads, *a, g.len());
                for ((s, &v), &x) in slot.iter_mut().zip(g).zip(av.iter()) {
                    if x > *floor {
                        *s += v;
                    }
                }
            }
            Op::LogSumExp(a) => {
                let av = &self.nodes[a.0].value;
                let (m, c) = (av.shape[0], av.shape[1]);
                let sm = av.softmax_rows().expect("shape checked at record time");
                let slot = acc(grads, *a, m * c);
                for i in 0..m {
                    for j in 0..c {
                        slot[i * c + j] += g[i] * sm.data[i * c + j];
                    }
                }
            }
            Op::IndexSelect(a, idx) => {
                let c = self.nodes[a.0].value.shape[1];
                let m = idx.len();
                let slot = acc(grads, *a, m * c);
                for (i, &j) in idx.iter().enumerate() {
                    slot[i * c + j] += g[i];
                }
            }
            Op::MaxOther(a, idx) => {
                let av = &self.nodes[a.0].value;
                let (m, c) = (av.shape[0], av.shape[1]);
                let slot = acc(grads, *a, m * c);
                for (i, &y) in idx.iter().enumerate() {
                    let row = &av.data[i * c..(i + 1) * c];
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for (j, &v) in row.iter().enumerate() {
                        if j != y && v > best_v {
                            best_v = v;
                            best = j;
                        }
                    }
                    slot[i * c + best] += g[i];
                }
            }
            Op::Softmax(a) => {
                // dz_ij = p_ij · (g_ij − Σ_k g_ik p_ik)
                let p = &node.value;
                let (m, c) = (p.shape[0], p.shape[1]);
                let slot = acc(grads, *a, m * c);
                for i in 0..m {
                    let dot: f64 = (0..c).map(|j| g[i * c + j] * p.data[i * c + j]).sum();
                    for j in 0..c {
                        slot[i * c + j] += p.data[i * c + j] * (g[i * c + j] - dot);
                    }
                }
            }
        }
    }
}

/// Max relative error between the analytic gradient of `f` at `point` and a
/// central finite difference with step `h`. The denominator is
/// `max(1, |analytic|)` per coordinate.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(t.clone());
        let out = f(&mut tape, v)?;
        tape.value(out).scalar_value()
    };

    let mut tape = Tape::new();
    let v = tape.leaf(point.clone());
    let out = f(&mut tape, v)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::NotScalar {
            shape: tape.value(out).shape().to_vec(),
        });
    }
    tape.backward(out)?;
    let analytic = tape
        .grad(v)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));

    let mut max_rel = 0.0f64;
    for i in 0..point.numel() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
