//! Reverse-mode differentiation on an append-only tape.
//!
//! Values are evaluated eagerly as ops are recorded, so the tape doubles as
//! the forward evaluation. `backward` replays nodes in reverse id order,
//! which is a valid reverse topological order because every input id
//! precedes the node that consumes it. All arithmetic is 64-bit.
//!
//! The op set is the minimum needed for MLP training: add, subtract,
//! scalar scale, elementwise multiply, matrix multiply, affine, tanh, SiLU,
//! sum, mean, squared-error reduction, concatenate, slice, plus a
//! stop-gradient primitive (forward identity, zero backward contribution).

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![], vec![value])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    MatMul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Tanh(Var),
    Silu(Var),
    Sum(Var),
    Mean(Var),
    SqErr { a: Var, b: Var, mean: bool },
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Slice { x: Var, start: usize, len: usize },
    StopGrad,
    AddN(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by a backward pass, indexed by node id.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, if any flowed to it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zeros if none flowed.
    pub fn get_or_zeros(&self, v: Var, numel: usize) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; numel],
        }
    }
}

/// Append-only computation graph, rebuilt per training step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape_err(&self, msg: String) -> Error {
        // The offending node is the one about to be created.
        Error::Shape { node: self.nodes.len(), msg }
    }

    // ── Leaf nodes ───────────────────────────────────────────────────

    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Input, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    // ── Elementwise and linear ops ───────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x + y);
        let shape = self.value(a).shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), Tensor::new(shape, data), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x - y);
        let shape = self.value(a).shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), Tensor::new(shape, data), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let data: Vec<f64> = self.value(a).data.iter().map(|x| x * factor).collect();
        let shape = self.value(a).shape.clone();
        let ng = self.needs(a);
        self.push(Op::Scale(a, factor), Tensor::new(shape, data), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let data = zip_map(&self.value(a).data, &self.value(b).data, |x, y| x * y);
        let shape = self.value(a).shape.clone();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), Tensor::new(shape, data), ng))
    }

    /// Matrix product of `a: [m,k]` and `b: [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.as_matrix(a, "matmul lhs")?;
        let (k2, n) = self.as_matrix(b, "matmul rhs")?;
        if k != k2 {
            return Err(self.shape_err(format!(
                "matmul inner dims differ: [{m},{k}] x [{k2},{n}]"
            )));
        }
        let out = kernels::matmul(&self.value(a).data, m, k, &self.value(b).data, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out), ng))
    }

    /// `x @ w + b` with `x: [batch,k]` (or `[k]`), `w: [k,n]`, `b: [n]`.
    /// A 1-D `x` produces a 1-D output.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape.clone();
        let (rows, k) = match xs.len() {
            1 => (1, xs[0]),
            2 => (xs[0], xs[1]),
            _ => return Err(self.shape_err(format!("affine input must be 1-D or 2-D, got {xs:?}"))),
        };
        let (kw, n) = self.as_matrix(w, "affine weight")?;
        if kw != k {
            return Err(self.shape_err(format!("affine: input width {k} vs weight rows {kw}")));
        }
        let bs = &self.value(b).shape;
        if bs.len() != 1 || bs[0] != n {
            return Err(self.shape_err(format!("affine: bias shape {bs:?}, expected [{n}]")));
        }
        let out = kernels::affine(&self.value(x).data, rows, k, &self.value(w).data, n, &self.value(b).data);
        let out_shape = if xs.len() == 1 { vec![n] } else { vec![rows, n] };
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Affine { x, w, b }, Tensor::new(out_shape, out), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data.iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape.clone();
        let ng = self.needs(a);
        self.push(Op::Tanh(a), Tensor::new(shape, data), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let data: Vec<f64> = self.value(a).data.iter().map(|&x| kernels::silu(x)).collect();
        let shape = self.value(a).shape.clone();
        let ng = self.needs(a);
        self.push(Op::Silu(a), Tensor::new(shape, data), ng)
    }

    // ── Reductions ───────────────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data.iter().sum();
        let ng = self.needs(a);
        self.push(Op::Sum(a), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data.iter().sum();
        let ng = self.needs(a);
        self.push(Op::Mean(a), Tensor::scalar(s / n), ng)
    }

    /// Mean of squared differences: `mean((a-b)^2)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.sq_err(a, b, true)
    }

    /// Sum of squared differences: `sum((a-b)^2)`.
    pub fn sq_err_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.sq_err(a, b, false)
    }

    fn sq_err(&mut self, a: Var, b: Var, mean: bool) -> Result<Var> {
        self.binary_same_shape(a, b, "squared error")?;
        let n = self.value(a).numel() as f64;
        let mut s = 0.0;
        for (x, y) in self.value(a).data.iter().zip(self.value(b).data.iter()) {
            let d = x - y;
            s += d * d;
        }
        if mean {
            s /= n;
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::SqErr { a, b, mean }, Tensor::scalar(s), ng))
    }

    // ── Structure ops ────────────────────────────────────────────────

    /// Concatenate 1-D vectors into one 1-D vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(self.shape_err("concat of zero inputs".into()));
        }
        let mut data = Vec::new();
        let mut ng = false;
        for &p in parts {
            if self.value(p).shape.len() != 1 {
                return Err(self.shape_err(format!(
                    "concat expects 1-D inputs, node {} has shape {:?}",
                    p.0,
                    self.value(p).shape
                )));
            }
            data.extend_from_slice(&self.value(p).data);
            ng |= self.needs(p);
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data), ng))
    }

    /// Stack equal-length 1-D vectors into a `[rows, len]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(self.shape_err("stack_rows of zero inputs".into()));
        }
        let width = self.value(rows[0]).numel();
        let mut data = Vec::with_capacity(rows.len() * width);
        let mut ng = false;
        for &r in rows {
            let t = self.value(r);
            if t.shape.len() != 1 || t.numel() != width {
                return Err(self.shape_err(format!(
                    "stack_rows expects 1-D vectors of length {width}, node {} has shape {:?}",
                    r.0, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
            ng |= self.needs(r);
        }
        let n = rows.len();
        Ok(self.push(Op::StackRows(rows.to_vec()), Tensor::new(vec![n, width], data), ng))
    }

    /// Contiguous range of the flat (row-major) data, returned as a 1-D vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let total = self.value(x).numel();
        if start + len > total {
            return Err(self.shape_err(format!(
                "slice [{start}..{}] out of bounds for {total} elements",
                start + len
            )));
        }
        let data = self.value(x).data[start..start + len].to_vec();
        let ng = self.needs(x);
        Ok(self.push(Op::Slice { x, start, len }, Tensor::vector(data), ng))
    }

    /// Forward identity; contributes zero gradient to all ancestors.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(Op::StopGrad, value, false)
    }

    /// Sum of same-shape tensors.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(self.shape_err("add_n of zero inputs".into()));
        }
        let shape = self.value(parts[0]).shape.clone();
        let mut data = self.value(parts[0]).data.clone();
        let mut ng = self.needs(parts[0]);
        for &p in &parts[1..] {
            if self.value(p).shape != shape {
                return Err(self.shape_err(format!(
                    "add_n shape mismatch: {:?} vs {:?} (node {})",
                    shape,
                    self.value(p).shape,
                    p.0
                )));
            }
            for (d, s) in data.iter_mut().zip(self.value(p).data.iter()) {
                *d += s;
            }
            ng |= self.needs(p);
        }
        Ok(self.push(Op::AddN(parts.to_vec()), Tensor::new(shape, data), ng))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar `output`, seeding its gradient with 1.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.backward_with_seed(output, &[1.0])
    }

    /// Reverse pass with an explicit cotangent for `output`. With a vector
    /// cotangent this computes the VJP of `output` w.r.t. every leaf.
    pub fn backward_with_seed(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if seed.len() == 1 && !out.value.is_scalar() {
            return Err(Error::NonScalarOutput { shape: out.value.shape.clone() });
        }
        if seed.len() != out.value.numel() {
            return Err(Error::Shape {
                node: output.0,
                msg: format!(
                    "seed length {} does not match output numel {}",
                    seed.len(),
                    out.value.numel()
                ),
            });
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.to_vec());

        for id in (0..=output.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: &[f64]) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta.iter()) {
                    *gi += di;
                }
            }
            None => grads[v.0] = Some(delta.to_vec()),
        }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[id].op {
            Op::Input | Op::StopGrad => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                if self.needs(*b) {
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    self.accumulate(grads, *b, &neg);
                }
            }
            Op::Scale(a, f) => {
                if self.needs(*a) {
                    let d: Vec<f64> = g.iter().map(|x| x * f).collect();
                    self.accumulate(grads, *a, &d);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = zip_map(g, &self.value(*b).data, |x, y| x * y);
                    self.accumulate(grads, *a, &d);
                }
                if self.needs(*b) {
                    let d = zip_map(g, &self.value(*a).data, |x, y| x * y);
                    self.accumulate(grads, *b, &d);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = matrix_dims(&self.value(*a).shape);
                let n = self.value(*b).shape[1];
                if self.needs(*a) {
                    // dA = dC . B^T
                    let bv = &self.value(*b).data;
                    let mut da = vec![0.0; m * k];
                    for r in 0..m {
                        for i in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * bv[i * n + j];
                            }
                            da[r * k + i] = s;
                        }
                    }
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    // dB = A^T . dC
                    let av = &self.value(*a).data;
                    let mut db = vec![0.0; k * n];
                    for r in 0..m {
                        for i in 0..k {
                            let ari = av[r * k + i];
                            for j in 0..n {
                                db[i * n + j] += ari * g[r * n + j];
                            }
                        }
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Affine { x, w, b } => {
                let xs = &self.value(*x).shape;
                let (rows, k) = if xs.len() == 1 { (1, xs[0]) } else { (xs[0], xs[1]) };
                let n = self.value(*w).shape[1];
                let xv = &self.value(*x).data;
                let wv = &self.value(*w).data;
                if self.needs(*x) {
                    let mut dx = vec![0.0; rows * k];
                    for r in 0..rows {
                        for i in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * wv[i * n + j];
                            }
                            dx[r * k + i] = s;
                        }
                    }
                    self.accumulate(grads, *x, &dx);
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; k * n];
                    for r in 0..rows {
                        for i in 0..k {
                            let xri = xv[r * k + i];
                            for j in 0..n {
                                dw[i * n + j] += xri * g[r * n + j];
                            }
                        }
                    }
                    self.accumulate(grads, *w, &dw);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; n];
                    for r in 0..rows {
                        for j in 0..n {
                            db[j] += g[r * n + j];
                        }
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[id].value.data;
                    let d = zip_map(g, y, |gi, yi| gi * (1.0 - yi * yi));
                    self.accumulate(grads, *a, &d);
                }
            }
            Op::Silu(a) => {
                if self.needs(*a) {
                    let x = &self.value(*a).data;
                    let d = zip_map(g, x, |gi, xi| gi * kernels::silu_derivative(xi));
                    self.accumulate(grads, *a, &d);
                }
            }
            Op::Sum(a) => {
                if self.needs(*a) {
                    let d = vec![g[0]; self.value(*a).numel()];
                    self.accumulate(grads, *a, &d);
                }
            }
            Op::Mean(a) => {
                if self.needs(*a) {
                    let n = self.value(*a).numel();
                    let d = vec![g[0] / n as f64; n];
                    self.accumulate(grads, *a, &d);
                }
            }
            Op::SqErr { a, b, mean } => {
                let n = self.value(*a).numel() as f64;
                let scale = if *mean { 2.0 * g[0] / n } else { 2.0 * g[0] };
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                if self.needs(*a) {
                    let d: Vec<f64> =
                        av.iter().zip(bv.iter()).map(|(x, y)| scale * (x - y)).collect();
                    self.accumulate(grads, *a, &d);
                }
                if self.needs(*b) {
                    let d: Vec<f64> =
                        av.iter().zip(bv.iter()).map(|(x, y)| -scale * (x - y)).collect();
                    self.accumulate(grads, *b, &d);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.needs(p) {
                        self.accumulate(grads, p, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::StackRows(rows) => {
                let width = self.value(rows[0]).numel();
                for (r, &p) in rows.iter().enumerate() {
                    if self.needs(p) {
                        self.accumulate(grads, p, &g[r * width..(r + 1) * width]);
                    }
                }
            }
            Op::Slice { x, start, len } => {
                if self.needs(*x) {
                    let mut d = vec![0.0; self.value(*x).numel()];
                    d[*start..start + len].copy_from_slice(g);
                    self.accumulate(grads, *x, &d);
                }
            }
            Op::AddN(parts) => {
                for &p in parts {
                    self.accumulate(grads, p, g);
                }
            }
        }
    }

    // ── Helpers ──────────────────────────────────────────────────────

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(self.shape_err(format!(
                "{what}: shape {:?} (node {}) vs {:?} (node {})",
                self.value(a).shape,
                a.0,
                self.value(b).shape,
                b.0
            )));
        }
        Ok(())
    }

    fn as_matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let s = &self.value(v).shape;
        if s.len() != 2 {
            return Err(self.shape_err(format!("{what} must be 2-D, node {} has {s:?}", v.0)));
        }
        Ok((s[0], s[1]))
    }
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => unreachable!("matrix op on shape {shape:?}"),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}

/// Shared dense kernels. The plain (tape-free) network forward uses the same
/// routines as the tape ops, so both paths produce bit-identical values.
pub(crate) mod kernels {
    pub fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    pub fn silu(x: f64) -> f64 {
        x * sigmoid(x)
    }

    pub fn silu_derivative(x: f64) -> f64 {
        let s = sigmoid(x);
        s * (1.0 + x * (1.0 - s))
    }

    /// `a: [m,k]` times `b: [k,n]`, row-major.
    pub fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let arow = &a[r * k..(r + 1) * k];
            let orow = &mut out[r * n..(r + 1) * n];
            for (i, &ai) in arow.iter().enumerate() {
                let brow = &b[i * n..(i + 1) * n];
                for (o, &bij) in orow.iter_mut().zip(brow.iter()) {
                    *o += ai * bij;
                }
            }
        }
        out
    }

    /// `x: [rows,k]` times `w: [k,n]` plus bias `b: [n]` broadcast per row.
    pub fn affine(x: &[f64], rows: usize, k: usize, w: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * n);
        for r in 0..rows {
            out.extend_from_slice(b);
            let orow = &mut out[r * n..(r + 1) * n];
            let xrow = &x[r * k..(r + 1) * k];
            for (i, &xi) in xrow.iter().enumerate() {
                let wrow = &w[i * n..(i + 1) * n];
                for (o, &wij) in orow.iter_mut().zip(wrow.iter()) {
                    *o += xi * wij;
                }
            }
        }
        out
    }
}

// ── Gradient checking ───────────────────────────────────────────────────

/// Per-parameter-block result of a finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckBlock {
    pub block: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

/// Report of backward vs central finite differences. Failures are reported,
/// not thrown: callers decide what tolerance to enforce.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<GradCheckBlock>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Central finite differences, step 1e-5, relative error with a 1e-8
/// absolute floor for near-zero gradients.
pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-8;

/// Compare the backward gradient of a scalar loss against central finite
/// differences over every element of every parameter block.
///
/// `build` must construct the same loss for any parameter values; any
/// stop-gradient branch the loss contains must be frozen inside `build`
/// (pass pre-computed branch values in as constants) so the finite
/// differences probe the same function the backward pass differentiates.
pub fn grad_check<F>(build: &F, params: &[Tensor], fd_step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    // Analytic gradients at the base point.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.input(p.clone(), true)).collect();
    let loss = build(&mut tape, &vars)?;
    if !tape.value(loss).is_scalar() {
        return Err(Error::NonScalarOutput { shape: tape.value(loss).shape.clone() });
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(&v, p)| grads.get_or_zeros(v, p.numel()))
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = probe.iter().map(|p| t.input(p.clone(), false)).collect();
        let l = build(&mut t, &vs)?;
        Ok(t.value(l).data[0])
    };

    let mut probe: Vec<Tensor> = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    let mut overall = 0.0f64;
    for (bi, p) in params.iter().enumerate() {
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for i in 0..p.numel() {
            let orig = p.data[i];
            probe[bi].data[i] = orig + fd_step;
            let fp = eval(&probe)?;
            probe[bi].data[i] = orig - fd_step;
            let fm = eval(&probe)?;
            probe[bi].data[i] = orig;
            let fd = (fp - fm) / (2.0 * fd_step);
            let ad = analytic[bi][i];
            let abs = (ad - fd).abs();
            let rel = abs / ad.abs().max(fd.abs()).max(FD_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        overall = overall.max(max_rel);
        blocks.push(GradCheckBlock { block: bi, max_rel_err: max_rel, max_abs_err: max_abs });
    }
    Ok(GradCheckReport { blocks, max_rel_err: overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_identity_case() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let w = t.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = t.affine(x, w, b).unwrap();
        assert_eq!(t.value(y).data, vec![1.0, 2.0]);
    }

    #[test]
    fn mse_is_mean_of_squares() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let l = t.mse(a, b).unwrap();
        assert_eq!(t.value(l).data[0], 1.0);
    }

    /// Straight-line re-implementation of a 3-layer tanh MLP, no tape.
    fn mlp_by_hand(x: &[f64], weights: &[(Vec<f64>, Vec<f64>, usize, usize)]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (layer, (w, b, k, n)) in weights.iter().enumerate() {
            let mut out = b.clone();
            for i in 0..*k {
                for j in 0..*n {
                    out[j] += h[i] * w[i * n + j];
                }
            }
            if layer + 1 < weights.len() {
                for o in out.iter_mut() {
                    *o = o.tanh();
                }
            }
            h = out;
        }
        h
    }

    fn seeded_values(seed: u64, n: usize) -> Vec<f64> {
        // Small deterministic LCG so the oracle stays free of the crate RNG.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn three_layer_tanh_mlp_matches_hand_evaluator() {
        let dims = [(4usize, 8usize), (8, 8), (8, 3)];
        let x = seeded_values(7, 4);
        let mut layers = Vec::new();
        for (li, (k, n)) in dims.iter().enumerate() {
            let w = seeded_values(100 + li as u64, k * n);
            let b = seeded_values(200 + li as u64, *n);
            layers.push((w, b, *k, *n));
        }
        let expected = mlp_by_hand(&x, &layers);

        let mut t = Tape::new();
        let mut h = t.constant(Tensor::vector(x));
        for (li, (w, b, k, n)) in layers.iter().enumerate() {
            let wv = t.constant(Tensor::new(vec![*k, *n], w.clone()));
            let bv = t.constant(Tensor::vector(b.clone()));
            h = t.affine(h, wv, bv).unwrap();
            if li + 1 < layers.len() {
                h = t.tanh(h);
            }
        }
        for (got, want) in t.value(h).data.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-12, "tape {got} vs hand {want}");
        }
    }

    #[test]
    fn d_x_squared_is_2x() {
        let mut t = Tape::new();
        let x = t.input(Tensor::scalar(3.0), true);
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn d_w_of_mean_wx() {
        // mean(W x) with x = [1, 0]: gradient has first column 1/rows, rest 0.
        let rows = 3;
        let mut t = Tape::new();
        let w = t.input(Tensor::new(vec![rows, 2], vec![0.5; rows * 2]), true);
        let x = t.constant(Tensor::new(vec![2, 1], vec![1.0, 0.0]));
        let y = t.matmul(w, x).unwrap();
        let m = t.mean(y);
        let g = t.backward(m).unwrap();
        let gw = g.get(w).unwrap();
        for r in 0..rows {
            assert!((gw[r * 2] - 1.0 / rows as f64).abs() < 1e-15);
            assert_eq!(gw[r * 2 + 1], 0.0);
        }
    }

    #[test]
    fn mlp_loss_gradient_matches_finite_differences() {
        let dims = [(3usize, 6usize), (6, 6), (6, 2)];
        let x = seeded_values(11, 3);
        let target = seeded_values(13, 2);
        let mut params = Vec::new();
        for (li, (k, n)) in dims.iter().enumerate() {
            params.push(Tensor::new(vec![*k, *n], seeded_values(300 + li as u64, k * n)));
            params.push(Tensor::vector(seeded_values(400 + li as u64, *n)));
        }
        let build = |t: &mut Tape, vars: &[Var]| -> Result<Var> {
            let mut h = t.constant(Tensor::vector(x.clone()));
            for li in 0..3 {
                h = t.affine(h, vars[2 * li], vars[2 * li + 1])?;
                if li < 2 {
                    h = t.silu(h);
                }
            }
            let tgt = t.constant(Tensor::vector(target.clone()));
            t.mse(h, tgt)
        };
        let report = grad_check(&build, &params, FD_STEP).unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "max relative error {} exceeds 1e-4",
            report.max_rel_err
        );
    }

    #[test]
    fn linear_regression_grad_check_is_nearly_exact() {
        let x = seeded_values(21, 4);
        let target = seeded_values(22, 2);
        let params = vec![
            Tensor::new(vec![4, 2], seeded_values(23, 8)),
            Tensor::vector(seeded_values(24, 2)),
        ];
        let build = |t: &mut Tape, vars: &[Var]| -> Result<Var> {
            let xv = t.constant(Tensor::vector(x.clone()));
            let y = t.affine(xv, vars[0], vars[1])?;
            let tgt = t.constant(Tensor::vector(target.clone()));
            t.mse(y, tgt)
        };
        let report = grad_check(&build, &params, FD_STEP).unwrap();
        assert!(
            report.max_rel_err < 1e-8,
            "linear loss should be FD-exact, got {}",
            report.max_rel_err
        );
    }

    #[test]
    fn stop_gradient_kills_one_branch_of_product() {
        // d/dx [x * sg(x)] at x=3 is 3, not 6.
        let mut t = Tape::new();
        let x = t.input(Tensor::scalar(3.0), true);
        let sgx = t.stop_gradient(x);
        let y = t.mul(x, sgx).unwrap();
        assert_eq!(t.value(y).data[0], 9.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[3.0]);
    }

    #[test]
    fn stop_gradient_of_square_has_zero_gradient() {
        let mut t = Tape::new();
        let x = t.input(Tensor::scalar(3.0), true);
        let y = t.mul(x, x).unwrap();
        let z = t.stop_gradient(y);
        let g = t.backward(z).unwrap();
        assert!(g.get(x).is_none(), "no gradient should reach x through sg");
    }

    #[test]
    fn stop_gradient_is_forward_identity() {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(vec![1.5, -2.25, 0.0, 1e-300]), true);
        let y = t.stop_gradient(x);
        assert_eq!(t.value(y).data, t.value(x).data, "sg must be exact in forward");
    }

    #[test]
    fn sg_residual_gradient_equals_constant_vjp() {
        // Gradient of || f(x) - sg(f(x) - c) ||^2 equals 2 c^T df/dx for a
        // constant c: the residual equals c numerically while the gradient
        // flows only through the live f branch. The oracle finite-differences
        // f alone with c frozen.
        let w = seeded_values(31, 6);
        let b = seeded_values(32, 3);
        let c = seeded_values(33, 3);
        let x0 = seeded_values(34, 2);

        let f_plain = |x: &[f64]| -> Vec<f64> {
            let mut out = b.clone();
            for i in 0..2 {
                for j in 0..3 {
                    out[j] += (x[i] as f64).tanh() * w[i * 3 + j];
                }
            }
            out
        };

        let mut t = Tape::new();
        let x = t.input(Tensor::vector(x0.clone()), true);
        let h = t.tanh(x);
        let wv = t.constant(Tensor::new(vec![2, 3], w.clone()));
        let bv = t.constant(Tensor::vector(b.clone()));
        let f = t.affine(h, wv, bv).unwrap();
        let cv = t.constant(Tensor::vector(c.clone()));
        let inner = t.sub(f, cv).unwrap();
        let sg = t.stop_gradient(inner);
        let loss = t.sq_err_sum(f, sg).unwrap();
        let g = t.backward(loss).unwrap();
        let gx = g.get(x).unwrap();

        // 2 c^T (df/dx) via central differences on f only.
        let h_step = 1e-6;
        for i in 0..2 {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[i] += h_step;
            xm[i] -= h_step;
            let fp = f_plain(&xp);
            let fm = f_plain(&xm);
            let mut expected = 0.0;
            for j in 0..3 {
                expected += 2.0 * c[j] * (fp[j] - fm[j]) / (2.0 * h_step);
            }
            assert!(
                (gx[i] - expected).abs() < 1e-7,
                "coordinate {i}: autodiff {} vs 2 c^T J {expected}",
                gx[i]
            );
        }
    }

    #[test]
    fn grad_check_freezes_sg_branch() {
        // Loss x * sg(x): build() receives the frozen sg value as a constant,
        // so FD probes match the backward semantics and the check passes.
        let base = 3.0;
        let params = vec![Tensor::scalar(base)];
        let frozen = base; // sg(x) evaluated at the base point
        let build = move |t: &mut Tape, vars: &[Var]| -> Result<Var> {
            let c = t.scalar(frozen);
            t.mul(vars[0], c)
        };
        let report = grad_check(&build, &params, FD_STEP).unwrap();
        assert!(report.max_rel_err < 1e-9, "frozen-branch FD failed: {}", report.max_rel_err);
    }

    #[test]
    fn identical_graphs_are_bit_identical() {
        let run = || {
            let mut t = Tape::new();
            let x = t.input(Tensor::vector(seeded_values(41, 5)), true);
            let w = t.constant(Tensor::new(vec![5, 4], seeded_values(42, 20)));
            let b = t.constant(Tensor::vector(seeded_values(43, 4)));
            let h = t.affine(x, w, b).unwrap();
            let s = t.silu(h);
            let tgt = t.constant(Tensor::vector(seeded_values(44, 4)));
            let l = t.mse(s, tgt).unwrap();
            let g = t.backward(l).unwrap();
            (t.value(l).data[0], g.get(x).unwrap().to_vec())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(seeded_values(51, 4)), true);
        let y = t.tanh(x);
        let a = t.constant(Tensor::vector(seeded_values(52, 4)));
        let b = t.constant(Tensor::vector(seeded_values(53, 4)));
        let l1 = t.sq_err_sum(y, a).unwrap();
        let l2 = t.sq_err_sum(y, b).unwrap();
        let lsum = t.add(l1, l2).unwrap();

        let g1 = t.backward(l1).unwrap();
        let g2 = t.backward(l2).unwrap();
        let gs = t.backward(lsum).unwrap();
        let (g1, g2, gs) = (g1.get(x).unwrap(), g2.get(x).unwrap(), gs.get(x).unwrap());
        for i in 0..4 {
            assert!(
                (gs[i] - (g1[i] + g2[i])).abs() < 1e-12,
                "gradient linearity violated at {i}"
            );
        }
    }

    #[test]
    fn shape_mismatch_reports_offending_node() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match t.add(a, b) {
            Err(Error::Shape { node, .. }) => assert_eq!(node, 2),
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(vec![1.0, 2.0]), true);
        let y = t.tanh(x);
        match t.backward(y) {
            Err(Error::NonScalarOutput { shape }) => assert_eq!(shape, vec![2]),
            other => panic!("expected non-scalar rejection, got {other:?}"),
        }
    }

    #[test]
    fn concat_slice_round_trip_gradient() {
        let mut t = Tape::new();
        let a = t.input(Tensor::vector(vec![1.0, 2.0]), true);
        let b = t.input(Tensor::vector(vec![3.0]), true);
        let c = t.concat(&[a, b]).unwrap();
        let s = t.slice(c, 1, 2).unwrap(); // [2, 3]
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap(), &[0.0, 1.0]);
        assert_eq!(g.get(b).unwrap(), &[1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Chain-rule soundness on a composite graph: backward matches
        /// central finite differences within 1e-4 relative.
        #[test]
        fn composite_graph_matches_fd(seed in 0u64..1000) {
            let x0 = seeded_values(seed, 3);
            let params = vec![
                Tensor::new(vec![3, 4], seeded_values(seed + 1, 12)),
                Tensor::vector(seeded_values(seed + 2, 4)),
                Tensor::new(vec![4, 2], seeded_values(seed + 3, 8)),
                Tensor::vector(seeded_values(seed + 4, 2)),
            ];
            let build = |t: &mut Tape, vars: &[Var]| -> Result<Var> {
                let x = t.constant(Tensor::vector(x0.clone()));
                let h = t.affine(x, vars[0], vars[1])?;
                let h = t.silu(h);
                let h2 = t.tanh(h);
                let prod = t.mul(h, h2)?;
                let y = t.affine(prod, vars[2], vars[3])?;
                let half = t.scale(y, 0.5);
                let tgt = t.constant(Tensor::vector(vec![0.3, -0.4]));
                t.mse(half, tgt)
            };
            let report = grad_check(&build, &params, FD_STEP).unwrap();
            prop_assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
        }

        /// AddN backward equals repeated adds.
        #[test]
        fn add_n_matches_chained_add(seed in 0u64..1000) {
            let vals: Vec<Vec<f64>> = (0..3).map(|i| seeded_values(seed + i, 4)).collect();
            let mut t = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| t.input(Tensor::vector(v.clone()), true)).collect();
            let n = t.add_n(&vars).unwrap();
            let ab = t.add(vars[0], vars[1]).unwrap();
            let abc = t.add(ab, vars[2]).unwrap();
            prop_assert_eq!(&t.value(n).data, &t.value(abc).data);
            let ln = t.sum(n);
            let lc = t.sum(abc);
            let gn = t.backward(ln).unwrap();
            let gc = t.backward(lc).unwrap();
            for &v in &vars {
                prop_assert_eq!(gn.get(v).unwrap(), gc.get(v).unwrap());
            }
        }
    }
}
