//! Reverse-mode automatic differentiation over f64 tensors.
//!
//! A [`Tape`] records one forward episode: every operation pushes a node
//! holding its output value plus a backward closure that knows how to route
//! gradients to its parents. [`Tape::backward`] replays the records in reverse
//! chronological order (which is a valid reverse topological order, since an
//! operation can only consume already-recorded nodes) into a scratch buffer,
//! then folds the scratch into persistent per-node gradients. Calling
//! `backward` again without [`Tape::zero_grad`] therefore accumulates.
//!
//! Determinism: identical inputs and identical op sequences produce bitwise
//! identical values and gradients. All reductions run in index order and no
//! op consults global state.
//!
//! Broadcasting is deliberately restricted to scalar-vs-tensor. Anything
//! wider (row replication, bias addition) is spelled explicitly with
//! [`Var::repeat_rows`], which keeps shape errors local and loud.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{numel_of, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

type BackFn = Box<dyn Fn(&[f64], &mut GradSink)>;

struct Node {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    requires: bool,
}

struct Record {
    out: usize,
    back: BackFn,
}

struct TapeInner {
    nodes: Vec<Node>,
    records: Vec<Record>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Write-only view of the scratch gradient buffer handed to backward closures.
///
/// Contributions to nodes that do not require gradients are dropped, so
/// closures may call `add` unconditionally; expensive closures should still
/// check [`GradSink::wants`] first to skip dead work.
pub struct GradSink<'a> {
    slots: &'a mut [Option<Vec<f64>>],
    sizes: &'a [usize],
    requires: &'a [bool],
}

impl GradSink<'_> {
    pub fn wants(&self, idx: usize) -> bool {
        self.requires[idx]
    }

    /// Runs `f` over the (zero-initialized on first touch) gradient slot of `idx`.
    pub fn with(&mut self, idx: usize, f: impl FnOnce(&mut [f64])) {
        if !self.requires[idx] {
            return;
        }
        let slot = &mut self.slots[idx];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.sizes[idx]]);
        }
        f(slot.as_mut().expect("slot just filled"));
    }

    pub fn add_slice(&mut self, idx: usize, g: &[f64]) {
        self.with(idx, |dst| {
            for (d, s) in dst.iter_mut().zip(g) {
                *d += *s;
            }
        });
    }

    pub fn add_sum(&mut self, idx: usize, g: &[f64]) {
        self.with(idx, |dst| dst[0] += g.iter().sum::<f64>());
    }
}

#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node on a [`Tape`]. Cheap to clone; all clones alias.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    idx: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("idx", &self.idx).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                records: Vec::new(),
                grads: Vec::new(),
            })),
        }
    }

    pub fn node_count(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Binds a tensor onto the tape as a leaf, inheriting its `requires_grad`.
    pub fn leaf(&self, t: &Tensor) -> Var {
        self.record(t.shape.clone(), t.data.clone(), t.requires_grad, None)
    }

    /// Non-differentiable input data.
    pub fn input(&self, data: Vec<f64>, shape: Vec<usize>) -> Result<Var> {
        if data.len() != numel_of(&shape) {
            return Err(Error::InvalidShape {
                op: "input",
                detail: format!("{} data elements", data.len()),
                shape,
            });
        }
        Ok(self.record(shape, data, false, None))
    }

    /// Rank-0 constant.
    pub fn scalar_const(&self, v: f64) -> Var {
        self.record(vec![], vec![v], false, None)
    }

    fn record(
        &self,
        shape: Vec<usize>,
        data: Vec<f64>,
        requires: bool,
        back: Option<BackFn>,
    ) -> Var {
        self.record_rc(shape, Rc::new(data), requires, back)
    }

    fn record_rc(
        &self,
        shape: Vec<usize>,
        data: Rc<Vec<f64>>,
        requires: bool,
        back: Option<BackFn>,
    ) -> Var {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node { shape, data, requires });
        inner.grads.push(None);
        if requires {
            if let Some(back) = back {
                inner.records.push(Record { out: idx, back });
            }
        }
        Var { tape: self.clone(), idx }
    }

    /// Propagates d`loss`/d`node` into every gradient-requiring ancestor.
    ///
    /// `loss` must hold exactly one element. Gradients add onto whatever
    /// previous `backward` calls left behind.
    pub fn backward(&self, loss: &Var) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        let shape = inner.nodes[loss.idx].shape.clone();
        if numel_of(&shape) != 1 {
            return Err(Error::NonScalarLoss { shape });
        }
        if !inner.nodes[loss.idx].requires {
            // Loss does not depend on anything differentiable; nothing to do.
            return Ok(());
        }
        let sizes: Vec<usize> = inner.nodes.iter().map(|n| n.data.len()).collect();
        let requires: Vec<bool> = inner.nodes.iter().map(|n| n.requires).collect();
        let n = sizes.len();
        let mut scratch: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);
        scratch.resize_with(n, || None);
        scratch[loss.idx] = Some(vec![1.0]);

        let TapeInner { records, grads, .. } = &mut *inner;
        for rec in records.iter().rev() {
            let Some(g) = scratch[rec.out].take() else { continue };
            {
                let mut sink = GradSink { slots: &mut scratch, sizes: &sizes, requires: &requires };
                (rec.back)(&g, &mut sink);
            }
            scratch[rec.out] = Some(g);
        }
        for i in 0..n {
            if !requires[i] {
                continue;
            }
            if let Some(s) = &scratch[i] {
                let dst = grads[i].get_or_insert_with(|| vec![0.0; sizes[i]]);
                for (d, v) in dst.iter_mut().zip(s) {
                    *d += *v;
                }
            }
        }
        Ok(())
    }

    /// Clears all accumulated gradients.
    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        for g in inner.grads.iter_mut() {
            *g = None;
        }
    }
}

impl Var {
    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.idx].data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.idx].requires
    }

    /// Shared handle to the forward value (no copy).
    pub fn data(&self) -> Rc<Vec<f64>> {
        self.tape.inner.borrow().nodes[self.idx].data.clone()
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Vec<f64> {
        self.data().as_ref().clone()
    }

    /// The single element of a one-element node.
    pub fn scalar_value(&self) -> f64 {
        let d = self.data();
        debug_assert_eq!(d.len(), 1, "scalar_value on non-scalar");
        d[0]
    }

    /// Copy of the accumulated gradient, if any backward pass reached this node.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.inner.borrow().grads[self.idx].clone()
    }

    pub fn to_tensor(&self) -> Tensor {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        Tensor {
            shape: node.shape.clone(),
            data: node.data.as_ref().clone(),
            requires_grad: node.requires,
            grad: inner.grads[self.idx].clone(),
        }
    }

    fn parts(&self) -> (Vec<usize>, Rc<Vec<f64>>, bool) {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        (node.shape.clone(), node.data.clone(), node.requires)
    }

    fn check_same_tape(&self, other: &Var, op: &'static str) -> Result<()> {
        if Rc::ptr_eq(&self.tape.inner, &other.tape.inner) {
            Ok(())
        } else {
            Err(Error::TapeMismatch { op })
        }
    }

    fn binary_elementwise(
        &self,
        other: &Var,
        op: &'static str,
        fwd: impl Fn(f64, f64) -> f64,
        // (gradient wrt lhs, gradient wrt rhs) given (upstream, lhs value, rhs value)
        bwd: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Var> {
        self.check_same_tape(other, op)?;
        let (sa, da, ra) = self.parts();
        let (sb, db, rb) = other.parts();
        let a_scalar = da.len() == 1;
        let b_scalar = db.len() == 1;
        let out_shape = if sa == sb {
            sa.clone()
        } else if b_scalar {
            sa.clone()
        } else if a_scalar {
            sb.clone()
        } else {
            return Err(Error::ShapeMismatch { op, lhs: sa, rhs: sb });
        };
        let n = numel_of(&out_shape);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let av = da[if a_scalar { 0 } else { i }];
            let bv = db[if b_scalar { 0 } else { i }];
            out.push(fwd(av, bv));
        }
        let requires = ra || rb;
        let (ai, bi) = (self.idx, other.idx);
        let back: BackFn = Box::new(move |g, sink| {
            for i in 0..g.len() {
                let av = da[if a_scalar { 0 } else { i }];
                let bv = db[if b_scalar { 0 } else { i }];
                let (ga, gb) = bwd(g[i], av, bv);
                sink.with(ai, |d| d[if a_scalar { 0 } else { i }] += ga);
                sink.with(bi, |d| d[if b_scalar { 0 } else { i }] += gb);
            }
        });
        Ok(self.tape.record(out_shape, out, requires, Some(back)))
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "add", |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "sub", |a, b| a - b, |g, _, _| (g, -g))
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary_elementwise(other, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    /// Multiplies by a compile-time constant (no gradient for the constant).
    pub fn scale(&self, c: f64) -> Var {
        let (shape, data, requires) = self.parts();
        let out = data.iter().map(|v| v * c).collect();
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            sink.with(ai, |d| {
                for (dst, gv) in d.iter_mut().zip(g) {
                    *dst += gv * c;
                }
            });
        });
        self.tape.record(shape, out, requires, Some(back))
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, c: f64) -> Var {
        let (shape, data, requires) = self.parts();
        let out = data.iter().map(|v| v + c).collect();
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| sink.add_slice(ai, g));
        self.tape.record(shape, out, requires, Some(back))
    }

    fn unary_elementwise(
        &self,
        fwd: impl Fn(f64) -> f64,
        // gradient wrt input given (upstream, input value, output value)
        bwd: impl Fn(f64, f64, f64) -> f64 + 'static,
    ) -> Var {
        let (shape, data, requires) = self.parts();
        let out: Vec<f64> = data.iter().map(|&v| fwd(v)).collect();
        let out_rc = Rc::new(out);
        let out_for_back = out_rc.clone();
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            sink.with(ai, |d| {
                for i in 0..g.len() {
                    d[i] += bwd(g[i], data[i], out_for_back[i]);
                }
            });
        });
        self.tape.record_rc(shape, out_rc, requires, Some(back))
    }

    pub fn relu(&self) -> Var {
        self.unary_elementwise(
            |x| if x > 0.0 { x } else { 0.0 },
            |g, x, _| if x > 0.0 { g } else { 0.0 },
        )
    }

    /// GELU, tanh form: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&self) -> Var {
        self.unary_elementwise(
            |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
            |g, x, _| {
                let u = GELU_C * (x + GELU_A * x * x * x);
                let t = u.tanh();
                let sech2 = 1.0 - t * t;
                g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x))
            },
        )
    }

    pub fn exp(&self) -> Var {
        self.unary_elementwise(f64::exp, |g, _, y| g * y)
    }

    /// Natural log. Inputs must be strictly positive.
    pub fn log(&self) -> Result<Var> {
        let (shape, data, _) = self.parts();
        if let Some(bad) = data.iter().find(|v| **v <= 0.0) {
            let _ = shape;
            return Err(Error::InvalidArg(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary_elementwise(f64::ln, |g, x, _| g / x))
    }

    pub fn sum(&self) -> Var {
        let (_, data, requires) = self.parts();
        let total: f64 = data.iter().sum();
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            let gv = g[0];
            sink.with(ai, |d| d.iter_mut().for_each(|x| *x += gv));
        });
        self.tape.record(vec![], vec![total], requires, Some(back))
    }

    pub fn mean(&self) -> Var {
        let (_, data, requires) = self.parts();
        let n = data.len() as f64;
        let total: f64 = data.iter().sum();
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            let gv = g[0] / n;
            sink.with(ai, |d| d.iter_mut().for_each(|x| *x += gv));
        });
        self.tape.record(vec![], vec![total / n], requires, Some(back))
    }

    /// Column means of a rank-2 tensor: `[n, d] -> [d]`.
    pub fn mean_axis0(&self) -> Result<Var> {
        let (shape, data, requires) = self.parts();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "mean_axis0",
                detail: "expects rank 2".into(),
                shape,
            });
        }
        let (n, d) = (shape[0], shape[1]);
        if n == 0 {
            return Err(Error::InvalidShape {
                op: "mean_axis0",
                detail: "empty axis".into(),
                shape,
            });
        }
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += data[i * d + j];
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            sink.with(ai, |dst| {
                for i in 0..n {
                    for j in 0..d {
                        dst[i * d + j] += g[j] * inv;
                    }
                }
            });
        });
        Ok(self.tape.record(vec![d], out, requires, Some(back)))
    }

    /// Max over one axis, remembering argmax positions for backward.
    ///
    /// Rank 1 with `axis == 0` reduces to a scalar. Rank 2 reduces axis 0 to
    /// `[cols]` or axis 1 to `[rows]`. Ties route the gradient to the lowest
    /// index along the reduced axis.
    pub fn max_axis(&self, axis: usize) -> Result<Var> {
        let (shape, data, requires) = self.parts();
        let ai = self.idx;
        match (shape.len(), axis) {
            (1, 0) => {
                if data.is_empty() {
                    return Err(Error::InvalidShape {
                        op: "max_axis",
                        detail: "empty input".into(),
                        shape,
                    });
                }
                let mut best = 0usize;
                for i in 1..data.len() {
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                let value = data[best];
                let back: BackFn = Box::new(move |g, sink| {
                    sink.with(ai, |d| d[best] += g[0]);
                });
                Ok(self.tape.record(vec![], vec![value], requires, Some(back)))
            }
            (2, 0) => {
                let (n, d) = (shape[0], shape[1]);
                if n == 0 {
                    return Err(Error::InvalidShape {
                        op: "max_axis",
                        detail: "empty axis".into(),
                        shape,
                    });
                }
                let mut arg = vec![0usize; d];
                for i in 1..n {
                    for j in 0..d {
                        if data[i * d + j] > data[arg[j] * d + j] {
                            arg[j] = i;
                        }
                    }
                }
                let out: Vec<f64> = (0..d).map(|j| data[arg[j] * d + j]).collect();
                let back: BackFn = Box::new(move |g, sink| {
                    sink.with(ai, |dst| {
                        for j in 0..g.len() {
                            dst[arg[j] * d + j] += g[j];
                        }
                    });
                });
                Ok(self.tape.record(vec![d], out, requires, Some(back)))
            }
            (2, 1) => {
                let (n, d) = (shape[0], shape[1]);
                if d == 0 {
                    return Err(Error::InvalidShape {
                        op: "max_axis",
                        detail: "empty axis".into(),
                        shape,
                    });
                }
                let mut arg = vec![0usize; n];
                let mut out = vec![0.0; n];
                for i in 0..n {
                    let row = &data[i * d..(i + 1) * d];
                    let mut best = 0usize;
                    for j in 1..d {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    arg[i] = best;
                    out[i] = row[best];
                }
                let back: BackFn = Box::new(move |g, sink| {
                    sink.with(ai, |dst| {
                        for i in 0..g.len() {
                            dst[i * d + arg[i]] += g[i];
                        }
                    });
                });
                Ok(self.tape.record(vec![n], out, requires, Some(back)))
            }
            _ => Err(Error::InvalidShape {
                op: "max_axis",
                detail: format!("axis {axis} invalid for rank {}", shape.len()),
                shape,
            }),
        }
    }

    /// Matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.check_same_tape(other, "matmul")?;
        let (sa, da, ra) = self.parts();
        let (sb, db, rb) = other.parts();
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k) = (sa[0], sa[1]);
        let (k2, n) = (sb[0], sb[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = da[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        let requires = ra || rb;
        let (ai, bi) = (self.idx, other.idx);
        let back: BackFn = Box::new(move |g, sink| {
            if sink.wants(ai) {
                // dA[i, p] = sum_j G[i, j] * B[p, j]
                sink.with(ai, |dst| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &db[p * n..(p + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            dst[i * k + p] += s;
                        }
                    }
                });
            }
            if sink.wants(bi) {
                // dB[p, j] = sum_i A[i, p] * G[i, j]
                sink.with(bi, |dst| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a = da[i * k + p];
                            if a == 0.0 {
                                continue;
                            }
                            let drow = &mut dst[p * n..(p + 1) * n];
                            for j in 0..n {
                                drow[j] += a * grow[j];
                            }
                        }
                    }
                });
            }
        });
        Ok(self.tape.record(vec![m, n], out, requires, Some(back)))
    }

    /// Numerically stable softmax of a vector.
    pub fn softmax(&self) -> Result<Var> {
        let (shape, data, requires) = self.parts();
        if shape.len() != 1 || data.is_empty() {
            return Err(Error::InvalidShape {
                op: "softmax",
                detail: "expects a non-empty vector".into(),
                shape,
            });
        }
        let m = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = data.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let y = Rc::new(out.clone());
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            let dot: f64 = g.iter().zip(y.iter()).map(|(gv, yv)| gv * yv).sum();
            sink.with(ai, |d| {
                for i in 0..g.len() {
                    d[i] += y[i] * (g[i] - dot);
                }
            });
        });
        Ok(self.tape.record(shape, out, requires, Some(back)))
    }

    /// `log(sum(exp(x)))` of a vector, computed with the max-shift trick.
    /// Backward distributes the upstream gradient by softmax weights.
    pub fn log_sum_exp(&self) -> Result<Var> {
        let (shape, data, requires) = self.parts();
        if shape.len() != 1 || data.is_empty() {
            return Err(Error::InvalidShape {
                op: "log_sum_exp",
                detail: "expects a non-empty vector".into(),
                shape,
            });
        }
        let m = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = data.iter().map(|v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let value = m + total.ln();
        let soft = Rc::new(exps.iter().map(|e| e / total).collect::<Vec<f64>>());
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            let gv = g[0];
            sink.with(ai, |d| {
                for i in 0..soft.len() {
                    d[i] += gv * soft[i];
                }
            });
        });
        Ok(self.tape.record(vec![], vec![value], requires, Some(back)))
    }

    pub fn transpose(&self) -> Result<Var> {
        let (shape, data, requires) = self.parts();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                detail: "expects rank 2".into(),
                shape,
            });
        }
        let (m, n) = (shape[0], shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = data[i * n + j];
            }
        }
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            sink.with(ai, |d| {
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] += g[j * m + i];
                    }
                }
            });
        });
        Ok(self.tape.record(vec![n, m], out, requires, Some(back)))
    }

    pub fn reshape(&self, new_shape: Vec<usize>) -> Result<Var> {
        let (shape, data, requires) = self.parts();
        if numel_of(&new_shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                detail: format!("cannot view {shape:?} as {new_shape:?}"),
                shape,
            });
        }
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| sink.add_slice(ai, g));
        Ok(self.tape.record(new_shape, data.as_ref().clone(), requires, Some(back)))
    }

    /// Gathers elements by flat index: output `[idx.len()]`.
    pub fn gather(&self, idx: &[usize]) -> Result<Var> {
        let (_, data, requires) = self.parts();
        let len = data.len();
        for &i in idx {
            if i >= len {
                return Err(Error::IndexOutOfBounds { op: "gather", index: i, len });
            }
        }
        let out: Vec<f64> = idx.iter().map(|&i| data[i]).collect();
        let idx_rc: Rc<Vec<usize>> = Rc::new(idx.to_vec());
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            sink.with(ai, |d| {
                for (pos, &i) in idx_rc.iter().enumerate() {
                    d[i] += g[pos];
                }
            });
        });
        Ok(self.tape.record(vec![idx.len()], out, requires, Some(back)))
    }

    /// Gathers whole rows of a rank-2 tensor: `[n, d]` with `m` indices -> `[m, d]`.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var> {
        let (shape, data, requires) = self.parts();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                detail: "expects rank 2".into(),
                shape,
            });
        }
        let (n, d) = (shape[0], shape[1]);
        for &i in idx {
            if i >= n {
                return Err(Error::IndexOutOfBounds { op: "gather_rows", index: i, len: n });
            }
        }
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&data[i * d..(i + 1) * d]);
        }
        let idx_rc: Rc<Vec<usize>> = Rc::new(idx.to_vec());
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            sink.with(ai, |dst| {
                for (pos, &i) in idx_rc.iter().enumerate() {
                    let grow = &g[pos * d..(pos + 1) * d];
                    let drow = &mut dst[i * d..(i + 1) * d];
                    for j in 0..d {
                        drow[j] += grow[j];
                    }
                }
            });
        });
        Ok(self.tape.record(vec![idx.len(), d], out, requires, Some(back)))
    }

    /// Replicates a `[d]` or `[1, d]` vector into `n` identical rows.
    pub fn repeat_rows(&self, n: usize) -> Result<Var> {
        let shape = self.shape();
        let row = match shape.len() {
            1 => self.reshape(vec![1, shape[0]])?,
            2 if shape[0] == 1 => self.clone(),
            _ => {
                return Err(Error::InvalidShape {
                    op: "repeat_rows",
                    detail: "expects [d] or [1, d]".into(),
                    shape,
                })
            }
        };
        row.gather_rows(&vec![0; n])
    }

    /// Max-relative neighbor aggregation over an adjacency list.
    ///
    /// For input `[n, d]` and `edges[i]` listing the neighbors of node `i`,
    /// `out[i, j] = max over neighbors v of (x[i, j] - x[v, j])`, or 0 when
    /// node `i` has no neighbors. Ties route the gradient to the earliest
    /// neighbor in the list.
    pub fn max_relative(&self, edges: &[Vec<usize>]) -> Result<Var> {
        let (shape, data, requires) = self.parts();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "max_relative",
                detail: "expects rank 2".into(),
                shape,
            });
        }
        let (n, d) = (shape[0], shape[1]);
        if edges.len() != n {
            return Err(Error::InvalidArg(format!(
                "max_relative: {} adjacency rows for {} nodes",
                edges.len(),
                n
            )));
        }
        const NO_ARG: u32 = u32::MAX;
        let mut out = vec![0.0; n * d];
        let mut arg = vec![NO_ARG; n * d];
        for i in 0..n {
            let xi = &data[i * d..(i + 1) * d];
            let orow = &mut out[i * d..(i + 1) * d];
            let arow = &mut arg[i * d..(i + 1) * d];
            let mut first = true;
            for &v in &edges[i] {
                if v >= n {
                    return Err(Error::IndexOutOfBounds {
                        op: "max_relative",
                        index: v,
                        len: n,
                    });
                }
                let xv = &data[v * d..(v + 1) * d];
                if first {
                    for j in 0..d {
                        orow[j] = xi[j] - xv[j];
                        arow[j] = v as u32;
                    }
                    first = false;
                } else {
                    for j in 0..d {
                        let diff = xi[j] - xv[j];
                        if diff > orow[j] {
                            orow[j] = diff;
                            arow[j] = v as u32;
                        }
                    }
                }
            }
        }
        let ai = self.idx;
        let back: BackFn = Box::new(move |g, sink| {
            sink.with(ai, |dst| {
                for i in 0..n {
                    for j in 0..d {
                        let a = arg[i * d + j];
                        if a == NO_ARG {
                            continue;
                        }
                        let gv = g[i * d + j];
                        dst[i * d + j] += gv;
                        dst[a as usize * d + j] -= gv;
                    }
                }
            });
        });
        Ok(self.tape.record(vec![n, d], out, requires, Some(back)))
    }
}

/// Concatenates the flattened parts into one vector (scalars count as length 1).
pub fn concat(parts: &[Var]) -> Result<Var> {
    let Some(first) = parts.first() else {
        return Err(Error::InvalidArg("concat of zero parts".into()));
    };
    let mut data = Vec::new();
    let mut spans = Vec::with_capacity(parts.len());
    let mut requires = false;
    for p in parts {
        first.check_same_tape(p, "concat")?;
        let (_, pd, pr) = p.parts();
        spans.push((p.idx, data.len(), pd.len()));
        data.extend_from_slice(&pd);
        requires |= pr;
    }
    let total = data.len();
    let back: BackFn = Box::new(move |g, sink| {
        for &(idx, start, len) in &spans {
            sink.with(idx, |d| {
                for k in 0..len {
                    d[k] += g[start + k];
                }
            });
        }
    });
    Ok(first.tape.record(vec![total], data, requires, Some(back)))
}
