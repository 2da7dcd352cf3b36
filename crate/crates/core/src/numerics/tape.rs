//! Define-by-run reverse-mode differentiation over row-major matrices.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the nodes in reverse creation order, so the tape is acyclic by
//! construction and ids increase with creation time. Shape misuse inside the
//! primitives is a programming error and panics; user-facing entry points
//! (MLP evaluation, field queries) validate shapes and return errors.

use super::{DenseArray, Gradients, ParamId, ParamStore, Real};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Sigmoid,
    Softplus,
    Exp,
    Ln,
    Square,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
        relu: bool,
    },
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulColumn(Var, Var),
    Affine(Var, S),
    Unary(Var, Unary),
    Powf(Var, S),
    PosEnc {
        input: Var,
        frequencies: usize,
        include_input: bool,
    },
    Concat(Vec<Var>),
    Columns {
        input: Var,
        start: usize,
    },
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    Reshape(Var),
    Sum(Var),
    RowSum(Var),
    Softmax(Var),
    CompositeWeights {
        sigma: Var,
        deltas: Vec<S>,
    },
    WeightedSum {
        weights: Var,
        values: Var,
    },
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    value: DenseArray<S>,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<S = f32> {
    nodes: Vec<Node<S>>,
}

#[inline]
fn softplus<S: Real>(x: S) -> S {
    // max(x, 0) + ln(1 + e^{-|x|}) is stable for large |x|.
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn matrix<S: Real>(rows: usize, cols: usize, data: Vec<S>) -> DenseArray<S> {
    DenseArray::new(vec![rows, cols], data).expect("consistent extents")
}

fn zip_map<S: Real>(a: &DenseArray<S>, b: &DenseArray<S>, f: impl Fn(S, S) -> S) -> DenseArray<S> {
    assert_eq!(a.len(), b.len(), "elementwise op on mismatched lengths");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    DenseArray::new(a.shape().to_vec(), data).expect("same shape")
}

/// Raw composite weights `w_k = T_k (1 - exp(-sigma_k delta_k))` for each row.
pub(crate) fn composite_weights_raw<S: Real>(
    sigma: &[S],
    deltas: &[S],
    samples: usize,
) -> Vec<S> {
    let mut out = vec![S::zero(); sigma.len()];
    for ((sig, del), w) in sigma
        .chunks_exact(samples)
        .zip(deltas.chunks_exact(samples))
        .zip(out.chunks_exact_mut(samples))
    {
        let mut transmittance = S::one();
        for k in 0..samples {
            let survive = (-(sig[k] * del[k])).exp();
            w[k] = transmittance * (S::one() - survive);
            transmittance = transmittance * survive;
        }
    }
    out
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseArray<S> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op<S>, value: DenseArray<S>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            Op::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: DenseArray<S>) -> Var {
        self.push(Op::Constant, value, &[])
    }

    pub fn param(&mut self, id: ParamId, value: DenseArray<S>) -> Var {
        self.push(Op::Param(id), value, &[])
    }

    /// Same value, no gradient flows back through the result.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(bv.rows(), k, "matmul inner extents differ");
        let mut out = vec![S::zero(); n * m];
        super::gemm(n, k, m, av.data(), false, bv.data(), false, &mut out, false);
        self.push(Op::MatMul(a, b), matrix(n, m, out), &[a, b])
    }

    /// `input * weight + bias`, optionally followed by a ReLU, as one node.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var, relu: bool) -> Var {
        let (xv, wv, bv) = (self.value(input), self.value(weight), self.value(bias));
        let (n, k, m) = (xv.rows(), xv.cols(), wv.cols());
        assert_eq!(wv.rows(), k, "dense inner extents differ");
        assert_eq!(bv.len(), m, "bias length differs from column count");
        let mut out = vec![S::zero(); n * m];
        super::gemm(n, k, m, xv.data(), false, wv.data(), false, &mut out, false);
        for row in out.chunks_exact_mut(m.max(1)) {
            for (x, &b) in row.iter_mut().zip(bv.data()) {
                let z = *x + b;
                *x = if relu { z.max(S::zero()) } else { z };
            }
        }
        self.push(
            Op::Dense {
                input,
                weight,
                bias,
                relu,
            },
            matrix(n, m, out),
            &[input, weight, bias],
        )
    }

    /// `a[n, m] + bias[m]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        let m = av.cols();
        assert_eq!(bv.len(), m, "bias length differs from column count");
        let mut out = av.data().to_vec();
        for row in out.chunks_exact_mut(m) {
            for (x, &b) in row.iter_mut().zip(bv.data()) {
                *x = *x + b;
            }
        }
        let value = matrix(av.rows(), m, out);
        self.push(Op::AddBias(a, bias), value, &[a, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), value, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), value, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = zip_map(self.value(a), self.value(b), |x, y| x / y);
        self.push(Op::Div(a, b), value, &[a, b])
    }

    /// `a[n, m] * col[n, 1]`, scaling each row of `a`.
    pub fn mul_column(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        let m = av.cols();
        assert_eq!(cv.len(), av.rows(), "column length differs from row count");
        let mut out = av.data().to_vec();
        for (row, &c) in out.chunks_exact_mut(m).zip(cv.data()) {
            row.iter_mut().for_each(|x| *x = *x * c);
        }
        let value = matrix(av.rows(), m, out);
        self.push(Op::MulColumn(a, col), value, &[a, col])
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (S::of(scale), S::of(shift));
        let value = self.value(a).map(|x| s * x + t);
        self.push(Op::Affine(a, s), value, &[a])
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let v = self.value(a);
        let value = match kind {
            Unary::Relu => v.map(|x| x.max(S::zero())),
            Unary::Tanh => v.map(|x| x.tanh()),
            Unary::Sigmoid => v.map(sigmoid),
            Unary::Softplus => v.map(softplus),
            Unary::Exp => v.map(|x| x.exp()),
            Unary::Ln => v.map(|x| x.ln()),
            Unary::Square => v.map(|x| x * x),
        };
        self.push(Op::Unary(a, kind), value, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Var {
        let p = S::of(exponent);
        let value = self.value(a).map(|x| x.powf(p));
        self.push(Op::Powf(a, p), value, &[a])
    }

    /// Lift each coordinate to `[x, sin(2^0 x), cos(2^0 x), sin(2^1 x), ...]`
    /// (the passthrough block only when `include_input`).
    pub fn positional_encode(&mut self, input: Var, frequencies: usize, include_input: bool) -> Var {
        let value = super::encoding::positional_encode(self.value(input), frequencies, include_input);
        self.push(
            Op::PosEnc {
                input,
                frequencies,
                include_input,
            },
            value,
            &[input],
        )
    }

    /// Column-wise concatenation of equal-row matrices.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![S::zero(); rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat row counts differ");
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(v.row(r));
            }
            offset += w;
        }
        self.push(Op::Concat(parts.to_vec()), matrix(rows, total, out), parts)
    }

    /// Columns `start..start + len` of `input`.
    pub fn columns(&mut self, input: Var, start: usize, len: usize) -> Var {
        let v = self.value(input);
        let (rows, cols) = (v.rows(), v.cols());
        assert!(start + len <= cols, "column slice out of range");
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        self.push(Op::Columns { input, start }, matrix(rows, len, out), &[input])
    }

    pub fn gather_rows(&mut self, input: Var, index: &[usize]) -> Var {
        let v = self.value(input);
        let cols = v.cols();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            out.extend_from_slice(v.row(i));
        }
        let value = matrix(index.len(), cols, out);
        self.push(
            Op::GatherRows {
                input,
                index: index.to_vec(),
            },
            value,
            &[input],
        )
    }

    /// Same data in row-major order with a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).clone().reshape(shape).expect("reshape keeps the element count");
        self.push(Op::Reshape(a), value, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseArray::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value, &[a])
    }

    /// `[n, m] -> [n, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = v
            .data()
            .chunks_exact(v.cols().max(1))
            .map(|r| r.iter().copied().sum())
            .collect();
        let value = matrix(v.rows(), 1, out);
        self.push(Op::RowSum(a), value, &[a])
    }

    /// Row-wise normalized exponential.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.cols();
        let mut out = v.data().to_vec();
        for row in out.chunks_exact_mut(m) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total = total + *x;
            }
            row.iter_mut().for_each(|x| *x = *x / total);
        }
        let value = matrix(v.rows(), m, out);
        self.push(Op::Softmax(a), value, &[a])
    }

    /// Quadrature weights `T_k (1 - exp(-sigma_k delta_k))` for `sigma[rays, samples]`.
    pub fn composite_weights(&mut self, sigma: Var, deltas: Vec<S>) -> Var {
        let v = self.value(sigma);
        assert_eq!(v.len(), deltas.len(), "one interval per density sample");
        let samples = v.cols();
        let w = composite_weights_raw(v.data(), &deltas, samples);
        let value = matrix(v.rows(), samples, w);
        self.push(Op::CompositeWeights { sigma, deltas }, value, &[sigma])
    }

    /// `out[r, c] = sum_s weights[r, s] * values[r * samples + s, c]`.
    pub fn weighted_sum(&mut self, weights: Var, values: Var) -> Var {
        let (w, v) = (self.value(weights), self.value(values));
        let (rays, samples, channels) = (w.rows(), w.cols(), v.cols());
        assert_eq!(v.rows(), rays * samples, "one value row per sample");
        let mut out = vec![S::zero(); rays * channels];
        for r in 0..rays {
            let dst = &mut out[r * channels..(r + 1) * channels];
            for s in 0..samples {
                let ws = w.data()[r * samples + s];
                for (o, &x) in dst.iter_mut().zip(v.row(r * samples + s)) {
                    *o = *o + ws * x;
                }
            }
        }
        let value = matrix(rays, channels, out);
        self.push(Op::WeightedSum { weights, values }, value, &[weights, values])
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<NodeGradients<S>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<DenseArray<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseArray::filled(lv.shape(), S::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(NodeGradients {
            grads,
            params: self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(i, n)| match n.op {
                    Op::Param(id) if i <= loss.0 => Some((id, i)),
                    _ => None,
                })
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<DenseArray<S>>], v: Var, g: DenseArray<S>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(g.reshape(&shape).expect("gradient length matches value"));
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &DenseArray<S>, grads: &mut [Option<DenseArray<S>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.wants(a) {
                    let mut da = vec![S::zero(); n * k];
                    super::gemm(n, m, k, g.data(), false, bv.data(), true, &mut da, false);
                    self.accumulate(grads, a, matrix(n, k, da));
                }
                if self.wants(b) {
                    let mut db = vec![S::zero(); k * m];
                    super::gemm(k, n, m, av.data(), true, g.data(), false, &mut db, false);
                    self.accumulate(grads, b, matrix(k, m, db));
                }
            }
            &Op::Dense {
                input,
                weight,
                bias,
                relu,
            } => {
                let gz = if relu {
                    zip_map(g, out, |gv, y| if y > S::zero() { gv } else { S::zero() })
                } else {
                    g.clone()
                };
                let (xv, wv) = (self.value(input), self.value(weight));
                let (n, k, m) = (xv.rows(), xv.cols(), wv.cols());
                if self.wants(bias) {
                    let mut db = vec![S::zero(); m];
                    for row in gz.data().chunks_exact(m.max(1)) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d = *d + x;
                        }
                    }
                    let shape = self.value(bias).shape().to_vec();
                    self.accumulate(grads, bias, DenseArray::new(shape, db).expect("bias shape"));
                }
                if self.wants(weight) {
                    let mut dw = vec![S::zero(); k * m];
                    super::gemm(k, n, m, xv.data(), true, gz.data(), false, &mut dw, false);
                    self.accumulate(grads, weight, matrix(k, m, dw));
                }
                if self.wants(input) {
                    let mut dx = vec![S::zero(); n * k];
                    super::gemm(n, m, k, gz.data(), false, wv.data(), true, &mut dx, false);
                    self.accumulate(grads, input, matrix(n, k, dx));
                }
            }
            &Op::AddBias(a, bias) => {
                if self.wants(bias) {
                    let m = g.cols();
                    let mut db = vec![S::zero(); m];
                    for row in g.data().chunks_exact(m) {
                        for (d, &x) in db.iter_mut().zip(row) {
                            *d = *d + x;
                        }
                    }
                    let shape = self.value(bias).shape().to_vec();
                    self.accumulate(grads, bias, DenseArray::new(shape, db).expect("bias shape"));
                }
                self.accumulate(grads, a, g.clone());
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                if self.wants(b) {
                    self.accumulate(grads, b, g.map(|x| -x));
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, zip_map(g, self.value(b), |x, y| x * y));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, zip_map(g, self.value(a), |x, y| x * y));
                }
            }
            &Op::Div(a, b) => {
                let bv = self.value(b);
                if self.wants(a) {
                    self.accumulate(grads, a, zip_map(g, bv, |x, y| x / y));
                }
                if self.wants(b) {
                    // d(a/b)/db = -(a/b)/b
                    let q = zip_map(out, bv, |o, y| -o / y);
                    self.accumulate(grads, b, zip_map(g, &q, |x, y| x * y));
                }
            }
            &Op::MulColumn(a, col) => {
                let (av, cv) = (self.value(a), self.value(col));
                let m = av.cols();
                if self.wants(a) {
                    let mut da = g.data().to_vec();
                    for (row, &c) in da.chunks_exact_mut(m).zip(cv.data()) {
                        row.iter_mut().for_each(|x| *x = *x * c);
                    }
                    self.accumulate(grads, a, matrix(av.rows(), m, da));
                }
                if self.wants(col) {
                    let dc = g
                        .data()
                        .chunks_exact(m)
                        .zip(av.data().chunks_exact(m))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(&x, &y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, col, matrix(av.rows(), 1, dc));
                }
            }
            &Op::Affine(a, s) => self.accumulate(grads, a, g.map(|x| x * s)),
            &Op::Unary(a, kind) => {
                let x = self.value(a);
                let local = match kind {
                    Unary::Relu => zip_map(g, out, |gv, y| if y > S::zero() { gv } else { S::zero() }),
                    Unary::Tanh => zip_map(g, out, |gv, y| gv * (S::one() - y * y)),
                    Unary::Sigmoid => zip_map(g, out, |gv, y| gv * y * (S::one() - y)),
                    Unary::Softplus => zip_map(g, x, |gv, xv| gv * sigmoid(xv)),
                    Unary::Exp => zip_map(g, out, |gv, y| gv * y),
                    Unary::Ln => zip_map(g, x, |gv, xv| gv / xv),
                    Unary::Square => zip_map(g, x, |gv, xv| gv * (xv + xv)),
                };
                self.accumulate(grads, a, local);
            }
            &Op::Powf(a, p) => {
                let local = zip_map(g, self.value(a), |gv, xv| gv * p * xv.powf(p - S::one()));
                self.accumulate(grads, a, local);
            }
            &Op::PosEnc {
                input,
                frequencies,
                include_input,
            } => {
                let xv = self.value(input);
                let d = xv.cols();
                let width = out.cols();
                let mut dx = vec![S::zero(); xv.len()];
                for r in 0..xv.rows() {
                    let go = g.row(r);
                    let yo = out.row(r);
                    let dst = &mut dx[r * d..(r + 1) * d];
                    let mut offset = 0;
                    if include_input {
                        for j in 0..d {
                            dst[j] = dst[j] + go[j];
                        }
                        offset = d;
                    }
                    let mut scale = S::one();
                    for _ in 0..frequencies {
                        let (sin_at, cos_at) = (offset, offset + d);
                        for j in 0..d {
                            // d sin(s x) = s cos(s x); d cos(s x) = -s sin(s x)
                            dst[j] = dst[j]
                                + scale * (go[sin_at + j] * yo[cos_at + j] - go[cos_at + j] * yo[sin_at + j]);
                        }
                        offset += 2 * d;
                        scale = scale + scale;
                    }
                    debug_assert_eq!(offset, width);
                }
                self.accumulate(grads, input, matrix(xv.rows(), d, dx));
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, matrix(rows, w, dp));
                    }
                    offset += w;
                }
            }
            &Op::Columns { input, start } => {
                let iv = self.value(input);
                let (rows, cols, len) = (iv.rows(), iv.cols(), out.cols());
                let mut di = vec![S::zero(); iv.len()];
                for r in 0..rows {
                    di[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, input, matrix(rows, cols, di));
            }
            Op::GatherRows { input, index } => {
                let iv = self.value(*input);
                let cols = iv.cols();
                let mut di = vec![S::zero(); iv.len()];
                for (r, &src) in index.iter().enumerate() {
                    for (d, &x) in di[src * cols..(src + 1) * cols].iter_mut().zip(g.row(r)) {
                        *d = *d + x;
                    }
                }
                self.accumulate(grads, *input, matrix(iv.rows(), cols, di));
            }
            &Op::Reshape(a) => self.accumulate(grads, a, g.clone()),
            &Op::Sum(a) => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(grads, a, DenseArray::filled(&shape, g.data()[0]));
            }
            &Op::RowSum(a) => {
                let av = self.value(a);
                let m = av.cols();
                let mut da = Vec::with_capacity(av.len());
                for &x in g.data() {
                    da.extend(std::iter::repeat(x).take(m));
                }
                self.accumulate(grads, a, matrix(av.rows(), m, da));
            }
            &Op::Softmax(a) => {
                let m = out.cols();
                let mut da = vec![S::zero(); out.len()];
                for ((d, y), gr) in da
                    .chunks_exact_mut(m)
                    .zip(out.data().chunks_exact(m))
                    .zip(g.data().chunks_exact(m))
                {
                    let dot: S = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..m {
                        d[j] = y[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, a, matrix(out.rows(), m, da));
            }
            Op::CompositeWeights { sigma, deltas } => {
                let sv = self.value(*sigma);
                let samples = sv.cols();
                let mut ds = vec![S::zero(); sv.len()];
                for r in 0..sv.rows() {
                    let base = r * samples;
                    let sig = &sv.data()[base..base + samples];
                    let del = &deltas[base..base + samples];
                    let w = &out.data()[base..base + samples];
                    let gr = &g.data()[base..base + samples];
                    // Transmittance after each sample.
                    let mut after = vec![S::zero(); samples];
                    let mut t = S::one();
                    for k in 0..samples {
                        t = t * (-(sig[k] * del[k])).exp();
                        after[k] = t;
                    }
                    // dw_k/dsigma_i = delta_i * (T_{i+1} [k == i] - w_k [k > i])
                    let mut tail = S::zero();
                    for i in (0..samples).rev() {
                        ds[base + i] = del[i] * (after[i] * gr[i] - tail);
                        tail = tail + w[i] * gr[i];
                    }
                }
                self.accumulate(grads, *sigma, matrix(sv.rows(), samples, ds));
            }
            &Op::WeightedSum { weights, values } => {
                let (wv, vv) = (self.value(weights), self.value(values));
                let (rays, samples, channels) = (wv.rows(), wv.cols(), vv.cols());
                if self.wants(weights) {
                    let mut dw = vec![S::zero(); wv.len()];
                    for r in 0..rays {
                        let gr = g.row(r);
                        for s in 0..samples {
                            dw[r * samples + s] =
                                gr.iter().zip(vv.row(r * samples + s)).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    self.accumulate(grads, weights, matrix(rays, samples, dw));
                }
                if self.wants(values) {
                    let mut dv = vec![S::zero(); vv.len()];
                    for r in 0..rays {
                        let gr = g.row(r);
                        for s in 0..samples {
                            let ws = wv.data()[r * samples + s];
                            let row = r * samples + s;
                            for (d, &x) in dv[row * channels..(row + 1) * channels].iter_mut().zip(gr) {
                                *d = ws * x;
                            }
                        }
                    }
                    self.accumulate(grads, values, matrix(rays * samples, channels, dv));
                }
            }
        }
    }
}

/// Gradients of one scalar with respect to every node it depends on.
#[derive(Debug)]
pub struct NodeGradients<S> {
    grads: Vec<Option<DenseArray<S>>>,
    params: Vec<(ParamId, usize)>,
}

impl<S: Real> NodeGradients<S> {
    /// `None` when the loss does not depend on `v` (or `v` is a constant).
    pub fn wrt(&self, v: Var) -> Option<&DenseArray<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Collect per-block parameter gradients; untouched blocks are exact zeros.
    pub fn into_params(mut self, store: &ParamStore<S>) -> Gradients<S> {
        let mut out = Gradients::zeros(store);
        for &(id, node) in &self.params {
            if let Some(g) = self.grads[node].take() {
                out.get_mut(id).add_assign(&g);
            }
        }
        out
    }
}
