//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! Nodes are appended in evaluation order, so the tape index is a valid
//! topological order and [`Graph::backward`] simply walks it in reverse.
//! Gradient contributions are accumulated in that fixed order, which keeps
//! results bit-for-bit reproducible.

use crate::error::TensorError;
use crate::lstm::{sequence_backward, sequence_forward, SequenceCache};
use crate::real::{gemm, sigmoid, tanh, Real};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op maps onto the left operand's shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `1×n` repeated down the rows.
    Row,
    /// `m×1` repeated across the columns.
    Col,
    Scalar,
}

impl Broadcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        let (&[m, n], &[bm, bn]) = (a, b) else {
            return Err(mismatch());
        };
        if (bm, bn) == (m, n) {
            Ok(Broadcast::Same)
        } else if (bm, bn) == (1, 1) {
            Ok(Broadcast::Scalar)
        } else if bm == 1 && bn == n {
            Ok(Broadcast::Row)
        } else if bm == m && bn == 1 {
            Ok(Broadcast::Col)
        } else {
            Err(mismatch())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary<T> {
    Sigmoid,
    Tanh,
    Sqrt,
    Huber(T),
    Scale(T),
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Binary(Binary, Var, Var, Broadcast),
    Unary(Unary<T>, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { src: Var, start: usize },
    SliceCols { src: Var, start: usize },
    GatherRows { src: Var, index: Vec<usize> },
    Transpose(Var),
    Reshape(Var),
    RowSoftmax(Var),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    SumCols(Var),
    LstmSequence {
        xproj: Var,
        w_h: Var,
        batch: usize,
        reverse: bool,
        cache: SequenceCache<T>,
    },
    LstmCell {
        pre: Var,
        c_prev: Var,
        gates: Vec<T>,
        tanh_c: Vec<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
    trainable: bool,
}

/// The broadcast operand's values for row `i`: a slice or one repeated value.
enum RowOperand<'a, T> {
    Slice(&'a [T]),
    Value(T),
}

#[inline]
fn row_operand<T: Real>(bv: &[T], bc: Broadcast, i: usize, n: usize) -> RowOperand<'_, T> {
    match bc {
        Broadcast::Same => RowOperand::Slice(&bv[i * n..(i + 1) * n]),
        Broadcast::Row => RowOperand::Slice(&bv[..n]),
        Broadcast::Col => RowOperand::Value(bv[i]),
        Broadcast::Scalar => RowOperand::Value(bv[0]),
    }
}

fn map_broadcast<T: Real>(av: &[T], bv: &[T], bc: Broadcast, m: usize, n: usize, f: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ar = &av[i * n..(i + 1) * n];
        match row_operand(bv, bc, i, n) {
            RowOperand::Slice(br) => out.extend(ar.iter().zip(br).map(|(&x, &y)| f(x, y))),
            RowOperand::Value(y) => out.extend(ar.iter().map(|&x| f(x, y))),
        }
    }
    out
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `ga += f(g, b)` elementwise with `b` broadcast.
fn accumulate_lhs<T: Real>(ga: &mut [T], gd: &[T], bv: &[T], bc: Broadcast, m: usize, n: usize, f: impl Fn(T, T) -> T) {
    for i in 0..m {
        let gr = &mut ga[i * n..(i + 1) * n];
        let dr = &gd[i * n..(i + 1) * n];
        match row_operand(bv, bc, i, n) {
            RowOperand::Slice(br) => {
                for ((a, &g), &y) in gr.iter_mut().zip(dr).zip(br) {
                    *a += f(g, y);
                }
            }
            RowOperand::Value(y) => {
                for (a, &g) in gr.iter_mut().zip(dr) {
                    *a += f(g, y);
                }
            }
        }
    }
}

/// `gb += f(g, a, b)`, summed over the broadcast dimensions.
#[allow(clippy::too_many_arguments)]
fn accumulate_rhs<T: Real>(
    gb: &mut [T],
    gd: &[T],
    av: &[T],
    bv: &[T],
    bc: Broadcast,
    m: usize,
    n: usize,
    f: impl Fn(T, T, T) -> T,
) {
    for i in 0..m {
        let dr = &gd[i * n..(i + 1) * n];
        let ar = &av[i * n..(i + 1) * n];
        match bc {
            Broadcast::Same | Broadcast::Row => {
                let off = if bc == Broadcast::Same { i * n } else { 0 };
                let br = &bv[off..off + n];
                for (((b, &g), &x), &y) in gb[off..off + n].iter_mut().zip(dr).zip(ar).zip(br) {
                    *b += f(g, x, y);
                }
            }
            Broadcast::Col | Broadcast::Scalar => {
                let bi = if bc == Broadcast::Col { i } else { 0 };
                let y = bv[bi];
                let mut acc = T::zero();
                for (&g, &x) in dr.iter().zip(ar) {
                    acc += f(g, x, y);
                }
                gb[bi] += acc;
            }
        }
    }
}

/// Computation tape.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    pub fn is_trainable(&self, v: Var) -> bool {
        self.nodes[v.0].trainable
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        self.value(v).dims2().map_err(|_| TensorError::Rank {
            op,
            shape: self.value(v).shape().to_vec(),
        })
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(Op::Leaf, value, true);
        self.nodes[v.0].trainable = true;
        v
    }

    /// Non-trainable leaf (inputs, targets, masks).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims("matmul", a)?;
        let (k2, n) = self.dims("matmul", b)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out)?, needs))
    }

    /// `x·w + b` with `b` a `1×n` row added to every output row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.dims("affine", x)?;
        let (k2, n) = self.dims("affine", w)?;
        let bias = self.value(b);
        if k != k2 || bias.shape() != [1, n] {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bias.data());
        }
        gemm(m, k, n, self.value(x).data(), false, self.value(w).data(), false, &mut out, true);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(Op::Affine(x, w, b), Tensor::matrix(m, n, out)?, needs))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, TensorError> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let bc = Broadcast::resolve(name, self.value(a).shape(), self.value(b).shape())?;
        let (m, n) = self.dims(name, a)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let out = match kind {
            Binary::Add => map_broadcast(av, bv, bc, m, n, |x, y| x + y),
            Binary::Sub => map_broadcast(av, bv, bc, m, n, |x, y| x - y),
            Binary::Mul => map_broadcast(av, bv, bc, m, n, |x, y| x * y),
            Binary::Div => map_broadcast(av, bv, bc, m, n, |x, y| x / y),
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Binary(kind, a, b, bc), Tensor::matrix(m, n, out)?, needs))
    }

    /// Elementwise sum; `b` may broadcast as a row, a column or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary<T>, a: Var) -> Var {
        let f = |x: T| match kind {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => tanh(x),
            Unary::Sqrt => x.sqrt(),
            Unary::Huber(d) => {
                let e = x.abs();
                if e <= d {
                    T::lit(0.5) * x * x
                } else {
                    d * e - T::lit(0.5) * d * d
                }
            }
            Unary::Scale(c) => x * c,
        };
        let value = self.value(a).map(f);
        let needs = self.needs(a);
        self.push(Op::Unary(kind, a), value, needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    /// Elementwise Huber penalty of `a` with threshold `delta`.
    pub fn huber(&mut self, a: Var, delta: T) -> Var {
        self.unary(Unary::Huber(delta), a)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(Unary::Scale(c), a)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("concat_cols"))?;
        let (m, _) = self.dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims("concat_cols", p)?;
            if pm != m {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: vec![pm, pn],
                });
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), Tensor::matrix(m, n, out)?, needs))
    }

    /// Stacks matrices vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("concat_rows"))?;
        let (_, n) = self.dims("concat_rows", first)?;
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.dims("concat_rows", p)?;
            if pn != n {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: vec![pm, pn],
                });
            }
            m += pm;
        }
        let mut out = Vec::with_capacity(m * n);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Tensor::matrix(m, n, out)?, needs))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims("slice_rows", src)?;
        if start + len > m {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                start,
                end: start + len,
                extent: m,
            });
        }
        let out = self.value(src).data()[start * n..(start + len) * n].to_vec();
        let needs = self.needs(src);
        Ok(self.push(Op::SliceRows { src, start }, Tensor::matrix(len, n, out)?, needs))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (m, n) = self.dims("slice_cols", src)?;
        if start + len > n {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                start,
                end: start + len,
                extent: n,
            });
        }
        let data = self.value(src).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&data[i * n + start..i * n + start + len]);
        }
        let needs = self.needs(src);
        Ok(self.push(Op::SliceCols { src, start }, Tensor::matrix(m, len, out)?, needs))
    }

    /// Output row `r` is row `index[r]` of `src`. Indices may repeat.
    pub fn gather_rows(&mut self, src: Var, index: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.dims("gather_rows", src)?;
        let data = self.value(src).data();
        let mut out = Vec::with_capacity(index.len() * n);
        for &r in index {
            if r >= m {
                return Err(TensorError::OutOfRange {
                    op: "gather_rows",
                    start: r,
                    end: r + 1,
                    extent: m,
                });
            }
            out.extend_from_slice(&data[r * n..(r + 1) * n]);
        }
        let needs = self.needs(src);
        let value = Tensor::matrix(index.len(), n, out)?;
        Ok(self.push(
            Op::GatherRows {
                src,
                index: index.to_vec(),
            },
            value,
            needs,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).transpose()?;
        let needs = self.needs(a);
        Ok(self.push(Op::Transpose(a), value, needs))
    }

    /// Reinterprets the row-major data with a new `rows×cols` shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshaped(vec![rows, cols])?;
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape(a), value, needs))
    }

    /// Softmax along each row, shifted by the row maximum.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims("row_softmax", a)?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().fold(T::neg_infinity(), |acc, &v| acc.max(v));
            let dst = &mut out[i * n..(i + 1) * n];
            let mut total = T::zero();
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d = *d / total;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Op::RowSoftmax(a), Tensor::matrix(m, n, out)?, needs))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        let needs = self.needs(a);
        self.push(Op::SumAll(a), Tensor::scalar(s), needs)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().fold(T::zero(), |acc, &v| acc + v);
        let mean = s / T::from_usize(t.len().max(1)).unwrap();
        let needs = self.needs(a);
        self.push(Op::MeanAll(a), Tensor::scalar(mean), needs)
    }

    /// Column sums: `m×n → 1×n`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims("sum_rows", a)?;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for (o, &v) in out.iter_mut().zip(&src[i * n..(i + 1) * n]) {
                *o += v;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Op::SumRows(a), Tensor::matrix(1, n, out)?, needs))
    }

    /// Row sums: `m×n → m×1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims("sum_cols", a)?;
        let src = self.value(a).data();
        let out: Vec<T> = (0..m)
            .map(|i| src[i * n..(i + 1) * n].iter().fold(T::zero(), |acc, &v| acc + v))
            .collect();
        let needs = self.needs(a);
        Ok(self.push(Op::SumCols(a), Tensor::matrix(m, 1, out)?, needs))
    }

    /// Fused LSTM cell nonlinearity.
    ///
    /// `pre` is `B×4h` with gate pre-activations in column blocks
    /// `[input | forget | candidate | output]`; `c_prev` is `B×h`.
    /// Returns `B×2h` holding `[h | c]`.
    pub fn lstm_cell(&mut self, pre: Var, c_prev: Var) -> Result<Var, TensorError> {
        let (b, h4) = self.dims("lstm_cell", pre)?;
        let (cb, h) = self.dims("lstm_cell", c_prev)?;
        if h4 != 4 * h || cb != b {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_cell",
                lhs: vec![b, h4],
                rhs: vec![cb, h],
            });
        }
        let p = self.value(pre).data();
        let cp = self.value(c_prev).data();
        let mut gates = vec![T::zero(); b * h4];
        let mut tanh_c = vec![T::zero(); b * h];
        let mut out = vec![T::zero(); b * 2 * h];
        for r in 0..b {
            let pr = &p[r * h4..(r + 1) * h4];
            let gr = &mut gates[r * h4..(r + 1) * h4];
            for j in 0..h {
                let i = sigmoid(pr[j]);
                let f = sigmoid(pr[h + j]);
                let g = tanh(pr[2 * h + j]);
                let o = sigmoid(pr[3 * h + j]);
                let c = f * cp[r * h + j] + i * g;
                let tc = tanh(c);
                gr[j] = i;
                gr[h + j] = f;
                gr[2 * h + j] = g;
                gr[3 * h + j] = o;
                tanh_c[r * h + j] = tc;
                out[r * 2 * h + j] = o * tc;
                out[r * 2 * h + h + j] = c;
            }
        }
        let needs = self.needs(pre) || self.needs(c_prev);
        let value = Tensor::matrix(b, 2 * h, out)?;
        Ok(self.push(
            Op::LstmCell {
                pre,
                c_prev,
                gates,
                tanh_c,
            },
            value,
            needs,
        ))
    }

    /// A full LSTM direction in one node.
    ///
    /// `xproj` is `(T·B)×4h` holding the input projections (bias included)
    /// in time-major rows; `w_h` is the `h×4h` recurrent matrix. The state
    /// starts at zero and steps run backwards in time when `reverse` is set.
    /// Returns the hidden states `(T·B)×h` in the same row layout.
    pub fn lstm_sequence(&mut self, xproj: Var, w_h: Var, batch: usize, reverse: bool) -> Result<Var, TensorError> {
        let (rows, h4) = self.dims("lstm_sequence", xproj)?;
        let (h, h4w) = self.dims("lstm_sequence", w_h)?;
        if h4 != 4 * h || h4w != h4 || batch == 0 || rows % batch != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "lstm_sequence",
                lhs: vec![rows, h4],
                rhs: vec![h, h4w],
            });
        }
        let (out, cache) = sequence_forward(self.value(xproj).data(), self.value(w_h).data(), batch, h, reverse);
        let needs = self.needs(xproj) || self.needs(w_h);
        let value = Tensor::matrix(rows, h, out)?;
        Ok(self.push(
            Op::LstmSequence {
                xproj,
                w_h,
                batch,
                reverse,
                cache,
            },
            value,
            needs,
        ))
    }

    /// Reverse-mode pass from a `1×1` loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let shape = self.value(loss).shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(shape.to_vec(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> &'g mut Tensor<T> {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape().to_vec()))
    }

    fn matmul_backward(&self, a: Var, b: Var, gd: &[T], grads: &mut [Option<Tensor<T>>]) {
        let (m, k) = self.value(a).dims2().unwrap();
        let n = self.value(b).cols();
        if self.needs(a) {
            let bv = self.value(b).data();
            let ga = self.grad_buf(grads, a);
            gemm(m, n, k, gd, false, bv, true, ga.data_mut(), true);
        }
        if self.needs(b) {
            let av = self.value(a).data();
            let gb = self.grad_buf(grads, b);
            gemm(k, m, n, av, true, gd, false, gb.data_mut(), true);
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine(x, w, b) => {
                self.matmul_backward(*x, *w, gd, grads);
                if self.needs(*b) {
                    let n = self.value(*b).len();
                    let gb = self.grad_buf(grads, *b).data_mut();
                    for row in gd.chunks_exact(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, gd, grads),
            Op::Binary(kind, a, b, bc) => {
                let (m, n) = node.value.dims2().unwrap();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    let ga = self.grad_buf(grads, *a).data_mut();
                    match kind {
                        Binary::Add | Binary::Sub => add_into(ga, gd),
                        Binary::Mul => accumulate_lhs(ga, gd, bv, *bc, m, n, |g, y| g * y),
                        Binary::Div => accumulate_lhs(ga, gd, bv, *bc, m, n, |g, y| g / y),
                    }
                }
                if self.needs(*b) {
                    let gb = self.grad_buf(grads, *b).data_mut();
                    match kind {
                        Binary::Add => accumulate_rhs(gb, gd, av, bv, *bc, m, n, |g, _, _| g),
                        Binary::Sub => accumulate_rhs(gb, gd, av, bv, *bc, m, n, |g, _, _| -g),
                        Binary::Mul => accumulate_rhs(gb, gd, av, bv, *bc, m, n, |g, x, _| g * x),
                        Binary::Div => accumulate_rhs(gb, gd, av, bv, *bc, m, n, |g, x, y| -g * x / (y * y)),
                    }
                }
            }
            Op::Unary(kind, a) => {
                if !self.needs(*a) {
                    return;
                }
                let x = self.value(*a).data();
                let ga = self.grad_buf(grads, *a).data_mut();
                for k in 0..ga.len() {
                    let local = match *kind {
                        Unary::Sigmoid => y[k] * (T::one() - y[k]),
                        Unary::Tanh => T::one() - y[k] * y[k],
                        Unary::Sqrt => T::lit(0.5) / y[k],
                        Unary::Huber(d) => x[k].max(-d).min(d),
                        Unary::Scale(c) => c,
                    };
                    ga[k] += gd[k] * local;
                }
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let n = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let gp = self.grad_buf(grads, p).data_mut();
                        for i in 0..m {
                            for j in 0..w {
                                gp[i * w + j] += gd[i * n + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.needs(p) {
                        let gp = self.grad_buf(grads, p).data_mut();
                        for (d, &s) in gp.iter_mut().zip(&gd[offset..offset + len]) {
                            *d += s;
                        }
                    }
                    offset += len;
                }
            }
            Op::SliceRows { src, start } => {
                if !self.needs(*src) {
                    return;
                }
                let n = node.value.cols();
                let gs = self.grad_buf(grads, *src).data_mut();
                for (d, &s) in gs[start * n..start * n + gd.len()].iter_mut().zip(gd) {
                    *d += s;
                }
            }
            Op::SliceCols { src, start } => {
                if !self.needs(*src) {
                    return;
                }
                let (m, w) = node.value.dims2().unwrap();
                let n = self.value(*src).cols();
                let gs = self.grad_buf(grads, *src).data_mut();
                for i in 0..m {
                    for j in 0..w {
                        gs[i * n + start + j] += gd[i * w + j];
                    }
                }
            }
            Op::GatherRows { src, index } => {
                if !self.needs(*src) {
                    return;
                }
                let n = node.value.cols();
                let gs = self.grad_buf(grads, *src).data_mut();
                for (r, &s) in index.iter().enumerate() {
                    for j in 0..n {
                        gs[s * n + j] += gd[r * n + j];
                    }
                }
            }
            Op::Transpose(a) => {
                if !self.needs(*a) {
                    return;
                }
                let gt = g.transpose().unwrap();
                let ga = self.grad_buf(grads, *a).data_mut();
                for (d, &s) in ga.iter_mut().zip(gt.data()) {
                    *d += s;
                }
            }
            Op::Reshape(a) => {
                if !self.needs(*a) {
                    return;
                }
                let ga = self.grad_buf(grads, *a).data_mut();
                for (d, &s) in ga.iter_mut().zip(gd) {
                    *d += s;
                }
            }
            Op::RowSoftmax(a) => {
                if !self.needs(*a) {
                    return;
                }
                let (m, n) = node.value.dims2().unwrap();
                let ga = self.grad_buf(grads, *a).data_mut();
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &gd[i * n..(i + 1) * n];
                    let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                    for j in 0..n {
                        ga[i * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::SumAll(a) | Op::MeanAll(a) => {
                if !self.needs(*a) {
                    return;
                }
                let len = self.value(*a).len();
                let s = match node.op {
                    Op::MeanAll(_) => gd[0] / T::from_usize(len.max(1)).unwrap(),
                    _ => gd[0],
                };
                for d in self.grad_buf(grads, *a).data_mut() {
                    *d += s;
                }
            }
            Op::SumRows(a) => {
                if !self.needs(*a) {
                    return;
                }
                let n = node.value.cols();
                let ga = self.grad_buf(grads, *a).data_mut();
                for (k, d) in ga.iter_mut().enumerate() {
                    *d += gd[k % n];
                }
            }
            Op::SumCols(a) => {
                if !self.needs(*a) {
                    return;
                }
                let n = self.value(*a).cols();
                let ga = self.grad_buf(grads, *a).data_mut();
                for (k, d) in ga.iter_mut().enumerate() {
                    *d += gd[k / n];
                }
            }
            Op::LstmSequence {
                xproj,
                w_h,
                batch,
                reverse,
                cache,
            } => {
                let h = self.value(*w_h).rows();
                let wv = self.value(*w_h).data();
                let mut dw = self.needs(*w_h).then(|| vec![T::zero(); wv.len()]);
                let dpre = sequence_backward(gd, y, cache, wv, *batch, h, *reverse, dw.as_deref_mut());
                if let Some(dw) = dw {
                    add_into(self.grad_buf(grads, *w_h).data_mut(), &dw);
                }
                if self.needs(*xproj) {
                    add_into(self.grad_buf(grads, *xproj).data_mut(), &dpre);
                }
            }
            Op::LstmCell {
                pre,
                c_prev,
                gates,
                tanh_c,
            } => {
                let (b, h4) = self.value(*pre).dims2().unwrap();
                let h = h4 / 4;
                let cp = self.value(*c_prev).data();
                let mut dpre = vec![T::zero(); b * h4];
                let mut dcp = vec![T::zero(); b * h];
                let one = T::one();
                for r in 0..b {
                    let gr = &gates[r * h4..(r + 1) * h4];
                    for j in 0..h {
                        let (i, f, gg, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                        let tc = tanh_c[r * h + j];
                        let dh = gd[r * 2 * h + j];
                        let dc = gd[r * 2 * h + h + j] + dh * o * (one - tc * tc);
                        let dp = &mut dpre[r * h4..(r + 1) * h4];
                        dp[j] = dc * gg * i * (one - i);
                        dp[h + j] = dc * cp[r * h + j] * f * (one - f);
                        dp[2 * h + j] = dc * i * (one - gg * gg);
                        dp[3 * h + j] = dh * tc * o * (one - o);
                        dcp[r * h + j] = dc * f;
                    }
                }
                if self.needs(*pre) {
                    for (d, s) in self.grad_buf(grads, *pre).data_mut().iter_mut().zip(dpre) {
                        *d += s;
                    }
                }
                if self.needs(*c_prev) {
                    for (d, s) in self.grad_buf(grads, *c_prev).data_mut().iter_mut().zip(dcp) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`]: accumulated gradients for every leaf that
/// the loss depends on.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, materialising zeros for disconnected leaves.
    pub fn wrt(&self, graph: &Graph<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape().to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
