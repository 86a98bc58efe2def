//! Reverse-mode differentiation tape.
//!
//! A `Tape` records primitive applications in topological order (define by
//! run); `backward` walks the record in reverse and accumulates gradients
//! into every trainable leaf. Forward values are computed by the shared
//! [`kernels`], the same functions the pure inference path uses.

use super::kernels;
use super::{DiffError, Scalar, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    MatMul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Affine { input: ValueId },
    Tanh(ValueId),
    Sigmoid(ValueId),
    Softmax(ValueId),
    Concat(ValueId, ValueId),
    Reshape(ValueId),
    Slice { input: ValueId, start: usize },
    EmbedLookup { table: ValueId, row: usize },
    ReduceSum(ValueId),
    CrossEntropy { probs: ValueId, target: usize },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op,
    // scale factor for Affine; unused elsewhere
    scale: S,
}

/// Ordered record of primitive applications.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Gradients keyed by tape value id. Values the loss does not depend on
/// (including parameters never used) have no entry; callers treat that as a
/// zero gradient.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ValueId) -> Option<&Tensor<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, or zeros of the given shape when absent.
    pub fn get_or_zeros(&self, id: ValueId, shape: &[usize]) -> Tensor<S> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape.to_vec()),
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    /// Registers a trainable leaf (a parameter).
    pub fn leaf(&mut self, value: Tensor<S>) -> ValueId {
        self.push_value(value, Op::Leaf { trainable: true })
    }

    /// Registers a non-trainable input; no gradient is accumulated into it.
    pub fn constant(&mut self, value: Tensor<S>) -> ValueId {
        self.push_value(value, Op::Leaf { trainable: false })
    }

    fn push_value(&mut self, value: Tensor<S>, op: Op) -> ValueId {
        self.nodes.push(Node {
            value,
            op,
            scale: S::zero(),
        });
        ValueId(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        shape: Vec<usize>,
        data: Vec<S>,
        op: Op,
        name: &'static str,
    ) -> Result<ValueId, DiffError> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DiffError::NonFinite { op: name });
        }
        Ok(self.push_value(
            Tensor::new(shape, data).expect("primitive produced wrong length"),
            op,
        ))
    }

    /// Matrix product. Accepts vector·matrix, matrix·vector and
    /// matrix·matrix operand ranks.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (data, shape) = match (va.rank(), vb.rank()) {
            (1, 2) if va.len() == vb.shape()[0] => {
                let cols = vb.shape()[1];
                (
                    kernels::vecmat(va.data(), vb.data(), va.len(), cols),
                    vec![cols],
                )
            }
            (2, 1) if va.shape()[1] == vb.len() => {
                let rows = va.shape()[0];
                (
                    kernels::matvec(va.data(), rows, vb.len(), vb.data()),
                    vec![rows],
                )
            }
            (2, 2) if va.shape()[1] == vb.shape()[0] => {
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                (kernels::matmul(va.data(), m, k, vb.data(), n), vec![m, n])
            }
            _ => {
                return Err(DiffError::ShapeMismatch {
                    op: "matmul",
                    left: va.shape().to_vec(),
                    right: vb.shape().to_vec(),
                })
            }
        };
        self.push_checked(shape, data, Op::MatMul(a, b), "matmul")
    }

    fn elementwise(
        &mut self,
        a: ValueId,
        b: ValueId,
        name: &'static str,
        f: impl Fn(&[S], &[S]) -> Vec<S>,
        op: Op,
    ) -> Result<ValueId, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(DiffError::ShapeMismatch {
                op: name,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let shape = va.shape().to_vec();
        let data = f(va.data(), vb.data());
        self.push_checked(shape, data, op, name)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, DiffError> {
        self.elementwise(a, b, "add", kernels::add, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, DiffError> {
        self.elementwise(a, b, "sub", kernels::sub, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, DiffError> {
        self.elementwise(a, b, "mul", kernels::mul, Op::Mul(a, b))
    }

    /// Elementwise scale·x + shift.
    pub fn affine(&mut self, x: ValueId, scale: S, shift: S) -> Result<ValueId, DiffError> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let data = kernels::affine(v.data(), scale, shift);
        let id = self.push_checked(shape, data, Op::Affine { input: x }, "affine")?;
        self.nodes[id.0].scale = scale;
        Ok(id)
    }

    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId, DiffError> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let data = kernels::tanh_vec(v.data());
        self.push_checked(shape, data, Op::Tanh(x), "tanh")
    }

    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId, DiffError> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let data = kernels::sigmoid_vec(v.data());
        self.push_checked(shape, data, Op::Sigmoid(x), "sigmoid")
    }

    /// Max-subtracted softmax over a rank-1 value.
    pub fn softmax(&mut self, x: ValueId) -> Result<ValueId, DiffError> {
        let v = self.value(x);
        if v.rank() != 1 || v.is_empty() {
            return Err(DiffError::ShapeMismatch {
                op: "softmax",
                left: v.shape().to_vec(),
                right: vec![],
            });
        }
        let shape = v.shape().to_vec();
        let data = kernels::softmax(v.data());
        self.push_checked(shape, data, Op::Softmax(x), "softmax")
    }

    /// Concatenation into a rank-1 value; scalars are treated as length-1
    /// vectors.
    pub fn concat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId, DiffError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() > 1 || vb.rank() > 1 {
            return Err(DiffError::ShapeMismatch {
                op: "concat",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        let len = data.len();
        self.push_checked(vec![len], data, Op::Concat(a, b), "concat")
    }

    /// Reinterprets the data under a new shape of equal length.
    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId, DiffError> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return Err(DiffError::LengthMismatch {
                shape,
                len: v.len(),
            });
        }
        let data = v.data().to_vec();
        self.push_checked(shape, data, Op::Reshape(x), "reshape")
    }

    /// Slice along the first axis: elements of a vector, rows of a matrix.
    pub fn slice(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId, DiffError> {
        let v = self.value(x);
        if v.rank() == 0 || start + len > v.shape()[0] {
            return Err(DiffError::IndexOutOfRange {
                what: "slice",
                index: start + len,
                size: if v.rank() == 0 { 0 } else { v.shape()[0] },
            });
        }
        let inner: usize = v.shape()[1..].iter().product();
        let data = v.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        self.push_checked(shape, data, Op::Slice { input: x, start }, "slice")
    }

    /// Row lookup into a rank-2 table; the gradient accumulates into that row.
    pub fn embed_lookup(&mut self, table: ValueId, row: usize) -> Result<ValueId, DiffError> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(DiffError::ShapeMismatch {
                op: "embed_lookup",
                left: t.shape().to_vec(),
                right: vec![],
            });
        }
        if row >= t.shape()[0] {
            return Err(DiffError::IndexOutOfRange {
                what: "embedding row",
                index: row,
                size: t.shape()[0],
            });
        }
        let cols = t.shape()[1];
        let data = t.row(row).expect("validated").to_vec();
        self.push_checked(vec![cols], data, Op::EmbedLookup { table, row }, "embed_lookup")
    }

    /// Sum of all elements, producing a rank-0 scalar.
    pub fn reduce_sum(&mut self, x: ValueId) -> Result<ValueId, DiffError> {
        let v = self.value(x);
        let mut acc = S::zero();
        for &e in v.data() {
            acc = acc + e;
        }
        self.push_checked(vec![], vec![acc], Op::ReduceSum(x), "reduce_sum")
    }

    /// −ln p\[target\] for a rank-1 probability vector.
    pub fn cross_entropy(&mut self, probs: ValueId, target: usize) -> Result<ValueId, DiffError> {
        let p = self.value(probs);
        if p.rank() != 1 {
            return Err(DiffError::ShapeMismatch {
                op: "cross_entropy",
                left: p.shape().to_vec(),
                right: vec![],
            });
        }
        if target >= p.len() {
            return Err(DiffError::IndexOutOfRange {
                what: "cross_entropy target",
                index: target,
                size: p.len(),
            });
        }
        let loss = -(p.data()[target].ln());
        self.push_checked(vec![], vec![loss], Op::CrossEntropy { probs, target }, "cross_entropy")
    }

    fn wants_grad(&self, id: ValueId) -> bool {
        !matches!(self.nodes[id.0].op, Op::Leaf { trainable: false })
    }

    /// Reverse accumulation of d(loss)/d(leaf) for every trainable leaf.
    /// `loss` must be a scalar value on this tape.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<S>, DiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(DiffError::LossNotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![S::one()]).expect("scalar"));

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let gy_data = gy.data();
            let node = &self.nodes[i];
            match node.op {
                Op::Leaf { .. } => {
                    grads[i] = Some(gy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(a), self.value(b));
                    match (va.rank(), vb.rank()) {
                        (1, 2) => {
                            // y = x·W: dx += W·dy, dW += x ⊗ dy
                            let (rows, cols) = (va.len(), vb.shape()[1]);
                            self.accumulate(
                                &mut grads,
                                a,
                                &kernels::matvec(vb.data(), rows, cols, gy_data),
                            );
                            self.accumulate(&mut grads, b, &kernels::outer(va.data(), gy_data));
                        }
                        (2, 1) => {
                            // y = W·x: dW += dy ⊗ x, dx += dyᵀ·W
                            let (rows, cols) = (va.shape()[0], vb.len());
                            self.accumulate(&mut grads, a, &kernels::outer(gy_data, vb.data()));
                            self.accumulate(
                                &mut grads,
                                b,
                                &kernels::vecmat(gy_data, va.data(), rows, cols),
                            );
                        }
                        (2, 2) => {
                            // C = A·B: dA += dC·Bᵀ, dB += Aᵀ·dC
                            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                            let bt = kernels::transpose(vb.data(), k, n);
                            self.accumulate(&mut grads, a, &kernels::matmul(gy_data, m, n, &bt, k));
                            let at = kernels::transpose(va.data(), m, k);
                            self.accumulate(&mut grads, b, &kernels::matmul(&at, k, m, gy_data, n));
                        }
                        _ => unreachable!("validated at forward time"),
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, gy_data);
                    self.accumulate(&mut grads, b, gy_data);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, a, gy_data);
                    let neg: Vec<S> = gy_data.iter().map(|&g| -g).collect();
                    self.accumulate(&mut grads, b, &neg);
                }
                Op::Mul(a, b) => {
                    self.accumulate(&mut grads, a, &kernels::mul(gy_data, self.value(b).data()));
                    self.accumulate(&mut grads, b, &kernels::mul(gy_data, self.value(a).data()));
                }
                Op::Affine { input } => {
                    let scaled: Vec<S> = gy_data.iter().map(|&g| g * node.scale).collect();
                    self.accumulate(&mut grads, input, &scaled);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let dx: Vec<S> = gy_data
                        .iter()
                        .zip(y)
                        .map(|(&g, &yi)| g * (S::one() - yi * yi))
                        .collect();
                    self.accumulate(&mut grads, x, &dx);
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let dx: Vec<S> = gy_data
                        .iter()
                        .zip(y)
                        .map(|(&g, &yi)| g * yi * (S::one() - yi))
                        .collect();
                    self.accumulate(&mut grads, x, &dx);
                }
                Op::Softmax(x) => {
                    // dx_j = y_j (dy_j − Σ_i dy_i y_i)
                    let y = node.value.data();
                    let inner = kernels::dot(gy_data, y);
                    let dx: Vec<S> = gy_data
                        .iter()
                        .zip(y)
                        .map(|(&g, &yi)| yi * (g - inner))
                        .collect();
                    self.accumulate(&mut grads, x, &dx);
                }
                Op::Concat(a, b) => {
                    let split = self.value(a).len();
                    self.accumulate(&mut grads, a, &gy_data[..split]);
                    self.accumulate(&mut grads, b, &gy_data[split..]);
                }
                Op::Reshape(x) => {
                    self.accumulate(&mut grads, x, gy_data);
                }
                Op::Slice { input, start } => {
                    let v = self.value(input);
                    let inner: usize = v.shape()[1..].iter().product();
                    let mut dx = vec![S::zero(); v.len()];
                    dx[start * inner..start * inner + gy_data.len()].copy_from_slice(gy_data);
                    self.accumulate(&mut grads, input, &dx);
                }
                Op::EmbedLookup { table, row } => {
                    let t = self.value(table);
                    let cols = t.shape()[1];
                    if self.wants_grad(table) {
                        let slot = Self::grad_slot(&mut grads, table, t.shape());
                        let dst = &mut slot.data_mut()[row * cols..(row + 1) * cols];
                        for (d, &g) in dst.iter_mut().zip(gy_data) {
                            *d = *d + g;
                        }
                    }
                }
                Op::ReduceSum(x) => {
                    let g = gy_data[0];
                    let dx = vec![g; self.value(x).len()];
                    self.accumulate(&mut grads, x, &dx);
                }
                Op::CrossEntropy { probs, target } => {
                    let p = self.value(probs).data();
                    let mut dx = vec![S::zero(); p.len()];
                    dx[target] = -gy_data[0] / p[target];
                    self.accumulate(&mut grads, probs, &dx);
                }
            }
        }

        Ok(Gradients { grads })
    }

    fn grad_slot<'g>(
        grads: &'g mut [Option<Tensor<S>>],
        id: ValueId,
        shape: &[usize],
    ) -> &'g mut Tensor<S> {
        grads[id.0].get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], id: ValueId, contribution: &[S]) {
        if !self.wants_grad(id) {
            return;
        }
        let shape = self.value(id).shape();
        let slot = Self::grad_slot(grads, id, shape);
        for (dst, &g) in slot.data_mut().iter_mut().zip(contribution) {
            *dst = *dst + g;
        }
    }
}
