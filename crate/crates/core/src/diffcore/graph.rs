//! Tensor-level reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in execution
//! order. [`Graph::backward`] walks that tape in reverse and accumulates
//! vector-Jacobian products into every node that depends on a parameter leaf.
//! Nodes created from constants (or from operations whose inputs are all
//! constant) carry no gradient, which is also how stop-gradient is expressed:
//! copy a value out with [`Graph::value`] and feed it back in with
//! [`Graph::constant`].

use crate::diffcore::real::{gemm, MatView};
use crate::diffcore::tensor::split_axis;
use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Square,
    Neg,
}

enum Op<T> {
    Leaf,
    MatMul {
        x: usize,
        w: usize,
    },
    AddBias {
        x: usize,
        b: usize,
    },
    Bmm {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
        batch: usize,
        a_dims: (usize, usize),
        b_dims: (usize, usize),
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale {
        x: usize,
        c: T,
    },
    AddScalar {
        x: usize,
    },
    Unary {
        x: usize,
        kind: Unary,
    },
    ScaleRows {
        x: usize,
        s: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        offset: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    Normalize {
        x: usize,
        axis: usize,
        sums: Vec<T>,
    },
    LogSumExp {
        x: usize,
        axis: usize,
        probs: Vec<T>,
    },
    SumAxis {
        x: usize,
        axis: usize,
    },
    SumAll {
        x: usize,
    },
    MeanAll {
        x: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Select {
        x: usize,
        axis: usize,
        indices: Vec<usize>,
    },
    Repeat {
        x: usize,
        axis: usize,
        n: usize,
    },
    Permute {
        x: usize,
        /// Output flat index -> input flat index.
        map: Vec<usize>,
    },
    Reshape {
        x: usize,
    },
    GatherFlat {
        x: usize,
        indices: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    grad: bool,
}

/// Recording tape of tensor operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to the parameter leaves of a graph.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`, or `None` when `v` is not a parameter leaf or the
    /// output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// Constant copy of `v`'s current value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].grad)
    }

    fn data(&self, v: usize) -> &[T] {
        self.nodes[v].value.data()
    }

    fn dims(&self, v: usize) -> &[usize] {
        self.nodes[v].value.shape()
    }

    // ------------------------------------------------------------------
    // Linear algebra

    /// `x · w` over the trailing axis of `x`; `w` is `[in, out]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.dims(x.0).to_vec();
        let ws = self.dims(w.0).to_vec();
        if ws.len() != 2 {
            return Err(Error::dim("linear", format!("weight must be 2-D, got {ws:?}")));
        }
        let k = *xs.last().ok_or_else(|| Error::dim("linear", "input is a scalar"))?;
        if k != ws[0] {
            return Err(Error::dim(
                "linear",
                format!("input trailing extent {k} does not match weight rows {}", ws[0]),
            ));
        }
        let n = ws[1];
        let rows = self.nodes[x.0].value.len() / k.max(1);
        let mut out = vec![T::zero(); rows * n];
        gemm(
            MatView::new(self.data(x.0), rows, k, false),
            MatView::new(self.data(w.0), k, n, false),
            &mut out,
            false,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let grad = self.any_grad(&[x.0, w.0]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { x: x.0, w: w.0 }, grad))
    }

    /// Adds `b` (`[C]`) to every trailing vector of `x` (`[..., C]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = *self
            .dims(x.0)
            .last()
            .ok_or_else(|| Error::dim("bias", "input is a scalar"))?;
        if self.dims(b.0) != [c] {
            return Err(Error::dim(
                "bias",
                format!("bias shape {:?} vs trailing extent {c}", self.dims(b.0)),
            ));
        }
        let bias = self.data(b.0).to_vec();
        let mut value = self.nodes[x.0].value.clone();
        for row in value.data_mut().chunks_mut(c) {
            for (v, &bb) in row.iter_mut().zip(&bias) {
                *v += bb;
            }
        }
        let grad = self.any_grad(&[x.0, b.0]);
        Ok(self.push(value, Op::AddBias { x: x.0, b: b.0 }, grad))
    }

    /// Batched matrix product over the last two axes. `ta`/`tb` read the
    /// corresponding operand transposed. Leading axes must agree and are
    /// taken from `a`.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let ash = self.dims(a.0).to_vec();
        let bsh = self.dims(b.0).to_vec();
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(Error::dim("bmm", "operands must have rank >= 2"));
        }
        let batch: usize = ash[..ash.len() - 2].iter().product();
        let batch_b: usize = bsh[..bsh.len() - 2].iter().product();
        if batch != batch_b {
            return Err(Error::dim("bmm", format!("batch extents differ: {ash:?} vs {bsh:?}")));
        }
        let a_dims = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let b_dims = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        let (m, k) = if ta { (a_dims.1, a_dims.0) } else { a_dims };
        let (k2, n) = if tb { (b_dims.1, b_dims.0) } else { b_dims };
        if k != k2 {
            return Err(Error::dim(
                "bmm",
                format!(
                    "inner extents differ: {ash:?}{} · {bsh:?}{}",
                    if ta { "ᵀ" } else { "" },
                    if tb { "ᵀ" } else { "" }
                ),
            ));
        }
        let asz = a_dims.0 * a_dims.1;
        let bsz = b_dims.0 * b_dims.1;
        let mut out = vec![T::zero(); batch * m * n];
        {
            let ad = self.data(a.0);
            let bd = self.data(b.0);
            for i in 0..batch {
                gemm(
                    MatView::new(&ad[i * asz..(i + 1) * asz], a_dims.0, a_dims.1, ta),
                    MatView::new(&bd[i * bsz..(i + 1) * bsz], b_dims.0, b_dims.1, tb),
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = ash[..ash.len() - 2].to_vec();
        shape.extend_from_slice(&[m, n]);
        let grad = self.any_grad(&[a.0, b.0]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Bmm {
                a: a.0,
                b: b.0,
                ta,
                tb,
                batch,
                a_dims,
                b_dims,
            },
            grad,
        ))
    }

    // ------------------------------------------------------------------
    // Elementwise

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a.0) != self.dims(b.0) {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.dims(a.0), self.dims(b.0))));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.data(a.0)
            .iter()
            .zip(self.data(b.0))
            .map(|(&x, &y)| f(x, y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.binary(a, b, |x, y| x + y);
        let shape = self.dims(a.0).to_vec();
        let grad = self.any_grad(&[a.0, b.0]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a.0, b.0), grad))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.binary(a, b, |x, y| x - y);
        let shape = self.dims(a.0).to_vec();
        let grad = self.any_grad(&[a.0, b.0]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Sub(a.0, b.0), grad))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.binary(a, b, |x, y| x * y);
        let shape = self.dims(a.0).to_vec();
        let grad = self.any_grad(&[a.0, b.0]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Mul(a.0, b.0), grad))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.nodes[x.0].value.map(|v| v * c);
        let grad = self.nodes[x.0].grad;
        self.push(value, Op::Scale { x: x.0, c }, grad)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.nodes[x.0].value.map(|v| v + c);
        let grad = self.nodes[x.0].grad;
        self.push(value, Op::AddScalar { x: x.0 }, grad)
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let f: fn(T) -> T = match kind {
            Unary::Relu => |v| if v > T::zero() { v } else { T::zero() },
            Unary::Sigmoid => |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            Unary::Tanh => |v| v.tanh(),
            Unary::Exp => |v| v.exp(),
            Unary::Square => |v| v * v,
            Unary::Neg => |v| -v,
        };
        let value = self.nodes[x.0].value.map(f);
        let grad = self.nodes[x.0].grad;
        self.push(value, Op::Unary { x: x.0, kind }, grad)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }
    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Neg)
    }

    /// `x[..., c] * s[...]`: scales every trailing vector of `x` by the
    /// matching entry of `s`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.dims(x.0);
        if xs.is_empty() || &xs[..xs.len() - 1] != self.dims(s.0) {
            return Err(Error::dim(
                "scale_rows",
                format!("{:?} vs scales {:?}", xs, self.dims(s.0)),
            ));
        }
        let c = *xs.last().unwrap();
        let scales = self.data(s.0).to_vec();
        let mut value = self.nodes[x.0].value.clone();
        for (row, &sc) in value.data_mut().chunks_mut(c.max(1)).zip(&scales) {
            row.iter_mut().for_each(|v| *v *= sc);
        }
        let grad = self.any_grad(&[x.0, s.0]);
        Ok(self.push(value, Op::ScaleRows { x: x.0, s: s.0 }, grad))
    }

    // ------------------------------------------------------------------
    // Normalization and reductions

    /// Layer normalization over the trailing axis with affine `gain`/`offset`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var, eps: f64) -> Result<Var> {
        let c = *self
            .dims(x.0)
            .last()
            .ok_or_else(|| Error::dim("layer_norm", "input is a scalar"))?;
        if c == 0 || self.dims(gain.0) != [c] || self.dims(offset.0) != [c] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "trailing extent {c}, gain {:?}, offset {:?}",
                    self.dims(gain.0),
                    self.dims(offset.0)
                ),
            ));
        }
        let eps = T::lit(eps);
        let cn = T::lit(c as f64);
        let gain_v = self.data(gain.0).to_vec();
        let offset_v = self.data(offset.0).to_vec();
        let xd = self.data(x.0);
        let rows = xd.len() / c;
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gain_v[j] + offset_v[j];
            }
        }
        let shape = self.dims(x.0).to_vec();
        let grad = self.any_grad(&[x.0, gain.0, offset.0]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                offset: offset.0,
                xhat,
                rstd,
            },
            grad,
        ))
    }

    fn check_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<()> {
        if axis >= self.dims(x.0).len() {
            return Err(Error::dim(
                op,
                format!("axis {axis} out of range for {:?}", self.dims(x.0)),
            ));
        }
        Ok(())
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", x, axis)?;
        let (outer, len, inner) = split_axis(self.dims(x.0), axis);
        let xd = self.data(x.0);
        let mut out = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(xd[base + j * inner]);
                }
                let mut s = T::zero();
                for j in 0..len {
                    let e = (xd[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    s += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= s;
                }
            }
        }
        let shape = self.dims(x.0).to_vec();
        let grad = self.nodes[x.0].grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x: x.0, axis }, grad))
    }

    /// `x / (Σ_axis x + eps)`.
    pub fn normalize(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        self.check_axis("normalize", x, axis)?;
        let (outer, len, inner) = split_axis(self.dims(x.0), axis);
        let eps = T::lit(eps);
        let xd = self.data(x.0);
        let mut out = vec![T::zero(); xd.len()];
        let mut sums = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut s = eps;
                for j in 0..len {
                    s += xd[base + j * inner];
                }
                sums[o * inner + i] = s;
                for j in 0..len {
                    out[base + j * inner] = xd[base + j * inner] / s;
                }
            }
        }
        let shape = self.dims(x.0).to_vec();
        let grad = self.nodes[x.0].grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Normalize { x: x.0, axis, sums }, grad))
    }

    /// `log Σ_axis exp(x)`, removing `axis`.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("logsumexp", x, axis)?;
        let (outer, len, inner) = split_axis(self.dims(x.0), axis);
        if len == 0 {
            return Err(Error::dim("logsumexp", "empty reduction axis"));
        }
        let xd = self.data(x.0);
        let mut out = vec![T::zero(); outer * inner];
        let mut probs = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(xd[base + j * inner]);
                }
                let mut s = T::zero();
                for j in 0..len {
                    let e = (xd[base + j * inner] - mx).exp();
                    probs[base + j * inner] = e;
                    s += e;
                }
                for j in 0..len {
                    probs[base + j * inner] /= s;
                }
                out[o * inner + i] = mx + s.ln();
            }
        }
        let mut shape = self.dims(x.0).to_vec();
        shape.remove(axis);
        let grad = self.nodes[x.0].grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSumExp { x: x.0, axis, probs }, grad))
    }

    /// Sum along `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum_axis", x, axis)?;
        let (outer, len, inner) = split_axis(self.dims(x.0), axis);
        let xd = self.data(x.0);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &xd[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.dims(x.0).to_vec();
        shape.remove(axis);
        let grad = self.nodes[x.0].grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::SumAxis { x: x.0, axis }, grad))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x.0).iter().copied().sum::<T>();
        let grad = self.nodes[x.0].grad;
        self.push(Tensor::scalar(s), Op::SumAll { x: x.0 }, grad)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let d = self.data(x.0);
        let s = d.iter().copied().sum::<T>() / T::lit(d.len().max(1) as f64);
        let grad = self.nodes[x.0].grad;
        self.push(Tensor::scalar(s), Op::MeanAll { x: x.0 }, grad)
    }

    // ------------------------------------------------------------------
    // Layout

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Argument("concat of zero tensors".into()))?;
        let base_shape = self.dims(first.0).to_vec();
        if axis >= base_shape.len() {
            return Err(Error::dim("concat", format!("axis {axis} for {base_shape:?}")));
        }
        let mut total = 0;
        for v in xs {
            let s = self.dims(v.0);
            if s.len() != base_shape.len()
                || s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::dim(
                    "concat",
                    format!("{s:?} incompatible with {base_shape:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let len = self.dims(v.0)[axis];
                let d = self.data(v.0);
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        let grad = self.any_grad(&ids);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: ids, axis }, grad))
    }

    /// Contiguous range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check_axis("slice", x, axis)?;
        let (outer, len, inner) = split_axis(self.dims(x.0), axis);
        if start > end || end > len {
            return Err(Error::dim(
                "slice",
                format!("range {start}..{end} outside extent {len}"),
            ));
        }
        let xd = self.data(x.0);
        let w = end - start;
        let mut out = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = self.dims(x.0).to_vec();
        shape[axis] = w;
        let grad = self.nodes[x.0].grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x: x.0, axis, start }, grad))
    }

    /// Gather entries along `axis` (repetition allowed).
    pub fn select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        self.check_axis("select", x, axis)?;
        let (outer, len, inner) = split_axis(self.dims(x.0), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::dim("select", format!("index {bad} outside extent {len}")));
        }
        let xd = self.data(x.0);
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &j in indices {
                out.extend_from_slice(&xd[(o * len + j) * inner..(o * len + j + 1) * inner]);
            }
        }
        let mut shape = self.dims(x.0).to_vec();
        shape[axis] = indices.len();
        let grad = self.nodes[x.0].grad;
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Select {
                x: x.0,
                axis,
                indices: indices.to_vec(),
            },
            grad,
        ))
    }

    /// Insert a new axis at `axis` holding `n` copies of `x`.
    pub fn repeat(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let xs = self.dims(x.0).to_vec();
        if axis > xs.len() {
            return Err(Error::dim("repeat", format!("axis {axis} for {xs:?}")));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis..].iter().product();
        let xd = self.data(x.0);
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let chunk = &xd[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(chunk);
            }
        }
        let mut shape = xs;
        shape.insert(axis, n);
        let grad = self.nodes[x.0].grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Repeat { x: x.0, axis, n }, grad))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xs = self.dims(x.0).to_vec();
        let mut seen = vec![false; xs.len()];
        if perm.len() != xs.len()
            || perm
                .iter()
                .any(|&p| p >= xs.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::dim(
                "permute",
                format!("{perm:?} is not a permutation of the axes of {xs:?}"),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
        let mut in_strides = vec![1usize; xs.len()];
        for i in (0..xs.len().saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * xs[i + 1];
        }
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let total: usize = xs.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; xs.len()];
        let mut src = 0usize;
        for _ in 0..total {
            map.push(src);
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                src += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                src -= strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        let xd = self.data(x.0);
        let out: Vec<T> = map.iter().map(|&i| xd[i]).collect();
        let grad = self.nodes[x.0].grad;
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Permute { x: x.0, map }, grad))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshape(shape)?;
        let grad = self.nodes[x.0].grad;
        Ok(self.push(value, Op::Reshape { x: x.0 }, grad))
    }

    /// 1-D tensor of the elements at the given flat indices.
    pub fn gather_flat(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xd = self.data(x.0);
        if let Some(&bad) = indices.iter().find(|&&i| i >= xd.len()) {
            return Err(Error::dim(
                "gather_flat",
                format!("index {bad} outside {} elements", xd.len()),
            ));
        }
        let out: Vec<T> = indices.iter().map(|&i| xd[i]).collect();
        let grad = self.nodes[x.0].grad;
        Ok(self.push(
            Tensor::new(vec![indices.len()], out)?,
            Op::GatherFlat {
                x: x.0,
                indices: indices.to_vec(),
            },
            grad,
        ))
    }

    // ------------------------------------------------------------------
    // Reverse pass

    /// Gradients of the scalar `output` with respect to every parameter leaf.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("output must be a scalar, got shape {:?}", self.dims(output.0)),
            ));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        let mut leaves: Vec<Option<Tensor<T>>> = vec![None; n];
        if self.nodes[output.0].grad {
            grads[output.0] = Some(vec![T::one()]);
        }
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                leaves[id] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
        }
        Ok(Gradients { grads: leaves })
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Vec<T>>], id: usize) -> Option<&'a mut Vec<T>> {
        if !self.nodes[id].grad {
            return None;
        }
        let len = self.nodes[id].value.len();
        Some(grads[id].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { x, w } => {
                let k = self.dims(*w)[0];
                let n = self.dims(*w)[1];
                let rows = self.nodes[*x].value.len() / k.max(1);
                if let Some(dx) = self.acc(grads, *x) {
                    gemm(
                        MatView::new(g, rows, n, false),
                        MatView::new(self.data(*w), k, n, true),
                        dx,
                        true,
                    );
                }
                if let Some(dw) = self.acc(grads, *w) {
                    gemm(
                        MatView::new(self.data(*x), rows, k, true),
                        MatView::new(g, rows, n, false),
                        dw,
                        true,
                    );
                }
            }
            Op::AddBias { x, b } => {
                if let Some(dx) = self.acc(grads, *x) {
                    add_into(dx, g);
                }
                let c = self.dims(*b)[0];
                if let Some(db) = self.acc(grads, *b) {
                    for row in g.chunks(c) {
                        add_into(db, row);
                    }
                }
            }
            Op::Bmm {
                a,
                b,
                ta,
                tb,
                batch,
                a_dims,
                b_dims,
            } => {
                let (m, _) = if *ta { (a_dims.1, a_dims.0) } else { *a_dims };
                let (_, n) = if *tb { (b_dims.1, b_dims.0) } else { *b_dims };
                let asz = a_dims.0 * a_dims.1;
                let bsz = b_dims.0 * b_dims.1;
                let gsz = m * n;
                if let Some(da) = self.acc(grads, *a) {
                    let bd = self.data(*b);
                    for i in 0..*batch {
                        let gv = MatView::new(&g[i * gsz..(i + 1) * gsz], m, n, false);
                        let bv = &bd[i * bsz..(i + 1) * bsz];
                        let out = &mut da[i * asz..(i + 1) * asz];
                        if *ta {
                            // dAᵀ = op(B) · Gᵀ
                            gemm(
                                MatView::new(bv, b_dims.0, b_dims.1, *tb),
                                MatView::new(&g[i * gsz..(i + 1) * gsz], m, n, true),
                                out,
                                true,
                            );
                        } else {
                            // dA = G · op(B)ᵀ
                            gemm(gv, MatView::new(bv, b_dims.0, b_dims.1, !*tb), out, true);
                        }
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    let ad = self.data(*a);
                    for i in 0..*batch {
                        let av = &ad[i * asz..(i + 1) * asz];
                        let gs = &g[i * gsz..(i + 1) * gsz];
                        let out = &mut db[i * bsz..(i + 1) * bsz];
                        if *tb {
                            // dBᵀ = Gᵀ · op(A)
                            gemm(
                                MatView::new(gs, m, n, true),
                                MatView::new(av, a_dims.0, a_dims.1, *ta),
                                out,
                                true,
                            );
                        } else {
                            // dB = op(A)ᵀ · G
                            gemm(
                                MatView::new(av, a_dims.0, a_dims.1, !*ta),
                                MatView::new(gs, m, n, false),
                                out,
                                true,
                            );
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = self.acc(grads, *b) {
                    add_into(db, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    add_into(da, g);
                }
                if let Some(db) = self.acc(grads, *b) {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    for ((d, &gv), &bv) in da.iter_mut().zip(g).zip(self.data(*b)) {
                        *d += gv * bv;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for ((d, &gv), &av) in db.iter_mut().zip(g).zip(self.data(*a)) {
                        *d += gv * av;
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv * *c;
                    }
                }
            }
            Op::AddScalar { x } | Op::Reshape { x } => {
                if let Some(dx) = self.acc(grads, *x) {
                    add_into(dx, g);
                }
            }
            Op::Unary { x, kind } => {
                let xd = self.data(*x);
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..dx.len() {
                        let local = match kind {
                            Unary::Relu => {
                                if xd[i] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Sigmoid => y[i] * (T::one() - y[i]),
                            Unary::Tanh => T::one() - y[i] * y[i],
                            Unary::Exp => y[i],
                            Unary::Square => T::lit(2.0) * xd[i],
                            Unary::Neg => -T::one(),
                        };
                        dx[i] += g[i] * local;
                    }
                }
            }
            Op::ScaleRows { x, s } => {
                let c = *self.dims(*x).last().unwrap();
                let c = c.max(1);
                if let Some(dx) = self.acc(grads, *x) {
                    let sd = self.data(*s);
                    for ((drow, grow), &sc) in dx.chunks_mut(c).zip(g.chunks(c)).zip(sd) {
                        for (d, &gv) in drow.iter_mut().zip(grow) {
                            *d += gv * sc;
                        }
                    }
                }
                if let Some(ds) = self.acc(grads, *s) {
                    let xd = self.data(*x);
                    for (r, d) in ds.iter_mut().enumerate() {
                        let mut acc = T::zero();
                        for j in 0..c {
                            acc += g[r * c + j] * xd[r * c + j];
                        }
                        *d += acc;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                xhat,
                rstd,
            } => {
                let c = self.dims(*gain)[0];
                let gv = self.data(*gain);
                if let Some(dg) = self.acc(grads, *gain) {
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(doff) = self.acc(grads, *offset) {
                    for grow in g.chunks(c) {
                        add_into(doff, grow);
                    }
                }
                if let Some(dx) = self.acc(grads, *x) {
                    let cn = T::lit(c as f64);
                    let mut dh = vec![T::zero(); c];
                    for (r, rs) in rstd.iter().enumerate() {
                        let grow = &g[r * c..(r + 1) * c];
                        let hrow = &xhat[r * c..(r + 1) * c];
                        let mut mean_dh = T::zero();
                        let mut mean_dhh = T::zero();
                        for j in 0..c {
                            dh[j] = grow[j] * gv[j];
                            mean_dh += dh[j];
                            mean_dhh += dh[j] * hrow[j];
                        }
                        mean_dh /= cn;
                        mean_dhh /= cn;
                        for j in 0..c {
                            dx[r * c + j] += *rs * (dh[j] - mean_dh - hrow[j] * mean_dhh);
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let (outer, len, inner) = split_axis(self.dims(*x), *axis);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let mut dot = T::zero();
                            for j in 0..len {
                                dot += g[base + j * inner] * y[base + j * inner];
                            }
                            for j in 0..len {
                                let k = base + j * inner;
                                dx[k] += y[k] * (g[k] - dot);
                            }
                        }
                    }
                }
            }
            Op::Normalize { x, axis, sums } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let (outer, len, inner) = split_axis(self.dims(*x), *axis);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let s = sums[o * inner + i];
                            // y_j = x_j / s, so dL/dx_j = (g_j - Σ_k g_k y_k) / s.
                            let mut dot = T::zero();
                            for j in 0..len {
                                dot += g[base + j * inner] * y[base + j * inner];
                            }
                            for j in 0..len {
                                let k = base + j * inner;
                                dx[k] += (g[k] - dot) / s;
                            }
                        }
                    }
                }
            }
            Op::LogSumExp { x, axis, probs } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let (outer, len, inner) = split_axis(self.dims(*x), *axis);
                    for o in 0..outer {
                        for i in 0..inner {
                            let gv = g[o * inner + i];
                            let base = o * len * inner + i;
                            for j in 0..len {
                                let k = base + j * inner;
                                dx[k] += gv * probs[k];
                            }
                        }
                    }
                }
            }
            Op::SumAxis { x, axis } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let (outer, len, inner) = split_axis(self.dims(*x), *axis);
                    for o in 0..outer {
                        let gs = &g[o * inner..(o + 1) * inner];
                        for j in 0..len {
                            add_into(&mut dx[(o * len + j) * inner..(o * len + j + 1) * inner], gs);
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::MeanAll { x } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let v = g[0] / T::lit(dx.len().max(1) as f64);
                    dx.iter_mut().for_each(|d| *d += v);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &inp in inputs {
                    let len = self.dims(inp)[*axis];
                    if let Some(dx) = self.acc(grads, inp) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            add_into(&mut dx[o * len * inner..(o + 1) * len * inner], src);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let (outer, len, inner) = split_axis(self.dims(*x), *axis);
                    let w = node.value.shape()[*axis];
                    for o in 0..outer {
                        add_into(
                            &mut dx[(o * len + start) * inner..(o * len + start + w) * inner],
                            &g[o * w * inner..(o + 1) * w * inner],
                        );
                    }
                }
            }
            Op::Select { x, axis, indices } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let (outer, len, inner) = split_axis(self.dims(*x), *axis);
                    let w = indices.len();
                    for o in 0..outer {
                        for (jj, &j) in indices.iter().enumerate() {
                            add_into(
                                &mut dx[(o * len + j) * inner..(o * len + j + 1) * inner],
                                &g[(o * w + jj) * inner..(o * w + jj + 1) * inner],
                            );
                        }
                    }
                }
            }
            Op::Repeat { x, axis, n } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let xs = self.dims(*x);
                    let outer: usize = xs[..*axis].iter().product();
                    let inner: usize = xs[*axis..].iter().product();
                    for o in 0..outer {
                        for r in 0..*n {
                            add_into(
                                &mut dx[o * inner..(o + 1) * inner],
                                &g[(o * n + r) * inner..(o * n + r + 1) * inner],
                            );
                        }
                    }
                }
            }
            Op::Permute { x, map } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (&src, &gv) in map.iter().zip(g) {
                        dx[src] += gv;
                    }
                }
            }
            Op::GatherFlat { x, indices } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (&i, &gv) in indices.iter().zip(g) {
                        dx[i] += gv;
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
