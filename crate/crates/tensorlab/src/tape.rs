//! The autodiff tape and its primitive operations.
//!
//! Every primitive validates its operand shapes, computes its forward value
//! eagerly and records what [`Tape::backward`] needs. Shapes are row-major;
//! "rows" always means all leading axes flattened against the last one.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gemm::gemm;
use crate::params::{ParamId, ParamStore};
use crate::{Real, Result, TensorError};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Tanh(Var),
    MatMul { a: Var, w: Var, trans_w: bool },
    Bmm { a: Var, b: Var, trans_b: bool },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Repeat { x: Var, axis: usize },
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<F>, rstd: Vec<F> },
    Dropout { x: Var, mask: Vec<F> },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<F>, norm: F },
    Sum(Var),
    Sinusoid { r: Var, dim: usize },
}

#[derive(Debug)]
struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    op: Op<F>,
}

/// A single forward computation recorded for reverse-mode differentiation.
///
/// A tape is either in training mode (dropout active, seeded) or in
/// evaluation mode (dropout is the identity).
#[derive(Debug)]
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    param_vars: HashMap<ParamId, Var>,
    train: bool,
    rng: ChaCha8Rng,
    kinks: u64,
}

const KINK_BASIS: u64 = 0xcbf2_9ce4_8422_2325;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn last_dim(op: &'static str, shape: &[usize]) -> Result<usize> {
    match shape.last() {
        Some(&d) if d > 0 => Ok(d),
        _ => Err(TensorError::shape(op, format!("needs a non-empty last axis, got {shape:?}"))),
    }
}

/// Iterates a row-major tensor of `shape` in the order given by `axes`,
/// returning the permuted copy.
fn permute_data<F: Copy>(src: &[F], shape: &[usize], axes: &[usize]) -> Vec<F> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for d in (0..rank.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = src.len();
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    // Copy contiguous runs when the innermost axis stays in place.
    let (run, outer_rank) = if axes[rank - 1] == rank - 1 {
        (shape[rank - 1], rank - 1)
    } else {
        (1, rank)
    };
    let mut idx = vec![0usize; outer_rank];
    let mut offset = 0usize;
    for _ in 0..total / run {
        out.extend_from_slice(&src[offset..offset + run]);
        let mut d = outer_rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

impl<F: Real> Tape<F> {
    /// Evaluation-mode tape: dropout disabled.
    pub fn eval() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            kinks: KINK_BASIS,
        }
    }

    /// Training-mode tape whose dropout masks are drawn from `seed`.
    pub fn train(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            kinks: KINK_BASIS,
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    /// Parameters that have been placed on this tape.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.param_vars.iter().map(|(&p, &v)| (p, v))
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: &[usize], value: Vec<F>) -> Result<Var> {
        if numel(shape) != value.len() {
            return Err(TensorError::shape(
                "constant",
                format!("shape {shape:?} vs {} values", value.len()),
            ));
        }
        Ok(self.push(shape.to_vec(), value, Op::Leaf))
    }

    /// Places a parameter on the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.shape.clone(), p.value.clone(), Op::Param);
        self.param_vars.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), value, Op::Add(a, b)))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = last_dim("add_bias", self.shape(x))?;
        if self.shape(bias) != [d] {
            return Err(TensorError::shape(
                "add_bias",
                format!("{:?} + {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias);
        let value = self
            .value(x)
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        Ok(self.push(self.shape(x).to_vec(), value, Op::AddBias(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let value = self.value(x).iter().map(|&v| v * c).collect();
        self.push(self.shape(x).to_vec(), value, Op::Scale(x, c))
    }

    /// Hash of the sign pattern of every relu input seen so far. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        self.kinks
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut h = self.kinks;
        for &v in self.value(x) {
            h = (h ^ u64::from(v > F::zero())).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(5);
        }
        self.kinks = h;
        let value = self.value(x).iter().map(|&v| v.max(F::zero())).collect();
        self.push(self.shape(x).to_vec(), value, Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).iter().map(|&v| v.tanh()).collect();
        self.push(self.shape(x).to_vec(), value, Op::Tanh(x))
    }

    /// `[.., K] × [K, N] → [.., N]`, or `[.., K] × [N, K]ᵀ` when `trans_w`.
    pub fn matmul(&mut self, a: Var, w: Var, trans_w: bool) -> Result<Var> {
        let ashape = self.shape(a).to_vec();
        let wshape = self.shape(w);
        let k = last_dim("matmul", &ashape)?;
        let (wk, n) = match (wshape, trans_w) {
            ([r, c], false) => (*r, *c),
            ([r, c], true) => (*c, *r),
            _ => return Err(TensorError::shape("matmul", format!("weight must be 2-d, got {wshape:?}"))),
        };
        if wk != k {
            return Err(TensorError::shape(
                "matmul",
                format!("{ashape:?} × {wshape:?} (transposed: {trans_w})"),
            ));
        }
        let rows = numel(&ashape) / k;
        let mut out = vec![F::zero(); rows * n];
        gemm(rows, k, n, self.value(a), false, self.value(w), trans_w, &mut out, false);
        let mut shape = ashape;
        *shape.last_mut().unwrap() = n;
        Ok(self.push(shape, out, Op::MatMul { a, w, trans_w }))
    }

    /// Batched product `[B, M, K] × [B, K, N] → [B, M, N]`; with `trans_b`
    /// the right operand is `[B, N, K]`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ash, bsh) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || TensorError::shape("bmm", format!("{ash:?} × {bsh:?} (transposed: {trans_b})"));
        let ([ba, m, k], [bb, r, c]) = (ash.as_slice(), bsh.as_slice()) else {
            return Err(err());
        };
        let (kb, n) = if trans_b { (*c, *r) } else { (*r, *c) };
        if ba != bb || *k != kb {
            return Err(err());
        }
        let (batch, m, k) = (*ba, *m, *k);
        let mut out = vec![F::zero(); batch * m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                false,
                &bv[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Ok(self.push(vec![batch, m, n], out, Op::Bmm { a, b, trans_b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(TensorError::shape(
                "reshape",
                format!("{:?} → {shape:?}", self.shape(x)),
            ));
        }
        let value = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x)))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes.iter().all(|&a| a < shape.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(TensorError::shape("permute", format!("{shape:?} by {axes:?}")));
        }
        let value = permute_data(self.value(x), &shape, axes);
        let out_shape = axes.iter().map(|&a| shape[a]).collect();
        Ok(self.push(out_shape, value, Op::Permute { x, axes: axes.to_vec() }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::shape("concat", format!("{base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let block = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(shape, out, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Selects `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::shape(
                "slice",
                format!("{shape:?} axis {axis} range {start}..{}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(out_shape, out, Op::Slice { x, axis, start }))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, x: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let dim = self.shape(x).get(axis).copied();
        if dim != Some(sizes.iter().sum()) {
            return Err(TensorError::shape(
                "split",
                format!("{:?} axis {axis} into {sizes:?}", self.shape(x)),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice(x, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Broadcasts a size-1 `axis` to size `n`.
    pub fn repeat(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.get(axis) != Some(&1) {
            return Err(TensorError::shape("repeat", format!("axis {axis} of {shape:?} must be 1")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x);
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = n;
        Ok(self.push(out_shape, out, Op::Repeat { x, axis }))
    }

    /// Softmax over the last axis. `keep`, when given, has one flag per
    /// element; dropped positions receive exactly zero probability, and a row
    /// with nothing kept is all zeros.
    pub fn softmax(&mut self, x: Var, keep: Option<&[bool]>) -> Result<Var> {
        let d = last_dim("softmax", self.shape(x))?;
        let xv = self.value(x);
        if let Some(k) = keep {
            if k.len() != xv.len() {
                return Err(TensorError::shape(
                    "softmax",
                    format!("mask of {} for {:?}", k.len(), self.shape(x)),
                ));
            }
        }
        let mut out = vec![F::zero(); xv.len()];
        for (r, (row, orow)) in xv.chunks(d).zip(out.chunks_mut(d)).enumerate() {
            let kept = |j: usize| keep.map_or(true, |k| k[r * d + j]);
            let mut max = F::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if kept(j) && v > max {
                    max = v;
                }
            }
            if max == F::neg_infinity() {
                continue;
            }
            let mut sum = F::zero();
            for (j, (&v, o)) in row.iter().zip(orow.iter_mut()).enumerate() {
                if kept(j) {
                    *o = (v - max).exp();
                    sum += *o;
                }
            }
            orow.iter_mut().for_each(|o| *o /= sum);
        }
        Ok(self.push(self.shape(x).to_vec(), out, Op::Softmax(x)))
    }

    /// Normalizes over the last axis with population variance, then applies
    /// a learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = last_dim("layer_norm", self.shape(x))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(TensorError::shape(
                "layer_norm",
                format!("{:?} with gain {:?} bias {:?}", self.shape(x), self.shape(gain), self.shape(bias)),
            ));
        }
        let eps = F::lit(eps);
        let n = F::lit(d as f64);
        let (g, b) = (self.value(gain), self.value(bias));
        let xv = self.value(x);
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.len() / d);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(d) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let rs = F::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm { x, gain, bias, xhat, rstd },
        ))
    }

    /// Inverted dropout: active only on training tapes with `rate > 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !self.train || rate == 0.0 {
            return Ok(x);
        }
        let scale = F::lit(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask: Vec<F> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < rate { F::zero() } else { scale })
            .collect();
        let value = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.push(self.shape(x).to_vec(), value, Op::Dropout { x, mask }))
    }

    /// Gathers rows of a `[V, D]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let &[v, d] = self.shape(table) else {
            return Err(TensorError::shape("embedding", format!("table {:?}", self.shape(table))));
        };
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::invalid("embedding", format!("id {bad} out of range for {v} rows")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(vec![ids.len(), d], out, Op::Embedding { table, ids: ids.to_vec() }))
    }

    /// Summed token cross-entropy of `[N, V]` logits divided by `normalizer`
    /// (default: the number of non-ignored targets). `None` targets are
    /// ignored.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        normalizer: Option<F>,
    ) -> Result<Var> {
        let v = last_dim("cross_entropy", self.shape(logits))?;
        let lv = self.value(logits);
        if lv.len() / v != targets.len() {
            return Err(TensorError::shape(
                "cross_entropy",
                format!("{:?} logits for {} targets", self.shape(logits), targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(TensorError::invalid("cross_entropy", format!("target {bad} ≥ {v} classes")));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        let norm = normalizer.unwrap_or_else(|| F::lit(count.max(1) as f64));
        let mut probs = vec![F::zero(); lv.len()];
        let mut total = F::zero();
        for ((row, prow), t) in lv.chunks(v).zip(probs.chunks_mut(v)).zip(targets) {
            let Some(t) = *t else { continue };
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                sum += *p;
            }
            prow.iter_mut().for_each(|p| *p /= sum);
            total += max + sum.ln() - row[t];
        }
        Ok(self.push(
            vec![1],
            vec![total / norm],
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs, norm },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    /// Sinusoidal encoding of arbitrary real positions: each of the `n`
    /// entries of `r` becomes a `dim`-vector with
    /// `[2j] = sin(r / 10000^(2j/dim))` and `[2j+1] = cos(·)`.
    pub fn sinusoid(&mut self, r: Var, dim: usize) -> Result<Var> {
        if dim == 0 || dim % 2 != 0 {
            return Err(TensorError::invalid("sinusoid", format!("dimension {dim} must be even and positive")));
        }
        let freqs = frequencies::<F>(dim);
        let rv = self.value(r);
        let mut out = Vec::with_capacity(rv.len() * dim);
        for &x in rv {
            for &w in &freqs {
                out.push((x * w).sin());
                out.push((x * w).cos());
            }
        }
        Ok(self.push(vec![rv.len(), dim], out, Op::Sinusoid { r, dim }))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.backprop(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients {
            grads,
            params: self.param_vars.iter().map(|(&p, &v)| (p, v)).collect(),
        })
    }

    fn backprop(&self, i: usize, dy: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            let g = grads[v.0].get_or_insert_with(|| vec![F::zero(); self.nodes[v.0].value.len()]);
            f(g);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d));
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d));
                let d = self.nodes[b.0].value.len();
                acc(*b, &mut |g| {
                    for row in dy.chunks(d) {
                        g.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += dy[j] * bv[j];
                    }
                });
                acc(*b, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += dy[j] * av[j];
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d * *c)),
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |g| {
                    for j in 0..g.len() {
                        if xv[j] > F::zero() {
                            g[j] += dy[j];
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(*x, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += dy[j] * (F::one() - y[j] * y[j]);
                    }
                });
            }
            Op::MatMul { a, w, trans_w } => {
                let (av, wv) = (self.value(*a), self.value(*w));
                let n = *node.shape.last().unwrap();
                let k = *self.shape(*a).last().unwrap();
                let rows = av.len() / k;
                // y = a·W (W: k×n) or a·Wᵀ (W: n×k)
                acc(*a, &mut |g| gemm(rows, n, k, dy, false, wv, !*trans_w, g, true));
                acc(*w, &mut |g| {
                    if *trans_w {
                        gemm(n, rows, k, dy, true, av, false, g, true)
                    } else {
                        gemm(k, rows, n, av, true, dy, false, g, true)
                    }
                });
            }
            Op::Bmm { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let &[batch, m, n] = node.shape.as_slice() else { unreachable!() };
                let k = self.shape(*a)[2];
                acc(*a, &mut |g| {
                    for t in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &dy[t * m * n..],
                            false,
                            &bv[t * k * n..],
                            !*trans_b,
                            &mut g[t * m * k..],
                            true,
                        );
                    }
                });
                acc(*b, &mut |g| {
                    for t in 0..batch {
                        if *trans_b {
                            gemm(n, m, k, &dy[t * m * n..], true, &av[t * m * k..], false, &mut g[t * n * k..], true);
                        } else {
                            gemm(k, m, n, &av[t * m * k..], true, &dy[t * m * n..], false, &mut g[t * k * n..], true);
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d)),
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let back = permute_data(dy, &node.shape, &inverse);
                acc(*x, &mut |g| g.iter_mut().zip(&back).for_each(|(g, &d)| *g += d));
            }
            Op::Concat { parts, axis } => {
                let outer: usize = node.shape[..*axis].iter().product();
                let inner: usize = node.shape[*axis + 1..].iter().product();
                let row = node.shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let block = self.shape(p)[*axis] * inner;
                    acc(p, &mut |g| {
                        for o in 0..outer {
                            let src = &dy[o * row + offset..o * row + offset + block];
                            g[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(g, &d)| *g += d);
                        }
                    });
                    offset += block;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[*axis + 1..].iter().product();
                let len = node.shape[*axis];
                let full = xs[*axis];
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        g[base..base + len * inner]
                            .iter_mut()
                            .zip(&dy[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(g, &d)| *g += d);
                    }
                });
            }
            Op::Repeat { x, axis } => {
                let n = node.shape[*axis];
                let inner: usize = node.shape[*axis + 1..].iter().product();
                acc(*x, &mut |g| {
                    for (o, gblock) in g.chunks_mut(inner.max(1)).enumerate() {
                        for r in 0..n {
                            let src = &dy[(o * n + r) * inner..(o * n + r + 1) * inner];
                            gblock.iter_mut().zip(src).for_each(|(g, &d)| *g += d);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let d = *node.shape.last().unwrap();
                let y = &node.value;
                acc(*x, &mut |g| {
                    for ((grow, yrow), drow) in g.chunks_mut(d).zip(y.chunks(d)).zip(dy.chunks(d)) {
                        let dot: F = yrow.iter().zip(drow).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            grow[j] += yrow[j] * (drow[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = *node.shape.last().unwrap();
                let gv = self.value(*gain);
                let n = F::lit(d as f64);
                acc(*x, &mut |g| {
                    for (r, grow) in g.chunks_mut(d).enumerate() {
                        let drow = &dy[r * d..(r + 1) * d];
                        let hrow = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = F::zero();
                        let mut mean_dh_h = F::zero();
                        for j in 0..d {
                            let dh = drow[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh /= n;
                        mean_dh_h /= n;
                        for j in 0..d {
                            let dh = drow[j] * gv[j];
                            grow[j] += rstd[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |g| {
                    for (drow, hrow) in dy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] += drow[j] * hrow[j];
                        }
                    }
                });
                acc(*bias, &mut |g| {
                    for drow in dy.chunks(d) {
                        g.iter_mut().zip(drow).for_each(|(g, &d)| *g += d);
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |g| {
                for j in 0..g.len() {
                    g[j] += dy[j] * mask[j];
                }
            }),
            Op::Embedding { table, ids } => {
                let d = node.shape[1];
                acc(*table, &mut |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        g[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&dy[r * d..(r + 1) * d])
                            .for_each(|(g, &d)| *g += d);
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs, norm } => {
                let v = *self.shape(*logits).last().unwrap();
                let scale = dy[0] / *norm;
                acc(*logits, &mut |g| {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for j in 0..v {
                            g[r * v + j] += probs[r * v + j] * scale;
                        }
                        g[r * v + t] -= scale;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|g| *g += dy[0])),
            Op::Sinusoid { r, dim } => {
                let freqs = frequencies::<F>(*dim);
                let rv = self.value(*r);
                acc(*r, &mut |g| {
                    for (i, gi) in g.iter_mut().enumerate() {
                        let row = &dy[i * dim..(i + 1) * dim];
                        for (j, &w) in freqs.iter().enumerate() {
                            let a = rv[i] * w;
                            *gi += w * (a.cos() * row[2 * j] - a.sin() * row[2 * j + 1]);
                        }
                    }
                });
            }
        }
    }
}

fn frequencies<F: Real>(dim: usize) -> Vec<F> {
    (0..dim / 2)
        .map(|j| F::lit(10000f64.powf(-(2.0 * j as f64) / dim as f64)))
        .collect()
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    params: Vec<(ParamId, Var)>,
}

impl<F: Real> Gradients<F> {
    /// Gradient with respect to any node, `None` if the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[F]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<F>) {
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                store
                    .get_mut(id)
                    .grad
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, &b)| *a += b);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_of_equal_row_is_uniform() {
        let mut t = Tape::<f64>::eval();
        let x = t.constant(&[2, 4], vec![3.0; 8]).unwrap();
        let y = t.softmax(x, None).unwrap();
        assert!(t.value(y).iter().all(|&p| close(p, 0.25, 1e-15)));
    }

    #[test]
    fn masked_softmax_gives_exact_zeros() {
        let mut t = Tape::<f64>::eval();
        let x = t.constant(&[2, 3], vec![1.0, 5.0, 2.0, 0.3, 0.1, 0.2]).unwrap();
        let keep = [true, false, true, false, false, false];
        let y = t.softmax(x, Some(&keep)).unwrap();
        let v = t.value(y);
        assert_eq!(v[1], 0.0);
        assert!(close(v[0] + v[2], 1.0, 1e-15));
        assert!(v[3..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let mut t = Tape::<f64>::eval();
        let x = t.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let g = t.constant(&[3], vec![1.0; 3]).unwrap();
        let b = t.constant(&[3], vec![0.0; 3]).unwrap();
        let y = t.layer_norm(x, g, b, 1e-5).unwrap();
        let v = t.value(y);
        let mean = v.iter().sum::<f64>() / 3.0;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(close(mean, 0.0, 1e-12));
        assert!(close(var, 1.0, 1e-4));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut t = Tape::<f32>::eval();
        let a = t.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let w = t.constant(&[4, 2], vec![0.0; 8]).unwrap();
        let err = t.matmul(a, w, false).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let err = t.add(a, w).unwrap_err().to_string();
        assert!(err.starts_with("add"), "{err}");
    }

    #[test]
    fn permute_matches_index_arithmetic() {
        let shape = [2, 3, 4];
        let src: Vec<usize> = (0..24).collect();
        let out = permute_data(&src, &shape, &[2, 0, 1]);
        // out[k, i, j] = src[i, j, k]
        for k in 0..4 {
            for i in 0..2 {
                for j in 0..3 {
                    assert_eq!(out[(k * 2 + i) * 3 + j], src[(i * 3 + j) * 4 + k]);
                }
            }
        }
        let kept_last = permute_data(&src, &shape, &[1, 0, 2]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(kept_last[(j * 2 + i) * 4 + k], src[(i * 3 + j) * 4 + k]);
                }
            }
        }
    }

    #[test]
    fn dropout_is_identity_in_eval_and_scaled_in_train() {
        let mut t = Tape::<f64>::eval();
        let x = t.constant(&[100], vec![1.0; 100]).unwrap();
        assert_eq!(t.dropout(x, 0.5).unwrap(), x);

        let mut t = Tape::<f64>::train(7);
        let x = t.constant(&[1000], vec![1.0; 1000]).unwrap();
        let y = t.dropout(x, 0.25).unwrap();
        let v = t.value(y);
        assert!(v.iter().all(|&e| e == 0.0 || close(e, 4.0 / 3.0, 1e-12)));
        let kept = v.iter().filter(|&&e| e > 0.0).count();
        assert!((650..850).contains(&kept), "{kept}");
    }

    #[test]
    fn cross_entropy_ignores_padding() {
        let mut t = Tape::<f64>::eval();
        let logits = t.constant(&[2, 2], vec![0.0, 0.0, 9.0, -9.0]).unwrap();
        let loss = t.cross_entropy(logits, &[Some(0), None], None).unwrap();
        assert!(close(t.scalar(loss), 2f64.ln(), 1e-12));
    }
}
