//! Parameterized building blocks. Each block holds parameter handles only;
//! values live in a `ParamStore` of either precision.

use tensorlab::{kaiming_uniform, ParamId, ParamStore, Real, Tape, Var};

use crate::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

/// Registers parameters under a name prefix with deterministic per-parameter
/// seeds.
pub(crate) struct Builder<'a, F: Real> {
    pub store: &'a mut ParamStore<F>,
    seed: u64,
    prefix: Vec<String>,
}

impl<'a, F: Real> Builder<'a, F> {
    pub fn new(store: &'a mut ParamStore<F>, seed: u64) -> Self {
        Builder {
            store,
            seed,
            prefix: Vec::new(),
        }
    }

    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    fn param_seed(&self) -> u64 {
        let i = self.store.len() as u64;
        self.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(i.wrapping_mul(0xd1b5_4a32_d192_ed03))
    }

    pub fn kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let len = shape.iter().product();
        let value = kaiming_uniform(len, fan_in, self.param_seed())?;
        Ok(self.store.add(self.full_name(name), shape, value)?)
    }

    pub fn filled(&mut self, name: &str, shape: &[usize], v: f64) -> Result<ParamId> {
        let len = shape.iter().product();
        Ok(self.store.add(self.full_name(name), shape, vec![F::lit(v); len])?)
    }

    pub fn linear(&mut self, name: &str, inp: usize, out: usize, bias: bool) -> Result<Linear> {
        self.scoped(name, |b| {
            Ok(Linear {
                w: b.kaiming("weight", &[inp, out], inp)?,
                b: if bias { Some(b.filled("bias", &[out], 0.0)?) } else { None },
            })
        })
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> Result<LayerNorm> {
        self.scoped(name, |b| {
            Ok(LayerNorm {
                gain: b.filled("gain", &[d], 1.0)?,
                bias: b.filled("bias", &[d], 0.0)?,
            })
        })
    }

    pub fn ffn(&mut self, name: &str, d: usize, hidden: usize) -> Result<FeedForward> {
        self.scoped(name, |b| {
            Ok(FeedForward {
                l1: b.linear("l1", d, hidden, true)?,
                l2: b.linear("l2", hidden, d, true)?,
            })
        })
    }

    pub fn attention(&mut self, name: &str, d: usize, heads: usize) -> Result<MultiHeadAttention> {
        self.scoped(name, |b| {
            Ok(MultiHeadAttention {
                q: b.linear("q", d, d, true)?,
                // Softmax ignores a per-row constant, so a key bias could never
                // receive gradient.
                k: b.linear("k", d, d, false)?,
                v: b.linear("v", d, d, true)?,
                o: b.linear("o", d, d, true)?,
                heads,
            })
        })
    }

    pub fn pooling(&mut self, name: &str, d: usize, heads: usize) -> Result<MultiHeadPooling> {
        self.scoped(name, |b| {
            Ok(MultiHeadPooling {
                score: b.linear("score", d, heads, false)?,
                value: b.linear("value", d, d, true)?,
                out: b.linear("out", d, d, true)?,
                heads,
            })
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn forward<F: Real>(&self, t: &mut Tape<F>, s: &ParamStore<F>, x: Var) -> Result<Var> {
        let w = t.param(s, self.w);
        let y = t.matmul(x, w, false)?;
        match self.b {
            Some(b) => {
                let b = t.param(s, b);
                Ok(t.add_bias(y, b)?)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn forward<F: Real>(&self, t: &mut Tape<F>, s: &ParamStore<F>, x: Var) -> Result<Var> {
        let (g, b) = (t.param(s, self.gain), t.param(s, self.bias));
        Ok(t.layer_norm(x, g, b, LN_EPS)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn forward<F: Real>(&self, t: &mut Tape<F>, s: &ParamStore<F>, x: Var, dropout: f64) -> Result<Var> {
        let h = self.l1.forward(t, s, x)?;
        let h = t.relu(h);
        let h = t.dropout(h, dropout)?;
        self.l2.forward(t, s, h)
    }
}

/// `[B, T, H·dh] → [B·H, T, dh]`.
fn split_heads<F: Real>(t: &mut Tape<F>, x: Var, b: usize, len: usize, heads: usize) -> Result<Var> {
    let d = *t.shape(x).last().unwrap();
    let dh = d / heads;
    let x = t.reshape(x, &[b, len, heads, dh])?;
    let x = t.permute(x, &[0, 2, 1, 3])?;
    Ok(t.reshape(x, &[b * heads, len, dh])?)
}

/// `[B·H, T, dh] → [B, T, H·dh]`.
fn merge_heads<F: Real>(t: &mut Tape<F>, x: Var, b: usize, len: usize, heads: usize) -> Result<Var> {
    let dh = *t.shape(x).last().unwrap();
    let x = t.reshape(x, &[b, heads, len, dh])?;
    let x = t.permute(x, &[0, 2, 1, 3])?;
    Ok(t.reshape(x, &[b, len, heads * dh])?)
}

#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

pub struct Attended {
    pub out: Var,
    /// `[B·H, Tq, Tk]` attention distributions.
    pub weights: Var,
}

impl MultiHeadAttention {
    /// Scaled dot-product attention of `query [B, Tq, d]` over
    /// `memory [B, Tk, d]`. `keep[b·Tq·Tk + i·Tk + j]` says whether query
    /// position `i` may attend to key `j`.
    pub fn forward<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        query: Var,
        memory: Var,
        keep: &[bool],
    ) -> Result<Attended> {
        let (b, tq, d) = dims3(t, query);
        let tk = t.shape(memory)[1];
        let h = self.heads;
        let dh = d / h;

        let q = self.q.forward(t, s, query)?;
        let q = t.scale(q, F::lit(1.0 / (dh as f64).sqrt()));
        let q = split_heads(t, q, b, tq, h)?;
        let k = self.k.forward(t, s, memory)?;
        let k = split_heads(t, k, b, tk, h)?;
        let v = self.v.forward(t, s, memory)?;
        let v = split_heads(t, v, b, tk, h)?;

        let scores = t.bmm(q, k, true)?;
        let mut head_keep = Vec::with_capacity(b * h * tq * tk);
        for bi in 0..b {
            let block = &keep[bi * tq * tk..(bi + 1) * tq * tk];
            for _ in 0..h {
                head_keep.extend_from_slice(block);
            }
        }
        let weights = t.softmax(scores, Some(&head_keep))?;
        let ctx = t.bmm(weights, v, false)?;
        let ctx = merge_heads(t, ctx, b, tq, h)?;
        let out = self.o.forward(t, s, ctx)?;
        Ok(Attended { out, weights })
    }

    /// Attention in which every key carries the same value vector
    /// `value [B, d]`. The weights of any distribution sum to one, so each
    /// of the `len` query positions receives the projected value itself and
    /// the query and key projections drop out.
    pub fn forward_shared_value<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        value: Var,
        len: usize,
    ) -> Result<Var> {
        let (b, d) = (t.shape(value)[0], t.shape(value)[1]);
        let v = self.v.forward(t, s, value)?;
        let out = self.o.forward(t, s, v)?;
        let out = t.reshape(out, &[b, 1, d])?;
        Ok(t.repeat(out, 1, len)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MultiHeadPooling {
    pub score: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadPooling {
    /// Pools `x [B, T, d]` to `[B, d]`: per head, a softmax over per-token
    /// scores weights the per-token value projections. Returns the pooled
    /// vectors and the `[B·H, 1, T]` weights. Every row needs a kept token.
    pub fn forward<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        x: Var,
        token_keep: &[bool],
    ) -> Result<(Var, Var)> {
        let len = t.shape(x)[1];
        if let Some(row) = token_keep.chunks(len.max(1)).position(|r| !r.contains(&true)) {
            return Err(Error::invalid(format!("pooling row {row} has no unmasked tokens")));
        }
        self.forward_padded(t, s, x, token_keep)
    }

    /// [`MultiHeadPooling::forward`] that lets fully masked rows (padding
    /// documents) through; their weights are zero.
    pub fn forward_padded<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        x: Var,
        token_keep: &[bool],
    ) -> Result<(Var, Var)> {
        let (b, len, d) = dims3(t, x);
        let h = self.heads;
        let scores = self.score.forward(t, s, x)?;
        let scores = t.permute(scores, &[0, 2, 1])?;
        let scores = t.reshape(scores, &[b * h, 1, len])?;
        let mut keep = Vec::with_capacity(b * h * len);
        for bi in 0..b {
            for _ in 0..h {
                keep.extend_from_slice(&token_keep[bi * len..(bi + 1) * len]);
            }
        }
        let weights = t.softmax(scores, Some(&keep))?;
        let values = self.value.forward(t, s, x)?;
        let values = split_heads(t, values, b, len, h)?;
        let pooled = t.bmm(weights, values, false)?;
        let pooled = t.reshape(pooled, &[b, d])?;
        Ok((self.out.forward(t, s, pooled)?, weights))
    }
}

pub(crate) fn dims3<F: Real>(t: &Tape<F>, x: Var) -> (usize, usize, usize) {
    let s = t.shape(x);
    (s[0], s[1], s[2])
}
