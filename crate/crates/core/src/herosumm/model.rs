use tensorlab::{sinusoid, ParamId, ParamStore, Real, Tape, Var};

use super::batch::Batch;
use super::layers::{dims3, Builder, FeedForward, LayerNorm, Linear, MultiHeadAttention, MultiHeadPooling};
use super::ModelConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct LocalLayer {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

#[derive(Clone, Copy, Debug)]
pub struct QueryLayer {
    pub pool: MultiHeadPooling,
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

#[derive(Clone, Copy, Debug)]
pub struct GlobalLayer {
    pub pool: MultiHeadPooling,
    pub inter: MultiHeadAttention,
    pub combine: Linear,
    pub ln1: LayerNorm,
    pub ffn: FeedForward,
    pub ln2: LayerNorm,
}

#[derive(Clone, Copy, Debug)]
pub struct OrderingBlock {
    pub norm: LayerNorm,
    pub w1: Linear,
    pub w2: Linear,
    pub combine: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
    pub ln3: LayerNorm,
}

/// Parameter layout of the hierarchical summarizer. Holds handles only, so
/// the same layout drives `f32` training and `f64` gradient checks.
#[derive(Clone, Debug)]
pub struct HeroSumm {
    pub config: ModelConfig,
    pub token_embedding: ParamId,
    pub query_embedding: Option<ParamId>,
    pub output_projection: Option<ParamId>,
    pub local: Vec<LocalLayer>,
    pub query: Vec<QueryLayer>,
    pub global: Vec<GlobalLayer>,
    pub ordering: Option<OrderingBlock>,
    pub merge: Option<Linear>,
    pub decoder: Vec<DecoderLayer>,
}

/// Encoder output for one batch.
pub struct Encoded {
    /// `[E, N·T, d]` decoder memory.
    pub memory: Var,
    pub memory_keep: Vec<bool>,
    /// `[E·N, T, d]` output of the last local layer.
    pub local: Var,
    /// `[E·N, T, d]` output of the last global layer.
    pub global: Var,
    /// `[E·N, d]` pooled document vectors of the last global layer.
    pub doc_vectors: Var,
    /// `[E, N]` document importance, present with the ordering component.
    pub ordering: Option<Var>,
}

pub struct ForwardOutput {
    pub loss: Var,
    pub encoded: Encoded,
}

/// `[pᵉ_doc ; pᵉ_pos]` with `d/2` dimensions each; `doc = None` leaves the
/// document half zero.
pub fn positional_encoding(d_model: usize, doc: Option<usize>, pos: usize) -> Vec<f64> {
    let half = d_model / 2;
    let mut v = match doc {
        Some(i) => sinusoid(i as f64, half),
        None => vec![0.0; half],
    };
    v.extend(sinusoid(pos as f64, half));
    v
}

/// Sinusoidal encoding of real-valued document scores, `[r.len() · d]`.
pub fn ordering_encoding(r: &[f64], d_model: usize) -> Result<Vec<f64>> {
    let mut t = Tape::<f64>::eval();
    let rv = t.constant(&[r.len()], r.to_vec())?;
    let pe = t.sinusoid(rv, d_model)?;
    Ok(t.value(pe).to_vec())
}

fn causal_keep(e: usize, s: usize, keep: &[bool]) -> Vec<bool> {
    let mut out = Vec::with_capacity(e * s * s);
    for ei in 0..e {
        for i in 0..s {
            for j in 0..s {
                out.push(j <= i && keep[ei * s + j]);
            }
        }
    }
    out
}

/// Broadcasts per-row key flags `[B, Tk]` to `[B, Tq, Tk]`.
fn key_keep(b: usize, tq: usize, tk: usize, keys: &[bool]) -> Vec<bool> {
    let mut out = Vec::with_capacity(b * tq * tk);
    for bi in 0..b {
        for _ in 0..tq {
            out.extend_from_slice(&keys[bi * tk..(bi + 1) * tk]);
        }
    }
    out
}

impl LocalLayer {
    /// `x [B, T, d]` with `token_keep [B·T]`; returns the new states and the
    /// `[B·H, T, T]` attention weights.
    pub fn forward<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        x: Var,
        token_keep: &[bool],
        dropout: f64,
    ) -> Result<(Var, Var)> {
        let (b, len, _) = dims3(t, x);
        let keep = key_keep(b, len, len, token_keep);
        let att = self.attn.forward(t, s, x, x, &keep)?;
        let a = t.dropout(att.out, dropout)?;
        let r = t.add(x, a)?;
        let o = self.ln1.forward(t, s, r)?;
        let f = self.ffn.forward(t, s, o, dropout)?;
        let f = t.dropout(f, dropout)?;
        let r = t.add(o, f)?;
        Ok((self.ln2.forward(t, s, r)?, att.weights))
    }
}

impl QueryLayer {
    /// Conditions document states `x [E·N, T, d]` on the pooled query
    /// `hq [E, Tq, d]`.
    pub fn forward<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        x: Var,
        hq: Var,
        query_keep: &[bool],
        dropout: f64,
    ) -> Result<Var> {
        let o1 = self.attend(t, s, x, hq, query_keep, dropout)?;
        let f = self.ffn.forward(t, s, o1, dropout)?;
        let f = t.dropout(f, dropout)?;
        let r = t.add(o1, f)?;
        self.ln2.forward(t, s, r)
    }

    /// The attention half of [`QueryLayer::forward`]: `LN(x + attn)`.
    pub fn attend<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        x: Var,
        hq: Var,
        query_keep: &[bool],
        dropout: f64,
    ) -> Result<Var> {
        let (bn, len, d) = dims3(t, x);
        let e = t.shape(hq)[0];
        if e == 0 || bn % e != 0 {
            return Err(Error::invalid(format!("{bn} document rows for {e} queries")));
        }
        let (pooled, _) = self.pool.forward(t, s, hq, query_keep)?;
        let pooled = t.reshape(pooled, &[e, 1, d])?;
        let pooled = t.repeat(pooled, 1, bn / e)?;
        let pooled = t.reshape(pooled, &[bn, d])?;
        let a = self.attn.forward_shared_value(t, s, pooled, len)?;
        let a = t.dropout(a, dropout)?;
        let r = t.add(x, a)?;
        self.ln1.forward(t, s, r)
    }
}

impl GlobalLayer {
    /// `x [E·N, T, d]`. Returns new states, the `[E·N, d]` pooled document
    /// vectors and the `[E·H, N, N]` inter-document weights.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        x: Var,
        e: usize,
        token_keep: &[bool],
        doc_keep: &[bool],
        dropout: f64,
    ) -> Result<(Var, Var, Var)> {
        let (bn, len, d) = dims3(t, x);
        let n = bn / e;
        let (doc_vectors, _) = self.pool.forward_padded(t, s, x, token_keep)?;
        let pooled = t.reshape(doc_vectors, &[e, n, d])?;
        let keep = key_keep(e, n, n, doc_keep);
        let att = self.inter.forward(t, s, pooled, pooled, &keep)?;
        let ctx = t.reshape(att.out, &[bn, d])?;
        let per_token = t.reshape(ctx, &[bn, 1, d])?;
        let per_token = t.repeat(per_token, 1, len)?;
        let cat = t.concat(&[x, per_token], 2)?;
        let u = self.combine.forward(t, s, cat)?;
        let u = t.dropout(u, dropout)?;
        let r = t.add(x, u)?;
        let o = self.ln1.forward(t, s, r)?;
        let f = self.ffn.forward(t, s, o, dropout)?;
        let f = t.dropout(f, dropout)?;
        let r = t.add(o, f)?;
        Ok((self.ln2.forward(t, s, r)?, doc_vectors, att.weights))
    }
}

impl OrderingBlock {
    /// Importance `r [E, N]` of document vectors `[E·N, d]`: a single
    /// structured self-attention hop over the layer-normalized vectors,
    /// softmax over real documents.
    pub fn scores<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        doc_vectors: Var,
        e: usize,
        doc_keep: &[bool],
    ) -> Result<Var> {
        let bn = t.shape(doc_vectors)[0];
        let h = self.norm.forward(t, s, doc_vectors)?;
        let h = self.w1.forward(t, s, h)?;
        let h = t.tanh(h);
        let raw = self.w2.forward(t, s, h)?;
        let raw = t.reshape(raw, &[e, bn / e])?;
        Ok(t.softmax(raw, Some(doc_keep))?)
    }

    /// Appends the encoding of `r` to every token of its document and
    /// projects back to `d`.
    pub fn apply<F: Real>(&self, t: &mut Tape<F>, s: &ParamStore<F>, states: Var, r: Var) -> Result<Var> {
        let (bn, len, d) = dims3(t, states);
        let flat = t.reshape(r, &[bn])?;
        let pe = t.sinusoid(flat, d)?;
        let pe = t.reshape(pe, &[bn, 1, d])?;
        let pe = t.repeat(pe, 1, len)?;
        let cat = t.concat(&[states, pe], 2)?;
        self.combine.forward(t, s, cat)
    }
}

impl DecoderLayer {
    /// `x [E, S, d]` attends causally to itself and fully to
    /// `memory [E, M, d]`. Returns the states and the cross-attention
    /// weights.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        x: Var,
        self_keep: &[bool],
        memory: Var,
        cross_keep: &[bool],
        dropout: f64,
    ) -> Result<(Var, Var)> {
        let a = self.self_attn.forward(t, s, x, x, self_keep)?;
        let a = t.dropout(a.out, dropout)?;
        let r = t.add(x, a)?;
        let o1 = self.ln1.forward(t, s, r)?;
        let c = self.cross_attn.forward(t, s, o1, memory, cross_keep)?;
        let cross_weights = c.weights;
        let c = t.dropout(c.out, dropout)?;
        let r = t.add(o1, c)?;
        let o2 = self.ln2.forward(t, s, r)?;
        let f = self.ffn.forward(t, s, o2, dropout)?;
        let f = t.dropout(f, dropout)?;
        let r = t.add(o2, f)?;
        Ok((self.ln3.forward(t, s, r)?, cross_weights))
    }
}

impl HeroSumm {
    /// Lays out every parameter and initializes it: Kaiming-uniform
    /// weights, zero biases, unit layer-norm gains.
    pub fn build<F: Real>(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<F>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (d, h, v, ffn) = (config.d_model, config.heads, config.vocab_size, config.ffn_hidden);
        let mut b = Builder::new(&mut store, seed);

        let token_embedding = b.kaiming("embed.tokens", &[v, d], d)?;
        let query_embedding = if config.use_query_encoder {
            Some(b.kaiming("embed.query", &[v, d], d)?)
        } else {
            None
        };
        let output_projection = if config.tie_embeddings {
            None
        } else {
            Some(b.kaiming("output.weight", &[d, v], d)?)
        };

        let mut local = Vec::new();
        for i in 0..config.local_layers {
            local.push(b.scoped(&format!("local.{i}"), |b| {
                Ok(LocalLayer {
                    attn: b.attention("attn", d, h)?,
                    ln1: b.layer_norm("ln1", d)?,
                    ffn: b.ffn("ffn", d, ffn)?,
                    ln2: b.layer_norm("ln2", d)?,
                })
            })?);
        }
        let mut query = Vec::new();
        for i in 0..config.query_layers {
            query.push(b.scoped(&format!("query.{i}"), |b| {
                Ok(QueryLayer {
                    pool: b.pooling("pool", d, h)?,
                    attn: b.attention("attn", d, h)?,
                    ln1: b.layer_norm("ln1", d)?,
                    ffn: b.ffn("ffn", d, ffn)?,
                    ln2: b.layer_norm("ln2", d)?,
                })
            })?);
        }
        let mut global = Vec::new();
        for i in 0..config.global_layers {
            global.push(b.scoped(&format!("global.{i}"), |b| {
                Ok(GlobalLayer {
                    pool: b.pooling("pool", d, h)?,
                    inter: b.attention("inter", d, h)?,
                    combine: b.linear("combine", 2 * d, d, true)?,
                    ln1: b.layer_norm("ln1", d)?,
                    ffn: b.ffn("ffn", d, ffn)?,
                    ln2: b.layer_norm("ln2", d)?,
                })
            })?);
        }
        let ordering = if config.use_ordering {
            Some(b.scoped("ordering", |b| {
                Ok(OrderingBlock {
                    norm: b.layer_norm("norm", d)?,
                    w1: b.linear("w1", d, d, false)?,
                    w2: b.linear("w2", d, 1, false)?,
                    combine: b.linear("combine", 2 * d, d, true)?,
                })
            })?)
        } else {
            None
        };
        let merge = if config.use_hierarchical_merge {
            Some(b.linear("merge", 2 * d, d, true)?)
        } else {
            None
        };
        let mut decoder = Vec::new();
        for i in 0..config.decoder_layers {
            decoder.push(b.scoped(&format!("decoder.{i}"), |b| {
                Ok(DecoderLayer {
                    self_attn: b.attention("self_attn", d, h)?,
                    ln1: b.layer_norm("ln1", d)?,
                    cross_attn: b.attention("cross_attn", d, h)?,
                    ln2: b.layer_norm("ln2", d)?,
                    ffn: b.ffn("ffn", d, ffn)?,
                    ln3: b.layer_norm("ln3", d)?,
                })
            })?);
        }
        let model = HeroSumm {
            config,
            token_embedding,
            query_embedding,
            output_projection,
            local,
            query,
            global,
            ordering,
            merge,
            decoder,
        };
        Ok((model, store))
    }

    fn embed<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        table: ParamId,
        ids: &[usize],
        positions: Vec<f64>,
    ) -> Result<Var> {
        let d = self.config.d_model;
        let table = t.param(s, table);
        let x = t.embedding(table, ids)?;
        let x = t.scale(x, F::lit((d as f64).sqrt()));
        let pe = t.constant(&[ids.len(), d], positions.into_iter().map(F::lit).collect())?;
        Ok(t.add(x, pe)?)
    }

    /// `h⁰ [E·N, T, d]`: scaled token embeddings plus document and token
    /// position encodings. The document half is left out when the ordering
    /// component supplies document positions instead.
    pub fn embed_inputs<F: Real>(&self, t: &mut Tape<F>, s: &ParamStore<F>, batch: &Batch) -> Result<Var> {
        let (n, len, d) = (batch.docs, batch.doc_len, self.config.d_model);
        let mut pe = Vec::with_capacity(batch.tokens.len() * d);
        let table: Vec<Vec<f64>> = (0..n)
            .flat_map(|i| {
                let doc = (!self.config.use_ordering).then_some(i);
                (0..len).map(move |j| positional_encoding(d, doc, j))
            })
            .collect();
        for _ in 0..batch.examples {
            for row in &table {
                pe.extend_from_slice(row);
            }
        }
        let x = self.embed(t, s, self.token_embedding, &batch.tokens, pe)?;
        Ok(t.reshape(x, &[batch.examples * n, len, d])?)
    }

    /// `[E, Tq, d]` query input: query-token embeddings plus full-width
    /// position encodings.
    pub fn embed_query<F: Real>(&self, t: &mut Tape<F>, s: &ParamStore<F>, batch: &Batch) -> Result<Var> {
        let table = self
            .query_embedding
            .ok_or_else(|| Error::invalid("model has no query encoder"))?;
        let d = self.config.d_model;
        let pe = (0..batch.examples)
            .flat_map(|_| (0..batch.query_len).flat_map(|k| sinusoid(k as f64, d)))
            .collect();
        let x = self.embed(t, s, table, &batch.query, pe)?;
        Ok(t.reshape(x, &[batch.examples, batch.query_len, d])?)
    }

    pub fn encode<F: Real>(&self, t: &mut Tape<F>, s: &ParamStore<F>, batch: &Batch) -> Result<Encoded> {
        let c = &self.config;
        let e = batch.examples;
        for ei in 0..e {
            if !batch.doc_keep[ei * batch.docs] {
                return Err(Error::invalid(format!("example {ei} has no documents")));
            }
        }
        let h0 = self.embed_inputs(t, s, batch)?;
        let mut x = t.dropout(h0, c.dropout)?;
        for layer in &self.local {
            x = layer.forward(t, s, x, &batch.token_keep, c.dropout)?.0;
        }
        let local = x;
        if !self.query.is_empty() {
            let hq = self.embed_query(t, s, batch)?;
            let hq = t.dropout(hq, c.dropout)?;
            for layer in &self.query {
                x = layer.forward(t, s, x, hq, &batch.query_keep, c.dropout)?;
            }
        }
        let mut doc_vectors = None;
        for layer in &self.global {
            let (y, pooled, _) = layer.forward(t, s, x, e, &batch.token_keep, &batch.doc_keep, c.dropout)?;
            x = y;
            doc_vectors = Some(pooled);
        }
        let global = x;
        let doc_vectors = doc_vectors.ok_or_else(|| Error::invalid("model has no global layers"))?;
        let mut ordering = None;
        if let Some(block) = &self.ordering {
            let r = block.scores(t, s, doc_vectors, e, &batch.doc_keep)?;
            x = block.apply(t, s, x, r)?;
            ordering = Some(r);
        }
        if let Some(merge) = &self.merge {
            let cat = t.concat(&[local, x], 2)?;
            x = merge.forward(t, s, cat)?;
        }
        let memory = t.reshape(x, &[e, batch.docs * batch.doc_len, c.d_model])?;
        Ok(Encoded {
            memory,
            memory_keep: batch.token_keep.clone(),
            local,
            global,
            doc_vectors,
            ordering,
        })
    }

    /// Next-token logits `[E·S, V]` for decoder inputs `[E, S]` given
    /// `memory [E, M, d]`.
    pub fn decode_logits<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        memory: Var,
        memory_keep: &[bool],
        inputs: &[usize],
        input_keep: &[bool],
    ) -> Result<Var> {
        let c = &self.config;
        let (e, m, d) = dims3(t, memory);
        if inputs.is_empty() || inputs.len() % e != 0 {
            return Err(Error::invalid(format!(
                "decoder needs a non-empty prefix per example, got {} ids for {e} examples",
                inputs.len()
            )));
        }
        let len = inputs.len() / e;
        let pe = (0..e).flat_map(|_| (0..len).flat_map(|p| sinusoid(p as f64, d))).collect();
        let x = self.embed(t, s, self.token_embedding, inputs, pe)?;
        let x = t.reshape(x, &[e, len, d])?;
        let mut x = t.dropout(x, c.dropout)?;
        let self_keep = causal_keep(e, len, input_keep);
        let cross_keep = key_keep(e, len, m, memory_keep);
        for layer in &self.decoder {
            x = layer.forward(t, s, x, &self_keep, memory, &cross_keep, c.dropout)?.0;
        }
        let x = t.reshape(x, &[e * len, d])?;
        let logits = match self.output_projection {
            Some(w) => {
                let w = t.param(s, w);
                t.matmul(x, w, false)?
            }
            None => {
                let w = t.param(s, self.token_embedding);
                t.matmul(x, w, true)?
            }
        };
        Ok(t.scale(logits, F::lit(1.0 / (d as f64).sqrt())))
    }

    /// Token-level cross-entropy of the reference summaries, summed and
    /// divided by `normalizer` (default: the batch's target token count).
    pub fn forward<F: Real>(
        &self,
        t: &mut Tape<F>,
        s: &ParamStore<F>,
        batch: &Batch,
        normalizer: Option<f64>,
    ) -> Result<ForwardOutput> {
        let encoded = self.encode(t, s, batch)?;
        let logits = self.decode_logits(
            t,
            s,
            encoded.memory,
            &encoded.memory_keep,
            &batch.decoder_input,
            &batch.decoder_keep(),
        )?;
        let loss = t.cross_entropy(logits, &batch.targets, normalizer.map(F::lit))?;
        Ok(ForwardOutput { loss, encoded })
    }

    pub fn param_count<F: Real>(store: &ParamStore<F>) -> usize {
        store.num_elements()
    }
}
