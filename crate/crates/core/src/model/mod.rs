//! Encoder-decoder transformer over prompt columns.
//!
//! Prompt columns and query keys go through their own shared linear
//! embeddings. The encoder is a stack of pre-norm self-attention blocks with
//! no positional encoding. Each decoder block cross-attends from the queries to
//! the encoded prompt (queries never attend to each other), and a linear head
//! maps each query to one value. Masked prompt columns are dropped before
//! attention, which is equivalent to an additive `-inf` mask.

mod checkpoint;
mod ops;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use crate::error::{IconError, Result};
use crate::prompt::{Batch, PROMPT_ROWS, QUERY_ROWS};
use crate::scalar::Scalar;
use ops::{add_in_place, gelu, gelu_backward, Attention, AttnCache, Linear, Norm, NormCache};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub prompt_rows: usize,
    pub query_rows: usize,
    pub out_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 3,
            n_dec_layers: 3,
            d_ff: 256,
            prompt_rows: PROMPT_ROWS,
            query_rows: QUERY_ROWS,
            out_dim: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.d_model, self.n_heads, self.n_enc_layers, self.n_dec_layers, self.d_ff];
        if counts.contains(&0) {
            return Err(IconError::InvalidInput(format!("model sizes must be positive: {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(IconError::InvalidInput(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.prompt_rows != PROMPT_ROWS || self.query_rows != QUERY_ROWS || self.out_dim != 1 {
            return Err(IconError::InvalidInput("prompt/query/output widths are fixed by the prompt layout".into()));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, f) = (self.d_model, self.d_ff);
        let block = 4 * d * d + 4 * d + 2 * d + d * f + f + f * d + d + 2 * d;
        let embeds = self.prompt_rows * d + d + self.query_rows * d + d;
        let final_norms = 4 * d;
        let head = d * self.out_dim + self.out_dim;
        (self.n_enc_layers + self.n_dec_layers) * block + embeds + final_norms + head
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Block {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    prompt_embed: Linear,
    query_embed: Linear,
    enc: Vec<Block>,
    enc_norm: Norm,
    dec: Vec<Block>,
    dec_norm: Norm,
    head: Linear,
    /// `(name, offset, len, fan_in)`; fan_in 0 marks biases, gains are `usize::MAX`.
    tensors: Vec<(String, usize, usize, usize)>,
    total: usize,
}

struct Builder {
    next: usize,
    tensors: Vec<(String, usize, usize, usize)>,
}

impl Builder {
    fn take(&mut self, name: String, len: usize, fan_in: usize) -> usize {
        let off = self.next;
        self.tensors.push((name, off, len, fan_in));
        self.next += len;
        off
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        let w = self.take(format!("{name}.w"), inp * out, inp);
        let b = self.take(format!("{name}.b"), out, 0);
        Linear { w, b, inp, out }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let g = self.take(format!("{name}.g"), dim, usize::MAX);
        let b = self.take(format!("{name}.b"), dim, 0);
        Norm { g, b, dim }
    }

    fn block(&mut self, name: &str, c: &ModelConfig) -> Block {
        let d = c.d_model;
        let ln1 = self.norm(&format!("{name}.ln1"), d);
        let attn = Attention {
            q: self.linear(&format!("{name}.attn.q"), d, d),
            k: self.linear(&format!("{name}.attn.k"), d, d),
            v: self.linear(&format!("{name}.attn.v"), d, d),
            o: self.linear(&format!("{name}.attn.o"), d, d),
            heads: c.n_heads,
        };
        let ln2 = self.norm(&format!("{name}.ln2"), d);
        let ff1 = self.linear(&format!("{name}.ff1"), d, c.d_ff);
        let ff2 = self.linear(&format!("{name}.ff2"), c.d_ff, d);
        Block { ln1, attn, ln2, ff1, ff2 }
    }
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut b = Builder { next: 0, tensors: Vec::new() };
        let prompt_embed = b.linear("prompt_embed", c.prompt_rows, c.d_model);
        let query_embed = b.linear("query_embed", c.query_rows, c.d_model);
        let enc = (0..c.n_enc_layers).map(|i| b.block(&format!("enc{i}"), c)).collect();
        let enc_norm = b.norm("enc_norm", c.d_model);
        let dec = (0..c.n_dec_layers).map(|i| b.block(&format!("dec{i}"), c)).collect();
        let dec_norm = b.norm("dec_norm", c.d_model);
        let head = b.linear("head", c.d_model, c.out_dim);
        Layout { prompt_embed, query_embed, enc, enc_norm, dec, dec_norm, head, total: b.next, tensors: b.tensors }
    }
}

/// Model weights with their architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct IconModel<T> {
    config: ModelConfig,
    layout: Layout,
    pub params: Vec<T>,
}

struct BlockCache<T> {
    x_in: Vec<T>,
    ln1: NormCache<T>,
    h1: Vec<T>,
    attn: AttnCache<T>,
    ln2: NormCache<T>,
    h2: Vec<T>,
    u: Vec<T>,
    act: Vec<T>,
}

struct SampleCache<T> {
    prompt: Vec<T>,
    query: Vec<T>,
    np: usize,
    nq: usize,
    enc: Vec<BlockCache<T>>,
    enc_norm: NormCache<T>,
    memory: Vec<T>,
    dec: Vec<BlockCache<T>>,
    dec_norm: NormCache<T>,
    hidden: Vec<T>,
}

fn gather<T: Copy>(data: &[T], mask: &[bool], width: usize) -> Vec<T> {
    let mut out = Vec::new();
    for (c, &m) in mask.iter().enumerate() {
        if m {
            out.extend_from_slice(&data[c * width..(c + 1) * width]);
        }
    }
    out
}

impl<T: Scalar> IconModel<T> {
    /// Fan-in scaled uniform weights, zero biases, unit norm gains.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::zero(); layout.total];
        for (_, off, len, fan_in) in &layout.tensors {
            let slot = &mut params[*off..*off + *len];
            match *fan_in {
                0 => {}
                usize::MAX => slot.fill(T::one()),
                f => {
                    let bound = 1.0 / (f as f64).sqrt();
                    for v in slot.iter_mut() {
                        *v = T::of(rng.random_range(-bound..bound));
                    }
                }
            }
        }
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(IconError::Dimension(format!("{} parameters for a model of {}", params.len(), layout.total)));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(IconError::InvalidInput("non-finite parameter".into()));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Named tensors as `(name, offset, len)`.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, usize, usize)> {
        self.layout.tensors.iter().map(|(n, o, l, _)| (n.as_str(), *o, *l))
    }

    pub fn cast<U: Scalar>(&self) -> IconModel<U> {
        IconModel {
            config: self.config,
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    fn block_forward(&self, b: &Block, x: Vec<T>, kv: Option<&[T]>, n: usize, nk: usize) -> (Vec<T>, BlockCache<T>) {
        let p = &self.params;
        let (h1, ln1) = b.ln1.forward(p, &x);
        let (a, attn) = b.attn.forward(p, &h1, kv.unwrap_or(&h1), n, nk);
        let mut x1 = x.clone();
        add_in_place(&mut x1, &a);
        let (h2, ln2) = b.ln2.forward(p, &x1);
        let u = b.ff1.forward(p, &h2, n);
        let act = gelu(&u);
        let f = b.ff2.forward(p, &act, n);
        add_in_place(&mut x1, &f);
        (x1, BlockCache { x_in: x, ln1, h1, attn, ln2, h2, u, act })
    }

    /// Backward through one block; returns `d x_in` and, for cross-attention, `d memory`.
    fn block_backward(
        &self,
        b: &Block,
        c: &BlockCache<T>,
        kv: Option<&[T]>,
        dy: Vec<T>,
        g: &mut [T],
    ) -> (Vec<T>, Option<Vec<T>>) {
        let p = &self.params;
        let n = c.x_in.len() / self.config.d_model;
        let mut dact = b.ff2.backward(p, g, &c.act, &dy, n, true).unwrap();
        gelu_backward(&c.u, &mut dact);
        let dh2 = b.ff1.backward(p, g, &c.h2, &dact, n, true).unwrap();
        let mut dx1 = dy;
        add_in_place(&mut dx1, &b.ln2.backward(p, g, &c.ln2, &dh2));
        let (dq, dkv) = b.attn.backward(p, g, &c.attn, &c.h1, kv.unwrap_or(&c.h1), &dx1);
        let mut dx = dx1;
        match kv {
            Some(_) => {
                add_in_place(&mut dx, &b.ln1.backward(p, g, &c.ln1, &dq));
                (dx, Some(dkv))
            }
            None => {
                let mut dh1 = dq;
                add_in_place(&mut dh1, &dkv);
                add_in_place(&mut dx, &b.ln1.backward(p, g, &c.ln1, &dh1));
                (dx, None)
            }
        }
    }

    /// Encoder output for `np` valid (compact) columns, after the final norm.
    /// Block caches are dropped as soon as they are produced unless `keep`.
    fn encode_compact(&self, prompt: &[T], np: usize, keep: bool) -> (Vec<T>, Vec<BlockCache<T>>, NormCache<T>) {
        let mut x = self.layout.prompt_embed.forward(&self.params, prompt, np);
        let mut caches = Vec::with_capacity(self.layout.enc.len());
        for b in &self.layout.enc {
            let (y, c) = self.block_forward(b, x, None, np, np);
            x = y;
            if keep {
                caches.push(c);
            }
        }
        let (m, nc) = self.layout.enc_norm.forward(&self.params, &x);
        (m, caches, nc)
    }

    fn decode_compact(
        &self,
        query: &[T],
        nq: usize,
        memory: &[T],
        np: usize,
        keep: bool,
    ) -> (Vec<T>, Vec<BlockCache<T>>, NormCache<T>) {
        let mut x = self.layout.query_embed.forward(&self.params, query, nq);
        let mut caches = Vec::with_capacity(self.layout.dec.len());
        for b in &self.layout.dec {
            let (y, c) = self.block_forward(b, x, Some(memory), nq, np);
            x = y;
            if keep {
                caches.push(c);
            }
        }
        let (h, nc) = self.layout.dec_norm.forward(&self.params, &x);
        (h, caches, nc)
    }

    fn check_prompt(&self, prompt: &[T], mask: &[bool]) -> Result<usize> {
        if prompt.len() != mask.len() * PROMPT_ROWS {
            return Err(IconError::Dimension(format!("prompt of {} entries for {} columns", prompt.len(), mask.len())));
        }
        let np = mask.iter().filter(|&&m| m).count();
        if np == 0 {
            return Err(IconError::InvalidInput("prompt has no valid columns".into()));
        }
        Ok(np)
    }

    fn check_query(&self, query: &[T], mask: &[bool]) -> Result<usize> {
        if query.len() != mask.len() * QUERY_ROWS {
            return Err(IconError::Dimension(format!("query of {} entries for {} columns", query.len(), mask.len())));
        }
        Ok(mask.iter().filter(|&&m| m).count())
    }

    /// Column embeddings `[cols, d_model]` of one prompt; masked columns are zero.
    pub fn encode(&self, prompt: &[T], mask: &[bool]) -> Result<Vec<T>> {
        let np = self.check_prompt(prompt, mask)?;
        let (m, _, _) = self.encode_compact(&gather(prompt, mask, PROMPT_ROWS), np, false);
        Ok(self.scatter(&m, mask, self.config.d_model))
    }

    /// Per-query vectors `[queries, d_model]` given the output of [`Self::encode`].
    pub fn decode(&self, query: &[T], query_mask: &[bool], encoded: &[T], prompt_mask: &[bool]) -> Result<Vec<T>> {
        let d = self.config.d_model;
        if encoded.len() != prompt_mask.len() * d {
            return Err(IconError::Dimension("encoder output does not match the prompt mask".into()));
        }
        let np = prompt_mask.iter().filter(|&&m| m).count();
        if np == 0 {
            return Err(IconError::InvalidInput("prompt has no valid columns".into()));
        }
        let nq = self.check_query(query, query_mask)?;
        let memory = gather(encoded, prompt_mask, d);
        let (h, _, _) = self.decode_compact(&gather(query, query_mask, QUERY_ROWS), nq, &memory, np, false);
        Ok(self.scatter(&h, query_mask, d))
    }

    fn scatter(&self, compact: &[T], mask: &[bool], width: usize) -> Vec<T> {
        let mut out = vec![T::zero(); mask.len() * width];
        let mut k = 0;
        for (c, &m) in mask.iter().enumerate() {
            if m {
                out[c * width..(c + 1) * width].copy_from_slice(&compact[k * width..(k + 1) * width]);
                k += 1;
            }
        }
        out
    }

    fn sample_forward(&self, prompt: &[T], np: usize, query: &[T], nq: usize, keep: bool) -> (Vec<T>, SampleCache<T>) {
        let (memory, enc, enc_norm) = self.encode_compact(prompt, np, keep);
        let (hidden, dec, dec_norm) = self.decode_compact(query, nq, &memory, np, keep);
        let out = self.layout.head.forward(&self.params, &hidden, nq);
        let cache = SampleCache {
            prompt: prompt.to_vec(),
            query: query.to_vec(),
            np,
            nq,
            enc,
            enc_norm,
            memory,
            dec,
            dec_norm,
            hidden,
        };
        (out, cache)
    }

    fn sample_backward(&self, c: &SampleCache<T>, dout: &[T], g: &mut [T]) {
        let p = &self.params;
        let l = &self.layout;
        let dh = l.head.backward(p, g, &c.hidden, dout, c.nq, true).unwrap();
        let mut dx = l.dec_norm.backward(p, g, &c.dec_norm, &dh);
        let mut dmem = vec![T::zero(); c.memory.len()];
        for (b, bc) in l.dec.iter().zip(&c.dec).rev() {
            let (dxi, dm) = self.block_backward(b, bc, Some(&c.memory), dx, g);
            dx = dxi;
            add_in_place(&mut dmem, &dm.unwrap());
        }
        l.query_embed.backward(p, g, &c.query, &dx, c.nq, false);
        let mut dx = l.enc_norm.backward(p, g, &c.enc_norm, &dmem);
        for (b, bc) in l.enc.iter().zip(&c.enc).rev() {
            dx = self.block_backward(b, bc, None, dx, g).0;
        }
        l.prompt_embed.backward(p, g, &c.prompt, &dx, c.np, false);
    }

    /// Predictions for one prompt and its queries; masked queries yield zero.
    pub fn forward_one(&self, prompt: &[T], prompt_mask: &[bool], query: &[T], query_mask: &[bool]) -> Result<Vec<T>> {
        let np = self.check_prompt(prompt, prompt_mask)?;
        let nq = self.check_query(query, query_mask)?;
        let mut out = vec![T::zero(); query_mask.len()];
        if nq == 0 {
            return Ok(out);
        }
        let (y, _) = self.sample_forward(
            &gather(prompt, prompt_mask, PROMPT_ROWS),
            np,
            &gather(query, query_mask, QUERY_ROWS),
            nq,
            false,
        );
        let mut k = 0;
        for (o, &m) in out.iter_mut().zip(query_mask) {
            if m {
                *o = y[k];
                k += 1;
            }
        }
        Ok(out)
    }

    /// Predictions `[batch, query_cols]` for a padded batch.
    pub fn forward(&self, batch: &Batch<T>) -> Result<Vec<T>> {
        let rows: Vec<Result<Vec<T>>> = (0..batch.size)
            .into_par_iter()
            .map(|b| {
                let (p, pm) = batch.prompt_of(b);
                let (q, qm) = batch.query_of(b);
                self.forward_one(p, pm, q, qm)
            })
            .collect();
        let mut out = Vec::with_capacity(batch.size * batch.query_cols);
        for r in rows {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Masked mean-squared error and its gradient. Per-sample gradients are
    /// summed in batch order, so the result does not depend on thread count.
    pub fn loss_and_grad(&self, batch: &Batch<T>) -> Result<(T, Vec<T>)> {
        let count = batch.query_mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(IconError::InvalidInput("batch has no valid queries".into()));
        }
        let scale = T::of(2.0 / count as f64);
        let parts: Vec<Result<(T, Vec<T>)>> = (0..batch.size)
            .into_par_iter()
            .map(|b| {
                let (p, pm) = batch.prompt_of(b);
                let (q, qm) = batch.query_of(b);
                let np = self.check_prompt(p, pm)?;
                let nq = self.check_query(q, qm)?;
                let mut g = vec![T::zero(); self.params.len()];
                if nq == 0 {
                    return Ok((T::zero(), g));
                }
                let labels = gather(batch.labels_of(b), qm, 1);
                let (y, cache) =
                    self.sample_forward(&gather(p, pm, PROMPT_ROWS), np, &gather(q, qm, QUERY_ROWS), nq, true);
                let mut sse = T::zero();
                let dout: Vec<T> = y
                    .iter()
                    .zip(&labels)
                    .map(|(&a, &t)| {
                        sse += (a - t) * (a - t);
                        scale * (a - t)
                    })
                    .collect();
                self.sample_backward(&cache, &dout, &mut g);
                Ok((sse, g))
            })
            .collect();
        let mut total = T::zero();
        let mut grad = vec![T::zero(); self.params.len()];
        for part in parts {
            let (sse, g) = part?;
            total += sse;
            add_in_place(&mut grad, &g);
        }
        Ok((total / T::of(count as f64), grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::IconRng;
    use rand::SeedableRng;

    #[test]
    fn parameter_count_matches_layout() {
        let c = ModelConfig::default();
        assert_eq!(c.param_count(), 301_185);
        let m = IconModel::<f32>::init(c, &mut IconRng::seed_from_u64(0)).unwrap();
        assert_eq!(m.num_params(), 301_185);
        let small = ModelConfig { d_model: 8, n_heads: 2, n_enc_layers: 1, n_dec_layers: 2, d_ff: 12, ..c };
        assert_eq!(
            IconModel::<f64>::init(small, &mut IconRng::seed_from_u64(0)).unwrap().num_params(),
            small.param_count()
        );
    }

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::default();
        let a = IconModel::<f32>::init(c, &mut IconRng::seed_from_u64(9)).unwrap();
        let b = IconModel::<f32>::init(c, &mut IconRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(IconModel::<f32>::init(ModelConfig { n_heads: 5, ..c }, &mut IconRng::seed_from_u64(9)).is_err());
    }
}
