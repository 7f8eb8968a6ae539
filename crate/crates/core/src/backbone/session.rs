use std::sync::Arc;

use crate::peft::{generate_vectors, AdapterSet};
use crate::tensor::{matmul, Matrix, Scalar};

use super::layer::{attention_forward, ffn_forward, rms_norm};
use super::{KvCache, Model, ModelError, TokenId};

/// One request's decoding state: shared backbone and adapter plus a private
/// KV cache.
///
/// Vector generators run only inside [`Session::prefill`]; the resulting
/// vectors live in the cache and are reused by every [`Session::decode_step`].
#[derive(Debug, Clone)]
pub struct Session<T> {
    model: Arc<Model<T>>,
    adapter: Arc<AdapterSet<T>>,
    cache: KvCache<T>,
    generator_invocations: usize,
    prefilled: bool,
}

impl<T: Scalar> Session<T> {
    pub fn new(model: Arc<Model<T>>, adapter: Arc<AdapterSet<T>>) -> Result<Self, ModelError> {
        adapter.check_compatible(model.config())?;
        let c = model.config();
        let cache = KvCache::new(c.n_layers, c.d_model, c.max_seq_len);
        Ok(Session {
            model,
            adapter,
            cache,
            generator_invocations: 0,
            prefilled: false,
        })
    }

    pub fn model(&self) -> &Arc<Model<T>> {
        &self.model
    }

    pub fn adapter(&self) -> &Arc<AdapterSet<T>> {
        &self.adapter
    }

    pub fn cache(&self) -> &KvCache<T> {
        &self.cache
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    /// How many times a vector generator has run in this session.
    pub fn generator_invocations(&self) -> usize {
        self.generator_invocations
    }

    /// Processes the whole prompt, fills the cache and returns the logits of
    /// the last prompt position.
    pub fn prefill(&mut self, prompt: &[TokenId]) -> Result<Vec<T>, ModelError> {
        if self.prefilled {
            return Err(ModelError::AlreadyPrefilled);
        }
        if prompt.is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let logits = self.forward(prompt, true)?;
        self.prefilled = true;
        Ok(logits)
    }

    /// Appends one token and returns the logits for the next position.
    pub fn decode_step(&mut self, token: TokenId) -> Result<Vec<T>, ModelError> {
        if !self.prefilled {
            return Err(ModelError::NotPrefilled);
        }
        self.forward(&[token], false)
    }

    fn forward(&mut self, tokens: &[TokenId], prefill: bool) -> Result<Vec<T>, ModelError> {
        let model = Arc::clone(&self.model);
        let adapter = Arc::clone(&self.adapter);
        let c = model.config();
        model.check_tokens(tokens)?;
        let start = self.cache.len();
        if start + tokens.len() > c.max_seq_len {
            return Err(ModelError::CacheOverflow {
                needed: start + tokens.len(),
                max: c.max_seq_len,
            });
        }
        let w = model.weights();
        let mut x = Matrix::zeros(tokens.len(), c.d_model);
        for (i, &t) in tokens.iter().enumerate() {
            x.row_mut(i).copy_from_slice(w.token_embedding.row(t as usize));
            if !model.rope().is_rotary() {
                for (v, &p) in x.row_mut(i).iter_mut().zip(model.rope().sinusoidal(start + i)) {
                    *v += p;
                }
            }
        }

        for (l, lw) in w.layers.iter().enumerate() {
            if prefill {
                if let Some(vg) = adapter.generator(l) {
                    let vectors = generate_vectors(vg, &x)?;
                    self.generator_invocations += 1;
                    self.cache.push_adjusting(vectors);
                }
            }
            let (layer_cache, vectors) = self.cache.layer_and_vectors(l);
            let hooks = adapter.hooks(l, vectors);
            let xn = rms_norm(&x, &lw.attn_norm, c.norm_eps);
            let a = attention_forward(lw, c, model.rope(), &xn, layer_cache, hooks)?;
            drop(xn);
            x.add_assign(&a)?;
            drop(a);
            let xn = rms_norm(&x, &lw.ffn_norm, c.norm_eps);
            let f = ffn_forward(lw, c, &xn, hooks)?;
            drop(xn);
            x.add_assign(&f)?;
        }

        let last = x.slice_rows(x.rows() - 1, x.rows());
        drop(x);
        let xn = rms_norm(&last, &w.final_norm, c.norm_eps);
        let logits = matmul(&xn, &w.lm_head)?;
        Ok(logits.to_vec())
    }
}
