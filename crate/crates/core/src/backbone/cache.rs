use std::sync::Arc;

use crate::peft::AdjustingVectors;
use crate::tensor::{Buffer, Scalar};

/// Cached keys (post-rotation) and values (post-adapter scaling) of one layer.
#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    keys: Buffer<T>,
    values: Buffer<T>,
    width: usize,
    len: usize,
}

impl<T: Scalar> LayerCache<T> {
    pub fn new(width: usize) -> Self {
        LayerCache {
            keys: Buffer::with_capacity(0),
            values: Buffer::with_capacity(0),
            width,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub(crate) fn append(&mut self, k: &crate::tensor::Matrix<T>, v: &crate::tensor::Matrix<T>) {
        debug_assert_eq!(k.cols(), self.width);
        self.keys.extend_from_slice(k.as_slice());
        self.values.extend_from_slice(v.as_slice());
        self.len += k.rows();
    }

    #[inline]
    pub fn key(&self, pos: usize) -> &[T] {
        &self.keys[pos * self.width..(pos + 1) * self.width]
    }

    #[inline]
    pub fn value(&self, pos: usize) -> &[T] {
        &self.values[pos * self.width..(pos + 1) * self.width]
    }
}

/// Per-session cache: one [`LayerCache`] per layer plus, for PARA sessions,
/// the adjusting vectors computed at prefill. Clones (beam expansion) share
/// the vectors, which never change after prefill.
#[derive(Debug, Clone)]
pub struct KvCache<T> {
    layers: Vec<LayerCache<T>>,
    adjusting: Arc<Vec<AdjustingVectors<T>>>,
    max_len: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(n_layers: usize, d_model: usize, max_len: usize) -> Self {
        KvCache {
            layers: (0..n_layers).map(|_| LayerCache::new(d_model)).collect(),
            adjusting: Arc::new(Vec::new()),
            max_len,
        }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, LayerCache::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn layer(&self, i: usize) -> &LayerCache<T> {
        &self.layers[i]
    }

    pub fn layers(&self) -> &[LayerCache<T>] {
        &self.layers
    }

    /// Adjusting vectors written at prefill (empty for non-PARA sessions).
    pub fn adjusting(&self) -> &[AdjustingVectors<T>] {
        &self.adjusting
    }

    /// Mutable layer cache together with that layer's adjusting vectors.
    pub(crate) fn layer_and_vectors(&mut self, i: usize) -> (&mut LayerCache<T>, Option<&AdjustingVectors<T>>) {
        (&mut self.layers[i], self.adjusting.get(i))
    }

    pub(crate) fn push_adjusting(&mut self, v: AdjustingVectors<T>) {
        Arc::make_mut(&mut self.adjusting).push(v);
    }
}
