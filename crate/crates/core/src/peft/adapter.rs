use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::tensor::{matmul, scale_rows_in_place, Matrix, Rng, Scalar};

use super::lora::lora_forward;
use super::{
    AdapterError, AdapterHyper, AdjustingVectors, Ia3Layer, LoraLayer, Method, Projection,
    VectorGenerator,
};

/// Backbone dimensions an adapter set was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterDims {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ffn: usize,
}

impl From<&ModelConfig> for AdapterDims {
    fn from(c: &ModelConfig) -> Self {
        AdapterDims {
            n_layers: c.n_layers,
            d_model: c.d_model,
            d_ffn: c.d_ffn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AdapterMeta {
    pub tenant_id: String,
    pub seed: u64,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdapterParams<T> {
    None,
    Para(Vec<VectorGenerator<T>>),
    Lora {
        rank: usize,
        alpha: f64,
        targets: Vec<Projection>,
        layers: Vec<LoraLayer<T>>,
    },
    Ia3(Vec<Ia3Layer<T>>),
}

/// One tenant's adapter parameters for every layer of a backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet<T> {
    pub dims: AdapterDims,
    pub params: AdapterParams<T>,
    pub meta: AdapterMeta,
}

/// A named parameter tensor. Vectors and biases are stored as `1 × n`.
pub struct ParamBlock<'a, T> {
    pub name: String,
    pub value: &'a Matrix<T>,
}

impl<T: Scalar> AdapterSet<T> {
    /// Adapter that leaves the backbone untouched.
    pub fn none(config: &ModelConfig) -> Self {
        AdapterSet {
            dims: config.into(),
            params: AdapterParams::None,
            meta: AdapterMeta::default(),
        }
    }

    /// Freshly initialized adapters of the requested family. Every method is
    /// the identity at initialization.
    pub fn init(
        config: &ModelConfig,
        method: Method,
        hyper: &AdapterHyper,
        seed: u64,
    ) -> Result<Self, AdapterError> {
        hyper.validate(method)?;
        let mut rng = Rng::new(seed);
        let n = config.n_layers;
        let params = match method {
            Method::None => AdapterParams::None,
            Method::Para => AdapterParams::Para(
                (0..n)
                    .map(|_| VectorGenerator::init(config, &hyper.para, &mut rng))
                    .collect(),
            ),
            Method::Lora => {
                let mut targets = hyper.lora.targets.clone();
                targets.sort();
                targets.dedup();
                AdapterParams::Lora {
                    rank: hyper.lora.rank,
                    alpha: hyper.lora.alpha,
                    targets,
                    layers: (0..n)
                        .map(|_| LoraLayer::init(config, &hyper.lora, &mut rng))
                        .collect(),
                }
            }
            Method::Ia3 => AdapterParams::Ia3((0..n).map(|_| Ia3Layer::init(config)).collect()),
        };
        Ok(AdapterSet {
            dims: config.into(),
            params,
            meta: AdapterMeta {
                seed,
                ..AdapterMeta::default()
            },
        })
    }

    pub fn with_meta(mut self, meta: AdapterMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn method(&self) -> Method {
        match self.params {
            AdapterParams::None => Method::None,
            AdapterParams::Para(_) => Method::Para,
            AdapterParams::Lora { .. } => Method::Lora,
            AdapterParams::Ia3(_) => Method::Ia3,
        }
    }

    /// Errors unless the adapter was built for `config`'s dimensions.
    pub fn check_compatible(&self, config: &ModelConfig) -> Result<(), AdapterError> {
        let pairs = [
            ("n_layers", self.dims.n_layers, config.n_layers),
            ("d_model", self.dims.d_model, config.d_model),
            ("d_ffn", self.dims.d_ffn, config.d_ffn),
        ];
        for (what, adapter, model) in pairs {
            if adapter != model {
                return Err(AdapterError::DimMismatch { what, adapter, model });
            }
        }
        Ok(())
    }

    /// Hooks for layer `layer`. PARA needs the session's adjusting vectors;
    /// without them it behaves as the identity.
    pub fn hooks<'a>(&'a self, layer: usize, vectors: Option<&'a AdjustingVectors<T>>) -> Hooks<'a, T> {
        match &self.params {
            AdapterParams::None => Hooks::Identity,
            AdapterParams::Para(_) => vectors.map_or(Hooks::Identity, Hooks::Para),
            AdapterParams::Lora { layers, .. } => Hooks::Lora(&layers[layer]),
            AdapterParams::Ia3(layers) => Hooks::Ia3(&layers[layer]),
        }
    }

    pub fn generator(&self, layer: usize) -> Option<&VectorGenerator<T>> {
        match &self.params {
            AdapterParams::Para(g) => g.get(layer),
            _ => None,
        }
    }

    /// All trainable tensors in a fixed order.
    pub fn blocks(&self) -> Vec<ParamBlock<'_, T>> {
        let mut out = Vec::new();
        match &self.params {
            AdapterParams::None => {}
            AdapterParams::Para(gens) => {
                for (i, g) in gens.iter().enumerate() {
                    out.push(ParamBlock { name: format!("layer{i}.vg.w_down"), value: &g.w_down });
                    out.push(ParamBlock { name: format!("layer{i}.vg.w_up"), value: &g.w_up });
                    out.push(ParamBlock { name: format!("layer{i}.vg.b_up"), value: &g.b_up });
                }
            }
            AdapterParams::Lora { layers, .. } => {
                for (i, l) in layers.iter().enumerate() {
                    for (p, params) in &l.adapters {
                        out.push(ParamBlock { name: format!("layer{i}.lora.{}.a", p.name()), value: &params.a });
                        out.push(ParamBlock { name: format!("layer{i}.lora.{}.b", p.name()), value: &params.b });
                    }
                }
            }
            AdapterParams::Ia3(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    out.push(ParamBlock { name: format!("layer{i}.ia3.l_k"), value: &l.l_k });
                    out.push(ParamBlock { name: format!("layer{i}.ia3.l_v"), value: &l.l_v });
                    out.push(ParamBlock { name: format!("layer{i}.ia3.l_ff"), value: &l.l_ff });
                }
            }
        }
        out
    }

    /// Mutable access in the same order as [`AdapterSet::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = Vec::new();
        match &mut self.params {
            AdapterParams::None => {}
            AdapterParams::Para(gens) => {
                for g in gens {
                    out.push(&mut g.w_down);
                    out.push(&mut g.w_up);
                    out.push(&mut g.b_up);
                }
            }
            AdapterParams::Lora { layers, .. } => {
                for l in layers {
                    for (_, params) in &mut l.adapters {
                        out.push(&mut params.a);
                        out.push(&mut params.b);
                    }
                }
            }
            AdapterParams::Ia3(layers) => {
                for l in layers {
                    out.push(&mut l.l_k);
                    out.push(&mut l.l_v);
                    out.push(&mut l.l_ff);
                }
            }
        }
        out
    }

    /// Same structure with every tensor zeroed; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.fill(T::zero());
        }
        z
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.value.len()).sum()
    }

    /// Adds Gaussian noise to every tensor, giving a "trained-looking"
    /// adapter that is no longer the identity.
    pub fn perturb(&mut self, std: f64, rng: &mut Rng) {
        for b in self.blocks_mut() {
            for v in b.as_mut_slice() {
                *v += T::of(rng.normal(std));
            }
        }
    }

    /// Bitwise equality of structure, metadata and all tensors.
    pub fn bit_eq(&self, other: &Self) -> bool {
        if self.dims != other.dims || self.meta != other.meta || self.method() != other.method() {
            return false;
        }
        match (&self.params, &other.params) {
            (
                AdapterParams::Lora { rank, alpha, targets, .. },
                AdapterParams::Lora { rank: r2, alpha: a2, targets: t2, .. },
            ) if rank != r2 || alpha.to_bits() != a2.to_bits() || targets != t2 => return false,
            (AdapterParams::Para(a), AdapterParams::Para(b))
                if a.iter().zip(b).any(|(x, y)| x.activation != y.activation) =>
            {
                return false
            }
            _ => {}
        }
        let (a, b) = (self.blocks(), other.blocks());
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.name == y.name && x.value.bit_eq(y.value))
    }
}

/// Per-layer adapter behaviour applied inside attention and the FFN.
#[derive(Clone, Copy)]
pub enum Hooks<'a, T> {
    Identity,
    Para(&'a AdjustingVectors<T>),
    Lora(&'a LoraLayer<T>),
    Ia3(&'a Ia3Layer<T>),
}

impl<'a, T: Scalar> Hooks<'a, T> {
    /// `x · W` for projection `p`, plus the LoRA delta when `p` is targeted.
    /// The second value is `x · A` for targeted projections.
    pub fn project(
        &self,
        p: Projection,
        x: &Matrix<T>,
        w: &Matrix<T>,
    ) -> Result<(Matrix<T>, Option<Matrix<T>>), AdapterError> {
        if let Hooks::Lora(layer) = self {
            if let Some(l) = layer.get(p) {
                let (y, xa) = lora_forward(x, w, l)?;
                return Ok((y, Some(xa)));
            }
        }
        Ok((matmul(x, w)?, None))
    }

    /// Scales the query projection (before rotary encoding).
    pub fn scale_q(&self, q: &mut Matrix<T>) -> Result<(), AdapterError> {
        if let Hooks::Para(v) = self {
            scale_rows_in_place(q, &v.l_q)?;
        }
        Ok(())
    }

    pub fn scale_k(&self, k: &mut Matrix<T>) -> Result<(), AdapterError> {
        if let Hooks::Ia3(l) = self {
            scale_rows_in_place(k, l.l_k.as_slice())?;
        }
        Ok(())
    }

    pub fn scale_v(&self, v: &mut Matrix<T>) -> Result<(), AdapterError> {
        match self {
            Hooks::Para(vecs) => scale_rows_in_place(v, &vecs.l_v)?,
            Hooks::Ia3(l) => scale_rows_in_place(v, l.l_v.as_slice())?,
            _ => {}
        }
        Ok(())
    }

    /// Scales the Up projection before it meets the gate.
    pub fn scale_u(&self, u: &mut Matrix<T>) -> Result<(), AdapterError> {
        if let Hooks::Para(v) = self {
            scale_rows_in_place(u, &v.l_u)?;
        }
        Ok(())
    }

    /// Scales the gated FFN intermediate `g(G) ⊙ U`.
    pub fn scale_ffn_hidden(&self, h: &mut Matrix<T>) -> Result<(), AdapterError> {
        if let Hooks::Ia3(l) = self {
            scale_rows_in_place(h, l.l_ff.as_slice())?;
        }
        Ok(())
    }
}
