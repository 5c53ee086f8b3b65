//! Multi-layer perceptrons over the parameter registry.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::{uniform, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Ok(match tag {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "sigmoid" => Activation::Sigmoid,
            "identity" => Activation::Identity,
            other => return Err(Error::Config(format!("unknown activation tag {other:?}"))),
        })
    }

    pub fn apply<'g>(self, x: Var<'g>) -> Result<Var<'g>> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Identity => Ok(x),
        }
    }
}

/// Affine map `x·W + b` with `W` stored as `in×out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| uniform(rng, -bound, bound))
            .collect();
        let weight = store.register(
            format!("{name}.weight"),
            Tensor::matrix(in_dim, out_dim, w).expect("weight shape"),
        );
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let cols = x.shape().get(1).copied();
        if cols != Some(self.in_dim) {
            return Err(Error::Shape(format!(
                "layer expects {} input columns, got shape {:?}",
                self.in_dim,
                x.shape()
            )));
        }
        x.matmul(g.param(store, self.weight))?
            .add_bias(g.param(store, self.bias))
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Layer description used by checkpoints and configs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<(Linear, Activation)>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output sizes, got {dims:?}"
            )));
        }
        let specs: Vec<LayerSpec> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                activation: if i + 2 == dims.len() { output } else { hidden },
            })
            .collect();
        Mlp::from_specs(store, name, &specs, rng)
    }

    pub fn from_specs(
        store: &mut ParamStore,
        name: &str,
        specs: &[LayerSpec],
        rng: &mut Rng,
    ) -> Result<Self> {
        for w in specs.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Config(format!(
                    "layer dimensions do not chain: {} -> {}",
                    w[0].out_dim, w[1].in_dim
                )));
            }
        }
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    Linear::new(store, &format!("{name}.{i}"), s.in_dim, s.out_dim, rng),
                    s.activation,
                )
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let mut h = x;
        for (layer, act) in &self.layers {
            h = act.apply(layer.forward(g, store, h)?)?;
        }
        Ok(h)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].0.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].0.out_dim
    }

    pub fn layers(&self) -> &[(Linear, Activation)] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|(l, a)| LayerSpec {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                activation: *a,
            })
            .collect()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|(l, _)| l.param_ids()).collect()
    }
}
