//! Parameter checkpoints.
//!
//! A checkpoint is a UTF-8 text manifest followed by the raw parameter
//! vector:
//!
//! ```text
//! imbforge-checkpoint 1
//! meta <key> <value...>                  zero or more
//! layer <network> <in> <out> <activation> zero or more, in order
//! param <name> <d0>x<d1>...              one per tensor, in flat order
//! values <count>
//! end
//! <count little-endian f64 values>
//! ```
//!
//! A scalar parameter is written with the shape `scalar`. Reading back a
//! checkpoint yields the exact bit patterns that were written.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_bytes};
use crate::nn::{Activation, LayerSpec};
use crate::params::ParamStore;

const MAGIC: &str = "imbforge-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub layers: Vec<(String, LayerSpec)>,
    pub params: Vec<(String, Vec<usize>)>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    /// Captures names, shapes and values of every parameter in `store`.
    pub fn from_store(store: &ParamStore) -> Self {
        Checkpoint {
            meta: Vec::new(),
            layers: Vec::new(),
            params: store
                .iter()
                .map(|p| (p.name.clone(), p.value.shape().to_vec()))
                .collect(),
            values: store.flat_values(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn with_layers(mut self, network: &str, specs: &[LayerSpec]) -> Self {
        self.layers
            .extend(specs.iter().map(|s| (network.to_string(), s.clone())));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks meta field {key:?}")))
    }

    pub fn layers_of(&self, network: &str) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .filter(|(n, _)| n == network)
            .map(|(_, s)| s.clone())
            .collect()
    }

    /// Copies the stored values into `store`, checking names and shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (p, (name, shape)) in store.iter().zip(&self.params) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {name} {shape:?} does not match model tensor {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        store.set_flat_values(&self.values)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        head.push_str(MAGIC);
        head.push('\n');
        for (k, v) in &self.meta {
            head.push_str(&format!("meta {k} {v}\n"));
        }
        for (net, s) in &self.layers {
            head.push_str(&format!(
                "layer {net} {} {} {}\n",
                s.in_dim,
                s.out_dim,
                s.activation.tag()
            ));
        }
        for (name, shape) in &self.params {
            let dims = if shape.is_empty() {
                "scalar".to_string()
            } else {
                shape
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join("x")
            };
            head.push_str(&format!("param {name} {dims}\n"));
        }
        head.push_str(&format!("values {}\nend\n", self.values.len()));
        let mut out = head.into_bytes();
        out.reserve(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fmt_err = |reason: String| Error::Format {
            path: origin.to_path_buf(),
            reason,
        };
        let end_marker = b"\nend\n";
        let end = bytes
            .windows(end_marker.len())
            .position(|w| w == end_marker)
            .ok_or_else(|| fmt_err("missing `end` line".into()))?;
        let head = std::str::from_utf8(&bytes[..end])
            .map_err(|_| fmt_err("manifest is not UTF-8".into()))?;
        let body = &bytes[end + end_marker.len()..];

        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(fmt_err(format!("expected header {MAGIC:?}")));
        }
        let mut ck = Checkpoint::default();
        let mut count = None;
        for line in lines {
            let mut parts = line.splitn(2, ' ');
            let kind = parts.next().unwrap_or("");
            let rest = parts.next().unwrap_or("");
            match kind {
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ck.meta.push((k.to_string(), v.to_string()));
                }
                "layer" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 4 {
                        return Err(fmt_err(format!("bad layer line {line:?}")));
                    }
                    let parse = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| fmt_err(format!("bad layer size in {line:?}")))
                    };
                    ck.layers.push((
                        f[0].to_string(),
                        LayerSpec {
                            in_dim: parse(f[1])?,
                            out_dim: parse(f[2])?,
                            activation: Activation::from_tag(f[3])
                                .map_err(|_| fmt_err(format!("bad activation in {line:?}")))?,
                        },
                    ));
                }
                "param" => {
                    let (name, dims) = rest
                        .split_once(' ')
                        .ok_or_else(|| fmt_err(format!("bad param line {line:?}")))?;
                    let shape = if dims == "scalar" {
                        vec![]
                    } else {
                        dims.split('x')
                            .map(|d| {
                                d.parse::<usize>()
                                    .map_err(|_| fmt_err(format!("bad shape in {line:?}")))
                            })
                            .collect::<Result<Vec<_>>>()?
                    };
                    ck.params.push((name.to_string(), shape));
                }
                "values" => {
                    count = Some(
                        rest.parse::<usize>()
                            .map_err(|_| fmt_err(format!("bad values line {line:?}")))?,
                    );
                }
                _ => return Err(fmt_err(format!("unknown manifest line {line:?}"))),
            }
        }
        let count = count.ok_or_else(|| fmt_err("missing `values` line".into()))?;
        let declared: usize = ck
            .params
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        if !ck.params.is_empty() && declared != count {
            return Err(fmt_err(format!(
                "param shapes declare {declared} values but `values` says {count}"
            )));
        }
        if body.len() != count * 8 {
            return Err(fmt_err(format!(
                "expected {} payload bytes, found {}",
                count * 8,
                body.len()
            )));
        }
        ck.values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&read_bytes(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use crate::rng::seeded;
    use std::path::PathBuf;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "enc", &[5, 4, 3], Activation::Tanh, Activation::Identity, &mut seeded(3)).unwrap();
        store.register("prior_log_sigma", crate::tensor::Tensor::scalar(-0.1234567890123));
        let ck = Checkpoint::from_store(&store)
            .with_meta("kind", "mgvae")
            .with_meta("note", "two words")
            .with_layers("encoder", &mlp.specs());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, &PathBuf::from("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta("note"), Some("two words"));
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.values), bits(&store.flat_values()));
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut store = ParamStore::new();
        store.register("w", crate::tensor::Tensor::vector(vec![1.0, 2.0]));
        let mut bytes = Checkpoint::from_store(&store).to_bytes();
        bytes.pop();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, &PathBuf::from("mem")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn load_into_checks_names() {
        let mut a = ParamStore::new();
        a.register("w", crate::tensor::Tensor::vector(vec![1.0]));
        let mut b = ParamStore::new();
        b.register("v", crate::tensor::Tensor::vector(vec![0.0]));
        assert!(Checkpoint::from_store(&a).load_into(&mut b).is_err());
    }
}
