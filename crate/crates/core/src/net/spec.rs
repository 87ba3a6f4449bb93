use serde::{Deserialize, Serialize};

use crate::diff::Unary;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Role};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Gelu,
    Tanh,
}

impl Activation {
    pub fn unary(self) -> Unary {
        match self {
            Activation::Identity => Unary::Identity,
            Activation::Relu => Unary::Relu,
            Activation::Gelu => Unary::Gelu,
            Activation::Tanh => Unary::Tanh,
        }
    }

    /// Infinitely differentiable.
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }
}

/// One layer `a_k = g_k(a_{k-1})`.
///
/// `segments` on the normalization and embedding layers list the widths of
/// independently treated feature slices; an empty list means one slice
/// covering the whole width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    },
    RmsNormScale {
        dim: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        segments: Vec<usize>,
    },
    MultiHeadAttention {
        dim: usize,
        heads: usize,
        head_dim: usize,
        #[serde(default)]
        causal: bool,
    },
    Embedding {
        vocab: usize,
        dim: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        segments: Vec<usize>,
    },
    AvgHead {
        in_dim: usize,
        groups: usize,
    },
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec::Dense { in_dim, out_dim, activation }
    }

    pub fn norm(dim: usize) -> Self {
        LayerSpec::RmsNormScale { dim, segments: Vec::new() }
    }

    pub fn attention(dim: usize, heads: usize, head_dim: usize, causal: bool) -> Self {
        LayerSpec::MultiHeadAttention { dim, heads, head_dim, causal }
    }

    pub fn embedding(vocab: usize, dim: usize) -> Self {
        LayerSpec::Embedding { vocab, dim, segments: Vec::new() }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::RmsNormScale { .. } => "rms_norm_scale",
            LayerSpec::MultiHeadAttention { .. } => "multi_head_attention",
            LayerSpec::Embedding { .. } => "embedding",
            LayerSpec::AvgHead { .. } => "avg_head",
        }
    }

    pub fn in_width(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { in_dim, .. } => Some(in_dim),
            LayerSpec::RmsNormScale { dim, .. } | LayerSpec::MultiHeadAttention { dim, .. } => Some(dim),
            LayerSpec::Embedding { .. } => None,
            LayerSpec::AvgHead { in_dim, .. } => Some(in_dim),
        }
    }

    pub fn out_width(&self) -> usize {
        match *self {
            LayerSpec::Dense { out_dim, .. } => out_dim,
            LayerSpec::RmsNormScale { dim, .. }
            | LayerSpec::MultiHeadAttention { dim, .. }
            | LayerSpec::Embedding { dim, .. } => dim,
            LayerSpec::AvgHead { in_dim, groups } => in_dim / groups.max(1),
        }
    }

    /// Parameter tensors of this layer: (suffix, role, shape).
    pub fn param_shapes(&self) -> Vec<(&'static str, Role, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim, .. } => vec![
                ("kernel", Role::Kernel, vec![in_dim, out_dim]),
                ("bias", Role::Bias, vec![out_dim]),
            ],
            LayerSpec::RmsNormScale { dim, .. } => vec![("scale", Role::Scale, vec![dim])],
            LayerSpec::MultiHeadAttention { dim, heads, head_dim, .. } => {
                let inner = heads * head_dim;
                vec![
                    ("query", Role::Kernel, vec![dim, inner]),
                    ("key", Role::Kernel, vec![dim, inner]),
                    ("value", Role::Kernel, vec![dim, inner]),
                    ("output", Role::Kernel, vec![inner, dim]),
                ]
            }
            LayerSpec::Embedding { vocab, dim, .. } => vec![("embedding", Role::Embedding, vec![vocab, dim])],
            LayerSpec::AvgHead { .. } => Vec::new(),
        }
    }

    pub(crate) fn segment_widths(segments: &[usize], dim: usize) -> Vec<usize> {
        if segments.is_empty() {
            vec![dim]
        } else {
            segments.to_vec()
        }
    }
}

pub fn param_name(layer: usize, suffix: &str) -> String {
    format!("l{layer}.{suffix}")
}

/// Layer sequence `f = g_r ∘ … ∘ g_1` plus residual additions.
///
/// Activation points are numbered `0` (network input, after tiling) through
/// `r` (output of the last layer). A link `(from, to)` adds `a_from` to the
/// output of layer `to` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residual_links: Vec<(usize, usize)>,
    /// Feature inputs are repeated this many times along the feature axis
    /// before the first layer.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub input_copies: usize,
}

fn one() -> usize {
    1
}

fn is_one(n: &usize) -> bool {
    *n == 1
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self { layers, residual_links: Vec::new(), input_copies: 1 }
    }

    pub fn with_residuals(mut self, links: Vec<(usize, usize)>) -> Self {
        self.residual_links = links;
        self
    }

    /// Plain MLP over `dims` with the same activation on hidden layers and an
    /// identity output layer.
    pub fn mlp(dims: &[usize], hidden: Activation) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { hidden };
                LayerSpec::dense(dims[i], dims[i + 1], act)
            })
            .collect();
        Self::new(layers)
    }

    pub fn takes_tokens(&self) -> bool {
        matches!(self.layers.first(), Some(LayerSpec::Embedding { .. }))
    }

    /// Width of one untiled feature input, `None` for token inputs.
    pub fn input_dim(&self) -> Option<usize> {
        let w = self.layers.first()?.in_width()?;
        Some(w / self.input_copies.max(1))
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_width())
    }

    /// Width of every activation point `a_0 … a_r`; `a_0` is 0 for token nets.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers.first().and_then(|l| l.in_width()).unwrap_or(0)];
        w.extend(self.layers.iter().map(|l| l.out_width()));
        w
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.param_shapes())
            .map(|(_, _, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |layer: usize, message: String| Err(Error::Layer { layer, message });
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network has no layers".into()));
        }
        if self.input_copies == 0 {
            return Err(Error::InvalidArgument("input_copies must be positive".into()));
        }
        let mut width: Option<usize> = None;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Embedding { vocab, dim, segments } => {
                    if k != 0 {
                        return err(k, "embedding must be the first layer".into());
                    }
                    if *vocab == 0 || *dim == 0 {
                        return err(k, "embedding extents must be positive".into());
                    }
                    if !segments.is_empty() && segments.iter().sum::<usize>() != *dim {
                        return err(k, format!("segments {segments:?} do not sum to {dim}"));
                    }
                }
                other => {
                    let input = other.in_width().expect("non-embedding layers have an input width");
                    if input == 0 || other.out_width() == 0 {
                        return err(k, "extents must be positive".into());
                    }
                    if let Some(w) = width {
                        if w != input {
                            return err(k, format!("expects width {input}, previous layer yields {w}"));
                        }
                    } else if input % self.input_copies != 0 {
                        return err(k, format!("input width {input} not divisible by {} copies", self.input_copies));
                    }
                }
            }
            match layer {
                LayerSpec::RmsNormScale { dim, segments } if !segments.is_empty() => {
                    if segments.iter().sum::<usize>() != *dim || segments.contains(&0) {
                        return err(k, format!("segments {segments:?} do not partition {dim}"));
                    }
                }
                LayerSpec::MultiHeadAttention { heads, head_dim, .. } if *heads == 0 || *head_dim == 0 => {
                    return err(k, "heads and head_dim must be positive".into());
                }
                LayerSpec::AvgHead { in_dim, groups } => {
                    if k != last {
                        return err(k, "avg head must be the final layer".into());
                    }
                    if *groups == 0 || in_dim % groups != 0 {
                        return err(k, format!("{in_dim} features do not split into {groups} groups"));
                    }
                }
                _ => {}
            }
            width = Some(layer.out_width());
        }
        let widths = self.widths();
        for &(from, to) in &self.residual_links {
            if from >= to || to > self.layers.len() || to == 0 {
                return Err(Error::InvalidArgument(format!("residual link ({from}, {to}) out of order")));
            }
            if from == 0 && self.takes_tokens() {
                return Err(Error::InvalidArgument("token networks have no residual source at point 0".into()));
            }
            if widths[from] != widths[to] {
                return Err(Error::InvalidArgument(format!(
                    "residual link ({from}, {to}) joins widths {} and {}",
                    widths[from], widths[to]
                )));
            }
        }
        Ok(())
    }

    /// Random parameters: kernels N(0, 1/fan_in), biases N(0, 0.1²),
    /// scales 1 + N(0, 0.1²), embeddings N(0, 1).
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut rng = rng::stream(seed);
        let mut store = ParamStore::new();
        for (k, layer) in self.layers.iter().enumerate() {
            for (suffix, role, shape) in layer.param_shapes() {
                let len: usize = shape.iter().product();
                let data = match role {
                    Role::Kernel => rng::normal_vec(&mut rng, len, 1.0 / (shape[0] as f64).sqrt()),
                    Role::Bias => rng::normal_vec(&mut rng, len, 0.1),
                    Role::Scale => rng::normal_vec(&mut rng, len, 0.1).into_iter().map(|v| 1.0 + v).collect(),
                    Role::Embedding => rng::normal_vec(&mut rng, len, 1.0),
                };
                store.push(param_name(k, suffix), role, Tensor::new(shape, data)?)?;
            }
        }
        Ok(store)
    }

    /// All-zero parameters in this network's layout.
    pub fn zero_params(&self) -> Result<ParamStore> {
        self.validate()?;
        let mut store = ParamStore::new();
        for (k, layer) in self.layers.iter().enumerate() {
            for (suffix, role, shape) in layer.param_shapes() {
                store.push(param_name(k, suffix), role, Tensor::zeros(&shape))?;
            }
        }
        Ok(store)
    }

    /// Checks that `params` has exactly the entries this network needs.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let expected = self.zero_params()?;
        let same = expected.entries().len() == params.entries().len()
            && expected
                .entries()
                .iter()
                .zip(params.entries())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.role == b.role);
        if !same {
            return Err(Error::Shape("parameter store does not match network layout".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_counts_parameters() {
        let net = NetworkSpec::mlp(&[3, 4, 2], Activation::Tanh);
        assert_eq!(net.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(net.init_params(1).unwrap().len(), net.param_count());
    }

    #[test]
    fn width_mismatch_names_layer() {
        let net = NetworkSpec::new(vec![
            LayerSpec::dense(3, 4, Activation::Relu),
            LayerSpec::dense(5, 2, Activation::Identity),
        ]);
        match net.validate() {
            Err(Error::Layer { layer: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn avg_head_only_last() {
        let net = NetworkSpec::new(vec![
            LayerSpec::AvgHead { in_dim: 4, groups: 2 },
            LayerSpec::dense(2, 2, Activation::Identity),
        ]);
        assert!(net.validate().is_err());
    }

    #[test]
    fn residual_widths_checked() {
        let net = NetworkSpec::mlp(&[3, 4, 4, 2], Activation::Tanh);
        assert!(net.clone().with_residuals(vec![(1, 2)]).validate().is_ok());
        assert!(net.clone().with_residuals(vec![(0, 2)]).validate().is_err());
        assert!(net.with_residuals(vec![(2, 1)]).validate().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let net = NetworkSpec::new(vec![
            LayerSpec::embedding(8, 4),
            LayerSpec::norm(4),
            LayerSpec::attention(4, 2, 2, true),
            LayerSpec::dense(4, 8, Activation::Identity),
        ])
        .with_residuals(vec![(1, 3)]);
        let back = NetworkSpec::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
