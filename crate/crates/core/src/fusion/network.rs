use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{self, param_name, Batch, Input, LayerSpec, NetworkSpec};
use crate::params::{ParamStore, Role};
use crate::rng;
use crate::tensor::Tensor;

use super::ops::{concat_vectors, fuse_columns, fuse_kernels};
use super::partition::FusionPartition;

/// How normalization layers are fused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// One normalization over the whole concatenated feature vector. Keeps
    /// the layer's original form; the output is no longer an ensemble.
    Rule,
    /// Each source's feature slice is normalized on its own, so every hidden
    /// representation is the concatenation of the sources'.
    Property,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rule" => Ok(Strategy::Rule),
            "property" => Ok(Strategy::Property),
            other => Err(Error::InvalidArgument(format!("unknown strategy `{other}` (rule|property)"))),
        }
    }
}

/// A layer's spec together with its parameter tensors, in
/// [`LayerSpec::param_shapes`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWithParams {
    pub spec: LayerSpec,
    pub tensors: Vec<Tensor>,
}

impl LayerWithParams {
    pub fn from_network(net: &NetworkSpec, params: &ParamStore, layer: usize) -> Result<Self> {
        let spec = net.layers.get(layer).cloned().ok_or(Error::Layer { layer, message: "no such layer".into() })?;
        let tensors = spec
            .param_shapes()
            .into_iter()
            .map(|(suffix, _, _)| {
                params
                    .tensor(&param_name(layer, suffix))
                    .ok_or(Error::Layer { layer, message: format!("missing parameter `{suffix}`") })
            })
            .collect::<Result<_>>()?;
        Ok(Self { spec, tensors })
    }
}

/// Where the source blocks sit inside a fused tensor.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockLayout {
    /// Block-diagonal kernel; source `i` owns rows `rows[i]..rows[i+1]` and
    /// columns `cols[i]..cols[i+1]`, every other coordinate is η.
    Diagonal { rows: Vec<usize>, cols: Vec<usize> },
    /// Column blocks of a matrix (embedding tables).
    Columns { cols: Vec<usize> },
    /// Consecutive segments of a vector.
    Segments { bounds: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedParam {
    pub suffix: &'static str,
    pub role: Role,
    pub tensor: Tensor,
    pub layout: BlockLayout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedLayer {
    pub spec: LayerSpec,
    pub params: Vec<FusedParam>,
}

fn prefix_sums(sizes: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

fn mismatch(layer: usize, reason: impl Into<String>) -> Error {
    Error::Incompatible { layer, reason: reason.into() }
}

/// Fuses two layers of the same kind.
pub fn fuse_layer(a: &LayerWithParams, b: &LayerWithParams, strategy: Strategy) -> Result<FusedLayer> {
    fuse_layers(&[a, b], strategy, 0)
}

/// Fuses the `layer`-th layers of several sources.
pub fn fuse_layers(parts: &[&LayerWithParams], strategy: Strategy, layer: usize) -> Result<FusedLayer> {
    let first = parts.first().ok_or_else(|| mismatch(layer, "nothing to fuse"))?;
    if let Some(p) = parts.iter().find(|p| std::mem::discriminant(&p.spec) != std::mem::discriminant(&first.spec)) {
        return Err(mismatch(layer, format!("{} vs {}", first.spec.kind_name(), p.spec.kind_name())));
    }
    let tensor = |i: usize, t: usize| &parts[i].tensors[t];
    let kernels = |t: usize| -> Result<FusedParam> {
        let ws: Vec<&Tensor> = (0..parts.len()).map(|i| tensor(i, t)).collect();
        Ok(FusedParam {
            suffix: "",
            role: Role::Kernel,
            tensor: fuse_kernels(&ws)?,
            layout: BlockLayout::Diagonal {
                rows: prefix_sums(ws.iter().map(|w| w.shape()[0])),
                cols: prefix_sums(ws.iter().map(|w| w.shape()[1])),
            },
        })
    };
    let vectors = |t: usize, role: Role| -> FusedParam {
        let vs: Vec<&Tensor> = (0..parts.len()).map(|i| tensor(i, t)).collect();
        FusedParam {
            suffix: "",
            role,
            tensor: concat_vectors(&vs),
            layout: BlockLayout::Segments { bounds: prefix_sums(vs.iter().map(|v| v.len())) },
        }
    };
    let named = |mut p: FusedParam, suffix: &'static str| {
        p.suffix = suffix;
        p
    };
    match &first.spec {
        LayerSpec::Dense { activation, .. } => {
            let mut in_dim = 0;
            let mut out_dim = 0;
            for p in parts {
                let LayerSpec::Dense { in_dim: i, out_dim: o, activation: act } = &p.spec else { unreachable!() };
                if act != activation {
                    return Err(mismatch(layer, format!("activation {activation:?} vs {act:?}")));
                }
                in_dim += i;
                out_dim += o;
            }
            Ok(FusedLayer {
                spec: LayerSpec::Dense { in_dim, out_dim, activation: *activation },
                params: vec![named(kernels(0)?, "kernel"), named(vectors(1, Role::Bias), "bias")],
            })
        }
        LayerSpec::RmsNormScale { .. } => {
            let mut dim = 0;
            let mut segments = Vec::new();
            for p in parts {
                let LayerSpec::RmsNormScale { dim: d, segments: s } = &p.spec else { unreachable!() };
                dim += d;
                segments.extend(LayerSpec::segment_widths(s, *d));
            }
            if strategy == Strategy::Rule {
                segments.clear();
            }
            Ok(FusedLayer {
                spec: LayerSpec::RmsNormScale { dim, segments },
                params: vec![named(vectors(0, Role::Scale), "scale")],
            })
        }
        LayerSpec::MultiHeadAttention { head_dim, causal, .. } => {
            let mut dim = 0;
            let mut heads = 0;
            for p in parts {
                let LayerSpec::MultiHeadAttention { dim: d, heads: h, head_dim: hd, causal: c } = &p.spec else {
                    unreachable!()
                };
                if hd != head_dim || c != causal {
                    return Err(mismatch(layer, "attention layers need equal head_dim and masking"));
                }
                dim += d;
                heads += h;
            }
            Ok(FusedLayer {
                spec: LayerSpec::MultiHeadAttention { dim, heads, head_dim: *head_dim, causal: *causal },
                params: vec![
                    named(kernels(0)?, "query"),
                    named(kernels(1)?, "key"),
                    named(kernels(2)?, "value"),
                    named(kernels(3)?, "output"),
                ],
            })
        }
        LayerSpec::Embedding { vocab, .. } => {
            let mut dim = 0;
            let mut segments = Vec::new();
            for p in parts {
                let LayerSpec::Embedding { vocab: v, dim: d, segments: s } = &p.spec else { unreachable!() };
                if v != vocab {
                    return Err(mismatch(layer, format!("vocabulary {vocab} vs {v}")));
                }
                dim += d;
                segments.extend(LayerSpec::segment_widths(s, *d));
            }
            let tables: Vec<&Tensor> = (0..parts.len()).map(|i| tensor(i, 0)).collect();
            Ok(FusedLayer {
                spec: LayerSpec::Embedding { vocab: *vocab, dim, segments },
                params: vec![FusedParam {
                    suffix: "embedding",
                    role: Role::Embedding,
                    tensor: fuse_columns(&tables)?,
                    layout: BlockLayout::Columns { cols: prefix_sums(tables.iter().map(|t| t.shape()[1])) },
                }],
            })
        }
        LayerSpec::AvgHead { in_dim, groups } => {
            let width = in_dim / groups;
            let mut total_in = 0;
            let mut total_groups = 0;
            for p in parts {
                let LayerSpec::AvgHead { in_dim: i, groups: g } = &p.spec else { unreachable!() };
                if g != groups || i / g != width {
                    return Err(mismatch(layer, "averaging heads need equal group counts and widths"));
                }
                total_in += i;
                total_groups += g;
            }
            Ok(FusedLayer { spec: LayerSpec::AvgHead { in_dim: total_in, groups: total_groups }, params: Vec::new() })
        }
    }
}

/// Default η noise scale before the `1/√fan_in` factor.
pub const DEFAULT_ZERO_BLOCK_SIGMA: f64 = 1e-3;

/// A fused network with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedNetwork {
    pub spec: NetworkSpec,
    pub params: ParamStore,
    pub partition: FusionPartition,
    pub strategy: Strategy,
    pub zero_block_sigma: f64,
    /// Architectures of the fused sources, in block order.
    pub sources: Vec<NetworkSpec>,
}

impl FusedNetwork {
    pub fn n(&self) -> usize {
        self.partition.n
    }

    pub fn forward(&self, x: &Input) -> Result<Tensor> {
        net::forward(&self.spec, &self.params, x)
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        net::batch_loss(&self.spec, &self.params, batch)
    }

    /// Parameters of source `i` as currently held in the fused state `w`.
    pub fn source_params(&self, w: &[f64], i: usize) -> Result<ParamStore> {
        let layout = self.sources[i].zero_params()?;
        layout.with_flat(self.partition.theta_values(w, i))
    }

    pub fn is_self_fusion(&self) -> bool {
        self.sources.windows(2).all(|w| w[0] == w[1])
    }

    /// Same fused network with other parameter values.
    pub fn with_flat(&self, w: Vec<f64>) -> Result<Self> {
        Ok(Self { params: self.params.with_flat(w)?, ..self.clone() })
    }
}

/// `DF(f, f′)`: layerwise fusion followed by logit averaging.
pub fn deep_fuse(
    f: (&NetworkSpec, &ParamStore),
    f2: (&NetworkSpec, &ParamStore),
    strategy: Strategy,
    zero_block_sigma: f64,
    seed: u64,
) -> Result<FusedNetwork> {
    deep_fuse_many(&[f, f2], strategy, zero_block_sigma, seed)
}

/// Deep fusion of `n` copies of one network.
pub fn self_deep_fuse(
    f: (&NetworkSpec, &ParamStore),
    n: usize,
    strategy: Strategy,
    zero_block_sigma: f64,
    seed: u64,
) -> Result<FusedNetwork> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("self fusion needs n ≥ 2, got {n}")));
    }
    deep_fuse_many(&vec![f; n], strategy, zero_block_sigma, seed)
}

/// Fusion of any number of layerwise-compatible sources.
pub fn deep_fuse_many(
    sources: &[(&NetworkSpec, &ParamStore)],
    strategy: Strategy,
    zero_block_sigma: f64,
    seed: u64,
) -> Result<FusedNetwork> {
    if sources.len() < 2 {
        return Err(Error::InvalidArgument("fusion needs at least two sources".into()));
    }
    if !(zero_block_sigma >= 0.0 && zero_block_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("zero_block_sigma must be ≥ 0, got {zero_block_sigma}")));
    }
    let (base, _) = sources[0];
    for (net, params) in sources {
        net.validate()?;
        net.check_params(params)?;
        if net.layers.len() != base.layers.len() {
            return Err(mismatch(0, format!("{} layers vs {}", base.layers.len(), net.layers.len())));
        }
        if net.residual_links != base.residual_links {
            return Err(mismatch(0, "residual links differ"));
        }
        if net.takes_tokens() != base.takes_tokens() || net.input_dim() != base.input_dim() {
            return Err(mismatch(0, "sources take different inputs"));
        }
    }
    let n = sources.len();
    let depth = base.layers.len();

    let mut layers = Vec::with_capacity(depth + 1);
    let mut fused_params: Vec<(usize, FusedParam)> = Vec::new();
    for k in 0..depth {
        let parts = sources
            .iter()
            .map(|(net, params)| LayerWithParams::from_network(net, params, k))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&LayerWithParams> = parts.iter().collect();
        let fused = fuse_layers(&refs, strategy, k)?;
        layers.push(fused.spec);
        fused_params.extend(fused.params.into_iter().map(|p| (k, p)));
    }
    if !matches!(layers.last(), Some(LayerSpec::AvgHead { .. })) {
        let outs: Vec<usize> = sources.iter().map(|(net, _)| net.output_dim()).collect();
        if outs.windows(2).any(|w| w[0] != w[1]) {
            return Err(mismatch(depth - 1, format!("output widths {outs:?} cannot be averaged")));
        }
        layers.push(LayerSpec::AvgHead { in_dim: outs.iter().sum(), groups: n });
    }
    let spec = NetworkSpec {
        layers,
        residual_links: base.residual_links.clone(),
        input_copies: sources.iter().map(|(net, _)| net.input_copies).sum(),
    };

    let mut params = ParamStore::new();
    let mut theta_blocks: Vec<Vec<usize>> = sources.iter().map(|(_, p)| vec![usize::MAX; p.len()]).collect();
    let mut eta = Vec::new();
    let mut mirror = Vec::new();
    let mut rng = rng::stream(seed);
    for (k, p) in fused_params {
        let name = param_name(k, p.suffix);
        let base_off = params.len();
        let src_off: Vec<usize> = sources
            .iter()
            .map(|(_, sp)| sp.entry(&name).map(|e| e.offset).expect("source entry exists"))
            .collect();
        let mut tensor = p.tensor;
        match &p.layout {
            BlockLayout::Diagonal { rows, cols } => {
                let total_cols = *cols.last().unwrap();
                let fan_in = *rows.last().unwrap();
                let std = zero_block_sigma / (fan_in as f64).sqrt();
                let block_of = |bounds: &[usize], x: usize| bounds.windows(2).position(|w| x < w[1]).unwrap();
                let mut noise_at = Vec::new();
                for r in 0..fan_in {
                    let pr = block_of(rows, r);
                    for c in 0..total_cols {
                        let pc = block_of(cols, c);
                        let fused_idx = base_off + r * total_cols + c;
                        let (lr, lc) = (r - rows[pr], c - cols[pc]);
                        if pr == pc {
                            let width = cols[pc + 1] - cols[pc];
                            theta_blocks[pr][src_off[pr] + lr * width + lc] = fused_idx;
                        } else {
                            let height = rows[pc + 1] - rows[pc];
                            let mr = rows[pc] + lr % height;
                            eta.push(fused_idx);
                            mirror.push(base_off + mr * total_cols + c);
                            noise_at.push(r * total_cols + c);
                        }
                    }
                }
                let noise = rng::normal_vec(&mut rng, noise_at.len(), std);
                for (pos, z) in noise_at.into_iter().zip(noise) {
                    tensor.data_mut()[pos] += z;
                }
            }
            BlockLayout::Columns { cols } => {
                let total_cols = *cols.last().unwrap();
                let vocab = tensor.shape()[0];
                for r in 0..vocab {
                    for i in 0..n {
                        let width = cols[i + 1] - cols[i];
                        for lc in 0..width {
                            theta_blocks[i][src_off[i] + r * width + lc] = base_off + r * total_cols + cols[i] + lc;
                        }
                    }
                }
            }
            BlockLayout::Segments { bounds } => {
                for i in 0..n {
                    for l in 0..bounds[i + 1] - bounds[i] {
                        theta_blocks[i][src_off[i] + l] = base_off + bounds[i] + l;
                    }
                }
            }
        }
        params.push(name, p.role, tensor)?;
    }
    // η entries were pushed entry by entry in row-major order, so already sorted.
    let partition = FusionPartition { n, theta_blocks, eta_indices: eta, mirror };
    partition.validate(&params)?;
    spec.validate()?;
    Ok(FusedNetwork {
        spec,
        params,
        partition,
        strategy,
        zero_block_sigma,
        sources: sources.iter().map(|(net, _)| (*net).clone()).collect(),
    })
}

/// `‖DF_rule(f, f′)(x) − DF_property(f, f′)(x)‖∞` with exact zero blocks.
pub fn strategy_divergence(
    f: (&NetworkSpec, &ParamStore),
    f2: (&NetworkSpec, &ParamStore),
    x: &Input,
) -> Result<f64> {
    let rule = deep_fuse(f, f2, Strategy::Rule, 0.0, 0)?;
    let property = deep_fuse(f, f2, Strategy::Property, 0.0, 0)?;
    Ok(rule.forward(x)?.max_abs_diff(&property.forward(x)?))
}
