//! Small reference architectures.

use serde::{Deserialize, Serialize};

use super::spec::{Activation, LayerSpec, NetworkSpec};

/// Width settings of the single-stack toy transformer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyDims {
    pub vocab: usize,
    pub embedding: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp: usize,
}

impl ToyDims {
    /// 1/16 of the widths of a 512-wide, 1024-mlp encoder, 2 heads.
    pub fn small() -> Self {
        Self { vocab: 16, embedding: 32, heads: 2, head_dim: 16, mlp: 64 }
    }
}

/// Embedding → [norm → attention] → [norm → gelu MLP] → norm → logits, with
/// residual connections around the attention and MLP sub-blocks.
pub fn toy_transformer(d: ToyDims) -> NetworkSpec {
    NetworkSpec::new(vec![
        LayerSpec::embedding(d.vocab, d.embedding),
        LayerSpec::norm(d.embedding),
        LayerSpec::attention(d.embedding, d.heads, d.head_dim, true),
        LayerSpec::norm(d.embedding),
        LayerSpec::dense(d.embedding, d.mlp, Activation::Gelu),
        LayerSpec::dense(d.mlp, d.embedding, Activation::Identity),
        LayerSpec::norm(d.embedding),
        LayerSpec::dense(d.embedding, d.vocab, Activation::Identity),
    ])
    .with_residuals(vec![(1, 3), (3, 6)])
}

/// The 3→4→2 tanh MLP used as the default verification network (26
/// parameters; 92 once fused with itself).
pub fn toy_mlp() -> NetworkSpec {
    NetworkSpec::mlp(&[3, 4, 2], Activation::Tanh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_nets_validate() {
        toy_transformer(ToyDims::small()).validate().unwrap();
        assert_eq!(toy_mlp().param_count(), 26);
    }
}
