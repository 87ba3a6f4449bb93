use super::flow::{alpha_row, AlphaRow};
use super::BeaProblem;
use crate::diff;
use crate::error::{Error, Result};
use crate::net::{forward, Batch, LayerSpec, Target};
use crate::params::Role;

/// Result of the η-gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SameGradient {
    /// `max_η |∇_η L_B − (1/n)∇_{mirror(η)} L_S|`.
    pub residual: f64,
    /// For n = 2: largest difference between any block of a fused dense
    /// kernel's gradient and its first block.
    pub block_residual: Option<f64>,
}

impl BeaProblem<'_> {
    fn require_self_fusion(&self) -> Result<()> {
        if self.fused.is_self_fusion() {
            Ok(())
        } else {
            Err(Error::InvalidArgument("check needs a self-fused network".into()))
        }
    }

    /// `max over θ blocks of |∇_{θᵢ} L_B − (1/n)∇_θ L_S|` at the fusion point.
    pub fn verify_lemma_scaled_gradient(&self) -> Result<f64> {
        self.require_self_fusion()?;
        self.require_on_submanifold(self.w0(), true)?;
        self.scaled_gradient_residual(self.w0())
    }

    /// The same residual at any state, reading θ from block 0.
    pub fn scaled_gradient_residual(&self, w: &[f64]) -> Result<f64> {
        let part = &self.fused.partition;
        let gs = diff::grad_flat(&self.source_loss(0), &part.theta_values(w, 0))?;
        let gb = diff::grad_flat(&self.l2(), w)?;
        let n = self.n() as f64;
        let mut r: f64 = 0.0;
        for block in &part.theta_blocks {
            for (k, &j) in block.iter().enumerate() {
                r = r.max((gb[j] - gs[k] / n).abs());
            }
        }
        Ok(r)
    }

    /// η gradients against their mirrors at the fusion point.
    pub fn verify_lemma_same_gradient(&self) -> Result<SameGradient> {
        self.require_self_fusion()?;
        self.require_on_submanifold(self.w0(), true)?;
        self.same_gradient_residual(self.w0())
    }

    /// The same check at any state; used as a negative control off the
    /// fusion point.
    pub fn same_gradient_residual(&self, w: &[f64]) -> Result<SameGradient> {
        let part = &self.fused.partition;
        let gs = diff::grad_flat(&self.source_loss(0), &part.theta_values(w, 0))?;
        let gb = diff::grad_flat(&self.l2(), w)?;
        let n = self.n() as f64;
        let mut local = vec![usize::MAX; w.len()];
        for block in &part.theta_blocks {
            for (k, &j) in block.iter().enumerate() {
                local[j] = k;
            }
        }
        let mut residual: f64 = 0.0;
        for (&eta, &m) in part.eta_indices.iter().zip(&part.mirror) {
            if local[m] == usize::MAX {
                return Err(Error::Partition(format!("η {eta} has no θ mirror")));
            }
            residual = residual.max((gb[eta] - gs[local[m]] / n).abs());
        }
        let block_residual = (self.n() == 2).then(|| self.block_form_residual(&gb));
        Ok(SameGradient { residual, block_residual })
    }

    fn block_form_residual(&self, gb: &[f64]) -> f64 {
        let mut r: f64 = 0.0;
        for e in self.fused.params.entries() {
            let dense = e.role == Role::Kernel && e.shape.len() == 2 && e.shape[0] % 2 == 0 && e.shape[1] % 2 == 0;
            if !dense {
                continue;
            }
            let (rows, cols) = (e.shape[0], e.shape[1]);
            let (br, bc) = (rows / 2, cols / 2);
            let g = &gb[e.range()];
            for i in 0..br {
                for j in 0..bc {
                    let first = g[i * cols + j];
                    for (di, dj) in [(0, bc), (br, 0), (br, bc)] {
                        r = r.max((g[(i + di) * cols + j + dj] - first).abs());
                    }
                }
            }
        }
        r
    }

    /// ∞-norms of `[∇L₁, ∇L₂]` restricted to θ and to η coordinates at the
    /// fusion point.
    pub fn verify_lemma_bracket_structure(&self) -> Result<(f64, f64)> {
        self.require_on_submanifold(self.w0(), true)?;
        self.bracket_split(self.w0())
    }

    pub fn bracket_split(&self, w: &[f64]) -> Result<(f64, f64)> {
        let b = diff::lie_bracket_flat(&self.l1(), &self.l2(), w)?;
        let part = &self.fused.partition;
        let (mut theta, mut eta) = (0.0f64, 0.0f64);
        for (j, v) in b.iter().enumerate() {
            if part.is_eta(j) {
                eta = eta.max(v.abs());
            } else {
                theta = theta.max(v.abs());
            }
        }
        Ok((theta, eta))
    }

    /// Relative size of the bracket term of the modified equation for each
    /// α, at the fusion point.
    pub fn bracket_vs_alpha(&self, h: f64, alphas: &[f64]) -> Result<Vec<AlphaRow>> {
        let (l1, l2) = (self.l1(), self.l2());
        let w = self.w0();
        let bracket = diff::lie_bracket_flat(&l1, &l2, w)?;
        alphas.iter().map(|&a| alpha_row(&l1, &l2, &bracket, w, h, a)).collect()
    }

    /// Batch whose regression labels sit `lambda` times as far from the
    /// source network's predictions: `y' = f(x) + λ(y − f(x))`. For the
    /// squared loss this scales `∇L_S` by exactly `lambda`.
    pub fn shrink_residuals(&self, lambda: f64) -> Result<Batch> {
        let Target::Regression(y) = &self.batch.target else {
            return Err(Error::InvalidArgument("residual shrinking needs regression targets".into()));
        };
        let src = self.fused.source_params(self.w0(), 0)?;
        let pred = forward(&self.fused.sources[0], &src, &self.batch.input)?;
        let shrunk = pred.data().iter().zip(y.data()).map(|(p, t)| p + lambda * (t - p)).collect();
        Ok(Batch {
            input: self.batch.input.clone(),
            target: Target::Regression(crate::Tensor::new(y.shape().to_vec(), shrunk)?),
        })
    }
}

/// Whether every layer of the fused network is smooth enough for the
/// second-order checks.
pub fn is_smooth(spec: &crate::net::NetworkSpec) -> bool {
    spec.layers.iter().all(|l| match l {
        LayerSpec::Dense { activation, .. } => activation.is_smooth(),
        _ => true,
    })
}
