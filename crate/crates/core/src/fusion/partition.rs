use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Which fused coordinates came from which source.
///
/// `theta_blocks[i][k]` is the fused flat index holding coordinate `k` of
/// source `i`'s flat parameter vector. `eta_indices` (ascending) are the
/// coordinates of the off-diagonal blocks that start at zero, and
/// `mirror[j]` is the same-layer θ coordinate that plays the same role as
/// `eta_indices[j]` when every source holds the same parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionPartition {
    pub n: usize,
    pub theta_blocks: Vec<Vec<usize>>,
    pub eta_indices: Vec<usize>,
    pub mirror: Vec<usize>,
}

impl FusionPartition {
    pub fn total_len(&self) -> usize {
        self.theta_blocks.iter().map(Vec::len).sum::<usize>() + self.eta_indices.len()
    }

    pub fn mirror_of(&self, eta: usize) -> Option<usize> {
        self.eta_indices.binary_search(&eta).ok().map(|j| self.mirror[j])
    }

    pub fn is_eta(&self, index: usize) -> bool {
        self.eta_indices.binary_search(&index).is_ok()
    }

    /// Source `i`'s flat parameter vector read out of fused `w`.
    pub fn theta_values(&self, w: &[f64], i: usize) -> Vec<f64> {
        self.theta_blocks[i].iter().map(|&j| w[j]).collect()
    }

    pub fn eta_values(&self, w: &[f64]) -> Vec<f64> {
        self.eta_indices.iter().map(|&j| w[j]).collect()
    }

    /// 1 on θ coordinates, 0 on η coordinates.
    pub fn theta_mask(&self, len: usize) -> Vec<f64> {
        let mut m = vec![1.0; len];
        for &j in &self.eta_indices {
            m[j] = 0.0;
        }
        m
    }

    /// Every index in exactly one set, η mirrors inside their own entry.
    pub fn validate(&self, params: &ParamStore) -> Result<()> {
        let len = params.len();
        if self.theta_blocks.len() != self.n || self.n == 0 {
            return Err(Error::Partition(format!("{} θ blocks for n = {}", self.theta_blocks.len(), self.n)));
        }
        if self.mirror.len() != self.eta_indices.len() {
            return Err(Error::Partition("η index without mirror".into()));
        }
        let mut seen = vec![false; len];
        let all = self.theta_blocks.iter().flatten().chain(&self.eta_indices);
        for &j in all {
            if j >= len || std::mem::replace(&mut seen[j], true) {
                return Err(Error::Partition(format!("index {j} out of range or assigned twice")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Partition("some parameters belong to no block".into()));
        }
        if self.eta_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Partition("η indices must be ascending".into()));
        }
        for (&eta, &m) in self.eta_indices.iter().zip(&self.mirror) {
            if self.is_eta(m) || params.entry_at(eta) != params.entry_at(m) {
                return Err(Error::Partition(format!("mirror of η {eta} is not a θ of the same entry")));
            }
        }
        Ok(())
    }

    /// Largest difference between θ blocks (`‖θ_i − θ_0‖∞`) and largest |η|.
    pub fn distance_to_submanifold(&self, w: &[f64]) -> (f64, f64) {
        let base = self.theta_values(w, 0);
        let mut theta_gap: f64 = 0.0;
        for i in 1..self.n {
            if self.theta_blocks[i].len() != base.len() {
                return (f64::INFINITY, 0.0);
            }
            for (k, &j) in self.theta_blocks[i].iter().enumerate() {
                theta_gap = theta_gap.max((w[j] - base[k]).abs());
            }
        }
        let eta = self.eta_indices.iter().fold(0.0f64, |m, &j| m.max(w[j].abs()));
        (theta_gap, eta)
    }
}
