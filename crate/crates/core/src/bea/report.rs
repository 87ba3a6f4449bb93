use serde::{Deserialize, Serialize};

use super::flow::{order_of_accuracy, AlphaRow};
use super::BeaProblem;
use crate::error::{Error, Result};
use crate::fusion::{deep_fuse_many, self_deep_fuse, FusedNetwork, Strategy};
use crate::net::{toy_mlp, Batch, Input, NetworkSpec, Target};
use crate::rng;
use crate::tensor::Tensor;

/// Learning rates of the order-of-accuracy ladder.
pub const DEFAULT_LADDER: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BEAConfig {
    /// Learning rate of the sources.
    pub h: f64,
    /// Ratio of the fused network's learning rate to `h`.
    pub alpha: f64,
    /// Number of fused copies.
    pub n: usize,
    /// Initial RK4 substeps of the modified flow.
    pub integrator_steps: usize,
}

impl Default for BEAConfig {
    fn default() -> Self {
        Self { h: 1e-2, alpha: 1.0, n: 2, integrator_steps: 64 }
    }
}

impl BEAConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.h > 0.0 && self.h.is_finite() && self.alpha > 0.0 && self.alpha.is_finite();
        if !ok || self.n < 2 || self.integrator_steps == 0 {
            return Err(Error::InvalidArgument(format!("invalid BEA config {self:?}")));
        }
        Ok(())
    }
}

/// Outcome of one verification run on a self-fused smooth network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BEAReport {
    pub h: f64,
    pub alpha: f64,
    pub n: usize,
    pub integrator_steps: usize,
    pub seed: u64,
    pub params: usize,
    pub lemma1_residual: f64,
    pub lemma2_residual: f64,
    /// Equal-block residual of fused kernel gradients; only defined for n = 2.
    pub lemma2_block_residual: Option<f64>,
    pub bracket_theta_norm: f64,
    pub bracket_eta_norm: f64,
    pub slope_plain: f64,
    pub slope_modified: f64,
    /// Bound minus exact modified loss on a fusion of distinct sources.
    pub bound_gap: f64,
}

impl BEAReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn csv_header() -> &'static str {
        "h,alpha,n,integrator_steps,seed,params,lemma1_residual,lemma2_residual,lemma2_block_residual,\
bracket_theta_norm,bracket_eta_norm,slope_plain,slope_modified,bound_gap"
    }

    /// Header line and one data row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self).map_err(csv_error)?;
        String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn all_finite(&self) -> bool {
        [
            self.lemma1_residual,
            self.lemma2_residual,
            self.lemma2_block_residual.unwrap_or(0.0),
            self.bracket_theta_norm,
            self.bracket_eta_norm,
            self.slope_plain,
            self.slope_modified,
            self.bound_gap,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("{other:?}")),
    }
}

/// `alpha,bracket_term,gradient_norm,ratio` table.
pub fn alpha_table_csv(rows: &[AlphaRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn probe_batch(net: &NetworkSpec, rows: usize, seed: u64) -> Result<Batch> {
    let input = net.input_dim().ok_or_else(|| Error::InvalidArgument("probe network must take features".into()))?;
    let mut r = rng::stream(rng::derive(seed, 0xBEA));
    let x = Tensor::matrix(rows, input, rng::normal_vec(&mut r, rows * input, 1.0))?;
    let out = net.output_dim();
    let y = Tensor::matrix(rows, out, rng::normal_vec(&mut r, rows * out, 1.0))?;
    Ok(Batch { input: Input::features(x), target: Target::Regression(y) })
}

/// The bundled smooth toy MLP self-fused `n` times at a random
/// non-critical state drawn from `seed`, with its probe batch.
pub fn toy_verification_problem(n: usize, seed: u64) -> Result<(FusedNetwork, Batch)> {
    let net = toy_mlp();
    let params = net.init_params(seed)?;
    let batch = probe_batch(&net, 8, seed)?;
    Ok((self_deep_fuse((&net, &params), n, Strategy::Property, 0.0, 0)?, batch))
}

/// Runs every check on [`toy_verification_problem`].
pub fn run_verification(cfg: &BEAConfig, ladder: &[f64], seed: u64) -> Result<BEAReport> {
    cfg.validate()?;
    let net = toy_mlp();
    let (fused, batch) = toy_verification_problem(cfg.n, seed)?;
    let prob = BeaProblem::new(&fused, &batch)?;

    let lemma1 = prob.verify_lemma_scaled_gradient()?;
    let lemma2 = prob.verify_lemma_same_gradient()?;
    let (theta, eta) = prob.verify_lemma_bracket_structure()?;
    let order = order_of_accuracy(&prob.l1(), &prob.l2(), prob.w0(), ladder, cfg.alpha, cfg.integrator_steps)?;

    let sources: Vec<_> = (0..cfg.n as u64).map(|i| net.init_params(rng::derive(seed, 100 + i))).collect::<Result<_>>()?;
    let pairs: Vec<_> = sources.iter().map(|p| (&net, p)).collect();
    let distinct = deep_fuse_many(&pairs, Strategy::Property, 0.0, 0)?;
    let bound = BeaProblem::new(&distinct, &batch)?.modified_loss_bound(distinct.params.flat(), cfg.h, cfg.alpha)?;

    let report = BEAReport {
        h: cfg.h,
        alpha: cfg.alpha,
        n: cfg.n,
        integrator_steps: cfg.integrator_steps,
        seed,
        params: fused.params.len(),
        lemma1_residual: lemma1,
        lemma2_residual: lemma2.residual,
        lemma2_block_residual: lemma2.block_residual,
        bracket_theta_norm: theta,
        bracket_eta_norm: eta,
        slope_plain: order.slope_plain,
        slope_modified: order.slope_modified,
        bound_gap: bound.gap,
    };
    if !report.all_finite() {
        return Err(Error::NonFinite("verification report".into()));
    }
    Ok(report)
}
