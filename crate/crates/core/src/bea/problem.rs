use crate::diff::{self, Graph, Objective, Var};
use crate::error::{Error, Result};
use crate::fusion::FusedNetwork;
use crate::net::{build_forward, build_loss, Batch, BoundParams, NetLoss};
use crate::params::{norm2, Entry, ParamStore};

/// A fused network together with the batch its losses are measured on.
///
/// `L₁` is the loss of the average of the source sub-networks, each reading
/// its own θ block of the fused state (cross blocks play no part). `L₂` is
/// the loss of the whole fused network.
pub struct BeaProblem<'a> {
    pub fused: &'a FusedNetwork,
    pub batch: &'a Batch,
    layouts: Vec<ParamStore>,
}

impl<'a> BeaProblem<'a> {
    pub fn new(fused: &'a FusedNetwork, batch: &'a Batch) -> Result<Self> {
        fused.partition.validate(&fused.params)?;
        let layouts = fused.sources.iter().map(|s| s.zero_params()).collect::<Result<Vec<_>>>()?;
        for (i, l) in layouts.iter().enumerate() {
            if l.len() != fused.partition.theta_blocks[i].len() {
                return Err(Error::Partition(format!("θ block {i} does not match its source")));
            }
        }
        Ok(Self { fused, batch, layouts })
    }

    pub fn n(&self) -> usize {
        self.fused.n()
    }

    pub fn len(&self) -> usize {
        self.fused.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fusion-time state.
    pub fn w0(&self) -> &[f64] {
        self.fused.params.flat()
    }

    pub fn l1(&self) -> impl Objective + '_ {
        move |g: &mut Graph, w: Var| self.build_l1(g, w)
    }

    pub fn l2(&self) -> NetLoss<'_> {
        NetLoss::new(&self.fused.spec, &self.fused.params, self.batch)
    }

    /// Loss of source `i` on its own flat parameter vector.
    pub fn source_loss(&self, i: usize) -> NetLoss<'_> {
        NetLoss::new(&self.fused.sources[i], &self.layouts[i], self.batch)
    }

    fn build_l1(&self, g: &mut Graph, w: Var) -> Result<Var> {
        let part = &self.fused.partition;
        let mut outputs = Vec::with_capacity(self.n());
        for (i, layout) in self.layouts.iter().enumerate() {
            let vars = layout
                .entries()
                .iter()
                .map(|e: &Entry| {
                    let idx = e.range().map(|k| part.theta_blocks[i][k]).collect();
                    g.gather(w, idx, e.shape.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            let bound = BoundParams::from_vars(layout.entries(), vars);
            let points = build_forward(g, &self.fused.sources[i], &bound, &self.batch.input)?;
            outputs.push(points.last().copied().flatten().expect("at least one layer"));
        }
        let mut sum = outputs[0];
        for &o in &outputs[1..] {
            sum = g.add(sum, o)?;
        }
        let avg = g.scale(sum, 1.0 / self.n() as f64);
        build_loss(g, avg, &self.batch.target)
    }

    pub fn loss_l1(&self, w: &[f64]) -> Result<f64> {
        diff::value(&self.l1(), w)
    }

    pub fn loss_l2(&self, w: &[f64]) -> Result<f64> {
        diff::value(&self.l2(), w)
    }

    /// Errors unless every θ block agrees to 1e-12 and, if `eta_zero`, η is 0.
    pub fn require_on_submanifold(&self, w: &[f64], eta_zero: bool) -> Result<()> {
        let (gap, eta) = self.fused.partition.distance_to_submanifold(w);
        if gap > 1e-12 {
            return Err(Error::OffSubmanifold(format!("θ blocks differ by {gap:e}")));
        }
        if eta_zero && eta > 0.0 {
            return Err(Error::OffSubmanifold(format!("η is not zero (max |η| = {eta:e})")));
        }
        Ok(())
    }
}

/// Scalar diagnostics of the modified loss at one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModifiedLossBound {
    /// `(1/n)ΣL_S(θᵢ) + L_B + h/(4n²)Σ‖∇L_S(θᵢ)‖² + hα²/4‖∇L_B‖²`.
    pub bound: f64,
    /// `L₁ + L_B + h/4‖∇L₁‖² + hα²/4‖∇L_B‖²`.
    pub exact: f64,
    /// `bound − exact`.
    pub gap: f64,
    /// `(1/n)ΣL_S(θᵢ) − L₁`, nonnegative for a loss convex in the prediction.
    pub jensen_gap: f64,
    /// Difference of the two first-loss penalty terms.
    pub penalty_gap: f64,
}

impl BeaProblem<'_> {
    /// Modified loss of self fusion,
    /// `L_S(θ) + L_B(w) + h/4‖∇_θ L_S(θ)‖² + hα²/4‖∇_w L_B(w)‖²`,
    /// with θ read from the (necessarily equal) θ blocks of `w`.
    pub fn modified_loss(&self, w: &[f64], h: f64, alpha: f64) -> Result<f64> {
        if !self.fused.is_self_fusion() {
            return Err(Error::InvalidArgument("the exact modified loss needs a self-fused network".into()));
        }
        self.require_on_submanifold(w, false)?;
        let theta = self.fused.partition.theta_values(w, 0);
        let (ls, gs) = diff::value_and_grad(&self.source_loss(0), &theta)?;
        let (lb, gb) = diff::value_and_grad(&self.l2(), w)?;
        Ok(ls + lb + h / 4.0 * norm2(&gs).powi(2) + h * alpha * alpha / 4.0 * norm2(&gb).powi(2))
    }

    /// Upper-bound form of the modified loss for n sources, compared with
    /// the value built from `L₁` itself.
    pub fn modified_loss_bound(&self, w: &[f64], h: f64, alpha: f64) -> Result<ModifiedLossBound> {
        let n = self.n() as f64;
        let part = &self.fused.partition;
        let (mut mean_ls, mut pen_s) = (0.0, 0.0);
        for i in 0..self.n() {
            let (l, g) = diff::value_and_grad(&self.source_loss(i), &part.theta_values(w, i))?;
            mean_ls += l / n;
            pen_s += norm2(&g).powi(2);
        }
        let (l1, g1) = diff::value_and_grad(&self.l1(), w)?;
        let (lb, gb) = diff::value_and_grad(&self.l2(), w)?;
        let big = lb + h * alpha * alpha / 4.0 * norm2(&gb).powi(2);
        let bound_pen = h / (4.0 * n * n) * pen_s;
        let exact_pen = h / 4.0 * norm2(&g1).powi(2);
        let bound = mean_ls + bound_pen + big;
        let exact = l1 + exact_pen + big;
        Ok(ModifiedLossBound {
            bound,
            exact,
            gap: bound - exact,
            jensen_gap: mean_ls - l1,
            penalty_gap: bound_pen - exact_pen,
        })
    }
}
