use crate::diff::{self, Objective};
use crate::error::{Error, Result};
use crate::params::norm2;

/// Largest substep count tried while halving the integrator step.
pub const MAX_SUBSTEPS: usize = 1 << 14;

/// Change between successive halvings below which the flow is accepted.
pub const FLOW_TOLERANCE: f64 = 1e-12;

fn check_finite(w: &[f64], what: &str) -> Result<()> {
    if w.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `w₁ = w₀ − h∇L₁(w₀)` followed by `w₂ = w₁ − αh∇L₂(w₁)`.
pub fn composite_update(
    l1: &dyn Objective,
    l2: &dyn Objective,
    w0: &[f64],
    h: f64,
    alpha: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g1 = diff::grad_flat(l1, w0)?;
    check_finite(&g1, "gradient of the first loss")?;
    let w1: Vec<f64> = w0.iter().zip(&g1).map(|(w, g)| w - h * g).collect();
    let g2 = diff::grad_flat(l2, &w1)?;
    check_finite(&g2, "gradient of the second loss")?;
    let w2 = w1.iter().zip(&g2).map(|(w, g)| w - alpha * h * g).collect();
    Ok((w1, w2))
}

/// Right-hand side of the modified equation,
/// `−∇L̃ + (hα/2)[∇L₁, ∇L₂]` with
/// `L̃ = L₁ + αL₂ + h/4‖∇L₁‖² + hα²/4‖∇L₂‖²`,
/// or `−∇L̃` alone when `include_bracket` is false.
pub fn flow_field(
    l1: &dyn Objective,
    l2: &dyn Objective,
    w: &[f64],
    h: f64,
    alpha: f64,
    include_bracket: bool,
) -> Result<Vec<f64>> {
    let g1 = diff::grad_flat(l1, w)?;
    let g2 = diff::grad_flat(l2, w)?;
    // with the bracket: H₁(g₁ + αg₂) + αH₂(αg₂ − g₁); without: H₁g₁ + α²H₂g₂
    let (u1, u2): (Vec<f64>, Vec<f64>) = if include_bracket {
        (
            g1.iter().zip(&g2).map(|(a, b)| a + alpha * b).collect(),
            g1.iter().zip(&g2).map(|(a, b)| alpha * (alpha * b - a)).collect(),
        )
    } else {
        (g1.clone(), g2.iter().map(|b| alpha * alpha * b).collect())
    };
    let hu1 = diff::hvp_flat(l1, w, &u1)?;
    let hu2 = diff::hvp_flat(l2, w, &u2)?;
    let out: Vec<f64> = (0..w.len())
        .map(|j| -g1[j] - alpha * g2[j] - h / 2.0 * (hu1[j] + hu2[j]))
        .collect();
    check_finite(&out, "modified flow field")?;
    Ok(out)
}

/// `−∇L̃` at `w` (the flow field without the bracket term).
pub fn modified_gradient(l1: &dyn Objective, l2: &dyn Objective, w: &[f64], h: f64, alpha: f64) -> Result<Vec<f64>> {
    let neg = flow_field(l1, l2, w, h, alpha, false)?;
    Ok(neg.into_iter().map(|v| -v).collect())
}

fn rk4(
    l1: &dyn Objective,
    l2: &dyn Objective,
    w0: &[f64],
    h: f64,
    alpha: f64,
    include_bracket: bool,
    substeps: usize,
) -> Result<Vec<f64>> {
    let dt = h / substeps as f64;
    let axpy = |w: &[f64], k: &[f64], s: f64| -> Vec<f64> { w.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let mut w = w0.to_vec();
    for _ in 0..substeps {
        let f = |x: &[f64]| flow_field(l1, l2, x, h, alpha, include_bracket);
        let k1 = f(&w)?;
        let k2 = f(&axpy(&w, &k1, dt / 2.0))?;
        let k3 = f(&axpy(&w, &k2, dt / 2.0))?;
        let k4 = f(&axpy(&w, &k3, dt))?;
        for j in 0..w.len() {
            w[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        check_finite(&w, "modified flow state")?;
    }
    Ok(w)
}

/// State of the modified flow started at `w0` after time `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowResult {
    pub w: Vec<f64>,
    /// RK4 substeps of the accepted solution.
    pub substeps: usize,
}

/// Integrates the modified equation over `[0, h]` with classical RK4,
/// starting from `substeps` and halving the step until two successive
/// solutions differ by less than [`FLOW_TOLERANCE`].
pub fn modified_flow(
    l1: &dyn Objective,
    l2: &dyn Objective,
    w0: &[f64],
    h: f64,
    alpha: f64,
    substeps: usize,
    include_bracket: bool,
) -> Result<FlowResult> {
    if substeps == 0 {
        return Err(Error::InvalidArgument("integrator needs at least one substep".into()));
    }
    let mut n = substeps;
    let mut w = rk4(l1, l2, w0, h, alpha, include_bracket, n)?;
    while n < MAX_SUBSTEPS {
        let finer = rk4(l1, l2, w0, h, alpha, include_bracket, 2 * n)?;
        let change = finer.iter().zip(&w).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        w = finer;
        n *= 2;
        if change < FLOW_TOLERANCE {
            break;
        }
    }
    Ok(FlowResult { w, substeps: n })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 || x.len() != y.len() || x.iter().chain(y).any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::InvalidArgument("slope fit needs at least two positive points".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// One learning rate of an order-of-accuracy ladder.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LadderPoint {
    pub h: f64,
    /// `‖w₂ − w_plain(h)‖∞`.
    pub plain_error: f64,
    /// `‖w₂ − w_modified(h)‖∞`.
    pub modified_error: f64,
    /// Relative change of `L₂` over the composite step.
    pub loss_change: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OrderOfAccuracy {
    pub points: Vec<LadderPoint>,
    pub slope_plain: f64,
    pub slope_modified: f64,
}

/// Distance between the composite update and the flows with and without
/// the bracket term, over a ladder of learning rates, with fitted slopes.
pub fn order_of_accuracy(
    l1: &dyn Objective,
    l2: &dyn Objective,
    w0: &[f64],
    ladder: &[f64],
    alpha: f64,
    substeps: usize,
) -> Result<OrderOfAccuracy> {
    let base = diff::value(l2, w0)?;
    let mut points = Vec::with_capacity(ladder.len());
    for &h in ladder {
        let (_, w2) = composite_update(l1, l2, w0, h, alpha)?;
        let plain = modified_flow(l1, l2, w0, h, alpha, substeps, false)?.w;
        let modified = modified_flow(l1, l2, w0, h, alpha, substeps, true)?.w;
        let dist = |a: &[f64]| a.iter().zip(&w2).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let after = diff::value(l2, &w2)?;
        points.push(LadderPoint {
            h,
            plain_error: dist(&plain),
            modified_error: dist(&modified),
            loss_change: ((after - base) / base.abs().max(f64::MIN_POSITIVE)).abs(),
        });
    }
    let hs: Vec<f64> = points.iter().map(|p| p.h).collect();
    let plain: Vec<f64> = points.iter().map(|p| p.plain_error).collect();
    let modified: Vec<f64> = points.iter().map(|p| p.modified_error).collect();
    Ok(OrderOfAccuracy {
        slope_plain: log_log_slope(&hs, &plain)?,
        slope_modified: log_log_slope(&hs, &modified)?,
        points,
    })
}

/// One α of [`crate::bea::BeaProblem::bracket_vs_alpha`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    /// `‖(hα/2)[∇L₁, ∇L₂]‖₂`.
    pub bracket_term: f64,
    /// `‖∇L̃‖₂` at this α.
    pub gradient_norm: f64,
    /// `bracket_term / gradient_norm`.
    pub ratio: f64,
}

pub(crate) fn alpha_row(l1: &dyn Objective, l2: &dyn Objective, bracket: &[f64], w: &[f64], h: f64, alpha: f64) -> Result<AlphaRow> {
    let bracket_term = h * alpha / 2.0 * norm2(bracket);
    let gradient_norm = norm2(&modified_gradient(l1, l2, w, h, alpha)?);
    let ratio = if bracket_term == 0.0 { 0.0 } else { bracket_term / gradient_norm };
    Ok(AlphaRow { alpha, bracket_term, gradient_norm, ratio })
}
