//! Gradients, Hessian-vector products and Lie brackets of scalar objectives.
//!
//! Objectives are closures that record their computation on a [`Graph`],
//! reading parameters from a single flat input node. Gradients come from
//! the reverse sweep; [`finite_difference_grad`] is the independent
//! central-difference check for them. Second-order quantities are
//! differences of reverse-mode gradients along a direction.

mod graph;

pub use graph::{Adjoints, Graph, Unary, Var};

use crate::error::{Error, Result};
use crate::params::{norm2, Gradient, ParamStore};
use crate::tensor::Tensor;

/// A scalar function of a flat parameter vector, expressed as a graph.
pub trait Objective: Sync {
    fn build(&self, g: &mut Graph, w: Var) -> Result<Var>;
}

impl<F> Objective for F
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync,
{
    fn build(&self, g: &mut Graph, w: Var) -> Result<Var> {
        self(g, w)
    }
}

/// Base step used by the HVP difference scheme, divided by ‖v‖₂.
pub const HVP_STEP: f64 = 1e-4;

pub fn value(obj: &dyn Objective, w: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let wv = g.input(Tensor::vector(w.to_vec()));
    let out = obj.build(&mut g, wv)?;
    scalar_of(&g, out)
}

fn scalar_of(g: &Graph, out: Var) -> Result<f64> {
    let t = g.value(out);
    if t.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "objective must be scalar, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

pub fn value_and_grad(obj: &dyn Objective, w: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let wv = g.input(Tensor::vector(w.to_vec()));
    let out = obj.build(&mut g, wv)?;
    let v = scalar_of(&g, out)?;
    if !v.is_finite() {
        return Err(Error::NonFinite("objective value".into()));
    }
    let adj = g.backward(out)?;
    Ok((v, adj.of(wv, w.len())))
}

pub fn grad_flat(obj: &dyn Objective, w: &[f64]) -> Result<Vec<f64>> {
    value_and_grad(obj, w).map(|(_, g)| g)
}

/// Exact reverse-mode gradient at `params`.
pub fn grad(obj: &dyn Objective, params: &ParamStore) -> Result<Gradient> {
    grad_flat(obj, params.flat()).map(|flat| Gradient { flat })
}

/// Per-coordinate step `base · (1 + |θᵢ|)` for central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRule {
    pub base: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        Self { base: 1e-5 }
    }
}

pub fn finite_difference_grad_flat(obj: &dyn Objective, w: &[f64], rule: StepRule) -> Result<Vec<f64>> {
    let mut probe = w.to_vec();
    let mut out = vec![0.0; w.len()];
    for i in 0..w.len() {
        let eps = rule.base * (1.0 + w[i].abs());
        probe[i] = w[i] + eps;
        let up = value(obj, &probe)?;
        probe[i] = w[i] - eps;
        let down = value(obj, &probe)?;
        probe[i] = w[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("finite-difference probe of coordinate {i}")));
        }
        out[i] = (up - down) / (2.0 * eps);
    }
    Ok(out)
}

/// Central-difference gradient, independent of the reverse sweep.
pub fn finite_difference_grad(obj: &dyn Objective, params: &ParamStore, rule: StepRule) -> Result<Gradient> {
    finite_difference_grad_flat(obj, params.flat(), rule).map(|flat| Gradient { flat })
}

/// `H(w) · v` as a central difference of gradients along `v` with step
/// `HVP_STEP / ‖v‖₂`. A zero direction yields the zero vector.
pub fn hvp_flat(obj: &dyn Objective, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != w.len() {
        return Err(Error::Shape(format!("direction has {} values, parameters {}", v.len(), w.len())));
    }
    let vn = norm2(v);
    if vn == 0.0 {
        return Ok(vec![0.0; w.len()]);
    }
    let t = HVP_STEP / vn;
    let plus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a + t * b).collect();
    let minus: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - t * b).collect();
    let gp = grad_flat(obj, &plus)?;
    let gm = grad_flat(obj, &minus)?;
    Ok(gp.iter().zip(&gm).map(|(p, m)| (p - m) / (2.0 * t)).collect())
}

pub fn hvp(obj: &dyn Objective, params: &ParamStore, v: &Gradient) -> Result<Gradient> {
    hvp_flat(obj, params.flat(), &v.flat).map(|flat| Gradient { flat })
}

/// `[∇A, ∇B](w) = H_B ∇A − H_A ∇B`, equal to the bracket of the descent
/// fields `−∇A` and `−∇B`.
pub fn lie_bracket_flat(a: &dyn Objective, b: &dyn Objective, w: &[f64]) -> Result<Vec<f64>> {
    let ga = grad_flat(a, w)?;
    let gb = grad_flat(b, w)?;
    let hb_ga = hvp_flat(b, w, &ga)?;
    let ha_gb = hvp_flat(a, w, &gb)?;
    Ok(hb_ga.iter().zip(&ha_gb).map(|(x, y)| x - y).collect())
}

pub fn lie_bracket(a: &dyn Objective, b: &dyn Objective, params: &ParamStore) -> Result<Gradient> {
    lie_bracket_flat(a, b, params.flat()).map(|flat| Gradient { flat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{rel_err, Role};

    fn store(values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.push("theta", Role::Kernel, Tensor::vector(values.to_vec())).unwrap();
        p
    }

    fn square_sum(g: &mut Graph, w: Var) -> Result<Var> {
        let sq = g.unary(w, Unary::Square);
        Ok(g.sum(sq))
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let p = store(&[3.0]);
        assert_eq!(grad(&square_sum, &p).unwrap().flat, vec![6.0]);
        let fd = finite_difference_grad(&square_sum, &p, StepRule { base: 1e-5 }).unwrap();
        assert!((fd.flat[0] - 6.0).abs() <= 1e-8);
    }

    #[test]
    fn linear_map_gradient_is_its_coefficients() {
        let loss = |g: &mut Graph, w: Var| {
            let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
            let p = g.mul(w, x)?;
            Ok(g.sum(p))
        };
        assert_eq!(grad(&loss, &store(&[5.0, 5.0])).unwrap().flat, vec![1.0, 2.0]);
    }

    #[test]
    fn constant_loss_has_zero_difference_gradient() {
        let loss = |g: &mut Graph, _w: Var| Ok(g.constant(Tensor::scalar(4.0)));
        let fd = finite_difference_grad(&loss, &store(&[1.0, -2.0]), StepRule::default()).unwrap();
        assert_eq!(fd.flat, vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        // only coordinate 1 feeds a term that overflows when moved
        let loss = |g: &mut Graph, w: Var| {
            let t = g.gather(w, vec![1], vec![1])?;
            let s = g.scale(t, 1e155);
            let sq = g.unary(s, Unary::Square);
            let sq2 = g.unary(sq, Unary::Square);
            Ok(g.sum(sq2))
        };
        let err = finite_difference_grad(&loss, &store(&[0.0, 0.0]), StepRule::default()).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn unregistered_op_rejected_at_construction() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1.0]));
        assert!(matches!(g.apply_named("sinc", x), Err(Error::UnregisteredOp(_))));
        assert!(g.apply_named("tanh", x).is_ok());
    }

    fn quadratic(g: &mut Graph, w: Var) -> Result<Var> {
        // ½ θᵀ diag(2, 4) θ
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let sq = g.unary(w, Unary::Square);
        let p = g.mul(sq, a)?;
        Ok(g.sum(p))
    }

    #[test]
    fn hvp_of_diagonal_quadratic() {
        let p = store(&[0.3, -0.7]);
        let hv = hvp(&quadratic, &p, &Gradient { flat: vec![1.0, 1.0] }).unwrap();
        assert!(rel_err(&hv.flat, &[2.0, 4.0], 1.0) < 1e-9, "{:?}", hv.flat);
        let zero = hvp(&quadratic, &p, &Gradient::zeros(2)).unwrap();
        assert_eq!(zero.flat, vec![0.0, 0.0]);
    }

    #[test]
    fn bracket_of_a_loss_with_itself_vanishes() {
        let p = store(&[0.3, -0.7]);
        let b = lie_bracket(&quadratic, &quadratic, &p).unwrap();
        assert!(b.max_abs() < 1e-9);
    }

    #[test]
    fn bracket_of_commuting_quadratics_vanishes() {
        // A = diag(2,4), B = 3A: commuting Hessians, proportional gradients.
        let tripled = |g: &mut Graph, w: Var| {
            let q = quadratic(g, w)?;
            Ok(g.scale(q, 3.0))
        };
        let b = lie_bracket(&quadratic, &tripled, &store(&[1.1, 0.4])).unwrap();
        assert!(b.max_abs() < 1e-8, "{:?}", b.flat);
    }

    #[test]
    fn bracket_matches_hand_derived_hessians() {
        // A = θ₁²θ₂, B = θ₂² at (1,1).
        // ∇A = (2θ₁θ₂, θ₁²) = (2,1); H_A = [[2θ₂, 2θ₁],[2θ₁, 0]] = [[2,2],[2,0]]
        // ∇B = (0, 2θ₂) = (0,2);      H_B = [[0,0],[0,2]]
        // H_B∇A − H_A∇B = (0,2) − (4,0) = (−4, 2)
        let a = |g: &mut Graph, w: Var| {
            let t1 = g.gather(w, vec![0], vec![1])?;
            let t2 = g.gather(w, vec![1], vec![1])?;
            let sq = g.unary(t1, Unary::Square);
            let p = g.mul(sq, t2)?;
            Ok(g.sum(p))
        };
        let b = |g: &mut Graph, w: Var| {
            let t2 = g.gather(w, vec![1], vec![1])?;
            let sq = g.unary(t2, Unary::Square);
            Ok(g.sum(sq))
        };
        let br = lie_bracket(&a, &b, &store(&[1.0, 1.0])).unwrap();
        assert!(rel_err(&br.flat, &[-4.0, 2.0], 1.0) <= 1e-6, "{:?}", br.flat);
    }
}
