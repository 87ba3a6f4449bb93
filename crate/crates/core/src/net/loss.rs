use crate::diff::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn rows_of(t: &Tensor) -> Result<Tensor> {
    let t = if t.rank() == 1 { t.clone().reshape(vec![1, t.len()])? } else { t.clone() };
    if t.dims2()?.0 == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(t)
}

/// Mean over rows of the squared error summed across each row.
pub fn loss_mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let (p, t) = (rows_of(pred)?, rows_of(target)?);
    let mut g = Graph::new();
    let pv = g.constant(p);
    let tv = g.constant(t);
    let l = g.mse(pv, tv)?;
    Ok(g.value(l).item())
}

/// Mean over rows of `−log softmax(logits)[class]`.
pub fn loss_xent(logits: &Tensor, classes: &[usize]) -> Result<f64> {
    let l = rows_of(logits)?;
    let mut g = Graph::new();
    let lv = g.constant(l);
    let out = g.softmax_xent(lv, classes)?;
    Ok(g.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_equal_tensors_is_zero() {
        let a = Tensor::vector(vec![1.0, 1.0]);
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn xent_of_uniform_logits_is_log_classes() {
        let l = Tensor::vector(vec![0.3; 4]);
        assert!((loss_xent(&l, &[2]).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let e = Tensor::zeros(&[0, 3]);
        assert!(matches!(loss_mse(&e, &e), Err(Error::EmptyBatch)));
        assert!(matches!(loss_xent(&e, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn matches_elementwise_formulas() {
        let p = Tensor::from_rows(&[&[0.5, -1.0, 2.0], &[0.1, 0.2, -0.3]]);
        let t = Tensor::from_rows(&[&[1.0, 0.0, 1.5], &[0.0, 0.0, 0.0]]);
        let mut direct = 0.0;
        for (a, b) in p.data().iter().zip(t.data()) {
            direct += (a - b) * (a - b);
        }
        assert!((loss_mse(&p, &t).unwrap() - direct / 2.0).abs() <= 1e-12);

        let classes = [2usize, 0];
        let mut xe = 0.0;
        for (r, &c) in classes.iter().enumerate() {
            let row = &p.data()[r * 3..r * 3 + 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            xe += -(row[c].exp() / z).ln();
        }
        assert!((loss_xent(&p, &classes).unwrap() - xe / 2.0).abs() <= 1e-12);
    }
}
