use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Block-diagonal placement of two kernels, zeros elsewhere.
pub fn fuse_kernel(w: &Tensor, w2: &Tensor) -> Result<Tensor> {
    fuse_kernels(&[w, w2])
}

/// Block-diagonal placement of any number of rank-2 kernels.
pub fn fuse_kernels(ws: &[&Tensor]) -> Result<Tensor> {
    if let Some(bad) = ws.iter().find(|w| w.rank() != 2) {
        return Err(Error::Shape(format!("kernel fusion needs rank-2 tensors, got shape {:?}", bad.shape())));
    }
    let rows: usize = ws.iter().map(|w| w.shape()[0]).sum();
    let cols: usize = ws.iter().map(|w| w.shape()[1]).sum();
    let mut out = Tensor::zeros(&[rows, cols]);
    let (mut r0, mut c0) = (0, 0);
    for w in ws {
        let (n, m) = (w.shape()[0], w.shape()[1]);
        let data = out.data_mut();
        for r in 0..n {
            data[(r0 + r) * cols + c0..(r0 + r) * cols + c0 + m].copy_from_slice(&w.data()[r * m..(r + 1) * m]);
        }
        r0 += n;
        c0 += m;
    }
    Ok(out)
}

/// `[b, b′]`.
pub fn fuse_bias(b: &Tensor, b2: &Tensor) -> Tensor {
    concat_vectors(&[b, b2])
}

pub fn concat_vectors(parts: &[&Tensor]) -> Tensor {
    Tensor::vector(parts.iter().flat_map(|p| p.data().iter().copied()).collect())
}

/// Concatenation along the feature (column) axis, for embedding tables.
pub fn fuse_columns(parts: &[&Tensor]) -> Result<Tensor> {
    Tensor::concat_cols(parts)
}
