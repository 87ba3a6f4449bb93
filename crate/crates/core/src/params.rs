use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Kernel,
    Bias,
    Scale,
    Embedding,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Kernel => "kernel",
            Role::Bias => "bias",
            Role::Scale => "scale",
            Role::Embedding => "embedding",
        };
        f.write_str(s)
    }
}

/// Metadata for one named tensor inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub offset: usize,
}

impl Entry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named parameter tensors backed by one contiguous flat vector.
///
/// Per-entry accessors are slices of the flat storage, so writes through
/// either view are visible in the other.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    flat: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, role: Role, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        let offset = self.flat.len();
        let shape = tensor.shape().to_vec();
        self.flat.extend_from_slice(tensor.data());
        self.entries.push(Entry { name, shape, role, offset });
        Ok(())
    }

    /// Same layout with new values.
    pub fn with_flat(&self, flat: Vec<f64>) -> Result<Self> {
        if flat.len() != self.flat.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, store has {}",
                flat.len(),
                self.flat.len()
            )));
        }
        Ok(Self { entries: self.entries.clone(), flat })
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Values of one entry.
    pub fn view(&self, name: &str) -> Option<&[f64]> {
        self.entry(name).map(|e| &self.flat[e.range()])
    }

    pub fn view_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.entry(name)?.range();
        Some(&mut self.flat[range])
    }

    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        let e = self.entry(name)?;
        Some(Tensor::new(e.shape.clone(), self.flat[e.range()].to_vec()).expect("entry shape"))
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Which entry owns flat coordinate `index`.
    pub fn entry_at(&self, index: usize) -> Option<usize> {
        self.entries.iter().position(|e| e.range().contains(&index))
    }
}

/// Gradient of a scalar objective with respect to a [`ParamStore`] flat view.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub flat: Vec<f64>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self { flat: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.flat)
    }

    pub fn max_abs(&self) -> f64 {
        self.flat.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(floor, |m, y| m.max(y.abs()));
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_and_entry_views_alias() {
        let mut p = ParamStore::new();
        p.push("a", Role::Kernel, Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        p.push("b", Role::Bias, Tensor::vector(vec![5.0, 6.0])).unwrap();
        assert_eq!(p.len(), 6);
        p.view_mut("b").unwrap()[0] = -1.0;
        assert_eq!(p.flat()[4], -1.0);
        p.flat_mut()[1] = 9.0;
        assert_eq!(p.view("a").unwrap()[1], 9.0);
        assert_eq!(p.entry_at(5), Some(1));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamStore::new();
        p.push("a", Role::Bias, Tensor::vector(vec![1.0])).unwrap();
        assert!(p.push("a", Role::Bias, Tensor::vector(vec![1.0])).is_err());
    }
}
