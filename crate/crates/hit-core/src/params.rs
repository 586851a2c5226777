//! Named parameter storage.
//!
//! All learnable tensors of a model live in one flat [`ParamSet`] addressed
//! by [`ParamId`] handles; layers keep handles, not tensors. Gradients live
//! in a [`GradSet`] with identical indexing so per-sample gradients can be
//! computed independently and reduced in a fixed order.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle into a [`ParamSet`]. Only valid for the set that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// One named parameter with its gradient slot.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Registers a parameter under a unique dotted name.
    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        let id = self.values.len();
        self.by_name.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Iterates `(name, tensor)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.values.iter())
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    /// Fresh zeroed gradient storage matching this set.
    pub fn zero_grads(&self) -> GradSet<T> {
        GradSet {
            grads: self.values.iter().map(|t| t.zeros_like()).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(|t| t.cast()).collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Overwrites values from another set with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::InvalidInput(
                "parameter set layouts differ".to_string(),
            ));
        }
        self.values.clone_from(&other.values);
        Ok(())
    }
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient storage parallel to a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct GradSet<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Scalar> GradSet<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn grads(&self) -> &[Tensor<T>] {
        &self.grads
    }

    /// Accumulates `delta` into the slot for `id`.
    pub fn accumulate(&mut self, id: ParamId, delta: &Tensor<T>) {
        self.grads[id.0]
            .add_assign(delta)
            .expect("gradient shape matches parameter shape");
    }

    /// `self += other`, slot by slot in index order.
    pub fn add_from(&mut self, other: &GradSet<T>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b).expect("gradient layouts match");
        }
    }

    pub fn scale_in_place(&mut self, s: T) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.grads.iter()
    }
}

/// Truncated-normal init (sigma 0.02, cut at two sigma) for projections.
pub fn init_trunc_normal<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.trunc_normal(0.02)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_queryable() {
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("encoder.block0.attn.q_weight", Tensor::zeros(&[2, 2]));
        assert_eq!(ps.name(id), "encoder.block0.attn.q_weight");
        assert_eq!(ps.id_of("encoder.block0.attn.q_weight"), Some(id));
        assert_eq!(ps.id_of("missing"), None);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::zeros(&[1]));
        ps.add("w", Tensor::zeros(&[1]));
    }

    #[test]
    fn grad_accumulation_matches_layout() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("w", Tensor::ones(&[2]));
        let mut g = ps.zero_grads();
        g.accumulate(id, &Tensor::full(&[2], 0.5));
        g.accumulate(id, &Tensor::full(&[2], 0.25));
        assert_eq!(g.get(id).data(), &[0.75, 0.75]);
    }
}
