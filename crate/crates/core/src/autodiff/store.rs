use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor together with its gradient accumulator and the
/// momentum velocity used by SGD. The three tensors always share a shape.
#[derive(Debug, Clone)]
pub struct Parameter<E: Scalar> {
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
    pub velocity: Tensor<E>,
}

impl<E: Scalar> Parameter<E> {
    pub fn new(value: Tensor<E>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        Parameter { value, grad, velocity }
    }
}

/// Handle to one parameter in a [`ParamStore`]. Sharing a `ParamId` across
/// several tape leaves is what "shared weights" means here: every use
/// accumulates into the same gradient.
#[derive(Debug, Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Flat, name-addressed collection of parameters. Registration order is the
/// checkpoint order, so model construction must be deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<E: Scalar> {
    names: Vec<String>,
    params: Vec<Parameter<E>>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), params: Vec::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<E>) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.params.push(Parameter::new(value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<E> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<E> {
        &self.params[id.0].grad
    }

    pub fn param(&self, id: ParamId) -> &Parameter<E> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter<E> {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<E>)> {
        self.names.iter().map(String::as_str).zip(self.params.iter())
    }

    pub fn id_by_name(&self, name: &str) -> Result<ParamId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(ParamId)
            .ok_or_else(|| Error::Format(format!("unknown parameter name {name:?}")))
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor<E>) -> Result<()> {
        self.params[id.0].grad.add_scaled(delta, E::ONE)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(E::ZERO);
        }
    }

    /// Total number of scalar weights, handy for logging.
    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut store = ParamStore::<f32>::new();
        let w = store.register("layer.w", Tensor::zeros(&[2, 3]));
        let b = store.register("layer.b", Tensor::zeros(&[3]));
        assert_eq!(store.len(), 2);
        assert_eq!(store.name(w), "layer.w");
        assert_eq!(store.id_by_name("layer.b").unwrap(), b);
        assert!(store.id_by_name("missing").is_err());
        assert_eq!(store.num_weights(), 9);
    }

    #[test]
    fn grads_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let w = store.register("w", Tensor::zeros(&[2]));
        let delta = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        store.accumulate_grad(w, &delta).unwrap();
        store.accumulate_grad(w, &delta).unwrap();
        assert_eq!(store.grad(w).data(), &[2.0, -4.0]);
        store.zero_grads();
        assert_eq!(store.grad(w).data(), &[0.0, 0.0]);
    }
}
