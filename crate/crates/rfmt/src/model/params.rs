//! Ordered, named parameter storage shared by the trainable models.

use std::collections::HashMap;

use rand::Rng;

use crate::tensor::{GradientMap, Graph, NodeId, Tensor};
use crate::util::{derive_rng, label};

/// Named parameters in a stable order (checkpoint layout and optimizer state
/// both follow entry order).
#[derive(Debug, Clone)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }

    /// Insert every parameter into a graph as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let ids: Vec<NodeId> = self.entries.iter().map(|(_, t)| g.param(t.clone())).collect();
        BoundParams::from_ids(self.entries.iter().map(|(n, _)| n.clone()), ids)
    }

    /// Gradients from a backward pass arranged in entry order (zeros for
    /// parameters the loss never touched).
    pub fn grads_in_order(&self, bound: &BoundParams, gmap: &GradientMap) -> Vec<Tensor> {
        self.entries
            .iter()
            .map(|(name, t)| {
                let id = bound.id(name);
                gmap.get(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect()
    }
}

/// Parameter leaves bound into one particular graph.
pub struct BoundParams {
    ids: Vec<NodeId>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn from_ids(names: impl IntoIterator<Item = String>, ids: Vec<NodeId>) -> Self {
        let index = names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
        BoundParams { ids, index }
    }

    pub fn id(&self, name: &str) -> NodeId {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?} in bound set"));
        self.ids[i]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

/// How a parameter is initialized.
pub enum Init {
    /// Xavier-uniform for a [fan_in, fan_out] matrix.
    Xavier,
    /// Small uniform values for embedding tables.
    Embedding,
    Zeros,
    Ones,
}

pub fn init_tensor(seed: u64, name: &str, shape: Vec<usize>, init: Init) -> Tensor {
    let numel: usize = shape.iter().product();
    let mut rng = derive_rng(seed, &[label("init"), label(name)]);
    let data: Vec<f64> = match init {
        Init::Xavier => {
            let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..numel).map(|_| rng.gen_range(-limit..limit)).collect()
        }
        Init::Embedding => (0..numel).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        Init::Zeros => vec![0.0; numel],
        Init::Ones => vec![1.0; numel],
    };
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bind_preserves_values_and_names() {
        let mut ps = ParamSet::new();
        ps.insert("a", Tensor::vector(vec![1.0, 2.0]));
        ps.insert("b", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let bound = ps.bind(&mut g);
        assert_eq!(g.value(bound.id("a")).data(), &[1.0, 2.0]);
        assert_eq!(g.value(bound.id("b")).item(), 3.0);
    }

    #[test]
    fn init_is_deterministic_per_name() {
        let a1 = init_tensor(1, "x", vec![3, 3], Init::Xavier);
        let a2 = init_tensor(1, "x", vec![3, 3], Init::Xavier);
        let b = init_tensor(1, "y", vec![3, 3], Init::Xavier);
        assert_eq!(a1, a2);
        assert_ne!(a1, b);
    }
}
