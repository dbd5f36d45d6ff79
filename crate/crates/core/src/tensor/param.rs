use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::{Element, Graph, Var};

/// Index of a parameter within its [`ParamStore`], stable for the lifetime
/// of the store.
pub type PId = usize;

/// A named learnable tensor.
#[derive(Clone)]
pub struct Parameter<T: Element> {
    pub name: String,
    pub value: ArrayD<T>,
}

/// Flat collection of model parameters. Names are unique dotted paths;
/// iteration for optimization and serialization is lexicographic by name so
/// runs are reproducible regardless of construction order.
pub struct ParamStore<T: Element> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, PId>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    /// Register a parameter. Panics on duplicate names: the model wiring is
    /// static, so a collision is a programming error.
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>) -> PId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: PId) -> &Parameter<T> {
        &self.params[id]
    }

    pub fn value_mut(&mut self, id: PId) -> &mut ArrayD<T> {
        &mut self.params[id].value
    }

    pub fn id_of(&self, name: &str) -> Option<PId> {
        self.by_name.get(name).copied()
    }

    /// Parameter ids in lexicographic name order.
    pub fn sorted_ids(&self) -> Vec<PId> {
        self.by_name.values().copied().collect()
    }

    pub fn iter_sorted(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.by_name.values().map(|&id| &self.params[id])
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Insert every parameter into a graph as a leaf. `trainable(name)`
    /// decides whether the leaf accumulates gradients. Returns vars indexed
    /// by `PId`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable(&p.name)))
            .collect();
        Bound { vars }
    }

    pub fn bind_all(&self, g: &mut Graph<T>, requires_grad: bool) -> Bound {
        self.bind(g, |_| requires_grad)
    }

    /// Build a binding from caller-chosen vars (gradient-check plumbing:
    /// selected parameters can be replaced by externally created leaves).
    pub fn bind_custom(&self, mut f: impl FnMut(PId, &Parameter<T>) -> Var) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .enumerate()
                .map(|(i, p)| f(i, p))
                .collect(),
        }
    }
}

/// Graph vars for one binding of a [`ParamStore`], indexed by [`PId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: PId) -> Var {
        self.vars[id]
    }
}

impl std::ops::Index<PId> for Bound {
    type Output = Var;
    fn index(&self, id: PId) -> &Var {
        &self.vars[id]
    }
}
