use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Which part of the network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// The inference network.
    Main,
    /// The weak classifier head, dropped at inference.
    Weak,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<F> {
    pub tensor: Tensor<F>,
    /// Whether weight decay applies to this parameter.
    pub decay: bool,
    pub group: ParamGroup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<F> {
    entries: IndexMap<String, ParamEntry<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<F>, decay: bool, group: ParamGroup) -> Result<ParamId> {
        if self.entries.contains_key(name) {
            return Err(Error::invalid("param_set", format!("duplicate parameter name `{name}`")));
        }
        let (index, _) = self.entries.insert_full(name.to_string(), ParamEntry { tensor, decay, group });
        Ok(ParamId(index))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).map(|(k, _)| k.as_str()).expect("valid param id")
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry<F>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &ParamEntry<F>)> {
        self.entries.iter().enumerate().map(|(i, (k, v))| (ParamId(i), k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &str, &mut ParamEntry<F>)> {
        self.entries.iter_mut().enumerate().map(|(i, (k, v))| (ParamId(i), k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    pub fn numel_in(&self, group: ParamGroup) -> usize {
        self.entries.values().filter(|e| e.group == group).map(|e| e.tensor.len()).sum()
    }

    /// Drop every parameter of `group`. Ids of the remaining entries are
    /// preserved only when the removed entries form a suffix.
    pub fn remove_group(&mut self, group: ParamGroup) {
        self.entries.retain(|_, e| e.group != group);
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            let n = e.tensor.len();
            e.tensor.set_grad(vec![F::zero(); n]).expect("matching length");
        }
    }
}
