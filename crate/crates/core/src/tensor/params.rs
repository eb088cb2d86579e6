use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Identifies one parameter tensor on a tape: the owning set plus the index
/// inside it. Groups let a single graph span two networks (generator and
/// discriminator) while gradients are routed back to the right set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub group: u16,
    pub index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Tensor, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param {
            value,
            grad,
            trainable,
        }
    }
}

/// Named collection of parameters belonging to one network.
#[derive(Clone, Debug)]
pub struct ParamSet {
    group: u16,
    params: Vec<Param>,
    names: Vec<String>,
}

impl ParamSet {
    pub fn new(group: u16) -> Self {
        ParamSet {
            group,
            params: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn group(&self) -> u16 {
        self.group
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.add_with(name, value, true)
    }

    pub fn add_with(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.params.push(Param::new(value, trainable));
        self.names.push(name);
        ParamId(self.params.len() as u32 - 1)
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey {
            group: self.group,
            index: id.0,
        }
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.index()]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.index()].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.index()]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| ParamId(i as u32))
    }

    /// Total number of scalar weights, trainable or not.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Number of scalar weights whose parameter name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds every gradient in `grads` that belongs to this set.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (key, g) in grads.iter() {
            if key.group == self.group {
                self.params[key.index as usize].grad.add_assign(g);
            }
        }
    }

    /// Replaces the value of a named parameter; shapes must agree.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
        let p = &mut self.params[id.index()];
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Bitwise equality of all parameter values.
    pub fn same_values(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.value.shape() == b.value.shape() && bits_eq(a.value.data(), b.value.data()))
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Sparse gradient buffer keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    entries: BTreeMap<ParamKey, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_or_add(&mut self, key: ParamKey, g: Tensor) {
        match self.entries.get_mut(&key) {
            Some(existing) => existing.add_assign(&g),
            None => {
                self.entries.insert(key, g);
            }
        }
    }

    pub fn merge(&mut self, other: Gradients) {
        for (k, g) in other.entries {
            self.insert_or_add(k, g);
        }
    }

    pub fn get(&self, key: &ParamKey) -> Option<&Tensor> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn touches_group(&self, group: u16) -> bool {
        self.entries.keys().any(|k| k.group == group)
    }
}
