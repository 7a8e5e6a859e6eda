use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Which optimizer pathway trains a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Trained by the classification loss.
    Supervised,
    /// Trained by the policy-gradient surrogate.
    Reinforcement,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Supervised => f.write_str("supervised"),
            Group::Reinforcement => f.write_str("reinforcement"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    pub group: Group,
}

/// Named trainable tensors, each tagged with exactly one group.
///
/// Names are hierarchical (`glimpse.conv0.weight`) and iteration order is
/// lexicographic, which keeps optimizer updates and checkpoints stable.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, group: Group) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.entries.insert(name, Param { value, group });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names_in(&self, group: Group) -> Vec<String> {
        self.entries.iter().filter(|(_, p)| p.group == group).map(|(k, _)| k.clone()).collect()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::zeros(&[2]), Group::Supervised).unwrap();
        let err = store.insert("a.w", Tensor::zeros(&[2]), Group::Reinforcement).unwrap_err();
        assert!(matches!(err, Error::DuplicateParam(_)));
    }

    #[test]
    fn groups_partition_the_store() {
        let mut store = ParamStore::new();
        store.insert("b", Tensor::zeros(&[1]), Group::Reinforcement).unwrap();
        store.insert("a", Tensor::zeros(&[3]), Group::Supervised).unwrap();
        store.insert("c", Tensor::zeros(&[2]), Group::Supervised).unwrap();
        assert_eq!(store.names_in(Group::Supervised), vec!["a", "c"]);
        assert_eq!(store.names_in(Group::Reinforcement), vec!["b"]);
        assert_eq!(store.scalar_count(), 6);
    }
}
