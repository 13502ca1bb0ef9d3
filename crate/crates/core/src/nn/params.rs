use std::collections::HashMap;

use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Running normalization statistics are stored alongside parameters but
    /// are not optimized.
    pub trainable: bool,
}

/// Named parameters and buffers in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, trainable });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.entries[self.id(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        let id = self.id(name)?;
        Ok(&mut self.entries[id].value)
    }

    pub fn value(&self, id: usize) -> &Tensor<T> {
        &self.entries[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.entries[id].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entry(&self, id: usize) -> &ParamEntry<T> {
        &self.entries[id]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Blends batch statistics into running buffers:
    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>], momentum: f64) {
        let m = T::from_f64(momentum);
        let keep = T::one() - m;
        for u in updates {
            for (id, batch) in [(u.mean_id, &u.mean), (u.var_id, &u.var)] {
                for (r, &b) in self.entries[id].value.data_mut().iter_mut().zip(batch) {
                    *r = keep * *r + m * b;
                }
            }
        }
    }
}

/// Batch statistics observed by a training-mode normalization layer.
#[derive(Debug, Clone)]
pub struct StatUpdate<T> {
    pub mean_id: usize,
    pub var_id: usize,
    pub mean: Vec<T>,
    /// Unbiased batch variance.
    pub var: Vec<T>,
}
