use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use indexmap::IndexMap;
use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named, ordered parameter table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Arc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(Arc::as_ref)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(Arc::make_mut)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.values_mut().map(Arc::make_mut)
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Weight `fan_in×fan_out` and bias `fan_out`, both uniform in ±1/√fan_in.
    pub fn init_linear<R: Rng + ?Sized>(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(format!("{prefix}.w"), Tensor::from_parts(vec![fan_in, fan_out], w));
        self.insert(format!("{prefix}.b"), Tensor::vector(b));
    }

    /// (name, shape) pairs of every entry whose name starts with `prefix`.
    pub fn shape_table(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.shape().to_vec()))
            .collect()
    }

    /// Stable hash of the shape table under `prefix`.
    pub fn architecture_hash(&self, prefix: &str) -> u64 {
        let mut h = DefaultHasher::new();
        self.shape_table(prefix).hash(&mut h);
        h.finish()
    }

    /// Copies every `prefix` entry of `source` into `self`. Both tables must
    /// agree exactly on names and shapes under the prefix.
    pub fn load_matching(&mut self, source: &ParamStore, prefix: &str) -> Result<()> {
        let mine = self.shape_table(prefix);
        let theirs = source.shape_table(prefix);
        if mine != theirs {
            let detail = mine
                .iter()
                .zip(theirs.iter().map(Some).chain(std::iter::repeat(None)))
                .find(|(a, b)| Some(*a) != *b)
                .map(|(a, b)| format!("expected {} {:?}, found {:?}", a.0, a.1, b))
                .unwrap_or_else(|| format!("{} entries expected, {} found", mine.len(), theirs.len()));
            return Err(Error::ShapeTableMismatch(detail));
        }
        for (name, _) in mine {
            self.entries.insert(name.clone(), source.entries[&name].clone());
        }
        Ok(())
    }

    /// Registers every parameter as a tape leaf.
    pub fn register(&self, tape: &mut Tape, requires_grad: bool) -> ParamVars {
        let vars = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad)))
            .collect();
        ParamVars { vars }
    }

    /// Pairs existing tape variables with the store's names, in store order.
    pub fn bind(&self, vars: &[Var]) -> Result<ParamVars> {
        if vars.len() != self.entries.len() {
            return Err(Error::SizeMismatch(format!(
                "{} variables for {} parameters",
                vars.len(),
                self.entries.len()
            )));
        }
        Ok(ParamVars {
            vars: self.entries.keys().cloned().zip(vars.iter().copied()).collect(),
        })
    }
}

/// Tape handles for a registered [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: IndexMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::ShapeTableMismatch(format!("missing parameter {name}")))
    }

    /// Gradients in store order; parameters the loss never reached get zeros.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .values()
            .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
            .collect()
    }
}
