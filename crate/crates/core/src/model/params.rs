//! Named parameter storage and per-forward binding onto a [`Tape`].
//!
//! Naming scheme:
//! - `llm.embed`, `llm.{i}.{attn_norm,q,k,v,o,ffn_norm,ffn_gate,ffn_up,ffn_down}`, `llm.final_norm`, `llm.lm_head`
//! - `lora.{i}.{layer}.a` / `.b`
//! - `vision.fc1.{w,b}`, `vision.fc2.{w,b}`
//! - `aux.{i}.norm`, `aux.{i}.proj`
//! - `teacher.*` (see [`crate::vision::teacher`])

use std::collections::BTreeMap;

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Result, VoraError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| VoraError::UnknownTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| VoraError::UnknownTensor(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    /// Removes every tensor whose name starts with `prefix`; returns how many went.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.tensors.len();
        self.tensors.retain(|k, _| !k.starts_with(prefix));
        before - self.tensors.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Tensor)> {
        self.tensors.iter().filter(move |(k, _)| k.starts_with(prefix))
    }

    pub fn numel_with_prefix(&self, prefix: &str) -> usize {
        self.with_prefix(prefix).map(|(_, t)| t.numel()).sum()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    /// Moves every `prefix*` tensor into a new store.
    pub fn split_prefix(&mut self, prefix: &str) -> ParamStore {
        let keys: Vec<String> = self.with_prefix(prefix).map(|(k, _)| k.clone()).collect();
        let mut out = ParamStore::new();
        for k in keys {
            let t = self.tensors.remove(&k).expect("key listed above");
            out.insert(k, t);
        }
        out
    }
}

/// Which parameters receive gradients, by name prefix.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trainable {
    prefixes: Vec<String>,
}

impl Trainable {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self::prefixes(&[""])
    }

    pub fn prefixes(prefixes: &[&str]) -> Self {
        Self {
            prefixes: prefixes.iter().map(|p| p.to_string()).collect(),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.prefixes.iter().any(|p| name.starts_with(p.as_str()))
    }
}

/// One forward pass: a fresh tape plus lazily bound parameters.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    trainable: &'a Trainable,
    bound: BTreeMap<String, Var>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, trainable: &'a Trainable) -> Self {
        Self {
            tape: Tape::new(),
            store,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    /// Continues recording on an existing tape.
    pub fn with_tape(store: &'a ParamStore, trainable: &'a Trainable, tape: Tape) -> Self {
        Self {
            tape,
            store,
            trainable,
            bound: BTreeMap::new(),
        }
    }

    /// Uses `v` for `name` instead of a fresh leaf from the store.
    pub fn bind(&mut self, name: &str, v: Var) {
        self.bound.insert(name.to_string(), v);
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn has(&self, name: &str) -> bool {
        self.store.contains(name)
    }

    /// Binds `name` onto the tape on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = self.store.get(name)?.clone();
        let v = self.tape.leaf(t, self.trainable.contains(name));
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.bound.iter()
    }

    /// Gradients of every bound trainable parameter that the loss reached.
    pub fn param_grads(&self, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter(|(name, _)| self.trainable.contains(name))
            .filter_map(|(name, v)| grads.take(*v).map(|g| (name.clone(), g)))
            .collect()
    }
}
