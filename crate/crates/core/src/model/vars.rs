//! Named parameter registry. Parameters live here untracked; each training
//! step binds them onto a fresh tape in registration order, which keeps node
//! ids, checkpoint layout and optimizer state all aligned.

use crate::error::{Error, Result};
use crate::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

pub struct VarStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl VarStore {
    pub fn new() -> Self {
        VarStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        assert!(!value.is_tracked(), "parameters are stored untracked");
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn update(&mut self, id: ParamId, f: impl FnOnce(&mut [f64])) {
        self.values[id.0].apply(f);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Binds every parameter as a tape leaf (in registration order), or
    /// detached for frozen inference.
    pub fn bind(&self, tape: Option<&Tape>) -> Binding {
        let tensors = self
            .values
            .iter()
            .map(|v| match tape {
                Some(t) => t.watch(v),
                None => v.clone(),
            })
            .collect();
        Binding { tensors }
    }

    /// Overwrites parameters by name; every name must resolve and shapes must
    /// agree.
    pub fn load_from(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, tensor) in entries {
            let Some(idx) = self.names.iter().position(|n| n == name) else {
                return Err(Error::Incompatible(format!("unknown parameter {name}")));
            };
            if self.values[idx].shape() != tensor.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter {name}: shape {:?} vs expected {:?}",
                    tensor.shape(),
                    self.values[idx].shape()
                )));
            }
            self.values[idx] = tensor.detached();
        }
        Ok(())
    }
}

/// Per-step view of the parameters, tracked when bound to a tape.
pub struct Binding {
    tensors: Vec<Tensor>,
}

impl Binding {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn node_of(&self, id: ParamId) -> Option<usize> {
        self.tensors[id.0].node_id()
    }
}
