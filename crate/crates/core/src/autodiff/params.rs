use std::collections::BTreeMap;

use rand::Rng;

use super::array::DenseArray;
use super::tape::Tape;
use super::AutodiffError;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Named trainable arrays with their accumulated gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<DenseArray>,
    grads: Vec<DenseArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.grads.push(DenseArray::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform matrix in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, DenseArray::from_parts(shape.to_vec(), data))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.insert(name, DenseArray::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &DenseArray {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseArray {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &DenseArray {
        &self.grads[id.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Adds `scale * grad` of every parameter leaf on `tape` into the store.
    pub fn accumulate(&mut self, tape: &Tape, scale: f64) {
        for (id, grad) in tape.param_leaves() {
            if let Some(g) = grad {
                for (a, b) in self.grads[id.0].data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
        }
    }

    /// Sum of squares over every parameter.
    pub fn squared_norm(&self) -> f64 {
        self.values.iter().flat_map(|v| v.data()).map(|x| x * x).sum()
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(DenseArray::len).sum()
    }

    /// Snapshot keyed by name, in deterministic order.
    pub fn to_named(&self) -> BTreeMap<String, DenseArray> {
        self.names.iter().cloned().zip(self.values.iter().cloned()).collect()
    }

    /// Overwrites values from a named snapshot. Every registered parameter
    /// must be present with a matching shape, and no extra names are allowed.
    pub fn load_named(&mut self, named: &BTreeMap<String, DenseArray>) -> Result<(), AutodiffError> {
        if named.len() != self.names.len() {
            return Err(AutodiffError::ParamMismatch(format!(
                "expected {} parameters, found {}",
                self.names.len(),
                named.len()
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            let v = named
                .get(name)
                .ok_or_else(|| AutodiffError::ParamMismatch(format!("missing parameter {name}")))?;
            if v.shape() != self.values[i].shape() {
                return Err(AutodiffError::ParamMismatch(format!(
                    "parameter {name}: expected shape {:?}, found {:?}",
                    self.values[i].shape(),
                    v.shape()
                )));
            }
            self.values[i] = v.clone();
        }
        Ok(())
    }
}
