use std::collections::HashMap;
use std::fmt;

use crate::tensor::Tensor;

/// Training step number of the three-step schedule (1, 2 or 3).
pub type Step = u8;

/// Set of training steps in which a parameter is updated.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct StepSet(u8);

impl StepSet {
    pub const EMPTY: StepSet = StepSet(0);

    pub fn of(steps: &[Step]) -> Self {
        let mut s = Self::EMPTY;
        for &step in steps {
            s.insert(step);
        }
        s
    }

    pub fn insert(&mut self, step: Step) {
        assert!((1..=3).contains(&step), "training steps are 1, 2 or 3");
        self.0 |= 1 << step;
    }

    pub fn remove(&mut self, step: Step) {
        self.0 &= !(1 << step);
    }

    pub fn contains(&self, step: Step) -> bool {
        step <= 3 && self.0 & (1 << step) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Step> + '_ {
        (1..=3).filter(|&s| self.contains(s))
    }
}

impl fmt::Debug for StepSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learnable tensor with its gradient slot.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable_in_steps: StepSet,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("duplicate parameter name {0:?}")]
    Duplicate(String),
    #[error("unknown parameter {0:?}")]
    Unknown(String),
    #[error("parameter {name:?} expects shape {expected:?}, got {actual:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// Owns every parameter of a model, indexed by unique name.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor, steps: StepSet) -> Result<ParamId, ParamError> {
        if self.by_name.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            trainable_in_steps: steps,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Replaces a parameter's value, keeping its registered shape.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), ParamError> {
        let id = self.id(name).ok_or_else(|| ParamError::Unknown(name.to_string()))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(ParamError::Shape {
                name: name.to_string(),
                expected: p.value.shape().to_vec(),
                actual: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
