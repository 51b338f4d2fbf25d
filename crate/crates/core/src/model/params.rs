use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Rc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(Rc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.values.iter().map(|v| v.as_ref())
    }

    /// Mutable access; copies a buffer only if a tape still shares it.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.values.iter_mut().map(Rc::make_mut)
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.values[id.0];
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {} is {:?}, got {:?}",
                self.names[id.0],
                slot.shape(),
                value.shape()
            )));
        }
        *slot = Rc::new(value);
        Ok(())
    }

    /// Zero every parameter whose name starts with `prefix`; returns how many.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            if name.starts_with(prefix) {
                *value = Rc::new(Tensor::zeros(value.shape()));
                n += 1;
            }
        }
        n
    }

    /// Put every parameter on `tape`, as leaves when it records.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let vars = self
            .values
            .iter()
            .map(|v| {
                if tape.is_recording() {
                    tape.leaf_shared(Rc::clone(v))
                } else {
                    tape.constant_shared(Rc::clone(v))
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound to one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

/// Normal(0, std) resampled into [−2·std, 2·std].
pub fn trunc_normal<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f32 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// He-uniform: U(−√(6/fan_in), √(6/fan_in)).
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f32).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}
