use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use super::{Real, Tape, Tensor, Var};
use crate::{Error, Result};

/// Parameter initialisation scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    KaimingUniform { fan_in: usize },
    Uniform(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
struct Param<T> {
    name: String,
    value: Tensor<T>,
    velocity: Vec<T>,
}

/// Named trainable tensors in registration order, with SGD momentum buffers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: BTreeMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), index: BTreeMap::new() }
    }

    pub fn add<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::invalid("parameter", format!("duplicate name `{name}`")));
        }
        let n: usize = shape.iter().product();
        let data = match init {
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
            }
            Init::Uniform(bound) => (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect(),
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
        };
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    /// Registers an explicit value.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::invalid("parameter", format!("duplicate name `{name}`")));
        }
        let id = self.params.len();
        let velocity = vec![T::zero(); value.numel()];
        self.params.push(Param { name: name.to_string(), value, velocity });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: usize) -> &str {
        &self.params[id].name
    }

    pub fn value(&self, id: usize) -> &Tensor<T> {
        &self.params[id].value
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.params[self.id(name)?].value)
    }

    /// Overwrites a parameter's values, keeping its shape.
    pub fn set(&mut self, name: &str, data: &[T]) -> Result<()> {
        let id = self.id(name)?;
        let p = &mut self.params[id];
        if p.value.numel() != data.len() {
            return Err(Error::shape("set_param", format!("`{name}` has {} values, got {}", p.value.numel(), data.len())));
        }
        p.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn velocity(&self, id: usize) -> &[T] {
        &self.params[id].velocity
    }

    pub fn set_velocity(&mut self, name: &str, data: &[T]) -> Result<()> {
        let id = self.id(name)?;
        let p = &mut self.params[id];
        if p.velocity.len() != data.len() {
            return Err(Error::shape("set_velocity", format!("`{name}` has {} values, got {}", p.velocity.len(), data.len())));
        }
        p.velocity.copy_from_slice(data);
        Ok(())
    }

    /// `(name, value, velocity)` in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, &[T])> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value, p.velocity.as_slice()))
    }

    /// Records every parameter as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound { vars: self.params.iter().map(|p| tape.leaf(p.value.clone(), true)).collect() }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound { vars: self.params.iter().map(|p| tape.constant(p.value.clone())).collect() }
    }

    /// Same values in another precision (velocities reset).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.insert(&p.name, p.value.cast()).expect("names are unique");
        }
        out
    }

    /// Momentum SGD, `v <- m v + g; theta <- theta - lr v`, with the
    /// gradients read from `tape`. Every parameter must have received a
    /// gradient.
    pub fn sgd_step(&mut self, tape: &Tape<T>, bound: &Bound, lr: f64, momentum: f64) -> Result<()> {
        if bound.vars.len() != self.params.len() {
            return Err(Error::shape("sgd", format!("{} bound vars for {} params", bound.vars.len(), self.params.len())));
        }
        for (p, &v) in self.params.iter().zip(&bound.vars) {
            if tape.grad(v).is_none() {
                return Err(Error::MissingGrad(p.name.clone()));
            }
        }
        let (lr, m) = (T::of(lr), T::of(momentum));
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            let g = tape.grad(v).expect("checked above");
            for ((theta, vel), &gi) in p.value.data_mut().iter_mut().zip(p.velocity.iter_mut()).zip(g) {
                *vel = m * *vel + gi;
                *theta -= lr * *vel;
            }
        }
        Ok(())
    }
}

/// Tape handles of a bound [`ParamStore`], indexed like the store.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: usize) -> Var {
        self.vars[id]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
