//! Named parameter storage shared by a model and its optimizer.
//!
//! Slots are created in model construction order and keep that order for
//! deterministic initialization, optimization, and checkpointing. Running
//! batch-norm statistics live here as non-trainable slots so they are
//! counted, checkpointed, and restored together with the weights.

use std::collections::HashMap;

use crate::error::{Result, UdetError};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Handle to one parameter slot in a [`ParamRegistry`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub struct ParamSlot<E: Scalar> {
    pub name: String,
    pub value: Tensor4<E>,
    /// Gradient accumulator, same length as `value`. Additive across backward
    /// passes until [`ParamRegistry::zero_grads`].
    pub grad: Vec<E>,
    pub trainable: bool,
}

pub struct ParamRegistry<E: Scalar> {
    slots: Vec<ParamSlot<E>>,
    by_name: HashMap<String, ParamId>,
}

impl<E: Scalar> Default for ParamRegistry<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> ParamRegistry<E> {
    pub fn new() -> Self {
        ParamRegistry { slots: Vec::new(), by_name: HashMap::new() }
    }

    pub fn register(&mut self, name: &str, value: Tensor4<E>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(UdetError::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.slots.len());
        let grad = vec![E::zero(); value.numel()];
        self.slots.push(ParamSlot { name: name.to_string(), value, grad, trainable });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, id: ParamId) -> &ParamSlot<E> {
        &self.slots[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor4<E> {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor4<E> {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[E] {
        &self.slots[id.0].grad
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Slots in creation order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamSlot<E>)> {
        self.slots.iter().enumerate().map(|(i, s)| (ParamId(i), s))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, s)| s.trainable).map(|(id, _)| id).collect()
    }

    pub fn add_to_grad(&mut self, id: ParamId, delta: &[E]) {
        let g = &mut self.slots[id.0].grad;
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi = *gi + *di;
        }
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            for g in &mut s.grad {
                *g = E::zero();
            }
        }
    }

    pub fn total_elements(&self) -> usize {
        self.slots.iter().map(|s| s.value.numel()).sum()
    }

    /// Copy all parameter values out (snapshot for best-epoch checkpointing).
    pub fn snapshot(&self) -> ParamSnapshot<E> {
        ParamSnapshot { values: self.slots.iter().map(|s| s.value.data().to_vec()).collect() }
    }
}

/// In-memory copy of every slot's values, restorable onto the same registry
/// layout.
#[derive(Clone)]
pub struct ParamSnapshot<E: Scalar> {
    values: Vec<Vec<E>>,
}

impl<E: Scalar> ParamSnapshot<E> {
    pub fn restore(&self, reg: &mut ParamRegistry<E>) -> Result<()> {
        if self.values.len() != reg.len() {
            return Err(UdetError::InvalidArgument(format!(
                "snapshot has {} slots, registry has {}",
                self.values.len(),
                reg.len()
            )));
        }
        for (i, vals) in self.values.iter().enumerate() {
            let t = reg.value_mut(ParamId(i));
            if t.numel() != vals.len() {
                return Err(UdetError::shape(
                    "snapshot_restore",
                    format!("slot {i}: {} vs {}", vals.len(), t.numel()),
                ));
            }
            t.data_mut().copy_from_slice(vals);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn names_must_be_unique() {
        let mut reg = ParamRegistry::<f32>::new();
        reg.register("w", Tensor4::scalar(1.0), true).unwrap();
        assert!(reg.register("w", Tensor4::scalar(2.0), true).is_err());
    }

    #[test]
    fn grad_accumulates_and_zeros() {
        let mut reg = ParamRegistry::<f64>::new();
        let id = reg.register("w", Tensor4::zeros(Shape4::new(1, 2, 1, 1)), true).unwrap();
        reg.add_to_grad(id, &[1.0, 2.0]);
        reg.add_to_grad(id, &[1.0, 2.0]);
        assert_eq!(reg.grad(id), &[2.0, 4.0]);
        reg.zero_grads();
        assert_eq!(reg.grad(id), &[0.0, 0.0]);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut reg = ParamRegistry::<f32>::new();
        let id = reg.register("w", Tensor4::full(Shape4::new(1, 1, 1, 3), 5.0), true).unwrap();
        let snap = reg.snapshot();
        reg.value_mut(id).data_mut()[1] = -1.0;
        snap.restore(&mut reg).unwrap();
        assert_eq!(reg.value(id).data(), &[5.0, 5.0, 5.0]);
    }
}
