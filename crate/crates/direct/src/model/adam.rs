//! Adaptive moment estimation with a lazy per-task variant.
//!
//! The lazy variant leaves both the parameters and the optimizer state of
//! non-current task heads untouched on each step. The plain variant advances
//! moment state for every parameter, applying the zero-gradient momentum
//! update to heads outside the current task.

use super::params::{group_active, param_group, ParamStore};
use crate::corpus::Task;
use indexmap::IndexMap;
use ndarray::Array2;

#[derive(Debug, Clone)]
struct Slot {
    m: Array2<f64>,
    v: Array2<f64>,
    t: u64,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// When false (default) the optimizer is lazy; when true every head's
    /// state advances on every step.
    pub plain: bool,
    slots: IndexMap<String, Slot>,
}

impl Adam {
    pub fn new(plain: bool) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plain,
            slots: IndexMap::new(),
        }
    }

    fn slot(&mut self, name: &str, shape: ndarray::Ix2) -> &mut Slot {
        self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
        })
    }

    /// Apply one step for `task`. `grads` holds gradients for the encoder and
    /// the current task's head. Returns the list of parameter names updated.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &IndexMap<String, Array2<f64>>,
        task: Task,
        lr: f64,
    ) -> Vec<String> {
        let mut updated = Vec::new();
        let names: Vec<String> = store.names().cloned().collect();
        for name in names {
            let group = param_group(&name);
            let active = group_active(group, task);
            let grad = grads.get(&name);
            if !self.plain && (!active || grad.is_none()) {
                continue;
            }
            let shape = store.get(&name).raw_dim();
            let (beta1, beta2, eps) = (self.beta1, self.beta2, self.eps);
            let slot = self.slot(&name, shape);
            slot.t += 1;
            match grad {
                Some(g) => {
                    slot.m = &slot.m * beta1 + &(g * (1.0 - beta1));
                    slot.v = &slot.v * beta2 + &(g.mapv(|x| x * x) * (1.0 - beta2));
                }
                None => {
                    // plain variant, non-current head: zero gradient
                    slot.m *= beta1;
                    slot.v *= beta2;
                }
            }
            let bc1 = 1.0 - beta1.powi(slot.t as i32);
            let bc2 = 1.0 - beta2.powi(slot.t as i32);
            let mhat = &slot.m / bc1;
            let vhat = &slot.v / bc2;
            let delta = &mhat / &(vhat.mapv(f64::sqrt) + eps);
            *store.get_mut(&name) -= &(delta * lr);
            updated.push(name);
        }
        updated
    }

    /// Read-only view of a parameter's moment state, if any step has touched
    /// it: (first moment, second moment, step count).
    pub fn slot_state(&self, name: &str) -> Option<(&Array2<f64>, &Array2<f64>, u64)> {
        self.slots.get(name).map(|s| (&s.m, &s.v, s.t))
    }

    /// The update a fresh optimizer would apply on its first step, given the
    /// gradient. Exposed for closed-form single-step tests.
    pub fn first_step_delta(&self, grad: &Array2<f64>, lr: f64) -> Array2<f64> {
        let mhat = grad * (1.0 - self.beta1) / (1.0 - self.beta1);
        let vhat = grad.mapv(|x| x * x) * (1.0 - self.beta2) / (1.0 - self.beta2);
        -(&mhat / &(vhat.mapv(f64::sqrt) + self.eps)) * lr
    }
}
