//! Named parameters, the per-forward session that binds them onto a tape,
//! and the small layer types the model is assembled from.

mod layers;

pub use layers::{BatchNorm, Conv, Linear, SpatialProjection};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::ops::{update_running, BatchStats};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Named<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Learnable parameters plus non-learnable buffers (batch-norm running
/// statistics), both addressed by unique names.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    pub(crate) params: Vec<Named<T>>,
    pub(crate) buffers: Vec<Named<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    fn check_unique(&self, name: &str) {
        assert!(
            !self.params.iter().chain(&self.buffers).any(|p| p.name == name),
            "duplicate parameter name {name}"
        );
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        self.check_unique(&name);
        self.params.push(Named { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> BufferId {
        let name = name.into();
        self.check_unique(&name);
        self.buffers.push(Named { name, value });
        BufferId(self.buffers.len() - 1)
    }

    pub fn params(&self) -> &[Named<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Named<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Named<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Named<T>] {
        &mut self.buffers
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0].value
    }

    pub fn find_param(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total learnable scalar count.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |v: &Vec<Named<T>>| {
            v.iter()
                .map(|n| Named {
                    name: n.name.clone(),
                    value: n.value.cast(),
                })
                .collect()
        };
        ParamStore {
            params: conv(&self.params),
            buffers: conv(&self.buffers),
        }
    }

    /// Folds recorded batch statistics into the running buffers.
    pub fn apply_batch_stats(&mut self, updates: Vec<(BufferId, BufferId, BatchStats<T>)>) {
        for (mean, var, stats) in updates {
            update_running(self.buffers[mean.0].value.data_mut(), &stats.mean);
            update_running(self.buffers[var.0].value.data_mut(), &stats.var);
        }
    }
}

/// One forward pass: a fresh tape, the train/eval mode, a seeded stream for
/// dropout, and the batch statistics produced along the way.
pub struct Session<'a, T> {
    store: &'a ParamStore<T>,
    pub tape: Tape<T>,
    pub train: bool,
    pub rng: ChaCha8Rng,
    bound: Vec<Option<Var>>,
    bn_updates: Vec<(BufferId, BufferId, BatchStats<T>)>,
}

impl<'a, T: Real> Session<'a, T> {
    pub fn new(store: &'a ParamStore<T>, train: bool, seed: u64) -> Self {
        Session {
            store,
            tape: Tape::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bound: vec![None; store.params.len()],
            bn_updates: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    /// Tape variable for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.param(self.store.params[id.0].value.clone());
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }

    pub(crate) fn record_batch_stats(&mut self, mean: BufferId, var: BufferId, stats: BatchStats<T>) {
        self.bn_updates.push((mean, var, stats));
    }

    pub fn take_batch_stats(&mut self) -> Vec<(BufferId, BufferId, BatchStats<T>)> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradient for every parameter in store order; parameters the loss did
    /// not touch get zeros.
    pub fn param_grads(&self, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
        self.store
            .params
            .iter()
            .zip(&self.bound)
            .map(|(p, b)| {
                b.and_then(|v| grads.take(v))
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    }
}

/// Parameter factory that prefixes names and draws initial values from a
/// seeded stream.
pub struct Init<'s, T> {
    store: &'s mut ParamStore<T>,
    rng: &'s mut ChaCha8Rng,
    prefix: String,
}

impl<'s, T: Real> Init<'s, T> {
    pub fn new(store: &'s mut ParamStore<T>, rng: &'s mut ChaCha8Rng) -> Self {
        Init {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scoped<R>(&mut self, scope: &str, f: impl FnOnce(&mut Init<'_, T>) -> R) -> R {
        let prefix = if self.prefix.is_empty() {
            scope.to_string()
        } else {
            format!("{}.{scope}", self.prefix)
        };
        let mut inner = Init {
            store: self.store,
            rng: self.rng,
            prefix,
        };
        f(&mut inner)
    }

    fn name(&self, n: &str) -> String {
        if self.prefix.is_empty() {
            n.to_string()
        } else {
            format!("{}.{n}", self.prefix)
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in(&mut self, name: &str, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::uniform(shape, bound, self.rng);
        self.store.add_param(self.name(name), t)
    }

    pub fn constant(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        self.store.add_param(self.name(name), value)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> BufferId {
        self.store.add_buffer(self.name(name), value)
    }
}
