use intrinsic_tensor::{Gradients, Graph, Real, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Network;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub network: Network,
    pub tensor: Tensor<f32>,
}

/// Every learnable tensor of a model, in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<f32> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<f32> {
        &mut self.entries[id.0].tensor
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_of(&self, network: Network) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(move |&id| self.entries[id.0].network == network)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    fn push(&mut self, name: String, network: Network, tensor: Tensor<f32>) -> ParamId {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(ParamEntry {
            name,
            network,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }
}

/// Creates parameters for one network under a name prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    network: Network,
    prefix: String,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, network: Network, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            network,
            prefix: network.name().to_string(),
            rng,
        }
    }

    pub fn sub<R>(&mut self, name: &str, f: impl FnOnce(&mut ParamBuilder<'_>) -> R) -> R {
        let mut child = ParamBuilder {
            store: &mut *self.store,
            network: self.network,
            prefix: format!("{}.{name}", self.prefix),
            rng: &mut *self.rng,
        };
        f(&mut child)
    }

    pub fn normal(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let dist = Normal::new(0.0, INIT_STD).expect("valid std");
        let len = shape.iter().product();
        let data = (0..len).map(|_| dist.sample(self.rng) as f32).collect();
        let t = Tensor::new(shape, data).expect("length matches shape");
        self.store
            .push(format!("{}.{name}", self.prefix), self.network, t)
    }

    pub fn zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        self.store.push(
            format!("{}.{name}", self.prefix),
            self.network,
            Tensor::zeros(shape),
        )
    }
}

/// One forward evaluation: an autodiff graph plus the rule deciding which
/// parameters are differentiated.
pub struct Session<T: Real> {
    pub graph: Graph<T>,
    trainable: Box<dyn Fn(Network) -> bool>,
}

impl<T: Real> Session<T> {
    pub fn new(trainable: impl Fn(Network) -> bool + 'static) -> Self {
        Self {
            graph: Graph::new(),
            trainable: Box::new(trainable),
        }
    }

    /// No parameter is differentiated.
    pub fn inference() -> Self {
        Self::new(|_| false)
    }

    /// Every parameter is differentiated.
    pub fn all() -> Self {
        Self::new(|_| true)
    }

    /// Graph variable of a parameter, bound on first use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.graph.bound(id.0) {
            return v;
        }
        let e = store.entry(id);
        let value = e.tensor.cast::<T>();
        self.graph.bind(id.0, value, (self.trainable)(e.network))
    }

    /// Bind an explicit value for a parameter before it is first used.
    pub fn override_param(&mut self, id: ParamId, value: Tensor<T>, requires_grad: bool) -> Var {
        self.graph.bind(id.0, value, requires_grad)
    }

    pub fn is_bound(&self, id: ParamId) -> bool {
        self.graph.bound(id.0).is_some()
    }

    pub fn param_grad<'g>(&self, grads: &'g Gradients<T>, id: ParamId) -> Option<&'g Tensor<T>> {
        self.graph.bound(id.0).and_then(|v| grads.get(v))
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.graph.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.graph.value(v)
    }
}
