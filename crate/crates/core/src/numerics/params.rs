use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

/// Handle to a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order. The order is the
/// serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor.tracked());
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces the values of `id`, keeping its gradient buffer.
    pub fn set(&mut self, id: ParamId, data: Vec<f64>) -> Result<(), NumericsError> {
        self.tensors[id.0].set_data(data)
    }
}

/// How weight bounds are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Uniform in `[-weight_scale, weight_scale]` for every matrix.
    #[default]
    Uniform,
    /// Uniform in `[-b, b]` with `b = sqrt(6 / (rows + cols))`.
    Glorot,
}

/// Seeded parameter initializer: uniform weights, zero biases.
pub struct Initializer {
    rng: ChaCha8Rng,
    pub weight_scale: f64,
    pub scheme: InitScheme,
}

impl Initializer {
    pub fn new(seed: u64, weight_scale: f64) -> Self {
        Self::with_scheme(seed, weight_scale, InitScheme::Uniform)
    }

    pub fn with_scheme(seed: u64, weight_scale: f64, scheme: InitScheme) -> Self {
        use rand::SeedableRng;
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            weight_scale,
            scheme,
        }
    }

    pub fn uniform(&mut self, rows: usize, cols: usize) -> Tensor {
        let s = match self.scheme {
            InitScheme::Uniform => self.weight_scale,
            InitScheme::Glorot => (6.0 / (rows + cols) as f64).sqrt(),
        };
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-s..=s))
            .collect();
        Tensor::matrix(rows, cols, data).expect("finite uniform draws")
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::zeros(vec![rows, cols])
    }
}
