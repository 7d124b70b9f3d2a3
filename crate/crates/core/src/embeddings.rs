//! Per-class autoencoders producing user and item embeddings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureTable, FeatureVector};
use crate::nn::{Activation, Mlp, MlpVars};
use crate::numerics::{
    sgd_step, Initializer, NumericsError, ParamId, ParamStore, SgdConfig, SparseRow, Tape, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityClass {
    User,
    Item,
}

impl EntityClass {
    pub fn name(self) -> &'static str {
        match self {
            EntityClass::User => "user",
            EntityClass::Item => "item",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub owner: String,
    pub vector: Vec<f64>,
}

/// Encoder `features -> hidden (tanh) -> dim` and its mirrored decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderParams {
    pub class: EntityClass,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl AutoencoderParams {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        class: EntityClass,
        feature_dim: usize,
        hidden: usize,
        dim: usize,
    ) -> Self {
        let p = class.name();
        Self {
            class,
            encoder: Mlp::new(
                store,
                init,
                &format!("{p}_ae.enc"),
                &[feature_dim, hidden, dim],
                Activation::Tanh,
                Activation::Identity,
            ),
            decoder: Mlp::new(
                store,
                init,
                &format!("{p}_ae.dec"),
                &[dim, hidden, feature_dim],
                Activation::Tanh,
                Activation::Identity,
            ),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn dim(&self) -> usize {
        self.encoder.outputs()
    }

    /// Encoder ids followed by decoder ids.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.decoder.param_ids());
        ids
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> AutoencoderVars {
        AutoencoderVars {
            encoder: self.encoder.bind(tape, store),
            decoder: self.decoder.bind(tape, store),
        }
    }

    pub fn with_vars(&self, vars: &[Var]) -> AutoencoderVars {
        let n = 2 * self.encoder.layers.len();
        AutoencoderVars {
            encoder: self.encoder.with_vars(&vars[..n]),
            decoder: self.decoder.with_vars(&vars[n..]),
        }
    }

    fn check(&self, features: &FeatureVector) -> Result<(), NumericsError> {
        if features.dim != self.feature_dim() {
            return Err(NumericsError::Shape {
                op: "encode",
                left: vec![features.dim],
                right: vec![self.feature_dim()],
            });
        }
        Ok(())
    }

    /// Plain-array encoding of a sparse feature row.
    pub fn encode_row(&self, store: &ParamStore, row: &SparseRow) -> Vec<f64> {
        let first = &self.encoder.layers[0];
        let w = store.get(first.weight).data();
        let mut h = store.get(first.bias).data().to_vec();
        for &(c, x) in row {
            for (o, &wv) in h
                .iter_mut()
                .zip(&w[c * first.outputs..(c + 1) * first.outputs])
            {
                *o += x * wv;
            }
        }
        h.iter_mut().for_each(|v| *v = v.tanh());
        let rest = Mlp {
            layers: self.encoder.layers[1..].to_vec(),
            ..self.encoder.clone()
        };
        rest.eval(store, &h)
    }

    /// Embeddings of every row of a feature table.
    pub fn encode_table(&self, store: &ParamStore, table: &FeatureTable) -> Vec<Vec<f64>> {
        table
            .rows
            .iter()
            .map(|r| self.encode_row(store, r))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct AutoencoderVars {
    pub encoder: MlpVars,
    pub decoder: MlpVars,
}

impl AutoencoderVars {
    /// `[rows x dim]` embeddings of sparse feature rows.
    pub fn encode(&self, tape: &mut Tape, rows: Vec<SparseRow>) -> Result<Var, NumericsError> {
        self.encoder.forward_sparse(tape, rows)
    }

    /// Mean over rows of `|x - decode(encode(x))|`.
    pub fn reconstruction_loss(
        &self,
        tape: &mut Tape,
        rows: &[SparseRow],
        feature_dim: usize,
    ) -> Result<Var, NumericsError> {
        let z = self.encode(tape, rows.to_vec())?;
        let recon = self.decoder.forward(tape, z)?;
        let mut dense = vec![0.0; rows.len() * feature_dim];
        for (r, row) in rows.iter().enumerate() {
            for &(c, x) in row {
                dense[r * feature_dim + c] = x;
            }
        }
        let target = tape.constant_matrix(rows.len(), feature_dim, dense)?;
        let diff = tape.sub(target, recon)?;
        let norms = tape.row_norm(diff)?;
        tape.mean(norms)
    }
}

pub fn encode(
    features: &FeatureVector,
    params: &AutoencoderParams,
    store: &ParamStore,
) -> Result<Embedding, NumericsError> {
    params.check(features)?;
    Ok(Embedding {
        owner: features.owner.clone(),
        vector: params.encode_row(store, &features.entries),
    })
}

/// Euclidean norm of `x - decode(encode(x))`.
pub fn reconstruction_loss(
    features: &FeatureVector,
    params: &AutoencoderParams,
    store: &ParamStore,
) -> Result<f64, NumericsError> {
    params.check(features)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, store);
    let loss = vars.reconstruction_loss(
        &mut tape,
        std::slice::from_ref(&features.entries),
        features.dim,
    )?;
    Ok(tape.scalar(loss))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Replaces the joint-training SGD settings during pretraining.
    pub sgd: Option<SgdConfig>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            sgd: None,
        }
    }
}

/// Mean reconstruction loss over a table, computed in batches.
pub fn mean_reconstruction_loss(
    table: &FeatureTable,
    params: &AutoencoderParams,
    store: &ParamStore,
) -> Result<f64, NumericsError> {
    let mut total = 0.0;
    for chunk in table.rows.chunks(256) {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, store);
        let loss = vars.reconstruction_loss(&mut tape, chunk, table.dim)?;
        total += tape.scalar(loss) * chunk.len() as f64;
    }
    Ok(total / table.len() as f64)
}

/// Trains one autoencoder on reconstruction alone. Returns the mean loss
/// before training followed by the mean loss after each epoch.
pub fn pretrain(
    table: &FeatureTable,
    params: &AutoencoderParams,
    store: &mut ParamStore,
    epochs: usize,
    batch_size: usize,
    sgd: &SgdConfig,
    seed: u64,
) -> Result<Vec<f64>, NumericsError> {
    if table.is_empty() {
        return Err(NumericsError::Empty { op: "pretrain" });
    }
    if batch_size == 0 {
        return Err(NumericsError::Contract(
            "batch_size must be positive".into(),
        ));
    }
    sgd.validate()?;
    let ids = params.param_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..table.len()).collect();
    let mut history = vec![mean_reconstruction_loss(table, params, store)?];
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let rows: Vec<SparseRow> = batch.iter().map(|&i| table.rows[i].clone()).collect();
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, store);
            let loss = vars.reconstruction_loss(&mut tape, &rows, table.dim)?;
            tape.backward_into(loss, store)?;
            step_subset(store, &ids, sgd, epoch)?;
        }
        history.push(mean_reconstruction_loss(table, params, store)?);
    }
    Ok(history)
}

/// SGD on a subset of the store's parameters.
pub(crate) fn step_subset(
    store: &mut ParamStore,
    ids: &[ParamId],
    sgd: &SgdConfig,
    epoch: usize,
) -> Result<(), NumericsError> {
    let tensors = store.tensors_mut();
    let mut picked: Vec<crate::numerics::Tensor> = ids
        .iter()
        .map(|id| {
            std::mem::replace(
                &mut tensors[id.index()],
                crate::numerics::Tensor::zeros(vec![0]),
            )
        })
        .collect();
    let result = sgd_step(&mut picked, sgd, epoch);
    for (id, t) in ids.iter().zip(picked) {
        tensors[id.index()] = t;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn setup(feature_dim: usize, seed: u64) -> (ParamStore, AutoencoderParams) {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed, 0.05);
        let ae =
            AutoencoderParams::new(&mut store, &mut init, EntityClass::Item, feature_dim, 16, 8);
        (store, ae)
    }

    #[test]
    fn zero_features_and_zero_biases_encode_to_zero() {
        let (store, ae) = setup(5, 1);
        let e = encode(&FeatureVector::dense("a", &[0.0; 5]), &ae, &store).unwrap();
        assert_eq!(e.vector, vec![0.0; 8]);
        assert_eq!(e.owner, "a");
    }

    #[test]
    fn encoding_is_deterministic_and_shaped() {
        let (store, ae) = setup(5, 2);
        let f = FeatureVector::dense("a", &[0.1, 0.0, -2.0, 0.5, 1.0]);
        let a = encode(&f, &ae, &store).unwrap();
        let b = encode(&f, &ae, &store).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vector.len(), 8);
        let bad = FeatureVector::dense("a", &[1.0; 4]);
        assert!(encode(&bad, &ae, &store).is_err());
    }

    #[test]
    fn one_dimensional_reconstruction_norm() {
        // A zero output weight and bias 1.5 reconstruct every input as 1.5.
        let mut store = ParamStore::new();
        let mut init = Initializer::new(0, 0.05);
        let ae = AutoencoderParams::new(&mut store, &mut init, EntityClass::User, 1, 1, 1);
        let last = ae.decoder.layers.last().unwrap().clone();
        store.set(last.weight, vec![0.0]).unwrap();
        store.set(last.bias, vec![1.5]).unwrap();
        let loss = reconstruction_loss(&FeatureVector::dense("u", &[2.0]), &ae, &store).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let (mut store, ae) = setup(4, 3);
        let before: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
        let table = FeatureTable::one_hot(4);
        let hist = pretrain(&table, &ae, &mut store, 0, 2, &SgdConfig::default(), 0).unwrap();
        assert_eq!(hist.len(), 1);
        let after: Vec<Tensor> = store.iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn two_points_both_shrink() {
        let (mut store, ae) = setup(3, 4);
        let table = FeatureTable {
            dim: 3,
            rows: vec![vec![(0, 1.0), (2, 0.5)], vec![(1, -1.0)]],
        };
        let err = |store: &ParamStore| -> Vec<f64> {
            (0..2)
                .map(|i| reconstruction_loss(&table.vector(i, "x"), &ae, store).unwrap())
                .collect()
        };
        let before = err(&store);
        let sgd = SgdConfig {
            learning_rate: 0.05,
            decay_factor: 0.99,
            ..SgdConfig::default()
        };
        pretrain(&table, &ae, &mut store, 300, 2, &sgd, 9).unwrap();
        let after = err(&store);
        assert!(
            after[0] < before[0] && after[1] < before[1],
            "{before:?} -> {after:?}"
        );
    }
}
