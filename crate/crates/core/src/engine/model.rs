use serde::{Deserialize, Serialize};

use super::Variant;
use crate::base_model::{CtrHeadParams, Pooling, SequenceEncoderParams};
use crate::data::{FeatureTable, IndexedDataset};
use crate::embeddings::{AutoencoderParams, EntityClass};
use crate::numerics::{InitScheme, Initializer, ParamId, ParamStore};
use crate::unexp_factor::{FactorHeadParams, LocalActivationParams};
use crate::unexpectedness::{ClusterDistance, MeanShiftConfig};

/// Network sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub autoencoder_hidden: usize,
    pub ctr_hidden: Vec<usize>,
    pub activation_unit_hidden: Vec<usize>,
    pub factor_hidden: Vec<usize>,
    pub pooling: Pooling,
    /// Softmax-normalize the session-window weights instead of summing the
    /// raw scores.
    pub normalize_window: bool,
    pub init: InitScheme,
    /// Weight bound of the uniform scheme.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            autoencoder_hidden: 64,
            ctr_hidden: vec![32, 64],
            activation_unit_hidden: vec![32],
            factor_hidden: vec![32, 64],
            pooling: Pooling::Attention,
            normalize_window: false,
            init: InitScheme::Glorot,
            init_scale: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        let sizes = [self.embedding_dim, self.autoencoder_hidden]
            .into_iter()
            .chain(self.ctr_hidden.iter().copied())
            .chain(self.activation_unit_hidden.iter().copied())
            .chain(self.factor_hidden.iter().copied());
        if sizes.into_iter().any(|s| s == 0) {
            return Err("network sizes must be positive".into());
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(format!(
                "init_scale must be finite and nonnegative, got {}",
                self.init_scale
            ));
        }
        Ok(())
    }
}

/// Every trainable parameter, held in one store with stable names.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub user_ae: AutoencoderParams,
    pub item_ae: AutoencoderParams,
    pub sequence: SequenceEncoderParams,
    pub ctr: CtrHeadParams,
    pub activation_unit: LocalActivationParams,
    pub factor: FactorHeadParams,
    /// `[users x 1]`.
    pub user_bias: ParamId,
    /// `[items x 1]`.
    pub item_bias: ParamId,
}

impl ModelParams {
    pub fn new(
        config: &ModelConfig,
        user_feature_dim: usize,
        item_feature_dim: usize,
        n_users: usize,
        n_items: usize,
        seed: u64,
    ) -> Self {
        let mut store = ParamStore::new();
        let mut init = Initializer::with_scheme(seed, config.init_scale, config.init);
        let d = config.embedding_dim;
        let h = config.autoencoder_hidden;
        let user_ae = AutoencoderParams::new(
            &mut store,
            &mut init,
            EntityClass::User,
            user_feature_dim,
            h,
            d,
        );
        let item_ae = AutoencoderParams::new(
            &mut store,
            &mut init,
            EntityClass::Item,
            item_feature_dim,
            h,
            d,
        );
        let sequence = SequenceEncoderParams::new(&mut store, &mut init, d, config.pooling);
        let ctr = CtrHeadParams::new(&mut store, &mut init, d, &config.ctr_hidden);
        let activation_unit =
            LocalActivationParams::new(&mut store, &mut init, d, &config.activation_unit_hidden);
        let factor = FactorHeadParams::new(&mut store, &mut init, d, &config.factor_hidden);
        let user_bias = store.add("bias.user", init.zeros(n_users, 1));
        let item_bias = store.add("bias.item", init.zeros(n_items, 1));
        Self {
            config: config.clone(),
            store,
            user_ae,
            item_ae,
            sequence,
            ctr,
            activation_unit,
            factor,
            user_bias,
            item_bias,
        }
    }

    /// Parameters updated by joint training: everything but the decoders.
    pub fn joint_ids(&self) -> Vec<ParamId> {
        let mut ids = self.user_ae.encoder.param_ids();
        ids.extend(self.item_ae.encoder.param_ids());
        ids.extend(self.sequence.param_ids());
        ids.extend(self.ctr.param_ids());
        ids.extend(self.activation_unit.param_ids());
        ids.extend(self.factor.param_ids());
        ids.push(self.user_bias);
        ids.push(self.item_bias);
        ids
    }

    pub fn n_users(&self) -> usize {
        self.store.get(self.user_bias).rows()
    }

    pub fn n_items(&self) -> usize {
        self.store.get(self.item_bias).rows()
    }
}

/// Settings that shape inputs at scoring time and therefore travel with a
/// trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSettings {
    /// Most recent consumptions fed to the sequence encoder and clustering.
    pub history_cap: usize,
    /// Session window for the unexpectedness factor.
    pub window_k: usize,
    pub mean_shift: MeanShiftConfig,
    pub cluster_distance: ClusterDistance,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        Self {
            history_cap: 50,
            window_k: 10,
            mean_shift: MeanShiftConfig::default(),
            cluster_distance: ClusterDistance::Centroid,
        }
    }
}

/// A trained model with the vocabularies and features it was built on.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: ModelParams,
    pub variant: Variant,
    pub settings: InferenceSettings,
    pub dataset: IndexedDataset,
    pub user_features: FeatureTable,
    pub item_features: FeatureTable,
}

impl Model {
    pub fn user_index(&self, key: &str) -> Option<usize> {
        self.dataset.users.get(key).map(|i| i as usize)
    }

    pub fn item_index(&self, key: &str) -> Option<usize> {
        self.dataset.items.get(key).map(|i| i as usize)
    }

    pub fn item_key(&self, idx: usize) -> &str {
        self.dataset.items.key(idx as u32)
    }

    /// Current embeddings of every item.
    pub fn item_embeddings(&self) -> Vec<Vec<f64>> {
        self.params
            .item_ae
            .encode_table(&self.params.store, &self.item_features)
    }
}
