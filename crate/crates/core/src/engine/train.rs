use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::validation_summary;
use super::forward::{forward_batch, EventInput, ModelVars};
use super::history::{cluster_snapshots, ClusterMode, ClusterSet, Histories};
use super::{EngineError, InferenceSettings, Model, ModelConfig, ModelParams, Variant};
use crate::data::{FeatureTable, IndexedDataset, Interaction};
use crate::embeddings::{pretrain, step_subset, PretrainConfig};
use crate::numerics::{SgdConfig, Tape};
use crate::unexpectedness::{ClusterDistance, MeanShiftConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    pub variant: Variant,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub window_k: usize,
    pub history_cap: usize,
    pub mean_shift: MeanShiftConfig,
    pub cluster_distance: ClusterDistance,
    /// Clusters are recomputed every this many epochs.
    pub cluster_refresh_epochs: usize,
    /// Cluster snapshots are taken every this many consumptions; an event
    /// uses the latest snapshot strictly before it.
    pub cluster_stride: usize,
    /// Share of each user's latest events held out for the per-epoch log.
    /// With zero the log is computed on the training events.
    pub validation_fraction: f64,
    /// Users sampled for the per-epoch unexpectedness of recommendations.
    pub log_users: usize,
    pub log_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            sgd: SgdConfig::default(),
            seed: 0,
            variant: Variant::Full,
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            window_k: 10,
            history_cap: 50,
            mean_shift: MeanShiftConfig::default(),
            cluster_distance: ClusterDistance::Centroid,
            cluster_refresh_epochs: 1,
            cluster_stride: 1,
            validation_fraction: 0.1,
            log_users: 100,
            log_k: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Training(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.history_cap == 0 {
            return bad("history_cap must be positive".into());
        }
        if self.cluster_refresh_epochs == 0 || self.cluster_stride == 0 {
            return bad("cluster_refresh_epochs and cluster_stride must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.log_k == 0 {
            return bad("log_k must be positive".into());
        }
        self.sgd.validate()?;
        if let Some(s) = &self.pretrain.sgd {
            s.validate()?;
        }
        self.mean_shift.validate()?;
        self.model.validate().map_err(EngineError::Training)
    }

    pub fn settings(&self) -> InferenceSettings {
        InferenceSettings {
            history_cap: self.history_cap,
            window_k: self.window_k,
            mean_shift: self.mean_shift,
            cluster_distance: self.cluster_distance,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// `None` when the log events hold a single label.
    pub auc: Option<f64>,
    pub mean_unexp: f64,
}

impl EpochLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log line serializes")
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Per user, the latest `fraction` of events (at least one when the user
/// has two or more) go to the second part.
fn carve(events: &[Interaction], fraction: f64) -> (Vec<Interaction>, Vec<Interaction>) {
    if fraction == 0.0 {
        return (events.to_vec(), Vec::new());
    }
    let mut by_user: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        by_user.entry(e.user).or_default().push(i);
    }
    let mut held = vec![false; events.len()];
    for idx in by_user.values_mut() {
        idx.sort_by_key(|&i| (events[i].timestamp, i));
        let n = idx.len();
        let n_held = ((fraction * n as f64).round() as usize).max(1);
        if n_held < n {
            for &i in &idx[n - n_held..] {
                held[i] = true;
            }
        }
    }
    let mut fit = Vec::new();
    let mut val = Vec::new();
    for (e, h) in events.iter().zip(held) {
        if h {
            val.push(*e);
        } else {
            fit.push(*e);
        }
    }
    (fit, val)
}

struct Prepared {
    users: Vec<usize>,
    items: Vec<usize>,
    labels: Vec<f64>,
    /// Clicks of the user strictly before the event.
    before: Vec<usize>,
}

fn snapshot_key(n: usize, stride: usize) -> usize {
    if n >= stride {
        n - n % stride
    } else {
        n
    }
}

struct Epoch<'a> {
    model: &'a Model,
    hist: &'a Histories,
    prepared: &'a Prepared,
    clusters: &'a HashMap<(usize, usize), ClusterSet>,
    stride: usize,
}

impl Epoch<'_> {
    fn inputs(&self, batch: &[usize]) -> Vec<EventInput<'_>> {
        let s = &self.model.settings;
        let p = self.prepared;
        batch
            .iter()
            .map(|&j| {
                let u = p.users[j];
                let n = p.before[j];
                EventInput {
                    user: u,
                    item: p.items[j],
                    history: self.hist.recent(u, n, s.history_cap),
                    window: self.hist.recent(u, n, s.window_k),
                    clusters: self.clusters.get(&(u, snapshot_key(n, self.stride))),
                }
            })
            .collect()
    }
}

fn compute_clusters(
    model: &Model,
    hist: &Histories,
    prepared: &Prepared,
    stride: usize,
) -> Result<HashMap<(usize, usize), ClusterSet>, EngineError> {
    if !model.variant.uses_unexpectedness() {
        return Ok(HashMap::new());
    }
    let mut keys: Vec<(usize, usize)> = prepared
        .users
        .iter()
        .zip(&prepared.before)
        .map(|(&u, &n)| (u, snapshot_key(n, stride)))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let mode = if model.variant == Variant::V5SingleClosure {
        ClusterMode::SingleClosure
    } else {
        ClusterMode::MeanShift
    };
    let embeddings = model.item_embeddings();
    Ok(cluster_snapshots(
        hist,
        &keys,
        &embeddings,
        model.settings.history_cap,
        mode,
        &model.settings.mean_shift,
    )?)
}

/// Trains the model of `cfg.variant` on indexed `events`: autoencoder
/// pretraining followed by joint SGD on the click log loss of the utility.
pub fn train(
    dataset: &IndexedDataset,
    user_features: &FeatureTable,
    item_features: &FeatureTable,
    events: &[Interaction],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, EngineError> {
    cfg.validate()?;
    let n_users = dataset.users.len();
    let n_items = dataset.items.len();
    if user_features.len() != n_users || item_features.len() != n_items {
        return Err(EngineError::Training(format!(
            "feature tables cover {} users and {} items, the dataset has {n_users} and {n_items}",
            user_features.len(),
            item_features.len()
        )));
    }
    let clicks = events.iter().filter(|e| e.label == 1).count();
    if clicks == 0 || clicks == events.len() {
        return Err(EngineError::Training(
            "training events hold a single label; both clicks and non-clicks are needed".into(),
        ));
    }

    let (fit, held) = carve(events, cfg.validation_fraction);
    let log_events = if held.is_empty() { fit.clone() } else { held };

    let mut params = ModelParams::new(
        &cfg.model,
        user_features.dim,
        item_features.dim,
        n_users,
        n_items,
        cfg.seed,
    );
    let pre_sgd = cfg.pretrain.sgd.unwrap_or(cfg.sgd);
    let (store, user_ae, item_ae) = (&mut params.store, &params.user_ae, &params.item_ae);
    pretrain(
        user_features,
        user_ae,
        store,
        cfg.pretrain.epochs,
        cfg.pretrain.batch_size,
        &pre_sgd,
        cfg.seed ^ 0x55,
    )?;
    pretrain(
        item_features,
        item_ae,
        store,
        cfg.pretrain.epochs,
        cfg.pretrain.batch_size,
        &pre_sgd,
        cfg.seed ^ 0xaa,
    )?;

    let mut model = Model {
        params,
        variant: cfg.variant,
        settings: cfg.settings(),
        dataset: dataset.clone(),
        user_features: user_features.clone(),
        item_features: item_features.clone(),
    };

    let hist = Histories::from_interactions(n_users, events);
    let fit_hist = Histories::from_interactions(n_users, &fit);
    let prepared = Prepared {
        users: fit.iter().map(|e| e.user as usize).collect(),
        items: fit.iter().map(|e| e.item as usize).collect(),
        labels: fit.iter().map(|e| f64::from(e.label)).collect(),
        before: fit
            .iter()
            .map(|e| hist.count_before(e.user as usize, e.timestamp))
            .collect(),
    };
    let ids = model.params.joint_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let mut clusters = compute_clusters(&model, &hist, &prepared, cfg.cluster_stride)?;

    let summary = |model: &Model, epoch: usize, loss: f64| -> Result<EpochLog, EngineError> {
        let (auc, mean_unexp) = validation_summary(
            model,
            &fit_hist,
            &log_events,
            cfg.log_users,
            cfg.log_k,
            cfg.seed,
        )?;
        Ok(EpochLog {
            epoch,
            loss,
            auc,
            mean_unexp,
        })
    };

    let initial_loss = {
        let ctx = Epoch {
            model: &model,
            hist: &hist,
            prepared: &prepared,
            clusters: &clusters,
            stride: cfg.cluster_stride,
        };
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size.max(256)) {
            let inputs = ctx.inputs(batch);
            let labels: Vec<f64> = batch.iter().map(|&j| prepared.labels[j]).collect();
            let mut tape = Tape::new();
            let vars = ModelVars::bind(&mut tape, &model.params);
            let out = forward_batch(&mut tape, &model, &vars, &inputs, &[])?;
            let loss = tape.bce_with_logits(out.utility, &labels)?;
            total += tape.scalar(loss) * batch.len() as f64;
        }
        total / fit.len() as f64
    };
    log.push(summary(&model, 0, initial_loss)?);

    let needs_embeddings = cfg.cluster_distance == ClusterDistance::NearestMember;
    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % cfg.cluster_refresh_epochs == 0 {
            clusters = compute_clusters(&model, &hist, &prepared, cfg.cluster_stride)?;
        }
        let embeddings = if needs_embeddings {
            model.item_embeddings()
        } else {
            Vec::new()
        };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<f64> = batch.iter().map(|&j| prepared.labels[j]).collect();
            let mut tape = Tape::new();
            let loss = {
                let ctx = Epoch {
                    model: &model,
                    hist: &hist,
                    prepared: &prepared,
                    clusters: &clusters,
                    stride: cfg.cluster_stride,
                };
                let inputs = ctx.inputs(batch);
                let vars = ModelVars::bind(&mut tape, &model.params);
                let out = forward_batch(&mut tape, &model, &vars, &inputs, &embeddings)?;
                tape.bce_with_logits(out.utility, &labels)?
            };
            total += tape.scalar(loss) * batch.len() as f64;
            tape.backward_into(loss, &mut model.params.store)?;
            step_subset(&mut model.params.store, &ids, &cfg.sgd, epoch)?;
        }
        let loss = total / fit.len() as f64;
        if !loss.is_finite() {
            return Err(EngineError::Training(format!(
                "loss diverged in epoch {}",
                epoch + 1
            )));
        }
        log.push(summary(&model, epoch + 1, loss)?);
    }
    Ok(TrainOutcome { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(user: u32, item: u32, label: u8, ts: i64) -> Interaction {
        Interaction {
            user,
            item,
            label,
            timestamp: ts,
        }
    }

    #[test]
    fn carve_holds_out_each_users_latest_events() {
        let events: Vec<Interaction> = (0..10).map(|t| ev(t as u32 % 2, 0, 1, t)).collect();
        let (fit, val) = carve(&events, 0.2);
        assert_eq!(val.iter().map(|e| e.timestamp).collect::<Vec<_>>(), [8, 9]);
        assert_eq!(fit.len(), 8);
        let (fit, val) = carve(&events, 0.0);
        assert_eq!((fit.len(), val.len()), (10, 0));
    }

    #[test]
    fn snapshot_keys_never_look_ahead() {
        for stride in 1..6 {
            for n in 0..30 {
                assert!(snapshot_key(n, stride) <= n);
            }
        }
        assert_eq!(snapshot_key(7, 5), 5);
        assert_eq!(snapshot_key(3, 5), 3);
    }
}
