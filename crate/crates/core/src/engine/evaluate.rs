use std::collections::{BTreeSet, HashSet};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::history::Histories;
use super::scorer::{recommend_topk, Scorer, UserContext};
use super::{EngineError, Model};
use crate::data::Interaction;
use crate::metrics::{
    auc, coverage, hit_rate_from_ranks, mean_unexpectedness, rank_among, MetricsReport,
};
use crate::unexpectedness::InterestCluster;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// List length for hit rate, coverage and unexpectedness.
    pub k: usize,
    /// Sampled negatives each held-out positive is ranked against.
    pub hr_negatives: usize,
    /// Rank each held-out click against every item its user never
    /// interacted with instead of a sample.
    pub full_catalog_hr: bool,
    pub seed: u64,
    /// Evaluate at most this many test users, sampled with `seed`.
    pub max_users: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            hr_negatives: 99,
            full_catalog_hr: false,
            seed: 0,
            max_users: None,
        }
    }
}

fn users_of(events: &[Interaction]) -> Vec<usize> {
    events
        .iter()
        .map(|e| e.user as usize)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn sample_users(mut users: Vec<usize>, limit: Option<usize>, seed: u64) -> Vec<usize> {
    if let Some(m) = limit {
        if users.len() > m {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            users = users.choose_multiple(&mut rng, m).copied().collect();
            users.sort_unstable();
        }
    }
    users
}

/// Top-`k` of the catalog minus the user's consumed items.
fn top_unseen(
    scorer: &Scorer,
    ctx: &UserContext,
    seen: &HashSet<usize>,
    k: usize,
) -> Result<Vec<usize>, EngineError> {
    let candidates: Vec<usize> = (0..scorer.model.params.n_items())
        .filter(|i| !seen.contains(i))
        .collect();
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let k = k.min(candidates.len());
    Ok(recommend_topk(scorer, ctx, &candidates, k)?
        .into_iter()
        .map(|(i, _)| i)
        .collect())
}

fn seen_items(events: &[Interaction], n_users: usize) -> Vec<HashSet<usize>> {
    let mut seen = vec![HashSet::new(); n_users];
    for e in events {
        seen[e.user as usize].insert(e.item as usize);
    }
    seen
}

fn recommendation_unexp(
    scorer: &Scorer,
    contexts: &[UserContext],
    seen: &[HashSet<usize>],
    k: usize,
) -> Result<(Vec<Vec<usize>>, f64), EngineError> {
    let lists: Vec<Vec<usize>> = contexts
        .par_iter()
        .map(|ctx| top_unseen(scorer, ctx, &seen[ctx.user], k))
        .collect::<Result<_, _>>()?;
    let clusters: Vec<Vec<InterestCluster>> = contexts
        .iter()
        .map(|c| c.clusters.clusters.clone())
        .collect();
    let unexp = mean_unexpectedness(&lists, &clusters, &scorer.item_embeddings)?;
    Ok((lists, unexp))
}

/// Validation AUC of `events` and the mean unexpectedness of top-`k` lists
/// for up to `log_users` of their users, all scored from `hist`.
pub(crate) fn validation_summary(
    model: &Model,
    hist: &Histories,
    events: &[Interaction],
    log_users: usize,
    k: usize,
    seed: u64,
) -> Result<(Option<f64>, f64), EngineError> {
    let scorer = Scorer::new(model);
    let users = users_of(events);
    let contexts = scorer.contexts(&users, hist)?;
    let mut pos = vec![usize::MAX; hist.n_users()];
    for (j, &u) in users.iter().enumerate() {
        pos[u] = j;
    }
    let scores: Vec<f64> = events
        .par_iter()
        .map(|e| {
            scorer
                .score(&contexts[pos[e.user as usize]], e.item as usize)
                .map(|s| s.utility)
        })
        .collect::<Result<_, _>>()?;
    let labels: Vec<u8> = events.iter().map(|e| e.label).collect();
    let auc = auc(&scores, &labels).ok();
    let picked: HashSet<usize> = sample_users(users.clone(), Some(log_users), seed)
        .into_iter()
        .collect();
    let sampled: Vec<UserContext> = contexts
        .into_iter()
        .filter(|c| picked.contains(&c.user))
        .collect();
    let seen: Vec<HashSet<usize>> = (0..hist.n_users())
        .map(|u| hist.items(u).iter().copied().collect())
        .collect();
    let (_, unexp) = recommendation_unexp(&scorer, &sampled, &seen, k)?;
    Ok((auc, unexp))
}

/// Scores `test_events` with histories drawn from `train_events`.
///
/// AUC is over the utilities of every test event. Each test click is ranked
/// against `hr_negatives` items its user never interacted with; candidates
/// tying the click rank ahead of it. Coverage and unexpectedness use each
/// test user's top-`k` list over the items absent from their training
/// events, with unexpectedness measured against mean-shift interest
/// clusters for every variant.
pub fn evaluate(
    model: &Model,
    train_events: &[Interaction],
    test_events: &[Interaction],
    cfg: &EvalConfig,
) -> Result<MetricsReport, EngineError> {
    if cfg.k == 0 || cfg.hr_negatives == 0 {
        return Err(EngineError::Training(
            "k and hr_negatives must be positive".into(),
        ));
    }
    let n_users = model.params.n_users();
    let n_items = model.params.n_items();
    if let Some(e) = train_events
        .iter()
        .chain(test_events)
        .find(|e| e.user as usize >= n_users || e.item as usize >= n_items)
    {
        return Err(EngineError::Training(format!(
            "event ({}, {}) lies outside the model's {n_users} users and {n_items} items",
            e.user, e.item
        )));
    }
    let users = sample_users(users_of(test_events), cfg.max_users, cfg.seed);
    let kept: HashSet<usize> = users.iter().copied().collect();
    let test: Vec<Interaction> = test_events
        .iter()
        .filter(|e| kept.contains(&(e.user as usize)))
        .copied()
        .collect();

    let hist = Histories::from_interactions(n_users, train_events);
    let scorer = Scorer::new(model);
    let contexts = scorer.contexts(&users, &hist)?;
    let mut pos = vec![usize::MAX; n_users];
    for (j, &u) in users.iter().enumerate() {
        pos[u] = j;
    }

    let scores: Vec<f64> = test
        .par_iter()
        .map(|e| {
            scorer
                .score(&contexts[pos[e.user as usize]], e.item as usize)
                .map(|s| s.utility)
        })
        .collect::<Result<_, _>>()?;
    let labels: Vec<u8> = test.iter().map(|e| e.label).collect();
    let auc = auc(&scores, &labels)?;

    let interacted = seen_items(&[train_events, &test[..]].concat(), n_users);
    let cases: Vec<(usize, &Interaction)> = test
        .iter()
        .enumerate()
        .filter(|(_, e)| e.label == 1)
        .collect();
    let ranks: Vec<Option<usize>> = cases
        .par_iter()
        .map(|&(j, e)| {
            let u = e.user as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(
                cfg.seed ^ (j as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            let pool = (0..n_items).filter(|i| !interacted[u].contains(i));
            let negatives: Vec<usize> = if cfg.full_catalog_hr {
                pool.collect()
            } else {
                pool.choose_multiple(&mut rng, cfg.hr_negatives)
            };
            if negatives.is_empty() {
                return Ok(None);
            }
            let others = scorer.utilities(&contexts[pos[u]], &negatives)?;
            Ok(Some(rank_among(scores[j], &others)))
        })
        .collect::<Result<_, EngineError>>()?;
    let hr_skipped = ranks.iter().filter(|r| r.is_none()).count();
    let ranks: Vec<usize> = ranks.into_iter().flatten().collect();
    let hr = if ranks.is_empty() {
        0.0
    } else {
        hit_rate_from_ranks(&ranks, cfg.k)?
    };

    let seen = seen_items(train_events, n_users);
    let (lists, unexp) = recommendation_unexp(&scorer, &contexts, &seen, cfg.k)?;
    Ok(MetricsReport {
        auc,
        hr_at_10: hr,
        mean_unexpectedness: unexp,
        coverage: coverage(&lists, n_items)?,
        n_users: users.len(),
        n_events: test.len(),
        hr_cases: ranks.len(),
        hr_skipped,
    })
}
