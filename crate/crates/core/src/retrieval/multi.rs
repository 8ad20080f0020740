use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::{Backend, CategoryIndex, ScoredItem};
use super::merge::{merge, MergeStrategy, MergedItem};
use crate::datagen::BehaviorLog;
use crate::encoder::{encode_all_items, encode_user, ModelParams, UserInput};
use crate::hash::mix_seed;
use crate::interest::{engagement_score, InterestStrategy};
use crate::seqstore::{hard_search_before, recent_any};
use crate::training::SequenceMode;
use crate::{CategoryId, Day, Error, ItemId, Result, UserId};

/// One index per category id, including empty categories.
pub type IndexSet = BTreeMap<CategoryId, CategoryIndex>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub selection: InterestStrategy,
    /// Base seed of the per-request selection RNG.
    pub seed: u64,
    pub per_category_k: usize,
    pub k_total: usize,
    pub merge: MergeStrategy,
    pub backend: Backend,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            selection: InterestStrategy::default(),
            seed: 7,
            per_category_k: 100,
            k_total: 200,
            merge: MergeStrategy::default(),
            backend: Backend::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        if self.per_category_k == 0 || self.k_total == 0 {
            return Err(Error::Config("per_category_k and k_total must be at least 1".into()));
        }
        Ok(())
    }
}

/// Selection RNG of one request.
pub fn request_rng(seed: u64, user: UserId, now: Day) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, user as u64), now as u64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category: CategoryId,
    pub subseq_len: usize,
    pub items: Vec<ScoredItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub user_id: UserId,
    pub now: Day,
    /// Selected interests in rank order.
    pub selected: Vec<CategoryId>,
    pub per_category: Vec<CategoryResult>,
    pub merged: Vec<MergedItem>,
    /// Selected categories without an index.
    pub skipped: Vec<CategoryId>,
}

/// Encodes every item once and builds one index per category.
pub fn build_indexes(params: &ModelParams<f32>, backend: Backend) -> Result<IndexSet> {
    let dim = params.config.dim;
    let all = encode_all_items(params);
    let mut parts: Vec<(Vec<ItemId>, Vec<f32>)> = vec![(Vec::new(), Vec::new()); params.config.num_categories];
    for (item, &cat) in params.item_category.iter().enumerate() {
        let (ids, vecs) = &mut parts[cat as usize];
        ids.push(item as ItemId);
        vecs.extend_from_slice(&all[item * dim..(item + 1) * dim]);
    }
    parts
        .into_iter()
        .enumerate()
        .map(|(c, (ids, vecs))| {
            let c = c as CategoryId;
            Ok((c, CategoryIndex::build(Some(c), ids, vecs, dim, params.config.temperature, backend)?))
        })
        .collect()
}

/// One index over the whole catalog, for single-vector retrieval.
pub fn build_global_index(params: &ModelParams<f32>, backend: Backend) -> Result<CategoryIndex> {
    let ids = (0..params.config.num_items as ItemId).collect();
    CategoryIndex::build(None, ids, encode_all_items(params), params.config.dim, params.config.temperature, backend)
}

/// Multi-context retrieval for one request at time `now`.
///
/// Only events on or before `now` are visible.
pub fn multi_retrieve(
    params: &ModelParams<f32>,
    log: &BehaviorLog,
    profile: &[u32],
    indexes: &IndexSet,
    cfg: &RetrievalConfig,
    now: Day,
) -> Result<RetrievalResult> {
    multi_retrieve_with(params, log, profile, indexes, cfg, now, SequenceMode::HardSearch)
}

/// [`multi_retrieve`] with a choice of user history. Under
/// [`SequenceMode::RecentAny`] every interest sees the same recent events.
pub fn multi_retrieve_with(
    params: &ModelParams<f32>,
    log: &BehaviorLog,
    profile: &[u32],
    indexes: &IndexSet,
    cfg: &RetrievalConfig,
    now: Day,
    mode: SequenceMode,
) -> Result<RetrievalResult> {
    let visible = BehaviorLog {
        user_id: log.user_id,
        events: log.events[..log.events.partition_point(|e| e.timestamp <= now)].to_vec(),
    };
    let scores = engagement_score(&visible, now)?;
    let selected = cfg.selection.select(&scores, &mut request_rng(cfg.seed, log.user_id, now));
    let mut per_category = Vec::with_capacity(selected.len());
    let mut skipped = Vec::new();
    for &c in &selected {
        let Some(index) = indexes.get(&c) else {
            skipped.push(c);
            continue;
        };
        let subseq = match mode {
            SequenceMode::HardSearch => hard_search_before(&visible, c, params.config.max_seq_len, now + 1),
            SequenceMode::RecentAny => recent_any(&visible, params.config.max_seq_len, None),
        };
        let user = encode_user(params, UserInput { profile, subseq: &subseq, now })?;
        per_category.push(CategoryResult { category: c, subseq_len: subseq.len(), items: index.query(&user.0, cfg.per_category_k) });
    }
    let lists: Vec<(CategoryId, Vec<ScoredItem>)> = per_category.iter().map(|r| (r.category, r.items.clone())).collect();
    let merged = merge(&lists, cfg.merge, cfg.k_total);
    Ok(RetrievalResult { user_id: log.user_id, now, selected, per_category, merged, skipped })
}

/// Single-vector baseline: one user vector from the most recent events of any
/// category, one query over the whole catalog.
pub fn global_retrieve(
    params: &ModelParams<f32>,
    log: &BehaviorLog,
    profile: &[u32],
    index: &CategoryIndex,
    k: usize,
    now: Day,
) -> Result<Vec<MergedItem>> {
    let subseq = recent_any(log, params.config.max_seq_len, Some(now + 1));
    let user = encode_user(params, UserInput { profile, subseq: &subseq, now })?;
    index
        .query(&user.0, k)
        .into_iter()
        .map(|s| Ok(MergedItem { item_id: s.item_id, score: s.score, source_category: params.category_of(s.item_id)? }))
        .collect()
}
