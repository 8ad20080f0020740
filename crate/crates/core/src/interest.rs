//! Time-weighted engagement scores and interest selection.
//!
//! A category's engagement is `sum over its events of 1 / max(now - t, 1)`,
//! with `t` in days. Same-day events weigh 1.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::BehaviorLog;
use crate::{CategoryId, Day, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct InterestScoreTable {
    /// Only categories with at least one event appear.
    pub scores: BTreeMap<CategoryId, f64>,
    pub reference_time: Day,
}

impl InterestScoreTable {
    pub fn score(&self, category: CategoryId) -> f64 {
        self.scores.get(&category).copied().unwrap_or(0.0)
    }

    /// Positive-score categories by score descending, then id ascending.
    pub fn ranked(&self) -> Vec<(CategoryId, f64)> {
        let mut v: Vec<(CategoryId, f64)> = self.scores.iter().map(|(&c, &s)| (c, s)).filter(|&(_, s)| s > 0.0).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

pub fn engagement_score(log: &BehaviorLog, now: Day) -> Result<InterestScoreTable> {
    let mut scores = BTreeMap::new();
    for e in &log.events {
        if e.timestamp > now {
            return Err(Error::Input(format!(
                "user {}: event at day {} is newer than request time {now}",
                log.user_id, e.timestamp
            )));
        }
        *scores.entry(e.category_id).or_insert(0.0) += 1.0 / (now - e.timestamp).max(1) as f64;
    }
    Ok(InterestScoreTable { scores, reference_time: now })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub top_m: usize,
    pub pick_n: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { top_m: 20, pick_n: 5, seed: 7 }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pick_n == 0 || self.pick_n > self.top_m {
            return Err(Error::Config(format!(
                "selection requires 1 <= pick_n <= top_m (got pick_n={}, top_m={})",
                self.pick_n, self.top_m
            )));
        }
        Ok(())
    }
}

/// Random-in-Top with the RNG seeded from `cfg.seed`.
pub fn random_in_top(scores: &InterestScoreTable, cfg: &SelectionConfig) -> Vec<CategoryId> {
    random_in_top_with(scores, cfg.top_m, cfg.pick_n, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Keeps the `top_m` best categories and draws `pick_n` of them uniformly
/// without replacement. The result is listed in rank order; when fewer than
/// `pick_n` categories qualify, all of them are returned.
pub fn random_in_top_with(scores: &InterestScoreTable, top_m: usize, pick_n: usize, rng: &mut impl Rng) -> Vec<CategoryId> {
    let mut ranked = scores.ranked();
    ranked.truncate(top_m);
    if ranked.len() <= pick_n {
        return ranked.into_iter().map(|(c, _)| c).collect();
    }
    let mut picked = index::sample(rng, ranked.len(), pick_n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| ranked[i].0).collect()
}

/// Deterministic top-`n` by (score desc, id asc).
pub fn top_n(scores: &InterestScoreTable, n: usize) -> Vec<CategoryId> {
    scores.ranked().into_iter().take(n).map(|(c, _)| c).collect()
}

/// Interest selection strategy of a retrieval request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterestStrategy {
    RandomInTop { top_m: usize, pick_n: usize },
    TopN { n: usize },
}

impl Default for InterestStrategy {
    fn default() -> Self {
        InterestStrategy::RandomInTop { top_m: 20, pick_n: 5 }
    }
}

impl InterestStrategy {
    pub fn select(&self, scores: &InterestScoreTable, rng: &mut impl Rng) -> Vec<CategoryId> {
        match *self {
            InterestStrategy::RandomInTop { top_m, pick_n } => random_in_top_with(scores, top_m, pick_n, rng),
            InterestStrategy::TopN { n } => top_n(scores, n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InterestStrategy::RandomInTop { top_m, pick_n } => SelectionConfig { top_m, pick_n, seed: 0 }.validate(),
            InterestStrategy::TopN { n } if n == 0 => Err(Error::Config("selection n must be at least 1".into())),
            InterestStrategy::TopN { .. } => Ok(()),
        }
    }
}
