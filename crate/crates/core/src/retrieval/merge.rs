use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::index::{rank_order, ScoredItem};
use crate::{CategoryId, ItemId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MergeStrategy {
    /// Round-robin by rank across lists, in list order.
    #[default]
    Interleave,
    /// Union sorted by score.
    GlobalScore,
    /// At most `q` per list first, then the remainder by score.
    Quota { q: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedItem {
    pub item_id: ItemId,
    pub score: f64,
    pub source_category: CategoryId,
}

impl MergedItem {
    fn scored(&self) -> ScoredItem {
        ScoredItem { item_id: self.item_id, score: self.score }
    }
}

/// Merges per-category ranked lists into at most `k_total` unique items.
///
/// When an item occurs in several lists only its highest-scored occurrence
/// survives (the earliest list wins exact ties).
pub fn merge(lists: &[(CategoryId, Vec<ScoredItem>)], strategy: MergeStrategy, k_total: usize) -> Vec<MergedItem> {
    let mut best: HashMap<ItemId, (f64, usize)> = HashMap::new();
    for (li, (_, list)) in lists.iter().enumerate() {
        for s in list {
            match best.get(&s.item_id) {
                Some(&(score, _)) if score >= s.score => {}
                _ => {
                    best.insert(s.item_id, (s.score, li));
                }
            }
        }
    }
    let kept: Vec<Vec<MergedItem>> = lists
        .iter()
        .enumerate()
        .map(|(li, (cat, list))| {
            let mut seen = Vec::new();
            list.iter()
                .filter(|s| best.get(&s.item_id).is_some_and(|&(_, owner)| owner == li))
                .filter(|s| {
                    // A list may repeat an item; keep its first occurrence.
                    if seen.contains(&s.item_id) {
                        false
                    } else {
                        seen.push(s.item_id);
                        true
                    }
                })
                .map(|s| MergedItem { item_id: s.item_id, score: s.score, source_category: *cat })
                .collect()
        })
        .collect();

    let by_score = |v: &mut Vec<MergedItem>| v.sort_by(|a, b| rank_order(&a.scored(), &b.scored()));
    let mut out = match strategy {
        MergeStrategy::Interleave => {
            let depth = kept.iter().map(Vec::len).max().unwrap_or(0);
            let mut out = Vec::new();
            for r in 0..depth {
                out.extend(kept.iter().filter_map(|l| l.get(r).copied()));
            }
            out
        }
        MergeStrategy::GlobalScore => {
            let mut all: Vec<MergedItem> = kept.into_iter().flatten().collect();
            by_score(&mut all);
            all
        }
        MergeStrategy::Quota { q } => {
            let mut head = Vec::new();
            let mut rest = Vec::new();
            for l in kept {
                let split = q.min(l.len());
                head.extend_from_slice(&l[..split]);
                rest.extend_from_slice(&l[split..]);
            }
            by_score(&mut head);
            by_score(&mut rest);
            head.extend(rest);
            head
        }
    };
    out.truncate(k_total);
    out
}
