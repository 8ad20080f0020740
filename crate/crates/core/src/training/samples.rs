use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::seqstore::{hard_search_before, recent_any, SeqStore, SubSequence};
use crate::{CategoryId, Day, ItemId, UserId};

/// Which history the user tower sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    /// Most recent events of the context category.
    #[default]
    HardSearch,
    /// Most recent events of any category (short-sequence baseline).
    RecentAny,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Follows the model's subsequence length; not read from config files.
    #[serde(skip)]
    pub max_seq_len: usize,
    /// Prior same-category events an interaction needs to become a sample.
    pub min_history: usize,
    /// Keep only the most recent eligible interactions per user; 0 keeps all.
    pub max_samples_per_user: usize,
    pub mode: SequenceMode,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            max_seq_len: crate::seqstore::DEFAULT_MAX_LEN,
            min_history: 1,
            max_samples_per_user: 20,
            mode: SequenceMode::HardSearch,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub user_id: UserId,
    pub profile_tokens: Vec<u32>,
    pub positive_item: ItemId,
    pub context_category: CategoryId,
    pub timestamp: Day,
    pub subseq: SubSequence,
}

/// One sample per training interaction with at least `min_history` strictly
/// earlier events of the same category. Users ascending, events chronological.
pub fn build_samples(store: &SeqStore, cfg: &SampleConfig) -> Vec<TrainSample> {
    let mut out = Vec::new();
    for user in store.users() {
        let log = store.log(user).expect("listed user");
        let profile = store.profile(user).expect("listed user");
        let mut eligible = Vec::new();
        let mut seen: HashMap<CategoryId, usize> = HashMap::new();
        let mut start = 0;
        while start < log.events.len() {
            let day = log.events[start].timestamp;
            let end = start + log.events[start..].partition_point(|e| e.timestamp == day);
            for (idx, e) in log.events[start..end].iter().enumerate() {
                if seen.get(&e.category_id).copied().unwrap_or(0) >= cfg.min_history {
                    eligible.push(start + idx);
                }
            }
            for e in &log.events[start..end] {
                *seen.entry(e.category_id).or_default() += 1;
            }
            start = end;
        }
        if cfg.max_samples_per_user > 0 && eligible.len() > cfg.max_samples_per_user {
            eligible.drain(..eligible.len() - cfg.max_samples_per_user);
        }
        for idx in eligible {
            let e = log.events[idx];
            let subseq = match cfg.mode {
                SequenceMode::HardSearch => hard_search_before(log, e.category_id, cfg.max_seq_len, e.timestamp),
                SequenceMode::RecentAny => recent_any(log, cfg.max_seq_len, Some(e.timestamp)),
            };
            out.push(TrainSample {
                user_id: user,
                profile_tokens: profile.to_vec(),
                positive_item: e.item_id,
                context_category: e.category_id,
                timestamp: e.timestamp,
                subseq,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{BehaviorLog, Event};
    use proptest::prelude::*;

    fn store(logs: Vec<BehaviorLog>) -> SeqStore {
        let profiles: Vec<_> = logs.iter().map(|l| (l.user_id, vec![0])).collect();
        SeqStore::from_parts(profiles, logs)
    }

    fn ev(item: u32, cat: u32, t: Day) -> Event {
        Event { item_id: item, category_id: cat, timestamp: t }
    }

    #[test]
    fn single_event_user_yields_nothing() {
        let s = store(vec![BehaviorLog { user_id: 0, events: vec![ev(1, 0, 5)] }]);
        assert!(build_samples(&s, &SampleConfig::default()).is_empty());
    }

    #[test]
    fn same_day_history_does_not_count() {
        let s = store(vec![BehaviorLog { user_id: 0, events: vec![ev(1, 0, 5), ev(2, 0, 5), ev(3, 0, 6)] }]);
        let samples = build_samples(&s, &SampleConfig::default());
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].positive_item, 3);
        assert_eq!(samples[0].subseq.len(), 2);
    }

    #[test]
    fn cap_keeps_latest() {
        let events = (0..10).map(|t| ev(t as u32, 0, t)).collect();
        let s = store(vec![BehaviorLog { user_id: 0, events }]);
        let cfg = SampleConfig { max_samples_per_user: 3, ..SampleConfig::default() };
        let got: Vec<u32> = build_samples(&s, &cfg).iter().map(|x| x.positive_item).collect();
        assert_eq!(got, vec![7, 8, 9]);
    }

    #[test]
    fn recent_any_mixes_categories() {
        let s = store(vec![BehaviorLog { user_id: 0, events: vec![ev(1, 0, 1), ev(2, 1, 2), ev(3, 0, 3)] }]);
        let cfg = SampleConfig { mode: SequenceMode::RecentAny, ..SampleConfig::default() };
        let samples = build_samples(&s, &cfg);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].subseq.len(), 2);
        assert_eq!(samples[0].subseq.context_category, None);
    }

    fn arb_logs() -> impl Strategy<Value = Vec<BehaviorLog>> {
        prop::collection::vec(prop::collection::vec((0u32..20, 0u32..3, 0i64..3), 0..25), 1..6).prop_map(|users| {
            users
                .into_iter()
                .enumerate()
                .map(|(u, raw)| {
                    let mut t = 0;
                    let events = raw
                        .into_iter()
                        .map(|(i, c, dt)| {
                            t += dt;
                            ev(i, c, t)
                        })
                        .collect();
                    BehaviorLog { user_id: u as u32, events }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn count_and_leakage_match_brute_force(logs in arb_logs(), min_history in 1usize..3, l in 1usize..6, cap in 0usize..5) {
            let mut expected = 0;
            for log in &logs {
                let mut eligible = 0;
                for e in &log.events {
                    let prior = log.events.iter()
                        .filter(|p| p.category_id == e.category_id && p.timestamp < e.timestamp)
                        .count();
                    if prior >= min_history { eligible += 1; }
                }
                expected += if cap == 0 { eligible } else { eligible.min(cap) };
            }
            let cfg = SampleConfig { max_seq_len: l, min_history, max_samples_per_user: cap, ..SampleConfig::default() };
            let samples = build_samples(&store(logs), &cfg);
            prop_assert_eq!(samples.len(), expected);
            for s in &samples {
                prop_assert_eq!(s.subseq.context_category, Some(s.context_category));
                prop_assert!(s.subseq.len() >= min_history.min(l));
                prop_assert!(s.subseq.entries.iter().all(|e| e.timestamp < s.timestamp && e.category_id == s.context_category));
            }
        }
    }
}
