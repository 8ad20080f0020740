//! Lifelong log storage and category hard search.

use std::collections::BTreeMap;

use crate::datagen::{BehaviorLog, Dataset, Event};
use crate::{CategoryId, Day, UserId};

/// Default subsequence length.
pub const DEFAULT_MAX_LEN: usize = 50;

/// A length-capped slice of a user's history, oldest first.
///
/// Hard-searched subsequences carry `Some(context)` and every entry has that
/// category. Recency-only subsequences (the short-sequence baseline) carry
/// `None` and may mix categories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubSequence {
    pub entries: Vec<Event>,
    pub context_category: Option<CategoryId>,
    pub capacity: usize,
}

impl SubSequence {
    pub fn empty(context_category: Option<CategoryId>, capacity: usize) -> Self {
        Self { entries: Vec::new(), context_category, capacity }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `true` for every empty slot; entries fill the leading slots.
    pub fn pad_mask(&self) -> Vec<bool> {
        (0..self.capacity).map(|i| i >= self.entries.len()).collect()
    }
}

/// Most recent `max_len` events of `context`, chronological.
pub fn hard_search(log: &BehaviorLog, context: CategoryId, max_len: usize) -> SubSequence {
    collect_recent(&log.events, Some(context), max_len)
}

/// Like [`hard_search`] but only over events strictly earlier than `before`.
pub fn hard_search_before(log: &BehaviorLog, context: CategoryId, max_len: usize, before: Day) -> SubSequence {
    collect_recent(prefix_before(&log.events, before), Some(context), max_len)
}

/// Most recent `max_len` events of any category strictly earlier than `before`
/// (or of the whole log when `before` is `None`).
pub fn recent_any(log: &BehaviorLog, max_len: usize, before: Option<Day>) -> SubSequence {
    let events = match before {
        Some(t) => prefix_before(&log.events, t),
        None => &log.events,
    };
    collect_recent(events, None, max_len)
}

fn prefix_before(events: &[Event], before: Day) -> &[Event] {
    &events[..events.partition_point(|e| e.timestamp < before)]
}

fn collect_recent(events: &[Event], context: Option<CategoryId>, max_len: usize) -> SubSequence {
    let max_len = max_len.max(1);
    let mut entries: Vec<Event> = events
        .iter()
        .rev()
        .filter(|e| context.is_none_or(|c| e.category_id == c))
        .take(max_len)
        .copied()
        .collect();
    entries.reverse();
    SubSequence { entries, context_category: context, capacity: max_len }
}

/// Partition of the log's timestamps by category.
pub fn engagement_counts(log: &BehaviorLog) -> BTreeMap<CategoryId, Vec<Day>> {
    let mut out: BTreeMap<CategoryId, Vec<Day>> = BTreeMap::new();
    for e in &log.events {
        out.entry(e.category_id).or_default().push(e.timestamp);
    }
    out
}

/// In-memory user -> (profile, log) map. Read-only once built.
#[derive(Clone, Debug, Default)]
pub struct SeqStore {
    users: BTreeMap<UserId, (Vec<u32>, BehaviorLog)>,
}

impl SeqStore {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self::from_parts(
            dataset.profiles.iter().map(|p| (p.user_id, p.tokens.clone())),
            dataset.logs.iter().cloned(),
        )
    }

    /// Pairs profiles with logs by user id; users without a log get an empty one.
    pub fn from_parts(
        profiles: impl IntoIterator<Item = (UserId, Vec<u32>)>,
        logs: impl IntoIterator<Item = BehaviorLog>,
    ) -> Self {
        let mut users: BTreeMap<UserId, (Vec<u32>, BehaviorLog)> = profiles
            .into_iter()
            .map(|(id, tokens)| (id, (tokens, BehaviorLog { user_id: id, events: Vec::new() })))
            .collect();
        for log in logs {
            let id = log.user_id;
            users.entry(id).or_insert_with(|| (Vec::new(), BehaviorLog::default())).1 = log;
        }
        Self { users }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn log(&self, user: UserId) -> Option<&BehaviorLog> {
        self.users.get(&user).map(|(_, l)| l)
    }

    pub fn profile(&self, user: UserId) -> Option<&[u32]> {
        self.users.get(&user).map(|(p, _)| p.as_slice())
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.users.keys().copied()
    }
}
