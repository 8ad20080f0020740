use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::TrainSample;
use crate::CategoryId;

/// What happens to partially filled queues when the stream ends.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlushPolicy {
    #[default]
    Drop,
    EmitShort,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub samples: Vec<TrainSample>,
    /// Shared context category, `None` when the batch mixes categories.
    pub category: Option<CategoryId>,
    /// Emitted by the end-of-epoch flush rather than by a full queue.
    pub flushed: bool,
}

impl Batch {
    fn new(samples: Vec<TrainSample>, flushed: bool) -> Self {
        let first = samples.first().map(|s| s.context_category);
        let category = first.filter(|&c| samples.iter().all(|s| s.context_category == c));
        Self { samples, category, flushed }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn distinct_categories(&self) -> usize {
        let mut cats: Vec<CategoryId> = self.samples.iter().map(|s| s.context_category).collect();
        cats.sort_unstable();
        cats.dedup();
        cats.len()
    }
}

/// Per-category sample queues. A queue that reaches `batch_size` is emitted
/// at once as a single-category batch.
#[derive(Debug)]
pub struct BatchCache {
    batch_size: usize,
    queue_cap: usize,
    flush: FlushPolicy,
    queues: BTreeMap<CategoryId, VecDeque<TrainSample>>,
    evicted: usize,
}

impl BatchCache {
    /// Queue capacity defaults to `64 * batch_size`.
    pub fn new(batch_size: usize, flush: FlushPolicy) -> Self {
        Self::with_queue_cap(batch_size, flush, 64 * batch_size.max(1))
    }

    /// `queue_cap` is clamped to at least `batch_size`; overflow evicts the
    /// oldest sample of that queue.
    pub fn with_queue_cap(batch_size: usize, flush: FlushPolicy, queue_cap: usize) -> Self {
        let batch_size = batch_size.max(1);
        Self { batch_size, queue_cap: queue_cap.max(batch_size), flush, queues: BTreeMap::new(), evicted: 0 }
    }

    pub fn push(&mut self, sample: TrainSample) -> Option<Batch> {
        let q = self.queues.entry(sample.context_category).or_default();
        q.push_back(sample);
        if q.len() > self.queue_cap {
            q.pop_front();
            self.evicted += 1;
        }
        if q.len() >= self.batch_size {
            let samples: Vec<TrainSample> = q.drain(..self.batch_size).collect();
            return Some(Batch::new(samples, false));
        }
        None
    }

    /// Pulls from `stream` until a batch is ready. Once the stream is
    /// exhausted, applies the flush policy; `None` marks end of epoch.
    pub fn next_batch(&mut self, stream: &mut impl Iterator<Item = TrainSample>) -> Option<Batch> {
        for sample in stream.by_ref() {
            if let Some(b) = self.push(sample) {
                return Some(b);
            }
        }
        match self.flush {
            FlushPolicy::Drop => {
                self.queues.clear();
                None
            }
            FlushPolicy::EmitShort => {
                let (&cat, _) = self.queues.iter().find(|(_, q)| !q.is_empty())?;
                let samples: Vec<TrainSample> = self.queues.remove(&cat).expect("present").into();
                Some(Batch::new(samples, true))
            }
        }
    }

    pub fn pending(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn evicted(&self) -> usize {
        self.evicted
    }
}

/// Sequential chunks of the stream in arrival order; categories may mix. The
/// trailing chunk may be short and is marked `flushed`.
pub fn naive_batches(stream: impl IntoIterator<Item = TrainSample>, batch_size: usize) -> impl Iterator<Item = Batch> {
    let batch_size = batch_size.max(1);
    let mut it = stream.into_iter();
    std::iter::from_fn(move || {
        let chunk: Vec<TrainSample> = it.by_ref().take(batch_size).collect();
        if chunk.is_empty() {
            return None;
        }
        let short = chunk.len() < batch_size;
        Some(Batch::new(chunk, short))
    })
}
