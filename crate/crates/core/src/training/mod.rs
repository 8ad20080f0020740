//! In-batch contrastive training.
//!
//! Samples are `(user, positive item)` interactions whose user side is the
//! hard-searched history of the positive's category, built from strictly
//! earlier events. [`BatchCache`] groups the shuffled sample stream into
//! single-category batches, so every in-batch negative shares the
//! positive's category. [`naive_batches`] is the mixed-category baseline.

mod adam;
mod batching;
mod gradcheck;
mod loss;
mod samples;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use batching::{naive_batches, Batch, BatchCache, FlushPolicy};
pub use gradcheck::{gradient_check, GroupCheck};
pub use loss::{in_batch_loss, in_batch_loss_with_ids, LossOutput};
pub use samples::{build_samples, SampleConfig, SequenceMode, TrainSample};
pub use trainer::{batch_loss, batch_loss_and_grads, Batching, StepMetrics, TrainConfig, Trainer};
