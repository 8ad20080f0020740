//! In-context training next to the naive baseline: batch purity, loss curve
//! and a checkpoint written to disk.
//!
//! ```text
//! cargo run --release --example train_in_context
//! ```

use ctxrec::datagen::{generate, Dataset, GenConfig};
use ctxrec::encoder::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use ctxrec::seqstore::SeqStore;
use ctxrec::training::{build_samples, Batching, SampleConfig, TrainConfig, Trainer};

fn main() -> anyhow::Result<()> {
    let gen = GenConfig { num_users: 400, num_items: 2_000, num_categories: 10, mean_log_len: 120.0, ..GenConfig::default() };
    let (catalog, users, logs) = generate(&gen)?;
    let dataset = Dataset::from_generated(catalog, &users, logs);
    let model = ModelConfig {
        dim: 16,
        max_seq_len: 20,
        num_items: gen.num_items,
        num_categories: gen.num_categories,
        profile_vocab: gen.profile_vocab_total(),
        ..ModelConfig::default()
    };
    let samples = build_samples(
        &SeqStore::from_dataset(&dataset),
        &SampleConfig { max_seq_len: model.max_seq_len, max_samples_per_user: 20, ..SampleConfig::default() },
    );
    println!("{} training samples", samples.len());

    for batching in [Batching::InContext, Batching::Naive] {
        let cfg = TrainConfig { batching, batch_size: 64, epochs: 2, ..TrainConfig::default() };
        let batches = Trainer::epoch_batches(&cfg, &samples, 0);
        let pure = batches.iter().filter(|b| b.distinct_categories() == 1).count();
        println!("{batching:?}: {} batches in epoch 0, {pure} single-category", batches.len());

        let cats = dataset.catalog.items().iter().map(|i| i.category_id).collect();
        let mut trainer = Trainer::new(ModelParams::init(&model, cats)?, cfg)?;
        let mut curve = Vec::new();
        trainer.run(&samples, |m| curve.push(m.loss))?;
        let head: f64 = curve.iter().take(10).sum::<f64>() / curve.len().min(10) as f64;
        let tail: f64 = curve.iter().rev().take(10).sum::<f64>() / curve.len().min(10) as f64;
        println!("  {} steps, mean loss first 10 {head:.3}, last 10 {tail:.3}", curve.len());

        if batching == Batching::InContext {
            let path = std::env::temp_dir().join("ctxrec-in-context.ckpt");
            save_checkpoint(trainer.params(), &path)?;
            assert_eq!(&load_checkpoint(&path)?, trainer.params());
            println!("  checkpoint {}", path.display());
        }
    }
    Ok(())
}
