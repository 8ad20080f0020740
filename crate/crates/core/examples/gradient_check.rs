//! Analytic gradients of the full in-batch loss against central differences,
//! one line per parameter tensor.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use ctxrec::datagen::{generate, Dataset, GenConfig};
use ctxrec::encoder::{ModelConfig, ModelParams};
use ctxrec::seqstore::SeqStore;
use ctxrec::training::{build_samples, gradient_check, SampleConfig};

fn main() -> anyhow::Result<()> {
    let gen = GenConfig { num_users: 4, num_items: 24, num_categories: 3, mean_log_len: 40.0, profile_tokens: 2, profile_vocab: 4, ..GenConfig::default() };
    let (catalog, users, logs) = generate(&gen)?;
    let dataset = Dataset::from_generated(catalog, &users, logs);
    let cfg = ModelConfig {
        dim: 16,
        layers: 2,
        heads: 2,
        profile_tokens: 2,
        max_seq_len: 8,
        num_items: 24,
        num_categories: 3,
        profile_vocab: gen.profile_vocab_total(),
        ..ModelConfig::default()
    };
    let cats = dataset.catalog.items().iter().map(|i| i.category_id).collect();
    let params = ModelParams::<f64>::init(&cfg, cats)?;
    let samples = build_samples(&SeqStore::from_dataset(&dataset), &SampleConfig { max_seq_len: 8, ..SampleConfig::default() });
    let batch: Vec<_> = samples.iter().step_by(samples.len() / 4).take(4).cloned().collect();

    let checks = gradient_check(&params, &batch, true, 1e-5)?;
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    for c in &checks {
        println!("{:<28} {:>6} entries  |g| {:>10.3e}  rel err {:.2e}", c.name, c.len, c.analytic_norm, c.rel_error);
    }
    println!("{} parameters, worst relative error {worst:.2e}", params.num_parameters());
    Ok(())
}
