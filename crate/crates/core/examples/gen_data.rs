//! Generate a seeded synthetic dataset, round-trip it through JSONL and show
//! how well per-user category frequencies track the planted mixtures.
//!
//! ```text
//! cargo run --release --example gen_data
//! ```

use ctxrec::datagen::{generate, read_dataset, write_dataset, Dataset, GenConfig};
use ctxrec::seqstore::engagement_counts;

fn main() -> anyhow::Result<()> {
    let cfg = GenConfig { num_users: 200, num_items: 2_000, num_categories: 20, mean_log_len: 150.0, ..GenConfig::default() };
    let (catalog, users, logs) = generate(&cfg)?;
    let events: usize = logs.iter().map(|l| l.len()).sum();
    println!("{} users, {} items, {} categories, {events} events", users.len(), catalog.num_items(), catalog.num_categories());

    for (user, log) in users.iter().zip(&logs).take(3) {
        let counts = engagement_counts(log);
        let mut planted: Vec<(usize, f64)> = user.category_mixture.iter().copied().enumerate().collect();
        planted.sort_by(|a, b| b.1.total_cmp(&a.1));
        println!("user {} ({} events)", user.user_id, log.len());
        for &(c, w) in planted.iter().take(3) {
            let seen = counts.get(&(c as u32)).map_or(0, Vec::len);
            println!("  category {c:>2}: planted {w:.3}, observed {:.3}", seen as f64 / log.len().max(1) as f64);
        }
    }

    let dataset = Dataset::from_generated(catalog, &users, logs);
    let dir = std::env::temp_dir().join("ctxrec-gen-data");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("dataset.jsonl.gz");
    write_dataset(&path, &dataset, true)?;
    let back = read_dataset(&path)?;
    assert_eq!(back, dataset);
    println!("wrote and re-read {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    Ok(())
}
