//! Hard search: cut a lifelong log down to the most recent events of one
//! category, compared with the most recent events of any category.
//!
//! ```text
//! cargo run --release --example hard_search
//! ```

use ctxrec::datagen::{generate, GenConfig};
use ctxrec::seqstore::{engagement_counts, hard_search, recent_any};

fn main() -> anyhow::Result<()> {
    let cfg = GenConfig { num_users: 20, num_items: 1_000, num_categories: 10, mean_log_len: 300.0, ..GenConfig::default() };
    let (_, _, logs) = generate(&cfg)?;
    let log = &logs[0];
    let max_len = 8;
    println!("user {} has {} events over days {:?}..={:?}", log.user_id, log.len(), log.events.first().map(|e| e.timestamp), log.last_timestamp());

    let mut counts: Vec<(u32, usize)> = engagement_counts(log).into_iter().map(|(c, ts)| (c, ts.len())).collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(category, n) in counts.iter().take(3) {
        let sub = hard_search(log, category, max_len);
        let items: Vec<String> = sub.entries.iter().map(|e| format!("{}@{}", e.item_id, e.timestamp)).collect();
        println!("category {category} ({n} events) -> {} slots used, {} padded: {}", sub.len(), sub.pad_mask().iter().filter(|&&p| p).count(), items.join(" "));
    }

    let recent = recent_any(log, max_len, None);
    let cats: Vec<u32> = recent.entries.iter().map(|e| e.category_id).collect();
    println!("recent any-category window mixes categories {cats:?}");

    let absent = (0..cfg.num_categories as u32).find(|c| !counts.iter().any(|&(k, _)| k == *c));
    if let Some(c) = absent {
        println!("category {c} never engaged -> {} entries", hard_search(log, c, max_len).len());
    }
    Ok(())
}
