//! Time-decayed engagement scores and Random-in-Top interest selection,
//! compared with deterministic top-N over a week of requests.
//!
//! ```text
//! cargo run --release --example interest_selection
//! ```

use std::collections::BTreeSet;

use ctxrec::datagen::{generate, GenConfig};
use ctxrec::interest::{engagement_score, InterestStrategy};
use ctxrec::retrieval::request_rng;

fn main() -> anyhow::Result<()> {
    let gen = GenConfig { num_users: 5, num_items: 1_000, num_categories: 30, mean_log_len: 400.0, dirichlet_alpha: 1.0, ..GenConfig::default() };
    let (_, _, logs) = generate(&gen)?;
    let log = &logs[0];
    let now = log.last_timestamp().unwrap_or(0);

    let scores = engagement_score(log, now)?;
    println!("user {} at day {now}: top engagement scores", log.user_id);
    for (c, s) in scores.ranked().into_iter().take(8) {
        println!("  category {c:>2}  {s:.4}");
    }

    let random = InterestStrategy::RandomInTop { top_m: 8, pick_n: 3 };
    let top = InterestStrategy::TopN { n: 3 };
    for (name, strategy) in [("random_in_top", random), ("top_n", top)] {
        let mut seen = BTreeSet::new();
        println!("{name}:");
        for day in now..now + 7 {
            let scores = engagement_score(log, day)?;
            let picked = strategy.select(&scores, &mut request_rng(7, log.user_id, day));
            seen.extend(picked.iter().copied());
            println!("  day {day}: {picked:?}");
        }
        println!("  {} distinct interests over the week", seen.len());
    }
    Ok(())
}
