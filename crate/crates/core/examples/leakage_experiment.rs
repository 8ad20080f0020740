//! The in-context ablation: a naive mixed-category model against an
//! in-context model trained from the same seed, compared on the leakage gap
//! and within-category recall.
//!
//! The default is the desk-scale reference configuration (5 000 users,
//! 20 000 items, 50 categories), which takes several minutes on one core.
//! `--quick` runs a reduced dataset as a smoke test; with that little data the
//! recall comparison is not expected to be stable.
//!
//! ```text
//! cargo run --release --example leakage_experiment [-- --quick]
//! ```

use ctxrec::datagen::{generate, Dataset, GenConfig};
use ctxrec::eval::{render_findings, render_table, run_ablation, ArmCache, Experiment, PreparedData, Suite};

fn main() -> anyhow::Result<()> {
    let quick = std::env::args().any(|a| a == "--quick");
    let gen = if quick {
        GenConfig { num_users: 1_500, num_items: 8_000, num_categories: 20, ..GenConfig::default() }
    } else {
        GenConfig::default()
    };
    let (catalog, users, logs) = generate(&gen)?;
    let mut exp = Experiment::default();
    if quick {
        exp.eval.max_pairs = 500;
    }
    let data = PreparedData::new(Dataset::from_generated(catalog, &users, logs), &exp.eval);
    let mut cache = ArmCache::default();
    let report = run_ablation(Suite::InContext, &data, &exp, &mut cache, |arm, m| {
        if m.step % 100 == 0 {
            eprintln!("{arm}: step {} epoch {} loss {:.3}", m.step, m.epoch, m.loss);
        }
    })?;
    print!("{}", render_table(&report.arms));
    print!("{}", render_findings(&report.findings));
    Ok(())
}
