//! End-to-end multi-context retrieval: train a small model, build one index
//! per category, then select interests and merge per-interest candidates.
//!
//! ```text
//! cargo run --release --example multi_context_retrieval
//! ```

use ctxrec::datagen::{generate, Dataset, GenConfig};
use ctxrec::encoder::{ModelConfig, ModelParams};
use ctxrec::retrieval::{
    build_indexes, multi_retrieve, read_indexes, write_indexes, Backend, GraphParams, MergeStrategy, RetrievalConfig,
};
use ctxrec::seqstore::SeqStore;
use ctxrec::training::{build_samples, SampleConfig, TrainConfig, Trainer};

fn main() -> anyhow::Result<()> {
    let gen = GenConfig { num_users: 300, num_items: 3_000, num_categories: 12, mean_log_len: 150.0, ..GenConfig::default() };
    let (catalog, users, logs) = generate(&gen)?;
    let dataset = Dataset::from_generated(catalog, &users, logs);
    let store = SeqStore::from_dataset(&dataset);
    let model = ModelConfig {
        dim: 16,
        max_seq_len: 20,
        num_items: gen.num_items,
        num_categories: gen.num_categories,
        profile_vocab: gen.profile_vocab_total(),
        ..ModelConfig::default()
    };
    let samples = build_samples(&store, &SampleConfig { max_seq_len: 20, max_samples_per_user: 20, ..SampleConfig::default() });
    let cats = dataset.catalog.items().iter().map(|i| i.category_id).collect();
    let mut trainer = Trainer::new(ModelParams::init(&model, cats)?, TrainConfig { batch_size: 64, epochs: 1, ..TrainConfig::default() })?;
    trainer.run(&samples, |_| {})?;
    let params = trainer.into_params();

    let exact = build_indexes(&params, Backend::Exact)?;
    let graph = build_indexes(&params, Backend::Graph(GraphParams::default()))?;
    let user = 0;
    let log = store.log(user).expect("user 0 exists");
    let profile = store.profile(user).expect("user 0 exists");
    let now = log.last_timestamp().unwrap_or(0);

    for merge in [MergeStrategy::Interleave, MergeStrategy::GlobalScore, MergeStrategy::Quota { q: 3 }] {
        let cfg = RetrievalConfig { per_category_k: 20, k_total: 12, merge, ..RetrievalConfig::default() };
        let r = multi_retrieve(&params, log, profile, &exact, &cfg, now)?;
        println!("{merge:?}: interests {:?}", r.selected);
        for pc in &r.per_category {
            println!("  category {:>2}: history {:>2}, best {:?}", pc.category, pc.subseq_len, pc.items.first().map(|s| (s.item_id, s.score)));
        }
        let merged: Vec<String> = r.merged.iter().map(|m| format!("{}/c{}/{:.2}", m.item_id, m.source_category, m.score)).collect();
        println!("  merged: {}", merged.join(" "));
    }

    let cfg = RetrievalConfig { per_category_k: 50, k_total: 100, ..RetrievalConfig::default() };
    let a = multi_retrieve(&params, log, profile, &exact, &cfg, now)?;
    let b = multi_retrieve(&params, log, profile, &graph, &cfg, now)?;
    let overlap = b.merged.iter().filter(|m| a.merged.iter().any(|x| x.item_id == m.item_id)).count();
    println!("graph backend agrees with exact on {overlap}/{} merged items", a.merged.len());

    let mut buf = Vec::new();
    write_indexes(&exact, &mut buf)?;
    let reloaded = read_indexes(&mut buf.as_slice())?;
    assert_eq!(multi_retrieve(&params, log, profile, &reloaded, &cfg, now)?, a);
    println!("index snapshot: {} bytes, reload reproduces the request", buf.len());
    Ok(())
}
