use std::collections::BTreeSet;

use ctxrec::datagen::{generate, train_eval_split, Dataset, GenConfig};
use ctxrec::encoder::{ModelConfig, ModelParams};
use ctxrec::eval::{recall_at_k, EncoderModel, Pool};
use ctxrec::seqstore::SeqStore;
use ctxrec::training::{build_samples, naive_batches, Batching, SampleConfig, SequenceMode, TrainConfig, Trainer};

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn category_frequencies_track_planted_mixtures() {
    let cfg = GenConfig { seed: 7, num_users: 100, mean_log_len: 200.0, ..GenConfig::default() };
    let (_, users, logs) = generate(&cfg).unwrap();
    let mut total = 0.0;
    for (u, log) in users.iter().zip(&logs) {
        let mut freq = vec![0.0; cfg.num_categories];
        for e in &log.events {
            freq[e.category_id as usize] += 1.0;
        }
        total += pearson(&average_ranks(&u.category_mixture), &average_ranks(&freq));
    }
    let mean = total / users.len() as f64;
    assert!(mean > 0.8, "mean Spearman {mean}");
}

#[test]
fn generation_is_seed_deterministic() {
    let cfg = GenConfig { num_users: 50, num_items: 500, num_categories: 10, mean_log_len: 50.0, ..GenConfig::default() };
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    let other = generate(&GenConfig { seed: 8, ..cfg.clone() }).unwrap();
    assert_ne!(generate(&cfg).unwrap().2, other.2);
}

struct Small {
    dataset: Dataset,
    model: ModelConfig,
}

fn small() -> Small {
    let gen = GenConfig { num_users: 200, num_items: 1_000, num_categories: 8, mean_log_len: 100.0, ..GenConfig::default() };
    let (c, u, l) = generate(&gen).unwrap();
    let model = ModelConfig {
        dim: 16,
        max_seq_len: 16,
        num_items: gen.num_items,
        num_categories: gen.num_categories,
        profile_vocab: gen.profile_vocab_total(),
        ..ModelConfig::default()
    };
    Small { dataset: Dataset::from_generated(c, &u, l), model }
}

fn cats(ds: &Dataset) -> Vec<u32> {
    ds.catalog.items().iter().map(|i| i.category_id).collect()
}

fn train(s: &Small, cfg: TrainConfig) -> (ModelParams<f32>, Vec<f64>) {
    let samples = build_samples(&SeqStore::from_dataset(&s.dataset), &SampleConfig { max_seq_len: 16, ..SampleConfig::default() });
    let mut t = Trainer::new(ModelParams::init(&s.model, cats(&s.dataset)).unwrap(), cfg).unwrap();
    let mut losses = Vec::new();
    t.run(&samples, |m| losses.push(m.loss)).unwrap();
    (t.into_params(), losses)
}

#[test]
fn loss_falls_over_training() {
    let s = small();
    for batching in [Batching::InContext, Batching::Naive] {
        let (_, losses) = train(&s, TrainConfig { batching, batch_size: 32, epochs: 2, ..TrainConfig::default() });
        let head = losses[..10].iter().sum::<f64>() / 10.0;
        let tail = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "{batching:?}: {head} -> {tail}");
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let s = small();
    let (p, losses) = train(&s, TrainConfig { lr: 0.0, batch_size: 32, epochs: 1, ..TrainConfig::default() });
    assert!(!losses.is_empty());
    assert_eq!(p, ModelParams::init(&s.model, cats(&s.dataset)).unwrap());
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let s = small();
    let cfg = TrainConfig { batch_size: 32, epochs: 1, ..TrainConfig::default() };
    let (a, la) = train(&s, cfg.clone());
    let (b, lb) = train(&s, cfg.clone());
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (c, _) = train(&s, TrainConfig { seed: 99, ..cfg });
    assert_ne!(a, c);
}

#[test]
fn naive_batches_mix_categories() {
    let s = small();
    let samples = build_samples(&SeqStore::from_dataset(&s.dataset), &SampleConfig { max_seq_len: 16, ..SampleConfig::default() });
    let batches: Vec<_> = naive_batches(samples, 16).collect();
    let mean = batches.iter().map(|b| b.distinct_categories()).sum::<usize>() as f64 / batches.len() as f64;
    assert!(mean > 1.0, "mean distinct categories {mean}");
}

#[test]
fn training_samples_never_see_the_future() {
    let s = small();
    let store = SeqStore::from_dataset(&s.dataset);
    for mode in [SequenceMode::HardSearch, SequenceMode::RecentAny] {
        for smp in build_samples(&store, &SampleConfig { max_seq_len: 16, mode, ..SampleConfig::default() }) {
            assert!(smp.subseq.entries.iter().all(|e| e.timestamp < smp.timestamp));
        }
    }
}

#[test]
fn trained_model_beats_untrained_on_held_out_recall() {
    let s = small();
    let (train_logs, pairs) = train_eval_split(&s.dataset.logs, 1);
    let store = SeqStore::from_parts(s.dataset.profiles.iter().map(|p| (p.user_id, p.tokens.clone())), train_logs);
    let samples = build_samples(&store, &SampleConfig { max_seq_len: 16, ..SampleConfig::default() });
    let init = ModelParams::init(&s.model, cats(&s.dataset)).unwrap();
    let mut t = Trainer::new(init.clone(), TrainConfig { batch_size: 32, epochs: 2, ..TrainConfig::default() }).unwrap();
    t.run(&samples, |_| {}).unwrap();
    let before = recall_at_k(&EncoderModel::new(&init, &store, SequenceMode::HardSearch), &pairs, 50, Pool::WithinCategory).unwrap();
    let after = recall_at_k(&EncoderModel::new(t.params(), &store, SequenceMode::HardSearch), &pairs, 50, Pool::WithinCategory).unwrap();
    assert!(after > before, "{before} -> {after}");
    let users: BTreeSet<u32> = pairs.iter().map(|p| p.user_id).collect();
    assert_eq!(users.len(), pairs.len());
}
