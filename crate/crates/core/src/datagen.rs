//! Seeded synthetic catalog, users and interaction logs.
//!
//! Every user draws a sparse category mixture from a symmetric Dirichlet and
//! a per-category taste vector. Each event first draws a category from the
//! mixture, then an item inside that category with probability proportional
//! to `popularity * exp(strength * <taste, item_feature>)`. Item popularity is
//! Zipf over a random rank permutation.
//!
//! All randomness flows from `ChaCha8Rng` seeded through SplitMix64 child
//! seeds, so output is identical across platforms for a given config.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::hash::mix_seed;
use crate::{CategoryId, Day, Error, ItemId, Result, UserId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
    pub mean_log_len: f64,
    pub seed: u64,
    /// Profile tokens per user (K).
    pub profile_tokens: usize,
    /// Vocabulary size of each profile slot.
    pub profile_vocab: usize,
    pub taste_dim: usize,
    pub taste_strength: f64,
    pub horizon_days: Day,
    pub dirichlet_alpha: f64,
    pub zipf_exponent: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_users: 5_000,
            num_items: 20_000,
            num_categories: 50,
            mean_log_len: 300.0,
            seed: 7,
            profile_tokens: 4,
            profile_vocab: 16,
            taste_dim: 8,
            taste_strength: 2.5,
            horizon_days: 400,
            dirichlet_alpha: 0.3,
            zipf_exponent: 1.1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_users", self.num_users),
            ("num_items", self.num_items),
            ("num_categories", self.num_categories),
            ("profile_tokens", self.profile_tokens),
            ("profile_vocab", self.profile_vocab),
            ("taste_dim", self.taste_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("data.{name} must be at least 1")));
            }
        }
        if self.num_items < self.num_categories {
            return Err(Error::Config(
                "data.num_items must be at least data.num_categories".into(),
            ));
        }
        if !(self.mean_log_len >= 1.0 && self.mean_log_len.is_finite()) {
            return Err(Error::Config("data.mean_log_len must be at least 1".into()));
        }
        if self.horizon_days < 1 {
            return Err(Error::Config("data.horizon_days must be at least 1".into()));
        }
        if !(self.dirichlet_alpha > 0.0) || !(self.zipf_exponent >= 0.0) {
            return Err(Error::Config(
                "data.dirichlet_alpha must be positive and data.zipf_exponent nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Total profile vocabulary across all slots.
    pub fn profile_vocab_total(&self) -> usize {
        self.profile_tokens * self.profile_vocab
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub item_id: ItemId,
    pub category_id: CategoryId,
}

/// Item set with its category partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    items: Vec<CatalogItem>,
    num_categories: usize,
    popularity: Vec<f64>,
    by_category: Vec<Vec<ItemId>>,
}

impl Catalog {
    pub fn new(items: Vec<CatalogItem>, num_categories: usize, popularity: Vec<f64>) -> Result<Self> {
        if popularity.len() != items.len() {
            return Err(Error::Format("popularity length differs from item count".into()));
        }
        let mut by_category = vec![Vec::new(); num_categories];
        for (idx, it) in items.iter().enumerate() {
            if it.item_id as usize != idx {
                return Err(Error::Format(format!(
                    "item ids must be dense and ordered; found {} at position {idx}",
                    it.item_id
                )));
            }
            let slot = by_category.get_mut(it.category_id as usize).ok_or_else(|| {
                Error::Format(format!("item {} has category {} out of range", it.item_id, it.category_id))
            })?;
            slot.push(it.item_id);
        }
        Ok(Self { items, num_categories, popularity, by_category })
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    pub fn category_of(&self, item: ItemId) -> Result<CategoryId> {
        self.items
            .get(item as usize)
            .map(|it| it.category_id)
            .ok_or(Error::UnknownItem(item))
    }

    /// Items of one category in ascending id order; empty for unknown categories.
    pub fn items_in(&self, category: CategoryId) -> &[ItemId] {
        self.by_category.get(category as usize).map_or(&[], Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticUser {
    pub user_id: UserId,
    pub profile_tokens: Vec<u32>,
    pub category_mixture: Vec<f64>,
    /// `num_categories x taste_dim`
    pub latent_taste: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub item_id: ItemId,
    pub category_id: CategoryId,
    pub timestamp: Day,
}

/// Chronological interaction log of one user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BehaviorLog {
    pub user_id: UserId,
    pub events: Vec<Event>,
}

impl BehaviorLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<Day> {
        self.events.last().map(|e| e.timestamp)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserProfile {
    pub user_id: UserId,
    pub tokens: Vec<u32>,
}

/// The persisted dataset: everything downstream stages consume.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub catalog: Catalog,
    pub profiles: Vec<UserProfile>,
    pub logs: Vec<BehaviorLog>,
}

impl Dataset {
    pub fn from_generated(catalog: Catalog, users: &[SyntheticUser], logs: Vec<BehaviorLog>) -> Self {
        let profiles = users
            .iter()
            .map(|u| UserProfile { user_id: u.user_id, tokens: u.profile_tokens.clone() })
            .collect();
        Self { catalog, profiles, logs }
    }

    /// Referential integrity: every event's item exists and its category matches.
    pub fn validate(&self) -> Result<()> {
        if self.profiles.len() != self.logs.len() {
            return Err(Error::Format("profile and log counts differ".into()));
        }
        for (p, log) in self.profiles.iter().zip(&self.logs) {
            if p.user_id != log.user_id {
                return Err(Error::Format(format!("user order mismatch at {}", p.user_id)));
            }
            let mut prev = Day::MIN;
            for e in &log.events {
                if self.catalog.category_of(e.item_id)? != e.category_id {
                    return Err(Error::Format(format!(
                        "user {}: item {} listed with category {}",
                        log.user_id, e.item_id, e.category_id
                    )));
                }
                if e.timestamp < prev {
                    return Err(Error::Format(format!("user {}: events out of order", log.user_id)));
                }
                prev = e.timestamp;
            }
        }
        Ok(())
    }
}

/// Generates catalog, users and logs. Deterministic in `config`.
pub fn generate(config: &GenConfig) -> Result<(Catalog, Vec<SyntheticUser>, Vec<BehaviorLog>)> {
    config.validate()?;
    let n_items = config.num_items;
    let n_cat = config.num_categories;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0));

    let items: Vec<CatalogItem> = (0..n_items)
        .map(|i| CatalogItem {
            item_id: i as ItemId,
            category_id: if i < n_cat { i as CategoryId } else { rng.random_range(0..n_cat) as CategoryId },
        })
        .collect();

    let mut ranks: Vec<usize> = (0..n_items).collect();
    ranks.shuffle(&mut rng);
    let popularity: Vec<f64> = ranks
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-config.zipf_exponent))
        .collect();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let feat_scale = 1.0 / (config.taste_dim as f64).sqrt();
    let features: Vec<f64> = (0..n_items * config.taste_dim)
        .map(|_| normal.sample(&mut rng) * feat_scale)
        .collect();

    let catalog = Catalog::new(items, n_cat, popularity)?;

    let gamma = Gamma::new(config.dirichlet_alpha, 1.0)
        .map_err(|e| Error::Config(format!("data.dirichlet_alpha: {e}")))?;
    let poisson = Poisson::new(config.mean_log_len)
        .map_err(|e| Error::Config(format!("data.mean_log_len: {e}")))?;

    let mut users = Vec::with_capacity(config.num_users);
    let mut logs = Vec::with_capacity(config.num_users);
    for u in 0..config.num_users {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, u as u64 + 1));
        let profile_tokens = (0..config.profile_tokens)
            .map(|k| (k * config.profile_vocab + rng.random_range(0..config.profile_vocab)) as u32)
            .collect();

        let mut mixture: Vec<f64> = (0..n_cat).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = mixture.iter().sum();
        if total > 0.0 && total.is_finite() {
            mixture.iter_mut().for_each(|m| *m /= total);
        } else {
            mixture.iter_mut().for_each(|m| *m = 1.0 / n_cat as f64);
        }

        let taste: Vec<Vec<f64>> = (0..n_cat)
            .map(|_| (0..config.taste_dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();

        let len = (poisson.sample(&mut rng) as usize).max(1);
        let mut stamps: Vec<Day> = (0..len).map(|_| rng.random_range(0..config.horizon_days)).collect();
        stamps.sort_unstable();

        let mix_cdf = cumulative(&mixture);
        let mut item_cdfs: HashMap<usize, Vec<f64>> = HashMap::new();
        let mut events = Vec::with_capacity(len);
        for &timestamp in &stamps {
            let c = sample_cdf(&mix_cdf, &mut rng);
            let members = catalog.items_in(c as CategoryId);
            let cdf = item_cdfs.entry(c).or_insert_with(|| {
                let weights: Vec<f64> = members
                    .iter()
                    .map(|&it| {
                        let f = &features[it as usize * config.taste_dim..][..config.taste_dim];
                        let aff: f64 = f.iter().zip(&taste[c]).map(|(a, b)| a * b).sum();
                        catalog.popularity()[it as usize] * (config.taste_strength * aff).exp()
                    })
                    .collect();
                cumulative(&weights)
            });
            let item_id = members[sample_cdf(cdf, &mut rng)];
            events.push(Event { item_id, category_id: c as CategoryId, timestamp });
        }

        users.push(SyntheticUser {
            user_id: u as UserId,
            profile_tokens,
            category_mixture: mixture,
            latent_taste: taste,
        });
        logs.push(BehaviorLog { user_id: u as UserId, events });
    }
    Ok((catalog, users, logs))
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

fn sample_cdf(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cdf.last().expect("non-empty cdf");
    let x = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= x).min(cdf.len() - 1)
}

/// A held-out (user, positive item) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub category_id: CategoryId,
    pub timestamp: Day,
}

/// Moves the last `holdout_per_user` events of every log longer than the
/// holdout into evaluation pairs. Shorter logs stay whole in training.
pub fn train_eval_split(logs: &[BehaviorLog], holdout_per_user: usize) -> (Vec<BehaviorLog>, Vec<EvalPair>) {
    let holdout = holdout_per_user.max(1);
    let mut train = Vec::with_capacity(logs.len());
    let mut pairs = Vec::new();
    for log in logs {
        if log.events.len() <= holdout {
            train.push(log.clone());
            continue;
        }
        let cut = log.events.len() - holdout;
        train.push(BehaviorLog { user_id: log.user_id, events: log.events[..cut].to_vec() });
        pairs.extend(log.events[cut..].iter().map(|e| EvalPair {
            user_id: log.user_id,
            item_id: e.item_id,
            category_id: e.category_id,
            timestamp: e.timestamp,
        }));
    }
    (train, pairs)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Catalog {
        num_categories: usize,
        /// `[item_id, category_id]`
        items: Vec<(ItemId, CategoryId)>,
        popularity: Vec<f64>,
    },
    User {
        user_id: UserId,
        profile: Vec<u32>,
        /// `[item_id, category_id, timestamp]`
        events: Vec<(ItemId, CategoryId, Day)>,
    },
}

/// Writes the dataset as JSON Lines: one `catalog` record, then one `user`
/// record per user. With `gzip`, the stream is gzip-compressed (mtime 0).
pub fn write_dataset(path: &Path, dataset: &Dataset, gzip: bool) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if gzip {
        let mut enc = GzEncoder::new(file, Compression::default());
        write_records(&mut enc, dataset)?;
        enc.finish()?.flush()?;
    } else {
        let mut file = file;
        write_records(&mut file, dataset)?;
        file.flush()?;
    }
    Ok(())
}

fn write_records(w: &mut impl Write, dataset: &Dataset) -> Result<()> {
    let catalog = Record::Catalog {
        num_categories: dataset.catalog.num_categories(),
        items: dataset.catalog.items().iter().map(|i| (i.item_id, i.category_id)).collect(),
        popularity: dataset.catalog.popularity().to_vec(),
    };
    serde_json::to_writer(&mut *w, &catalog)?;
    w.write_all(b"\n")?;
    for (p, log) in dataset.profiles.iter().zip(&dataset.logs) {
        let rec = Record::User {
            user_id: p.user_id,
            profile: p.tokens.clone(),
            events: log.events.iter().map(|e| (e.item_id, e.category_id, e.timestamp)).collect(),
        };
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]; gzip is detected from the
/// magic bytes.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut file = BufReader::new(File::open(path)?);
    let gz = file.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    let reader: Box<dyn Read> = if gz { Box::new(GzDecoder::new(file)) } else { Box::new(file) };
    read_records(BufReader::new(reader))
}

fn read_records(reader: impl BufRead) -> Result<Dataset> {
    let mut catalog = None;
    let mut profiles = Vec::new();
    let mut logs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(&line)? {
            Record::Catalog { num_categories, items, popularity } => {
                if catalog.is_some() {
                    return Err(Error::Format(format!("line {}: second catalog record", lineno + 1)));
                }
                let items = items
                    .into_iter()
                    .map(|(item_id, category_id)| CatalogItem { item_id, category_id })
                    .collect();
                catalog = Some(Catalog::new(items, num_categories, popularity)?);
            }
            Record::User { user_id, profile, events } => {
                if catalog.is_none() {
                    return Err(Error::Format("user record before catalog record".into()));
                }
                profiles.push(UserProfile { user_id, tokens: profile });
                logs.push(BehaviorLog {
                    user_id,
                    events: events
                        .into_iter()
                        .map(|(item_id, category_id, timestamp)| Event { item_id, category_id, timestamp })
                        .collect(),
                });
            }
        }
    }
    let catalog = catalog.ok_or_else(|| Error::Format("missing catalog record".into()))?;
    let dataset = Dataset { catalog, profiles, logs };
    dataset.validate()?;
    Ok(dataset)
}
