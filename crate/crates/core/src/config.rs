//! Run configuration: one TOML file with a section per module, plus
//! `section.key=value` overrides.
//!
//! ```toml
//! [data]
//! num_users = 5000
//! seed = 7
//!
//! [train]
//! batching = "naive"
//!
//! [retrieval]
//! merge = "quota"
//! quota = 2
//! ```
//!
//! Every key is optional; omitted keys take their defaults. Unknown sections
//! or keys are rejected with their full dotted name.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::datagen::GenConfig;
use crate::encoder::ModelConfig;
use crate::eval::{EvalConfig, Experiment};
use crate::interest::InterestStrategy;
use crate::retrieval::{Backend, GraphParams, MergeStrategy, RetrievalConfig};
use crate::training::{SampleConfig, TrainConfig};
use crate::{Day, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct PathsConfig {
    /// Dataset file; empty means `<out-dir>/dataset.jsonl[.gz]`.
    pub dataset: String,
    /// Checkpoint file; empty means `<out-dir>/model.ckpt`.
    pub checkpoint: String,
    /// Index snapshot; empty means `<out-dir>/index.bin`.
    pub index: String,
    /// Gzip the dataset written by `gen-data`.
    pub gzip: bool,
}


#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    #[default]
    RandomInTop,
    TopN,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub strategy: SelectionKind,
    pub top_m: usize,
    /// Interests per request (N); also the `n` of `top_n`.
    pub pick_n: usize,
    pub seed: u64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self { strategy: SelectionKind::RandomInTop, top_m: 20, pick_n: 5, seed: 7 }
    }
}

impl SelectionSection {
    pub fn strategy(&self) -> InterestStrategy {
        match self.strategy {
            SelectionKind::RandomInTop => InterestStrategy::RandomInTop { top_m: self.top_m, pick_n: self.pick_n },
            SelectionKind::TopN => InterestStrategy::TopN { n: self.pick_n },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    #[default]
    Interleave,
    GlobalScore,
    Quota,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Exact,
    Graph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub per_category_k: usize,
    pub k_total: usize,
    pub merge: MergeKind,
    /// Per-category quota of the `quota` merge.
    pub quota: usize,
    pub backend: BackendKind,
    pub max_degree: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Request day for `retrieve`; negative means `data.horizon_days`.
    pub now: Day,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let g = GraphParams::default();
        Self {
            per_category_k: 100,
            k_total: 200,
            merge: MergeKind::Interleave,
            quota: 1,
            backend: BackendKind::Exact,
            max_degree: g.max_degree,
            ef_construction: g.ef_construction,
            ef_search: g.ef_search,
            now: -1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub data: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub samples: SampleConfig,
    pub selection: SelectionSection,
    pub retrieval: RetrievalSection,
    pub eval: EvalConfig,
}

fn unknown_keys(given: &Table, known: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in given {
        let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (Value::Table(g), None) if !g.is_empty() => unknown_keys(g, &Table::new(), &name, out),
            (_, None) => out.push(name),
            (Value::Table(g), Some(Value::Table(kn))) => unknown_keys(g, kn, &name, out),
            _ => {}
        }
    }
}

fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Parses TOML text and applies `section.key=value` overrides in order.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form section.key=value")))?;
            let (section, field) = key
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("override key `{}` must be section.key", key.trim())))?;
            let entry = table.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
            let Value::Table(sec) = entry else {
                return Err(Error::Config(format!("`{section}` is not a section")));
            };
            sec.insert(field.to_string(), parse_value(raw.trim()));
        }
        let known = Table::try_from(RunConfig::default()).expect("defaults serialize");
        let mut unknown = Vec::new();
        unknown_keys(&table, &known, "", &mut unknown);
        if let Some(first) = unknown.first() {
            return Err(Error::Config(format!("unknown config key `{first}`")));
        }
        let mut cfg = RunConfig::default();
        for (section, value) in table {
            let parse = |sec: &Table| -> std::result::Result<RunConfig, toml::de::Error> {
                let text = toml::to_string(&Table::from_iter([(section.clone(), Value::Table(sec.clone()))]))
                    .expect("table serializes");
                toml::from_str(&text)
            };
            let Value::Table(sec) = value else {
                return Err(Error::Config(format!("`{section}` must be a section")));
            };
            let one = parse(&sec).map_err(|e| {
                // Retry key by key to name the offending one.
                let bad = sec.iter().find_map(|(k, v)| {
                    parse(&Table::from_iter([(k.clone(), v.clone())])).err().map(|e| (k.clone(), e))
                });
                match bad {
                    Some((k, e)) => Error::Config(format!("`{section}.{k}`: {}", e.message().trim())),
                    None => Error::Config(format!("section `{section}`: {}", e.message().trim())),
                }
            })?;
            match section.as_str() {
                "paths" => cfg.paths = one.paths,
                "data" => cfg.data = one.data,
                "model" => cfg.model = one.model,
                "train" => cfg.train = one.train,
                "samples" => cfg.samples = one.samples,
                "selection" => cfg.selection = one.selection,
                "retrieval" => cfg.retrieval = one.retrieval,
                "eval" => cfg.eval = one.eval,
                _ => unreachable!("unknown sections rejected above"),
            }
        }
        cfg.samples.max_seq_len = cfg.model.max_seq_len;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let cfg = Self::from_toml(&text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every section. Catalog sizes in `model` are filled from the
    /// dataset and not checked here.
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let probe = ModelConfig { num_items: 1, num_categories: 1, profile_vocab: 1, ..self.model.clone() };
        probe.validate()?;
        self.train.validate()?;
        self.selection.strategy().validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("selection: {m}")),
            e => e,
        })?;
        self.retrieval_config().validate()?;
        self.eval.validate()?;
        if self.samples.min_history == 0 {
            return Err(Error::Config("samples.min_history must be at least 1".into()));
        }
        Ok(())
    }

    pub fn retrieval_config(&self) -> RetrievalConfig {
        let r = &self.retrieval;
        RetrievalConfig {
            selection: self.selection.strategy(),
            seed: self.selection.seed,
            per_category_k: r.per_category_k,
            k_total: r.k_total,
            merge: match r.merge {
                MergeKind::Interleave => MergeStrategy::Interleave,
                MergeKind::GlobalScore => MergeStrategy::GlobalScore,
                MergeKind::Quota => MergeStrategy::Quota { q: r.quota },
            },
            backend: match r.backend {
                BackendKind::Exact => Backend::Exact,
                BackendKind::Graph => Backend::Graph(GraphParams {
                    max_degree: r.max_degree,
                    ef_construction: r.ef_construction,
                    ef_search: r.ef_search,
                }),
            },
        }
    }

    pub fn request_day(&self) -> Day {
        if self.retrieval.now < 0 {
            self.data.horizon_days
        } else {
            self.retrieval.now
        }
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            model: self.model.clone(),
            train: self.train.clone(),
            samples: SampleConfig { max_seq_len: self.model.max_seq_len, ..self.samples.clone() },
            retrieval: self.retrieval_config(),
            eval: self.eval.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Batching;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap().data, GenConfig::default());
    }

    #[test]
    fn sections_and_overrides() {
        let text = "[data]\nnum_users = 10\n[train]\nbatching = \"naive\"\n";
        let cfg = RunConfig::from_toml(text, &["data.num_users=12".into(), "retrieval.merge=quota".into()]).unwrap();
        assert_eq!(cfg.data.num_users, 12);
        assert_eq!(cfg.train.batching, Batching::Naive);
        assert_eq!(cfg.retrieval_config().merge, MergeStrategy::Quota { q: 1 });
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_toml("[data]\nnum_userz = 3\n", &[]).unwrap_err().to_string();
        assert!(e.contains("data.num_userz"), "{e}");
        let e = RunConfig::from_toml("", &["bogus.x=1".into()]).unwrap_err().to_string();
        assert!(e.contains("bogus.x"), "{e}");
        let e = RunConfig::from_toml("", &["samples.max_seq_len=3".into()]).unwrap_err().to_string();
        assert!(e.contains("samples.max_seq_len"), "{e}");
    }

    #[test]
    fn bad_values_name_the_section() {
        let e = RunConfig::from_toml("[train]\nbatch_size = \"big\"\n", &[]).unwrap_err().to_string();
        assert!(e.contains("train.batch_size"), "{e}");
        let e = RunConfig::load(None, &["train.batch_size=1".into()]).unwrap_err().to_string();
        assert!(e.contains("train.batch_size"), "{e}");
    }

    #[test]
    fn roundtrips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.selection.strategy = SelectionKind::TopN;
        cfg.retrieval.backend = BackendKind::Graph;
        let back = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, RunConfig { samples: SampleConfig { max_seq_len: cfg.model.max_seq_len, ..cfg.samples.clone() }, ..cfg });
    }

    #[test]
    fn request_day_defaults_to_horizon() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.request_day(), cfg.data.horizon_days);
    }
}
