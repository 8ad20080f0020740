//! Offline evaluation: recall@k, the category-shortcut leakage probe, the
//! uniqueness ratio between retrieval runs, and the paired ablation drivers.
//!
//! Every metric is computed against held-out pairs (the last events of each
//! user's log). Users are encoded from their training history only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{train_eval_split, Dataset, EvalPair};
use crate::encoder::{encode_all_items, encode_user, score, ModelConfig, ModelParams, UserInput};
use crate::hash::mix_seed;
use crate::interest::{engagement_score, InterestStrategy};
use crate::retrieval::{
    build_global_index, build_indexes, global_retrieve, multi_retrieve_with, request_rng, RetrievalConfig,
};
use crate::seqstore::{hard_search_before, recent_any, SeqStore};
use crate::training::{build_samples, Batching, SampleConfig, SequenceMode, StepMetrics, TrainConfig, Trainer};
use crate::{CategoryId, Error, ItemId, Result};

/// Candidate pool of a recall measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Global,
    /// Only items of the positive's category.
    WithinCategory,
}

/// Anything that can score catalog items for a held-out pair's user.
pub trait RetrievalModel {
    /// Category of every catalog item, indexed by item id.
    fn item_category(&self) -> &[CategoryId];

    /// Scores of `items` for the user of `pair`, with the user encoded for
    /// the positive's category at the pair's time.
    fn score_items(&self, pair: &EvalPair, items: &[ItemId]) -> Result<Vec<f64>>;
}

/// A trained dual-tower model over a store of training histories.
pub struct EncoderModel<'a> {
    params: &'a ModelParams<f32>,
    store: &'a SeqStore,
    mode: SequenceMode,
    items: Vec<f32>,
}

impl<'a> EncoderModel<'a> {
    pub fn new(params: &'a ModelParams<f32>, store: &'a SeqStore, mode: SequenceMode) -> Self {
        Self { params, store, mode, items: encode_all_items(params) }
    }

    pub fn user_vector(&self, pair: &EvalPair) -> Result<Vec<f32>> {
        let log = self.store.log(pair.user_id).ok_or_else(|| Error::Input(format!("unknown user {}", pair.user_id)))?;
        let profile = self.store.profile(pair.user_id).unwrap_or_default();
        let l = self.params.config.max_seq_len;
        let subseq = match self.mode {
            SequenceMode::HardSearch => hard_search_before(log, pair.category_id, l, pair.timestamp),
            SequenceMode::RecentAny => recent_any(log, l, Some(pair.timestamp)),
        };
        Ok(encode_user(self.params, UserInput { profile, subseq: &subseq, now: pair.timestamp })?.0)
    }
}

impl RetrievalModel for EncoderModel<'_> {
    fn item_category(&self) -> &[CategoryId] {
        &self.params.item_category
    }

    fn score_items(&self, pair: &EvalPair, items: &[ItemId]) -> Result<Vec<f64>> {
        let u = self.user_vector(pair)?;
        let d = self.params.config.dim;
        let t = self.params.config.temperature;
        Ok(items.iter().map(|&i| score(&u, &self.items[i as usize * d..(i as usize + 1) * d], t)).collect())
    }
}

fn by_category(item_category: &[CategoryId]) -> BTreeMap<CategoryId, Vec<ItemId>> {
    let mut out: BTreeMap<CategoryId, Vec<ItemId>> = BTreeMap::new();
    for (i, &c) in item_category.iter().enumerate() {
        out.entry(c).or_default().push(i as ItemId);
    }
    out
}

/// Recall at each of `ks`: the fraction of pairs whose positive ranks within
/// the top k of the pool, ranking by (score desc, item id asc).
pub fn recall_at_ks(model: &impl RetrievalModel, pairs: &[EvalPair], ks: &[usize], pool: Pool) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Ok(vec![0.0; ks.len()]);
    }
    let groups = by_category(model.item_category());
    let all: Vec<ItemId> = (0..model.item_category().len() as ItemId).collect();
    let mut hits = vec![0usize; ks.len()];
    for pair in pairs {
        let items = match pool {
            Pool::Global => &all,
            Pool::WithinCategory => groups
                .get(&pair.category_id)
                .ok_or_else(|| Error::Input(format!("category {} has no items", pair.category_id)))?,
        };
        let pos = items
            .iter()
            .position(|&i| i == pair.item_id)
            .ok_or_else(|| Error::Input(format!("item {} is not in its pool", pair.item_id)))?;
        let scores = model.score_items(pair, items)?;
        let sp = scores[pos];
        let rank = items
            .iter()
            .zip(&scores)
            .filter(|&(&i, &s)| s > sp || (s == sp && i < pair.item_id))
            .count();
        for (h, &k) in hits.iter_mut().zip(ks) {
            *h += (rank < k) as usize;
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / pairs.len() as f64).collect())
}

pub fn recall_at_k(model: &impl RetrievalModel, pairs: &[EvalPair], k: usize, pool: Pool) -> Result<f64> {
    Ok(recall_at_ks(model, pairs, &[k], pool)?[0])
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakageStats {
    /// Mean over pairs of (mean same-category score - mean cross-category score).
    pub gap: f64,
    pub gap_std_err: f64,
    pub mean_same: f64,
    pub mean_cross: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Category-shortcut probe. For each pair, `negatives` random items of the
/// positive's category and `negatives` random items of other categories are
/// scored against the user vector; a positive gap means the model ranks by
/// category match. Pairs whose category has fewer than 2 items, or that has
/// no items outside it, are skipped.
pub fn leakage_probe(model: &impl RetrievalModel, pairs: &[EvalPair], negatives: usize, seed: u64) -> Result<LeakageStats> {
    let item_category = model.item_category();
    let groups = by_category(item_category);
    let n_items = item_category.len();
    let mut gaps = Vec::with_capacity(pairs.len());
    let (mut same_sum, mut cross_sum) = (0.0, 0.0);
    let mut skipped = 0;
    for (pi, pair) in pairs.iter().enumerate() {
        let same_pool = groups.get(&pair.category_id).map_or(&[][..], Vec::as_slice);
        if same_pool.len() < 2 || same_pool.len() == n_items || negatives == 0 {
            skipped += 1;
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, pi as u64));
        let mut items = Vec::with_capacity(2 * negatives);
        while items.len() < negatives {
            let i = same_pool[rng.random_range(0..same_pool.len())];
            if i != pair.item_id {
                items.push(i);
            }
        }
        while items.len() < 2 * negatives {
            let i = rng.random_range(0..n_items) as ItemId;
            if item_category[i as usize] != pair.category_id {
                items.push(i);
            }
        }
        let s = model.score_items(pair, &items)?;
        let same = s[..negatives].iter().sum::<f64>() / negatives as f64;
        let cross = s[negatives..].iter().sum::<f64>() / negatives as f64;
        same_sum += same;
        cross_sum += cross;
        gaps.push(same - cross);
    }
    let n = gaps.len();
    if n == 0 {
        return Ok(LeakageStats { pairs_skipped: skipped, ..LeakageStats::default() });
    }
    let gap = gaps.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { gaps.iter().map(|g| (g - gap).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    Ok(LeakageStats {
        gap,
        gap_std_err: (var / n as f64).sqrt(),
        mean_same: same_sum / n as f64,
        mean_cross: cross_sum / n as f64,
        pairs_used: n,
        pairs_skipped: skipped,
    })
}

/// Mean over requests of the fraction of `run_a`'s items absent from
/// `run_b`'s. Requests where `run_a` returned nothing count as 0.
pub fn uniqueness_ratio(run_a: &[Vec<ItemId>], run_b: &[Vec<ItemId>]) -> Result<f64> {
    if run_a.len() != run_b.len() {
        return Err(Error::Shape(format!("{} requests vs {}", run_a.len(), run_b.len())));
    }
    if run_a.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = run_a
        .iter()
        .zip(run_b)
        .map(|(a, b)| {
            if a.is_empty() {
                return 0.0;
            }
            let b: BTreeSet<ItemId> = b.iter().copied().collect();
            a.iter().filter(|i| !b.contains(i)).count() as f64 / a.len() as f64
        })
        .sum();
    Ok(total / run_a.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Held-out events per user.
    pub holdout: usize,
    /// Cap on evaluation pairs (seeded subsample); 0 uses all.
    pub max_pairs: usize,
    /// Negatives per side in the leakage probe.
    pub negatives: usize,
    /// Requests per user when measuring selection coverage.
    pub coverage_requests: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![10, 50, 100], holdout: 1, max_pairs: 2000, negatives: 64, coverage_requests: 4, seed: 7 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be a non-empty list of positive integers".into()));
        }
        if self.holdout == 0 {
            return Err(Error::Config("eval.holdout must be at least 1".into()));
        }
        if self.coverage_requests == 0 {
            return Err(Error::Config("eval.coverage_requests must be at least 1".into()));
        }
        Ok(())
    }
}

/// A dataset split into training histories and held-out pairs.
pub struct PreparedData {
    pub dataset: Dataset,
    pub train: SeqStore,
    pub pairs: Vec<EvalPair>,
}

impl PreparedData {
    pub fn new(dataset: Dataset, cfg: &EvalConfig) -> Self {
        let (train_logs, mut pairs) = train_eval_split(&dataset.logs, cfg.holdout);
        if cfg.max_pairs > 0 && pairs.len() > cfg.max_pairs {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5041_4952));
            let mut keep = index::sample(&mut rng, pairs.len(), cfg.max_pairs).into_vec();
            keep.sort_unstable();
            pairs = keep.into_iter().map(|i| pairs[i]).collect();
        }
        let train = SeqStore::from_parts(dataset.profiles.iter().map(|p| (p.user_id, p.tokens.clone())), train_logs);
        Self { dataset, train, pairs }
    }

    /// `template` with the catalog-dependent sizes filled in.
    pub fn model_config(&self, template: &ModelConfig) -> ModelConfig {
        ModelConfig {
            num_items: self.dataset.catalog.num_items(),
            num_categories: self.dataset.catalog.num_categories(),
            profile_vocab: self.dataset.profiles.iter().flat_map(|p| p.tokens.iter()).max().map_or(1, |&m| m as usize + 1).max(template.profile_vocab),
            ..template.clone()
        }
    }

    pub fn item_category(&self) -> Vec<CategoryId> {
        self.dataset.catalog.items().iter().map(|i| i.category_id).collect()
    }
}

/// Everything needed to train and evaluate one arm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub samples: SampleConfig,
    pub retrieval: RetrievalConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug)]
pub struct TrainedArm {
    pub batching: Batching,
    pub mode: SequenceMode,
    pub params: ModelParams<f32>,
    pub steps: usize,
    /// Mean loss of the last epoch.
    pub final_loss: f64,
}

/// Trains a fresh model with the given batching and sequence mode.
pub fn train_arm(
    data: &PreparedData,
    exp: &Experiment,
    batching: Batching,
    mode: SequenceMode,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainedArm> {
    let model_cfg = data.model_config(&exp.model);
    let params = ModelParams::<f32>::init(&model_cfg, data.item_category())?;
    let samples = build_samples(
        &data.train,
        &SampleConfig { mode, max_seq_len: model_cfg.max_seq_len, ..exp.samples.clone() },
    );
    let train_cfg = TrainConfig { batching, ..exp.train.clone() };
    let mut trainer = Trainer::new(params, train_cfg)?;
    let (mut steps, mut last_epoch, mut sum, mut count) = (0, usize::MAX, 0.0, 0usize);
    trainer.run(&samples, |m| {
        steps += 1;
        if m.epoch != last_epoch {
            last_epoch = m.epoch;
            sum = 0.0;
            count = 0;
        }
        sum += m.loss;
        count += 1;
        on_step(m);
    })?;
    let final_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
    Ok(TrainedArm { batching, mode, params: trainer.into_params(), steps, final_loss })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uniqueness {
    pub baseline: String,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub seed: u64,
    pub num_pairs: usize,
    pub recall_global: BTreeMap<usize, f64>,
    pub recall_within: BTreeMap<usize, f64>,
    pub leakage: LeakageStats,
    /// Fraction of pairs whose positive appears in the merged multi-context result.
    pub merged_hit_rate: f64,
    /// Same, for single-vector global retrieval of `k_total` items.
    pub global_hit_rate: f64,
    /// Mean distinct categories selected per user over repeated requests.
    pub coverage: f64,
    pub uniqueness: Uniqueness,
    pub final_loss: Option<f64>,
    pub config: serde_json::Value,
}

/// Mean number of distinct categories selected per user over
/// `requests` consecutive-day requests starting at each pair's time.
pub fn selection_coverage(
    store: &SeqStore,
    pairs: &[EvalPair],
    strategy: InterestStrategy,
    seed: u64,
    requests: usize,
) -> Result<f64> {
    let mut starts: BTreeMap<u32, i64> = BTreeMap::new();
    for p in pairs {
        starts.entry(p.user_id).or_insert(p.timestamp);
    }
    if starts.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0usize;
    for (&user, &t0) in &starts {
        let log = store.log(user).ok_or_else(|| Error::Input(format!("unknown user {user}")))?;
        let mut seen = BTreeSet::new();
        for r in 0..requests as i64 {
            let now = t0.max(log.last_timestamp().unwrap_or(0)) + r;
            let scores = engagement_score(log, now)?;
            seen.extend(strategy.select(&scores, &mut request_rng(seed, user, now)));
        }
        total += seen.len();
    }
    Ok(total as f64 / starts.len() as f64)
}

/// Full report for one trained model evaluated with `mode` and `selection`.
pub fn evaluate(
    name: &str,
    data: &PreparedData,
    exp: &Experiment,
    params: &ModelParams<f32>,
    mode: SequenceMode,
    selection: InterestStrategy,
    final_loss: Option<f64>,
) -> Result<EvalReport> {
    let cfg = &exp.eval;
    cfg.validate()?;
    let model = EncoderModel::new(params, &data.train, mode);
    let pairs = &data.pairs;
    let global = recall_at_ks(&model, pairs, &cfg.ks, Pool::Global)?;
    let within = recall_at_ks(&model, pairs, &cfg.ks, Pool::WithinCategory)?;
    let leakage = leakage_probe(&model, pairs, cfg.negatives, cfg.seed)?;

    let rcfg = RetrievalConfig { selection, ..exp.retrieval };
    let indexes = build_indexes(params, rcfg.backend)?;
    let global_index = build_global_index(params, rcfg.backend)?;
    let (mut multi_runs, mut global_runs) = (Vec::new(), Vec::new());
    let (mut multi_hits, mut global_hits) = (0usize, 0usize);
    for p in pairs {
        let log = data.train.log(p.user_id).ok_or_else(|| Error::Input(format!("unknown user {}", p.user_id)))?;
        let profile = data.train.profile(p.user_id).unwrap_or_default();
        let now = p.timestamp.max(log.last_timestamp().unwrap_or(p.timestamp));
        let m: Vec<ItemId> = multi_retrieve_with(params, log, profile, &indexes, &rcfg, now, mode)?
            .merged
            .iter()
            .map(|x| x.item_id)
            .collect();
        let g: Vec<ItemId> =
            global_retrieve(params, log, profile, &global_index, rcfg.k_total, now)?.iter().map(|x| x.item_id).collect();
        multi_hits += m.contains(&p.item_id) as usize;
        global_hits += g.contains(&p.item_id) as usize;
        multi_runs.push(m);
        global_runs.push(g);
    }
    let rate = |h: usize| if pairs.is_empty() { 0.0 } else { h as f64 / pairs.len() as f64 };
    Ok(EvalReport {
        name: name.to_string(),
        seed: cfg.seed,
        num_pairs: pairs.len(),
        recall_global: cfg.ks.iter().copied().zip(global).collect(),
        recall_within: cfg.ks.iter().copied().zip(within).collect(),
        leakage,
        merged_hit_rate: rate(multi_hits),
        global_hit_rate: rate(global_hits),
        coverage: selection_coverage(&data.train, pairs, selection, rcfg.seed, cfg.coverage_requests)?,
        uniqueness: Uniqueness { baseline: "single_vector_global".into(), ratio: uniqueness_ratio(&multi_runs, &global_runs)? },
        final_loss,
        config: serde_json::json!({
            "arm": name,
            "mode": mode,
            "selection": selection,
            "experiment": exp,
        }),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    RandomVsTop,
    LongSeq,
    InContext,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::RandomVsTop, Suite::LongSeq, Suite::InContext];
}

/// A directional claim checked on a report pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub claim: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: Suite,
    pub arms: Vec<EvalReport>,
    pub findings: Vec<Finding>,
}

/// Trained models keyed by (batching, mode), shared across suites.
#[derive(Default)]
pub struct ArmCache {
    arms: Vec<TrainedArm>,
}

impl ArmCache {
    pub fn get_or_train(
        &mut self,
        data: &PreparedData,
        exp: &Experiment,
        batching: Batching,
        mode: SequenceMode,
        on_step: impl FnMut(&StepMetrics),
    ) -> Result<&TrainedArm> {
        let pos = match self.arms.iter().position(|a| a.batching == batching && a.mode == mode) {
            Some(p) => p,
            None => {
                self.arms.push(train_arm(data, exp, batching, mode, on_step)?);
                self.arms.len() - 1
            }
        };
        Ok(&self.arms[pos])
    }

    pub fn arms(&self) -> &[TrainedArm] {
        &self.arms
    }
}

fn recall50(r: &EvalReport) -> f64 {
    r.recall_within.get(&50).or_else(|| r.recall_within.values().next()).copied().unwrap_or(0.0)
}

/// Trains (or reuses) the two arms of `suite` and evaluates them side by side.
pub fn run_ablation(
    suite: Suite,
    data: &PreparedData,
    exp: &Experiment,
    cache: &mut ArmCache,
    mut on_step: impl FnMut(&str, &StepMetrics),
) -> Result<AblationReport> {
    let selection = exp.retrieval.selection;
    let hs = SequenceMode::HardSearch;
    let mut arm = |name: &str, batching, mode, sel| -> Result<EvalReport> {
        let trained = cache.get_or_train(data, exp, batching, mode, |m| on_step(name, m))?;
        evaluate(name, data, exp, &trained.params, mode, sel, Some(trained.final_loss))
    };
    let (arms, findings) = match suite {
        Suite::InContext => {
            let ic = arm("in_context", Batching::InContext, hs, selection)?;
            let naive = arm("naive", Batching::Naive, hs, selection)?;
            let findings = vec![
                Finding {
                    claim: "leakage gap: naive > in_context".into(),
                    lhs: naive.leakage.gap,
                    rhs: ic.leakage.gap,
                    holds: naive.leakage.gap > ic.leakage.gap,
                },
                Finding {
                    claim: "within-category recall@50: in_context > naive".into(),
                    lhs: recall50(&ic),
                    rhs: recall50(&naive),
                    holds: recall50(&ic) > recall50(&naive),
                },
            ];
            (vec![ic, naive], findings)
        }
        Suite::LongSeq => {
            let long = arm("hard_search", Batching::InContext, hs, selection)?;
            let short = arm("recent_any", Batching::InContext, SequenceMode::RecentAny, selection)?;
            let findings = vec![Finding {
                claim: "within-category recall@50: hard_search > recent_any".into(),
                lhs: recall50(&long),
                rhs: recall50(&short),
                holds: recall50(&long) > recall50(&short),
            }];
            (vec![long, short], findings)
        }
        Suite::RandomVsTop => {
            let (top_m, pick_n) = match selection {
                InterestStrategy::RandomInTop { top_m, pick_n } => (top_m, pick_n),
                InterestStrategy::TopN { n } => (n.max(20), n),
            };
            let random = arm("random_in_top", Batching::InContext, hs, InterestStrategy::RandomInTop { top_m, pick_n })?;
            let top = arm("top_n", Batching::InContext, hs, InterestStrategy::TopN { n: pick_n })?;
            let findings = vec![Finding {
                claim: "selection coverage: top_n <= random_in_top".into(),
                lhs: top.coverage,
                rhs: random.coverage,
                holds: top.coverage <= random.coverage,
            }];
            (vec![random, top], findings)
        }
    };
    Ok(AblationReport { suite, arms, findings })
}

/// Aligned-column text table, one column per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let col = |f: &dyn Fn(&EvalReport) -> String| reports.iter().map(f).collect::<Vec<_>>();
    rows.push(("metric".into(), col(&|r| r.name.clone())));
    rows.push(("pairs".into(), col(&|r| r.num_pairs.to_string())));
    if let Some(first) = reports.first() {
        for &k in first.recall_global.keys() {
            rows.push((format!("recall@{k} global"), col(&|r| fmt(r.recall_global.get(&k).copied()))));
        }
        for &k in first.recall_within.keys() {
            rows.push((format!("recall@{k} within"), col(&|r| fmt(r.recall_within.get(&k).copied()))));
        }
    }
    rows.push(("leakage gap".into(), col(&|r| format!("{:.4} ± {:.4}", r.leakage.gap, r.leakage.gap_std_err))));
    rows.push(("merged hit rate".into(), col(&|r| fmt(Some(r.merged_hit_rate)))));
    rows.push(("global hit rate".into(), col(&|r| fmt(Some(r.global_hit_rate)))));
    rows.push(("coverage".into(), col(&|r| format!("{:.3}", r.coverage))));
    rows.push(("uniqueness vs global".into(), col(&|r| fmt(Some(r.uniqueness.ratio)))));
    rows.push(("final loss".into(), col(&|r| r.final_loss.map_or("-".into(), |l| format!("{l:.4}")))));

    let w0 = rows.iter().map(|(h, _)| h.chars().count()).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..reports.len()).map(|c| rows.iter().map(|(_, v)| v[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (h, vals) in &rows {
        let _ = write!(out, "{h:<w0$}");
        for (v, w) in vals.iter().zip(&widths) {
            let _ = write!(out, "  {v:>w$}");
        }
        out.push('\n');
    }
    out
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

/// Findings as `PASS`/`FAIL` lines.
pub fn render_findings(findings: &[Finding]) -> String {
    findings
        .iter()
        .map(|f| format!("{} {} ({:.4} vs {:.4})\n", if f.holds { "PASS" } else { "FAIL" }, f.claim, f.lhs, f.rhs))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    struct Fixed {
        cats: Vec<CategoryId>,
        score: Box<dyn Fn(&EvalPair, ItemId) -> f64>,
    }

    impl RetrievalModel for Fixed {
        fn item_category(&self) -> &[CategoryId] {
            &self.cats
        }
        fn score_items(&self, pair: &EvalPair, items: &[ItemId]) -> Result<Vec<f64>> {
            Ok(items.iter().map(|&i| (self.score)(pair, i)).collect())
        }
    }

    fn pair(user: u32, item: u32, cat: u32) -> EvalPair {
        EvalPair { user_id: user, item_id: item, category_id: cat, timestamp: 0 }
    }

    fn cats(n: usize, c: usize) -> Vec<CategoryId> {
        (0..n).map(|i| (i % c) as CategoryId).collect()
    }

    /// Random unit vectors for users and items; scores are their dot products.
    fn random_model(n: usize, c: usize, dim: usize, seed: u64) -> Fixed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let items: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng)).collect();
        let users: Vec<Vec<f64>> = (0..2000).map(|_| unit(&mut rng)).collect();
        Fixed {
            cats: cats(n, c),
            score: Box::new(move |p, i| users[p.user_id as usize].iter().zip(&items[i as usize]).map(|(a, b)| a * b).sum()),
        }
    }

    #[test]
    fn perfect_model_has_recall_one() {
        let m = Fixed { cats: cats(30, 3), score: Box::new(|p, i| if i == p.item_id { 1.0 } else { 0.0 }) };
        let pairs: Vec<EvalPair> = (0..30).map(|i| pair(0, i, i % 3)).collect();
        assert_eq!(recall_at_k(&m, &pairs, 1, Pool::Global).unwrap(), 1.0);
        assert_eq!(recall_at_k(&m, &pairs, 1, Pool::WithinCategory).unwrap(), 1.0);
    }

    #[test]
    fn ties_rank_by_item_id() {
        let m = Fixed { cats: cats(10, 1), score: Box::new(|_, _| 0.0) };
        assert_eq!(recall_at_k(&m, &[pair(0, 2, 0)], 3, Pool::Global).unwrap(), 1.0);
        assert_eq!(recall_at_k(&m, &[pair(0, 3, 0)], 3, Pool::Global).unwrap(), 0.0);
    }

    #[test]
    fn random_embeddings_recall_near_k_over_pool() {
        let (n, k, trials) = (1000usize, 10usize, 2000usize);
        let m = random_model(n, 1, 16, 3);
        let pairs: Vec<EvalPair> = (0..trials).map(|u| pair(u as u32, (u * 7 % n) as u32, 0)).collect();
        let r = recall_at_k(&m, &pairs, k, Pool::Global).unwrap();
        let p = k as f64 / n as f64;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((r - p).abs() <= 3.0 * sigma, "recall {r} vs {p} ± {}", 3.0 * sigma);
    }

    #[test]
    fn within_at_least_global_and_monotone_in_k() {
        let m = random_model(300, 6, 8, 4);
        let pairs: Vec<EvalPair> = (0..200).map(|u| pair(u, (u * 11) % 300, ((u * 11) % 300) % 6)).collect();
        let ks = [1, 5, 10, 50, 100, 300];
        let g = recall_at_ks(&m, &pairs, &ks, Pool::Global).unwrap();
        let w = recall_at_ks(&m, &pairs, &ks, Pool::WithinCategory).unwrap();
        for i in 0..ks.len() {
            assert!(w[i] >= g[i]);
            assert!((0.0..=1.0).contains(&g[i]));
            if i > 0 {
                assert!(g[i] >= g[i - 1] && w[i] >= w[i - 1]);
            }
        }
        assert_eq!(g[ks.len() - 1], 1.0);
    }

    #[test]
    fn category_matching_model_has_positive_gap() {
        let m = Fixed {
            cats: cats(100, 5),
            score: Box::new(|p, i| if (i % 5) == p.category_id { 1.0 } else { 0.0 }),
        };
        let pairs: Vec<EvalPair> = (0..50).map(|u| pair(u, u, u % 5)).collect();
        let s = leakage_probe(&m, &pairs, 64, 1).unwrap();
        assert_eq!(s.gap, 1.0);
        assert_eq!(s.pairs_used, 50);
    }

    #[test]
    fn random_embeddings_have_no_gap() {
        let m = random_model(500, 10, 16, 5);
        let pairs: Vec<EvalPair> = (0..1000).map(|u| pair(u, u % 500, (u % 500) % 10)).collect();
        let s = leakage_probe(&m, &pairs, 64, 2).unwrap();
        assert!(s.gap.abs() <= 3.0 * s.gap_std_err, "gap {} ± {}", s.gap, s.gap_std_err);
    }

    #[test]
    fn tiny_categories_are_skipped() {
        // Category 1 holds a single item.
        let m = Fixed { cats: vec![0, 1, 0, 0], score: Box::new(|_, _| 0.0) };
        let s = leakage_probe(&m, &[pair(0, 1, 1), pair(0, 0, 0)], 4, 0).unwrap();
        assert_eq!((s.pairs_used, s.pairs_skipped), (1, 1));
    }

    #[test]
    fn leakage_is_seeded() {
        let m = random_model(200, 4, 8, 6);
        let pairs: Vec<EvalPair> = (0..100).map(|u| pair(u, u, u % 4)).collect();
        assert_eq!(leakage_probe(&m, &pairs, 64, 9).unwrap(), leakage_probe(&m, &pairs, 64, 9).unwrap());
    }

    #[test]
    fn uniqueness_examples() {
        let a = vec![vec![1, 2, 3], vec![4]];
        assert_eq!(uniqueness_ratio(&a, &a).unwrap(), 0.0);
        assert_eq!(uniqueness_ratio(&a, &[vec![7], vec![8]]).unwrap(), 1.0);
        assert_eq!(uniqueness_ratio(&[vec![1, 2]], &[vec![2]]).unwrap(), 0.5);
        assert!(uniqueness_ratio(&a, &[]).is_err());
    }

    #[test]
    fn table_is_aligned() {
        let r = EvalReport {
            name: "a".into(),
            seed: 1,
            num_pairs: 3,
            recall_global: [(10, 0.5)].into(),
            recall_within: [(10, 0.75)].into(),
            leakage: LeakageStats::default(),
            merged_hit_rate: 0.1,
            global_hit_rate: 0.2,
            coverage: 4.0,
            uniqueness: Uniqueness { baseline: "b".into(), ratio: 0.3 },
            final_loss: None,
            config: serde_json::Value::Null,
        };
        let t = render_table(&[r.clone(), EvalReport { name: "longer_name".into(), ..r }]);
        let widths: BTreeSet<usize> = t.lines().map(|l| l.chars().count()).collect();
        assert_eq!(widths.len(), 1, "{t}");
    }

    proptest! {
        #[test]
        fn uniqueness_in_unit_interval(a in prop::collection::vec(prop::collection::vec(0u32..20, 0..10), 0..8), seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<Vec<u32>> = a.iter().map(|v| v.iter().copied().filter(|_| rand::Rng::random_bool(&mut rng, 0.5)).collect()).collect();
            let r = uniqueness_ratio(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(uniqueness_ratio(&b, &a).unwrap(), 0.0);
        }
    }
}
