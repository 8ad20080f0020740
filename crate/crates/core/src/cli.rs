//! The `ctxrec` command line. Every subcommand reads the run configuration,
//! writes its artifacts under `--out-dir`, and records their hashes in
//! `manifest.json`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, RunConfig};
use crate::datagen::{generate, read_dataset, write_dataset, Dataset};
use crate::encoder::{load_checkpoint, save_checkpoint, ModelParams};
use crate::eval::{evaluate, render_findings, render_table, run_ablation, ArmCache, PreparedData, Suite};
use crate::hash::sha256_hex;
use crate::retrieval::{build_indexes, load_indexes, multi_retrieve, save_indexes};
use crate::training::{build_samples, Trainer};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "ctxrec", version, about = "Category-context retrieval over lifelong behavior logs")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=1`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Run directory for every artifact.
    #[arg(long, global = true, default_value = "run")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    RandomVsTop,
    LongSeq,
    InContext,
    All,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        gzip: bool,
    },
    /// Train a model on the training split; writes checkpoints and metrics.
    Train,
    /// Encode the catalog and build per-category indexes.
    BuildIndex {
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
    },
    /// Multi-context retrieval for one user.
    Retrieve {
        #[arg(long)]
        user: u32,
        /// Request day (defaults to the configured request day).
        #[arg(long, allow_negative_numbers = true)]
        now: Option<i64>,
        /// Merged rows to print.
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Evaluate the trained checkpoint, or run an ablation suite.
    Evaluate {
        #[arg(long, value_enum)]
        suite: Option<SuiteArg>,
    },
    /// Train naive and in-context models and compare their leakage gaps.
    LeakageExperiment,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Exact,
    Graph,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    version: String,
    config: String,
    seeds: BTreeMap<String, u64>,
    artifacts: BTreeMap<String, String>,
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

impl Run {
    fn path_or(&self, configured: &str, default: &str) -> PathBuf {
        if configured.is_empty() {
            self.out.join(default)
        } else {
            PathBuf::from(configured)
        }
    }

    fn dataset_path(&self) -> PathBuf {
        let default = if self.cfg.paths.gzip { "dataset.jsonl.gz" } else { "dataset.jsonl" };
        self.path_or(&self.cfg.paths.dataset, default)
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.path_or(&self.cfg.paths.checkpoint, "model.ckpt")
    }

    fn index_path(&self) -> PathBuf {
        self.path_or(&self.cfg.paths.index, "index.bin")
    }

    fn need(&self, path: &Path, what: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Input(format!("{what} not found at {}", path.display())))
        }
    }

    fn load_data(&self) -> Result<Dataset> {
        let p = self.dataset_path();
        self.need(&p, "dataset")?;
        read_dataset(&p)
    }

    fn load_model(&self) -> Result<ModelParams<f32>> {
        let p = self.checkpoint_path();
        self.need(&p, "checkpoint")?;
        load_checkpoint(&p)
    }

    /// Records `paths` (and the config) in the manifest.
    fn record(&self, paths: &[PathBuf]) -> Result<()> {
        let mpath = self.out.join("manifest.json");
        let mut m: Manifest = match fs::read(&mpath) {
            Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        m.version = env!("CARGO_PKG_VERSION").to_string();
        m.config = self.cfg.to_toml();
        let c = &self.cfg;
        m.seeds = BTreeMap::from([
            ("data".to_string(), c.data.seed),
            ("model_init".to_string(), c.model.init_seed),
            ("train".to_string(), c.train.seed),
            ("selection".to_string(), c.selection.seed),
            ("eval".to_string(), c.eval.seed),
        ]);
        for p in paths {
            let name = p.strip_prefix(&self.out).unwrap_or(p).to_string_lossy().into_owned();
            m.artifacts.insert(name, sha256_hex(&fs::read(p)?));
        }
        fs::write(&mpath, serde_json::to_vec_pretty(&m)?)?;
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn gen_data(run: &Run) -> Result<Vec<PathBuf>> {
    let t = Instant::now();
    let (catalog, users, logs) = generate(&run.cfg.data)?;
    let dataset = Dataset::from_generated(catalog, &users, logs);
    let path = run.dataset_path();
    write_dataset(&path, &dataset, run.cfg.paths.gzip)?;
    let events: usize = dataset.logs.iter().map(|l| l.len()).sum();
    println!(
        "wrote {} users, {} items, {} events to {} in {:.1}s",
        dataset.logs.len(),
        dataset.catalog.num_items(),
        events,
        path.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(vec![path])
}

fn train(run: &Run) -> Result<Vec<PathBuf>> {
    let t = Instant::now();
    let exp = run.cfg.experiment();
    let data = PreparedData::new(run.load_data()?, &exp.eval);
    let model_cfg = data.model_config(&exp.model);
    let params = ModelParams::<f32>::init(&model_cfg, data.item_category())?;
    let samples = build_samples(&data.train, &exp.samples);
    println!("{} training samples, {} parameters", samples.len(), params.num_parameters());
    let ckpt_dir = run.out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let metrics_path = run.out.join("metrics.jsonl");
    let mut metrics = std::io::BufWriter::new(fs::File::create(&metrics_path)?);
    let mut trainer = Trainer::new(params, exp.train.clone())?;
    let mut artifacts = vec![];
    while trainer.epochs_done() < exp.train.epochs {
        let epoch = trainer.epochs_done();
        let (mut sum, mut n) = (0.0, 0usize);
        let mut io_err = None;
        let res = trainer.run_epoch(&samples, |m| {
            sum += m.loss;
            n += 1;
            let line = serde_json::json!({
                "step": m.step, "epoch": m.epoch, "loss": m.loss,
                "category": m.category, "batch_size": m.batch_size,
            });
            if let Err(e) = writeln!(metrics, "{line}") {
                io_err.get_or_insert(e);
            }
        });
        if let Some(e) = io_err {
            return Err(e.into());
        }
        if let Err(e) = res {
            metrics.flush()?;
            let last_good = run.out.join("model.lastgood.ckpt");
            save_checkpoint(trainer.params(), &last_good)?;
            run.record(&[metrics_path, last_good.clone()])?;
            eprintln!("training stopped: {e}; last good parameters saved to {}", last_good.display());
            return Err(e);
        }
        let p = ckpt_dir.join(format!("epoch-{epoch}.ckpt"));
        save_checkpoint(trainer.params(), &p)?;
        artifacts.push(p);
        println!("epoch {epoch}: mean loss {:.4} over {n} steps", if n > 0 { sum / n as f64 } else { f64::NAN });
    }
    metrics.flush()?;
    let final_path = run.checkpoint_path();
    save_checkpoint(trainer.params(), &final_path)?;
    println!("saved {} in {:.1}s", final_path.display(), t.elapsed().as_secs_f64());
    artifacts.push(metrics_path);
    artifacts.push(final_path);
    Ok(artifacts)
}

fn build_index(run: &Run) -> Result<Vec<PathBuf>> {
    let params = run.load_model()?;
    let backend = run.cfg.retrieval_config().backend;
    let t = Instant::now();
    let set = build_indexes(&params, backend)?;
    let path = run.index_path();
    save_indexes(&set, &path)?;
    let sizes: usize = set.values().map(|i| i.len()).sum();
    println!(
        "indexed {sizes} items in {} categories ({backend:?}) to {} in {:.1}s",
        set.len(),
        path.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(vec![path])
}

fn retrieve(run: &Run, user: u32, now: Option<i64>, top: usize) -> Result<Vec<PathBuf>> {
    let params = run.load_model()?;
    let ipath = run.index_path();
    run.need(&ipath, "index")?;
    let indexes = load_indexes(&ipath)?;
    let dataset = run.load_data()?;
    let log = dataset
        .logs
        .iter()
        .find(|l| l.user_id == user)
        .ok_or_else(|| Error::Input(format!("unknown user {user}")))?;
    let profile = dataset.profiles.iter().find(|p| p.user_id == user).map(|p| p.tokens.as_slice()).unwrap_or_default();
    let now = now.unwrap_or_else(|| run.cfg.request_day());
    let result = multi_retrieve(&params, log, profile, &indexes, &run.cfg.retrieval_config(), now)?;
    if result.selected.is_empty() {
        println!("user {user} has no history before day {now}: no interests selected, empty result");
    } else {
        println!("user {user} at day {now}: {} interests selected", result.selected.len());
        for pc in &result.per_category {
            println!("  category {:>4}  subsequence length {:>3}  retrieved {}", pc.category, pc.subseq_len, pc.items.len());
        }
        for c in &result.skipped {
            println!("  category {c:>4}  skipped (no index)");
        }
        println!("{:>4}  {:>8}  {:>10}  {:>8}", "rank", "item", "score", "category");
        for (i, m) in result.merged.iter().take(top).enumerate() {
            println!("{:>4}  {:>8}  {:>10.4}  {:>8}", i + 1, m.item_id, m.score, m.source_category);
        }
        if result.merged.len() > top {
            println!("  ... {} more", result.merged.len() - top);
        }
    }
    let path = run.out.join(format!("retrieve-user-{user}.json"));
    fs::write(&path, serde_json::to_vec_pretty(&result)?)?;
    Ok(vec![path])
}

fn run_suites(run: &Run, suites: &[Suite], stem: &str) -> Result<Vec<PathBuf>> {
    let exp = run.cfg.experiment();
    let data = PreparedData::new(run.load_data()?, &exp.eval);
    let mut cache = ArmCache::default();
    let mut reports = Vec::new();
    let mut text = String::new();
    for &suite in suites {
        let t = Instant::now();
        let report = run_ablation(suite, &data, &exp, &mut cache, |arm, m| {
            if m.step % 200 == 0 {
                eprintln!("[{arm}] epoch {} step {} loss {:.4}", m.epoch, m.step, m.loss);
            }
        })?;
        let block = format!(
            "suite {suite:?}\n{}{}",
            render_table(&report.arms),
            render_findings(&report.findings)
        );
        print!("{block}");
        eprintln!("suite {suite:?} finished in {:.1}s", t.elapsed().as_secs_f64());
        text.push_str(&block);
        text.push('\n');
        reports.push(report);
    }
    let json = run.out.join(format!("{stem}.json"));
    let txt = run.out.join(format!("{stem}.txt"));
    fs::write(&json, serde_json::to_vec_pretty(&reports)?)?;
    write_text(&txt, &text)?;
    Ok(vec![json, txt])
}

fn evaluate_cmd(run: &Run, suite: Option<SuiteArg>) -> Result<Vec<PathBuf>> {
    if let Some(s) = suite {
        let suites: Vec<Suite> = match s {
            SuiteArg::RandomVsTop => vec![Suite::RandomVsTop],
            SuiteArg::LongSeq => vec![Suite::LongSeq],
            SuiteArg::InContext => vec![Suite::InContext],
            SuiteArg::All => Suite::ALL.to_vec(),
        };
        return run_suites(run, &suites, "ablation");
    }
    let params = run.load_model()?;
    let exp = run.cfg.experiment();
    let data = PreparedData::new(run.load_data()?, &exp.eval);
    let report = evaluate("model", &data, &exp, &params, exp.samples.mode, exp.retrieval.selection, None)?;
    let table = render_table(std::slice::from_ref(&report));
    print!("{table}");
    let json = run.out.join("eval.json");
    let txt = run.out.join("eval.txt");
    fs::write(&json, serde_json::to_vec_pretty(&report)?)?;
    write_text(&txt, &table)?;
    Ok(vec![json, txt])
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    match &cli.command {
        Command::GenData { seed, gzip } => {
            if let Some(s) = seed {
                overrides.push(format!("data.seed={s}"));
            }
            if *gzip {
                overrides.push("paths.gzip=true".into());
            }
        }
        Command::BuildIndex { backend: Some(b) } => {
            let v = match b {
                BackendArg::Exact => BackendKind::Exact,
                BackendArg::Graph => BackendKind::Graph,
            };
            overrides.push(format!("retrieval.backend={}", serde_json::to_string(&v)?));
        }
        _ => {}
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    fs::create_dir_all(&cli.out_dir)?;
    let run = Run { cfg, out: cli.out_dir };
    let artifacts = match cli.command {
        Command::GenData { .. } => gen_data(&run)?,
        Command::Train => train(&run)?,
        Command::BuildIndex { .. } => build_index(&run)?,
        Command::Retrieve { user, now, top } => retrieve(&run, user, now, top)?,
        Command::Evaluate { suite } => evaluate_cmd(&run, suite)?,
        Command::LeakageExperiment => run_suites(&run, &[Suite::InContext], "leakage")?,
    };
    run.record(&artifacts)
}
