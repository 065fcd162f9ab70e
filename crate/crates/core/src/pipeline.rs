//! End-to-end run: prepare, train VAE, train SDRM, generate, evaluate, audit.
//! Every artifact lands under one output directory next to a manifest.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{audit, AuditReport};
use crate::dataset::io::{
    load_splits, read_json, save_splits, write_json, SPLITS_SIDECAR, TEST_FILE, TRAIN_FILE, VALIDATION_FILE,
};
use crate::dataset::{
    dataset_stats, holdout_split, load_interactions, prepare, split_users, DatasetSplits, DatasetStats,
    InjectConfig, LoadOptions, PrepareConfig, RatingFormat, SplitRatios,
};
use crate::error::{Error, Result};
use crate::hpo::{search, write_trace, PipelineObjective, PipelineSettings, SearchOutcome, SearchSettings, SearchSpace, TrialConfig};
use crate::eval::{evaluate_protocol, render_markdown, EvalData, EvalReport, MfHyper, Protocol, Recommender, DEFAULT_K_LIST};
use crate::manifest::{sha256_json, RunManifest, StageRecord, StageStatus};
use crate::postprocess::{export_synthetic, generate_synthetic, GenerateRequest, SyntheticDataset};
use crate::sdrm::{train_sdrm, SamplerMode, SdrmHyper};
use crate::vae::{train_multivae, VaeHyper};

pub const SPLITS_DIR: &str = "splits";
pub const STATS_FILE: &str = "stats.json";
pub const CONFIG_FILE: &str = "config.json";
pub const VAE_CHECKPOINT: &str = "vae.sdrm";
pub const VAE_HEADER: &str = "vae.json";
pub const VAE_LOG: &str = "vae_log.jsonl";
pub const SDRM_CHECKPOINT: &str = "sdrm.sdrm";
pub const SDRM_HEADER: &str = "sdrm.json";
pub const SDRM_LOG: &str = "sdrm_log.jsonl";
pub const SYNTHETIC_DIR: &str = "synthetic";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_MD: &str = "eval.md";
pub const AUDIT_JSON: &str = "audit.json";
pub const AUDIT_MD: &str = "audit.md";
pub const DEGREES_CSV: &str = "degrees.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Display name used in reports.
    pub name: String,
    /// Raw ratings file; prepared into `<out>/splits` when `splits` is unset.
    pub input: Option<PathBuf>,
    pub format: RatingFormat,
    pub prepare: PrepareConfig,
    pub ratios: SplitRatios,
    pub split_seed: u64,
    /// Directory written by the prepare step.
    pub splits: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            name: "ml-100k".into(),
            input: None,
            format: RatingFormat::Tsv,
            prepare: PrepareConfig::default(),
            ratios: SplitRatios::default(),
            split_seed: 42,
            splits: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub mode: SamplerMode,
    /// Defaults to the number of training users.
    pub n_users: Option<usize>,
    /// Defaults to the training-split sparsity.
    pub target_sparsity: Option<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Full,
            n_users: None,
            target_sparsity: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub enabled: bool,
    pub protocols: Vec<Protocol>,
    pub mf: MfHyper,
    /// Also score popularity ranking under the original protocol.
    pub popularity_baseline: bool,
    pub seeds: Vec<u64>,
    pub k_list: Vec<usize>,
    pub inject: InjectConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            protocols: Protocol::ALL.to_vec(),
            mf: MfHyper::default(),
            popularity_baseline: true,
            seeds: vec![1, 2, 3, 4, 5],
            k_list: DEFAULT_K_LIST.to_vec(),
            inject: InjectConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub enabled: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { enabled: true }
    }
}

/// One file drives every stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed: the VAE uses it directly, SDRM `seed + 100`, sampling
    /// `seed + 200` and the VAE validation holdout `seed + 300`.
    pub seed: u64,
    pub data: DataConfig,
    pub vae: VaeHyper,
    pub sdrm: SdrmHyper,
    pub generate: GenerateConfig,
    pub eval: EvalConfig,
    pub audit: AuditConfig,
}

impl PipelineConfig {
    pub fn vae_seed(&self) -> u64 {
        self.seed
    }

    pub fn sdrm_seed(&self) -> u64 {
        self.seed.wrapping_add(100)
    }

    pub fn sample_seed(&self) -> u64 {
        self.seed.wrapping_add(200)
    }

    pub fn holdout_seed(&self) -> u64 {
        self.seed.wrapping_add(300)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedStats {
    pub raw_ratings: usize,
    /// Every rating of the retained users and items.
    pub observed: DatasetStats,
    /// Binarized positives the splits are built from.
    pub positives: DatasetStats,
    pub train: DatasetStats,
    pub test: DatasetStats,
    pub validation: DatasetStats,
}

/// Load, binarize, filter and split `input`, writing the splits and
/// `stats.json` into `out`.
pub fn prepare_splits(data: &DataConfig, input: &Path, out: &Path) -> Result<(DatasetSplits, PreparedStats)> {
    let raw = load_interactions(input, &LoadOptions::new(data.format))?;
    let prepared = prepare(&raw, &data.prepare)?;
    let splits = split_users(&prepared.positives, data.ratios, data.split_seed)?;
    let sidecar = save_splits(out, &splits, data.split_seed, data.ratios)?;
    let stats = PreparedStats {
        raw_ratings: raw.len(),
        observed: dataset_stats(&prepared.observed),
        positives: dataset_stats(&prepared.positives),
        train: sidecar.stats.train,
        test: sidecar.stats.test,
        validation: sidecar.stats.validation,
    };
    write_json(&out.join(STATS_FILE), &stats)?;
    Ok((splits, stats))
}

struct Runner<'a> {
    out: &'a Path,
    manifest: RunManifest,
}

impl Runner<'_> {
    /// Run one stage, hash its outputs and persist the manifest whatever the
    /// outcome.
    fn stage<T>(
        &mut self,
        name: &str,
        settings: &impl Serialize,
        body: impl FnOnce(&Path) -> Result<(T, Vec<String>)>,
    ) -> Result<T> {
        log::info!("stage {name}");
        let started = Instant::now();
        let settings_sha256 = sha256_json(settings)?;
        let result = body(self.out).and_then(|(value, outputs)| {
            for rel in &outputs {
                self.manifest.add_artifact(self.out, rel)?;
            }
            Ok((value, outputs))
        });
        let wall_secs = started.elapsed().as_secs_f64();
        let mut record = StageRecord {
            name: name.into(),
            status: StageStatus::Done,
            settings_sha256,
            outputs: Vec::new(),
            error: None,
            wall_secs,
        };
        let outcome = match result {
            Ok((value, outputs)) => {
                record.outputs = outputs;
                Ok(value)
            }
            Err(e) => {
                record.status = StageStatus::Failed;
                record.error = Some(e.to_string());
                Err(Error::Stage {
                    stage: name.into(),
                    source: Box::new(e),
                })
            }
        };
        self.manifest.stages.push(record);
        self.manifest.save(self.out)?;
        outcome
    }

    fn skip(&mut self, name: &str) -> Result<()> {
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            status: StageStatus::Skipped,
            settings_sha256: String::new(),
            outputs: Vec::new(),
            error: None,
            wall_secs: 0.0,
        });
        self.manifest.save(self.out)
    }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Everything a completed run produced, kept in memory for callers.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub splits: DatasetSplits,
    pub synthetic: SyntheticDataset,
    pub eval: Option<Vec<EvalReport>>,
    pub audit: Option<AuditReport>,
    pub manifest: RunManifest,
}

fn load_data(data: &DataConfig, out: &Path) -> Result<(DatasetSplits, Vec<String>)> {
    match (&data.splits, &data.input) {
        (Some(dir), _) => Ok((load_splits(dir)?.0, Vec::new())),
        (None, Some(input)) => {
            let (splits, _) = prepare_splits(data, input, &out.join(SPLITS_DIR))?;
            let files = [TRAIN_FILE, TEST_FILE, VALIDATION_FILE, SPLITS_SIDECAR, STATS_FILE];
            Ok((splits, files.iter().map(|f| format!("{SPLITS_DIR}/{f}")).collect()))
        }
        (None, None) => Err(Error::config("data.splits or data.input must be set")),
    }
}

fn record_inputs(manifest: &mut RunManifest, data: &DataConfig) -> Result<()> {
    match (&data.splits, &data.input) {
        (Some(dir), _) => {
            for f in [TRAIN_FILE, TEST_FILE, VALIDATION_FILE] {
                manifest.add_input(&dir.join(f))?;
            }
            Ok(())
        }
        (None, Some(input)) => manifest.add_input(input),
        _ => Ok(()),
    }
}

pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<PipelineOutput> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = RunManifest::new("pipeline", config)?;
    for (name, seed) in [
        ("vae", config.vae_seed()),
        ("sdrm", config.sdrm_seed()),
        ("sample", config.sample_seed()),
        ("holdout", config.holdout_seed()),
        ("split", config.data.split_seed),
    ] {
        manifest.seeds.insert(name.into(), seed);
    }
    write_json(&out.join(CONFIG_FILE), config)?;
    manifest.add_artifact(out, CONFIG_FILE)?;
    let mut run = Runner { out, manifest };

    let splits = run.stage("prepare", &config.data, |out| load_data(&config.data, out))?;
    record_inputs(&mut run.manifest, &config.data)?;

    let vae = run.stage("vae", &config.vae, |out| {
        let held = holdout_split(&splits.validation, config.vae.validation_holdout, config.holdout_seed())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.vae_seed());
        let trained = train_multivae(&splits.train, &held, &config.vae, &mut rng, |e| {
            log::debug!("vae epoch {} loss {:.4} recall@10 {:.4}", e.epoch, e.loss, e.val_recall_at_10)
        })?;
        log::info!("vae best epoch {} recall@10 {:.4}", trained.best_epoch, trained.best_recall);
        trained.model.save(&out.join(VAE_CHECKPOINT))?;
        write_jsonl(&out.join(VAE_LOG), &trained.history)?;
        Ok((trained.model, vec![VAE_CHECKPOINT.into(), VAE_HEADER.into(), VAE_LOG.into()]))
    })?;

    let sdrm = run.stage("sdrm", &config.sdrm, |out| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.sdrm_seed());
        let trained = train_sdrm(&vae, &splits.train, &config.sdrm, &mut rng, |e, l| {
            log::debug!("sdrm epoch {e} loss {l:.6}")
        })?;
        trained.model.save(&out.join(SDRM_CHECKPOINT), &trained.header(config.sdrm.noise_variance))?;
        let log: Vec<_> = trained
            .losses
            .iter()
            .enumerate()
            .map(|(e, l)| serde_json::json!({"epoch": e + 1, "loss": l}))
            .collect();
        write_jsonl(&out.join(SDRM_LOG), &log)?;
        Ok((trained, vec![SDRM_CHECKPOINT.into(), SDRM_HEADER.into(), SDRM_LOG.into()]))
    })?;

    let synthetic = run.stage("generate", &config.generate, |out| {
        let request = GenerateRequest {
            n_users: config.generate.n_users.unwrap_or(splits.train.n_users()),
            mode: config.generate.mode,
            target_sparsity: config.generate.target_sparsity.unwrap_or(splits.train.sparsity()),
            seed: config.sample_seed(),
        };
        let ds = generate_synthetic(&vae, &sdrm.model, &sdrm.schedule, splits.train.item_ids(), &request)?;
        log::info!(
            "generated {} users, sparsity {:.5} (target {:.5})",
            ds.matrix.n_users(),
            ds.provenance.achieved_sparsity,
            ds.provenance.target_sparsity
        );
        export_synthetic(&ds, &out.join(SYNTHETIC_DIR))?;
        let outputs = vec![
            format!("{SYNTHETIC_DIR}/{}", crate::postprocess::SYNTHETIC_CELLS),
            format!("{SYNTHETIC_DIR}/{}", crate::postprocess::SYNTHETIC_SIDECAR),
        ];
        Ok((ds, outputs))
    })?;

    let eval = if config.eval.enabled {
        Some(run.stage("eval", &config.eval, |out| {
            let reports = evaluate_all(config, &splits, &synthetic.matrix)?;
            write_json(&out.join(EVAL_JSON), &reports)?;
            text(&out.join(EVAL_MD), &render_markdown(&reports))?;
            Ok((reports, vec![EVAL_JSON.into(), EVAL_MD.into()]))
        })?)
    } else {
        run.skip("eval")?;
        None
    };

    let audit_report = if config.audit.enabled {
        Some(run.stage("audit", &config.audit, |out| {
            let report = audit(&synthetic.matrix, &splits.train)?;
            write_json(&out.join(AUDIT_JSON), &report)?;
            text(&out.join(AUDIT_MD), &report.render_markdown())?;
            report.write_degree_csv(&out.join(DEGREES_CSV))?;
            Ok((report, vec![AUDIT_JSON.into(), AUDIT_MD.into(), DEGREES_CSV.into()]))
        })?)
    } else {
        run.skip("audit")?;
        None
    };

    run.manifest.finished_unix = Some(crate::manifest::unix_now());
    run.manifest.save(out)?;
    Ok(PipelineOutput {
        splits,
        synthetic,
        eval,
        audit: audit_report,
        manifest: run.manifest,
    })
}

/// MF under each configured protocol, plus the popularity baseline.
pub fn evaluate_all(config: &PipelineConfig, splits: &DatasetSplits, synthetic: &crate::dataset::InteractionMatrix) -> Result<Vec<EvalReport>> {
    let data = EvalData {
        train: &splits.train,
        test: &splits.test,
        synthetic: Some(synthetic),
        inject: config.eval.inject,
    };
    let e = &config.eval;
    let mut reports = Vec::new();
    if e.popularity_baseline {
        reports.push(evaluate_protocol(Protocol::Original, &data, &Recommender::Popularity, &e.seeds, &e.k_list, &config.data.name)?);
    }
    let mf = Recommender::Mf(e.mf.clone());
    for &p in &e.protocols {
        reports.push(evaluate_protocol(p, &data, &mf, &e.seeds, &e.k_list, &config.data.name)?);
    }
    Ok(reports)
}

/// Search settings, space and objective for `run_hpo`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoRunConfig {
    pub data: DataConfig,
    pub space: SearchSpace,
    pub search: SearchSettings,
    pub objective: PipelineSettings,
}

pub const TRACE_FILE: &str = "trace.jsonl";
pub const BEST_FILE: &str = "best.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestTrial {
    pub trial: usize,
    pub score: f64,
    pub config: TrialConfig,
    pub fold_scores: Vec<f64>,
}

/// Search over the training and validation users; the test split is never read
/// by the objective.
pub fn run_hpo(config: &HpoRunConfig, out: &Path) -> Result<SearchOutcome> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = RunManifest::new("hpo", config)?;
    manifest.seeds.insert("search".into(), config.search.seed);
    manifest.seeds.insert("folds".into(), config.objective.fold_seed);
    manifest.seeds.insert("split".into(), config.data.split_seed);
    write_json(&out.join(CONFIG_FILE), config)?;
    manifest.add_artifact(out, CONFIG_FILE)?;
    let mut run = Runner { out, manifest };
    let splits = run.stage("prepare", &config.data, |out| load_data(&config.data, out))?;
    record_inputs(&mut run.manifest, &config.data)?;
    let outcome = run.stage("search", &(&config.space, &config.search, &config.objective), |out| {
        let objective = PipelineObjective::new(&splits.train, &splits.validation, config.objective.clone())?;
        let outcome = search(&config.space, &config.search, &objective, |t| match t.score {
            Some(s) => log::info!("trial {} recall@10 {s:.4}", t.id),
            None if t.failed => log::info!("trial {} failed", t.id),
            None => log::info!("trial {} pruned after rung {}", t.id, t.rung_reached),
        })?;
        write_trace(&out.join(TRACE_FILE), &outcome.trace)?;
        let best = BestTrial {
            trial: outcome.best.id,
            score: outcome.best.score.expect("best trial has a score"),
            config: outcome.best.config.clone(),
            fold_scores: outcome.best.fold_scores.clone(),
        };
        write_json(&out.join(BEST_FILE), &best)?;
        Ok((outcome, vec![TRACE_FILE.into(), BEST_FILE.into()]))
    })?;
    for t in &outcome.trace {
        run.manifest.timings.insert(format!("trial_{:04}", t.id), t.wall_secs);
    }
    run.manifest.finished_unix = Some(crate::manifest::unix_now());
    run.manifest.save(out)?;
    Ok(outcome)
}

/// Metric and audit tables of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub eval: Option<Vec<EvalReport>>,
    pub audit: Option<AuditReport>,
}

impl RunSummary {
    /// Reads the artifacts of every stage the manifest marks done; missing
    /// files are listed together in the error.
    pub fn load(run_dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(run_dir)?;
        let done = |name: &str| manifest.stage(name).is_some_and(|s| s.status == StageStatus::Done);
        let mut missing = Vec::new();
        for (stage, files) in [("eval", [EVAL_JSON, EVAL_MD]), ("audit", [AUDIT_JSON, AUDIT_MD])] {
            if done(stage) {
                missing.extend(files.iter().filter(|f| !run_dir.join(f).exists()).map(|f| f.to_string()));
            }
        }
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "{}: missing artifacts: {}",
                run_dir.display(),
                missing.join(", ")
            )));
        }
        Ok(Self {
            eval: done("eval").then(|| read_json(&run_dir.join(EVAL_JSON))).transpose()?,
            audit: done("audit").then(|| read_json(&run_dir.join(AUDIT_JSON))).transpose()?,
        })
    }

    pub fn render_markdown(&self) -> String {
        let mut out = String::from("## Recommendation metrics\n\n");
        match &self.eval {
            Some(r) => out.push_str(&render_markdown(r)),
            None => out.push_str("Evaluation: skipped\n"),
        }
        out.push_str("\n## Privacy audit\n\n");
        match &self.audit {
            Some(a) => out.push_str(&a.render_markdown()),
            None => out.push_str("Privacy audit: skipped\n"),
        }
        out
    }
}
