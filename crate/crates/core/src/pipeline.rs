//! Config-driven multi-stage runs: one JSON config in, one run directory
//! out, with a manifest attributing every output file to exactly one stage.
//!
//! Stages always execute in the canonical order `sample -> label ->
//! build-sft -> build-prefs -> build-hir -> bon -> eval -> report`,
//! restricted to the requested set. The whole config is validated before any
//! work starts; a stage failure marks that stage failed in the manifest and
//! skips everything after it. Completed stages whose outputs are still
//! present are reused on re-runs unless `force` is set.

use crate::bon::{self, RemoteScorerSpec, SimulatedScorer};
use crate::corpus::{self, CorpusFormat, PromptTemplate, QaItem};
use crate::evaluator::{self, ReportRow, ReportSpec, ResponseRow};
use crate::hir_builder;
use crate::inference::{self, BackendSpec, SampleFailure, SamplingParams};
use crate::judge::JudgeConfig;
use crate::labeler::{self, ConfidenceRecord, IdkExample};
use crate::pref_builder;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

/// Canonical file names inside a run directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const SAMPLES: &str = "samples.jsonl";
    pub const SAMPLE_FAILURES: &str = "sample_failures.jsonl";
    pub const CONFIDENCE: &str = "confidence.jsonl";
    pub const IDK_SFT: &str = "idk_sft.jsonl";
    pub const WARMUP_HALF: &str = "warmup_half.jsonl";
    pub const PREFS: &str = "prefs.jsonl";
    pub const PREFS_VAL: &str = "prefs_val.jsonl";
    pub const PREFS_SKIPS: &str = "prefs_skips.jsonl";
    pub const HIR: &str = "hir.jsonl";
    pub const RESPONSES: &str = "responses.jsonl";
    pub const BON_FAILURES: &str = "bon_failures.jsonl";
    pub const QUADRANTS: &str = "quadrants.jsonl";
    pub const METRICS: &str = "metrics.csv";
    pub const REPORT: &str = "report.csv";
    pub const DISTRIBUTION: &str = "label_distribution.csv";
    pub const CHART: &str = "chart.svg";
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// The pipeline stages in canonical execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Sample,
    Label,
    BuildSft,
    BuildPrefs,
    BuildHir,
    Bon,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Sample,
        Stage::Label,
        Stage::BuildSft,
        Stage::BuildPrefs,
        Stage::BuildHir,
        Stage::Bon,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sample => "sample",
            Stage::Label => "label",
            Stage::BuildSft => "build-sft",
            Stage::BuildPrefs => "build-prefs",
            Stage::BuildHir => "build-hir",
            Stage::Bon => "bon",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::GenericJsonl
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub backend: BackendSpec,
    #[serde(default)]
    pub params: SamplingParams,
    #[serde(default = "default_template")]
    pub template: PromptTemplate,
    /// Complete an existing partial samples file instead of failing over it.
    #[serde(default)]
    pub resume: bool,
}

fn default_template() -> PromptTemplate {
    PromptTemplate::Plain
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub threshold: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { threshold: 1.0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildSftConfig {
    /// Label every question IDK regardless of confidence (for corpora that
    /// are unknown by construction).
    pub force_idk: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildPrefsConfig {
    #[serde(default)]
    pub seed: u64,
    /// Pre-collected responses of the warm-up SFT model on the pref half.
    #[serde(default)]
    pub samples: Option<PathBuf>,
    /// Alternatively, a backend standing in for the warm-up SFT model.
    #[serde(default)]
    pub sft_backend: Option<BackendSpec>,
    #[serde(default)]
    pub sft_seed: u64,
    #[serde(default = "default_k")]
    pub sft_num_samples: u32,
}

fn default_k() -> u32 {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildHirConfig {
    /// `start:end:step` range or comma-separated list on the 0.1..1.1 grid.
    pub thresholds: String,
}

impl Default for BuildHirConfig {
    fn default() -> Self {
        Self {
            thresholds: "0.1:1.1:0.1".to_string(),
        }
    }
}

/// Reward source for the bon stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerConfig {
    /// Judge-keyed: reward correct responses.
    Correctness,
    /// Judge-keyed: reward the truthful action given gold labels.
    Truthfulness,
    /// Remote scoring endpoint.
    Remote(RemoteScorerSpec),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BonConfig {
    pub n: u32,
    pub seed: u64,
    pub scorer: ScorerConfig,
    /// Sampling backend; defaults to the sample stage's backend.
    pub backend: Option<BackendSpec>,
}

impl Default for BonConfig {
    fn default() -> Self {
        Self {
            n: 10,
            seed: 0,
            scorer: ScorerConfig::Correctness,
            backend: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Gold labels file; defaults to this run's `idk_sft.jsonl`.
    pub gold: Option<PathBuf>,
    /// Responses file; defaults to this run's `responses.jsonl`.
    pub responses: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Also emit an SVG chart of the quadrant shares.
    pub chart: bool,
}

/// The whole run config: one JSON document with per-stage sections.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub judge: JudgeConfig,
    pub stages: Vec<String>,
    #[serde(default)]
    pub sample: Option<SampleConfig>,
    #[serde(default)]
    pub label: LabelConfig,
    #[serde(default)]
    pub build_sft: BuildSftConfig,
    #[serde(default)]
    pub build_prefs: Option<BuildPrefsConfig>,
    #[serde(default)]
    pub build_hir: BuildHirConfig,
    #[serde(default)]
    pub bon: BonConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(json)
            .map_err(|e| PipelineError::Validation(vec![format!("config schema: {e}")]))
    }

    fn requested_stages(&self) -> Result<Vec<Stage>, Vec<String>> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stages = Vec::new();
        for name in &self.stages {
            match Stage::parse(name) {
                Some(stage) => {
                    if !seen.insert(stage) {
                        problems.push(format!("stages: duplicate stage `{name}`"));
                    } else {
                        stages.push(stage);
                    }
                }
                None => problems.push(format!(
                    "stages: unknown stage `{name}` (expected one of: {})",
                    Stage::ALL.map(Stage::name).join(", ")
                )),
            }
        }
        if stages.is_empty() && problems.is_empty() {
            problems.push("stages: at least one stage is required".to_string());
        }
        if problems.is_empty() {
            stages.sort();
            Ok(stages)
        } else {
            Err(problems)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    /// Ran to completion in this invocation.
    Ok,
    /// Outputs from a previous completed run were reused.
    Cached,
    /// The stage raised an error.
    Failed,
    /// Not run because an earlier stage failed.
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Run metadata persisted as `manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub judge: JudgeConfig,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    pub started_at: u64,
    pub finished_at: u64,
}

impl Manifest {
    pub fn load(path: &Path) -> Option<Manifest> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|e| PipelineError::io(path, e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct RunCtx<'a> {
    config: &'a RunConfig,
    out_dir: &'a Path,
    corpus: Vec<QaItem>,
}

impl RunCtx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn judge(&self) -> &JudgeConfig {
        &self.config.judge
    }

    /// Resolve an optional explicit path against the run dir default.
    fn input(&self, explicit: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.path(default_name))
    }
}

/// Validate the config and run every requested stage into `out_dir`.
///
/// The manifest is written even when a stage fails; the returned error then
/// carries the failing stage. With `force`, previously completed stages are
/// re-run instead of reused.
pub fn run_pipeline(
    config: &RunConfig,
    out_dir: &Path,
    force: bool,
) -> Result<Manifest, PipelineError> {
    let stages = validate(config, out_dir).map_err(PipelineError::Validation)?;

    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::io(out_dir, e))?;
    let previous = Manifest::load(&out_dir.join(files::MANIFEST));

    let corpus = corpus::load_corpus(&config.corpus.path, config.corpus.format)
        .map_err(|e| PipelineError::Validation(vec![format!("corpus: {e}")]))?;
    let ctx = RunCtx {
        config,
        out_dir,
        corpus,
    };

    let mut seeds = BTreeMap::new();
    if let Some(sample) = &config.sample {
        seeds.insert("sample".to_string(), sample.params.seed);
    }
    if let Some(prefs) = &config.build_prefs {
        seeds.insert("build_prefs".to_string(), prefs.seed);
        seeds.insert("build_prefs_sft".to_string(), prefs.sft_seed);
    }
    if stages.contains(&Stage::Bon) {
        seeds.insert("bon".to_string(), config.bon.seed);
    }

    let mut manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_hash(config),
        judge: config.judge.clone(),
        seeds,
        stages: Vec::new(),
        started_at: now_unix(),
        finished_at: 0,
    };

    let mut failed: Option<(String, String)> = None;
    for stage in stages {
        let name = stage.name().to_string();
        if failed.is_some() {
            manifest.stages.push(StageRecord {
                name,
                status: StageStatus::Skipped,
                outputs: Vec::new(),
                error: None,
            });
            continue;
        }
        if !force {
            if let Some(prev) = previous.as_ref().and_then(|m| m.stage(&name)) {
                let reusable = matches!(prev.status, StageStatus::Ok | StageStatus::Cached)
                    && !prev.outputs.is_empty()
                    && prev.outputs.iter().all(|f| ctx.path(f).exists());
                if reusable {
                    manifest.stages.push(StageRecord {
                        name,
                        status: StageStatus::Cached,
                        outputs: prev.outputs.clone(),
                        error: None,
                    });
                    continue;
                }
            }
        }
        match run_stage(stage, &ctx) {
            Ok(outputs) => manifest.stages.push(StageRecord {
                name,
                status: StageStatus::Ok,
                outputs,
                error: None,
            }),
            Err(message) => {
                manifest.stages.push(StageRecord {
                    name: name.clone(),
                    status: StageStatus::Failed,
                    outputs: Vec::new(),
                    error: Some(message.clone()),
                });
                failed = Some((name, message));
            }
        }
    }

    manifest.finished_at = now_unix();
    manifest.save(&out_dir.join(files::MANIFEST))?;
    match failed {
        Some((stage, message)) => Err(PipelineError::Stage { stage, message }),
        None => Ok(manifest),
    }
}

/// Fail-fast validation: every problem is reported before any work happens.
fn validate(config: &RunConfig, out_dir: &Path) -> Result<Vec<Stage>, Vec<String>> {
    let mut problems = Vec::new();
    let stages = match config.requested_stages() {
        Ok(stages) => stages,
        Err(mut stage_problems) => {
            problems.append(&mut stage_problems);
            Vec::new()
        }
    };
    let scheduled = |s: Stage| stages.contains(&s);
    let present = |name: &str| out_dir.join(name).exists();

    if !config.corpus.path.exists() {
        problems.push(format!(
            "corpus.path: file not found: {}",
            config.corpus.path.display()
        ));
    }
    if let Err(e) = config.judge.validate() {
        problems.push(format!("judge: {e}"));
    }
    if let Err(e) = labeler::validate_threshold(config.label.threshold) {
        problems.push(format!("label.threshold: {e}"));
    }
    if let Err(e) = hir_builder::parse_thresholds(&config.build_hir.thresholds) {
        if scheduled(Stage::BuildHir) {
            problems.push(format!("build_hir.thresholds: {e}"));
        }
    }

    if scheduled(Stage::Sample) {
        match &config.sample {
            None => problems.push("sample: section required when the sample stage is requested".into()),
            Some(sample) => {
                if let Err(e) = sample.params.validate() {
                    problems.push(format!("sample.params: {e}"));
                }
                if let BackendSpec::Simulated(spec) = &sample.backend {
                    if let Err(e) = spec.validate() {
                        problems.push(format!("sample.backend: {e}"));
                    }
                }
            }
        }
    }
    if scheduled(Stage::Label) && !scheduled(Stage::Sample) && !present(files::SAMPLES) {
        problems.push("label: needs the sample stage or an existing samples.jsonl".into());
    }
    if scheduled(Stage::BuildSft)
        && !config.build_sft.force_idk
        && !scheduled(Stage::Label)
        && !present(files::CONFIDENCE)
    {
        problems.push("build-sft: needs the label stage or an existing confidence.jsonl".into());
    }
    if scheduled(Stage::BuildPrefs) {
        match &config.build_prefs {
            None => problems
                .push("build_prefs: section required when the build-prefs stage is requested".into()),
            Some(prefs) => {
                if prefs.samples.is_none() && prefs.sft_backend.is_none() {
                    problems.push(
                        "build_prefs: either `samples` or `sft_backend` must be provided".into(),
                    );
                }
                if let Some(path) = &prefs.samples {
                    if !path.exists() {
                        problems.push(format!(
                            "build_prefs.samples: file not found: {}",
                            path.display()
                        ));
                    }
                }
            }
        }
        if !scheduled(Stage::BuildSft) && !present(files::IDK_SFT) {
            problems.push("build-prefs: needs the build-sft stage or an existing idk_sft.jsonl".into());
        }
    }
    if scheduled(Stage::BuildHir) && !scheduled(Stage::Label) && !present(files::CONFIDENCE) {
        problems.push("build-hir: needs the label stage or an existing confidence.jsonl".into());
    }
    if scheduled(Stage::Bon) {
        if config.bon.n == 0 {
            problems.push("bon.n: must be >= 1".into());
        }
        let backend = config
            .bon
            .backend
            .as_ref()
            .or(config.sample.as_ref().map(|s| &s.backend));
        if backend.is_none() {
            problems.push("bon: needs `bon.backend` or a sample section to borrow the backend from".into());
        }
        if matches!(config.bon.scorer, ScorerConfig::Truthfulness)
            && config.eval.gold.is_none()
            && !scheduled(Stage::BuildSft)
            && !present(files::IDK_SFT)
        {
            problems.push(
                "bon: the truthfulness scorer needs gold labels (eval.gold, the build-sft stage, or an existing idk_sft.jsonl)"
                    .into(),
            );
        }
    }
    if scheduled(Stage::Eval) {
        let gold_ok = config.eval.gold.as_ref().map(|p| p.exists()).unwrap_or(false)
            || (config.eval.gold.is_none() && (scheduled(Stage::BuildSft) || present(files::IDK_SFT)));
        if !gold_ok {
            problems.push(
                "eval: no gold labels (set eval.gold, schedule build-sft, or provide idk_sft.jsonl)"
                    .into(),
            );
        }
        let responses_ok = config
            .eval
            .responses
            .as_ref()
            .map(|p| p.exists())
            .unwrap_or(false)
            || (config.eval.responses.is_none()
                && (scheduled(Stage::Bon) || present(files::RESPONSES)));
        if !responses_ok {
            problems.push(
                "eval: no responses (set eval.responses, schedule bon, or provide responses.jsonl)"
                    .into(),
            );
        }
    }
    if scheduled(Stage::Report) && !scheduled(Stage::Eval) && !present(files::QUADRANTS) {
        problems.push("report: needs the eval stage or an existing quadrants.jsonl".into());
    }

    if problems.is_empty() {
        Ok(stages)
    } else {
        Err(problems)
    }
}

fn run_stage(stage: Stage, ctx: &RunCtx) -> Result<Vec<String>, String> {
    match stage {
        Stage::Sample => stage_sample(ctx),
        Stage::Label => stage_label(ctx),
        Stage::BuildSft => stage_build_sft(ctx),
        Stage::BuildPrefs => stage_build_prefs(ctx),
        Stage::BuildHir => stage_build_hir(ctx),
        Stage::Bon => stage_bon(ctx),
        Stage::Eval => stage_eval(ctx),
        Stage::Report => stage_report(ctx),
    }
    .map_err(|e: Box<dyn std::error::Error>| e.to_string())
}

type StageResult = Result<Vec<String>, Box<dyn std::error::Error>>;

fn stage_sample(ctx: &RunCtx) -> StageResult {
    let cfg = ctx.config.sample.as_ref().expect("validated");
    let samples_path = ctx.path(files::SAMPLES);
    let run = if cfg.resume && samples_path.exists() {
        inference::resume(
            &samples_path,
            &ctx.corpus,
            &cfg.params,
            &cfg.backend,
            cfg.template,
            ctx.judge(),
        )?
    } else {
        inference::sample(
            &ctx.corpus,
            &cfg.params,
            &cfg.backend,
            cfg.template,
            ctx.judge(),
        )?
    };
    inference::write_samples(&samples_path, &run.responses)?;
    let mut outputs = vec![files::SAMPLES.to_string()];
    if !run.failures.is_empty() {
        crate::jsonl::write_jsonl(&ctx.path(files::SAMPLE_FAILURES), &run.failures)?;
        outputs.push(files::SAMPLE_FAILURES.to_string());
    }
    Ok(outputs)
}

fn stage_label(ctx: &RunCtx) -> StageResult {
    let samples = inference::read_samples_strict(&ctx.path(files::SAMPLES))?;
    let failures_path = ctx.path(files::SAMPLE_FAILURES);
    let failed: BTreeSet<String> = if failures_path.exists() {
        crate::jsonl::read_jsonl::<SampleFailure>(&failures_path)?
            .into_iter()
            .map(|f| f.question_id)
            .collect()
    } else {
        BTreeSet::new()
    };
    let usable: Vec<_> = samples
        .into_iter()
        .filter(|s| !failed.contains(&s.question_id))
        .collect();
    let records = labeler::compute_confidence_all(&usable, &ctx.corpus, ctx.judge())?;
    crate::jsonl::write_jsonl(&ctx.path(files::CONFIDENCE), &records)?;
    Ok(vec![files::CONFIDENCE.to_string()])
}

fn stage_build_sft(ctx: &RunCtx) -> StageResult {
    let threshold = ctx.config.label.threshold;
    let rows = if ctx.config.build_sft.force_idk {
        labeler::force_idk_dataset(&ctx.corpus, threshold, ctx.judge())?
    } else {
        let records: Vec<ConfidenceRecord> =
            crate::jsonl::read_jsonl(&ctx.path(files::CONFIDENCE))?;
        labeler::build_idk_dataset(&records, &ctx.corpus, threshold, ctx.judge())?
    };
    crate::jsonl::write_jsonl(&ctx.path(files::IDK_SFT), &rows)?;
    Ok(vec![files::IDK_SFT.to_string()])
}

fn stage_build_prefs(ctx: &RunCtx) -> StageResult {
    let cfg = ctx.config.build_prefs.as_ref().expect("validated");
    let dataset: Vec<IdkExample> = crate::jsonl::read_jsonl(&ctx.path(files::IDK_SFT))?;
    let (warmup, pref) = pref_builder::split_halves(dataset, cfg.seed);
    crate::jsonl::write_jsonl(&ctx.path(files::WARMUP_HALF), &warmup)?;

    let samples = match (&cfg.samples, &cfg.sft_backend) {
        (Some(path), _) => inference::read_samples_strict(path)?,
        (None, Some(backend)) => {
            let pref_ids: BTreeSet<&str> = pref.iter().map(|e| e.question_id.as_str()).collect();
            let pref_items: Vec<QaItem> = ctx
                .corpus
                .iter()
                .filter(|i| pref_ids.contains(i.id.as_str()))
                .cloned()
                .collect();
            let params = SamplingParams {
                num_samples: cfg.sft_num_samples,
                seed: cfg.sft_seed,
                ..SamplingParams::default()
            };
            inference::sample(
                &pref_items,
                &params,
                backend,
                PromptTemplate::Plain,
                ctx.judge(),
            )?
            .responses
        }
        (None, None) => unreachable!("validated"),
    };

    let out = pref_builder::build_pairs(&pref, &samples, &ctx.corpus, ctx.judge())?;
    let (train, val) = pref_builder::split_validation(out.pairs, cfg.seed);
    crate::jsonl::write_jsonl(&ctx.path(files::PREFS), &train)?;
    crate::jsonl::write_jsonl(&ctx.path(files::PREFS_VAL), &val)?;
    crate::jsonl::write_jsonl(&ctx.path(files::PREFS_SKIPS), &out.skips)?;
    Ok(vec![
        files::WARMUP_HALF.to_string(),
        files::PREFS.to_string(),
        files::PREFS_VAL.to_string(),
        files::PREFS_SKIPS.to_string(),
    ])
}

fn stage_build_hir(ctx: &RunCtx) -> StageResult {
    let records: Vec<ConfidenceRecord> = crate::jsonl::read_jsonl(&ctx.path(files::CONFIDENCE))?;
    let thresholds = hir_builder::parse_thresholds(&ctx.config.build_hir.thresholds)?;
    let rows = hir_builder::build_hir_dataset(&records, &ctx.corpus, &thresholds, ctx.judge())?;
    crate::jsonl::write_jsonl(&ctx.path(files::HIR), &rows)?;
    Ok(vec![files::HIR.to_string()])
}

fn stage_bon(ctx: &RunCtx) -> StageResult {
    let cfg = &ctx.config.bon;
    let backend = cfg
        .backend
        .as_ref()
        .or(ctx.config.sample.as_ref().map(|s| &s.backend))
        .expect("validated");
    let template = ctx
        .config
        .sample
        .as_ref()
        .map(|s| s.template)
        .unwrap_or(PromptTemplate::Plain);

    let run = match &cfg.scorer {
        ScorerConfig::Correctness => {
            let scorer = SimulatedScorer::Correctness {
                judge: ctx.judge().clone(),
            };
            bon::bon_run(&ctx.corpus, cfg.n, backend, &scorer, template, ctx.judge(), cfg.seed)?
        }
        ScorerConfig::Truthfulness => {
            let gold_path = ctx.input(&ctx.config.eval.gold, files::IDK_SFT);
            let gold: Vec<IdkExample> = crate::jsonl::read_jsonl(&gold_path)?;
            let scorer = SimulatedScorer::Truthfulness {
                judge: ctx.judge().clone(),
                gold: gold.into_iter().map(|g| (g.question_id, g.label)).collect(),
            };
            bon::bon_run(&ctx.corpus, cfg.n, backend, &scorer, template, ctx.judge(), cfg.seed)?
        }
        ScorerConfig::Remote(spec) => {
            let scorer = bon::RemoteScorer::new(spec.clone().with_env_api_key())?;
            bon::bon_run(&ctx.corpus, cfg.n, backend, &scorer, template, ctx.judge(), cfg.seed)?
        }
    };

    crate::jsonl::write_jsonl(&ctx.path(files::RESPONSES), &run.response_rows())?;
    let mut outputs = vec![files::RESPONSES.to_string()];
    if !run.failures.is_empty() {
        crate::jsonl::write_jsonl(&ctx.path(files::BON_FAILURES), &run.failures)?;
        outputs.push(files::BON_FAILURES.to_string());
    }
    Ok(outputs)
}

fn stage_eval(ctx: &RunCtx) -> StageResult {
    let gold_path = ctx.input(&ctx.config.eval.gold, files::IDK_SFT);
    let responses_path = ctx.input(&ctx.config.eval.responses, files::RESPONSES);
    let gold: Vec<IdkExample> = crate::jsonl::read_jsonl(&gold_path)?;
    let responses: Vec<ResponseRow> = crate::jsonl::read_jsonl(&responses_path)?;
    let outcomes = evaluator::classify(&responses, &gold, &ctx.corpus, ctx.judge())?;
    crate::jsonl::write_jsonl(&ctx.path(files::QUADRANTS), &outcomes)?;
    let metrics = evaluator::metrics(&outcomes)?;
    evaluator::write_metrics_csv(
        &ctx.path(files::METRICS),
        &[ReportRow {
            label: "eval".to_string(),
            metrics,
        }],
    )?;
    Ok(vec![files::QUADRANTS.to_string(), files::METRICS.to_string()])
}

fn stage_report(ctx: &RunCtx) -> StageResult {
    let outcomes: Vec<evaluator::QuadrantOutcome> =
        crate::jsonl::read_jsonl(&ctx.path(files::QUADRANTS))?;
    let metrics = evaluator::metrics(&outcomes)?;
    let rows = vec![ReportRow {
        label: "eval".to_string(),
        metrics,
    }];
    let spec = ReportSpec {
        csv_path: ctx.path(files::REPORT),
        chart_path: ctx.config.report.chart.then(|| ctx.path(files::CHART)),
    };
    evaluator::report(&rows, &spec)?;
    let mut outputs = vec![files::REPORT.to_string()];
    if ctx.config.report.chart {
        outputs.push(files::CHART.to_string());
    }

    // Threshold sweep table whenever confidence records are available.
    if ctx.path(files::CONFIDENCE).exists() {
        let records: Vec<ConfidenceRecord> =
            crate::jsonl::read_jsonl(&ctx.path(files::CONFIDENCE))?;
        let distribution =
            evaluator::label_distribution(&records, &hir_builder::full_threshold_grid())?;
        evaluator::write_distribution_csv(&ctx.path(files::DISTRIBUTION), &distribution)?;
        outputs.push(files::DISTRIBUTION.to_string());
    }
    Ok(outputs)
}
