//! `idk` — command-line entry point wiring corpus ingestion, sampling,
//! labeling, dataset construction, best-of-n, and evaluation.
//!
//! Exit codes: 0 success, 1 validation error, 2 stage/runtime failure.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use idk_core::bon::{RemoteScorer, RemoteScorerSpec, SimulatedScorer};
use idk_core::corpus::{self, CorpusFormat, PromptTemplate};
use idk_core::evaluator::{self, ReportRow, ReportSpec, ResponseRow};
use idk_core::hir_builder;
use idk_core::inference::{self, BackendSpec, EndpointSpec, ProbabilityRule, SamplingParams, SimulatedModelSpec};
use idk_core::jsonl;
use idk_core::labeler::{self, ConfidenceRecord, IdkExample};
use idk_core::loss_math::{evaluate_loss_check, LossCheckRequest};
use idk_core::pipeline::{self, PipelineError, RunConfig};
use idk_core::pref_builder;
use idk_core::{JudgeConfig, QaItem};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "idk", version, about = "Idk dataset construction and knowledge-quadrant evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CorpusArgs {
    /// QA corpus file.
    #[arg(long)]
    questions: PathBuf,
    /// Corpus schema: triviaqa-jsonl, nq-jsonl, or generic-jsonl.
    #[arg(long, default_value = "generic-jsonl")]
    format: CorpusFormat,
}

impl CorpusArgs {
    fn load(&self) -> Result<Vec<QaItem>> {
        corpus::load_corpus(&self.questions, self.format)
            .with_context(|| format!("loading corpus {}", self.questions.display()))
    }
}

#[derive(Args)]
struct BackendArgs {
    /// Chat-completions endpoint URL (remote backend).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the remote endpoint.
    #[arg(long, requires = "endpoint")]
    model: Option<String>,
    /// In-flight request cap for the remote backend.
    #[arg(long, default_value_t = 8)]
    concurrency: usize,
    /// Constant correctness probability for the simulated backend.
    #[arg(long, conflicts_with = "endpoint")]
    simulated_p: Option<f64>,
    /// Comma-separated correctness levels assigned by question-id hash.
    #[arg(long, conflicts_with_all = ["endpoint", "simulated_p"])]
    simulated_grid: Option<String>,
    /// Refusal probability for the simulated backend.
    #[arg(long, default_value_t = 0.0)]
    simulated_refusal: f64,
}

impl BackendArgs {
    fn resolve(&self) -> Result<BackendSpec> {
        if let Some(url) = &self.endpoint {
            let model = self
                .model
                .clone()
                .ok_or_else(|| anyhow!("--model is required with --endpoint"))?;
            let mut spec = EndpointSpec::new(url.clone(), model).with_env_api_key();
            spec.concurrency = self.concurrency;
            return Ok(BackendSpec::Remote(spec));
        }
        let correctness = if let Some(grid) = &self.simulated_grid {
            let levels = grid
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("--simulated-grid: {e}")))
                .collect::<Result<Vec<f64>>>()?;
            ProbabilityRule::Grid(levels)
        } else if let Some(p) = self.simulated_p {
            ProbabilityRule::Constant(p)
        } else {
            bail!("choose a backend: --endpoint URL --model NAME, or --simulated-p P / --simulated-grid LEVELS");
        };
        let spec = SimulatedModelSpec {
            correctness,
            refusal: ProbabilityRule::Constant(self.simulated_refusal),
        };
        spec.validate()?;
        Ok(BackendSpec::Simulated(spec))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample k responses per question and write samples.jsonl.
    Sample {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = 10)]
        num_samples: u32,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0.9)]
        top_p: f64,
        #[arg(long, default_value_t = 512)]
        max_new_tokens: u32,
        #[arg(long, default_value_t = 1.0)]
        repetition_penalty: f64,
        /// Stream seed (simulated backend).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Prompt template: plain, idk-prompt, or hir:<level>.
        #[arg(long, default_value = "plain")]
        template: PromptTemplate,
        /// Output samples file.
        #[arg(long, default_value = "samples.jsonl")]
        out: PathBuf,
        /// Complete an existing partial samples file.
        #[arg(long)]
        resume: bool,
    },
    /// Judge samples and write per-question confidence records.
    Label {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "samples.jsonl")]
        samples: PathBuf,
        /// Ik threshold used for the printed label distribution.
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        #[arg(long, default_value = "confidence.jsonl")]
        out: PathBuf,
    },
    /// Build the Idk SFT dataset from confidence records.
    BuildSft {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "confidence.jsonl")]
        confidence: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        /// Label every question IDK regardless of confidence.
        #[arg(long)]
        force_idk: bool,
        #[arg(long, default_value = "idk_sft.jsonl")]
        out: PathBuf,
    },
    /// Split the Idk dataset in half and build preference pairs.
    BuildPrefs {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "idk_sft.jsonl")]
        sft: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Responses of the warm-up SFT model on the pref half. Without it
        /// only the halves are written, ready for external sampling.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Build the combined HIR dataset over a threshold grid.
    BuildHir {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, default_value = "confidence.jsonl")]
        confidence: PathBuf,
        /// start:end:step range or comma-separated list on the 0.1..1.1 grid.
        #[arg(long, default_value = "0.1:1.1:0.1")]
        thresholds: String,
        #[arg(long, default_value = "hir.jsonl")]
        out: PathBuf,
    },
    /// Classify responses into knowledge quadrants and compute metrics.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Gold labels (an idk_sft.jsonl file).
        #[arg(long)]
        gold: PathBuf,
        /// Model responses ({"question_id", "response"} per line).
        #[arg(long)]
        responses: PathBuf,
        /// Row label in the metrics CSV.
        #[arg(long, default_value = "eval")]
        label: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Best-of-n selection against a reward source.
    Bon {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value_t = 10)]
        n: u32,
        /// Remote scoring endpoint ({"prompt","response"} -> {"score"}).
        #[arg(long)]
        reward_endpoint: Option<String>,
        /// Simulated scorer when no endpoint is given: correctness or
        /// truthfulness.
        #[arg(long, default_value = "correctness")]
        scorer: String,
        /// Gold labels for the truthfulness scorer.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "plain")]
        template: PromptTemplate,
        #[arg(long, default_value = "responses.jsonl")]
        out: PathBuf,
    },
    /// Evaluate training-objective values for external-trainer validation.
    LossCheck {
        /// JSONL file of loss-check requests.
        #[arg(long)]
        input: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write metrics CSV (and optional chart) from a quadrants file.
    Report {
        #[arg(long, default_value = "quadrants.jsonl")]
        quadrants: PathBuf,
        /// Also sweep the label distribution from a confidence file.
        #[arg(long)]
        confidence: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        label: String,
        #[arg(long)]
        chart: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run a multi-stage pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Re-run stages whose outputs already exist.
        #[arg(long)]
        force: bool,
        /// Override the sample-stage seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the label threshold from the config.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Treat argument problems as validation failures (exit 1);
            // --help/--version print and exit 0.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("validation error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Validation(anyhow::Error),
    Stage(anyhow::Error),
}

trait IntoFailure<T> {
    /// Classify an error as a validation failure (exit 1).
    fn or_invalid(self) -> Result<T, Failure>;
    /// Classify an error as a stage failure (exit 2).
    fn or_stage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> IntoFailure<T> for Result<T, E> {
    fn or_invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn or_stage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Stage(e.into()))
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Sample {
            corpus,
            backend,
            num_samples,
            temperature,
            top_p,
            max_new_tokens,
            repetition_penalty,
            seed,
            template,
            out,
            resume,
        } => {
            let items = corpus.load().or_invalid()?;
            let backend = backend.resolve().or_invalid()?;
            let params = SamplingParams {
                num_samples,
                temperature,
                top_p,
                max_new_tokens,
                repetition_penalty,
                seed,
            };
            params.validate().or_invalid()?;
            let judge = JudgeConfig::default();
            let run = if resume && out.exists() {
                inference::resume(&out, &items, &params, &backend, template, &judge).or_stage()?
            } else {
                inference::sample(&items, &params, &backend, template, &judge).or_stage()?
            };
            inference::write_samples(&out, &run.responses).or_stage()?;
            eprintln!(
                "wrote {} samples to {} ({} requested this run)",
                run.responses.len(),
                out.display(),
                run.newly_sampled
            );
            if !run.failures.is_empty() {
                let failures_path = sibling(&out, "sample_failures.jsonl");
                jsonl::write_jsonl(&failures_path, &run.failures).or_stage()?;
                eprintln!(
                    "{} questions failed; see {}",
                    run.failures.len(),
                    failures_path.display()
                );
            }
            Ok(())
        }
        Command::Label {
            corpus,
            samples,
            threshold,
            out,
        } => {
            labeler::validate_threshold(threshold).or_invalid()?;
            let items = corpus.load().or_invalid()?;
            let judge = JudgeConfig::default();
            let rows = inference::read_samples_strict(&samples).or_invalid()?;
            let records = labeler::compute_confidence_all(&rows, &items, &judge).or_stage()?;
            jsonl::write_jsonl(&out, &records).or_stage()?;
            let idk = records
                .iter()
                .filter(|r| r.confidence < threshold)
                .count();
            let n = records.len().max(1);
            eprintln!(
                "wrote {} confidence records to {}; at threshold {threshold}: {:.2}% IK / {:.2}% IDK",
                records.len(),
                out.display(),
                100.0 * (records.len() - idk) as f64 / n as f64,
                100.0 * idk as f64 / n as f64,
            );
            Ok(())
        }
        Command::BuildSft {
            corpus,
            confidence,
            threshold,
            force_idk,
            out,
        } => {
            labeler::validate_threshold(threshold).or_invalid()?;
            let items = corpus.load().or_invalid()?;
            let judge = JudgeConfig::default();
            let rows = if force_idk {
                labeler::force_idk_dataset(&items, threshold, &judge).or_stage()?
            } else {
                let records: Vec<ConfidenceRecord> =
                    jsonl::read_jsonl(&confidence).or_invalid()?;
                labeler::build_idk_dataset(&records, &items, threshold, &judge).or_stage()?
            };
            jsonl::write_jsonl(&out, &rows).or_stage()?;
            eprintln!("wrote {} SFT rows to {}", rows.len(), out.display());
            Ok(())
        }
        Command::BuildPrefs {
            corpus,
            sft,
            seed,
            samples,
            out_dir,
        } => {
            let items = corpus.load().or_invalid()?;
            let judge = JudgeConfig::default();
            let dataset: Vec<IdkExample> = jsonl::read_jsonl(&sft).or_invalid()?;
            if dataset.is_empty() {
                return Err(Failure::Validation(anyhow!("{} is empty", sft.display())));
            }
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))
                .or_stage()?;
            let (warmup, pref) = pref_builder::split_halves(dataset, seed);
            jsonl::write_jsonl(&out_dir.join("warmup_half.jsonl"), &warmup).or_stage()?;

            let pref_ids: BTreeSet<&str> = pref.iter().map(|e| e.question_id.as_str()).collect();
            let pref_items: Vec<QaItem> = items
                .iter()
                .filter(|i| pref_ids.contains(i.id.as_str()))
                .cloned()
                .collect();
            corpus::save_corpus(&out_dir.join("pref_half_questions.jsonl"), &pref_items)
                .or_stage()?;

            let Some(samples_path) = samples else {
                eprintln!(
                    "wrote warmup_half.jsonl and pref_half_questions.jsonl to {}; \
                     sample the warm-up SFT model on the pref half and re-run with --samples",
                    out_dir.display()
                );
                return Ok(());
            };
            let sft_samples = inference::read_samples_strict(&samples_path).or_invalid()?;
            let built =
                pref_builder::build_pairs(&pref, &sft_samples, &items, &judge).or_stage()?;
            let total = built.pairs.len();
            let (train, val) = pref_builder::split_validation(built.pairs, seed);
            jsonl::write_jsonl(&out_dir.join("prefs.jsonl"), &train).or_stage()?;
            jsonl::write_jsonl(&out_dir.join("prefs_val.jsonl"), &val).or_stage()?;
            jsonl::write_jsonl(&out_dir.join("prefs_skips.jsonl"), &built.skips).or_stage()?;
            eprintln!(
                "built {total} pairs ({} train / {} validation), {} skips",
                train.len(),
                val.len(),
                built.skips.len()
            );
            Ok(())
        }
        Command::BuildHir {
            corpus,
            confidence,
            thresholds,
            out,
        } => {
            let thresholds = hir_builder::parse_thresholds(&thresholds).or_invalid()?;
            let items = corpus.load().or_invalid()?;
            let records: Vec<ConfidenceRecord> = jsonl::read_jsonl(&confidence).or_invalid()?;
            let rows =
                hir_builder::build_hir_dataset(&records, &items, &thresholds, &JudgeConfig::default())
                    .or_stage()?;
            jsonl::write_jsonl(&out, &rows).or_stage()?;
            eprintln!(
                "wrote {} HIR rows ({} thresholds x {} questions) to {}",
                rows.len(),
                thresholds.len(),
                records.len(),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            corpus,
            gold,
            responses,
            label,
            out_dir,
        } => {
            let items = corpus.load().or_invalid()?;
            let judge = JudgeConfig::default();
            let gold: Vec<IdkExample> = jsonl::read_jsonl(&gold).or_invalid()?;
            let responses: Vec<ResponseRow> = jsonl::read_jsonl(&responses).or_invalid()?;
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))
                .or_stage()?;
            let outcomes = evaluator::classify(&responses, &gold, &items, &judge).or_stage()?;
            jsonl::write_jsonl(&out_dir.join("quadrants.jsonl"), &outcomes).or_stage()?;
            let metrics = evaluator::metrics(&outcomes).or_stage()?;
            evaluator::write_metrics_csv(
                &out_dir.join("metrics.csv"),
                &[ReportRow {
                    label,
                    metrics: metrics.clone(),
                }],
            )
            .or_stage()?;
            eprintln!(
                "n={} Ik-Ik {:.2} Ik-Idk {:.2} Idk-Ik {:.2} Idk-Idk {:.2} Truthful {:.2} RefusalF1 {:.4} AnswerF1 {:.4}",
                metrics.n,
                metrics.ik_ik_rate,
                metrics.ik_idk_rate,
                metrics.idk_ik_rate,
                metrics.idk_idk_rate,
                metrics.truthful_rate,
                metrics.refusal_f1,
                metrics.answer_f1
            );
            Ok(())
        }
        Command::Bon {
            corpus,
            backend,
            n,
            reward_endpoint,
            scorer,
            gold,
            seed,
            template,
            out,
        } => {
            let items = corpus.load().or_invalid()?;
            let judge = JudgeConfig::default();
            let backend = backend.resolve().or_invalid()?;
            let run = if let Some(url) = reward_endpoint {
                let remote =
                    RemoteScorer::new(RemoteScorerSpec::new(url).with_env_api_key()).or_invalid()?;
                idk_core::bon::bon_run(&items, n, &backend, &remote, template, &judge, seed)
                    .or_stage()?
            } else {
                let simulated = match scorer.as_str() {
                    "correctness" => SimulatedScorer::Correctness {
                        judge: judge.clone(),
                    },
                    "truthfulness" => {
                        let gold_path = gold.ok_or_else(|| {
                            Failure::Validation(anyhow!("--gold is required for the truthfulness scorer"))
                        })?;
                        let rows: Vec<IdkExample> = jsonl::read_jsonl(&gold_path).or_invalid()?;
                        SimulatedScorer::Truthfulness {
                            judge: judge.clone(),
                            gold: rows.into_iter().map(|g| (g.question_id, g.label)).collect(),
                        }
                    }
                    other => {
                        return Err(Failure::Validation(anyhow!(
                            "unknown scorer `{other}` (expected correctness or truthfulness)"
                        )))
                    }
                };
                idk_core::bon::bon_run(&items, n, &backend, &simulated, template, &judge, seed)
                    .or_stage()?
            };
            jsonl::write_jsonl(&out, &run.response_rows()).or_stage()?;
            eprintln!(
                "wrote {} best-of-{n} responses to {}",
                run.selections.len(),
                out.display()
            );
            if !run.failures.is_empty() {
                let failures_path = sibling(&out, "bon_failures.jsonl");
                jsonl::write_jsonl(&failures_path, &run.failures).or_stage()?;
                eprintln!(
                    "{} questions failed; see {}",
                    run.failures.len(),
                    failures_path.display()
                );
            }
            Ok(())
        }
        Command::LossCheck { input, out } => {
            let requests: Vec<LossCheckRequest> = jsonl::read_jsonl(&input).or_invalid()?;
            let mut lines = Vec::with_capacity(requests.len());
            for (i, request) in requests.iter().enumerate() {
                let loss = evaluate_loss_check(request)
                    .with_context(|| format!("request {} in {}", i + 1, input.display()))
                    .or_invalid()?;
                let mut row = serde_json::to_value(request).expect("request serializes");
                row.as_object_mut()
                    .expect("request is an object")
                    .insert("loss".to_string(), serde_json::json!(loss));
                lines.push(row);
            }
            match out {
                Some(path) => {
                    jsonl::write_jsonl(&path, &lines).or_stage()?;
                    eprintln!("wrote {} evaluations to {}", lines.len(), path.display());
                }
                None => {
                    for line in &lines {
                        println!("{line}");
                    }
                }
            }
            Ok(())
        }
        Command::Report {
            quadrants,
            confidence,
            label,
            chart,
            out_dir,
        } => {
            let outcomes: Vec<evaluator::QuadrantOutcome> =
                jsonl::read_jsonl(&quadrants).or_invalid()?;
            let metrics = evaluator::metrics(&outcomes).or_invalid()?;
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))
                .or_stage()?;
            let spec = ReportSpec {
                csv_path: out_dir.join("report.csv"),
                chart_path: chart.then(|| out_dir.join("chart.svg")),
            };
            evaluator::report(&[ReportRow { label, metrics }], &spec).or_stage()?;
            if let Some(confidence_path) = confidence {
                let records: Vec<ConfidenceRecord> =
                    jsonl::read_jsonl(&confidence_path).or_invalid()?;
                let rows = evaluator::label_distribution(
                    &records,
                    &hir_builder::full_threshold_grid(),
                )
                .or_stage()?;
                evaluator::write_distribution_csv(&out_dir.join("label_distribution.csv"), &rows)
                    .or_stage()?;
            }
            eprintln!("wrote report to {}", out_dir.display());
            Ok(())
        }
        Command::Run {
            config,
            out_dir,
            force,
            seed,
            threshold,
        } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))
                .or_invalid()?;
            let mut parsed = RunConfig::from_json(&text).or_invalid()?;
            // CLI flags override config keys.
            if let Some(seed) = seed {
                if let Some(sample) = parsed.sample.as_mut() {
                    sample.params.seed = seed;
                }
            }
            if let Some(threshold) = threshold {
                parsed.label.threshold = threshold;
            }
            match pipeline::run_pipeline(&parsed, &out_dir, force) {
                Ok(manifest) => {
                    for stage in &manifest.stages {
                        eprintln!(
                            "stage {:<12} {:?} -> {}",
                            stage.name,
                            stage.status,
                            stage.outputs.join(", ")
                        );
                    }
                    Ok(())
                }
                Err(e @ PipelineError::Validation(_)) => Err(Failure::Validation(e.into())),
                Err(e) => Err(Failure::Stage(e.into())),
            }
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent()
        .map(|p| p.join(name))
        .unwrap_or_else(|| PathBuf::from(name))
}
