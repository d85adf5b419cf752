use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use finsent_core::corpus::{self, CorpusSet, DomainId, ExampleRecord, Format, IngestOptions, SplitSpec};
use finsent_core::harness::{self, ClassifierKind, ReportFormat, SweepConfig};
use finsent_core::inference::{Classifier, EndpointClassifier, EndpointConfig, MockClassifier};
use finsent_core::sampler::{self, TrainingManifest};
use finsent_core::scheduler::{EarlyStopConfig, PhasePlan};
use finsent_core::synthetic::SyntheticSpec;
use finsent_core::trainer::{self, TrainOptions};
use finsent_core::{Error, Result};

#[derive(Parser)]
#[command(name = "finsent", version, about = "Multi-domain financial sentiment training and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a CSV or JSONL dataset into corpus records.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long)]
        domain: String,
        #[arg(long, default_value = "en")]
        language: String,
        #[arg(long, default_value = "text")]
        text_field: String,
        #[arg(long, default_value = "label")]
        label_field: String,
        #[arg(long)]
        id_field: Option<String>,
        /// Raw-to-unified label mapping, e.g. `0=negative,1=neutral,2=positive`.
        #[arg(long)]
        label_map: Option<String>,
        #[arg(long)]
        output: PathBuf,
        /// Where to write rejected rows (JSONL).
        #[arg(long)]
        rejected: Option<PathBuf>,
    },
    /// Assign train/test splits (stratified) and apply a training proportion.
    Split {
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = corpus::DEFAULT_TEST_FRACTION)]
        test_fraction: f64,
        #[arg(long, default_value_t = 100)]
        proportion: u8,
        /// Re-split domains that already carry split assignments.
        #[arg(long)]
        resplit: bool,
    },
    /// Write a three-phase training plan as JSON.
    Plan {
        #[arg(long)]
        total_steps: usize,
        #[arg(long)]
        warmup_steps: Option<usize>,
        #[arg(long, default_value_t = 2e-4)]
        lr_max: f64,
        #[arg(long, default_value_t = 0.0)]
        lr_min: f64,
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.5")]
        layer_scales: Vec<f64>,
        #[arg(long, default_value_t = 3)]
        patience: usize,
        #[arg(long, default_value_t = 1e-3)]
        min_delta: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Materialize a plan into a step-level training manifest.
    EmitManifest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = sampler::DEFAULT_BATCH_SIZE)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit a sequential manifest over these domains instead.
        #[arg(long, value_delimiter = ',')]
        sequential: Option<Vec<String>>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the reference model by replaying a manifest.
    TrainRef {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 50)]
        eval_every: usize,
        #[arg(long, default_value_t = trainer::DEFAULT_FEATURE_DIM)]
        feature_dim: usize,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Evaluate a classifier on one or more datasets at a single shot count.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        classifier: ClassifierArg,
        /// TOML file with endpoint settings (base_url, model_name, ...).
        #[arg(long)]
        endpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        shots: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<String>,
        /// Draw few-shot exemplars from the test split.
        #[arg(long)]
        paper_faithful: bool,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Zero/few-shot sweep from a TOML config.
    SweepShots {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        paper_faithful: bool,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Training-proportion sweep with the reference model.
    SweepProportions {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Render sweep rows (rows.json) as markdown, CSV or plot data.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: ReportArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic corpus (with splits) from a TOML spec.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    Mock,
    Endpoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Markdown,
    Csv,
    PlotData,
}

fn parse_label_map(spec: &str) -> Result<BTreeMap<String, corpus::SentimentLabel>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (raw, label) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("label map entry `{pair}` is not raw=label")))?;
            Ok((raw.trim().to_string(), label.parse()?))
        })
        .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn endpoint_classifier(path: Option<&Path>) -> Result<EndpointClassifier> {
    let config: EndpointConfig = match path {
        Some(p) => toml::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => EndpointConfig::default(),
    };
    EndpointClassifier::http(config)
}

/// Returns whether every run was valid.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ingest {
            input,
            format,
            domain,
            language,
            text_field,
            label_field,
            id_field,
            label_map,
            output,
            rejected,
        } => {
            let opts = IngestOptions {
                format: match format {
                    FormatArg::Csv => Format::Csv,
                    FormatArg::Jsonl => Format::Jsonl,
                },
                text_field,
                label_field,
                id_field,
                language: language.parse()?,
                label_map: label_map.as_deref().map(parse_label_map).transpose()?.unwrap_or_default(),
            };
            let got = corpus::ingest(&input, &DomainId::new(domain), &opts)?;
            let records: Vec<_> = got.corpus.examples().iter().map(|e| ExampleRecord::new(e, None)).collect();
            corpus::write_records(&output, &records)?;
            if let Some(path) = rejected {
                let lines: Vec<String> = got.rejected.iter().map(serde_json::to_string).collect::<Result<_, _>>()?;
                fs::write(path, lines.iter().map(|l| format!("{l}\n")).collect::<String>())?;
            }
            eprintln!(
                "ingested {} examples {:?}, {} rows rejected",
                got.corpus.len(),
                got.corpus.class_counts(),
                got.rejected.len()
            );
        }
        Command::Split {
            input,
            output,
            seed,
            test_fraction,
            proportion,
            resplit,
        } => {
            let spec = SplitSpec {
                seed,
                test_fraction,
                train_proportion: proportion,
            };
            spec.validate()?;
            let mut records = Vec::new();
            for path in &input {
                records.extend(corpus::read_records(path)?);
            }
            let (presplit, unsplit): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.split.is_some() && !resplit);
            let mut set = if presplit.is_empty() {
                CorpusSet::new()
            } else {
                CorpusSet::from_records(presplit)?
            };
            let corpora = corpus::corpora_from_records(unsplit)?;
            for (_, s) in CorpusSet::from_corpora(corpora.values(), &spec)?.domains() {
                set.insert(s.clone());
            }
            set.write_jsonl(&output)?;
            for (d, s) in set.domains() {
                eprintln!("{d}: train {} / test {}", s.train.len(), s.test.len());
            }
        }
        Command::Plan {
            total_steps,
            warmup_steps,
            lr_max,
            lr_min,
            layer_scales,
            patience,
            min_delta,
            output,
        } => {
            let mut plan = PhasePlan::new(total_steps).with_lr(lr_max, lr_min);
            if let Some(w) = warmup_steps {
                plan = plan.with_warmup(w);
            }
            plan.layer_scales = layer_scales;
            plan.early_stopping = EarlyStopConfig { patience, min_delta };
            plan.validate()?;
            write_json(&output, &plan)?;
        }
        Command::EmitManifest {
            corpus,
            plan,
            batch_size,
            seed,
            sequential,
            output,
        } => {
            let set = CorpusSet::read_jsonl(&corpus)?;
            let plan: PhasePlan = serde_json::from_str(&fs::read_to_string(plan)?)?;
            let manifest = match sequential {
                Some(order) => {
                    let order: Vec<DomainId> = order.into_iter().map(DomainId::new).collect();
                    sampler::emit_sequential_manifest(&set, &plan, &order, batch_size, seed)?
                }
                None => sampler::emit_manifest(&set, &plan, batch_size, seed)?,
            };
            manifest.write(&output)?;
        }
        Command::TrainRef {
            corpus,
            manifest,
            eval_every,
            feature_dim,
            checkpoint,
            trajectory,
        } => {
            let set = CorpusSet::read_jsonl(&corpus)?;
            let manifest = TrainingManifest::read(&manifest)?;
            let run = trainer::train_from_manifest(&set, &manifest, &TrainOptions { eval_every, feature_dim })?;
            run.model.save(&checkpoint)?;
            if let Some(path) = trajectory {
                run.write_trajectory_csv(&path)?;
            }
            for (d, f1) in run.final_scores() {
                eprintln!("{d}: macro F1 {f1:.4}");
            }
            for (d, step) in &run.frozen_at {
                eprintln!("{d}: frozen at step {step}");
            }
        }
        Command::Eval {
            corpus,
            classifier,
            endpoint,
            shots,
            repeats,
            seed,
            datasets,
            paper_faithful,
            output_dir,
        } => {
            let set = CorpusSet::read_jsonl(&corpus)?;
            let config = SweepConfig {
                datasets,
                shots: vec![shots],
                few_shot_repeats: repeats,
                proportions: Vec::new(),
                master_seed: seed,
                ..Default::default()
            }
            .with_paper_faithful(paper_faithful);
            let outcome = match classifier {
                ClassifierArg::Mock => harness::run_shot_sweep(&config, &set, &MockClassifier)?,
                ClassifierArg::Endpoint => {
                    harness::run_shot_sweep(&config, &set, &endpoint_classifier(endpoint.as_deref())?)?
                }
            };
            harness::write_outputs(&output_dir, &outcome)?;
            print!("{}", harness::render_report(&outcome.rows, ReportFormat::Markdown)?);
            return Ok(!outcome.any_invalid());
        }
        Command::SweepShots {
            config,
            corpus,
            paper_faithful,
            output_dir,
        } => {
            let mut cfg = SweepConfig::load(&config)?.with_paper_faithful(paper_faithful);
            if corpus.is_some() {
                cfg.corpus = corpus;
            }
            let set = cfg.load_corpus()?;
            let classifier: Box<dyn Classifier> = match &cfg.classifier {
                ClassifierKind::Mock => Box::new(MockClassifier),
                ClassifierKind::Endpoint(e) => Box::new(EndpointClassifier::http(e.clone())?),
                ClassifierKind::Reference => {
                    return Err(Error::Config("shot sweeps need a mock or endpoint classifier".into()))
                }
            };
            let outcome = harness::run_shot_sweep(&cfg, &set, classifier.as_ref())?;
            harness::write_outputs(&output_dir, &outcome)?;
            print!("{}", harness::render_report(&outcome.rows, ReportFormat::Markdown)?);
            return Ok(!outcome.any_invalid());
        }
        Command::SweepProportions {
            config,
            corpus,
            output_dir,
        } => {
            let mut cfg = SweepConfig::load(&config)?;
            if corpus.is_some() {
                cfg.corpus = corpus;
            }
            let set = cfg.load_corpus()?;
            let outcome = harness::run_proportion_sweep(&cfg, &set)?;
            harness::write_outputs(&output_dir, &outcome)?;
            print!("{}", harness::render_report(&outcome.rows, ReportFormat::Markdown)?);
            return Ok(!outcome.any_invalid());
        }
        Command::Report { input, format, output } => {
            let rows = harness::read_rows(&input)?;
            let format = match format {
                ReportArg::Markdown => ReportFormat::Markdown,
                ReportArg::Csv => ReportFormat::Csv,
                ReportArg::PlotData => ReportFormat::PlotData,
            };
            let text = harness::render_report(&rows, format)?;
            match output {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
            return Ok(!rows.iter().any(|r| r.invalid));
        }
        Command::Synth { spec, seed, output } => {
            let spec: SyntheticSpec = match spec {
                Some(p) => toml::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
                None => SyntheticSpec::default(),
            };
            spec.build(seed)?.write_jsonl(&output)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more runs were marked invalid");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

