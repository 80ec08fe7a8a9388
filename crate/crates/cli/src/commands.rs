use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde_json::json;

use guardmatch::augment::{
    generate_corpus_augmentations, AugmentationCache, Augmenter, BacktranslationAugmenter, ChatEndpoint, LlmAugmenter,
    MockAugmenter, PromptTemplate, TranslateEndpoint, DEFAULT_PIVOTS,
};
use guardmatch::data::{
    filter_examples, ingest_many, read_corpus, stratified_split, write_corpus, FilterConfig, SplitFractions, TrainPool,
};
use guardmatch::harness::{
    evaluate, render, render_history_csv, run_experiment, synth_lexicon, to_fixed_json, ExperimentSpec, MetricsReport,
    ReportFormat,
};
use guardmatch::ssl::{read_history, train, Algorithm, AugmentationSource, TrainConfig, TrainOptions};
use guardmatch::{ModelParams, Task};

use crate::Command;

pub const POOL_FILE: &str = "pool.jsonl";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

pub enum Status {
    Complete,
    /// Number of experiment cells that failed.
    Partial(usize),
}

pub fn run(command: Command) -> Result<Status> {
    match command {
        Command::Ingest {
            inputs,
            task,
            output,
            report,
            allow_unlabeled,
        } => ingest(&inputs, &task, &output, report.as_deref(), allow_unlabeled)?,
        Command::Split {
            corpus,
            task,
            val_frac,
            test_frac,
            seed,
            out_dir,
        } => split(
            &corpus,
            &task,
            SplitFractions {
                validation: val_frac,
                test: test_frac,
            },
            seed,
            &out_dir,
        )?,
        Command::Augment {
            corpus,
            task,
            cache,
            kind,
            generators,
            max_in_flight,
        } => augment(&corpus, &task, &cache, &kind, &generators, max_in_flight)?,
        Command::Train {
            data,
            task,
            algorithm,
            n_labeled,
            augmentation,
            seed,
            config,
            cache,
            run_dir,
            run_id,
        } => {
            let mut cfg = match &config {
                Some(path) => TrainConfig::from_toml(&read_text(path)?).with_context(|| path.display().to_string())?,
                None => TrainConfig::default(),
            };
            if let Some(a) = algorithm {
                cfg.algorithm = a.parse::<Algorithm>()?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let augmentation: AugmentationSource = augmentation.parse()?;
            let run_id = run_id.unwrap_or_else(|| {
                format!(
                    "{}-n{n_labeled}-{}-s{}",
                    cfg.algorithm.as_str().to_lowercase(),
                    augmentation.as_str(),
                    cfg.seed
                )
            });
            let options = TrainOptions {
                augmentation,
                run_dir: Some(run_dir),
                run_id,
                mock_lexicon: synth_lexicon(),
            };
            train_cell(&data, &task, n_labeled, &cfg, cache.as_deref(), &options)?
        }
        Command::Evaluate { checkpoint, data, task } => {
            let params = ModelParams::load(&checkpoint)?;
            let examples = read_corpus(&data, task.parse::<Task>()?)?;
            println!("{}", to_fixed_json(&evaluate(&params, &examples)?).trim_end());
        }
        Command::Experiment { spec, out_dir } => return experiment(&spec, &out_dir),
        Command::Report { input, format, output } => report(&input, format.parse()?, output.as_deref())?,
    }
    Ok(Status::Complete)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ingest(inputs: &[PathBuf], task: &str, output: &Path, report: Option<&Path>, allow_unlabeled: bool) -> Result<()> {
    let outcome = ingest_many(inputs, task.parse()?)?;
    let filter = FilterConfig {
        require_labels: !allow_unlabeled,
        ..FilterConfig::default()
    };
    let (clean, filtered) = filter_examples(&outcome.examples, &filter);
    write_corpus(output, &clean)?;
    eprintln!(
        "kept {} of {} examples ({} malformed lines, {} duplicate ids)",
        clean.len(),
        outcome.examples.len() + outcome.skipped.len(),
        outcome.skipped.len(),
        outcome.duplicate_ids
    );
    if let Some(path) = report {
        let summary = json!({
            "filter": filtered,
            "skipped_lines": outcome.skipped.len(),
            "duplicate_ids": outcome.duplicate_ids,
        });
        write_text(path, &to_fixed_json(&summary))?;
    }
    Ok(())
}

fn split(corpus: &Path, task: &str, fractions: SplitFractions, seed: u64, out_dir: &Path) -> Result<()> {
    let examples = read_corpus(corpus, task.parse()?)?;
    let pool = stratified_split(&examples, fractions, seed)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_corpus(&out_dir.join(POOL_FILE), &pool.train)?;
    write_corpus(&out_dir.join(VALIDATION_FILE), &pool.validation)?;
    write_corpus(&out_dir.join(TEST_FILE), &pool.test)?;
    eprintln!(
        "pool {}, validation {}, test {}",
        pool.train.len(),
        pool.validation.len(),
        pool.test.len()
    );
    Ok(())
}

fn augmenters(kind: &str, generators: &[String]) -> Result<Vec<Box<dyn Augmenter>>> {
    let plan: Vec<Box<dyn Augmenter>> = match kind.to_ascii_lowercase().as_str() {
        "llm" => {
            let slots: Vec<Option<&str>> = if generators.is_empty() {
                vec![None]
            } else {
                generators.iter().map(|g| Some(g.as_str())).collect()
            };
            let mut plan: Vec<Box<dyn Augmenter>> = Vec::new();
            for slot in slots {
                plan.push(Box::new(LlmAugmenter {
                    endpoint: ChatEndpoint::from_env(slot)?,
                    template: PromptTemplate::default(),
                }));
            }
            plan
        }
        "backtranslation" | "bt" => {
            let endpoint = TranslateEndpoint::from_env()?;
            let pivots: Vec<String> = if generators.is_empty() {
                DEFAULT_PIVOTS.iter().map(|p| p.to_string()).collect()
            } else {
                generators.to_vec()
            };
            pivots
                .into_iter()
                .map(|pivot| {
                    Box::new(BacktranslationAugmenter {
                        endpoint: endpoint.clone(),
                        pivot,
                    }) as Box<dyn Augmenter>
                })
                .collect()
        }
        "mock" => {
            let names: Vec<String> = if generators.is_empty() {
                vec!["mock-a".into(), "mock-b".into()]
            } else {
                generators.to_vec()
            };
            names
                .into_iter()
                .enumerate()
                .map(|(i, name)| Box::new(MockAugmenter::new(name, i as u64, synth_lexicon())) as Box<dyn Augmenter>)
                .collect()
        }
        other => bail!("unknown augmentation kind {other:?}"),
    };
    Ok(plan)
}

fn augment(
    corpus: &Path,
    task: &str,
    cache_path: &Path,
    kind: &str,
    generators: &[String],
    max_in_flight: usize,
) -> Result<()> {
    if max_in_flight == 0 {
        bail!("--max-in-flight must be positive");
    }
    let plan = augmenters(kind, generators)?;
    let examples = read_corpus(corpus, task.parse()?)?;
    let mut cache = AugmentationCache::open(cache_path)?;
    let report = generate_corpus_augmentations(&examples, &plan, &mut cache, max_in_flight)?;
    for failure in &report.failures {
        info!("{} via {}: {}", failure.example_id, failure.generator, failure.reason);
    }
    eprintln!(
        "generated {}, cached {}, failed {}, degenerate {}",
        report.generated, report.cached, report.failed, report.degenerate
    );
    Ok(())
}

fn load_pool(dir: &Path, task: Task) -> Result<TrainPool> {
    Ok(TrainPool {
        train: read_corpus(&dir.join(POOL_FILE), task)?,
        validation: read_corpus(&dir.join(VALIDATION_FILE), task)?,
        test: read_corpus(&dir.join(TEST_FILE), task)?,
    })
}

fn train_cell(
    data: &Path,
    task: &str,
    n_labeled: usize,
    config: &TrainConfig,
    cache_path: Option<&Path>,
    options: &TrainOptions,
) -> Result<()> {
    let pool = load_pool(data, task.parse()?)?;
    let splits = pool.into_splits(n_labeled, config.seed)?;
    let cache = match cache_path {
        Some(path) => AugmentationCache::open(path)?,
        None => AugmentationCache::in_memory(),
    };
    let outcome = train(config, &splits, &cache, options)?;
    let metrics = evaluate(&outcome.params, &splits.test)?;
    let summary = json!({
        "run_dir": options.output_dir().map(|p| p.display().to_string()),
        "best_epoch": outcome.best_epoch,
        "best_val_f1": outcome.best_val_f1,
        "test": metrics,
    });
    println!("{}", to_fixed_json(&summary).trim_end());
    Ok(())
}

fn experiment(spec_path: &Path, out_dir: &Path) -> Result<Status> {
    let mut spec = ExperimentSpec::load(spec_path)?;
    if spec.output_dir.is_none() {
        spec.output_dir = Some(out_dir.join("runs"));
    }
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let report = run_experiment(&spec)?;
    write_text(&out_dir.join("report.csv"), &render(&report, ReportFormat::Csv))?;
    write_text(&out_dir.join("report.json"), &render(&report, ReportFormat::Json))?;
    print!("{}", render(&report, ReportFormat::Csv));
    Ok(match report.failed_cells() {
        0 => Status::Complete,
        n => Status::Partial(n),
    })
}

/// Accepts either a metrics report (JSON) or a training history (JSONL).
fn report(input: &Path, format: ReportFormat, output: Option<&Path>) -> Result<()> {
    let text = read_text(input)?;
    let rendered = match serde_json::from_str::<MetricsReport>(&text) {
        Ok(metrics) => render(&metrics, format),
        Err(_) => {
            let history = read_history(input)?;
            if history.is_empty() {
                bail!(
                    "{} holds neither a metrics report nor a training history",
                    input.display()
                );
            }
            match format {
                ReportFormat::Csv => render_history_csv(&history),
                ReportFormat::Json => to_fixed_json(&history),
            }
        }
    };
    match output {
        Some(path) => write_text(path, &rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}
