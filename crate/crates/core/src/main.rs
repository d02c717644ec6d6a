use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use prompt_pet::config::RunConfig;
use prompt_pet::corpus::{save_jsonl, save_meta, synth, Dataset, DatasetKind};
use prompt_pet::harness::{collect_report, emit_table, run_grid, ExperimentGrid, Report, TableStyle};
use prompt_pet::runner::{
    run_pet, stage_distill, stage_evaluate, stage_soft_label, stage_train, RunReport,
};

#[derive(Parser)]
#[command(
    name = "prompt-pet",
    version,
    about = "Semi-supervised prompt tuning: automatic prompts, automatic verbalizers, \
             ensemble soft labeling and KL distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the labeler models for every seed of a run configuration.
    TrainLabelers {
        #[arg(long)]
        config: PathBuf,
    },
    /// Soft-label the unlabeled pool with the trained labelers.
    SoftLabel {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Distill the final classifier from the stored soft labels.
    Distill {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Evaluate the final model of each seed on a test file.
    Evaluate {
        #[arg(long)]
        run_dir: PathBuf,
        /// JSONL test file; defaults to the test path in the config snapshot.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Run a configuration end to end (all stages, all seeds).
    RunPet {
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute an experiment grid (datasets x variants x k x seeds).
    Grid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Emit the aggregated result table for a grid directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value = "markdown")]
        style: String,
    },
    /// Generate a synthetic marker-token dataset for desk-scale runs.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2100)]
        pool: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 13)]
        seed: u64,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::TrainLabelers { config } => {
            let config = RunConfig::load(&config)?;
            std::fs::create_dir_all(&config.output_dir)?;
            config.snapshot(&config.output_dir)?;
            for &seed in &config.seeds {
                let flags = stage_train(&config, seed, &config.output_dir)
                    .with_context(|| format!("training seed {seed}"))?;
                println!("seed {seed}: training done{}", flag_suffix(&flags));
            }
        }
        Command::SoftLabel { run_dir } => {
            let config = RunConfig::load_snapshot(&run_dir)?;
            for &seed in &config.seeds {
                let soft = stage_soft_label(&config, seed, &run_dir)
                    .with_context(|| format!("soft labeling seed {seed}"))?;
                println!(
                    "seed {seed}: {} soft labels from {} labelers",
                    soft.entries.len(),
                    soft.ensemble_size
                );
            }
        }
        Command::Distill { run_dir } => {
            let config = RunConfig::load_snapshot(&run_dir)?;
            for &seed in &config.seeds {
                let flags = stage_distill(&config, seed, &run_dir)
                    .with_context(|| format!("distilling seed {seed}"))?;
                println!("seed {seed}: final classifier written{}", flag_suffix(&flags));
            }
        }
        Command::Evaluate { run_dir, test } => {
            let config = RunConfig::load_snapshot(&run_dir)?;
            let mut per_seed_acc = Vec::new();
            for &seed in &config.seeds {
                let record = stage_evaluate(&config, seed, &run_dir, test.as_deref())
                    .with_context(|| format!("evaluating seed {seed}"))?;
                println!(
                    "seed {seed}: accuracy {:.4} on {} examples",
                    record.accuracy, record.n_test
                );
                per_seed_acc.push(record.accuracy);
            }
            let mean_acc = per_seed_acc.iter().sum::<f64>() / per_seed_acc.len() as f64;
            println!("mean accuracy {mean_acc:.4}");
            let report = RunReport {
                variant: config.variant.as_str().to_string(),
                dataset: config.dataset.name.clone(),
                k: config.few_shot.k,
                seeds: config.seeds.clone(),
                per_seed_acc,
                mean_acc,
                flags: Vec::new(),
            };
            report.save(&run_dir)?;
        }
        Command::RunPet { config } => {
            let config = RunConfig::load(&config)?;
            let report = run_pet(&config)?;
            for (seed, acc) in report.seeds.iter().zip(&report.per_seed_acc) {
                println!("seed {seed}: accuracy {acc:.4}");
            }
            println!("mean accuracy {:.4}", report.mean_acc);
            if !report.flags.is_empty() {
                println!("flags: {}", report.flags.join(", "));
            }
            println!("run directory: {}", config.output_dir.display());
        }
        Command::Grid { config } => {
            let grid = ExperimentGrid::load(&config)?;
            let report = run_grid(&grid)?;
            let table = emit_table(&report, TableStyle::Markdown)?;
            std::fs::write(grid.output_dir.join("report.md"), &table)?;
            print!("{table}");
            if !report.failures.is_empty() {
                eprintln!("{} cell(s) failed:", report.failures.len());
                for f in &report.failures {
                    eprintln!(
                        "  {}/{} k={} seed={}: {}",
                        f.dataset, f.variant, f.k, f.seed, f.error
                    );
                }
            }
        }
        Command::Report { run_dir, style } => {
            let style = TableStyle::parse(&style)?;
            let grid_report = run_dir.join("grid_report.json");
            let report = if grid_report.exists() {
                Report::load(&grid_report)?
            } else {
                collect_report(&run_dir)?
            };
            let table = emit_table(&report, style)?;
            let path = run_dir.join(match style {
                TableStyle::Markdown => "report.md",
                TableStyle::Csv => "report.csv",
            });
            std::fs::write(&path, &table)?;
            print!("{table}");
            eprintln!("written to {}", path.display());
        }
        Command::SynthData { out, pool, test, seed } => {
            std::fs::create_dir_all(&out)?;
            let train = synth::marker_dataset("markers", pool, seed);
            let test_set = Dataset {
                kind: DatasetKind::Test,
                ..synth::marker_dataset("markers", test, seed.wrapping_add(1))
            };
            save_jsonl(&train, &out.join("train.jsonl"))?;
            save_jsonl(&test_set, &out.join("test.jsonl"))?;
            save_meta(&synth::marker_meta("markers"), &out.join("meta.json"))?;
            println!(
                "wrote {} train and {} test examples under {}",
                pool,
                test,
                out.display()
            );
        }
    }
    Ok(())
}

fn flag_suffix(flags: &[String]) -> String {
    if flags.is_empty() {
        String::new()
    } else {
        format!(" (flags: {})", flags.join(", "))
    }
}
