//! Experiment grid execution, seed aggregation, and report emission.
//!
//! A grid crosses datasets x variants x few-shot sizes x seeds. Every cell
//! runs in isolation: one failing cell is recorded and the rest of the grid
//! continues. Accuracies are stored as fractions in [0, 1]; tables render
//! them as percentages with one decimal.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::config::{DatasetConfig, PromptConfig, RunConfig, Variant, VerbalizerConfig};
use crate::corpus::{FewShotMode, FewShotSpec, Task};
use crate::error::{Error, Result};
use crate::pipeline::Hyperparameters;
use crate::runner::run_pet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDatasetConfig {
    #[serde(flatten)]
    pub dataset: DatasetConfig,
    /// Overrides the grid-level few-shot sizes (CB/RTE use a single total).
    #[serde(default)]
    pub ks: Option<Vec<usize>>,
    #[serde(default = "default_mode")]
    pub few_shot_mode: FewShotMode,
}

fn default_mode() -> FewShotMode {
    FewShotMode::PerClass
}

/// The full experiment grid, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub few_shot_ks: Vec<usize>,
    pub datasets: Vec<GridDatasetConfig>,
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub prompts: PromptConfig,
    #[serde(default)]
    pub verbalizer: VerbalizerConfig,
    #[serde(default)]
    pub few_shot_seed: u64,
    /// Worker pool size; cells are independent jobs.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_jobs() -> usize {
    1
}

impl ExperimentGrid {
    pub fn load(path: &Path) -> Result<ExperimentGrid> {
        let text = std::fs::read_to_string(path)?;
        let grid: ExperimentGrid =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config(
                "grid needs datasets, variants and seeds".into(),
            ));
        }
        if self.few_shot_ks.is_empty() && self.datasets.iter().any(|d| d.ks.is_none()) {
            return Err(Error::Config(
                "set few_shot_ks or a ks override on every dataset".into(),
            ));
        }
        let unique: std::collections::BTreeSet<u64> = self.seeds.iter().cloned().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        Ok(())
    }

    /// The run configuration of one cell.
    fn cell_config(&self, ds: &GridDatasetConfig, variant: Variant, k: usize, seed: u64) -> RunConfig {
        RunConfig {
            variant,
            output_dir: self
                .output_dir
                .join(&ds.dataset.name)
                .join(variant.as_str())
                .join(format!("k{k}"))
                .join(format!("seed{seed}")),
            seeds: vec![seed],
            dataset: ds.dataset.clone(),
            few_shot: FewShotSpec {
                mode: ds.few_shot_mode,
                k,
                seed: self.few_shot_seed,
            },
            backbone: self.backbone.clone(),
            hyperparameters: self.hyperparameters.clone(),
            prompts: self.prompts.clone(),
            verbalizer: self.verbalizer.clone(),
        }
    }

    fn cells(&self) -> Vec<(usize, Variant, usize, u64)> {
        let mut cells = Vec::new();
        for (di, ds) in self.datasets.iter().enumerate() {
            let ks = ds.ks.clone().unwrap_or_else(|| self.few_shot_ks.clone());
            for &variant in &self.variants {
                for &k in &ks {
                    for &seed in &self.seeds {
                        cells.push((di, variant, k, seed));
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub task: Task,
    pub k: usize,
    pub variant: String,
    pub per_seed_acc: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub dataset: String,
    pub variant: String,
    pub k: usize,
    pub seed: u64,
    pub error: String,
}

/// Aggregated grid results. Row order is (dataset, k, variant).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub failures: Vec<CellFailure>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl Report {
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.dataset
                .cmp(&b.dataset)
                .then(a.k.cmp(&b.k))
                .then(a.variant.cmp(&b.variant))
        });
    }

    pub fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for row in &self.rows {
            if !out.contains(&row.variant) {
                out.push(row.variant.clone());
            }
        }
        out.sort();
        out
    }

    fn datasets(&self) -> Vec<(String, Task)> {
        let mut out: Vec<(String, Task)> = Vec::new();
        for row in &self.rows {
            if !out.iter().any(|(d, _)| *d == row.dataset) {
                out.push((row.dataset.clone(), row.task));
            }
        }
        out
    }

    /// Mean over a dataset's few-shot settings for one variant (the MNLI
    /// rule: average over k before averaging across datasets).
    pub fn dataset_mean(&self, dataset: &str, variant: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.dataset == dataset && r.variant == variant)
            .map(|r| r.mean)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(mean(&vals))
        }
    }

    /// Mean over the task's datasets (each dataset first averaged over k).
    pub fn task_mean(&self, task: Task, variant: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .datasets()
            .into_iter()
            .filter(|(_, t)| *t == task)
            .filter_map(|(d, _)| self.dataset_mean(&d, variant))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(mean(&vals))
        }
    }

    /// Equal-weight mean over all datasets.
    pub fn overall_mean(&self, variant: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .datasets()
            .into_iter()
            .filter_map(|(d, _)| self.dataset_mean(&d, variant))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(mean(&vals))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Report> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Execute every cell of the grid. Failures are isolated per cell; the
/// report records them and the remaining cells still run.
pub fn run_grid(grid: &ExperimentGrid) -> Result<Report> {
    grid.validate()?;
    std::fs::create_dir_all(&grid.output_dir)?;
    let cells = grid.cells();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, std::result::Result<f64, String>)>> =
        Mutex::new(Vec::with_capacity(cells.len()));

    std::thread::scope(|scope| {
        for _ in 0..grid.jobs.min(cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let (di, variant, k, seed) = cells[i];
                let config = grid.cell_config(&grid.datasets[di], variant, k, seed);
                let outcome = run_pet(&config)
                    .map(|r| r.per_seed_acc[0])
                    .map_err(|e| e.to_string());
                results.lock().unwrap().push((i, outcome));
            });
        }
    });

    let mut by_cell: Vec<Option<std::result::Result<f64, String>>> = vec![None; cells.len()];
    for (i, outcome) in results.into_inner().unwrap() {
        by_cell[i] = Some(outcome);
    }

    let mut report = Report::default();
    for (di, ds) in grid.datasets.iter().enumerate() {
        let ks = ds.ks.clone().unwrap_or_else(|| grid.few_shot_ks.clone());
        for &variant in &grid.variants {
            for &k in &ks {
                let mut accs = Vec::new();
                for &seed in &grid.seeds {
                    let idx = cells
                        .iter()
                        .position(|c| *c == (di, variant, k, seed))
                        .expect("cell enumerated");
                    match by_cell[idx].take().expect("cell executed") {
                        Ok(acc) => accs.push(acc),
                        Err(error) => report.failures.push(CellFailure {
                            dataset: ds.dataset.name.clone(),
                            variant: variant.as_str().to_string(),
                            k,
                            seed,
                            error,
                        }),
                    }
                }
                if !accs.is_empty() {
                    report.rows.push(ReportRow {
                        dataset: ds.dataset.name.clone(),
                        task: ds.dataset.task,
                        k,
                        variant: variant.as_str().to_string(),
                        per_seed_acc: accs.clone(),
                        mean: mean(&accs),
                        std: sample_std(&accs),
                    });
                }
            }
        }
    }
    report.sort();
    report.save(&grid.output_dir.join("grid_report.json"))?;
    Ok(report)
}

/// Re-assemble a grid report from the per-run `report.json` files under a
/// grid output directory (`<dataset>/<variant>/k<k>/seed<seed>/report.json`);
/// the task of each dataset comes from the run's config snapshot. The
/// recomputed aggregates must match the emitted ones exactly up to float
/// noise, which the tests pin at 1e-9.
pub fn collect_report(grid_dir: &Path) -> Result<Report> {
    let mut report = Report::default();
    let mut groups: std::collections::BTreeMap<(String, usize, String), Vec<(u64, f64)>> =
        std::collections::BTreeMap::new();
    let mut tasks: std::collections::BTreeMap<String, Task> = std::collections::BTreeMap::new();
    for ds_dir in sorted_dirs(grid_dir)? {
        let name = ds_dir.file_name().unwrap().to_string_lossy().to_string();
        for variant_entry in sorted_dirs(&ds_dir)? {
            let variant = variant_entry
                .file_name()
                .unwrap()
                .to_string_lossy()
                .to_string();
            for k_entry in sorted_dirs(&variant_entry)? {
                let k_name = k_entry.file_name().unwrap().to_string_lossy().to_string();
                let Some(k) = k_name.strip_prefix('k').and_then(|s| s.parse::<usize>().ok())
                else {
                    continue;
                };
                for seed_entry in sorted_dirs(&k_entry)? {
                    if !seed_entry.join("report.json").exists() {
                        continue;
                    }
                    let run = crate::runner::RunReport::load(&seed_entry)?;
                    let config = crate::config::RunConfig::load_snapshot(&seed_entry)?;
                    tasks.insert(name.clone(), config.dataset.task);
                    let entry = groups.entry((name.clone(), k, variant.clone())).or_default();
                    for (seed, acc) in run.seeds.iter().zip(&run.per_seed_acc) {
                        entry.push((*seed, *acc));
                    }
                }
            }
        }
    }
    for ((dataset, k, variant), mut seeded) in groups {
        seeded.sort_by_key(|(seed, _)| *seed);
        let accs: Vec<f64> = seeded.into_iter().map(|(_, a)| a).collect();
        let task = *tasks.get(&dataset).expect("task recorded with rows");
        report.rows.push(ReportRow {
            task,
            mean: mean(&accs),
            std: sample_std(&accs),
            per_seed_acc: accs,
            dataset,
            k,
            variant,
        });
    }
    report.sort();
    Ok(report)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableStyle {
    Markdown,
    Csv,
}

impl TableStyle {
    pub fn parse(s: &str) -> Result<TableStyle> {
        match s {
            "markdown" => Ok(TableStyle::Markdown),
            "csv" => Ok(TableStyle::Csv),
            other => Err(Error::InvalidArgument(format!("unknown style {other:?}"))),
        }
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

/// Render the report. Markdown is wide (one column per variant, best value
/// per row in bold, aggregate rows at the bottom); CSV is long-format and
/// round-trips through [`parse_csv`].
pub fn emit_table(report: &Report, style: TableStyle) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::InvalidArgument("empty report".into()));
    }
    match style {
        TableStyle::Csv => {
            let mut out = String::from("dataset,task,k,variant,mean,std,per_seed_acc\n");
            for r in &report.rows {
                let seeds = r
                    .per_seed_acc
                    .iter()
                    .map(|a| format!("{a}"))
                    .collect::<Vec<_>>()
                    .join(";");
                out.push_str(&format!(
                    "{},{:?},{},{},{},{},{}\n",
                    r.dataset, r.task, r.k, r.variant, r.mean, r.std, seeds
                ));
            }
            Ok(out)
        }
        TableStyle::Markdown => {
            let variants = report.variants();
            let mut out = String::new();
            out.push_str(&format!("| Dataset | k | {} |\n", variants.join(" | ")));
            out.push_str(&format!("|---|---|{}\n", "---|".repeat(variants.len())));
            let mut keys: Vec<(String, usize)> = Vec::new();
            for r in &report.rows {
                let key = (r.dataset.clone(), r.k);
                if !keys.contains(&key) {
                    keys.push(key);
                }
            }
            keys.sort();
            for (dataset, k) in keys {
                let cells: Vec<Option<f64>> = variants
                    .iter()
                    .map(|v| {
                        report
                            .rows
                            .iter()
                            .find(|r| r.dataset == dataset && r.k == k && r.variant == *v)
                            .map(|r| r.mean)
                    })
                    .collect();
                let best = cells
                    .iter()
                    .flatten()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max);
                let rendered: Vec<String> = cells
                    .iter()
                    .map(|c| match c {
                        Some(v) if *v == best => format!("**{}**", pct(*v)),
                        Some(v) => pct(*v),
                        None => "-".to_string(),
                    })
                    .collect();
                out.push_str(&format!("| {dataset} | {k} | {} |\n", rendered.join(" | ")));
            }
            for task in [Task::TC, Task::NLI] {
                let cells: Vec<String> = variants
                    .iter()
                    .map(|v| {
                        report
                            .task_mean(task, v)
                            .map(pct)
                            .unwrap_or_else(|| "-".to_string())
                    })
                    .collect();
                if cells.iter().any(|c| c != "-") {
                    out.push_str(&format!("| {task:?} avg | - | {} |\n", cells.join(" | ")));
                }
            }
            let overall: Vec<String> = variants
                .iter()
                .map(|v| {
                    report
                        .overall_mean(v)
                        .map(pct)
                        .unwrap_or_else(|| "-".to_string())
                })
                .collect();
            out.push_str(&format!("| Overall avg | - | {} |\n", overall.join(" | ")));
            Ok(out)
        }
    }
}

/// Parse the long-format CSV back into report rows.
pub fn parse_csv(text: &str) -> Result<Report> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 7 {
            return Err(Error::InvalidArgument(format!(
                "csv line {} has {} fields, expected 7",
                i + 1,
                parts.len()
            )));
        }
        let task = match parts[1] {
            "TC" => Task::TC,
            "NLI" => Task::NLI,
            other => {
                return Err(Error::InvalidArgument(format!("unknown task {other:?}")))
            }
        };
        let per_seed_acc: Vec<f64> = if parts[6].is_empty() {
            Vec::new()
        } else {
            parts[6]
                .split(';')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("csv line {}: {e}", i + 1)))?
        };
        rows.push(ReportRow {
            dataset: parts[0].to_string(),
            task,
            k: parts[2]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("csv line {}: {e}", i + 1)))?,
            variant: parts[3].to_string(),
            mean: parts[4]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("csv line {}: {e}", i + 1)))?,
            std: parts[5]
                .parse()
                .map_err(|e| Error::InvalidArgument(format!("csv line {}: {e}", i + 1)))?,
            per_seed_acc,
        });
    }
    Ok(Report {
        rows,
        failures: Vec::new(),
    })
}
