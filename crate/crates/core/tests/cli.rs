//! End-to-end exercises of the command-line surface and the grid runner.

use std::path::Path;
use std::process::Command;

use prompt_pet::harness::{
    collect_report, emit_table, parse_csv, run_grid, ExperimentGrid, TableStyle,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prompt-pet"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn prompt-pet");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn write_run_config(dir: &Path, variant: &str, out_name: &str) -> std::path::PathBuf {
    let config = format!(
        r#"
variant = "{variant}"
output_dir = "{out}"
seeds = [3, 5]

[dataset]
name = "markers"
task = "TC"
class_names = ["breeze", "stone"]
train = "{train}"
test = "{test}"
unlabeled_n = 12

[few_shot]
mode = "per_class"
k = 4
seed = 1

[backbone]
model_id = "toy"
d_model = 16
max_len = 64
vocab_size = 128
seed = 2

[hyperparameters]
lr = 3e-3
epochs = 2
max_len = 32

[prompts]
n_soft = 2
k_templates = 2
n_list = [1, 2]
"#,
        out = dir.join(out_name).display(),
        train = dir.join("data/train.jsonl").display(),
        test = dir.join("data/test.jsonl").display(),
    );
    let path = dir.join(format!("{out_name}.toml"));
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn staged_cli_flow_matches_run_pet() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .arg("synth-data")
        .arg("--out")
        .arg(dir.path().join("data"))
        .arg("--pool")
        .arg("60")
        .arg("--test")
        .arg("20"));
    assert!(dir.path().join("data/train.jsonl").exists());
    assert!(dir.path().join("data/meta.json").exists());

    // Staged commands, one at a time.
    let staged_cfg = write_run_config(dir.path(), "fixed_soft", "staged");
    run_ok(bin().arg("train-labelers").arg("--config").arg(&staged_cfg));
    let run_dir = dir.path().join("staged");
    assert!(run_dir.join("config.snapshot").exists());
    assert!(run_dir.join("seed_3/labelers/0/backbone.json").exists());
    assert!(run_dir.join("seed_3/labelers/0/vocab.txt").exists());

    run_ok(bin().arg("soft-label").arg("--run-dir").arg(&run_dir));
    assert!(run_dir.join("seed_3/soft_labels.jsonl").exists());
    assert!(run_dir.join("seed_5/soft_labels.jsonl").exists());

    run_ok(bin().arg("distill").arg("--run-dir").arg(&run_dir));
    assert!(run_dir.join("seed_3/final/classifier.json").exists());

    let eval_out = run_ok(bin()
        .arg("evaluate")
        .arg("--run-dir")
        .arg(&run_dir)
        .arg("--test")
        .arg(dir.path().join("data/test.jsonl")));
    assert!(eval_out.contains("mean accuracy"), "{eval_out}");
    assert!(run_dir.join("report.json").exists());

    // One-shot run-pet over the same config must land on the same numbers.
    let whole_cfg = write_run_config(dir.path(), "fixed_soft", "whole");
    let whole_out = run_ok(bin().arg("run-pet").arg("--config").arg(&whole_cfg));
    let staged_report =
        prompt_pet::runner::RunReport::load(&run_dir).expect("staged report");
    let whole_report =
        prompt_pet::runner::RunReport::load(&dir.path().join("whole")).expect("whole report");
    assert_eq!(staged_report.per_seed_acc, whole_report.per_seed_acc);
    assert!(whole_out.contains("mean accuracy"));
}

fn grid_toml(dir: &Path, with_broken_dataset: bool) -> std::path::PathBuf {
    let broken = if with_broken_dataset {
        format!(
            r#"
[[datasets]]
name = "broken"
task = "TC"
class_names = ["breeze", "stone"]
train = "{missing}"
test = "{missing}"
unlabeled_n = 6
"#,
            missing = dir.join("data/does-not-exist.jsonl").display()
        )
    } else {
        String::new()
    };
    let config = format!(
        r#"
output_dir = "{out}"
seeds = [3, 5]
variants = ["fixed_soft", "finetune"]
few_shot_ks = [2]
jobs = 2

[backbone]
model_id = "toy"
d_model = 16
max_len = 64
vocab_size = 128
seed = 2

[hyperparameters]
lr = 3e-3
epochs = 2
max_len = 32

[prompts]
n_soft = 2

[verbalizer]

[[datasets]]
name = "markers"
task = "TC"
class_names = ["breeze", "stone"]
train = "{train}"
test = "{test}"
unlabeled_n = 10
{broken}
"#,
        out = dir.join("grid").display(),
        train = dir.join("data/train.jsonl").display(),
        test = dir.join("data/test.jsonl").display(),
    );
    let path = dir.join("grid.toml");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn grid_isolates_failures_and_reports_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .arg("synth-data")
        .arg("--out")
        .arg(dir.path().join("data"))
        .arg("--pool")
        .arg("50")
        .arg("--test")
        .arg("16"));

    let grid_path = grid_toml(dir.path(), true);
    let grid = ExperimentGrid::load(&grid_path).unwrap();
    let report = run_grid(&grid).unwrap();

    // 2 variants x 1 k x 2 seeds on the good dataset -> 2 rows of 2 seeds;
    // the broken dataset contributes only failures.
    assert_eq!(report.rows.len(), 2, "{report:?}");
    for row in &report.rows {
        assert_eq!(row.dataset, "markers");
        assert_eq!(row.per_seed_acc.len(), 2);
    }
    assert_eq!(report.failures.len(), 4);
    assert!(report.failures.iter().all(|f| f.dataset == "broken"));

    // Aggregates recomputed from the per-run report.json files agree.
    let collected = collect_report(&dir.path().join("grid")).unwrap();
    assert_eq!(collected.rows.len(), report.rows.len());
    for (a, b) in report.rows.iter().zip(&collected.rows) {
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.k, b.k);
        assert_eq!(a.variant, b.variant);
        assert!((a.mean - b.mean).abs() < 1e-9);
        assert!((a.std - b.std).abs() < 1e-9);
    }

    // Table emission: markdown bolds, csv round-trips.
    let md = emit_table(&report, TableStyle::Markdown).unwrap();
    assert!(md.contains("**"));
    assert!(md.contains("| markers | 2 |"));
    let csv = emit_table(&report, TableStyle::Csv).unwrap();
    let back = parse_csv(&csv).unwrap();
    assert_eq!(back.rows, report.rows);

    // The report subcommand renders from the grid directory.
    let out = run_ok(bin()
        .arg("report")
        .arg("--run-dir")
        .arg(dir.path().join("grid"))
        .arg("--style")
        .arg("csv"));
    assert!(out.contains("dataset,task,k,variant,mean,std,per_seed_acc"));
    assert!(dir.path().join("grid/report.csv").exists());
}

#[test]
fn three_seed_grid_counts_runs_and_rows() {
    // 1 dataset x 2 variants x 1 k x 3 seeds: six executed runs, two rows.
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .arg("synth-data")
        .arg("--out")
        .arg(dir.path().join("data"))
        .arg("--pool")
        .arg("50")
        .arg("--test")
        .arg("16"));
    let path = grid_toml(dir.path(), false);
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("seeds = [3, 5]", "seeds = [3, 5, 8]");
    std::fs::write(&path, text).unwrap();
    let grid = ExperimentGrid::load(&path).unwrap();
    let report = run_grid(&grid).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.failures.is_empty());
    for row in &report.rows {
        assert_eq!(row.per_seed_acc.len(), 3);
    }
    let mut seed_dirs = 0;
    for variant in ["fixed_soft", "finetune"] {
        for seed in [3u64, 5, 8] {
            let run = dir
                .path()
                .join("grid/markers")
                .join(variant)
                .join("k2")
                .join(format!("seed{seed}"));
            assert!(run.join("report.json").exists(), "{}", run.display());
            seed_dirs += 1;
        }
    }
    assert_eq!(seed_dirs, 6);
}

#[test]
fn grid_execution_order_does_not_change_numbers() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .arg("synth-data")
        .arg("--out")
        .arg(dir.path().join("data"))
        .arg("--pool")
        .arg("50")
        .arg("--test")
        .arg("16"));
    let grid_path = grid_toml(dir.path(), false);
    let mut sequential = ExperimentGrid::load(&grid_path).unwrap();
    sequential.jobs = 1;
    sequential.output_dir = dir.path().join("grid_seq");
    let mut parallel = ExperimentGrid::load(&grid_path).unwrap();
    parallel.jobs = 4;
    parallel.output_dir = dir.path().join("grid_par");
    let a = run_grid(&sequential).unwrap();
    let b = run_grid(&parallel).unwrap();
    assert_eq!(a.rows, b.rows);
}

#[test]
fn cache_dir_honors_environment_variable() {
    // Read-only check of the cache resolution rule; no subprocess races.
    let unique = format!("/tmp/prompt-pet-cache-{}", std::process::id());
    let out = bin()
        .arg("run-pet")
        .arg("--config")
        .arg("/nonexistent.toml")
        .env("PROMPT_PET_CACHE", &unique)
        .output()
        .unwrap();
    assert!(!out.status.success());
    // The library-level rule:
    std::env::set_var("PROMPT_PET_CACHE", &unique);
    assert_eq!(
        prompt_pet::backbone::cache_dir(),
        std::path::PathBuf::from(&unique)
    );
    std::env::remove_var("PROMPT_PET_CACHE");
    assert_eq!(
        prompt_pet::backbone::cache_dir(),
        std::path::PathBuf::from(".prompt-pet-cache")
    );
}

#[test]
fn pretrained_model_id_requires_cached_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .arg("synth-data")
        .arg("--out")
        .arg(dir.path().join("data"))
        .arg("--pool")
        .arg("40")
        .arg("--test")
        .arg("10"));
    let cfg = write_run_config(dir.path(), "fixed_soft", "pretrained");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("model_id = \"toy\"", "model_id = \"roberta-large\"");
    std::fs::write(&cfg, text).unwrap();
    let out = bin()
        .arg("run-pet")
        .arg("--config")
        .arg(&cfg)
        .env("PROMPT_PET_CACHE", dir.path().join("empty-cache"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("prepare one offline"), "{stderr}");
}
