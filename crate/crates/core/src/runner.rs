//! Executes a run configuration end to end and manages the run directory.
//!
//! Layout, per seed under the run directory:
//!
//! ```text
//! config.snapshot
//! report.json
//! seed_<s>/
//!   fewshot.jsonl, fewshot.meta.json
//!   labelers/<i>/{backbone.json, vocab.txt, reparam.json, verbalizer.json, template.json}
//!   soft_labels.jsonl
//!   final/{classifier.json, vocab.txt}
//!   eval.json
//! ```
//!
//! Every stage re-derives its inputs deterministically from the snapshot and
//! the seed, so the staged CLI commands can resume a run directory at any
//! point.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{make_toy_backbone, load_pretrained, BackboneConfig, MaskedLm, SequenceClassifier, Vocab};
use crate::config::{RunConfig, Variant, VerbalizerKind};
use crate::corpus::{
    load_dataset, sample_few_shot, save_jsonl, save_meta, strip_labels, Dataset, DatasetKind,
    FewShotSpec,
};
use crate::error::{Error, Result};
use crate::nn::mix_seed;
use crate::pipeline::{
    distill, predict_final, predict_with_labeler, soft_label, train_classifier_supervised,
    train_labeler, LabelerModel, SoftLabelSet, VerbalizerState,
};
use crate::templates::{build_demo_soft_family, build_vary_soft_family, manual_catalog, Segment, Template};
use crate::verbalizers::{ManualVerbalizer, Prototypes, SearchVerbalizerState, SoftVerbalizerState};

/// Per-run report written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    pub dataset: String,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub per_seed_acc: Vec<f64>,
    pub mean_acc: f64,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl RunReport {
    pub fn save(&self, run_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(run_dir)?;
        std::fs::write(
            run_dir.join("report.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }

    pub fn load(run_dir: &Path) -> Result<RunReport> {
        Ok(serde_json::from_str(&std::fs::read_to_string(
            run_dir.join("report.json"),
        )?)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub seed: u64,
    pub accuracy: f64,
    pub n_test: usize,
    #[serde(default)]
    pub flags: Vec<String>,
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

/// The deterministic data slice one seed works with.
pub struct SeedData {
    pub few_shot: Dataset,
    pub unlabeled: Option<Dataset>,
    pub vocab: Vocab,
}

fn literal_words(templates: &[Template]) -> Vec<String> {
    let mut words = Vec::new();
    for t in templates {
        for seg in &t.segments {
            if let Segment::Literal { text } = seg {
                for w in text.split_whitespace() {
                    if !words.contains(&w.to_string()) {
                        words.push(w.to_string());
                    }
                }
            }
        }
    }
    words
}

/// Build the templates a variant uses for one seed (demo resolution happens
/// against the few-shot set).
pub fn build_templates(config: &RunConfig, few_shot: &Dataset, seed: u64) -> Result<Vec<Template>> {
    match config.variant {
        Variant::DemoSoft => build_demo_soft_family(
            few_shot,
            config.prompts.k_templates,
            config.prompts.n_soft,
            mix_seed(seed, config.prompts.demo_seed.wrapping_add(11)),
        ),
        Variant::DemoSoftSl => build_demo_soft_family(
            few_shot,
            1,
            config.prompts.n_soft,
            mix_seed(seed, config.prompts.demo_seed.wrapping_add(11)),
        ),
        Variant::VarySoft => build_vary_soft_family(config.dataset.task, &config.prompts.n_list),
        Variant::FixedSoft => {
            build_vary_soft_family(config.dataset.task, &[config.prompts.n_soft])
        }
        Variant::ProtoverbManual | Variant::Manual => Ok(manual_catalog(&config.dataset.name)?
            .into_iter()
            .map(|(t, _)| t)
            .collect()),
        Variant::Finetune => Ok(Vec::new()),
    }
}

/// Load the pools and derive the seed's few-shot set, unlabeled set and
/// vocabulary. Pure function of (config, seed).
pub fn prepare_seed_data(config: &RunConfig, seed: u64) -> Result<SeedData> {
    let pool = config.dataset.load_train()?;
    let spec = FewShotSpec {
        mode: config.few_shot.mode,
        k: config.few_shot.k,
        seed: mix_seed(seed, config.few_shot.seed),
    };
    let few_shot = sample_few_shot(&pool, &spec)?;

    let unlabeled = if config.variant.uses_unlabeled() {
        Some(match (&config.dataset.unlabeled, config.dataset.unlabeled_n) {
            (Some(path), _) => load_dataset(path, &config.dataset.meta(), DatasetKind::Unlabeled)?,
            (None, Some(n)) => {
                let residual = pool.without_ids(&few_shot.ids());
                strip_labels(&residual, n, mix_seed(seed, config.dataset.unlabeled_seed))?
            }
            (None, None) => {
                return Err(Error::Config(
                    "variant needs an unlabeled pool: set dataset.unlabeled or unlabeled_n".into(),
                ))
            }
        })
    } else {
        None
    };

    let vocab = if config.backbone.model_id == "toy" {
        let templates = build_templates(config, &few_shot, seed)?;
        let mut required = config.dataset.class_names.clone();
        required.extend(literal_words(&templates));
        for set in crate::templates::manual_verbalizer_words(&config.dataset.name)
            .unwrap_or_default()
        {
            required.extend(set);
        }
        let texts = few_shot
            .examples
            .iter()
            .chain(unlabeled.iter().flat_map(|u| u.examples.iter()))
            .flat_map(|e| {
                std::iter::once(e.text_a.as_str()).chain(e.text_b.as_deref())
            });
        Vocab::build(texts, &required, config.backbone.vocab_size)?
    } else {
        load_pretrained(&config.backbone.model_id)?.vocab
    };

    Ok(SeedData {
        few_shot,
        unlabeled,
        vocab,
    })
}

fn build_backbone(config: &RunConfig, vocab: Vocab, seed: u64) -> Result<MaskedLm> {
    if config.backbone.model_id == "toy" {
        let cfg = BackboneConfig {
            seed: mix_seed(seed, config.backbone.seed),
            ..config.backbone.clone()
        };
        make_toy_backbone(&cfg, vocab)
    } else {
        load_pretrained(&config.backbone.model_id)
    }
}

fn init_verbalizer(
    config: &RunConfig,
    d_model: usize,
    seed: u64,
    index: usize,
) -> Result<VerbalizerState> {
    let c = config.dataset.class_names.len();
    let kind = if config.variant.uses_manual_catalog() {
        match config.variant {
            Variant::Manual => VerbalizerKind::Manual,
            _ => VerbalizerKind::Proto,
        }
    } else {
        config.verbalizer.kind
    };
    Ok(match kind {
        VerbalizerKind::Proto => VerbalizerState::Proto(Prototypes::init(
            c,
            d_model,
            config.verbalizer.tau,
            mix_seed(seed, 500 + index as u64),
        )),
        VerbalizerKind::Soft => VerbalizerState::Soft(SoftVerbalizerState::init(
            c,
            d_model,
            mix_seed(seed, 500 + index as u64),
        )),
        VerbalizerKind::Search => VerbalizerState::Search(SearchVerbalizerState {
            label_word_sets: Vec::new(),
        }),
        VerbalizerKind::Manual => {
            let sets = crate::templates::manual_verbalizer_words(&config.dataset.name)?;
            let words = sets
                .get(config.verbalizer.manual_index)
                .ok_or_else(|| Error::Config("manual_index out of range".into()))?
                .clone();
            if words.len() != c {
                return Err(Error::ClassMismatch(format!(
                    "manual verbalizer has {} words for {c} classes",
                    words.len()
                )));
            }
            VerbalizerState::Manual(ManualVerbalizer::new(words))
        }
    })
}

/// Construct the untrained labeler models for one seed.
pub fn build_labelers(config: &RunConfig, data: &SeedData, seed: u64) -> Result<Vec<LabelerModel>> {
    let templates = build_templates(config, &data.few_shot, seed)?;
    let mut labelers = Vec::with_capacity(templates.len());
    for (i, template) in templates.into_iter().enumerate() {
        let backbone = build_backbone(config, data.vocab.clone(), mix_seed(seed, 300 + i as u64))?;
        let demo = match &template.demo_source_ids {
            Some(ids) => Some(
                data.few_shot
                    .example_by_id(ids[0])
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("demo example {} not in few-shot set", ids[0]))
                    })?
                    .clone(),
            ),
            None => None,
        };
        let reparam = match template.bank_size() {
            0 => None,
            bank => Some(crate::reparam::init_block(
                bank,
                backbone.d_model(),
                mix_seed(seed, 400 + i as u64),
            )?),
        };
        let verbalizer = init_verbalizer(config, backbone.d_model(), seed, i)?;
        let mut labeler = LabelerModel::new(backbone, template, demo, reparam, verbalizer, seed)?;
        labeler.meta.search_k = config.verbalizer.search_k;
        labelers.push(labeler);
    }
    Ok(labelers)
}

/// Train and persist the labelers (or, for the fine-tune baseline, the final
/// classifier directly). Writes the few-shot slice for reproducibility.
pub fn stage_train(config: &RunConfig, seed: u64, run_dir: &Path) -> Result<Vec<String>> {
    let data = prepare_seed_data(config, seed)?;
    let dir = seed_dir(run_dir, seed);
    std::fs::create_dir_all(&dir)?;
    save_jsonl(&data.few_shot, &dir.join("fewshot.jsonl"))?;
    save_meta(&config.dataset.meta(), &dir.join("fewshot.meta.json"))?;

    let mut flags = Vec::new();
    if config.variant == Variant::Finetune {
        let mut clf = build_classifier(config, data.vocab.clone(), seed)?;
        let losses = train_classifier_supervised(
            &mut clf,
            &data.few_shot,
            &config.hyperparameters,
            mix_seed(seed, 600),
        )?;
        if losses.len() >= 2 && losses[losses.len() - 1] >= losses[0] {
            flags.push("finetune_loss_not_decreasing".into());
        }
        clf.save(&dir.join("final"))?;
        return Ok(flags);
    }

    let mut labelers = build_labelers(config, &data, seed)?;
    for (i, labeler) in labelers.iter_mut().enumerate() {
        train_labeler(labeler, &data.few_shot, &config.hyperparameters)?;
        for flag in &labeler.meta.flags {
            flags.push(format!("labeler{i}:{flag}"));
        }
        labeler.save(&dir.join("labelers").join(i.to_string()))?;
    }
    Ok(flags)
}

pub fn load_labelers(run_dir: &Path, seed: u64) -> Result<Vec<LabelerModel>> {
    let dir = seed_dir(run_dir, seed).join("labelers");
    let mut labelers = Vec::new();
    for i in 0.. {
        let labeler_dir = dir.join(i.to_string());
        if !labeler_dir.exists() {
            break;
        }
        labelers.push(LabelerModel::load(&labeler_dir)?);
    }
    if labelers.is_empty() {
        return Err(Error::Checkpoint(format!(
            "no labelers under {}",
            dir.display()
        )));
    }
    Ok(labelers)
}

/// Soft-label the unlabeled pool with the persisted labelers.
pub fn stage_soft_label(config: &RunConfig, seed: u64, run_dir: &Path) -> Result<SoftLabelSet> {
    if !config.variant.uses_unlabeled() {
        return Err(Error::InvalidArgument(format!(
            "variant {} does not soft-label",
            config.variant
        )));
    }
    let data = prepare_seed_data(config, seed)?;
    let unlabeled = data.unlabeled.as_ref().expect("validated above");
    let labelers = load_labelers(run_dir, seed)?;
    let soft = soft_label(&labelers, unlabeled, config.hyperparameters.max_len)?;
    soft.save_jsonl(&seed_dir(run_dir, seed).join("soft_labels.jsonl"))?;
    Ok(soft)
}

fn build_classifier(config: &RunConfig, vocab: Vocab, seed: u64) -> Result<SequenceClassifier> {
    let cfg = BackboneConfig {
        seed: mix_seed(seed, config.backbone.seed.wrapping_add(0xF17A)),
        ..config.backbone.clone()
    };
    SequenceClassifier::new_toy(&cfg, vocab, config.dataset.class_names.len(), cfg.seed)
}

/// Distill the final classifier from the stored soft labels.
pub fn stage_distill(config: &RunConfig, seed: u64, run_dir: &Path) -> Result<Vec<String>> {
    if !config.variant.uses_unlabeled() {
        return Err(Error::InvalidArgument(format!(
            "variant {} does not distill",
            config.variant
        )));
    }
    let data = prepare_seed_data(config, seed)?;
    let unlabeled = data.unlabeled.as_ref().expect("validated above");
    let dir = seed_dir(run_dir, seed);
    let soft = SoftLabelSet::load_jsonl(&dir.join("soft_labels.jsonl"), 0)?;
    let mut clf = build_classifier(config, data.vocab.clone(), seed)?;
    let kls = distill(
        &mut clf,
        &soft,
        unlabeled,
        &config.hyperparameters,
        mix_seed(seed, 700),
    )?;
    let mut flags = Vec::new();
    if kls.len() >= 2 && kls[kls.len() - 1] >= kls[0] {
        flags.push("distill_loss_not_decreasing".into());
    }
    clf.save(&dir.join("final"))?;
    Ok(flags)
}

/// Evaluate the seed's final model on a test file. For the supervised
/// prompt-only variant the single labeler is the classifier.
pub fn stage_evaluate(
    config: &RunConfig,
    seed: u64,
    run_dir: &Path,
    test_path: Option<&Path>,
) -> Result<EvalRecord> {
    let meta = config.dataset.meta();
    let test = match test_path {
        Some(p) => load_dataset(p, &meta, DatasetKind::Test)?,
        None => config.dataset.load_test()?,
    };
    let dir = seed_dir(run_dir, seed);
    let accuracy = match config.variant {
        Variant::DemoSoftSl => {
            let labelers = load_labelers(run_dir, seed)?;
            let (_, acc) =
                predict_with_labeler(&labelers[0], &test, config.hyperparameters.max_len)?;
            acc
        }
        _ => {
            let clf = SequenceClassifier::load(&dir.join("final"))?;
            let (_, acc) = predict_final(&clf, &test)?;
            acc
        }
    };
    let record = EvalRecord {
        seed,
        accuracy,
        n_test: test.len(),
        flags: Vec::new(),
    };
    std::fs::write(
        dir.join("eval.json"),
        serde_json::to_string_pretty(&record)?,
    )?;
    Ok(record)
}

/// Run one seed end to end; returns its test accuracy and flags.
pub fn run_seed(config: &RunConfig, seed: u64, run_dir: &Path) -> Result<(f64, Vec<String>)> {
    let mut flags = stage_train(config, seed, run_dir)?;
    if config.variant.uses_unlabeled() {
        stage_soft_label(config, seed, run_dir)?;
        flags.extend(stage_distill(config, seed, run_dir)?);
    }
    let mut record = stage_evaluate(config, seed, run_dir, None)?;
    record.flags = flags.clone();
    std::fs::write(
        seed_dir(run_dir, seed).join("eval.json"),
        serde_json::to_string_pretty(&record)?,
    )?;
    Ok((record.accuracy, flags))
}

/// Execute the configured variant for every seed and write the report.
pub fn run_pet(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let run_dir = config.output_dir.clone();
    std::fs::create_dir_all(&run_dir)?;
    config.snapshot(&run_dir)?;

    let mut per_seed_acc = Vec::with_capacity(config.seeds.len());
    let mut flags = Vec::new();
    for &seed in &config.seeds {
        let (acc, seed_flags) = run_seed(config, seed, &run_dir)?;
        per_seed_acc.push(acc);
        for f in seed_flags {
            flags.push(format!("seed{seed}:{f}"));
        }
    }
    let mean_acc = per_seed_acc.iter().sum::<f64>() / per_seed_acc.len() as f64;
    let report = RunReport {
        variant: config.variant.as_str().to_string(),
        dataset: config.dataset.name.clone(),
        k: config.few_shot.k,
        seeds: config.seeds.clone(),
        per_seed_acc,
        mean_acc,
        flags,
    };
    report.save(&run_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth, Example, FewShotMode};
    use crate::pipeline::Hyperparameters;

    /// Tiny but complete toy config over generated marker data.
    pub fn toy_config(
        dir: &Path,
        variant: Variant,
        seeds: Vec<u64>,
        pool_n: usize,
        unlabeled_n: usize,
    ) -> RunConfig {
        let pool = synth::marker_dataset("markers", pool_n, 99);
        let test = Dataset {
            kind: DatasetKind::Test,
            ..synth::marker_dataset("markers-test", 40, 101)
        };
        let train_path = dir.join("train.jsonl");
        let test_path = dir.join("test.jsonl");
        save_jsonl(&pool, &train_path).unwrap();
        save_jsonl(&test, &test_path).unwrap();
        RunConfig {
            variant,
            output_dir: dir.join("run"),
            seeds,
            dataset: crate::config::DatasetConfig {
                name: "markers".into(),
                task: crate::corpus::Task::TC,
                class_names: synth::CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
                train: train_path,
                test: test_path,
                unlabeled: None,
                unlabeled_n: Some(unlabeled_n),
                unlabeled_seed: 0,
            },
            few_shot: FewShotSpec {
                mode: FewShotMode::PerClass,
                k: 8,
                seed: 5,
            },
            backbone: BackboneConfig::toy(32, 64, 256, 1),
            hyperparameters: Hyperparameters {
                lr: 3e-3,
                epochs: 6,
                max_len: 32,
                ..Hyperparameters::default()
            },
            prompts: crate::config::PromptConfig {
                n_soft: 2,
                k_templates: 2,
                n_list: vec![1, 2],
                demo_seed: 0,
            },
            verbalizer: Default::default(),
        }
    }

    #[test]
    fn vary_soft_run_produces_expected_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), Variant::VarySoft, vec![7], 80, 30);
        let report = run_pet(&config).unwrap();
        assert_eq!(report.per_seed_acc.len(), 1);
        assert_eq!(report.variant, "vary_soft");

        let run = &config.output_dir;
        assert!(run.join("config.snapshot").exists());
        assert!(run.join("report.json").exists());
        let sd = seed_dir(run, 7);
        assert!(sd.join("fewshot.jsonl").exists());
        assert!(sd.join("labelers/0/backbone.json").exists());
        assert!(sd.join("labelers/0/template.json").exists());
        assert!(sd.join("labelers/0/verbalizer.json").exists());
        assert!(sd.join("labelers/0/reparam.json").exists());
        assert!(sd.join("labelers/1/backbone.json").exists());
        assert!(!sd.join("labelers/2").exists());
        assert!(sd.join("soft_labels.jsonl").exists());
        assert!(sd.join("final/classifier.json").exists());
        assert!(sd.join("eval.json").exists());
    }

    #[test]
    fn finetune_run_writes_zero_labelers() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), Variant::Finetune, vec![3], 60, 0);
        let report = run_pet(&config).unwrap();
        let sd = seed_dir(&config.output_dir, 3);
        assert!(!sd.join("labelers").exists());
        assert!(!sd.join("soft_labels.jsonl").exists());
        assert!(sd.join("final/classifier.json").exists());
        assert!(report.mean_acc >= 0.0);
    }

    #[test]
    fn demo_soft_sl_uses_the_labeler_directly() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), Variant::DemoSoftSl, vec![5], 80, 0);
        let report = run_pet(&config).unwrap();
        let sd = seed_dir(&config.output_dir, 5);
        assert!(sd.join("labelers/0/demo.json").exists());
        assert!(!sd.join("labelers/1").exists());
        assert!(!sd.join("final").exists());
        assert!(!sd.join("soft_labels.jsonl").exists());
        assert!(report.mean_acc > 0.0);
    }

    #[test]
    fn staged_commands_reproduce_run_pet() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = toy_config(dir.path(), Variant::FixedSoft, vec![11], 80, 24);
        config.output_dir = dir.path().join("staged");
        config.snapshot(&config.output_dir).unwrap();

        stage_train(&config, 11, &config.output_dir).unwrap();
        stage_soft_label(&config, 11, &config.output_dir).unwrap();
        stage_distill(&config, 11, &config.output_dir).unwrap();
        let record = stage_evaluate(&config, 11, &config.output_dir, None).unwrap();

        let mut whole = toy_config(dir.path(), Variant::FixedSoft, vec![11], 80, 24);
        whole.output_dir = dir.path().join("whole");
        let report = run_pet(&whole).unwrap();
        assert!(
            (report.per_seed_acc[0] - record.accuracy).abs() < 1e-12,
            "staged {} vs whole {}",
            record.accuracy,
            report.per_seed_acc[0]
        );
    }

    #[test]
    fn demo_soft_run_trains_k_demo_labelers() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = toy_config(dir.path(), Variant::DemoSoft, vec![9], 80, 24);
        config.prompts.k_templates = 2;
        config.prompts.n_soft = 2;
        let report = run_pet(&config).unwrap();
        assert_eq!(report.variant, "demo_soft");
        let sd = seed_dir(&config.output_dir, 9);
        for i in 0..2 {
            let labeler_dir = sd.join("labelers").join(i.to_string());
            assert!(labeler_dir.join("demo.json").exists());
            assert!(labeler_dir.join("reparam.json").exists());
            let template: Template = serde_json::from_str(
                &std::fs::read_to_string(labeler_dir.join("template.json")).unwrap(),
            )
            .unwrap();
            assert!(template.has_demo());
            assert_eq!(template.bank_size(), 2);
            assert_eq!(template.n_soft_total(), 4);
        }
        // The two labelers differ only in their demonstration example.
        let demo0: Example = serde_json::from_str(
            &std::fs::read_to_string(sd.join("labelers/0/demo.json")).unwrap(),
        )
        .unwrap();
        let demo1: Example = serde_json::from_str(
            &std::fs::read_to_string(sd.join("labelers/1/demo.json")).unwrap(),
        )
        .unwrap();
        assert_ne!(demo0.id, demo1.id);
        assert!(sd.join("soft_labels.jsonl").exists());
        assert!(sd.join("final/classifier.json").exists());
    }

    fn agnews_like_config(dir: &Path, variant: Variant) -> RunConfig {
        let class_names = ["World", "Sports", "Business", "Technology"];
        let markers = ["earth", "goal", "trade", "chip"];
        let pool = synth::marker_dataset_with("agnews", 120, 7, &markers, &class_names);
        let test = Dataset {
            kind: DatasetKind::Test,
            ..synth::marker_dataset_with("agnews", 24, 8, &markers, &class_names)
        };
        let train_path = dir.join("ag_train.jsonl");
        let test_path = dir.join("ag_test.jsonl");
        save_jsonl(&pool, &train_path).unwrap();
        save_jsonl(&test, &test_path).unwrap();
        RunConfig {
            variant,
            output_dir: dir.join(format!("ag_{}", variant.as_str())),
            seeds: vec![4],
            dataset: crate::config::DatasetConfig {
                name: "agnews".into(),
                task: crate::corpus::Task::TC,
                class_names: class_names.iter().map(|s| s.to_string()).collect(),
                train: train_path,
                test: test_path,
                unlabeled: None,
                unlabeled_n: Some(16),
                unlabeled_seed: 0,
            },
            few_shot: FewShotSpec {
                mode: FewShotMode::PerClass,
                k: 4,
                seed: 5,
            },
            backbone: BackboneConfig::toy(32, 64, 256, 1),
            hyperparameters: Hyperparameters {
                lr: 3e-3,
                epochs: 3,
                max_len: 48,
                ..Hyperparameters::default()
            },
            prompts: Default::default(),
            verbalizer: Default::default(),
        }
    }

    #[test]
    fn manual_catalog_variants_run_with_all_six_prompts() {
        let dir = tempfile::tempdir().unwrap();
        let config = agnews_like_config(dir.path(), Variant::ProtoverbManual);
        run_pet(&config).unwrap();
        let sd = seed_dir(&config.output_dir, 4);
        for i in 0..6 {
            let labeler_dir = sd.join("labelers").join(i.to_string());
            assert!(labeler_dir.join("backbone.json").exists(), "labeler {i}");
            // Manual templates carry no soft slots, hence no reparam block.
            assert!(!labeler_dir.join("reparam.json").exists());
            let verbalizer: VerbalizerState = serde_json::from_str(
                &std::fs::read_to_string(labeler_dir.join("verbalizer.json")).unwrap(),
            )
            .unwrap();
            assert_eq!(verbalizer.kind(), "proto");
        }
        assert!(!sd.join("labelers/6").exists());

        let manual = agnews_like_config(dir.path(), Variant::Manual);
        run_pet(&manual).unwrap();
        let sd = seed_dir(&manual.output_dir, 4);
        let verbalizer: VerbalizerState = serde_json::from_str(
            &std::fs::read_to_string(sd.join("labelers/0/verbalizer.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(verbalizer.kind(), "manual");
        match verbalizer {
            VerbalizerState::Manual(v) => {
                assert_eq!(v.label_words, ["World", "Sports", "Business", "Technology"])
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn repeated_runs_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = toy_config(dir.path(), Variant::VarySoft, vec![2], 80, 20);
        a.output_dir = dir.path().join("a");
        let mut b = toy_config(dir.path(), Variant::VarySoft, vec![2], 80, 20);
        b.output_dir = dir.path().join("b");
        let ra = run_pet(&a).unwrap();
        let rb = run_pet(&b).unwrap();
        assert_eq!(ra.per_seed_acc, rb.per_seed_acc);
    }

    #[test]
    fn mean_accuracy_is_arithmetic_mean_of_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config(dir.path(), Variant::Finetune, vec![1, 2, 3], 60, 0);
        let report = run_pet(&config).unwrap();
        let expected = report.per_seed_acc.iter().sum::<f64>() / 3.0;
        assert!((report.mean_acc - expected).abs() < 1e-12);
        assert_eq!(report.seeds, vec![1, 2, 3]);
    }
}
