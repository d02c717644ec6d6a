//! Run configuration: a TOML file naming the dataset, variant, few-shot
//! spec, backbone, hyperparameters and prompt/verbalizer settings. A
//! snapshot of the parsed config is always written into the run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::corpus::{load_dataset, Dataset, DatasetKind, DatasetMeta, FewShotSpec, Task};
use crate::error::{Error, Result};
use crate::pipeline::Hyperparameters;
use crate::verbalizers::ProtoNorm;

/// The experiment variants of the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// K demonstration-augmented soft prompts, SSL.
    DemoSoft,
    /// Soft prompts of varying length (one labeler per length), SSL.
    VarySoft,
    /// A single fixed-length soft prompt labeler, SSL.
    FixedSoft,
    /// Manual prompts paired with the prototypical verbalizer, SSL.
    ProtoverbManual,
    /// Manual prompts and manual verbalizers, SSL.
    Manual,
    /// Supervised fine-tuning only; no prompts, no unlabeled data.
    Finetune,
    /// One demonstration-augmented prompt model, supervised only.
    DemoSoftSl,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::DemoSoft => "demo_soft",
            Variant::VarySoft => "vary_soft",
            Variant::FixedSoft => "fixed_soft",
            Variant::ProtoverbManual => "protoverb_manual",
            Variant::Manual => "manual",
            Variant::Finetune => "finetune",
            Variant::DemoSoftSl => "demo_soft_sl",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "demo_soft" => Ok(Variant::DemoSoft),
            "vary_soft" => Ok(Variant::VarySoft),
            "fixed_soft" => Ok(Variant::FixedSoft),
            "protoverb_manual" => Ok(Variant::ProtoverbManual),
            "manual" => Ok(Variant::Manual),
            "finetune" => Ok(Variant::Finetune),
            "demo_soft_sl" => Ok(Variant::DemoSoftSl),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }

    /// Whether this variant trains labeler models at all.
    pub fn has_labelers(&self) -> bool {
        !matches!(self, Variant::Finetune)
    }

    /// Whether this variant consumes the unlabeled pool.
    pub fn uses_unlabeled(&self) -> bool {
        !matches!(self, Variant::Finetune | Variant::DemoSoftSl)
    }

    /// Whether the manual prompt catalog is required.
    pub fn uses_manual_catalog(&self) -> bool {
        matches!(self, Variant::ProtoverbManual | Variant::Manual)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub task: Task,
    pub class_names: Vec<String>,
    /// Labeled pool the few-shot set is drawn from.
    pub train: PathBuf,
    pub test: PathBuf,
    /// Pre-materialized unlabeled pool, if any.
    #[serde(default)]
    pub unlabeled: Option<PathBuf>,
    /// Otherwise: strip labels from this many residual-pool examples.
    #[serde(default)]
    pub unlabeled_n: Option<usize>,
    #[serde(default)]
    pub unlabeled_seed: u64,
}

impl DatasetConfig {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            task: self.task,
            class_names: self.class_names.clone(),
        }
    }

    pub fn load_train(&self) -> Result<Dataset> {
        load_dataset(&self.train, &self.meta(), DatasetKind::Labeled)
    }

    pub fn load_test(&self) -> Result<Dataset> {
        load_dataset(&self.test, &self.meta(), DatasetKind::Test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Soft tokens per prompt for the demo and fixed families.
    #[serde(default = "default_n_soft")]
    pub n_soft: usize,
    /// Number of demonstration-augmented templates (labelers).
    #[serde(default = "default_k_templates")]
    pub k_templates: usize,
    /// Soft-token counts of the varying-length family.
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub demo_seed: u64,
}

fn default_n_soft() -> usize {
    5
}
fn default_k_templates() -> usize {
    5
}
fn default_n_list() -> Vec<usize> {
    vec![1, 2, 3, 4, 5]
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            n_soft: default_n_soft(),
            k_templates: default_k_templates(),
            n_list: default_n_list(),
            demo_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbalizerKind {
    #[default]
    Proto,
    Soft,
    Search,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalizerConfig {
    #[serde(default)]
    pub kind: VerbalizerKind,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub norm: ProtoNorm,
    #[serde(default = "default_search_k")]
    pub search_k: usize,
    /// Which manual verbalizer word set to use for datasets that define
    /// several (MNLI's second set has index 1).
    #[serde(default)]
    pub manual_index: usize,
}

fn default_tau() -> f64 {
    1.0
}
fn default_search_k() -> usize {
    3
}

impl Default for VerbalizerConfig {
    fn default() -> Self {
        VerbalizerConfig {
            kind: VerbalizerKind::default(),
            tau: default_tau(),
            norm: ProtoNorm::default(),
            search_k: default_search_k(),
            manual_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub few_shot: FewShotSpec,
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
    #[serde(default)]
    pub prompts: PromptConfig,
    #[serde(default)]
    pub verbalizer: VerbalizerConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed required".into()));
        }
        let unique: std::collections::BTreeSet<u64> = self.seeds.iter().cloned().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.dataset.class_names.len() < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        self.hyperparameters.validate()?;
        if self.hyperparameters.max_len > self.backbone.max_len {
            return Err(Error::Config(format!(
                "hyperparameters.max_len {} exceeds backbone.max_len {}",
                self.hyperparameters.max_len, self.backbone.max_len
            )));
        }
        if self.variant.uses_unlabeled()
            && self.dataset.unlabeled.is_none()
            && self.dataset.unlabeled_n.is_none()
        {
            return Err(Error::Config(format!(
                "variant {} needs an unlabeled pool: set dataset.unlabeled or dataset.unlabeled_n",
                self.variant
            )));
        }
        if self.variant.uses_manual_catalog() {
            // Fails fast on datasets without a manual catalog entry.
            crate::templates::manual_catalog(&self.dataset.name)?;
            let sets = crate::templates::manual_verbalizer_words(&self.dataset.name)?;
            if self.verbalizer.manual_index >= sets.len() {
                return Err(Error::Config(format!(
                    "manual_index {} out of range ({} verbalizer sets)",
                    self.verbalizer.manual_index,
                    sets.len()
                )));
            }
        }
        if matches!(self.variant, Variant::VarySoft) && self.prompts.n_list.is_empty() {
            return Err(Error::Config("vary_soft needs a non-empty n_list".into()));
        }
        Ok(())
    }

    /// Write the exact configuration into the run directory.
    pub fn snapshot(&self, run_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(run_dir)?;
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("serializing snapshot: {e}")))?;
        std::fs::write(run_dir.join("config.snapshot"), text)?;
        Ok(())
    }

    pub fn load_snapshot(run_dir: &Path) -> Result<RunConfig> {
        RunConfig::load(&run_dir.join("config.snapshot"))
    }
}
