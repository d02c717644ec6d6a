//! Semi-supervised prompt tuning: automatically generated continuous
//! prompts (demonstration-augmented and varying-length soft tokens),
//! automatic verbalizers (prototypical, soft, search-based), ensemble soft
//! labeling of unlabeled text, and KL-divergence distillation into a final
//! sequence classifier.
//!
//! See the README for the pipeline walkthrough and the CLI; the module map:
//!
//! - [`corpus`] — datasets, few-shot sampling, unlabeled pools
//! - [`templates`] — prompt templates, rendering, truncation
//! - [`reparam`] — LSTM+MLP reparameterization of soft-prompt embeddings
//! - [`backbone`] — masked-LM abstraction with soft-embedding injection
//! - [`verbalizers`] — MASK output to class distributions
//! - [`pipeline`] — two-stage labeler training, soft labeling, distillation
//! - [`runner`] — run directories and staged execution
//! - [`harness`] — experiment grids and result tables
//! - [`config`] — TOML run configuration
//! - [`nn`] — the autodiff/optimizer substrate

pub mod backbone;
pub mod config;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod nn;
pub mod pipeline;
pub mod reparam;
pub mod runner;
pub mod templates;
pub mod verbalizers;

pub use error::{Error, Result};

pub use backbone::{make_toy_backbone, BackboneConfig, MaskOutput, MaskedLm, SequenceClassifier, Vocab};
pub use config::{RunConfig, Variant};
pub use corpus::{load_dataset, sample_few_shot, strip_labels, Dataset, Example, FewShotSpec};
pub use pipeline::{
    distill, kl_divergence, predict_final, soft_label, train_labeler, Hyperparameters,
    LabelerModel, SoftLabelSet,
};
pub use reparam::{init_block, ReparamBlock};
pub use runner::{run_pet, RunReport};
pub use templates::{
    build_demo_soft_family, build_vary_soft_family, make_demo, manual_catalog, render, truncate,
    RenderedSequence, Template,
};
pub use verbalizers::{class_distribution, proto_predict, Distribution, Prototypes};
