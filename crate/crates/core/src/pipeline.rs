//! The semi-supervised workflow: train diverse labeler models on the
//! few-shot set, soft-label the unlabeled pool by ensemble averaging, and
//! distill a final sequence classifier under KL divergence. Inference uses
//! only the final classifier.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::backbone::{MaskOutput, MaskedLm, SequenceClassifier, Vocab};
use crate::corpus::{Dataset, Example};
use crate::error::{Error, Result};
use crate::nn::{
    linear_schedule, mix_seed, seeded_rng, AdamW, Bound, Graph, Var,
};
use crate::reparam::ReparamBlock;
use crate::templates::{render, Template};
use crate::verbalizers::{
    class_distribution, manual_scores, proto_scores, proto_train_step, search_scores,
    search_verbalizer_fit, soft_verbalizer_scores, Distribution, ManualVerbalizer,
    Prototypes, SearchVerbalizerState, SoftVerbalizerState,
};

/// Optimization settings shared by every training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_lr() -> f64 {
    1e-5
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_batch_size() -> usize {
    2
}
fn default_epochs() -> usize {
    5
}
fn default_max_len() -> usize {
    64
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            schedule: Schedule::default(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            max_len: default_max_len(),
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("lr/weight_decay out of range".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument(
                "batch_size/epochs/max_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Linear,
    Constant,
}

/// One verbalizer behind a labeler model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum VerbalizerState {
    Manual(ManualVerbalizer),
    Proto(Prototypes),
    Soft(SoftVerbalizerState),
    Search(SearchVerbalizerState),
}

impl VerbalizerState {
    pub fn kind(&self) -> &'static str {
        match self {
            VerbalizerState::Manual(_) => "manual",
            VerbalizerState::Proto(_) => "proto",
            VerbalizerState::Soft(_) => "soft",
            VerbalizerState::Search(_) => "search",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            VerbalizerState::Manual(v) => v.num_classes(),
            VerbalizerState::Proto(p) => p.num_classes(),
            VerbalizerState::Soft(s) => s.num_classes(),
            VerbalizerState::Search(s) => s.num_classes(),
        }
    }

    /// Raw class scores for one MASK output.
    pub fn scores(&self, out: &MaskOutput, vocab: &Vocab) -> Result<Vec<f64>> {
        match self {
            VerbalizerState::Manual(v) => manual_scores(v, out, vocab),
            VerbalizerState::Proto(p) => proto_scores(p, &out.mask_hidden),
            VerbalizerState::Soft(s) => soft_verbalizer_scores(s, &out.mask_hidden),
            VerbalizerState::Search(s) => {
                if s.label_word_sets.is_empty() {
                    return Err(Error::InvalidArgument(
                        "search verbalizer not fitted yet".into(),
                    ));
                }
                Ok(search_scores(s, &out.mask_logits))
            }
        }
    }
}

/// Diagnostics and knobs attached to one labeler's training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Label words kept per class when fitting a search verbalizer.
    pub search_k: usize,
    pub stage1_epoch_losses: Vec<f64>,
    pub stage2_epoch_losses: Vec<f64>,
    pub flags: Vec<String>,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta {
            seed: 0,
            search_k: 3,
            stage1_epoch_losses: Vec::new(),
            stage2_epoch_losses: Vec::new(),
            flags: Vec::new(),
        }
    }
}

/// One prompt + verbalizer + backbone combination.
pub struct LabelerModel {
    pub backbone: MaskedLm,
    pub template: Template,
    /// Demonstration example resolved at build time and frozen.
    pub demo: Option<Example>,
    pub reparam: Option<ReparamBlock>,
    pub verbalizer: VerbalizerState,
    pub meta: TrainingMeta,
}

impl LabelerModel {
    pub fn new(
        backbone: MaskedLm,
        template: Template,
        demo: Option<Example>,
        reparam: Option<ReparamBlock>,
        verbalizer: VerbalizerState,
        seed: u64,
    ) -> Result<Self> {
        if template.has_demo() != demo.is_some() {
            return Err(Error::InvalidArgument(format!(
                "template {} demo mismatch",
                template.id
            )));
        }
        match (&reparam, template.bank_size()) {
            (Some(block), bank) if block.n_tokens != bank => {
                return Err(Error::ShapeMismatch(format!(
                    "reparam has {} tokens, template {} needs {bank}",
                    block.n_tokens, template.id
                )))
            }
            (None, bank) if bank > 0 => {
                return Err(Error::InvalidArgument(format!(
                    "template {} has soft slots but no reparameterization block",
                    template.id
                )))
            }
            _ => {}
        }
        if let Some(block) = &reparam {
            if block.d_hidden != backbone.d_model() {
                return Err(Error::ShapeMismatch(format!(
                    "reparam width {} vs backbone width {}",
                    block.d_hidden,
                    backbone.d_model()
                )));
            }
        }
        Ok(LabelerModel {
            backbone,
            template,
            demo,
            reparam,
            verbalizer,
            meta: TrainingMeta {
                seed,
                ..TrainingMeta::default()
            },
        })
    }

    /// The prompt-embedding rows for this labeler's soft slots, one row per
    /// slot in slot order (shared bank rows repeat for demo slots).
    pub fn soft_matrix(&self, slot_banks: &[usize]) -> Result<Array2<f64>> {
        match &self.reparam {
            None => Ok(Array2::zeros((0, self.backbone.d_model()))),
            Some(block) => {
                let bank = block.forward()?;
                let mut rows = Array2::zeros((slot_banks.len(), block.d_hidden));
                for (i, &b) in slot_banks.iter().enumerate() {
                    rows.row_mut(i).assign(&bank.row(b));
                }
                Ok(rows)
            }
        }
    }

    /// Class distribution for one example under this labeler.
    pub fn predict(&self, e: &Example, class_names: &[String], max_len: usize) -> Result<Distribution> {
        let r = render(&self.template, e, self.demo.as_ref(), class_names, max_len)?;
        let soft = self.soft_matrix(&r.soft_slot_banks())?;
        let out = self.backbone.encode_masked(&r, &soft)?;
        let scores = self.verbalizer.scores(&out, &self.backbone.vocab)?;
        class_distribution(&scores)
    }

    /// MASK outputs over a dataset with the current (frozen) parameters.
    fn mask_outputs(
        &self,
        examples: &[Example],
        class_names: &[String],
        max_len: usize,
    ) -> Result<Vec<MaskOutput>> {
        examples
            .iter()
            .map(|e| {
                let r = render(&self.template, e, self.demo.as_ref(), class_names, max_len)?;
                let soft = self.soft_matrix(&r.soft_slot_banks())?;
                self.backbone.encode_masked(&r, &soft)
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.backbone.save(dir)?;
        if let Some(block) = &self.reparam {
            crate::nn::save_checkpoint(
                &dir.join("reparam.json"),
                block,
                serde_json::json!({
                    "kind": "reparam",
                    "n_tokens": block.n_tokens,
                    "d_hidden": block.d_hidden,
                    "seed": block.seed,
                }),
            )?;
        }
        std::fs::write(
            dir.join("verbalizer.json"),
            serde_json::to_string_pretty(&self.verbalizer)?,
        )?;
        std::fs::write(
            dir.join("template.json"),
            serde_json::to_string_pretty(&self.template)?,
        )?;
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        if let Some(demo) = &self.demo {
            std::fs::write(dir.join("demo.json"), serde_json::to_string_pretty(demo)?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let backbone = MaskedLm::load(dir)?;
        let template: Template =
            serde_json::from_str(&std::fs::read_to_string(dir.join("template.json"))?)?;
        let verbalizer: VerbalizerState =
            serde_json::from_str(&std::fs::read_to_string(dir.join("verbalizer.json"))?)?;
        let meta: TrainingMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let demo = if dir.join("demo.json").exists() {
            Some(serde_json::from_str(&std::fs::read_to_string(
                dir.join("demo.json"),
            )?)?)
        } else {
            None
        };
        let reparam = if dir.join("reparam.json").exists() {
            let (meta, arrays) = crate::nn::load_checkpoint(&dir.join("reparam.json"))?;
            let n_tokens = meta["n_tokens"].as_u64().unwrap_or(0) as usize;
            let d_hidden = meta["d_hidden"].as_u64().unwrap_or(0) as usize;
            let seed = meta["seed"].as_u64().unwrap_or(0);
            let mut block = crate::reparam::init_block(n_tokens, d_hidden, seed)?;
            crate::nn::restore_params(&mut block, &arrays)?;
            Some(block)
        } else {
            None
        };
        let mut model = LabelerModel::new(backbone, template, demo, reparam, verbalizer, meta.seed)?;
        model.meta = meta;
        Ok(model)
    }
}

/// Shuffled index batches for one epoch.
fn epoch_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Class-score graph for one example under the labeler's verbalizer.
/// Frozen verbalizers enter as constants; a soft verbalizer trains jointly
/// and is bound through `soft_verb`.
fn scores_graph(
    g: &mut Graph,
    labeler: &LabelerModel,
    soft_verb: Option<&Bound>,
    hidden: Var,
    logits: Var,
) -> Result<Var> {
    match &labeler.verbalizer {
        VerbalizerState::Manual(v) => {
            let ids = v.resolve(&labeler.backbone.vocab)?;
            let logits_t = g.transpose(logits);
            let picked = g.select_rows(logits_t, ids);
            Ok(g.transpose(picked))
        }
        VerbalizerState::Proto(p) => {
            // Stage 1 freezes the prototypes: normalized rows are constants.
            let mut norm = p.vectors.clone();
            for mut row in norm.rows_mut() {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n == 0.0 {
                    return Err(Error::InvalidArgument("zero prototype vector".into()));
                }
                row.mapv_inplace(|x| x / n);
            }
            let protos = g.leaf(norm);
            let protos_t = g.transpose(protos);
            let h_norm = g.l2_normalize_rows(hidden);
            let cos = g.matmul(h_norm, protos_t);
            Ok(g.scale(cos, 1.0 / p.tau))
        }
        VerbalizerState::Soft(_) => {
            let bound = soft_verb.expect("soft verbalizer bound in stage 1");
            let emb = bound.var("class_embeddings");
            let emb_t = g.transpose(emb);
            Ok(g.matmul(hidden, emb_t))
        }
        VerbalizerState::Search(s) => {
            if s.label_word_sets.is_empty() {
                return Err(Error::InvalidArgument(
                    "search verbalizer must be fitted before scoring".into(),
                ));
            }
            let vocab_size = g.value(logits).dim().1;
            let mut weights = Array2::zeros((vocab_size, s.num_classes()));
            for (c, set) in s.label_word_sets.iter().enumerate() {
                for (t, w) in set {
                    weights[[*t, c]] += *w;
                }
            }
            let w = g.leaf(weights);
            Ok(g.matmul(logits, w))
        }
    }
}

/// Two-stage training of one labeler model.
///
/// Stage 1 freezes the verbalizer (prototypical/search case) and trains the
/// backbone plus the reparameterization block with cross-entropy; a soft
/// verbalizer trains jointly here. Stage 2 freezes everything learned so far
/// and fits the verbalizer: prototypes by contrastive losses, search by its
/// closed-form ranking, manual and soft by nothing.
pub fn train_labeler(
    labeler: &mut LabelerModel,
    train: &Dataset,
    h: &Hyperparameters,
) -> Result<()> {
    h.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset(train.name.clone()));
    }
    // A search verbalizer needs label words before cross-entropy exists:
    // bootstrap with a closed-form fit on the initialized model.
    let needs_bootstrap = matches!(
        &labeler.verbalizer,
        VerbalizerState::Search(s) if s.label_word_sets.is_empty()
    );
    if needs_bootstrap {
        let fitted = fit_search(labeler, train, h)?;
        labeler.verbalizer = VerbalizerState::Search(fitted);
    }
    if labeler.verbalizer.num_classes() != train.num_classes() {
        return Err(Error::ClassMismatch(format!(
            "verbalizer has {} classes, dataset has {}",
            labeler.verbalizer.num_classes(),
            train.num_classes()
        )));
    }

    train_labeler_stage1(labeler, train, h)?;
    train_labeler_stage2(labeler, train, h)
}

/// Stage 1 of the two-stage strategy: cross-entropy training of the
/// backbone, the reparameterization block, and (jointly) a soft verbalizer.
/// Prototypical and search verbalizers stay bitwise frozen here.
pub fn train_labeler_stage1(
    labeler: &mut LabelerModel,
    train: &Dataset,
    h: &Hyperparameters,
) -> Result<()> {
    stage1(labeler, train, h)
}

/// Stage 2: the backbone and prompts stay bitwise frozen while the
/// verbalizer fits — prototypes by the contrastive losses, search by its
/// closed-form ranking; manual and soft verbalizers have nothing to fit.
pub fn train_labeler_stage2(
    labeler: &mut LabelerModel,
    train: &Dataset,
    h: &Hyperparameters,
) -> Result<()> {
    match labeler.verbalizer.kind() {
        "proto" => stage2_proto(labeler, train, h)?,
        "search" => {
            let refit = fit_search(labeler, train, h)?;
            labeler.verbalizer = VerbalizerState::Search(refit);
        }
        _ => {}
    }
    Ok(())
}

fn fit_search(
    labeler: &LabelerModel,
    train: &Dataset,
    h: &Hyperparameters,
) -> Result<SearchVerbalizerState> {
    let outputs = labeler.mask_outputs(&train.examples, &train.class_names, h.max_len)?;
    let vocab_size = outputs[0].mask_logits.len();
    let mut rows = Array2::zeros((outputs.len(), vocab_size));
    for (i, out) in outputs.iter().enumerate() {
        for (j, l) in out.mask_logits.iter().enumerate() {
            rows[[i, j]] = *l;
        }
    }
    let labels: Vec<usize> = train
        .examples
        .iter()
        .map(|e| e.label.expect("labeled dataset"))
        .collect();
    search_verbalizer_fit(&rows, &labels, train.num_classes(), labeler.meta.search_k)
}

fn stage1(labeler: &mut LabelerModel, train: &Dataset, h: &Hyperparameters) -> Result<()> {
    let n = train.len();
    let n_batches = n.div_ceil(h.batch_size);
    let total_steps = h.epochs * n_batches;
    let mut opt_backbone = AdamW::new(h.lr, h.weight_decay);
    let mut opt_reparam = AdamW::new(h.lr, h.weight_decay);
    let mut opt_verb = AdamW::new(h.lr, h.weight_decay);
    let mut step = 0usize;

    for epoch in 0..h.epochs {
        let mut epoch_loss = 0.0;
        let batches = epoch_batches(n, h.batch_size, mix_seed(labeler.meta.seed, 1000 + epoch as u64));
        for batch in batches {
            let lr_scale = match h.schedule {
                Schedule::Linear => linear_schedule(step, total_steps),
                Schedule::Constant => 1.0,
            };
            let loss = stage1_step(
                labeler,
                train,
                &batch,
                h,
                lr_scale,
                &mut opt_backbone,
                &mut opt_reparam,
                &mut opt_verb,
            )?;
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        labeler.meta.stage1_epoch_losses.push(epoch_loss / n as f64);
    }
    let losses = &labeler.meta.stage1_epoch_losses;
    if losses.len() >= 2 && losses[losses.len() - 1] >= losses[0] {
        labeler.meta.flags.push("stage1_loss_not_decreasing".into());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn stage1_step(
    labeler: &mut LabelerModel,
    train: &Dataset,
    batch: &[usize],
    h: &Hyperparameters,
    lr_scale: f64,
    opt_backbone: &mut AdamW,
    opt_reparam: &mut AdamW,
    opt_verb: &mut AdamW,
) -> Result<f64> {
    let mut g = Graph::new();
    let bb_bound = Bound::new(&mut g, &labeler.backbone);
    let rp_bound = labeler.reparam.as_ref().map(|b| Bound::new(&mut g, b));
    let sv_bound = match &labeler.verbalizer {
        VerbalizerState::Soft(s) => Some(Bound::new(&mut g, s)),
        _ => None,
    };
    // The prompt bank is example-independent; build it once per step.
    let bank = labeler
        .reparam
        .as_ref()
        .map(|block| block.forward_graph(&mut g, rp_bound.as_ref().unwrap()));

    let mut example_losses = Vec::with_capacity(batch.len());
    for &idx in batch {
        let e = &train.examples[idx];
        let label = e.label.expect("labeled dataset");
        let r = render(
            &labeler.template,
            e,
            labeler.demo.as_ref(),
            &train.class_names,
            h.max_len,
        )?;
        let soft = bank.map(|bank_var| g.select_rows(bank_var, r.soft_slot_banks()));
        let (hidden, logits) = labeler
            .backbone
            .encode_masked_graph(&mut g, &bb_bound, &r, soft)?;
        let scores = scores_graph(&mut g, labeler, sv_bound.as_ref(), hidden, logits)?;
        let logp = g.log_softmax_rows(scores);
        let mut onehot = Array2::zeros((1, train.num_classes()));
        onehot[[0, label]] = 1.0;
        let onehot = g.leaf(onehot);
        let picked = g.mul(logp, onehot);
        let nll_sum = g.sum_all(picked);
        example_losses.push(g.scale(nll_sum, -1.0));
    }
    let mut total = example_losses[0];
    for l in &example_losses[1..] {
        total = g.add(total, *l);
    }
    let loss = g.scale(total, 1.0 / batch.len() as f64);
    let loss_value = g.scalar(loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite("stage-1 loss".into()));
    }
    let grads = g.backward(loss);
    let bb_grads = bb_bound.grads(&g, &grads);
    opt_backbone.step(&mut labeler.backbone, &bb_grads, lr_scale)?;
    if let (Some(bound), Some(block)) = (rp_bound, labeler.reparam.as_mut()) {
        let rp_grads = bound.grads(&g, &grads);
        crate::reparam::optimize_step(block, &rp_grads, opt_reparam, lr_scale)?;
    }
    if let Some(bound) = sv_bound {
        let sv_grads = bound.grads(&g, &grads);
        if let VerbalizerState::Soft(s) = &mut labeler.verbalizer {
            opt_verb.step(s, &sv_grads, lr_scale)?;
        }
    }
    Ok(loss_value)
}

fn stage2_proto(labeler: &mut LabelerModel, train: &Dataset, h: &Hyperparameters) -> Result<()> {
    let outputs = labeler.mask_outputs(&train.examples, &train.class_names, h.max_len)?;
    let d = labeler.backbone.d_model();
    let mut instances = Array2::zeros((outputs.len(), d));
    for (i, out) in outputs.iter().enumerate() {
        for (j, v) in out.mask_hidden.iter().enumerate() {
            instances[[i, j]] = *v;
        }
    }
    let labels: Vec<usize> = train
        .examples
        .iter()
        .map(|e| e.label.expect("labeled dataset"))
        .collect();

    // Full-batch contrastive updates, as many as stage 1 took gradient steps.
    let steps = h.epochs * train.len().div_ceil(h.batch_size);
    let mut opt = AdamW::new(h.lr, h.weight_decay);
    let proto = match &mut labeler.verbalizer {
        VerbalizerState::Proto(p) => p,
        _ => unreachable!("stage2_proto only runs for prototypical verbalizers"),
    };
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let lr_scale = match h.schedule {
            Schedule::Linear => linear_schedule(step, steps),
            Schedule::Constant => 1.0,
        };
        let (l_ins, l_proto) = proto_train_step(proto, &instances, &labels, &mut opt, lr_scale)?;
        losses.push(l_ins + l_proto);
    }
    labeler.meta.stage2_epoch_losses = losses;
    let l = &labeler.meta.stage2_epoch_losses;
    if l.len() >= 2 && l[l.len() - 1] >= l[0] {
        labeler.meta.flags.push("stage2_loss_not_decreasing".into());
    }
    Ok(())
}

/// Per-unlabeled-example target distributions from the labeler ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelSet {
    pub entries: Vec<(usize, Distribution)>,
    pub ensemble_size: usize,
}

impl SoftLabelSet {
    pub fn get(&self, id: usize) -> Option<&Distribution> {
        self.entries
            .iter()
            .find(|(eid, _)| *eid == id)
            .map(|(_, d)| d)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (id, p) in &self.entries {
            let line = serde_json::json!({ "id": id, "p": p.as_slice() });
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: &Path, ensemble_size: usize) -> Result<SoftLabelSet> {
        use std::io::BufRead;
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            #[derive(Deserialize)]
            struct Row {
                id: usize,
                p: Vec<f64>,
            }
            let row: Row = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            entries.push((row.id, Distribution::new(row.p)?));
        }
        Ok(SoftLabelSet {
            entries,
            ensemble_size,
        })
    }
}

/// Ensemble soft labeling: the target for each unlabeled example is the
/// arithmetic mean of the labelers' class distributions.
pub fn soft_label(
    labelers: &[LabelerModel],
    u: &Dataset,
    max_len: usize,
) -> Result<SoftLabelSet> {
    if labelers.is_empty() {
        return Err(Error::InvalidArgument("no labeler models".into()));
    }
    let c = labelers[0].verbalizer.num_classes();
    for l in labelers {
        if l.verbalizer.num_classes() != c {
            return Err(Error::ClassMismatch(format!(
                "labelers disagree on class count ({} vs {c})",
                l.verbalizer.num_classes()
            )));
        }
    }
    let z = labelers.len() as f64;
    let mut entries = Vec::with_capacity(u.len());
    for e in &u.examples {
        let mut acc = vec![0.0; c];
        for labeler in labelers {
            let p = labeler.predict(e, &u.class_names, max_len)?;
            for (a, v) in acc.iter_mut().zip(p.as_slice()) {
                *a += v;
            }
        }
        let mean: Vec<f64> = acc.into_iter().map(|a| a / z).collect();
        entries.push((e.id, Distribution::new(mean)?));
    }
    Ok(SoftLabelSet {
        entries,
        ensemble_size: labelers.len(),
    })
}

/// KL divergence `sum p_t ln(p_t / p_hat)` with the prediction clamped below
/// at 1e-12 and the `0 ln 0 = 0` convention.
pub fn kl_divergence(p_t: &Distribution, p_hat: &Distribution) -> Result<f64> {
    if p_t.len() != p_hat.len() {
        return Err(Error::ClassMismatch(format!(
            "target has {} classes, prediction {}",
            p_t.len(),
            p_hat.len()
        )));
    }
    Ok(p_t
        .as_slice()
        .iter()
        .zip(p_hat.as_slice())
        .map(|(&t, &q)| {
            if t == 0.0 {
                0.0
            } else {
                t * (t / q.max(1e-12)).ln()
            }
        })
        .sum())
}

/// Fine-tune the final classifier to match the soft labels under the
/// divergence loss. Returns the per-epoch mean KL values.
pub fn distill(
    final_model: &mut SequenceClassifier,
    soft: &SoftLabelSet,
    u: &Dataset,
    h: &Hyperparameters,
    seed: u64,
) -> Result<Vec<f64>> {
    h.validate()?;
    if u.is_empty() {
        return Err(Error::EmptyDataset(u.name.clone()));
    }
    let c = final_model.num_classes();
    if c != u.num_classes() {
        return Err(Error::ClassMismatch(format!(
            "classifier has {c} classes, dataset {}",
            u.num_classes()
        )));
    }
    // Coverage check before any training.
    let targets: Vec<&Distribution> = u
        .examples
        .iter()
        .map(|e| soft.get(e.id).ok_or(Error::CoverageGap(e.id)))
        .collect::<Result<_>>()?;
    for t in &targets {
        if t.len() != c {
            return Err(Error::ClassMismatch(format!(
                "soft label has {} classes, classifier {c}",
                t.len()
            )));
        }
    }

    let n = u.len();
    let n_batches = n.div_ceil(h.batch_size);
    let total_steps = h.epochs * n_batches;
    let mut opt = AdamW::new(h.lr, h.weight_decay);
    let mut epoch_kls = Vec::with_capacity(h.epochs);
    let mut step = 0usize;
    for epoch in 0..h.epochs {
        let mut kl_sum = 0.0;
        for batch in epoch_batches(n, h.batch_size, mix_seed(seed, 2000 + epoch as u64)) {
            let lr_scale = match h.schedule {
                Schedule::Linear => linear_schedule(step, total_steps),
                Schedule::Constant => 1.0,
            };
            let mut g = Graph::new();
            let bound = Bound::new(&mut g, final_model);
            let mut example_losses = Vec::with_capacity(batch.len());
            for &idx in &batch {
                let e = &u.examples[idx];
                let ids = final_model.input_ids(e)?;
                let logits = final_model.logits_graph(&mut g, &bound, &ids);
                let logp = g.log_softmax_rows(logits);
                let target = Array2::from_shape_vec((1, c), targets[idx].as_slice().to_vec())
                    .expect("target shape");
                let target_entropy = targets[idx].entropy();
                let target = g.leaf(target);
                let picked = g.mul(logp, target);
                let ce = g.sum_all(picked);
                let ce = g.scale(ce, -1.0);
                // KL = cross-entropy minus target entropy; the constant term
                // does not affect gradients but keeps the reported loss honest.
                kl_sum += g.scalar(ce) - target_entropy;
                example_losses.push(ce);
            }
            let mut total = example_losses[0];
            for l in &example_losses[1..] {
                total = g.add(total, *l);
            }
            let loss = g.scale(total, 1.0 / batch.len() as f64);
            if !g.scalar(loss).is_finite() {
                return Err(Error::NonFinite("distillation loss".into()));
            }
            let grads = g.backward(loss);
            let grad_map = bound.grads(&g, &grads);
            opt.step(final_model, &grad_map, lr_scale)?;
            step += 1;
        }
        epoch_kls.push(kl_sum / n as f64);
    }
    Ok(epoch_kls)
}

/// Supervised fine-tuning of the classifier on a labeled set (the
/// fine-tune baseline; also reused to train toy probes).
pub fn train_classifier_supervised(
    model: &mut SequenceClassifier,
    train: &Dataset,
    h: &Hyperparameters,
    seed: u64,
) -> Result<Vec<f64>> {
    h.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset(train.name.clone()));
    }
    let c = model.num_classes();
    let n = train.len();
    let n_batches = n.div_ceil(h.batch_size);
    let total_steps = h.epochs * n_batches;
    let mut opt = AdamW::new(h.lr, h.weight_decay);
    let mut epoch_losses = Vec::with_capacity(h.epochs);
    let mut step = 0usize;
    for epoch in 0..h.epochs {
        let mut loss_sum = 0.0;
        for batch in epoch_batches(n, h.batch_size, mix_seed(seed, 3000 + epoch as u64)) {
            let lr_scale = match h.schedule {
                Schedule::Linear => linear_schedule(step, total_steps),
                Schedule::Constant => 1.0,
            };
            let mut g = Graph::new();
            let bound = Bound::new(&mut g, model);
            let mut example_losses = Vec::with_capacity(batch.len());
            for &idx in &batch {
                let e = &train.examples[idx];
                let label = e.label.expect("labeled dataset");
                let ids = model.input_ids(e)?;
                let logits = model.logits_graph(&mut g, &bound, &ids);
                let logp = g.log_softmax_rows(logits);
                let mut onehot = Array2::zeros((1, c));
                onehot[[0, label]] = 1.0;
                let onehot = g.leaf(onehot);
                let picked = g.mul(logp, onehot);
                let nll = g.sum_all(picked);
                example_losses.push(g.scale(nll, -1.0));
            }
            let mut total = example_losses[0];
            for l in &example_losses[1..] {
                total = g.add(total, *l);
            }
            let loss = g.scale(total, 1.0 / batch.len() as f64);
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite("classifier loss".into()));
            }
            loss_sum += value * batch.len() as f64;
            let grads = g.backward(loss);
            let grad_map = bound.grads(&g, &grads);
            opt.step(model, &grad_map, lr_scale)?;
            step += 1;
        }
        epoch_losses.push(loss_sum / n as f64);
    }
    Ok(epoch_losses)
}

/// Apply the final classifier to the test set. No labeler model is consulted.
pub fn predict_final(
    final_model: &SequenceClassifier,
    test: &Dataset,
) -> Result<(Vec<usize>, f64)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset(test.name.clone()));
    }
    if final_model.num_classes() != test.num_classes() {
        return Err(Error::ClassMismatch(format!(
            "classifier has {} classes, test set {}",
            final_model.num_classes(),
            test.num_classes()
        )));
    }
    let mut predictions = Vec::with_capacity(test.len());
    let mut correct = 0usize;
    for e in &test.examples {
        let d = final_model.classify(e)?;
        let pred = d.argmax();
        if Some(pred) == e.label {
            correct += 1;
        }
        predictions.push(pred);
    }
    Ok((predictions, correct as f64 / test.len() as f64))
}

/// Accuracy of a labeler used directly as a classifier (supervised-only
/// prompt variant).
pub fn predict_with_labeler(
    labeler: &LabelerModel,
    test: &Dataset,
    max_len: usize,
) -> Result<(Vec<usize>, f64)> {
    if test.is_empty() {
        return Err(Error::EmptyDataset(test.name.clone()));
    }
    let mut predictions = Vec::with_capacity(test.len());
    let mut correct = 0usize;
    for e in &test.examples {
        let d = labeler.predict(e, &test.class_names, max_len)?;
        let pred = d.argmax();
        if Some(pred) == e.label {
            correct += 1;
        }
        predictions.push(pred);
    }
    Ok((predictions, correct as f64 / test.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{make_toy_backbone, BackboneConfig};
    use crate::corpus::synth;
    use crate::corpus::{sample_few_shot, strip_labels, DatasetKind, FewShotMode, FewShotSpec};
    use crate::nn::Params;
    use crate::templates::build_vary_soft_family;

    fn toy_hp() -> Hyperparameters {
        Hyperparameters {
            lr: 3e-3,
            weight_decay: 0.01,
            schedule: Schedule::Linear,
            batch_size: 2,
            epochs: 25,
            max_len: 32,
        }
    }

    fn toy_setup(seed: u64) -> (Dataset, Dataset, Dataset, Vocab) {
        let pool = synth::marker_dataset("markers", 120, seed);
        let few = sample_few_shot(
            &pool,
            &FewShotSpec {
                mode: FewShotMode::PerClass,
                k: 8,
                seed,
            },
        )
        .unwrap();
        let residual = pool.without_ids(&few.ids());
        let unlabeled = strip_labels(&residual, 60, mix_seed(seed, 4)).unwrap();
        let test = Dataset {
            kind: DatasetKind::Test,
            ..synth::marker_dataset("markers-test", 40, mix_seed(seed, 5))
        };
        let texts: Vec<String> = few
            .examples
            .iter()
            .chain(&unlabeled.examples)
            .map(|e| e.text_a.clone())
            .collect();
        let required: Vec<String> = few
            .class_names
            .iter()
            .cloned()
            .chain(["Category:".to_string()])
            .collect();
        let vocab = Vocab::build(texts.iter().map(|s| s.as_str()), &required, 128).unwrap();
        (few, unlabeled, test, vocab)
    }

    fn toy_labeler(
        vocab: &Vocab,
        train: &Dataset,
        n_soft: usize,
        seed: u64,
    ) -> LabelerModel {
        let cfg = BackboneConfig::toy(32, 32, 128, seed);
        let backbone = make_toy_backbone(&cfg, vocab.clone()).unwrap();
        let template = build_vary_soft_family(train.task, &[n_soft]).unwrap().remove(0);
        let reparam = crate::reparam::init_block(n_soft, 32, mix_seed(seed, 9)).unwrap();
        LabelerModel::new(
            backbone,
            template,
            None,
            Some(reparam),
            VerbalizerState::Proto(Prototypes::init(2, 32, 1.0, mix_seed(seed, 10))),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn kl_divergence_hand_values() {
        let p = Distribution::new(vec![1.0, 0.0]).unwrap();
        let q = Distribution::new(vec![0.5, 0.5]).unwrap();
        assert!((kl_divergence(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);

        let p2 = Distribution::new(vec![0.5, 0.5]).unwrap();
        let q2 = Distribution::new(vec![0.25, 0.75]).unwrap();
        let expected = 0.5 * 2.0_f64.ln() + 0.5 * (2.0_f64 / 3.0).ln();
        assert!((kl_divergence(&p2, &q2).unwrap() - expected).abs() < 1e-9);

        // Clamp keeps the value finite when the prediction has a hard zero.
        let hard = Distribution::new(vec![0.0, 1.0]).unwrap();
        let v = kl_divergence(&p, &hard).unwrap();
        assert!(v.is_finite() && v > 0.0);
        let mismatched = Distribution::uniform(3);
        assert!(kl_divergence(&p, &mismatched).is_err());
    }

    #[test]
    fn soft_label_is_the_arithmetic_mean() {
        let (few, unlabeled, _, vocab) = toy_setup(31);
        let labelers: Vec<LabelerModel> = (0..3)
            .map(|i| toy_labeler(&vocab, &few, i + 1, 100 + i as u64))
            .collect();
        let small = Dataset {
            examples: unlabeled.examples[..6].to_vec(),
            ..unlabeled.clone()
        };
        let soft = soft_label(&labelers, &small, 32).unwrap();
        assert_eq!(soft.ensemble_size, 3);
        assert_eq!(soft.entries.len(), 6);
        for (id, p) in &soft.entries {
            let e = small.example_by_id(*id).unwrap();
            let mut mean = vec![0.0; 2];
            for l in &labelers {
                let d = l.predict(e, &small.class_names, 32).unwrap();
                for (m, v) in mean.iter_mut().zip(d.as_slice()) {
                    *m += v / 3.0;
                }
            }
            for (a, b) in p.as_slice().iter().zip(&mean) {
                assert!((a - b).abs() < 1e-9);
            }
        }

        // Single labeler: identity.
        let one = soft_label(&labelers[..1], &small, 32).unwrap();
        assert_eq!(one.ensemble_size, 1);
        for (id, p) in &one.entries {
            let e = small.example_by_id(*id).unwrap();
            let d = labelers[0].predict(e, &small.class_names, 32).unwrap();
            for (a, b) in p.as_slice().iter().zip(d.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_label_rejects_class_mismatch() {
        let (few, unlabeled, _, vocab) = toy_setup(32);
        let a = toy_labeler(&vocab, &few, 1, 1);
        let mut b = toy_labeler(&vocab, &few, 2, 2);
        b.verbalizer = VerbalizerState::Proto(Prototypes::init(3, 32, 1.0, 3));
        assert!(matches!(
            soft_label(&[a, b], &unlabeled, 32),
            Err(Error::ClassMismatch(_))
        ));
    }

    #[test]
    fn staged_training_freezes_the_right_parameters() {
        let (few, _, _, vocab) = toy_setup(33);
        let mut labeler = toy_labeler(&vocab, &few, 2, 7);
        let h = Hyperparameters {
            epochs: 2,
            ..toy_hp()
        };

        // Stage 1 must leave the prototypes bitwise unchanged.
        let proto_before = match &labeler.verbalizer {
            VerbalizerState::Proto(p) => p.fingerprint(),
            _ => unreachable!(),
        };
        stage1(&mut labeler, &few, &h).unwrap();
        let proto_after_stage1 = match &labeler.verbalizer {
            VerbalizerState::Proto(p) => p.fingerprint(),
            _ => unreachable!(),
        };
        assert_eq!(proto_before, proto_after_stage1);

        // Stage 2 must leave backbone and reparam bitwise unchanged.
        let bb_before = labeler.backbone.fingerprint();
        let rp_before = labeler.reparam.as_ref().unwrap().fingerprint();
        stage2_proto(&mut labeler, &few, &h).unwrap();
        assert_eq!(bb_before, labeler.backbone.fingerprint());
        assert_eq!(rp_before, labeler.reparam.as_ref().unwrap().fingerprint());
        let proto_after_stage2 = match &labeler.verbalizer {
            VerbalizerState::Proto(p) => p.fingerprint(),
            _ => unreachable!(),
        };
        assert_ne!(proto_after_stage1, proto_after_stage2);
    }

    #[test]
    fn train_labeler_learns_separable_markers() {
        let (few, _, test, vocab) = toy_setup(34);
        let mut labeler = toy_labeler(&vocab, &few, 2, 11);
        train_labeler(&mut labeler, &few, &toy_hp()).unwrap();
        let losses = &labeler.meta.stage1_epoch_losses;
        assert!(losses[losses.len() - 1] < losses[0], "{losses:?}");
        let as_test = Dataset {
            kind: DatasetKind::Test,
            ..few.clone()
        };
        let (_, train_acc) = predict_with_labeler(&labeler, &as_test, 32).unwrap();
        assert!(train_acc >= 0.95, "labeler train accuracy {train_acc}");
        let (_, test_acc) = predict_with_labeler(&labeler, &test, 32).unwrap();
        assert!(test_acc >= 0.8, "labeler held-out accuracy {test_acc}");
    }

    #[test]
    fn soft_verbalizer_trains_jointly_in_stage_one() {
        let (few, _, _, vocab) = toy_setup(61);
        let mut labeler = toy_labeler(&vocab, &few, 2, 19);
        labeler.verbalizer =
            VerbalizerState::Soft(crate::verbalizers::SoftVerbalizerState::init(2, 32, 4));
        let emb_before = match &labeler.verbalizer {
            VerbalizerState::Soft(s) => s.fingerprint(),
            _ => unreachable!(),
        };
        let h = Hyperparameters {
            epochs: 15,
            ..toy_hp()
        };
        train_labeler(&mut labeler, &few, &h).unwrap();
        let emb_after = match &labeler.verbalizer {
            VerbalizerState::Soft(s) => s.fingerprint(),
            _ => unreachable!(),
        };
        assert_ne!(emb_before, emb_after, "class embeddings never updated");
        let losses = &labeler.meta.stage1_epoch_losses;
        assert!(losses[losses.len() - 1] < losses[0], "{losses:?}");
        let as_test = Dataset {
            kind: DatasetKind::Test,
            ..few.clone()
        };
        let (_, acc) = predict_with_labeler(&labeler, &as_test, 32).unwrap();
        assert!(acc >= 0.9, "soft-verbalizer train accuracy {acc}");
    }

    #[test]
    fn search_verbalizer_bootstraps_then_refits() {
        let (few, _, _, vocab) = toy_setup(62);
        let mut labeler = toy_labeler(&vocab, &few, 1, 23);
        labeler.verbalizer = VerbalizerState::Search(SearchVerbalizerState {
            label_word_sets: Vec::new(),
        });
        labeler.meta.search_k = 2;
        let h = Hyperparameters {
            epochs: 3,
            ..toy_hp()
        };
        train_labeler(&mut labeler, &few, &h).unwrap();
        let state = match &labeler.verbalizer {
            VerbalizerState::Search(s) => s,
            _ => unreachable!(),
        };
        assert_eq!(state.label_word_sets.len(), 2);
        assert!(state.label_word_sets.iter().all(|s| s.len() == 2));
        let e = &few.examples[0];
        let d = labeler.predict(e, &few.class_names, 32).unwrap();
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn manual_verbalizer_trains_through_label_word_logits() {
        // Four-class topic corpus whose marker words double as the manual
        // verbalizer's label words.
        let class_names = ["World", "Sports", "Business", "Technology"];
        let markers = ["earth", "goal", "trade", "chip"];
        let pool = synth::marker_dataset_with("agnews", 120, 71, &markers, &class_names);
        let few = sample_few_shot(
            &pool,
            &FewShotSpec {
                mode: FewShotMode::PerClass,
                k: 6,
                seed: 1,
            },
        )
        .unwrap();
        let label_words: Vec<String> = class_names.iter().map(|s| s.to_string()).collect();
        let vocab = Vocab::build(
            few.examples.iter().map(|e| e.text_a.as_str()),
            &label_words,
            128,
        )
        .unwrap();
        let cfg = BackboneConfig::toy(32, 32, 128, 31);
        let backbone = make_toy_backbone(&cfg, vocab).unwrap();
        let (template, verbalizer) = crate::templates::manual_catalog("agnews")
            .unwrap()
            .remove(0);
        let mut labeler = LabelerModel::new(
            backbone,
            template,
            None,
            None,
            VerbalizerState::Manual(verbalizer),
            31,
        )
        .unwrap();
        let h = Hyperparameters {
            epochs: 25,
            ..toy_hp()
        };
        train_labeler(&mut labeler, &few, &h).unwrap();
        let losses = &labeler.meta.stage1_epoch_losses;
        assert!(losses[losses.len() - 1] < losses[0], "{losses:?}");
        let as_test = Dataset {
            kind: DatasetKind::Test,
            ..few.clone()
        };
        let (_, acc) = predict_with_labeler(&labeler, &as_test, 32).unwrap();
        assert!(acc >= 0.9, "manual-verbalizer train accuracy {acc}");
    }

    #[test]
    fn labeler_checkpoint_roundtrip() {
        let (few, _, _, vocab) = toy_setup(35);
        let mut labeler = toy_labeler(&vocab, &few, 2, 13);
        let h = Hyperparameters {
            epochs: 1,
            ..toy_hp()
        };
        train_labeler(&mut labeler, &few, &h).unwrap();
        let dir = tempfile::tempdir().unwrap();
        labeler.save(dir.path()).unwrap();
        let back = LabelerModel::load(dir.path()).unwrap();
        assert_eq!(labeler.backbone.fingerprint(), back.backbone.fingerprint());
        assert_eq!(labeler.template, back.template);
        assert_eq!(labeler.verbalizer, back.verbalizer);
        assert_eq!(
            labeler.reparam.as_ref().unwrap().fingerprint(),
            back.reparam.as_ref().unwrap().fingerprint()
        );
        let e = &few.examples[0];
        let a = labeler.predict(e, &few.class_names, 32).unwrap();
        let b = back.predict(e, &few.class_names, 32).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn distill_rejects_coverage_gap_and_learns_one_hot_labels() {
        let (_, unlabeled, test, vocab) = toy_setup(36);
        let cfg = BackboneConfig::toy(32, 32, 128, 21);
        let mut clf = SequenceClassifier::new_toy(&cfg, vocab.clone(), 2, 21).unwrap();

        // One-hot soft labels from the true markers (the unlabeled pool is
        // synthetic, so ground truth is recoverable from the marker word).
        let entries: Vec<(usize, Distribution)> = unlabeled
            .examples
            .iter()
            .map(|e| {
                let class = if e.text_a.contains(synth::MARKERS[0]) { 0 } else { 1 };
                (e.id, Distribution::one_hot(2, class))
            })
            .collect();
        let mut soft = SoftLabelSet {
            entries,
            ensemble_size: 1,
        };

        // A missing id is rejected before any training happens.
        let removed = soft.entries.pop().unwrap();
        assert!(matches!(
            distill(&mut clf, &soft, &unlabeled, &toy_hp(), 3),
            Err(Error::CoverageGap(_))
        ));
        soft.entries.push(removed);

        let kls = distill(&mut clf, &soft, &unlabeled, &toy_hp(), 3).unwrap();
        assert!(kls[kls.len() - 1] < kls[0], "{kls:?}");
        let (_, acc) = predict_final(&clf, &test).unwrap();
        assert!(acc >= 0.9, "final accuracy {acc}");
    }

    #[test]
    fn distill_on_uniform_targets_keeps_predictions_near_uniform() {
        let (_, unlabeled, test, vocab) = toy_setup(37);
        let cfg = BackboneConfig::toy(32, 32, 128, 22);
        let mut clf = SequenceClassifier::new_toy(&cfg, vocab, 2, 22).unwrap();
        let soft = SoftLabelSet {
            entries: unlabeled
                .examples
                .iter()
                .map(|e| (e.id, Distribution::uniform(2)))
                .collect(),
            ensemble_size: 1,
        };
        distill(&mut clf, &soft, &unlabeled, &toy_hp(), 4).unwrap();
        let mean_entropy: f64 = test
            .examples
            .iter()
            .map(|e| clf.classify(e).unwrap().entropy())
            .sum::<f64>()
            / test.len() as f64;
        let max_entropy = (2.0_f64).ln();
        assert!(
            (max_entropy - mean_entropy) / max_entropy < 0.05,
            "mean entropy {mean_entropy} vs ln C {max_entropy}"
        );
    }

    #[test]
    fn supervised_classifier_reaches_high_train_accuracy() {
        let pool = synth::marker_dataset("markers", 60, 41);
        let vocab = Vocab::build(
            pool.examples.iter().map(|e| e.text_a.as_str()),
            &[],
            128,
        )
        .unwrap();
        let cfg = BackboneConfig::toy(32, 32, 128, 23);
        let mut clf = SequenceClassifier::new_toy(&cfg, vocab, 2, 23).unwrap();
        let h = Hyperparameters {
            epochs: 6,
            ..toy_hp()
        };
        train_classifier_supervised(&mut clf, &pool, &h, 5).unwrap();
        let mut correct = 0;
        for e in &pool.examples {
            if clf.classify(e).unwrap().argmax() == e.label.unwrap() {
                correct += 1;
            }
        }
        let acc = correct as f64 / pool.len() as f64;
        assert!(acc >= 0.95, "train accuracy {acc}");
    }

    #[test]
    fn predict_final_contract_errors() {
        let (_, _, test, vocab) = toy_setup(38);
        let cfg = BackboneConfig::toy(32, 32, 128, 24);
        let clf = SequenceClassifier::new_toy(&cfg, vocab.clone(), 2, 24).unwrap();
        let empty = Dataset {
            examples: vec![],
            ..test.clone()
        };
        assert!(predict_final(&clf, &empty).is_err());
        let three = SequenceClassifier::new_toy(&cfg, vocab, 3, 25).unwrap();
        assert!(matches!(
            predict_final(&three, &test),
            Err(Error::ClassMismatch(_))
        ));
    }

    #[test]
    fn soft_labels_roundtrip_jsonl() {
        let soft = SoftLabelSet {
            entries: vec![
                (0, Distribution::new(vec![0.25, 0.75]).unwrap()),
                (3, Distribution::new(vec![0.5, 0.5]).unwrap()),
            ],
            ensemble_size: 2,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("soft_labels.jsonl");
        soft.save_jsonl(&path).unwrap();
        let back = SoftLabelSet::load_jsonl(&path, 2).unwrap();
        assert_eq!(soft, back);
    }
}
