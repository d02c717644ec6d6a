//! Verbalizers: map MASK-position model output to class distributions.
//!
//! Four families: manual label words, prototypical (class prototype vectors
//! compared by cosine similarity, trained contrastively), soft (trainable
//! class embeddings), and search-based (label words mined from MASK
//! log-probabilities).

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::backbone::{MaskOutput, Vocab};
use crate::error::{Error, Result};
use crate::nn::{log_softmax_rows, randn, seeded_rng, Bound, GradMap, Graph, Params, Var};

/// A probability vector over classes: nonnegative, sums to 1 within 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidArgument("empty distribution".into()));
        }
        if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::NonFinite("distribution entries".into()));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {sum}, not 1"
            )));
        }
        Ok(Distribution(p))
    }

    pub fn uniform(c: usize) -> Self {
        Distribution(vec![1.0 / c as f64; c])
    }

    pub fn one_hot(c: usize, class: usize) -> Self {
        let mut p = vec![0.0; c];
        p[class] = 1.0;
        Distribution(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn entropy(&self) -> f64 {
        self.0
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }
}

/// Softmax of raw class scores (shift-invariant, numerically stable).
pub fn class_distribution(scores: &[f64]) -> Result<Distribution> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no class scores".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("class scores".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    Distribution::new(exp.into_iter().map(|e| e / sum).collect())
}

/// One label word per class; words must resolve to single vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualVerbalizer {
    pub label_words: Vec<String>,
}

impl ManualVerbalizer {
    pub fn new(label_words: Vec<String>) -> Self {
        assert!(!label_words.is_empty(), "verbalizer needs label words");
        let unique: std::collections::BTreeSet<&String> = label_words.iter().collect();
        assert_eq!(
            unique.len(),
            label_words.len(),
            "verbalizer label words must be distinct"
        );
        ManualVerbalizer { label_words }
    }

    pub fn num_classes(&self) -> usize {
        self.label_words.len()
    }

    pub fn resolve(&self, vocab: &Vocab) -> Result<Vec<usize>> {
        self.label_words
            .iter()
            .map(|w| {
                vocab
                    .lookup(w)
                    .ok_or_else(|| Error::OutOfVocabulary(w.clone()))
            })
            .collect()
    }
}

/// Class scores are the MASK-position logits at each label word's id.
pub fn manual_scores(v: &ManualVerbalizer, out: &MaskOutput, vocab: &Vocab) -> Result<Vec<f64>> {
    let ids = v.resolve(vocab)?;
    Ok(ids.iter().map(|&id| out.mask_logits[id]).collect())
}

/// Trainable class prototype vectors with a softmax temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototypes {
    pub vectors: Array2<f64>,
    pub tau: f64,
}

impl Prototypes {
    /// Zero-mean random initialization, scale 0.02.
    pub fn init(num_classes: usize, d_model: usize, tau: f64, seed: u64) -> Self {
        Prototypes {
            vectors: randn(&mut seeded_rng(seed), num_classes, d_model, 0.02),
            tau,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.dim().0
    }
}

impl Params for Prototypes {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f("prototypes", &self.vectors);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f("prototypes", &mut self.vectors);
    }
}

/// How cosine similarities become probabilities at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtoNorm {
    /// Softmax over temperature-scaled cosines.
    #[default]
    Softmax,
    /// L1 normalization of cosines shifted into [0, 1].
    L1,
}

fn cosine_to_all(p: &Prototypes, mask_hidden: &[f64]) -> Result<Vec<f64>> {
    let (c, d) = p.vectors.dim();
    if mask_hidden.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "instance dim {} vs prototype dim {d}",
            mask_hidden.len()
        )));
    }
    let h_norm = mask_hidden.iter().map(|x| x * x).sum::<f64>().sqrt();
    if h_norm == 0.0 {
        return Err(Error::InvalidArgument("zero instance vector".into()));
    }
    let mut cos = Vec::with_capacity(c);
    for row in p.vectors.axis_iter(Axis(0)) {
        let p_norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if p_norm == 0.0 {
            return Err(Error::InvalidArgument("zero prototype vector".into()));
        }
        let dot: f64 = row.iter().zip(mask_hidden).map(|(a, b)| a * b).sum();
        cos.push(dot / (p_norm * h_norm));
    }
    Ok(cos)
}

/// Softmax over cosine similarities between the instance and each prototype.
pub fn proto_predict(p: &Prototypes, mask_hidden: &[f64]) -> Result<Distribution> {
    proto_predict_with(p, mask_hidden, ProtoNorm::Softmax)
}

pub fn proto_predict_with(
    p: &Prototypes,
    mask_hidden: &[f64],
    norm: ProtoNorm,
) -> Result<Distribution> {
    let cos = cosine_to_all(p, mask_hidden)?;
    match norm {
        ProtoNorm::Softmax => {
            let scaled: Vec<f64> = cos.iter().map(|c| c / p.tau).collect();
            class_distribution(&scaled)
        }
        ProtoNorm::L1 => {
            let shifted: Vec<f64> = cos.iter().map(|c| (c + 1.0) / 2.0).collect();
            let sum: f64 = shifted.iter().sum();
            if sum < 1e-12 {
                return Err(Error::InvalidArgument(
                    "all cosines at -1; L1 normalization undefined".into(),
                ));
            }
            Distribution::new(shifted.into_iter().map(|s| s / sum).collect())
        }
    }
}

/// Raw class scores used by the cross-entropy stage: cosine / tau.
pub fn proto_scores(p: &Prototypes, mask_hidden: &[f64]) -> Result<Vec<f64>> {
    Ok(cosine_to_all(p, mask_hidden)?
        .into_iter()
        .map(|c| c / p.tau)
        .collect())
}

/// Build the contrastive losses on a graph. `instances` and `prototypes`
/// are matrix vars already in the graph; `labels` gives the class of each
/// instance row. Returns `(l_ins, l_proto)` as scalar vars.
pub fn proto_losses_graph(
    g: &mut Graph,
    instances: Var,
    labels: &[usize],
    prototypes: Var,
    tau: f64,
) -> Result<(Var, Var)> {
    let n = g.value(instances).dim().0;
    let c = g.value(prototypes).dim().0;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "instance-instance loss needs at least 2 instances".into(),
        ));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} instances",
            labels.len()
        )));
    }
    let mut pair_mask = Array2::zeros((n, n));
    let mut n_pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && labels[i] == labels[j] {
                pair_mask[[i, j]] = 1.0;
                n_pairs += 1;
            }
        }
    }
    if n_pairs == 0 {
        return Err(Error::InvalidArgument(
            "no same-class instance pair for the instance-instance loss".into(),
        ));
    }

    let inst_n = g.l2_normalize_rows(instances);
    let inst_n_t = g.transpose(inst_n);
    let cos_ii = g.matmul(inst_n, inst_n_t);
    let cos_ii = g.scale(cos_ii, 1.0 / tau);
    // Excluding j = i from the denominator: push the diagonal far down.
    let mut diag = Array2::zeros((n, n));
    for i in 0..n {
        diag[[i, i]] = -1e9;
    }
    let diag = g.leaf(diag);
    let masked = g.add(cos_ii, diag);
    let logp_ii = g.log_softmax_rows(masked);
    let pair_mask = g.leaf(pair_mask);
    let picked = g.mul(logp_ii, pair_mask);
    let sum_ins = g.sum_all(picked);
    let l_ins = g.scale(sum_ins, -1.0 / n_pairs as f64);

    let proto_n = g.l2_normalize_rows(prototypes);
    let proto_n_t = g.transpose(proto_n);
    let cos_ip = g.matmul(inst_n, proto_n_t);
    let cos_ip = g.scale(cos_ip, 1.0 / tau);
    let logp_ip = g.log_softmax_rows(cos_ip);
    let mut onehot = Array2::zeros((n, c));
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {c} prototypes"
            )));
        }
        onehot[[i, y]] = 1.0;
    }
    let onehot = g.leaf(onehot);
    let picked_p = g.mul(logp_ip, onehot);
    let sum_proto = g.sum_all(picked_p);
    let l_proto = g.scale(sum_proto, -1.0 / n as f64);

    Ok((l_ins, l_proto))
}

/// Contrastive losses of the prototypical verbalizer as plain numbers.
pub fn proto_losses(
    instances: &Array2<f64>,
    labels: &[usize],
    p: &Prototypes,
) -> Result<(f64, f64)> {
    for row in instances.axis_iter(Axis(0)) {
        if row.iter().map(|x| x * x).sum::<f64>() == 0.0 {
            return Err(Error::InvalidArgument("zero instance vector".into()));
        }
    }
    let mut g = Graph::new();
    let inst = g.leaf(instances.clone());
    let proto = g.leaf(p.vectors.clone());
    let (l_ins, l_proto) = proto_losses_graph(&mut g, inst, labels, proto, p.tau)?;
    Ok((g.scalar(l_ins), g.scalar(l_proto)))
}

/// One gradient step of `l_ins + l_proto` on the prototype vectors with
/// fixed instance embeddings. Returns the loss values before the step.
pub fn proto_train_step(
    p: &mut Prototypes,
    instances: &Array2<f64>,
    labels: &[usize],
    opt: &mut crate::nn::AdamW,
    lr_scale: f64,
) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let inst = g.leaf(instances.clone());
    let bound = Bound::new(&mut g, p);
    let proto = bound.var("prototypes");
    let (l_ins, l_proto) = proto_losses_graph(&mut g, inst, labels, proto, p.tau)?;
    let total = g.add(l_ins, l_proto);
    let values = (g.scalar(l_ins), g.scalar(l_proto));
    if !g.scalar(total).is_finite() {
        return Err(Error::NonFinite("prototype loss".into()));
    }
    let grads = g.backward(total);
    let grad_map = bound.grads(&g, &grads);
    opt.step(p, &grad_map, lr_scale)?;
    Ok(values)
}

/// Trainable class embeddings scored by dot product with the MASK hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftVerbalizerState {
    pub class_embeddings: Array2<f64>,
}

impl SoftVerbalizerState {
    pub fn init(num_classes: usize, d_model: usize, seed: u64) -> Self {
        SoftVerbalizerState {
            class_embeddings: randn(&mut seeded_rng(seed), num_classes, d_model, 0.02),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.dim().0
    }
}

impl Params for SoftVerbalizerState {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f("class_embeddings", &self.class_embeddings);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f("class_embeddings", &mut self.class_embeddings);
    }
}

pub fn soft_verbalizer_scores(s: &SoftVerbalizerState, mask_hidden: &[f64]) -> Result<Vec<f64>> {
    let (c, d) = s.class_embeddings.dim();
    if mask_hidden.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "hidden dim {} vs class embedding dim {d}",
            mask_hidden.len()
        )));
    }
    Ok((0..c)
        .map(|k| {
            s.class_embeddings
                .row(k)
                .iter()
                .zip(mask_hidden)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect())
}

/// Graph form: `hidden` is `1 x d`, result is `1 x C` scores.
pub fn soft_scores_graph(g: &mut Graph, class_embeddings: Var, hidden: Var) -> Var {
    let emb_t = g.transpose(class_embeddings);
    g.matmul(hidden, emb_t)
}

/// Mined label words: per class, the top-k vocabulary ids with weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchVerbalizerState {
    pub label_word_sets: Vec<Vec<(usize, f64)>>,
}

impl SearchVerbalizerState {
    pub fn num_classes(&self) -> usize {
        self.label_word_sets.len()
    }
}

/// Rank vocabulary tokens per class by mean MASK log-probability over that
/// class's examples minus the mean over all examples (frequency-corrected),
/// then keep the top-k with uniform weights.
pub fn search_verbalizer_fit(
    mask_logit_rows: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    k: usize,
) -> Result<SearchVerbalizerState> {
    let (n, vocab) = mask_logit_rows.dim();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
    }
    if n < num_classes {
        return Err(Error::InvalidArgument(format!(
            "{n} examples for {num_classes} classes"
        )));
    }
    let logp = log_softmax_rows(mask_logit_rows);
    let overall_mean = logp.sum_axis(Axis(0)) / n as f64;

    let mut sets = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let rows: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == c)
            .map(|(i, _)| i)
            .collect();
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!("class {c} has no examples")));
        }
        let mut scored: Vec<(usize, f64)> = (0..vocab)
            .map(|t| {
                let class_mean: f64 =
                    rows.iter().map(|&r| logp[[r, t]]).sum::<f64>() / rows.len() as f64;
                (t, class_mean - overall_mean[t])
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        sets.push(
            scored
                .into_iter()
                .take(k)
                .map(|(t, _)| (t, 1.0 / k as f64))
                .collect(),
        );
    }
    Ok(SearchVerbalizerState {
        label_word_sets: sets,
    })
}

/// Class scores: the weighted mean of the kept tokens' MASK logits.
pub fn search_scores(s: &SearchVerbalizerState, mask_logits: &[f64]) -> Vec<f64> {
    s.label_word_sets
        .iter()
        .map(|set| set.iter().map(|(t, w)| mask_logits[*t] * w).sum())
        .collect()
}

/// Gradients of `l_ins + l_proto` with respect to instances and prototypes
/// (used by gradient-check tests and available to callers that train the
/// encoder through the contrastive objective).
pub fn proto_losses_grads(
    instances: &Array2<f64>,
    labels: &[usize],
    p: &Prototypes,
) -> Result<(GradMap, GradMap)> {
    let build = |which: usize| -> Result<GradMap> {
        let mut g = Graph::new();
        let inst = g.leaf(instances.clone());
        let proto = g.leaf(p.vectors.clone());
        let (l_ins, l_proto) = proto_losses_graph(&mut g, inst, labels, proto, p.tau)?;
        let loss = if which == 0 { l_ins } else { l_proto };
        let grads = g.backward(loss);
        let mut out = GradMap::default();
        out.0.insert("instances".into(), grads.get(&g, inst));
        out.0.insert("prototypes".into(), grads.get(&g, proto));
        Ok(out)
    };
    Ok((build(0)?, build(1)?))
}
