//! Masked-language-model abstraction.
//!
//! Two ways to obtain a backbone: [`make_toy_backbone`] builds a small seeded
//! transformer encoder for desk-scale runs and CI, and [`load_pretrained`]
//! reads converted encoder weights from the model cache for full-scale
//! recipes. Both expose the same surface: encode a rendered sequence with
//! soft embeddings injected at slot positions, return hidden state and
//! vocabulary logits at the MASK position.
//!
//! The tokenizer is whitespace-based with `[PAD]`, `[MASK]`, `[UNK]`
//! reserved; subword handling belongs to externally prepared checkpoints.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::nn::{randn, seeded_rng, Bound, Graph, Params, Var};
use crate::templates::{Piece, RenderedSequence};
use crate::verbalizers::{class_distribution, Distribution};

pub const PAD_ID: usize = 0;
pub const MASK_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const RESERVED: [&str; 3] = ["[PAD]", "[MASK]", "[UNK]"];

/// Whitespace vocabulary with stable ids. Construction order is part of the
/// contract: reserved tokens, then required words, then corpus words by
/// descending frequency (ties by first occurrence).
#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocab {
    pub fn build<'a, I>(texts: I, required: &[String], capacity: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new(); // word -> (freq, first_pos)
        let mut pos = 0usize;
        for text in texts {
            for w in text.split_whitespace() {
                let entry = counts.entry(w.to_string()).or_insert((0, pos));
                entry.0 += 1;
                pos += 1;
            }
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for w in required {
            for piece in w.split_whitespace() {
                if !tokens.iter().any(|t| t == piece) {
                    tokens.push(piece.to_string());
                }
            }
        }
        if tokens.len() > capacity {
            return Err(Error::InvalidArgument(format!(
                "{} reserved/required tokens exceed vocab capacity {capacity}",
                tokens.len()
            )));
        }
        let mut rest: Vec<(String, (usize, usize))> = counts
            .into_iter()
            .filter(|(w, _)| !tokens.iter().any(|t| t == w))
            .collect();
        rest.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        for (w, _) in rest {
            if tokens.len() == capacity {
                break;
            }
            tokens.push(w);
        }
        Ok(Vocab::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.lookup(word).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// One token per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.tokens.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if tokens.len() < RESERVED.len() || tokens[..3] != RESERVED.map(String::from) {
            return Err(Error::Checkpoint(format!(
                "{}: vocabulary must start with {RESERVED:?}",
                path.display()
            )));
        }
        Ok(Vocab::from_tokens(tokens))
    }
}

/// Final-layer hidden state and vocabulary logits at the MASK position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskOutput {
    pub mask_hidden: Vec<f64>,
    pub mask_logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub model_id: String,
    pub d_model: usize,
    #[serde(default = "default_layers")]
    pub n_layers: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    #[serde(default)]
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    4
}

impl BackboneConfig {
    pub fn toy(d_model: usize, max_len: usize, vocab_size: usize, seed: u64) -> Self {
        BackboneConfig {
            model_id: "toy".into(),
            d_model,
            n_layers: 2,
            n_heads: 4,
            d_ff: 2 * d_model,
            max_len,
            vocab_size,
            seed,
        }
    }

    fn d_ff(&self) -> usize {
        if self.d_ff == 0 {
            2 * self.d_model
        } else {
            self.d_ff
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreDims {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl CoreDims {
    fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return Err(Error::InvalidArgument("zero-sized backbone dims".into()));
        }
        if self.max_len < 8 {
            return Err(Error::InvalidArgument("max_len must be >= 8".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

struct LayerParams {
    ln1_g: Array2<f64>,
    ln1_b: Array2<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    bo: Array2<f64>,
    ln2_g: Array2<f64>,
    ln2_b: Array2<f64>,
    w1: Array2<f64>,
    b1: Array2<f64>,
    w2: Array2<f64>,
    b2: Array2<f64>,
}

/// Pre-norm transformer encoder; parameters only, no tokenizer.
pub struct TransformerCore {
    pub dims: CoreDims,
    tok_emb: Array2<f64>,
    pos_emb: Array2<f64>,
    layers: Vec<LayerParams>,
    ln_f_g: Array2<f64>,
    ln_f_b: Array2<f64>,
}

const LN_EPS: f64 = 1e-5;
const INIT_SCALE: f64 = 0.02;

impl TransformerCore {
    pub fn init(dims: CoreDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = seeded_rng(seed);
        let d = dims.d_model;
        let layers = (0..dims.n_layers)
            .map(|_| LayerParams {
                ln1_g: Array2::ones((1, d)),
                ln1_b: Array2::zeros((1, d)),
                wq: randn(&mut rng, d, d, INIT_SCALE),
                wk: randn(&mut rng, d, d, INIT_SCALE),
                wv: randn(&mut rng, d, d, INIT_SCALE),
                wo: randn(&mut rng, d, d, INIT_SCALE),
                bo: Array2::zeros((1, d)),
                ln2_g: Array2::ones((1, d)),
                ln2_b: Array2::zeros((1, d)),
                w1: randn(&mut rng, d, dims.d_ff, INIT_SCALE),
                b1: Array2::zeros((1, dims.d_ff)),
                w2: randn(&mut rng, dims.d_ff, d, INIT_SCALE),
                b2: Array2::zeros((1, d)),
            })
            .collect();
        Ok(TransformerCore {
            tok_emb: randn(&mut rng, dims.vocab_size, d, INIT_SCALE),
            pos_emb: randn(&mut rng, dims.max_len, d, INIT_SCALE),
            layers,
            ln_f_g: Array2::ones((1, d)),
            ln_f_b: Array2::zeros((1, d)),
            dims,
        })
    }

    pub fn zeros(dims: CoreDims) -> Result<Self> {
        dims.validate()?;
        let d = dims.d_model;
        let layers = (0..dims.n_layers)
            .map(|_| LayerParams {
                ln1_g: Array2::zeros((1, d)),
                ln1_b: Array2::zeros((1, d)),
                wq: Array2::zeros((d, d)),
                wk: Array2::zeros((d, d)),
                wv: Array2::zeros((d, d)),
                wo: Array2::zeros((d, d)),
                bo: Array2::zeros((1, d)),
                ln2_g: Array2::zeros((1, d)),
                ln2_b: Array2::zeros((1, d)),
                w1: Array2::zeros((d, dims.d_ff)),
                b1: Array2::zeros((1, dims.d_ff)),
                w2: Array2::zeros((dims.d_ff, d)),
                b2: Array2::zeros((1, d)),
            })
            .collect();
        Ok(TransformerCore {
            tok_emb: Array2::zeros((dims.vocab_size, d)),
            pos_emb: Array2::zeros((dims.max_len, d)),
            layers,
            ln_f_g: Array2::zeros((1, d)),
            ln_f_b: Array2::zeros((1, d)),
            dims,
        })
    }

    /// Embedding row of a vocabulary id.
    pub fn token_embedding(&self, id: usize) -> Vec<f64> {
        self.tok_emb.row(id).to_vec()
    }

    /// Encode token ids into final hidden states, optionally overwriting the
    /// embedding rows at `slot_positions` with rows of `soft` (bit-exact row
    /// copies, so injecting a token's own embedding equals typing the token).
    pub fn encode_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ids: &[usize],
        soft: Option<(Var, &[usize])>,
    ) -> Var {
        let n = ids.len();
        let head_dim = self.dims.d_model / self.dims.n_heads;
        let tok = bound.var("tok_emb");
        let text = g.select_rows(tok, ids.to_vec());
        let embedded = match soft {
            Some((soft_var, positions)) => g.compose_rows(text, soft_var, positions.to_vec()),
            None => text,
        };
        let pos_table = bound.var("pos_emb");
        let pos = g.select_rows(pos_table, (0..n).collect());
        let mut x = g.add(embedded, pos);

        for l in 0..self.dims.n_layers {
            let name = |suffix: &str| format!("layer{l}.{suffix}");
            let ln1_g = bound.var(&name("ln1_g"));
            let ln1_b = bound.var(&name("ln1_b"));
            let h = g.layer_norm_rows(x, ln1_g, ln1_b, LN_EPS);
            let q = g.matmul(h, bound.var(&name("wq")));
            let k = g.matmul(h, bound.var(&name("wk")));
            let v = g.matmul(h, bound.var(&name("wv")));
            let mut ctx: Option<Var> = None;
            for head in 0..self.dims.n_heads {
                let lo = head * head_dim;
                let hi = lo + head_dim;
                let qh = g.slice_cols(q, lo, hi);
                let kh = g.slice_cols(k, lo, hi);
                let vh = g.slice_cols(v, lo, hi);
                let kht = g.transpose(kh);
                let scores = g.matmul(qh, kht);
                let scores = g.scale(scores, 1.0 / (head_dim as f64).sqrt());
                let attn = g.softmax_rows(scores);
                let ctx_h = g.matmul(attn, vh);
                ctx = Some(match ctx {
                    Some(acc) => g.concat_cols(acc, ctx_h),
                    None => ctx_h,
                });
            }
            let ctx = ctx.expect("at least one head");
            let proj = g.matmul(ctx, bound.var(&name("wo")));
            let proj = g.add_row(proj, bound.var(&name("bo")));
            x = g.add(x, proj);

            let ln2_g = bound.var(&name("ln2_g"));
            let ln2_b = bound.var(&name("ln2_b"));
            let h2 = g.layer_norm_rows(x, ln2_g, ln2_b, LN_EPS);
            let a1 = g.matmul(h2, bound.var(&name("w1")));
            let a1 = g.add_row(a1, bound.var(&name("b1")));
            let a1 = g.relu(a1);
            let a2 = g.matmul(a1, bound.var(&name("w2")));
            let a2 = g.add_row(a2, bound.var(&name("b2")));
            x = g.add(x, a2);
        }
        let lf_g = bound.var("ln_f_g");
        let lf_b = bound.var("ln_f_b");
        g.layer_norm_rows(x, lf_g, lf_b, LN_EPS)
    }
}

impl Params for TransformerCore {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f("tok_emb", &self.tok_emb);
        f("pos_emb", &self.pos_emb);
        for (l, layer) in self.layers.iter().enumerate() {
            f(&format!("layer{l}.ln1_g"), &layer.ln1_g);
            f(&format!("layer{l}.ln1_b"), &layer.ln1_b);
            f(&format!("layer{l}.wq"), &layer.wq);
            f(&format!("layer{l}.wk"), &layer.wk);
            f(&format!("layer{l}.wv"), &layer.wv);
            f(&format!("layer{l}.wo"), &layer.wo);
            f(&format!("layer{l}.bo"), &layer.bo);
            f(&format!("layer{l}.ln2_g"), &layer.ln2_g);
            f(&format!("layer{l}.ln2_b"), &layer.ln2_b);
            f(&format!("layer{l}.w1"), &layer.w1);
            f(&format!("layer{l}.b1"), &layer.b1);
            f(&format!("layer{l}.w2"), &layer.w2);
            f(&format!("layer{l}.b2"), &layer.b2);
        }
        f("ln_f_g", &self.ln_f_g);
        f("ln_f_b", &self.ln_f_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f("tok_emb", &mut self.tok_emb);
        f("pos_emb", &mut self.pos_emb);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            f(&format!("layer{l}.ln1_g"), &mut layer.ln1_g);
            f(&format!("layer{l}.ln1_b"), &mut layer.ln1_b);
            f(&format!("layer{l}.wq"), &mut layer.wq);
            f(&format!("layer{l}.wk"), &mut layer.wk);
            f(&format!("layer{l}.wv"), &mut layer.wv);
            f(&format!("layer{l}.wo"), &mut layer.wo);
            f(&format!("layer{l}.bo"), &mut layer.bo);
            f(&format!("layer{l}.ln2_g"), &mut layer.ln2_g);
            f(&format!("layer{l}.ln2_b"), &mut layer.ln2_b);
            f(&format!("layer{l}.w1"), &mut layer.w1);
            f(&format!("layer{l}.b1"), &mut layer.b1);
            f(&format!("layer{l}.w2"), &mut layer.w2);
            f(&format!("layer{l}.b2"), &mut layer.b2);
        }
        f("ln_f_g", &mut self.ln_f_g);
        f("ln_f_b", &mut self.ln_f_b);
    }
}

/// Encoder plus masked-token output head and tokenizer.
pub struct MaskedLm {
    pub core: TransformerCore,
    out_w: Array2<f64>,
    out_b: Array2<f64>,
    pub vocab: Vocab,
}

impl Params for MaskedLm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.core.visit(f);
        f("out_w", &self.out_w);
        f("out_b", &self.out_b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.core.visit_mut(f);
        f("out_w", &mut self.out_w);
        f("out_b", &mut self.out_b);
    }
}

/// Vocabulary ids of a rendered sequence; soft slots map to `[PAD]` and are
/// overwritten by injection, the mask maps to `[MASK]`.
pub fn token_ids(r: &RenderedSequence, vocab: &Vocab) -> Vec<usize> {
    r.pieces
        .iter()
        .map(|p| match p {
            Piece::Word { text, .. } => vocab.id_or_unk(text),
            Piece::SoftSlot { .. } => PAD_ID,
            Piece::Mask => MASK_ID,
        })
        .collect()
}

impl MaskedLm {
    pub fn d_model(&self) -> usize {
        self.core.dims.d_model
    }

    pub fn max_len(&self) -> usize {
        self.core.dims.max_len
    }

    fn check_sequence(&self, r: &RenderedSequence, soft_rows: usize) -> Result<()> {
        if r.len() > self.core.dims.max_len {
            return Err(Error::SequenceTooLong {
                len: r.len(),
                max_len: self.core.dims.max_len,
            });
        }
        if soft_rows != r.soft_slot_positions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} soft embedding rows for {} slots",
                soft_rows,
                r.soft_slot_positions.len()
            )));
        }
        Ok(())
    }

    /// Graph path shared by training and inference. `soft` must hold one row
    /// per soft slot of `r`, in slot order.
    pub fn encode_masked_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        r: &RenderedSequence,
        soft: Option<Var>,
    ) -> Result<(Var, Var)> {
        let soft_rows = soft.map(|v| g.value(v).dim().0).unwrap_or(0);
        self.check_sequence(r, soft_rows)?;
        let ids = token_ids(r, &self.vocab);
        let injection = soft.map(|v| (v, r.soft_slot_positions.as_slice()));
        let hidden = self.core.encode_graph(g, bound, &ids, injection);
        let mask_row = g.select_rows(hidden, vec![r.mask_position]);
        let logits = g.matmul(mask_row, bound.var("out_w"));
        let logits = g.add_row(logits, bound.var("out_b"));
        Ok((mask_row, logits))
    }

    /// Run inference on one rendered sequence. `soft_embeddings` rows are
    /// injected positionally at the soft slots (row k at slot k).
    pub fn encode_masked(
        &self,
        r: &RenderedSequence,
        soft_embeddings: &Array2<f64>,
    ) -> Result<MaskOutput> {
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, self);
        let soft = if soft_embeddings.dim().0 > 0 {
            Some(g.leaf(soft_embeddings.clone()))
        } else {
            None
        };
        // An empty soft matrix is only valid for templates without slots.
        if soft_embeddings.dim().0 == 0 && !r.soft_slot_positions.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "0 soft embedding rows for {} slots",
                r.soft_slot_positions.len()
            )));
        }
        let (hidden, logits) = self.encode_masked_graph(&mut g, &bound, r, soft)?;
        Ok(MaskOutput {
            mask_hidden: g.value(hidden).row(0).to_vec(),
            mask_logits: g.value(logits).row(0).to_vec(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::nn::save_checkpoint(
            &dir.join("backbone.json"),
            self,
            serde_json::json!({ "kind": "masked_lm", "dims": self.core.dims }),
        )?;
        self.vocab.save(&dir.join("vocab.txt"))
    }

    pub fn load(dir: &Path) -> Result<MaskedLm> {
        let (meta, arrays) = crate::nn::load_checkpoint(&dir.join("backbone.json"))?;
        let dims: CoreDims = serde_json::from_value(meta["dims"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad dims in backbone meta: {e}")))?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        let mut lm = MaskedLm {
            core: TransformerCore::zeros(dims)?,
            out_w: Array2::zeros((dims.d_model, dims.vocab_size)),
            out_b: Array2::zeros((1, dims.vocab_size)),
            vocab,
        };
        crate::nn::restore_params(&mut lm, &arrays)?;
        Ok(lm)
    }
}

/// Deterministic small transformer for desk-scale verification.
pub fn make_toy_backbone(cfg: &BackboneConfig, vocab: Vocab) -> Result<MaskedLm> {
    if cfg.model_id != "toy" {
        return Err(Error::InvalidArgument(format!(
            "make_toy_backbone got model_id {:?}",
            cfg.model_id
        )));
    }
    if cfg.d_model > 128 {
        return Err(Error::InvalidArgument("toy d_model must be <= 128".into()));
    }
    if cfg.vocab_size > 2048 {
        return Err(Error::InvalidArgument("toy vocab must be <= 2048".into()));
    }
    if vocab.len() > cfg.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "vocabulary has {} tokens, capacity {}",
            vocab.len(),
            cfg.vocab_size
        )));
    }
    let dims = CoreDims {
        d_model: cfg.d_model,
        n_layers: cfg.n_layers,
        n_heads: cfg.n_heads,
        d_ff: cfg.d_ff(),
        max_len: cfg.max_len,
        vocab_size: cfg.vocab_size,
    };
    let core = TransformerCore::init(dims, cfg.seed)?;
    let mut rng = seeded_rng(cfg.seed.wrapping_add(0x5eed));
    Ok(MaskedLm {
        core,
        out_w: randn(&mut rng, dims.d_model, dims.vocab_size, INIT_SCALE),
        out_b: Array2::zeros((1, dims.vocab_size)),
        vocab,
    })
}

/// Encoder with a sequence-classification head: the final model and the
/// fine-tune baseline.
pub struct SequenceClassifier {
    pub core: TransformerCore,
    cls_w: Array2<f64>,
    cls_b: Array2<f64>,
    pub vocab: Vocab,
}

impl Params for SequenceClassifier {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        self.core.visit(f);
        f("cls_w", &self.cls_w);
        f("cls_b", &self.cls_b);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        self.core.visit_mut(f);
        f("cls_w", &mut self.cls_w);
        f("cls_b", &mut self.cls_b);
    }
}

impl SequenceClassifier {
    pub fn new_toy(cfg: &BackboneConfig, vocab: Vocab, num_classes: usize, seed: u64) -> Result<Self> {
        let dims = CoreDims {
            d_model: cfg.d_model,
            n_layers: cfg.n_layers,
            n_heads: cfg.n_heads,
            d_ff: cfg.d_ff(),
            max_len: cfg.max_len,
            vocab_size: cfg.vocab_size,
        };
        let core = TransformerCore::init(dims, seed)?;
        let mut rng = seeded_rng(seed.wrapping_add(0xc1a5));
        Ok(SequenceClassifier {
            core,
            cls_w: randn(&mut rng, dims.d_model, num_classes, INIT_SCALE),
            cls_b: Array2::zeros((1, num_classes)),
            vocab,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.cls_w.dim().1
    }

    /// Head zeroed out: every input classifies to the uniform distribution.
    pub fn zero_head(&mut self) {
        self.cls_w.fill(0.0);
        self.cls_b.fill(0.0);
    }

    /// Plain-text input ids, tail-truncated to the backbone's max length.
    pub fn input_ids(&self, e: &Example) -> Result<Vec<usize>> {
        let words = e.words();
        if words.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "example {} has no tokens",
                e.id
            )));
        }
        Ok(words
            .iter()
            .take(self.core.dims.max_len)
            .map(|w| self.vocab.id_or_unk(w))
            .collect())
    }

    /// Class logits (`1 x C`) for training paths: mean-pooled final hidden
    /// state through the classification head.
    pub fn logits_graph(&self, g: &mut Graph, bound: &Bound, ids: &[usize]) -> Var {
        let hidden = self.core.encode_graph(g, bound, ids, None);
        let pooled = g.mean_over_rows(hidden);
        let logits = g.matmul(pooled, bound.var("cls_w"));
        g.add_row(logits, bound.var("cls_b"))
    }

    pub fn classify(&self, e: &Example) -> Result<Distribution> {
        let ids = self.input_ids(e)?;
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, self);
        let logits = self.logits_graph(&mut g, &bound, &ids);
        class_distribution(g.value(logits).row(0).to_slice().unwrap())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::nn::save_checkpoint(
            &dir.join("classifier.json"),
            self,
            serde_json::json!({
                "kind": "sequence_classifier",
                "dims": self.core.dims,
                "num_classes": self.num_classes(),
            }),
        )?;
        self.vocab.save(&dir.join("vocab.txt"))
    }

    pub fn load(dir: &Path) -> Result<SequenceClassifier> {
        let (meta, arrays) = crate::nn::load_checkpoint(&dir.join("classifier.json"))?;
        let dims: CoreDims = serde_json::from_value(meta["dims"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad dims in classifier meta: {e}")))?;
        let num_classes = meta["num_classes"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("missing num_classes".into()))?
            as usize;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        let mut model = SequenceClassifier {
            core: TransformerCore::zeros(dims)?,
            cls_w: Array2::zeros((dims.d_model, num_classes)),
            cls_b: Array2::zeros((1, num_classes)),
            vocab,
        };
        crate::nn::restore_params(&mut model, &arrays)?;
        Ok(model)
    }
}

/// Model cache directory: `PROMPT_PET_CACHE` or `.prompt-pet-cache`.
pub fn cache_dir() -> PathBuf {
    std::env::var_os("PROMPT_PET_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".prompt-pet-cache"))
}

/// Load converted encoder weights for a non-toy model id from the cache.
/// Full-scale backbones are prepared offline; see the README recipe.
pub fn load_pretrained(model_id: &str) -> Result<MaskedLm> {
    let dir = cache_dir().join(model_id);
    if !dir.join("backbone.json").exists() {
        return Err(Error::Checkpoint(format!(
            "no converted checkpoint for {model_id:?} under {} — prepare one offline \
             (backbone.json + vocab.txt) or set PROMPT_PET_CACHE",
            dir.display()
        )));
    }
    MaskedLm::load(&dir)
}

/// Per-example mean pooling helper used by evaluation code.
pub fn mean_pool(hidden: &Array2<f64>) -> Vec<f64> {
    let n = hidden.dim().0 as f64;
    hidden.sum_axis(Axis(0)).mapv(|x| x / n).to_vec()
}
