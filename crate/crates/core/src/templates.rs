//! Prompt templates: the manual catalog, the demonstration-augmented and
//! varying-length soft-token families, and rendering of examples into masked
//! sequences.
//!
//! A template is an ordered list of segments. Soft segments stand for
//! trainable prompt embeddings and render into positional slots, never into
//! vocabulary words. A demonstration segment expands, at render time, into an
//! answered training example followed by the same soft-token bank as the
//! input-adjacent slots.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, Task};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::verbalizers::ManualVerbalizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Segment {
    Literal { text: String },
    InputA,
    InputB,
    Soft { count: usize },
    Demo { n_soft: usize },
    Mask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub segments: Vec<Segment>,
    /// Training-example ids resolved into the demo segment, frozen at build
    /// time so labeler models are reproducible.
    pub demo_source_ids: Option<Vec<usize>>,
}

impl Template {
    pub fn new(
        id: impl Into<String>,
        segments: Vec<Segment>,
        demo_source_ids: Option<Vec<usize>>,
    ) -> Result<Self> {
        let t = Template {
            id: id.into(),
            segments,
            demo_source_ids,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let masks = self
            .segments
            .iter()
            .filter(|s| matches!(s, Segment::Mask))
            .count();
        if masks != 1 {
            return Err(Error::Template(format!(
                "{}: {masks} mask segments, need exactly 1",
                self.id
            )));
        }
        if !self
            .segments
            .iter()
            .any(|s| matches!(s, Segment::InputA | Segment::InputB))
        {
            return Err(Error::Template(format!("{}: no input segment", self.id)));
        }
        let demos = self
            .segments
            .iter()
            .filter(|s| matches!(s, Segment::Demo { .. }))
            .count();
        if demos > 1 {
            return Err(Error::Template(format!(
                "{}: {demos} demo segments, at most 1",
                self.id
            )));
        }
        let mut counts = Vec::new();
        for s in &self.segments {
            match s {
                Segment::Soft { count } | Segment::Demo { n_soft: count } => {
                    if *count == 0 {
                        return Err(Error::Template(format!(
                            "{}: soft count must be >= 1",
                            self.id
                        )));
                    }
                    counts.push(*count);
                }
                _ => {}
            }
        }
        // All soft groups in one template read the same parameter bank.
        if counts.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Template(format!(
                "{}: soft groups disagree on count: {counts:?}",
                self.id
            )));
        }
        Ok(())
    }

    pub fn has_demo(&self) -> bool {
        self.segments
            .iter()
            .any(|s| matches!(s, Segment::Demo { .. }))
    }

    /// Total number of soft slots a render of this template contains.
    pub fn n_soft_total(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Soft { count } | Segment::Demo { n_soft: count } => *count,
                _ => 0,
            })
            .sum()
    }

    /// Distinct trainable prompt embeddings behind the slots (the shared
    /// bank size); the reparameterization block must produce exactly this
    /// many rows.
    pub fn bank_size(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Soft { count } | Segment::Demo { n_soft: count } => *count,
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }
}

/// Where a rendered word came from; drives truncation priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordSource {
    /// Fixed template text (anchors, punctuation). Never truncated.
    Literal,
    InputA,
    InputB,
    DemoText,
    /// The demonstration's answer word(s). Never truncated.
    DemoLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "piece")]
pub enum Piece {
    Word { text: String, source: WordSource },
    /// Soft slot; `bank` is the row of the prompt-embedding bank injected here.
    SoftSlot { bank: usize },
    Mask,
}

/// A template applied to an example: the unit the backbone consumes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedSequence {
    pub pieces: Vec<Piece>,
    pub mask_position: usize,
    pub soft_slot_positions: Vec<usize>,
}

impl RenderedSequence {
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        let mask_positions: Vec<usize> = pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, Piece::Mask))
            .map(|(i, _)| i)
            .collect();
        if mask_positions.len() != 1 {
            return Err(Error::Render(format!(
                "{} mask markers, need exactly 1",
                mask_positions.len()
            )));
        }
        let soft_slot_positions = pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, Piece::SoftSlot { .. }))
            .map(|(i, _)| i)
            .collect();
        Ok(RenderedSequence {
            mask_position: mask_positions[0],
            soft_slot_positions,
            pieces,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Bank row injected at each soft slot, in slot order.
    pub fn soft_slot_banks(&self) -> Vec<usize> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::SoftSlot { bank } => Some(*bank),
                _ => None,
            })
            .collect()
    }

    /// Space-joined display form; soft slots render as `<p{bank}>`.
    pub fn display(&self) -> String {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Word { text, .. } => text.clone(),
                Piece::SoftSlot { bank } => format!("<p{bank}>"),
                Piece::Mask => "[MASK]".to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The answered-example expansion `[text][soft tokens][label word]`.
pub fn make_demo(e: &Example, n_soft: usize, class_names: &[String]) -> Result<Vec<Segment>> {
    let label = e.label.ok_or_else(|| {
        Error::Render(format!("demonstration example {} is unlabeled", e.id))
    })?;
    if n_soft == 0 {
        return Err(Error::InvalidArgument("demo n_soft must be >= 1".into()));
    }
    if label >= class_names.len() {
        return Err(Error::Render(format!(
            "demo label {label} out of range for {} classes",
            class_names.len()
        )));
    }
    Ok(vec![
        Segment::Literal {
            text: e.words().join(" "),
        },
        Segment::Soft { count: n_soft },
        Segment::Literal {
            text: class_names[label].clone(),
        },
    ])
}

fn anchor_segments(task: Task, n_soft: usize) -> Vec<Segment> {
    match task {
        Task::TC => vec![
            Segment::Literal {
                text: "Category:".into(),
            },
            Segment::Soft { count: n_soft },
            Segment::Mask,
        ],
        Task::NLI => vec![
            Segment::Literal { text: "?".into() },
            Segment::Soft { count: n_soft },
            Segment::Literal {
                text: "answer :".into(),
            },
            Segment::Mask,
        ],
    }
}

/// K templates `[demo_k][input][anchor][soft][MASK]` differing only in the
/// demonstration example, drawn without replacement when the training set is
/// large enough.
pub fn build_demo_soft_family(
    train: &Dataset,
    k_templates: usize,
    n_soft: usize,
    seed: u64,
) -> Result<Vec<Template>> {
    if k_templates == 0 {
        return Err(Error::InvalidArgument("template count must be >= 1".into()));
    }
    if n_soft == 0 {
        return Err(Error::InvalidArgument("n_soft must be >= 1".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset(train.name.clone()));
    }
    let mut rng = seeded_rng(seed);
    let demo_positions: Vec<usize> = if train.len() >= k_templates {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        order.into_iter().take(k_templates).collect()
    } else {
        (0..k_templates)
            .map(|_| rng.random_range(0..train.len()))
            .collect()
    };

    demo_positions
        .iter()
        .enumerate()
        .map(|(i, &pos)| {
            let demo_id = train.examples[pos].id;
            let mut segments = vec![Segment::Demo { n_soft }, Segment::InputA, Segment::InputB];
            segments.extend(anchor_segments(train.task, n_soft));
            Template::new(format!("demo_soft/{i}"), segments, Some(vec![demo_id]))
        })
        .collect()
}

/// One template `[input][anchor][soft(n)][MASK]` per entry of `n_list`.
/// A single-element list is the fixed-soft (single labeler) construction.
pub fn build_vary_soft_family(task: Task, n_list: &[usize]) -> Result<Vec<Template>> {
    if n_list.is_empty() {
        return Err(Error::InvalidArgument("n_list must be non-empty".into()));
    }
    for (i, &n) in n_list.iter().enumerate() {
        if n == 0 {
            return Err(Error::InvalidArgument("soft counts must be >= 1".into()));
        }
        if n_list[..i].contains(&n) {
            return Err(Error::InvalidArgument(format!(
                "duplicate soft count {n} in n_list"
            )));
        }
    }
    n_list
        .iter()
        .map(|&n| {
            let mut segments = vec![Segment::InputA, Segment::InputB];
            segments.extend(anchor_segments(task, n));
            Template::new(format!("vary_soft/n{n}"), segments, None)
        })
        .collect()
}

/// Render `t` applied to `e` and truncate to `max_len`. A resolved
/// demonstration example must be supplied iff the template has a demo
/// segment; `class_names` verbalize the demonstration's answer.
pub fn render(
    t: &Template,
    e: &Example,
    demo: Option<&Example>,
    class_names: &[String],
    max_len: usize,
) -> Result<RenderedSequence> {
    if t.has_demo() && demo.is_none() {
        return Err(Error::Render(format!("{}: demo example required", t.id)));
    }
    if !t.has_demo() && demo.is_some() {
        return Err(Error::Render(format!(
            "{}: template has no demo segment",
            t.id
        )));
    }
    let mut pieces = Vec::new();
    let push_words = |pieces: &mut Vec<Piece>, text: &str, source: WordSource| {
        for w in text.split_whitespace() {
            pieces.push(Piece::Word {
                text: w.to_string(),
                source,
            });
        }
    };
    for segment in &t.segments {
        match segment {
            Segment::Literal { text } => push_words(&mut pieces, text, WordSource::Literal),
            Segment::InputA => push_words(&mut pieces, &e.text_a, WordSource::InputA),
            Segment::InputB => {
                if let Some(b) = &e.text_b {
                    push_words(&mut pieces, b, WordSource::InputB);
                }
            }
            Segment::Soft { count } => {
                for bank in 0..*count {
                    pieces.push(Piece::SoftSlot { bank });
                }
            }
            Segment::Demo { n_soft } => {
                let demo_example = demo.expect("checked above");
                let expansion = make_demo(demo_example, *n_soft, class_names)?;
                for (i, seg) in expansion.iter().enumerate() {
                    match seg {
                        Segment::Literal { text } if i == 0 => {
                            push_words(&mut pieces, text, WordSource::DemoText)
                        }
                        Segment::Literal { text } => {
                            push_words(&mut pieces, text, WordSource::DemoLabel)
                        }
                        Segment::Soft { count } => {
                            for bank in 0..*count {
                                pieces.push(Piece::SoftSlot { bank });
                            }
                        }
                        _ => unreachable!("make_demo yields literals and softs"),
                    }
                }
            }
            Segment::Mask => pieces.push(Piece::Mask),
        }
    }
    let rendered = RenderedSequence::new(pieces)?;
    truncate(&rendered, max_len)
}

/// Drop words until the sequence fits `max_len`: demonstration text first
/// (tail-first), then `text_b`, then `text_a`. Anchors, the demonstration's
/// answer word, soft slots and the mask are never removed.
pub fn truncate(r: &RenderedSequence, max_len: usize) -> Result<RenderedSequence> {
    if r.len() <= max_len {
        return Ok(r.clone());
    }
    let over = r.len() - max_len;
    let removable: Vec<usize> = [WordSource::DemoText, WordSource::InputB, WordSource::InputA]
        .iter()
        .flat_map(|source| {
            r.pieces
                .iter()
                .enumerate()
                .filter(|(_, p)| matches!(p, Piece::Word { source: s, .. } if s == source))
                .map(|(i, _)| i)
                .rev()
                .collect::<Vec<_>>()
        })
        .collect();
    if removable.len() < over {
        return Err(Error::Truncation {
            max_len,
            fixed: r.len() - removable.len(),
        });
    }
    let drop: std::collections::BTreeSet<usize> = removable.into_iter().take(over).collect();
    let pieces = r
        .pieces
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, p)| p.clone())
        .collect();
    RenderedSequence::new(pieces)
}

/// One manual prompt paired with its manual verbalizer.
pub type ManualEntry = (Template, ManualVerbalizer);

/// The fixed manual prompt/verbalizer catalog. AG's News and Yahoo share the
/// six topic-classification prompts; MNLI defines two prompts and two
/// verbalizer word sets (each prompt defaults to the first set); RTE and CB
/// use the four entailment prompts.
pub fn manual_catalog(dataset_name: &str) -> Result<Vec<ManualEntry>> {
    let (templates, verbalizers) = match dataset_name {
        "agnews" => (
            tc_manual_templates("agnews")?,
            vec![words(&["World", "Sports", "Business", "Technology"])],
        ),
        "yahoo" => (
            tc_manual_templates("yahoo")?,
            vec![words(&[
                "Society",
                "Science",
                "Health",
                "Education",
                "Computer",
                "Sports",
                "Business",
                "Entertainment",
                "Relationship",
                "Politics",
            ])],
        ),
        "mnli" => (
            nli_manual_templates("mnli", 2)?,
            vec![
                words(&["Wrong", "Right", "Maybe"]),
                words(&["No", "Yes", "Maybe"]),
            ],
        ),
        "rte" => (
            nli_manual_templates("rte", 4)?,
            vec![words(&["Wrong", "Right"])],
        ),
        "cb" => (
            nli_manual_templates("cb", 4)?,
            vec![words(&["Wrong", "Right", "Maybe"])],
        ),
        other => return Err(Error::UnknownDataset(other.to_string())),
    };
    // Each template pairs with the first verbalizer by default; alternates
    // (MNLI v2) stay selectable per template through run configuration.
    Ok(templates
        .into_iter()
        .map(|t| (t, ManualVerbalizer::new(verbalizers[0].clone())))
        .collect())
}

/// All manual verbalizer word sets for a dataset (MNLI has two).
pub fn manual_verbalizer_words(dataset_name: &str) -> Result<Vec<Vec<String>>> {
    match dataset_name {
        "agnews" => Ok(vec![words(&["World", "Sports", "Business", "Technology"])]),
        "yahoo" => Ok(vec![words(&[
            "Society",
            "Science",
            "Health",
            "Education",
            "Computer",
            "Sports",
            "Business",
            "Entertainment",
            "Relationship",
            "Politics",
        ])]),
        "mnli" => Ok(vec![
            words(&["Wrong", "Right", "Maybe"]),
            words(&["No", "Yes", "Maybe"]),
        ]),
        "rte" => Ok(vec![words(&["Wrong", "Right"])]),
        "cb" => Ok(vec![words(&["Wrong", "Right", "Maybe"])]),
        other => Err(Error::UnknownDataset(other.to_string())),
    }
}

fn words(w: &[&str]) -> Vec<String> {
    w.iter().map(|s| s.to_string()).collect()
}

fn tc_manual_templates(name: &str) -> Result<Vec<Template>> {
    use Segment::*;
    let lit = |s: &str| Literal { text: s.into() };
    let defs: Vec<Vec<Segment>> = vec![
        vec![Mask, lit(":"), InputA, InputB],
        vec![Mask, lit("-"), InputA, InputB],
        vec![InputA, lit("("), Mask, lit(")"), InputB],
        vec![InputA, InputB, lit("("), Mask, lit(")")],
        vec![Mask, lit("News:"), InputA, InputB],
        vec![lit("Category :"), Mask, InputA, InputB],
    ];
    defs.into_iter()
        .enumerate()
        .map(|(i, segments)| Template::new(format!("{name}/manual/p{}", i + 1), segments, None))
        .collect()
}

fn nli_manual_templates(name: &str, count: usize) -> Result<Vec<Template>> {
    use Segment::*;
    let lit = |s: &str| Literal { text: s.into() };
    let defs: Vec<Vec<Segment>> = vec![
        vec![
            lit("\""),
            InputA,
            lit("\" ? ||"),
            Mask,
            lit(", \""),
            InputB,
            lit("\""),
        ],
        vec![InputA, lit("? ||"), Mask, lit(","), InputB],
        vec![InputA, lit("? ||"), Mask, lit("."), InputB],
        vec![
            lit("\""),
            InputA,
            lit("\" ? ||"),
            Mask,
            lit(". \""),
            InputB,
            lit("\""),
        ],
    ];
    defs.into_iter()
        .take(count)
        .enumerate()
        .map(|(i, segments)| Template::new(format!("{name}/manual/p{}", i + 1), segments, None))
        .collect()
}
