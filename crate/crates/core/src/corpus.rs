//! Dataset ingestion, few-shot sampling, and labeled/unlabeled/test splits.
//!
//! Datasets are JSON-lines files (`{"text_a": str, "text_b": str|null,
//! "label": str|null}`) with a sidecar metadata file naming the task and the
//! class catalog. All values are immutable once constructed.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Topic classification.
    TC,
    /// Natural language inference (paired inputs).
    NLI,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Labeled,
    Unlabeled,
    Test,
}

/// One input record. `id` is the position in the source file and survives
/// sampling, so subsets remain addressable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: usize,
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: Option<usize>,
}

impl Example {
    /// Whitespace words of `text_a` followed by `text_b`.
    pub fn words(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.text_a.split_whitespace().collect();
        if let Some(b) = &self.text_b {
            out.extend(b.split_whitespace());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub task: Task,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub class_names: Vec<String>,
    pub kind: DatasetKind,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset {:?} needs at least 2 classes",
                self.name
            )));
        }
        for e in &self.examples {
            if e.text_a.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "example {} has empty text_a",
                    e.id
                )));
            }
            match (self.kind, e.label) {
                (DatasetKind::Unlabeled, Some(_)) => {
                    return Err(Error::InvalidArgument(format!(
                        "example {} carries a label in an unlabeled dataset",
                        e.id
                    )))
                }
                (DatasetKind::Labeled | DatasetKind::Test, None) => {
                    return Err(Error::InvalidArgument(format!(
                        "example {} is missing a label in a {:?} dataset",
                        e.id, self.kind
                    )))
                }
                (_, Some(l)) if l >= self.class_names.len() => {
                    return Err(Error::InvalidArgument(format!(
                        "example {} label {} out of range",
                        e.id, l
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Examples of this dataset minus those whose ids appear in `ids`.
    pub fn without_ids(&self, ids: &[usize]) -> Dataset {
        let exclude: std::collections::BTreeSet<usize> = ids.iter().cloned().collect();
        Dataset {
            examples: self
                .examples
                .iter()
                .filter(|e| !exclude.contains(&e.id))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.id).collect()
    }

    pub fn example_by_id(&self, id: usize) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }
}

/// How many examples the few-shot training set contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewShotMode {
    /// Exactly `k` examples of every class.
    PerClass,
    /// Exactly `k` examples in total, label-balanced up to remainder.
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub mode: FewShotMode,
    pub k: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Record {
    text_a: String,
    #[serde(default)]
    text_b: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

/// Load a JSONL dataset. Record order in the file defines example ids.
pub fn load_dataset(path: &Path, meta: &DatasetMeta, kind: DatasetKind) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if record.text_a.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: "text_a is empty".into(),
            });
        }
        let label = match record.label {
            None => None,
            Some(name) => Some(resolve_label(&name, &meta.class_names).ok_or_else(|| {
                Error::UnknownLabel {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    label: name.clone(),
                    known: meta.class_names.clone(),
                }
            })?),
        };
        examples.push(Example {
            id: examples.len(),
            text_a: record.text_a,
            text_b: record.text_b,
            label,
        });
    }
    if examples.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let ds = Dataset {
        name: meta.name.clone(),
        task: meta.task,
        class_names: meta.class_names.clone(),
        kind,
        examples,
    };
    ds.validate()?;
    Ok(ds)
}

/// Case-sensitive exact match; silent normalization hides data bugs.
fn resolve_label(name: &str, class_names: &[String]) -> Option<usize> {
    class_names.iter().position(|c| c == name)
}

/// Write a dataset back out as JSONL (labels as class names).
pub fn save_jsonl(ds: &Dataset, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for e in &ds.examples {
        let record = Record {
            text_a: e.text_a.clone(),
            text_b: e.text_b.clone(),
            label: e.label.map(|l| ds.class_names[l].clone()),
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_meta(meta: &DatasetMeta, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn load_meta(path: &Path) -> Result<DatasetMeta> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Draw the few-shot training set. Deterministic in `(d, spec)`; sampling
/// is without replacement; the result keeps original ids, sorted.
pub fn sample_few_shot(d: &Dataset, spec: &FewShotSpec) -> Result<Dataset> {
    if d.kind != DatasetKind::Labeled {
        return Err(Error::InvalidArgument(
            "few-shot sampling needs a labeled dataset".into(),
        ));
    }
    if spec.k == 0 {
        return Err(Error::InvalidArgument("few-shot k must be positive".into()));
    }
    let c = d.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (pos, e) in d.examples.iter().enumerate() {
        by_class[e.label.expect("validated labeled dataset")].push(pos);
    }

    let per_class: Vec<usize> = match spec.mode {
        FewShotMode::PerClass => vec![spec.k; c],
        FewShotMode::Total => {
            let base = spec.k / c;
            let remainder = spec.k % c;
            // Which classes absorb the remainder is part of the seeded draw.
            let mut order: Vec<usize> = (0..c).collect();
            order.shuffle(&mut seeded_rng(spec.seed.wrapping_mul(0x9e3779b97f4a7c15)));
            let mut counts = vec![base; c];
            for &cls in order.iter().take(remainder) {
                counts[cls] += 1;
            }
            counts
        }
    };

    let mut rng = seeded_rng(spec.seed);
    let mut selected = Vec::new();
    for (cls, want) in per_class.iter().enumerate() {
        let pool = &by_class[cls];
        if pool.len() < *want {
            return Err(Error::InsufficientClassExamples {
                class: cls,
                have: pool.len(),
                need: *want,
            });
        }
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut rng);
        selected.extend(shuffled.into_iter().take(*want));
    }
    selected.sort_unstable();
    Ok(Dataset {
        examples: selected.iter().map(|&p| d.examples[p].clone()).collect(),
        ..d.clone()
    })
}

/// Materialize the unlabeled pool: sample `n` examples without
/// replacement and drop their labels.
pub fn strip_labels(d: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > d.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} from {} examples",
            d.len()
        )));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut picked: Vec<usize> = order.into_iter().take(n).collect();
    picked.sort_unstable();
    Ok(Dataset {
        kind: DatasetKind::Unlabeled,
        examples: picked
            .iter()
            .map(|&p| Example {
                label: None,
                ..d.examples[p].clone()
            })
            .collect(),
        ..d.clone()
    })
}

/// Synthetic marker-token corpus for desk-scale runs: the class of every
/// example is carried by a single marker word buried in noise words.
pub mod synth {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub const MARKERS: [&str; 2] = ["zephyr", "quartz"];
    pub const CLASS_NAMES: [&str; 2] = ["breeze", "stone"];

    /// Few noise types keep chance noise/class correlations weak in small
    /// few-shot samples; the marker is the only reliable signal.
    fn noise_word(rng: &mut ChaCha8Rng) -> String {
        format!("n{:02}", rng.random_range(0..8))
    }

    fn marker_example(id: usize, class: usize, markers: &[&str], rng: &mut ChaCha8Rng) -> Example {
        let len = rng.random_range(5..10);
        let marker_at = rng.random_range(0..len);
        let words: Vec<String> = (0..len)
            .map(|i| {
                if i == marker_at {
                    markers[class].to_string()
                } else {
                    noise_word(rng)
                }
            })
            .collect();
        Example {
            id,
            text_a: words.join(" "),
            text_b: None,
            label: Some(class),
        }
    }

    /// A labeled pool of `n` examples cycling through the classes; the
    /// class of each example is carried by its marker word.
    pub fn marker_dataset_with(
        name: &str,
        n: usize,
        seed: u64,
        markers: &[&str],
        class_names: &[&str],
    ) -> Dataset {
        assert_eq!(markers.len(), class_names.len());
        let mut rng = seeded_rng(seed);
        let examples = (0..n)
            .map(|i| marker_example(i, i % markers.len(), markers, &mut rng))
            .collect();
        Dataset {
            name: name.to_string(),
            task: Task::TC,
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            kind: DatasetKind::Labeled,
            examples,
        }
    }

    /// The default two-class pool.
    pub fn marker_dataset(name: &str, n: usize, seed: u64) -> Dataset {
        marker_dataset_with(name, n, seed, &MARKERS, &CLASS_NAMES)
    }

    pub fn marker_meta(name: &str) -> DatasetMeta {
        DatasetMeta {
            name: name.to_string(),
            task: Task::TC,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}
