//! Minimal neural-network toolkit: autodiff graph, parameter handling,
//! decoupled-weight-decay optimizer, and checkpoint i/o.

mod graph;
mod optim;

pub use graph::{log_softmax_rows, softmax_rows, Gradients, Graph, Var};
pub use optim::{linear_schedule, AdamW};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic RNG used everywhere a seed appears in a public API.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a base seed and a salt
/// (splitmix64 finalizer).
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Matrix with i.i.d. normal entries of the given standard deviation
/// (Box-Muller over the generator's uniform stream).
pub fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std
    })
}

/// A model whose trainable state is a set of named matrices.
///
/// Names are stable across save/load and identify optimizer state slots.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>));

    fn param_map(&self) -> BTreeMap<String, Array2<f64>> {
        let mut out = BTreeMap::new();
        self.visit(&mut |name, a| {
            out.insert(name.to_string(), a.clone());
        });
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, a| n += a.len());
        n
    }

    /// Byte-exact snapshot of all parameters, for freezing checks.
    fn fingerprint(&self) -> Vec<u64> {
        let mut bits = Vec::new();
        self.visit(&mut |_, a| bits.extend(a.iter().map(|x| x.to_bits())));
        bits
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, a| ok &= a.iter().all(|x| x.is_finite()));
        ok
    }
}

/// Model parameters bound into a graph as leaves, addressable by name.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn new(g: &mut Graph, model: &impl Params) -> Self {
        let mut vars = BTreeMap::new();
        model.visit(&mut |name, a| {
            vars.insert(name.to_string(), g.leaf(a.clone()));
        });
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name:?}"))
    }

    /// Read back gradients for every bound parameter.
    pub fn grads(&self, g: &Graph, grads: &Gradients) -> GradMap {
        GradMap(
            self.vars
                .iter()
                .map(|(name, var)| (name.clone(), grads.get(g, *var)))
                .collect(),
        )
    }
}

/// Named gradients, matching a model's parameter names.
#[derive(Debug, Default)]
pub struct GradMap(pub BTreeMap<String, Array2<f64>>);

impl GradMap {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.0.get(name)
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(|a| a.iter().all(|x| x.is_finite()))
    }

    /// Elementwise sum; shapes must agree where names overlap.
    pub fn accumulate(&mut self, other: &GradMap) {
        for (name, grad) in &other.0 {
            match self.0.get_mut(name) {
                Some(acc) => *acc += grad,
                None => {
                    self.0.insert(name.clone(), grad.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for grad in self.0.values_mut() {
            grad.mapv_inplace(|x| x * c);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoredArray {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    meta: serde_json::Value,
    arrays: BTreeMap<String, StoredArray>,
}

const CHECKPOINT_FORMAT: &str = "prompt-pet/arrays-v1";

/// Write named parameter arrays plus a free-form metadata object.
pub fn save_checkpoint(path: &Path, model: &impl Params, meta: serde_json::Value) -> Result<()> {
    let mut arrays = BTreeMap::new();
    model.visit(&mut |name, a| {
        arrays.insert(
            name.to_string(),
            StoredArray {
                shape: [a.dim().0, a.dim().1],
                data: a.iter().cloned().collect(),
            },
        );
    });
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        meta,
        arrays,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
    Ok(())
}

/// Read a checkpoint back as (metadata, name -> matrix).
pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, BTreeMap<String, Array2<f64>>)> {
    let file = std::fs::File::open(path)?;
    let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format {:?}",
            path.display(),
            ckpt.format
        )));
    }
    let mut arrays = BTreeMap::new();
    for (name, stored) in ckpt.arrays {
        let [r, c] = stored.shape;
        if stored.data.len() != r * c {
            return Err(Error::Checkpoint(format!(
                "{}: array {name:?} has {} values for shape {r}x{c}",
                path.display(),
                stored.data.len()
            )));
        }
        let arr = Array2::from_shape_vec((r, c), stored.data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        arrays.insert(name, arr);
    }
    Ok((ckpt.meta, arrays))
}

/// Install loaded arrays into a freshly constructed model; every parameter
/// must be present with a matching shape.
pub fn restore_params(
    model: &mut impl Params,
    arrays: &BTreeMap<String, Array2<f64>>,
) -> Result<()> {
    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    model.visit_mut(&mut |name, a| match arrays.get(name) {
        Some(src) if src.dim() == a.dim() => a.assign(src),
        Some(src) => mismatched.push(format!("{name}: {:?} vs {:?}", a.dim(), src.dim())),
        None => missing.push(name.to_string()),
    });
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!("missing arrays: {missing:?}")));
    }
    if !mismatched.is_empty() {
        return Err(Error::ShapeMismatch(mismatched.join("; ")));
    }
    Ok(())
}
