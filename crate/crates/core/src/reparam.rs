//! Reparameterization of soft-prompt embeddings.
//!
//! Free parameters do not feed the backbone directly: they pass through a
//! two-layer bidirectional LSTM and a two-layer ReLU perceptron, which
//! stabilizes optimization. Position `i` of the output combines the
//! forward-direction encoder state at `i` with the backward-direction state
//! at `i`.
//!
//! One block holds the single shared token bank of a labeler model:
//! demonstration-side and input-side soft slots index the same rows.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::{randn, seeded_rng, AdamW, Bound, GradMap, Graph, Params, Var};

struct LstmDir {
    w_ih: Array2<f64>, // input x 4h
    w_hh: Array2<f64>, // h x 4h
    b: Array2<f64>,    // 1 x 4h
}

/// Trainable state producing `n_tokens` prompt embeddings of width
/// `d_hidden` (which must equal the backbone embedding dimension).
pub struct ReparamBlock {
    pub n_tokens: usize,
    pub d_hidden: usize,
    pub seed: u64,
    raw: Array2<f64>,
    lstm: Vec<LstmDir>, // l0 fwd, l0 bwd, l1 fwd, l1 bwd
    mlp_w1: Array2<f64>,
    mlp_b1: Array2<f64>,
    mlp_w2: Array2<f64>,
    mlp_b2: Array2<f64>,
}

const INIT_SCALE: f64 = 0.02;

fn dir_names() -> [&'static str; 4] {
    ["lstm0f", "lstm0b", "lstm1f", "lstm1b"]
}

/// Fresh block with zero-mean random parameters (scale 0.02), reproducible
/// from the seed.
pub fn init_block(n_tokens: usize, d_hidden: usize, seed: u64) -> Result<ReparamBlock> {
    if n_tokens == 0 {
        return Err(Error::InvalidArgument("n_tokens must be >= 1".into()));
    }
    if d_hidden == 0 {
        return Err(Error::InvalidArgument("d_hidden must be >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let h = d_hidden;
    // Layer 0 consumes the raw tokens (width h); layer 1 consumes the
    // concatenated bidirectional outputs (width 2h).
    let input_widths = [h, h, 2 * h, 2 * h];
    let lstm = input_widths
        .iter()
        .map(|&input| LstmDir {
            w_ih: randn(&mut rng, input, 4 * h, INIT_SCALE),
            w_hh: randn(&mut rng, h, 4 * h, INIT_SCALE),
            b: Array2::zeros((1, 4 * h)),
        })
        .collect();
    Ok(ReparamBlock {
        n_tokens,
        d_hidden,
        seed,
        raw: randn(&mut rng, n_tokens, h, INIT_SCALE),
        lstm,
        mlp_w1: randn(&mut rng, 2 * h, h, INIT_SCALE),
        mlp_b1: randn(&mut rng, 1, h, INIT_SCALE),
        mlp_w2: randn(&mut rng, h, h, INIT_SCALE),
        mlp_b2: Array2::zeros((1, h)),
    })
}

impl Params for ReparamBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
        f("raw", &self.raw);
        for (dir, name) in self.lstm.iter().zip(dir_names()) {
            f(&format!("{name}.w_ih"), &dir.w_ih);
            f(&format!("{name}.w_hh"), &dir.w_hh);
            f(&format!("{name}.b"), &dir.b);
        }
        f("mlp.w1", &self.mlp_w1);
        f("mlp.b1", &self.mlp_b1);
        f("mlp.w2", &self.mlp_w2);
        f("mlp.b2", &self.mlp_b2);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
        f("raw", &mut self.raw);
        for (dir, name) in self.lstm.iter_mut().zip(dir_names()) {
            f(&format!("{name}.w_ih"), &mut dir.w_ih);
            f(&format!("{name}.w_hh"), &mut dir.w_hh);
            f(&format!("{name}.b"), &mut dir.b);
        }
        f("mlp.w1", &mut self.mlp_w1);
        f("mlp.b1", &mut self.mlp_b1);
        f("mlp.w2", &mut self.mlp_w2);
        f("mlp.b2", &mut self.mlp_b2);
    }
}

fn lstm_cell(
    g: &mut Graph,
    x: Var,
    state: (Var, Var),
    weights: (Var, Var, Var),
    h: usize,
) -> (Var, Var) {
    let (h_prev, c_prev) = state;
    let (w_ih, w_hh, b) = weights;
    let zx = g.matmul(x, w_ih);
    let zh = g.matmul(h_prev, w_hh);
    let z = g.add(zx, zh);
    let z = g.add_row(z, b);
    let i_gate = g.slice_cols(z, 0, h);
    let i_gate = g.sigmoid(i_gate);
    let f_gate = g.slice_cols(z, h, 2 * h);
    let f_gate = g.sigmoid(f_gate);
    let g_gate = g.slice_cols(z, 2 * h, 3 * h);
    let g_gate = g.tanh(g_gate);
    let o_gate = g.slice_cols(z, 3 * h, 4 * h);
    let o_gate = g.sigmoid(o_gate);
    let fc = g.mul(f_gate, c_prev);
    let ig = g.mul(i_gate, g_gate);
    let c = g.add(fc, ig);
    let tc = g.tanh(c);
    let h_out = g.mul(o_gate, tc);
    (h_out, c)
}

fn run_direction(
    g: &mut Graph,
    inputs: &[Var],
    bound: &Bound,
    name: &str,
    h: usize,
    reverse: bool,
) -> Vec<Var> {
    let w_ih = bound.var(&format!("{name}.w_ih"));
    let w_hh = bound.var(&format!("{name}.w_hh"));
    let b = bound.var(&format!("{name}.b"));
    let mut h_state = g.leaf(Array2::zeros((1, h)));
    let mut c_state = g.leaf(Array2::zeros((1, h)));
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    let mut outputs = vec![None; inputs.len()];
    for t in order {
        let (h_new, c_new) = lstm_cell(g, inputs[t], (h_state, c_state), (w_ih, w_hh, b), h);
        outputs[t] = Some(h_new);
        h_state = h_new;
        c_state = c_new;
    }
    outputs.into_iter().map(|o| o.unwrap()).collect()
}

impl ReparamBlock {
    /// Build the prompt embeddings on an existing graph so training can
    /// differentiate through the block. Output is `n_tokens x d_hidden`.
    pub fn forward_graph(&self, g: &mut Graph, bound: &Bound) -> Var {
        let h = self.d_hidden;
        let raw = bound.var("raw");
        let rows: Vec<Var> = (0..self.n_tokens)
            .map(|t| g.select_rows(raw, vec![t]))
            .collect();

        let l0f = run_direction(g, &rows, bound, "lstm0f", h, false);
        let l0b = run_direction(g, &rows, bound, "lstm0b", h, true);
        let l0: Vec<Var> = (0..self.n_tokens)
            .map(|t| g.concat_cols(l0f[t], l0b[t]))
            .collect();

        let l1f = run_direction(g, &l0, bound, "lstm1f", h, false);
        let l1b = run_direction(g, &l0, bound, "lstm1b", h, true);
        let states: Vec<Var> = (0..self.n_tokens)
            .map(|t| g.concat_cols(l1f[t], l1b[t]))
            .collect();
        let stacked = g.concat_rows(&states);

        let a1 = g.matmul(stacked, bound.var("mlp.w1"));
        let a1 = g.add_row(a1, bound.var("mlp.b1"));
        let a1 = g.relu(a1);
        let a2 = g.matmul(a1, bound.var("mlp.w2"));
        g.add_row(a2, bound.var("mlp.b2"))
    }

    /// The prompt embedding matrix as plain numbers.
    pub fn forward(&self) -> Result<Array2<f64>> {
        if !self.all_finite() {
            return Err(Error::NonFinite("reparameterization parameters".into()));
        }
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, self);
        let out = self.forward_graph(&mut g, &bound);
        Ok(g.value(out).clone())
    }
}

/// Apply one decoupled-weight-decay update to the block. Gradient names must
/// all belong to the block; shapes and finiteness are validated by the
/// optimizer.
pub fn optimize_step(
    block: &mut ReparamBlock,
    grads: &GradMap,
    opt: &mut AdamW,
    lr_scale: f64,
) -> Result<()> {
    let known = block.param_map();
    for name in grads.0.keys() {
        if !known.contains_key(name) {
            return Err(Error::ShapeMismatch(format!(
                "gradient for unknown parameter {name:?}"
            )));
        }
    }
    opt.step(block, grads, lr_scale)
}

/// Central-difference gradient check of a sum-of-outputs probe loss over
/// every parameter group. Returns the maximum relative error observed.
pub fn gradient_check(block: &ReparamBlock, eps: f64) -> Result<f64> {
    let mut g = Graph::new();
    let bound = Bound::new(&mut g, block);
    let out = block.forward_graph(&mut g, &bound);
    let loss = g.sum_all(out);
    let grads = g.backward(loss);
    let analytic = bound.grads(&g, &grads);

    let probe = |arrays: &std::collections::BTreeMap<String, Array2<f64>>| -> f64 {
        let mut clone = init_block(block.n_tokens, block.d_hidden, block.seed).unwrap();
        crate::nn::restore_params(&mut clone, arrays).unwrap();
        clone.forward().unwrap().sum()
    };

    let base = block.param_map();
    let mut max_rel = 0.0f64;
    for (name, array) in &base {
        let analytic_grad = analytic.get(name).expect("gradient for every parameter");
        let (r, c) = array.dim();
        for i in 0..r {
            for j in 0..c {
                let mut plus = base.clone();
                plus.get_mut(name).unwrap()[[i, j]] += eps;
                let mut minus = base.clone();
                minus.get_mut(name).unwrap()[[i, j]] -= eps;
                let numeric = (probe(&plus) - probe(&minus)) / (2.0 * eps);
                let a = analytic_grad[[i, j]];
                // Floor the denominator at the central-difference noise
                // level (|loss| * ulp / eps ~ 1e-11) so gradients the probe
                // cannot resolve are compared absolutely, not relatively.
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                let rel = (a - numeric).abs() / denom;
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_validates_sizes_and_is_reproducible() {
        assert!(init_block(0, 8, 1).is_err());
        assert!(init_block(3, 0, 1).is_err());
        let a = init_block(5, 16, 7).unwrap();
        let b = init_block(5, 16, 7).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = init_block(5, 16, 8).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn forward_shape_and_purity() {
        let block = init_block(5, 12, 3).unwrap();
        let out = block.forward().unwrap();
        assert_eq!(out.dim(), (5, 12));
        let again = block.forward().unwrap();
        assert_eq!(
            out.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            again.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn forward_at_full_scale_width() {
        // The published configuration: 5 tokens at hidden width 768.
        let block = init_block(5, 768, 0).unwrap();
        let out = block.forward().unwrap();
        assert_eq!(out.dim(), (5, 768));
        assert!(out.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn forward_rejects_non_finite_parameters() {
        let mut block = init_block(2, 4, 1).unwrap();
        block.visit_mut(&mut |name, a| {
            if name == "raw" {
                a[[0, 0]] = f64::NAN;
            }
        });
        assert!(matches!(block.forward(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gradients_match_central_differences() {
        let block = init_block(3, 6, 11).unwrap();
        let max_rel = gradient_check(&block, 1e-5).unwrap();
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut block = init_block(3, 4, 2).unwrap();
        let before = block.fingerprint();
        let mut grads = GradMap::default();
        for (name, a) in block.param_map() {
            grads.0.insert(name, Array2::zeros(a.dim()));
        }
        let mut opt = AdamW::new(1e-5, 0.0);
        optimize_step(&mut block, &grads, &mut opt, 1.0).unwrap();
        assert_eq!(before, block.fingerprint());
    }

    #[test]
    fn step_rejects_bad_gradients() {
        let mut block = init_block(2, 4, 2).unwrap();
        let mut opt = AdamW::new(1e-5, 0.01);
        let mut unknown = GradMap::default();
        unknown.0.insert("nope".into(), Array2::zeros((1, 1)));
        assert!(optimize_step(&mut block, &unknown, &mut opt, 1.0).is_err());
        let mut non_finite = GradMap::default();
        non_finite
            .0
            .insert("raw".into(), Array2::from_elem((2, 4), f64::INFINITY));
        assert!(optimize_step(&mut block, &non_finite, &mut opt, 1.0).is_err());
        let mut wrong_shape = GradMap::default();
        wrong_shape.0.insert("raw".into(), Array2::zeros((1, 4)));
        assert!(optimize_step(&mut block, &wrong_shape, &mut opt, 1.0).is_err());
    }

    #[test]
    fn training_step_changes_output() {
        let mut block = init_block(2, 4, 9).unwrap();
        let before = block.forward().unwrap();
        let mut g = Graph::new();
        let bound = Bound::new(&mut g, &block);
        let out = block.forward_graph(&mut g, &bound);
        let loss = g.sum_all(out);
        let grads = g.backward(loss);
        let grad_map = bound.grads(&g, &grads);
        let mut opt = AdamW::new(1e-2, 0.01);
        optimize_step(&mut block, &grad_map, &mut opt, 1.0).unwrap();
        let after = block.forward().unwrap();
        assert!(after.sum() < before.sum());
    }

    #[test]
    fn repeated_forwards_stay_bounded() {
        let block = init_block(2, 4, 5).unwrap();
        let first = block.forward().unwrap();
        for _ in 0..10_000 {
            let out = block.forward().unwrap();
            assert!(out.iter().all(|x| x.is_finite()));
            assert_eq!(out, first);
        }
    }
}
