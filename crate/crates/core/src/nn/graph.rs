//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Graph`] records every operation as a node; calling [`Graph::backward`]
//! on a scalar node fills in gradients for all ancestors. Graphs are built
//! fresh for each forward/backward pass and dropped afterwards; model
//! parameters live outside the graph and enter it as leaves.

use ndarray::{s, Array2, Axis};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    SumAll(usize),
    MeanOverRows(usize),
    SelectRows(usize, Vec<usize>),
    ComposeRows {
        text: usize,
        soft: usize,
        slots: Vec<usize>,
    },
    ConcatRows(Vec<usize>),
    ConcatCols(usize, usize),
    SliceCols(usize, usize, usize),
    LayerNormRows {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    L2NormalizeRows(usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// A tape of matrix operations supporting one backward pass.
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on non-1x1 node");
        val[[0, 0]]
    }

    /// Insert a matrix as a leaf node. Leaves accumulate gradients like any
    /// other node; whether a leaf is a trainable parameter or a constant is
    /// the caller's business.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape");
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    /// `a` is `n x d`, `row` is `1 x d`; the row is added to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = self.value(a).dim();
        assert_eq!(self.value(row).dim(), (1, d), "add_row shape");
        let v = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(v, Op::AddRow(a.0, row.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape");
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape");
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(v, Op::Scale(a.0, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (_, ak) = self.value(a).dim();
        let (bk, _) = self.value(b).dim();
        assert_eq!(ak, bk, "matmul inner dims");
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, Op::Transpose(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(&self.nodes[a.0].value);
        self.push(v, Op::SoftmaxRows(a.0))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(&self.nodes[a.0].value);
        self.push(v, Op::LogSoftmaxRows(a.0))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a.0))
    }

    /// `n x d` -> `1 x d` column means.
    pub fn mean_over_rows(&mut self, a: Var) -> Var {
        let (n, d) = self.value(a).dim();
        assert!(n > 0, "mean_over_rows on empty matrix");
        let m = self.nodes[a.0].value.sum_axis(Axis(0)) / n as f64;
        let v = m.into_shape_with_order((1, d)).unwrap();
        self.push(v, Op::MeanOverRows(a.0))
    }

    /// Gather rows by index; indices may repeat.
    pub fn select_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let src = &self.nodes[a.0].value;
        let (n, d) = src.dim();
        let mut v = Array2::zeros((indices.len(), d));
        for (out, &i) in indices.iter().enumerate() {
            assert!(i < n, "select_rows index out of range");
            v.row_mut(out).assign(&src.row(i));
        }
        self.push(v, Op::SelectRows(a.0, indices))
    }

    /// Copy `text` and overwrite row `slots[k]` with row `k` of `soft`.
    /// Slot positions must be distinct. The overwrite is a bit-exact row copy.
    pub fn compose_rows(&mut self, text: Var, soft: Var, slots: Vec<usize>) -> Var {
        let (n, d) = self.value(text).dim();
        let (m, ds) = self.value(soft).dim();
        assert_eq!(m, slots.len(), "compose_rows slot count");
        if m > 0 {
            assert_eq!(d, ds, "compose_rows width");
        }
        let mut v = self.nodes[text.0].value.clone();
        for (k, &pos) in slots.iter().enumerate() {
            assert!(pos < n, "compose_rows slot out of range");
            let row = self.nodes[soft.0].value.row(k).to_owned();
            v.row_mut(pos).assign(&row);
        }
        self.push(
            v,
            Op::ComposeRows {
                text: text.0,
                soft: soft.0,
                slots,
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let d = self.value(parts[0]).dim().1;
        let n: usize = parts.iter().map(|p| self.value(*p).dim().0).sum();
        let mut v = Array2::zeros((n, d));
        let mut at = 0;
        for p in parts {
            let block = &self.nodes[p.0].value;
            assert_eq!(block.dim().1, d, "concat_rows width");
            v.slice_mut(s![at..at + block.dim().0, ..]).assign(block);
            at += block.dim().0;
        }
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (n, da) = self.value(a).dim();
        let (nb, db) = self.value(b).dim();
        assert_eq!(n, nb, "concat_cols height");
        let mut v = Array2::zeros((n, da + db));
        v.slice_mut(s![.., ..da]).assign(&self.nodes[a.0].value);
        v.slice_mut(s![.., da..]).assign(&self.nodes[b.0].value);
        self.push(v, Op::ConcatCols(a.0, b.0))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (_, d) = self.value(a).dim();
        assert!(start < end && end <= d, "slice_cols range");
        let v = self.nodes[a.0].value.slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a.0, start, end))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (_, d) = self.value(x).dim();
        assert_eq!(self.value(gamma).dim(), (1, d), "layer_norm gamma shape");
        assert_eq!(self.value(beta).dim(), (1, d), "layer_norm beta shape");
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gamma.0].value;
        let b = &self.nodes[beta.0].value;
        let mut v = xv.clone();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, e) in row.iter_mut().enumerate() {
                *e = (*e - mean) * inv * g[[0, j]] + b[[0, j]];
            }
        }
        self.push(
            v,
            Op::LayerNormRows {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                eps,
            },
        )
    }

    /// Scale each row to unit L2 norm. Rows must be nonzero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.nodes[a.0].value.clone();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(n > 0.0, "l2_normalize_rows on zero row");
            row.mapv_inplace(|x| x / n);
        }
        self.push(v, Op::L2NormalizeRows(a.0))
    }

    /// Backpropagate from a `1 x 1` loss node. Returns per-node gradients;
    /// use [`Graph::grad`] to read them back.
    pub fn backward(&mut self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate_parents(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let add_to = |grads: &mut [Option<Array2<f64>>], p: usize, delta: Array2<f64>| {
            match &mut grads[p] {
                Some(acc) => *acc += &delta,
                None => grads[p] = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                add_to(grads, *a, g.clone());
                let d = g.dim().1;
                let rg = g.sum_axis(Axis(0)).into_shape_with_order((1, d)).unwrap();
                add_to(grads, *row, rg);
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                add_to(grads, *a, g * &self.nodes[*b].value);
                add_to(grads, *b, g * &self.nodes[*a].value);
            }
            Op::Scale(a, c) => add_to(grads, *a, g.mapv(|x| x * c)),
            Op::MatMul(a, b) => {
                add_to(grads, *a, g.dot(&self.nodes[*b].value.t()));
                add_to(grads, *b, self.nodes[*a].value.t().dot(g));
            }
            Op::Transpose(a) => add_to(grads, *a, g.t().to_owned()),
            Op::Relu(a) => {
                let mask = self.nodes[*a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                add_to(grads, *a, g * &mask);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g * &y.mapv(|y| 1.0 - y * y));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                add_to(grads, *a, g * &y.mapv(|y| y * (1.0 - y)));
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let gy = g * y;
                let rowsum = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                add_to(grads, *a, &gy - &(y * &rowsum));
            }
            Op::LogSoftmaxRows(a) => {
                let soft = self.nodes[i].value.mapv(f64::exp);
                let rowsum = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                add_to(grads, *a, g - &(&soft * &rowsum));
            }
            Op::SumAll(a) => {
                let shape = self.nodes[*a].value.dim();
                add_to(grads, *a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::MeanOverRows(a) => {
                let (n, d) = self.nodes[*a].value.dim();
                let mut da = Array2::zeros((n, d));
                let scaled = g.mapv(|x| x / n as f64);
                for mut row in da.axis_iter_mut(Axis(0)) {
                    row.assign(&scaled.row(0));
                }
                add_to(grads, *a, da);
            }
            Op::SelectRows(a, indices) => {
                let shape = self.nodes[*a].value.dim();
                let mut da = Array2::zeros(shape);
                for (out, &idx) in indices.iter().enumerate() {
                    let mut r = da.row_mut(idx);
                    r += &g.row(out);
                }
                add_to(grads, *a, da);
            }
            Op::ComposeRows { text, soft, slots } => {
                let mut dt = g.clone();
                let (m, d) = self.nodes[*soft].value.dim();
                let mut ds = Array2::zeros((m, d));
                for (k, &pos) in slots.iter().enumerate() {
                    ds.row_mut(k).assign(&g.row(pos));
                    dt.row_mut(pos).fill(0.0);
                }
                add_to(grads, *text, dt);
                add_to(grads, *soft, ds);
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let rows = self.nodes[p].value.dim().0;
                    add_to(grads, p, g.slice(s![at..at + rows, ..]).to_owned());
                    at += rows;
                }
            }
            Op::ConcatCols(a, b) => {
                let da = self.nodes[*a].value.dim().1;
                add_to(grads, *a, g.slice(s![.., ..da]).to_owned());
                add_to(grads, *b, g.slice(s![.., da..]).to_owned());
            }
            Op::SliceCols(a, start, end) => {
                let shape = self.nodes[*a].value.dim();
                let mut da = Array2::zeros(shape);
                da.slice_mut(s![.., *start..*end]).assign(g);
                add_to(grads, *a, da);
            }
            Op::LayerNormRows { x, gamma, beta, eps } => {
                let xv = &self.nodes[*x].value;
                let gv = &self.nodes[*gamma].value;
                let (n, d) = xv.dim();
                let mut dx = Array2::zeros((n, d));
                let mut dgamma = Array2::zeros((1, d));
                let mut dbeta = Array2::zeros((1, d));
                for r in 0..n {
                    let row = xv.row(r);
                    let mean = row.sum() / d as f64;
                    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                    let grow = g.row(r);
                    let dxhat: Vec<f64> =
                        (0..d).map(|j| grow[j] * gv[[0, j]]).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dxhat_xhat =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dx[[r, j]] = inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                        dgamma[[0, j]] += grow[j] * xhat[j];
                        dbeta[[0, j]] += grow[j];
                    }
                }
                add_to(grads, *x, dx);
                add_to(grads, *gamma, dgamma);
                add_to(grads, *beta, dbeta);
            }
            Op::L2NormalizeRows(a) => {
                let xv = &self.nodes[*a].value;
                let yv = &self.nodes[i].value;
                let (n, d) = xv.dim();
                let mut dx = Array2::zeros((n, d));
                for r in 0..n {
                    let norm = xv.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                    let dot: f64 = (0..d).map(|j| g[[r, j]] * yv[[r, j]]).sum();
                    for j in 0..d {
                        dx[[r, j]] = (g[[r, j]] - yv[[r, j]] * dot) / norm;
                    }
                }
                add_to(grads, *a, dx);
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zero-shaped gradients are
    /// returned for nodes the loss does not depend on.
    pub fn get(&self, g: &Graph, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(a) => a.clone(),
            None => Array2::zeros(g.value(v).dim()),
        }
    }
}

/// Row-stable softmax of a plain matrix.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-stable log-softmax of a plain matrix.
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::randn;
    use rand_chacha::ChaCha8Rng;
    use rand_chacha::rand_core::SeedableRng;

    /// Central-difference gradient check for a graph-building closure.
    /// `build` receives leaf vars for each input and returns the scalar loss.
    fn check_grads(
        inputs: &[Array2<f64>],
        build: &dyn Fn(&mut Graph, &[Var]) -> Var,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
        let loss = build(&mut g, &vars);
        let grads = g.backward(loss);

        let eps = 1e-5;
        for (vi, input) in inputs.iter().enumerate() {
            let analytic = grads.get(&g, vars[vi]);
            let (r, c) = input.dim();
            for i in 0..r {
                for j in 0..c {
                    let eval = |delta: f64| {
                        let mut g2 = Graph::new();
                        let vars2: Vec<Var> = inputs
                            .iter()
                            .enumerate()
                            .map(|(k, a)| {
                                let mut a = a.clone();
                                if k == vi {
                                    a[[i, j]] += delta;
                                }
                                g2.leaf(a)
                            })
                            .collect();
                        let l = build(&mut g2, &vars2);
                        g2.scalar(l)
                    };
                    let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
                    let a = analytic[[i, j]];
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (a - numeric).abs() / denom < tol,
                        "input {vi} [{i},{j}]: analytic {a} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn matmul_add_relu_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, 3, 4, 1.0);
        let w = randn(&mut rng, 4, 2, 1.0);
        let b = randn(&mut rng, 1, 2, 1.0);
        check_grads(
            &[x, w, b],
            &|g, v| {
                let h = g.matmul(v[0], v[1]);
                let h = g.add_row(h, v[2]);
                let h = g.relu(h);
                g.sum_all(h)
            },
            1e-5,
        );
    }

    #[test]
    fn softmax_and_log_softmax_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(&mut rng, 3, 5, 1.0);
        let w = randn(&mut rng, 3, 5, 1.0);
        check_grads(
            &[x.clone(), w.clone()],
            &|g, v| {
                let s = g.softmax_rows(v[0]);
                let p = g.mul(s, v[1]);
                g.sum_all(p)
            },
            1e-5,
        );
        check_grads(
            &[x, w],
            &|g, v| {
                let s = g.log_softmax_rows(v[0]);
                let p = g.mul(s, v[1]);
                g.sum_all(p)
            },
            1e-5,
        );
    }

    #[test]
    fn layer_norm_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, 4, 6, 1.0);
        let gamma = randn(&mut rng, 1, 6, 1.0);
        let beta = randn(&mut rng, 1, 6, 1.0);
        let probe = randn(&mut rng, 4, 6, 1.0);
        check_grads(
            &[x, gamma, beta, probe],
            &|g, v| {
                let y = g.layer_norm_rows(v[0], v[1], v[2], 1e-5);
                let p = g.mul(y, v[3]);
                g.sum_all(p)
            },
            1e-4,
        );
    }

    #[test]
    fn gather_compose_concat_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = randn(&mut rng, 6, 3, 1.0);
        let soft = randn(&mut rng, 2, 3, 1.0);
        let probe = randn(&mut rng, 4, 3, 1.0);
        check_grads(
            &[table, soft, probe],
            &|g, v| {
                let text = g.select_rows(v[0], vec![1, 4, 4, 0]);
                let x = g.compose_rows(text, v[1], vec![0, 2]);
                let p = g.mul(x, v[2]);
                g.sum_all(p)
            },
            1e-5,
        );
    }

    #[test]
    fn l2_normalize_and_cosine_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = randn(&mut rng, 3, 4, 1.0);
        let b = randn(&mut rng, 2, 4, 1.0);
        let probe = randn(&mut rng, 3, 2, 1.0);
        check_grads(
            &[a, b, probe],
            &|g, v| {
                let na = g.l2_normalize_rows(v[0]);
                let nb = g.l2_normalize_rows(v[1]);
                let nbt = g.transpose(nb);
                let cos = g.matmul(na, nbt);
                let p = g.mul(cos, v[2]);
                g.sum_all(p)
            },
            1e-5,
        );
    }

    #[test]
    fn concat_slice_mean_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = randn(&mut rng, 2, 3, 1.0);
        let b = randn(&mut rng, 2, 2, 1.0);
        let c = randn(&mut rng, 3, 5, 1.0);
        let probe = randn(&mut rng, 1, 5, 1.0);
        check_grads(
            &[a, b, c, probe],
            &|g, v| {
                let ab = g.concat_cols(v[0], v[1]);
                let stack = g.concat_rows(&[ab, v[2]]);
                let sl = g.slice_cols(stack, 1, 4);
                let t = g.tanh(sl);
                let sg = g.sigmoid(t);
                let wide = g.concat_cols(sg, sl);
                let m = g.mean_over_rows(wide);
                let sub = g.slice_cols(m, 0, 5);
                let p = g.mul(sub, v[3]);
                g.sum_all(p)
            },
            1e-5,
        );
    }

    #[test]
    fn softmax_rows_is_shift_invariant_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = randn(&mut rng, 10, 6, 3.0);
        let shifted = x.mapv(|v| v + 123.0);
        let a = softmax_rows(&x);
        let b = softmax_rows(&shifted);
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
        for row in a.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
