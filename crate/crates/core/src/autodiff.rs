//! A small reverse-mode tape over dense matrices.
//!
//! Only the operations the pipeline needs are provided. Every node stores its
//! forward value; `backward` walks the tape once in reverse and accumulates
//! adjoints. Scalars are `1 x 1` matrices.

use ndarray::{Array2, Axis};

/// Floor applied to probabilities inside the KL term.
pub const KL_Q_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    MatMulAt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    AddDiag(Var),
    RowNormalize(Var),
    StudentT(Var, Var),
    Mse(Var, Array2<f64>),
    BceLogits(Var, Array2<f64>),
    Kl(Array2<f64>, Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Student-t (one degree of freedom) soft assignment of rows of `h` to the
/// rows of `centers`. Rows sum to one.
pub fn student_t(h: &Array2<f64>, centers: &Array2<f64>) -> Array2<f64> {
    let mut q = Array2::zeros((h.nrows(), centers.nrows()));
    for (i, hi) in h.axis_iter(Axis(0)).enumerate() {
        let mut total = 0.0;
        for (j, mu) in centers.axis_iter(Axis(0)).enumerate() {
            let d: f64 = hi.iter().zip(mu.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = 1.0 / (1.0 + d);
            q[[i, j]] = k;
            total += k;
        }
        if total > 0.0 && total.is_finite() {
            q.row_mut(i).mapv_inplace(|k| k / total);
        } else {
            q.row_mut(i).fill(1.0 / centers.nrows() as f64);
        }
    }
    q
}

/// `Σ p log(p / q)` with `0 log 0 = 0` and `q` floored at [`KL_Q_FLOOR`].
pub fn kl_divergence(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q.max(KL_Q_FLOOR)).ln())
        .sum()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::MatMul(a, b)
            | Op::MatMulBt(a, b)
            | Op::MatMulAt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddRow(a, b)
            | Op::StudentT(a, b) => self.needs(*a) || self.needs(*b),
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::AddDiag(a)
            | Op::RowNormalize(a)
            | Op::Mse(a, _)
            | Op::BceLogits(a, _)
            | Op::Kl(_, a) => self.needs(*a),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].needs_grad = false;
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulBt(a, b))
    }

    /// `aᵀ · b`
    pub fn matmul_at(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).t().dot(self.value(b));
        self.push(v, Op::MatMulAt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Adds the `1 x m` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// `a + eps·I`
    pub fn add_diag(&mut self, a: Var, eps: f64) -> Var {
        let mut v = self.value(a).clone();
        v.diag_mut().mapv_inplace(|d| d + eps);
        self.push(v, Op::AddDiag(a))
    }

    /// Divides each row by its sum. Rows must have positive sums.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        self.push(v, Op::RowNormalize(a))
    }

    pub fn student_t(&mut self, h: Var, centers: Var) -> Var {
        let v = student_t(self.value(h), self.value(centers));
        self.push(v, Op::StudentT(h, centers))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, a: Var, target: Array2<f64>) -> Var {
        let diff = self.value(a) - &target;
        let v = diff.mapv(|d| d * d).mean().unwrap_or(0.0);
        self.push(Array2::from_elem((1, 1), v), Op::Mse(a, target))
    }

    /// Mean binary cross-entropy of logits `a` against a constant 0/1 target.
    pub fn bce_logits(&mut self, a: Var, target: Array2<f64>) -> Var {
        let x = self.value(a);
        let v = x
            .iter()
            .zip(target.iter())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / x.len().max(1) as f64;
        self.push(Array2::from_elem((1, 1), v), Op::BceLogits(a, target))
    }

    /// `KL(p ‖ q)` for a constant target `p`.
    pub fn kl(&mut self, p: Array2<f64>, q: Var) -> Var {
        let v = kl_divergence(&p, self.value(q));
        self.push(Array2::from_elem((1, 1), v), Op::Kl(p, q))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.nodes[loss.0].value.dim()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulBt(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], g.dot(self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], g.t().dot(self.value(*a)));
                    }
                }
                Op::MatMulAt(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], self.value(*b).dot(&g.t()));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], self.value(*a).dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], -&g);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[b.0], gb);
                    accumulate(&mut grads[a.0], g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads[a.0], &g * *s),
                Op::Tanh(a) => {
                    let ga = &g * &node.value.mapv(|y| 1.0 - y * y);
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads[a.0], &g * &mask);
                }
                Op::AddDiag(a) => accumulate(&mut grads[a.0], g.clone()),
                Op::RowNormalize(a) => {
                    let input = self.value(*a);
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let r = input.row(i).sum();
                        let gy = g.row(i).dot(&y.row(i));
                        for j in 0..y.ncols() {
                            ga[[i, j]] = (g[[i, j]] - gy) / r;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::StudentT(h, c) => {
                    let (gh, gc) = self.student_t_backward(&g, &node.value, *h, *c);
                    accumulate(&mut grads[h.0], gh);
                    accumulate(&mut grads[c.0], gc);
                }
                Op::Mse(a, target) => {
                    let scale = 2.0 * g[[0, 0]] / target.len().max(1) as f64;
                    let ga = (self.value(*a) - target) * scale;
                    accumulate(&mut grads[a.0], ga);
                }
                Op::BceLogits(a, target) => {
                    let scale = g[[0, 0]] / target.len().max(1) as f64;
                    let mut ga = self.value(*a).mapv(sigmoid);
                    ga -= target;
                    ga *= scale;
                    accumulate(&mut grads[a.0], ga);
                }
                Op::Kl(p, q) => {
                    let s = g[[0, 0]];
                    let mut gq = Array2::zeros(p.dim());
                    ndarray::Zip::from(&mut gq)
                        .and(p)
                        .and(self.value(*q))
                        .for_each(|o, &p, &q| {
                            if p > 0.0 {
                                *o = -s * p / q.max(KL_Q_FLOOR);
                            }
                        });
                    accumulate(&mut grads[q.0], gq);
                }
            }
            grads[idx] = Some(g);
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.dim()).collect(),
        }
    }

    fn student_t_backward(
        &self,
        g: &Array2<f64>,
        q: &Array2<f64>,
        h: Var,
        c: Var,
    ) -> (Array2<f64>, Array2<f64>) {
        let hv = self.value(h);
        let cv = self.value(c);
        let mut gh = Array2::zeros(hv.dim());
        let mut gc = Array2::zeros(cv.dim());
        for i in 0..hv.nrows() {
            let hi = hv.row(i);
            // Recover the unnormalized kernels k_ij = 1 / (1 + d_ij).
            let kernels: Vec<f64> = cv
                .axis_iter(Axis(0))
                .map(|mu| {
                    let d: f64 = hi.iter().zip(mu.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                    1.0 / (1.0 + d)
                })
                .collect();
            let total: f64 = kernels.iter().sum();
            let gq_dot_q = g.row(i).dot(&q.row(i));
            for (j, &k) in kernels.iter().enumerate() {
                let gk = (g[[i, j]] - gq_dot_q) / total;
                let gd = -gk * k * k;
                for col in 0..hv.ncols() {
                    let diff = 2.0 * gd * (hv[[i, col]] - cv[[j, col]]);
                    gh[[i, col]] += diff;
                    gc[[j, col]] -= diff;
                }
            }
        }
        (gh, gc)
    }
}
