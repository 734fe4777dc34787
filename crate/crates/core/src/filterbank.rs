//! Graph joint aggregation and the low-pass / high-pass / hybrid filters.
//!
//! The joint matrix is `Z = Z_a Z_xᵀ` and the aggregation matrix is
//! `S = Z Zᵀ`. Filtering uses the row-stochastic kernel derived from `S`
//! (or, for the ablation, from the raw adjacency):
//!
//! ```text
//! H = hr · S_rw^k X + (1 - hr) · (I - S_rw)^k X
//! ```
//!
//! Powers are never materialized; each is `k` products against `X`.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoders::EmbeddingPair;
use crate::error::{Error, Result};
use crate::graph::{random_walk_normalize, MultiViewGraph};

/// Diagonal ridge added to the clamped aggregation matrix before row
/// normalization.
pub const JOINT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterFamily {
    #[default]
    AdaptiveHybrid,
    LowPass,
    HighPass,
    /// Fixed low-pass weight `alpha`, ignoring `hr`.
    FixedMix(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    #[default]
    JointAggregation,
    RawAdjacency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub order: usize,
    pub hr: f64,
    pub family: FilterFamily,
    pub matrix_source: MatrixSource,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            order: 2,
            hr: 0.5,
            family: FilterFamily::AdaptiveHybrid,
            matrix_source: MatrixSource::JointAggregation,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::Config("filter order must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hr) {
            return Err(Error::Config(format!("hr = {} is outside [0, 1]", self.hr)));
        }
        if let FilterFamily::FixedMix(alpha) = self.family {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(format!("fixed-mix alpha = {alpha} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn with_hr(self, hr: f64) -> Self {
        Self { hr, ..self }
    }

    /// Weight on the low-pass branch; the high-pass branch gets the rest.
    pub fn low_pass_weight(&self) -> f64 {
        match self.family {
            FilterFamily::AdaptiveHybrid => self.hr,
            FilterFamily::LowPass => 1.0,
            FilterFamily::HighPass => 0.0,
            FilterFamily::FixedMix(alpha) => alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointAggregation {
    pub z: Array2<f64>,
    pub s: Array2<f64>,
    pub s_rw: Array2<f64>,
    /// Rows of the clamped `S` that were entirely zero before the ridge.
    pub zero_rows: Vec<usize>,
}

/// `clamp(S, 0) + eps·I`, row-normalized, plus the rows that were all zero.
pub fn joint_kernel(s: &Array2<f64>) -> (Array2<f64>, Vec<usize>) {
    let mut k = s.mapv(|v| v.max(0.0));
    let zero_rows: Vec<usize> = k
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, r)| r.iter().all(|v| *v == 0.0))
        .map(|(i, _)| i)
        .collect();
    k.diag_mut().mapv_inplace(|d| d + JOINT_EPS);
    for mut row in k.axis_iter_mut(Axis(0)) {
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    (k, zero_rows)
}

/// Builds `Z`, `S` and the row-stochastic `S_rw` for one view.
pub fn build_joint_aggregation(pair: &EmbeddingPair) -> JointAggregation {
    let z = pair.z_a.dot(&pair.z_x.t());
    // S = Z Zᵀ = Z_a (Z_xᵀ Z_x) Z_aᵀ; the right-hand form avoids an n³ product.
    let gram = pair.z_x.t().dot(&pair.z_x);
    let s = pair.z_a.dot(&gram).dot(&pair.z_a.t());
    let s = symmetrize(s);
    let (s_rw, zero_rows) = joint_kernel(&s);
    if !zero_rows.is_empty() {
        log::warn!(
            "{} node(s) have no positive similarity in S; the ridge keeps them as self-loops",
            zero_rows.len()
        );
    }
    JointAggregation { z, s, s_rw, zero_rows }
}

fn symmetrize(mut s: Array2<f64>) -> Array2<f64> {
    let n = s.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (s[[i, j]] + s[[j, i]]);
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
    }
    s
}

/// `S_rw` built on a tape from the two embeddings.
pub fn joint_kernel_on_tape(tape: &mut Tape, z_a: Var, z_x: Var) -> Var {
    let gram = tape.matmul_at(z_x, z_x);
    let left = tape.matmul(z_a, gram);
    let s = tape.matmul_bt(left, z_a);
    let clamped = tape.relu(s);
    let ridged = tape.add_diag(clamped, JOINT_EPS);
    tape.row_normalize(ridged)
}

fn check_filter_inputs(kernel: &Array2<f64>, x: &Array2<f64>, cfg: &FilterConfig) -> Result<()> {
    cfg.validate()?;
    let n = kernel.nrows();
    if kernel.ncols() != n || x.nrows() != n {
        return Err(Error::Dimension(format!(
            "kernel {:?} cannot filter signal {:?}",
            kernel.dim(),
            x.dim()
        )));
    }
    Ok(())
}

fn low_pass(kernel: &Array2<f64>, x: &Array2<f64>, k: usize) -> Array2<f64> {
    let mut y = x.clone();
    for _ in 0..k {
        y = kernel.dot(&y);
    }
    y
}

fn high_pass(kernel: &Array2<f64>, x: &Array2<f64>, k: usize) -> Array2<f64> {
    let mut y = x.clone();
    for _ in 0..k {
        let smoothed = kernel.dot(&y);
        y -= &smoothed;
    }
    y
}

/// Filters the signal `x` with the row-stochastic `kernel`.
pub fn apply_filter(kernel: &Array2<f64>, x: &Array2<f64>, cfg: &FilterConfig) -> Result<Array2<f64>> {
    check_filter_inputs(kernel, x, cfg)?;
    let w = cfg.low_pass_weight();
    let k = cfg.order;
    let out = if w == 1.0 {
        low_pass(kernel, x, k)
    } else if w == 0.0 {
        high_pass(kernel, x, k)
    } else {
        low_pass(kernel, x, k) * w + high_pass(kernel, x, k) * (1.0 - w)
    };
    Ok(out)
}

/// Tape version of [`apply_filter`]; `x` is usually a constant.
pub fn apply_filter_on_tape(tape: &mut Tape, kernel: Var, x: Var, cfg: &FilterConfig) -> Var {
    let w = cfg.low_pass_weight();
    let k = cfg.order;
    let lp = |tape: &mut Tape| {
        let mut y = x;
        for _ in 0..k {
            y = tape.matmul(kernel, y);
        }
        y
    };
    let hp = |tape: &mut Tape| {
        let mut y = x;
        for _ in 0..k {
            let smoothed = tape.matmul(kernel, y);
            y = tape.sub(y, smoothed);
        }
        y
    };
    if w == 1.0 {
        lp(tape)
    } else if w == 0.0 {
        hp(tape)
    } else {
        let l = lp(tape);
        let h = hp(tape);
        let l = tape.scale(l, w);
        let h = tape.scale(h, 1.0 - w);
        tape.add(l, h)
    }
}

/// The row-stochastic kernel a view filters with.
pub fn view_kernel(g: &MultiViewGraph, view: usize, pair: &EmbeddingPair, source: MatrixSource) -> Result<Array2<f64>> {
    if view >= g.n_views() {
        return Err(Error::Dimension(format!("view {view} out of range 0..{}", g.n_views())));
    }
    match source {
        MatrixSource::JointAggregation => {
            if pair.n_nodes() != g.n_nodes() {
                return Err(Error::Dimension(format!(
                    "embedding has {} rows for {} nodes",
                    pair.n_nodes(),
                    g.n_nodes()
                )));
            }
            Ok(build_joint_aggregation(pair).s_rw)
        }
        MatrixSource::RawAdjacency => Ok(random_walk_normalize(g.adjacency(view).view(), false)?.a_rw),
    }
}

/// `H^v`: the hybrid filter of one view applied to the shared features.
pub fn per_view_embedding(
    g: &MultiViewGraph,
    view: usize,
    pair: &EmbeddingPair,
    hr_v: f64,
    cfg: &FilterConfig,
) -> Result<Array2<f64>> {
    let cfg = cfg.with_hr(hr_v);
    cfg.validate()?;
    let kernel = view_kernel(g, view, pair, cfg.matrix_source)?;
    apply_filter(&kernel, g.features(), &cfg)
}

/// Filter gain `g(λ)` sampled on `[0, 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    pub lambdas: Vec<f64>,
    pub gains: Vec<f64>,
}

/// Gain of the filter at Laplacian frequency `lambda`.
pub fn filter_gain(cfg: &FilterConfig, lambda: f64) -> f64 {
    let w = cfg.low_pass_weight();
    let k = cfg.order as i32;
    w * (1.0 - lambda).powi(k) + (1.0 - w) * lambda.powi(k)
}

/// Samples [`filter_gain`] at `points` evenly spaced frequencies in `[0, 2]`.
pub fn filter_frequency_response(cfg: &FilterConfig, points: usize) -> FrequencyResponse {
    let lambdas: Vec<f64> = match points {
        0 => Vec::new(),
        1 => vec![0.0],
        p => (0..p).map(|i| 2.0 * i as f64 / (p - 1) as f64).collect(),
    };
    let gains = lambdas.iter().map(|&l| filter_gain(cfg, l)).collect();
    FrequencyResponse { lambdas, gains }
}
