//! View weighting, consensus embedding, homophily refresh and the
//! clustering-distribution losses.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::{kl_divergence, student_t, KL_Q_FLOOR};
use crate::error::{Error, Result};
use crate::graph::{homophily_ratio, MultiViewGraph, OneHotLabels};

/// Fixed-point iteration for the view weights stops once no weight moves by
/// more than this.
pub const FUSION_TOL: f64 = 1e-6;
pub const FUSION_MAX_ROUNDS: usize = 50;

/// Mean row-wise cosine similarity between a view embedding and the
/// consensus. Rows where either side is zero contribute 0.
pub fn evaluate_view(h_v: &Array2<f64>, h_bar: &Array2<f64>) -> Result<f64> {
    if h_v.dim() != h_bar.dim() {
        return Err(Error::Dimension(format!(
            "view embedding {:?} vs consensus {:?}",
            h_v.dim(),
            h_bar.dim()
        )));
    }
    let n = h_v.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = h_v
        .axis_iter(Axis(0))
        .zip(h_bar.axis_iter(Axis(0)))
        .map(|(a, b)| {
            let na = a.dot(&a).sqrt();
            let nb = b.dot(&b).sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
            }
        })
        .sum();
    Ok(total / n as f64)
}

/// `Σ ω^v H^v`.
pub fn weighted_sum(embeddings: &[Array2<f64>], weights: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros(embeddings[0].dim());
    for (h, &w) in embeddings.iter().zip(weights) {
        out.scaled_add(w, h);
    }
    out
}

/// One reweighting step against a given consensus: `(eva^v / max eva)^ρ`,
/// normalized to sum to one. `None` when no view scores positively.
pub fn reweight(embeddings: &[Array2<f64>], h_bar: &Array2<f64>, rho: f64) -> Result<Option<Vec<f64>>> {
    let eva = embeddings
        .iter()
        .map(|h| evaluate_view(h, h_bar))
        .collect::<Result<Vec<_>>>()?;
    let best = eva.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if best <= 0.0 {
        return Ok(None);
    }
    // Negative scores get zero weight: a fractional power of a negative base
    // is undefined.
    let raw: Vec<f64> = eva.iter().map(|&e| (e.max(0.0) / best).powf(rho)).collect();
    let total: f64 = raw.iter().sum();
    Ok(Some(raw.into_iter().map(|w| w / total).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fusion {
    pub weights: Vec<f64>,
    pub consensus: Array2<f64>,
    pub rounds: usize,
    /// Uniform weights were forced because every view scored `<= 0`.
    pub fallback: bool,
}

/// Fixed point of the view weights and consensus embedding.
pub fn fuse_views(embeddings: &[Array2<f64>], rho: f64) -> Result<Fusion> {
    let v = embeddings.len();
    if v == 0 {
        return Err(Error::Dimension("fusion needs at least one view".into()));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::Config(format!("rho = {rho} must be finite and non-negative")));
    }
    if let Some(bad) = embeddings.iter().find(|h| h.dim() != embeddings[0].dim()) {
        return Err(Error::Dimension(format!(
            "view embeddings disagree in shape: {:?} vs {:?}",
            bad.dim(),
            embeddings[0].dim()
        )));
    }
    let uniform = vec![1.0 / v as f64; v];
    let mut weights = uniform.clone();
    let mut consensus = weighted_sum(embeddings, &weights);
    let mut rounds = 0;
    while rounds < FUSION_MAX_ROUNDS {
        rounds += 1;
        let Some(next) = reweight(embeddings, &consensus, rho)? else {
            log::warn!("no view correlates positively with the consensus; using uniform weights");
            return Ok(Fusion {
                consensus: weighted_sum(embeddings, &uniform),
                weights: uniform,
                rounds,
                fallback: true,
            });
        };
        let shift = next
            .iter()
            .zip(&weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        weights = next;
        consensus = weighted_sum(embeddings, &weights);
        if shift < FUSION_TOL {
            break;
        }
    }
    Ok(Fusion {
        weights,
        consensus,
        rounds,
        fallback: false,
    })
}

/// Homophily ratio of every view under the given pseudo-labels.
pub fn update_hr(g: &MultiViewGraph, pseudo: &OneHotLabels) -> Result<Vec<f64>> {
    g.adjacencies().iter().map(|a| homophily_ratio(a, pseudo)).collect()
}

/// Student-t soft assignment of embedding rows to cluster centers.
pub fn soft_assignment(h: &Array2<f64>, centers: &Array2<f64>) -> Result<Array2<f64>> {
    if h.ncols() != centers.ncols() {
        return Err(Error::Dimension(format!(
            "embedding has {} columns, centers have {}",
            h.ncols(),
            centers.ncols()
        )));
    }
    if centers.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cluster centers must be finite".into()));
    }
    Ok(student_t(h, centers))
}

/// Sharpened target `p_ij ∝ q_ij² / Σ_i q_ij`, rows normalized. Columns
/// with zero total mass are left at zero.
pub fn target_distribution(q: &Array2<f64>) -> Array2<f64> {
    let mass = q.sum_axis(Axis(0));
    if mass.iter().any(|m| *m <= 0.0) {
        log::warn!("cluster with zero soft mass dropped from the target distribution");
    }
    let mut p = Array2::zeros(q.dim());
    for ((i, j), &qij) in q.indexed_iter() {
        if mass[j] > 0.0 {
            p[[i, j]] = qij * qij / mass[j];
        }
    }
    for mut row in p.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        if s > 0.0 {
            row.mapv_inplace(|v| v / s);
        }
    }
    p
}

/// Per-cluster mean of embedding rows; an empty cluster takes the global mean.
pub fn cluster_means(h: &Array2<f64>, labels: &OneHotLabels) -> Array2<f64> {
    let c = labels.n_classes();
    let mut sums = Array2::<f64>::zeros((c, h.ncols()));
    let mut counts = vec![0usize; c];
    for (row, &l) in h.axis_iter(Axis(0)).zip(labels.labels()) {
        let mut s = sums.row_mut(l);
        s += &row;
        counts[l] += 1;
    }
    let global = h.mean_axis(Axis(0)).unwrap_or_else(|| ndarray::Array1::zeros(h.ncols()));
    for (j, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(j).mapv_inplace(|v| v / count as f64);
        } else {
            sums.row_mut(j).assign(&global);
        }
    }
    sums
}

/// Every distribution entering the KL objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Distributions {
    pub q_per_view: Vec<Array2<f64>>,
    pub p_per_view: Vec<Array2<f64>>,
    pub q_bar: Array2<f64>,
    pub p_bar: Array2<f64>,
    pub centers_per_view: Vec<Array2<f64>>,
    pub centers_bar: Array2<f64>,
}

impl Distributions {
    /// Soft assignments against the given centers and their sharpened targets.
    pub fn compute(
        per_view: &[Array2<f64>],
        consensus: &Array2<f64>,
        centers_per_view: Vec<Array2<f64>>,
        centers_bar: Array2<f64>,
    ) -> Result<Self> {
        let q_per_view = per_view
            .iter()
            .zip(&centers_per_view)
            .map(|(h, c)| soft_assignment(h, c))
            .collect::<Result<Vec<_>>>()?;
        let q_bar = soft_assignment(consensus, &centers_bar)?;
        Ok(Self {
            p_per_view: q_per_view.iter().map(target_distribution).collect(),
            p_bar: target_distribution(&q_bar),
            q_per_view,
            q_bar,
            centers_per_view,
            centers_bar,
        })
    }
}

fn warn_if_clamped(p: &Array2<f64>, q: &Array2<f64>) {
    if p.iter().zip(q.iter()).any(|(p, q)| *p > 0.0 && *q < KL_Q_FLOOR) {
        log::warn!("soft assignment below {KL_Q_FLOOR:e} where the target is positive; clamping");
    }
}

/// `Σ_v KL(P̄‖Q^v) + Σ_v KL(P^v‖Q^v) + KL(P̄‖Q̄)`.
pub fn kl_loss(d: &Distributions) -> f64 {
    let mut total = 0.0;
    for (q, p) in d.q_per_view.iter().zip(&d.p_per_view) {
        warn_if_clamped(&d.p_bar, q);
        warn_if_clamped(p, q);
        total += kl_divergence(&d.p_bar, q) + kl_divergence(p, q);
    }
    warn_if_clamped(&d.p_bar, &d.q_bar);
    total + kl_divergence(&d.p_bar, &d.q_bar)
}

/// Trade-off coefficients of the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma_rec: f64,
    pub gamma_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma_rec: 1.0,
            gamma_kl: 0.1,
        }
    }
}

/// `γ_rec·L_Rec + γ_kl·L_KL`.
pub fn total_loss(rec: f64, kl: f64, weights: &LossWeights) -> f64 {
    weights.gamma_rec * rec + weights.gamma_kl * kl
}

/// Everything the fusion stage knows after an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState {
    pub per_view_embeddings: Vec<Array2<f64>>,
    pub weights: Vec<f64>,
    pub consensus: Array2<f64>,
    pub pseudo_labels: OneHotLabels,
    pub hr_per_view: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn evaluate_examples() {
        let h = array![[1.0, 2.0], [-3.0, 0.5]];
        assert!((evaluate_view(&h, &h).unwrap() - 1.0).abs() < 1e-15);
        assert!((evaluate_view(&(-&h), &h).unwrap() + 1.0).abs() < 1e-15);
        let a = array![[1.0, 0.0], [1.0, 0.0]];
        let b = array![[2.0, 0.0], [0.0, 3.0]];
        assert!((evaluate_view(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(evaluate_view(&array![[0.0, 0.0]], &array![[1.0, 1.0]]).unwrap(), 0.0);
        assert!(evaluate_view(&a, &array![[1.0, 0.0]]).is_err());
    }

    #[test]
    fn single_view_fusion() {
        let h = array![[1.0, 2.0], [0.0, 1.0]];
        let f = fuse_views(std::slice::from_ref(&h), 1.0).unwrap();
        assert_eq!(f.weights, vec![1.0]);
        assert_eq!(f.consensus, h);
    }

    #[test]
    fn identical_views_share_weight() {
        let h = array![[1.0, 2.0], [0.0, 1.0]];
        let f = fuse_views(&[h.clone(), h.clone()], 2.0).unwrap();
        assert_eq!(f.weights, vec![0.5, 0.5]);
        assert_eq!(f.consensus, h);
    }

    #[test]
    fn aligned_view_outweighs_orthogonal_one() {
        let h_bar = array![[1.0, 0.0], [0.0, 1.0]];
        let aligned = h_bar.clone();
        let orthogonal = array![[0.0, 1.0], [1.0, 0.0]];
        let w = reweight(&[aligned.clone(), orthogonal.clone()], &h_bar, 1.0).unwrap().unwrap();
        assert!(w[0] > w[1]);
        // and through the full fixed point
        let f = fuse_views(&[aligned, orthogonal * 0.5], 1.0).unwrap();
        assert!(f.weights[0] > f.weights[1]);
    }

    #[test]
    fn negative_scores_fall_back_to_uniform() {
        // Consensus of two antipodal views is zero, so every score is 0.
        let h = array![[1.0, 0.0]];
        let f = fuse_views(&[h.clone(), -h], 0.5).unwrap();
        assert!(f.fallback);
        assert_eq!(f.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn hr_examples() {
        let cycle = array![
            [0., 1., 0., 1.],
            [1., 0., 1., 0.],
            [0., 1., 0., 1.],
            [1., 0., 1., 0.]
        ];
        let g = MultiViewGraph::new(Array2::zeros((4, 1)), vec![cycle.clone(), cycle], None, 2).unwrap();
        let alternating = OneHotLabels::new(vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(update_hr(&g, &alternating).unwrap(), vec![0.0, 0.0]);
        let one = OneHotLabels::new(vec![1; 4], 2).unwrap();
        assert_eq!(update_hr(&g, &one).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn soft_assignment_examples() {
        let centers = array![[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]];
        let q = soft_assignment(&array![[0.0, 0.0]], &centers).unwrap();
        assert!(q[[0, 0]] > 0.99);
        let q = soft_assignment(&array![[1.0, 0.0]], &array![[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(q, array![[0.5, 0.5]]);
        assert!(soft_assignment(&array![[1.0]], &centers).is_err());
    }

    #[test]
    fn target_examples() {
        let onehot = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert_eq!(target_distribution(&onehot), onehot);
        let uniform = Array2::from_elem((4, 2), 0.5);
        assert_eq!(target_distribution(&uniform), uniform);
        let q = array![[0.9, 0.1], [0.6, 0.4]];
        let p = target_distribution(&q);
        // f = [1.5, 0.5]; row 0 ∝ [0.81/1.5, 0.01/0.5] = [0.54, 0.02]
        let r0 = [0.54 / 0.56, 0.02 / 0.56];
        // row 1 ∝ [0.36/1.5, 0.16/0.5] = [0.24, 0.32]
        let r1 = [0.24 / 0.56, 0.32 / 0.56];
        for (got, want) in p.iter().zip(r0.iter().chain(r1.iter())) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_mass_column_is_dropped() {
        let q = array![[1.0, 0.0], [1.0, 0.0]];
        let p = target_distribution(&q);
        assert_eq!(p, q);
    }

    #[test]
    fn kl_examples() {
        let q = array![[0.7, 0.3], [0.2, 0.8]];
        let centers = Array2::zeros((2, 1));
        let same = Distributions {
            q_per_view: vec![q.clone(), q.clone()],
            p_per_view: vec![q.clone(), q.clone()],
            q_bar: q.clone(),
            p_bar: q.clone(),
            centers_per_view: vec![centers.clone(), centers.clone()],
            centers_bar: centers.clone(),
        };
        assert_eq!(kl_loss(&same), 0.0);

        let p = array![[1.0, 0.0]];
        let half = array![[0.5, 0.5]];
        let single = Distributions {
            q_per_view: vec![half.clone()],
            p_per_view: vec![p.clone()],
            q_bar: half.clone(),
            p_bar: p.clone(),
            centers_per_view: vec![centers.clone()],
            centers_bar: centers,
        };
        let expected = 2.0 * kl_divergence(&p, &half) + kl_divergence(&p, &half);
        assert!((kl_loss(&single) - expected).abs() < 1e-15);
        assert!((kl_loss(&single) - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights { gamma_rec: 1.0, gamma_kl: 0.1 };
        assert!((total_loss(2.0, 3.0, &w) - 2.3).abs() < 1e-15);
        let no_kl = LossWeights { gamma_rec: 1.5, gamma_kl: 0.0 };
        assert_eq!(total_loss(2.0, 3.0, &no_kl), 3.0);
        let none = LossWeights { gamma_rec: 0.0, gamma_kl: 0.0 };
        assert_eq!(total_loss(2.0, 3.0, &none), 0.0);
    }

    #[test]
    fn cluster_means_fill_empty_with_global_mean() {
        let h = array![[0.0], [2.0], [4.0]];
        let l = OneHotLabels::new(vec![0, 0, 2], 3).unwrap();
        assert_eq!(cluster_means(&h, &l), array![[1.0], [2.0], [4.0]]);
    }
}
