//! k-means, pseudo-label extraction and external clustering metrics.

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::OneHotLabels;

/// Lloyd iterations stop here even without an assignment fixpoint.
pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centers: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.centers.nrows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn has_empty_cluster(&self) -> bool {
        self.cluster_sizes().contains(&0)
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<'_, f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &Array2<f64>, c: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::zeros((c, points.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut dist: Vec<f64> = points
        .axis_iter(Axis(0))
        .map(|p| sq_dist(p, points.row(first)))
        .collect();
    for k in 1..c {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(k).assign(&points.row(pick));
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            dist[i] = dist[i].min(sq_dist(p, points.row(pick)));
        }
    }
    centers
}

fn assign(points: &Array2<f64>, centers: &Array2<f64>) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .axis_iter(Axis(0))
        .map(|p| {
            let (j, d) = nearest(p, centers);
            inertia += d;
            j
        })
        .collect();
    (labels, inertia)
}

/// Recomputes centers as cluster means. An empty cluster's center moves to
/// the point farthest from its current center.
fn update_centers(points: &Array2<f64>, labels: &[usize], centers: &mut Array2<f64>) {
    let c = centers.nrows();
    let mut sums = Array2::<f64>::zeros(centers.dim());
    let mut counts = vec![0usize; c];
    for (p, &l) in points.axis_iter(Axis(0)).zip(labels) {
        let mut row = sums.row_mut(l);
        row += &p;
        counts[l] += 1;
    }
    let mut taken: Vec<usize> = Vec::new();
    for j in 0..c {
        if counts[j] > 0 {
            let mean = sums.row(j).mapv(|s| s / counts[j] as f64);
            centers.row_mut(j).assign(&mean);
        }
    }
    for j in 0..c {
        if counts[j] > 0 {
            continue;
        }
        let far = points
            .axis_iter(Axis(0))
            .enumerate()
            .filter(|(i, _)| !taken.contains(i))
            .map(|(i, p)| (i, sq_dist(p, centers.row(labels[i]))))
            .fold((usize::MAX, -1.0), |best, cand| if cand.1 > best.1 { cand } else { best });
        if far.0 != usize::MAX {
            log::warn!("k-means cluster {j} emptied; re-seeding at point {}", far.0);
            centers.row_mut(j).assign(&points.row(far.0));
            taken.push(far.0);
        }
    }
}

/// k-means with the inertia recorded after every assignment step.
pub fn kmeans_trace(
    points: &Array2<f64>,
    c: usize,
    seed: u64,
    warm_centers: Option<&Array2<f64>>,
) -> Result<(ClusterAssignment, Vec<f64>)> {
    let n = points.nrows();
    if c == 0 || n < c {
        return Err(Error::Domain(format!("k-means needs n >= c >= 1, got n={n}, c={c}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("k-means input contains non-finite values".into()));
    }
    let mut centers = match warm_centers {
        Some(w) => {
            if w.dim() != (c, points.ncols()) {
                return Err(Error::Dimension(format!(
                    "warm centers are {:?}, expected ({c}, {})",
                    w.dim(),
                    points.ncols()
                )));
            }
            w.clone()
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            kmeans_plus_plus(points, c, &mut rng)
        }
    };
    let (mut labels, mut inertia) = assign(points, &centers);
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        update_centers(points, &labels, &mut centers);
        let (next, next_inertia) = assign(points, &centers);
        history.push(next_inertia);
        let done = next == labels;
        labels = next;
        inertia = next_inertia;
        if done {
            break;
        }
    }
    Ok((
        ClusterAssignment {
            labels,
            centers,
            inertia,
            iterations,
        },
        history,
    ))
}

/// Lloyd's algorithm from k-means++ seeding, or from `warm_centers`.
pub fn kmeans(
    points: &Array2<f64>,
    c: usize,
    seed: u64,
    warm_centers: Option<&Array2<f64>>,
) -> Result<ClusterAssignment> {
    kmeans_trace(points, c, seed, warm_centers).map(|(a, _)| a)
}

/// Best of `restarts` seeded k-means runs by inertia; re-seeds on empty
/// clusters up to five times.
pub fn kmeans_restarts(points: &Array2<f64>, c: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    let mut best: Option<ClusterAssignment> = None;
    let mut empty_failures = 0;
    let mut attempt = 0u64;
    let mut done = 0;
    while done < restarts.max(1) {
        let run = kmeans(points, c, seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)), None)?;
        attempt += 1;
        if run.has_empty_cluster() {
            empty_failures += 1;
            if empty_failures > 5 {
                return Err(Error::EmptyCluster {
                    attempts: empty_failures - 1,
                });
            }
            continue;
        }
        done += 1;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// k-means labels on the consensus embedding, one-hot encoded.
pub fn pseudo_labels(
    h_bar: &Array2<f64>,
    c: usize,
    seed: u64,
    warm: Option<&Array2<f64>>,
) -> Result<(OneHotLabels, ClusterAssignment)> {
    let assignment = kmeans(h_bar, c, seed, warm)?;
    let onehot = OneHotLabels::new(assignment.labels.clone(), c)?;
    Ok((onehot, assignment))
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Dense `k_pred x k_true` contingency table.
fn contingency(pred: &[usize], truth: &[usize]) -> Array2<f64> {
    let rows = pred.iter().max().map_or(0, |m| m + 1);
    let cols = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = Array2::zeros((rows, cols));
    for (&p, &t) in pred.iter().zip(truth) {
        table[[p, t]] += 1.0;
    }
    table
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// shortest augmenting paths with potentials). Returns `assignment[row] = col`.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "hungarian needs a square cost matrix");
    // 1-indexed potentials; p[j] is the row matched to column j.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Maps every predicted cluster id to a class id so that agreement is maximal.
pub fn best_mapping(pred: &[usize], truth: &[usize]) -> Result<Vec<usize>> {
    check_lengths(pred, truth)?;
    let table = contingency(pred, truth);
    let k = table.nrows().max(table.ncols());
    let max = table.iter().cloned().fold(0.0, f64::max);
    let mut cost = Array2::from_elem((k, k), max);
    for ((r, c), v) in table.indexed_iter() {
        cost[[r, c]] = max - v;
    }
    let mut mapping = hungarian(&cost);
    mapping.truncate(table.nrows());
    Ok(mapping)
}

/// Clustering accuracy under the best cluster-to-class bijection.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let mapping = best_mapping(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(&p, &t)| mapping[p] == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|c| *c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let table = contingency(pred, truth);
    let row = table.sum_axis(Axis(1));
    let col = table.sum_axis(Axis(0));
    let h_pred = entropy(row.iter().cloned(), n);
    let h_truth = entropy(col.iter().cloned(), n);
    let mut mi = 0.0;
    for ((r, c), &nij) in table.indexed_iter() {
        if nij > 0.0 {
            mi += nij / n * (n * nij / (row[r] * col[c])).ln();
        }
    }
    let denom = 0.5 * (h_pred + h_truth);
    if h_truth == 0.0 || denom <= 0.0 {
        log::warn!("NMI with a single-class ground truth is degenerate; reporting 0");
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn comb2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    let table = contingency(pred, truth);
    let sum_ij: f64 = table.iter().map(|&v| comb2(v)).sum();
    let sum_a: f64 = table.sum_axis(Axis(1)).iter().map(|&v| comb2(v)).sum();
    let sum_b: f64 = table.sum_axis(Axis(0)).iter().map(|&v| comb2(v)).sum();
    let total = comb2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // Both partitions are all-singletons or a single block.
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / denom)
}

/// Macro-averaged F1 over classes after Hungarian matching of clusters.
pub fn macro_f1(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let mapping = best_mapping(pred, truth)?;
    let mapped: Vec<usize> = pred.iter().map(|&p| mapping[p]).collect();
    let k = mapped.iter().chain(truth).max().map_or(0, |m| m + 1);
    let mut tp = vec![0f64; k];
    let mut pred_count = vec![0f64; k];
    let mut true_count = vec![0f64; k];
    for (&p, &t) in mapped.iter().zip(truth) {
        pred_count[p] += 1.0;
        true_count[t] += 1.0;
        if p == t {
            tp[p] += 1.0;
        }
    }
    let present: Vec<usize> = (0..k).filter(|&c| pred_count[c] > 0.0 || true_count[c] > 0.0).collect();
    if present.is_empty() {
        return Ok(1.0);
    }
    let total: f64 = present
        .iter()
        .map(|&c| {
            let denom = pred_count[c] + true_count[c];
            if denom > 0.0 {
                2.0 * tp[c] / denom
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / present.len() as f64)
}

/// The four external metrics at once.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub nmi: f64,
    pub ari: f64,
    pub acc: f64,
    pub f1: f64,
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<Metrics> {
    Ok(Metrics {
        nmi: nmi(pred, truth)?,
        ari: ari(pred, truth)?,
        acc: accuracy(pred, truth)?,
        f1: macro_f1(pred, truth)?,
    })
}
