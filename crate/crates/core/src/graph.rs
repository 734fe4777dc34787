//! Multi-view graph container, random-walk normalization and the homophily
//! ratio statistic.
//!
//! Adjacency matrices are stored dense, symmetric, 0/1 and without
//! self-loops. Anything that needs self-loops adds them on the fly.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Node features shared by every view, one adjacency per view and optional
/// ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewGraph {
    features: Array2<f64>,
    adjacencies: Vec<Array2<f64>>,
    labels: Option<Vec<usize>>,
    n_clusters: usize,
}

impl MultiViewGraph {
    /// Validates and assembles a graph.
    ///
    /// Every adjacency must be square with side `features.nrows()`, symmetric,
    /// binary and zero on the diagonal. Labels, when given, must lie in
    /// `0..n_clusters`.
    pub fn new(
        features: Array2<f64>,
        adjacencies: Vec<Array2<f64>>,
        labels: Option<Vec<usize>>,
        n_clusters: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if adjacencies.is_empty() {
            return Err(Error::Dimension("a multi-view graph needs at least one view".into()));
        }
        if n_clusters == 0 {
            return Err(Error::Domain("n_clusters must be positive".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("feature matrix contains non-finite entries".into()));
        }
        for (v, a) in adjacencies.iter().enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::Dimension(format!(
                    "view {v}: adjacency is {}x{}, expected {n}x{n}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            for i in 0..n {
                if a[[i, i]] != 0.0 {
                    return Err(Error::Domain(format!("view {v}: self-loop at node {i}")));
                }
                for j in (i + 1)..n {
                    let x = a[[i, j]];
                    if x != 0.0 && x != 1.0 {
                        return Err(Error::Domain(format!(
                            "view {v}: non-binary entry {x} at ({i}, {j})"
                        )));
                    }
                    if x != a[[j, i]] {
                        return Err(Error::Domain(format!(
                            "view {v}: asymmetric entry at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Dimension(format!(
                    "{} labels for {n} nodes",
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l >= n_clusters) {
                return Err(Error::Domain(format!(
                    "label {bad} out of range 0..{n_clusters}"
                )));
            }
        }
        Ok(Self {
            features,
            adjacencies,
            labels,
            n_clusters,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_views(&self) -> usize {
        self.adjacencies.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn adjacency(&self, view: usize) -> &Array2<f64> {
        &self.adjacencies[view]
    }

    pub fn adjacencies(&self) -> &[Array2<f64>] {
        &self.adjacencies
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of undirected edges in a view.
    pub fn edge_count(&self, view: usize) -> usize {
        (self.adjacencies[view].sum() / 2.0).round() as usize
    }
}

/// Row-stochastic random-walk matrix and its Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGraph {
    pub a_rw: Array2<f64>,
    pub l_rw: Array2<f64>,
}

/// `D^-1 A` (or `D^-1 (A + I)`) together with `I - D^-1 A`.
///
/// Zero-degree rows become the one-hot self row so the result stays
/// row-stochastic.
pub fn random_walk_normalize(a: ArrayView2<'_, f64>, add_self_loops: bool) -> Result<NormalizedGraph> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::Dimension(format!("adjacency is {n}x{m}, expected square")));
    }
    if let Some(bad) = a.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("adjacency entry {bad} is negative or NaN")));
    }
    let mut a_rw = a.to_owned();
    if add_self_loops {
        a_rw.diag_mut().mapv_inplace(|d| d + 1.0);
    }
    let degrees = a_rw.sum_axis(Axis(1));
    for (i, mut row) in a_rw.axis_iter_mut(Axis(0)).enumerate() {
        let d = degrees[i];
        if d > 0.0 {
            row.mapv_inplace(|x| x / d);
        } else {
            row[i] = 1.0;
        }
    }
    let mut l_rw = a_rw.mapv(|x| -x);
    l_rw.diag_mut().mapv_inplace(|d| d + 1.0);
    Ok(NormalizedGraph { a_rw, l_rw })
}

/// One-hot encoding of a hard cluster assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHotLabels {
    labels: Vec<usize>,
    n_classes: usize,
}

impl OneHotLabels {
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Domain(format!("label {bad} out of range 0..{n_classes}")));
        }
        Ok(Self { labels, n_classes })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The dense `n x c` indicator matrix.
    pub fn matrix(&self) -> Array2<f64> {
        let mut p = Array2::zeros((self.labels.len(), self.n_classes));
        for (i, &l) in self.labels.iter().enumerate() {
            p[[i, l]] = 1.0;
        }
        p
    }
}

/// Fraction of edges whose endpoints share a label.
///
/// Computed as `SUM(A ⊙ PPᵀ) / SUM(A)` over off-diagonal entries, i.e. the
/// self-loop-corrected ratio with `A` stored loop-free.
pub fn homophily_ratio(a: &Array2<f64>, labels: &OneHotLabels) -> Result<f64> {
    let n = a.nrows();
    if a.ncols() != n || labels.len() != n {
        return Err(Error::Dimension(format!(
            "adjacency {}x{} against {} labels",
            a.nrows(),
            a.ncols(),
            labels.len()
        )));
    }
    let diag: f64 = a.diag().sum();
    let total = a.sum() - diag;
    if total <= 0.0 {
        return Err(Error::UndefinedRatio);
    }
    // (A P)[i, c] counts neighbours of i in class c; picking c = label(i)
    // and summing gives trace(Pᵀ A P) = SUM(A ⊙ PPᵀ).
    let ap = a.dot(&labels.matrix());
    let same: f64 = labels
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| ap[[i, l]])
        .sum::<f64>()
        - diag;
    Ok((same / total).clamp(0.0, 1.0))
}

/// Per-view homophily ratio under the ground-truth labels.
pub fn true_homophily_report(g: &MultiViewGraph) -> Result<Vec<f64>> {
    let labels = g.labels().ok_or(Error::MissingLabels)?;
    let onehot = OneHotLabels::new(labels.to_vec(), g.n_clusters())?;
    g.adjacencies()
        .iter()
        .map(|a| homophily_ratio(a, &onehot))
        .collect()
}

/// Row sums of a matrix; handy for checking stochasticity.
pub fn row_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path3() -> Array2<f64> {
        array![[0., 1., 0.], [1., 0., 1.], [0., 1., 0.]]
    }

    #[test]
    fn path_graph_random_walk() {
        let g = random_walk_normalize(path3().view(), false).unwrap();
        assert_eq!(g.a_rw.row(1).to_vec(), vec![0.5, 0.0, 0.5]);
        assert_eq!(g.a_rw.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(g.a_rw.row(2).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(&g.a_rw + &g.l_rw, Array2::<f64>::eye(3));
    }

    #[test]
    fn self_loops_on_empty_graph_give_identity() {
        let g = random_walk_normalize(Array2::<f64>::zeros((4, 4)).view(), true).unwrap();
        assert_eq!(g.a_rw, Array2::<f64>::eye(4));
        assert_eq!(g.l_rw, Array2::<f64>::zeros((4, 4)));
    }

    #[test]
    fn isolated_nodes_get_self_row() {
        let g = random_walk_normalize(Array2::<f64>::zeros((3, 3)).view(), false).unwrap();
        assert_eq!(g.a_rw, Array2::<f64>::eye(3));
    }

    #[test]
    fn single_edge() {
        let g = random_walk_normalize(array![[0., 1.], [1., 0.]].view(), false).unwrap();
        assert_eq!(g.a_rw, array![[0., 1.], [1., 0.]]);
    }

    #[test]
    fn normalize_errors() {
        assert!(matches!(
            random_walk_normalize(Array2::<f64>::zeros((2, 3)).view(), false),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            random_walk_normalize(array![[0., -1.], [-1., 0.]].view(), false),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn homophily_examples() {
        let labels = OneHotLabels::new(vec![0, 0, 1], 2).unwrap();
        assert_eq!(homophily_ratio(&path3(), &labels).unwrap(), 0.5);

        let same = OneHotLabels::new(vec![1, 1, 1], 2).unwrap();
        assert_eq!(homophily_ratio(&path3(), &same).unwrap(), 1.0);

        // K_{2,2} across the two classes.
        let k22 = array![
            [0., 0., 1., 1.],
            [0., 0., 1., 1.],
            [1., 1., 0., 0.],
            [1., 1., 0., 0.]
        ];
        let bip = OneHotLabels::new(vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(homophily_ratio(&k22, &bip).unwrap(), 0.0);
    }

    #[test]
    fn homophily_without_edges_is_undefined() {
        let labels = OneHotLabels::new(vec![0, 1], 2).unwrap();
        assert!(matches!(
            homophily_ratio(&Array2::zeros((2, 2)), &labels),
            Err(Error::UndefinedRatio)
        ));
    }

    #[test]
    fn graph_validation() {
        let x = Array2::zeros((3, 2));
        assert!(MultiViewGraph::new(x.clone(), vec![path3()], Some(vec![0, 1, 2]), 3).is_ok());
        assert!(MultiViewGraph::new(x.clone(), vec![path3()], Some(vec![0, 1, 3]), 3).is_err());
        let mut loop_graph = path3();
        loop_graph[[0, 0]] = 1.0;
        assert!(MultiViewGraph::new(x.clone(), vec![loop_graph], None, 2).is_err());
        let mut asym = path3();
        asym[[0, 2]] = 1.0;
        assert!(MultiViewGraph::new(x.clone(), vec![asym], None, 2).is_err());
        assert!(matches!(
            MultiViewGraph::new(x, vec![Array2::zeros((2, 2))], None, 2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn report_needs_labels() {
        let g = MultiViewGraph::new(Array2::zeros((3, 1)), vec![path3()], None, 2).unwrap();
        assert!(matches!(true_homophily_report(&g), Err(Error::MissingLabels)));
    }
}
