//! Eigen-spectra of the filter kernels.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoders::EmbeddingPair;
use crate::error::{Error, Result};
use crate::filterbank::{build_joint_aggregation, JOINT_EPS};
use crate::graph::MultiViewGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatrixTag {
    #[default]
    AdjacencyRw,
    JointAggregationRw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub min: f64,
    pub max: f64,
    pub spread: f64,
    /// Fraction of eigenvalues with `|λ| < 0.5`.
    pub low_band_mass: f64,
    /// Largest gap between consecutive sorted eigenvalues.
    pub largest_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub matrix_tag: MatrixTag,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub summary: SpectrumSummary,
}

impl SpectrumReport {
    fn from_eigenvalues(mut eigenvalues: Vec<f64>, matrix_tag: MatrixTag) -> Self {
        eigenvalues.sort_by(f64::total_cmp);
        let n = eigenvalues.len();
        let (min, max) = match (eigenvalues.first(), eigenvalues.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (0.0, 0.0),
        };
        let low = eigenvalues.iter().filter(|l| l.abs() < 0.5).count();
        let summary = SpectrumSummary {
            min,
            max,
            spread: max - min,
            low_band_mass: if n == 0 { 0.0 } else { low as f64 / n as f64 },
            largest_gap: largest_gap(&eigenvalues),
        };
        Self {
            matrix_tag,
            eigenvalues,
            summary,
        }
    }
}

/// Largest difference between neighbours of a sorted slice; 0 for fewer
/// than two values.
pub fn largest_gap(sorted: &[f64]) -> f64 {
    sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

fn check_square_finite(m: &Array2<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("spectrum of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    Ok(())
}

fn symmetric_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    SymmetricEigen::new(dm).eigenvalues.iter().copied().collect()
}

/// Eigenvalues of `m`, or of `(m + mᵀ)/2` when `symmetrize` is set. Without
/// `symmetrize` only the lower triangle is read.
pub fn spectrum(m: &Array2<f64>, symmetrize: bool, tag: MatrixTag) -> Result<SpectrumReport> {
    check_square_finite(m)?;
    let eig = if symmetrize {
        symmetric_eigenvalues(&((m + &m.t()) * 0.5))
    } else {
        symmetric_eigenvalues(m)
    };
    Ok(SpectrumReport::from_eigenvalues(eig, tag))
}

/// Spectrum of `D⁻¹W` for symmetric non-negative `W`, computed on the
/// similar matrix `D^{-1/2} W D^{-1/2}`. Rows of zero degree behave as
/// self-loops, matching the row normalization used for filtering.
pub fn random_walk_spectrum(w: &Array2<f64>, tag: MatrixTag) -> Result<SpectrumReport> {
    check_square_finite(w)?;
    if w.iter().any(|v| *v < 0.0) {
        return Err(Error::Domain("random-walk spectrum needs a non-negative matrix".into()));
    }
    let mut w = w.clone();
    for i in 0..w.nrows() {
        if w.row(i).sum() == 0.0 {
            w[[i, i]] = 1.0;
        }
    }
    let inv_sqrt = w.sum_axis(Axis(1)).mapv(|d| 1.0 / d.sqrt());
    let mut sym = w;
    for ((i, j), v) in sym.indexed_iter_mut() {
        *v *= inv_sqrt[i] * inv_sqrt[j];
    }
    // Remove rounding asymmetry before the symmetric solver.
    let sym = (&sym + &sym.t()) * 0.5;
    Ok(SpectrumReport::from_eigenvalues(symmetric_eigenvalues(&sym), tag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumComparison {
    pub a_rw: SpectrumReport,
    pub s_rw: SpectrumReport,
}

impl SpectrumComparison {
    /// Whether the joint kernel separates its spectrum at least as much as
    /// the adjacency does.
    pub fn joint_gap_dominates(&self) -> bool {
        self.s_rw.summary.largest_gap >= self.a_rw.summary.largest_gap
    }
}

/// Spectra of `a_rw` and `s_rw` for one view.
pub fn compare_spectra(g: &MultiViewGraph, view: usize, pair: &EmbeddingPair) -> Result<SpectrumComparison> {
    if view >= g.n_views() {
        return Err(Error::Dimension(format!("view {view} out of range 0..{}", g.n_views())));
    }
    if pair.n_nodes() != g.n_nodes() {
        return Err(Error::Dimension(format!(
            "embedding has {} rows for {} nodes",
            pair.n_nodes(),
            g.n_nodes()
        )));
    }
    let a_rw = random_walk_spectrum(g.adjacency(view), MatrixTag::AdjacencyRw)?;
    let joint = build_joint_aggregation(pair);
    let mut w = joint.s.mapv(|v| v.max(0.0));
    w.diag_mut().mapv_inplace(|d| d + JOINT_EPS);
    let s_rw = random_walk_spectrum(&w, MatrixTag::JointAggregationRw)?;
    Ok(SpectrumComparison { a_rw, s_rw })
}

/// One eigenvalue per line.
pub fn write_spectrum_csv(report: &SpectrumReport, path: &Path) -> Result<()> {
    let text: String = report.eigenvalues.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_spectrum_csv(path: &Path, tag: MatrixTag) -> Result<SpectrumReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let eig = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, format!("bad eigenvalue {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumReport::from_eigenvalues(eig, tag))
}

pub fn write_summary_json(report: &SpectrumReport, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        matrix_tag: MatrixTag,
        n: usize,
        #[serde(flatten)]
        summary: &'a SpectrumSummary,
    }
    let json = serde_json::to_string_pretty(&Summary {
        matrix_tag: report.matrix_tag,
        n: report.eigenvalues.len(),
        summary: &report.summary,
    })
    .map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
