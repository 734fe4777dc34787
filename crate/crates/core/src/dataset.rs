//! On-disk datasets and the synthetic SBM generator.
//!
//! A dataset is a JSON manifest next to headerless CSVs (features, labels)
//! and one whitespace-separated, 0-indexed edge list per view.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MultiViewGraph;
use crate::train::TrainReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub n_nodes: usize,
    pub n_views: usize,
    pub n_features: usize,
    pub n_clusters: usize,
    pub feature_file: PathBuf,
    pub label_file: PathBuf,
    pub graph_files: Vec<PathBuf>,
}

/// Something fixed while reading a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Repair {
    SelfLoopDropped { view: usize, node: usize },
    /// Undirected edge listed more than once, in either orientation.
    DuplicateEdge { view: usize, i: usize, j: usize },
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Parses a headerless numeric CSV into a dense matrix.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if cols.is_some_and(|c| c != record.len()) {
            return Err(Error::parse(path, format!("line {}: ragged row", line + 1)));
        }
        cols = Some(record.len());
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: bad number {field:?}", line + 1)))?;
            data.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data).map_err(|e| Error::parse(path, e.to_string()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

/// One integer label per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: bad label {l:?}", i + 1)))
        })
        .collect()
}

/// Reads an undirected edge list into a symmetric 0/1 matrix without
/// self-loops. Self-loops and repeated edges are dropped and reported.
pub fn read_edge_list(path: &Path, n: usize, view: usize) -> Result<(Array2<f64>, Vec<Repair>)> {
    let text = read_to_string(path)?;
    let mut a = Array2::<f64>::zeros((n, n));
    let mut seen = std::collections::HashSet::new();
    let mut repairs = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok = parts
                .next()
                .ok_or_else(|| Error::parse(path, format!("line {}: expected \"i j\"", line_no + 1)))?;
            tok.parse()
                .map_err(|_| Error::parse(path, format!("line {}: bad node id {tok:?}", line_no + 1)))
        };
        let (i, j) = (next()?, next()?);
        if parts.next().is_some() {
            return Err(Error::parse(path, format!("line {}: expected \"i j\"", line_no + 1)));
        }
        if i >= n || j >= n {
            return Err(Error::Dimension(format!(
                "{}: edge ({i}, {j}) outside 0..{n}",
                path.display()
            )));
        }
        if i == j {
            repairs.push(Repair::SelfLoopDropped { view, node: i });
            continue;
        }
        let (i, j) = (i.min(j), i.max(j));
        if !seen.insert((i, j)) {
            repairs.push(Repair::DuplicateEdge { view, i, j });
            continue;
        }
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    Ok((a, repairs))
}

/// Loads and validates a dataset, also returning every repair applied.
pub fn load_dataset_with_repairs(manifest_path: &Path) -> Result<(MultiViewGraph, Vec<Repair>)> {
    let text = read_to_string(manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    if manifest.graph_files.len() != manifest.n_views {
        return Err(Error::Dimension(format!(
            "manifest declares {} views but lists {} graph files",
            manifest.n_views,
            manifest.graph_files.len()
        )));
    }
    let features = read_matrix_csv(&resolve(base, &manifest.feature_file))?;
    if features.dim() != (manifest.n_nodes, manifest.n_features) {
        return Err(Error::Dimension(format!(
            "feature file is {:?}, manifest declares ({}, {})",
            features.dim(),
            manifest.n_nodes,
            manifest.n_features
        )));
    }
    let labels = read_labels(&resolve(base, &manifest.label_file))?;
    let mut adjacencies = Vec::with_capacity(manifest.n_views);
    let mut repairs = Vec::new();
    for (v, file) in manifest.graph_files.iter().enumerate() {
        let (a, r) = read_edge_list(&resolve(base, file), manifest.n_nodes, v)?;
        adjacencies.push(a);
        repairs.extend(r);
    }
    if !repairs.is_empty() {
        log::warn!("{}: {} repairs while loading: {:?}", manifest.name, repairs.len(), repairs);
    }
    let g = MultiViewGraph::new(features, adjacencies, Some(labels), manifest.n_clusters)?;
    Ok((g, repairs))
}

pub fn load_dataset(manifest_path: &Path) -> Result<MultiViewGraph> {
    load_dataset_with_repairs(manifest_path).map(|(g, _)| g)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(contents.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Writes a matrix as headerless CSV. Values use the shortest text that
/// parses back to the same `f64`.
pub fn save_embedding(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, row) in m.rows().into_iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
    }
    write_file(path, &out)
}

pub fn load_embedding(path: &Path) -> Result<Array2<f64>> {
    read_matrix_csv(path)
}

pub fn save_report(report: &TrainReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, &json)
}

pub fn load_report(path: &Path) -> Result<TrainReport> {
    serde_json::from_str(&read_to_string(path)?).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `g` as `<dir>/<name>.json` plus its data files; returns the
/// manifest path.
pub fn save_dataset(g: &MultiViewGraph, name: &str, dir: &Path) -> Result<PathBuf> {
    let labels = g.labels().ok_or(Error::MissingLabels)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let feature_file = PathBuf::from(format!("{name}_features.csv"));
    let label_file = PathBuf::from(format!("{name}_labels.csv"));
    save_embedding(g.features(), &dir.join(&feature_file))?;
    let label_text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    write_file(&dir.join(&label_file), &label_text)?;
    let mut graph_files = Vec::with_capacity(g.n_views());
    for v in 0..g.n_views() {
        let file = PathBuf::from(format!("{name}_view{v}.edges"));
        let a = g.adjacency(v);
        let mut text = String::new();
        for i in 0..g.n_nodes() {
            for j in (i + 1)..g.n_nodes() {
                if a[[i, j]] != 0.0 {
                    text.push_str(&format!("{i} {j}\n"));
                }
            }
        }
        write_file(&dir.join(&file), &text)?;
        graph_files.push(file);
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        n_nodes: g.n_nodes(),
        n_views: g.n_views(),
        n_features: g.n_features(),
        n_clusters: g.n_clusters(),
        feature_file,
        label_file,
        graph_files,
    };
    let path = dir.join(format!("{name}.json"));
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write_file(&path, &json)?;
    Ok(path)
}

/// Parameters of a planted-partition multi-view graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub n_clusters: usize,
    pub n_views: usize,
    /// One entry per view, or a single entry shared by all views.
    pub p_in: Vec<f64>,
    pub p_out: Vec<f64>,
    pub n_features: usize,
    /// Class `j` has mean `mu·e_(j mod d)`.
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_nodes: 1000,
            n_clusters: 4,
            n_views: 2,
            p_in: vec![0.1],
            p_out: vec![0.005],
            n_features: 16,
            mu: 1.0,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.n_clusters == 0 || self.n_views == 0 || self.n_features == 0 {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        if self.n_clusters > self.n_nodes {
            return Err(Error::Config(format!(
                "{} clusters for {} nodes",
                self.n_clusters, self.n_nodes
            )));
        }
        for (name, ps) in [("p_in", &self.p_in), ("p_out", &self.p_out)] {
            if ps.len() != 1 && ps.len() != self.n_views {
                return Err(Error::Config(format!(
                    "{name} needs 1 or {} entries, got {}",
                    self.n_views,
                    ps.len()
                )));
            }
            if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma = {} must be positive", self.sigma)));
        }
        if !self.mu.is_finite() {
            return Err(Error::Config("mu must be finite".into()));
        }
        Ok(())
    }

    fn p(&self, ps: &[f64], view: usize) -> f64 {
        if ps.len() == 1 {
            ps[0]
        } else {
            ps[view]
        }
    }

    pub fn p_in_for(&self, view: usize) -> f64 {
        self.p(&self.p_in, view)
    }

    pub fn p_out_for(&self, view: usize) -> f64 {
        self.p(&self.p_out, view)
    }

    /// Balanced class of node `i`.
    pub fn label_of(&self, i: usize) -> usize {
        i * self.n_clusters / self.n_nodes
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        (0..self.n_nodes).for_each(|i| sizes[self.label_of(i)] += 1);
        sizes
    }

    /// (intra-class pairs, inter-class pairs).
    pub fn pair_counts(&self) -> (f64, f64) {
        let pairs = |k: usize| (k * k.saturating_sub(1) / 2) as f64;
        let intra: f64 = self.class_sizes().into_iter().map(pairs).sum();
        (intra, pairs(self.n_nodes) - intra)
    }

    pub fn expected_edges(&self, view: usize) -> f64 {
        let (intra, inter) = self.pair_counts();
        self.p_in_for(view) * intra + self.p_out_for(view) * inter
    }

    /// Expected homophily ratio of a view.
    pub fn expected_hr(&self, view: usize) -> Result<f64> {
        let (intra, _) = self.pair_counts();
        let total = self.expected_edges(view);
        if total <= 0.0 {
            return Err(Error::UndefinedRatio);
        }
        Ok(self.p_in_for(view) * intra / total)
    }
}

/// Draws a synthetic graph. Features are shared by all views; each view is
/// an independent SBM draw.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MultiViewGraph> {
    spec.validate()?;
    let n = spec.n_nodes;
    for v in 0..spec.n_views {
        if spec.expected_edges(v) <= 0.0 {
            return Err(Error::Domain(format!("view {v} has an expected edge count of 0")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = (0..n).map(|i| spec.label_of(i)).collect();
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut features = Array2::<f64>::zeros((n, spec.n_features));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for x in row.iter_mut() {
            *x = noise.sample(&mut rng);
        }
        row[labels[i] % spec.n_features] += spec.mu;
    }
    let mut adjacencies = Vec::with_capacity(spec.n_views);
    for v in 0..spec.n_views {
        let (p_in, p_out) = (spec.p_in_for(v), spec.p_out_for(v));
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let p = if labels[i] == labels[j] { p_in } else { p_out };
                if rng.random::<f64>() < p {
                    a[[i, j]] = 1.0;
                    a[[j, i]] = 1.0;
                }
            }
        }
        adjacencies.push(a);
    }
    MultiViewGraph::new(features, adjacencies, Some(labels), spec.n_clusters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{homophily_ratio, OneHotLabels};
    use ndarray::array;

    #[test]
    fn identity_embedding_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        save_embedding(&Array2::eye(2), &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "1,0\n0,1");
        assert_eq!(load_embedding(&path).unwrap(), Array2::<f64>::eye(2));
    }

    #[test]
    fn duplicate_edges_are_set_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.edges");
        fs::write(&p, "0 1\n1 0\n0 1\n2 2\n1 2\n").unwrap();
        let (a, repairs) = read_edge_list(&p, 3, 0).unwrap();
        assert_eq!(a, array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]);
        assert!(repairs.contains(&Repair::DuplicateEdge { view: 0, i: 0, j: 1 }));
        assert!(repairs.contains(&Repair::SelfLoopDropped { view: 0, node: 2 }));
        assert_eq!(repairs.len(), 3);
    }

    #[test]
    fn synthetic_homophily_direction() {
        let spec = SyntheticSpec {
            n_nodes: 500,
            n_clusters: 2,
            p_in: vec![0.2],
            p_out: vec![0.01],
            ..Default::default()
        };
        let g = generate_synthetic(&spec).unwrap();
        let y = OneHotLabels::new(g.labels().unwrap().to_vec(), 2).unwrap();
        assert!(homophily_ratio(g.adjacency(0), &y).unwrap() > 0.8);

        let het = SyntheticSpec {
            p_in: vec![0.01],
            p_out: vec![0.2],
            ..spec
        };
        let g = generate_synthetic(&het).unwrap();
        assert!(homophily_ratio(g.adjacency(1), &y).unwrap() < 0.2);
    }

    #[test]
    fn zero_probability_rejected() {
        let spec = SyntheticSpec {
            p_in: vec![0.0],
            p_out: vec![0.0],
            ..Default::default()
        };
        assert!(generate_synthetic(&spec).is_err());
        let bad = SyntheticSpec {
            sigma: 0.0,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
    }
}
