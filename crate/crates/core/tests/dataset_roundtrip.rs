use std::fs;
use std::path::PathBuf;

use ahgfc::clustering::Metrics;
use ahgfc::dataset::{
    generate_synthetic, load_dataset, load_dataset_with_repairs, load_embedding, load_report, save_dataset,
    save_embedding, save_report, DatasetManifest, SyntheticSpec,
};
use ahgfc::graph::true_homophily_report;
use ahgfc::train::TrainReport;
use ahgfc::Error;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_nodes: 60,
        n_clusters: 3,
        n_views: 2,
        p_in: vec![0.3, 0.1],
        p_out: vec![0.02, 0.2],
        n_features: 5,
        mu: 2.0,
        sigma: 0.7,
        seed,
    }
}

#[test]
fn synthetic_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_synthetic(&small_spec(3)).unwrap();
    let manifest = save_dataset(&g, "syn", dir.path()).unwrap();
    let (back, repairs) = load_dataset_with_repairs(&manifest).unwrap();
    assert!(repairs.is_empty());
    assert_eq!(back.adjacencies(), g.adjacencies());
    assert_eq!(back.labels(), g.labels());
    let diff = (back.features() - g.features()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff < 1e-12);
}

#[test]
fn generator_is_deterministic() {
    assert_eq!(generate_synthetic(&small_spec(9)).unwrap(), generate_synthetic(&small_spec(9)).unwrap());
    assert_ne!(generate_synthetic(&small_spec(9)).unwrap(), generate_synthetic(&small_spec(10)).unwrap());
}

#[test]
fn measured_homophily_tracks_expected_ratio() {
    for (p_in, p_out) in [(0.02, 0.004), (0.004, 0.02), (0.01, 0.01)] {
        let spec = SyntheticSpec {
            n_nodes: 2000,
            n_clusters: 4,
            n_views: 1,
            p_in: vec![p_in],
            p_out: vec![p_out],
            n_features: 2,
            seed: 42,
            ..SyntheticSpec::default()
        };
        let g = generate_synthetic(&spec).unwrap();
        let measured = true_homophily_report(&g).unwrap()[0];
        let expected = spec.expected_hr(0).unwrap();
        assert!((measured - expected).abs() < 0.03, "{p_in}/{p_out}: {measured} vs {expected}");
    }
    // Equal probabilities: the ratio is the share of intra-class pairs.
    let spec = SyntheticSpec {
        p_in: vec![0.3],
        p_out: vec![0.3],
        ..SyntheticSpec::default()
    };
    let (intra, inter) = spec.pair_counts();
    assert!((spec.expected_hr(0).unwrap() - intra / (intra + inter)).abs() < 1e-15);
}

#[test]
fn feature_rows_must_match_adjacency() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["tiny3_labels.csv", "tiny3_view0.edges", "tiny3_view1.edges"] {
        fs::copy(fixture(f), dir.path().join(f)).unwrap();
    }
    fs::write(dir.path().join("tiny3_features.csv"), "1,0\n0,1\n").unwrap();
    fs::copy(fixture("tiny3.json"), dir.path().join("tiny3.json")).unwrap();
    assert!(matches!(load_dataset(&dir.path().join("tiny3.json")), Err(Error::Dimension(_))));
}

#[test]
fn out_of_range_label_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["tiny3.json", "tiny3_features.csv", "tiny3_view0.edges", "tiny3_view1.edges"] {
        fs::copy(fixture(f), dir.path().join(f)).unwrap();
    }
    fs::write(dir.path().join("tiny3_labels.csv"), "0\n1\n2\n").unwrap();
    assert!(matches!(load_dataset(&dir.path().join("tiny3.json")), Err(Error::Domain(_))));
}

#[test]
fn duplicate_edge_lines_collapse() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["tiny3.json", "tiny3_features.csv", "tiny3_labels.csv", "tiny3_view1.edges"] {
        fs::copy(fixture(f), dir.path().join(f)).unwrap();
    }
    fs::write(dir.path().join("tiny3_view0.edges"), "0 1\n1 2\n0 1\n2 1\n").unwrap();
    let (g, repairs) = load_dataset_with_repairs(&dir.path().join("tiny3.json")).unwrap();
    let clean = load_dataset(&fixture("tiny3.json")).unwrap();
    assert_eq!(g, clean);
    assert_eq!(repairs.len(), 2);
}

#[test]
fn manifest_schema_fields() {
    let text = fs::read_to_string(fixture("acm_style.json")).unwrap();
    let m: DatasetManifest = serde_json::from_str(&text).unwrap();
    assert_eq!((m.n_nodes, m.n_views, m.n_features, m.n_clusters), (60, 2, 8, 3));
    assert_eq!(m.graph_files.len(), 2);
}

#[test]
fn embedding_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = Array2::from_shape_fn((10, 4), |_| rng.random_range(-1e3..1e3) * rng.random::<f64>());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    save_embedding(&m, &p).unwrap();
    let back = load_embedding(&p).unwrap();
    assert!((back - &m).iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn report_round_trip_keeps_metric_fields() {
    let report = TrainReport {
        pretrain: vec![1.0, 0.5],
        epochs: vec![],
        initial_hr: vec![0.5],
        final_hr: vec![0.6],
        final_weights: vec![1.0],
        final_metrics: Some(Metrics {
            nmi: 0.5,
            ari: -0.1,
            acc: 0.75,
            f1: 0.7,
        }),
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    save_report(&report, &p).unwrap();
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(json["final"]["nmi"], 0.5);
    assert_eq!(load_report(&p).unwrap(), report);
}

#[test]
fn missing_file_error_carries_path() {
    let err = load_dataset(&fixture("does_not_exist.json")).unwrap_err();
    assert!(err.to_string().contains("does_not_exist.json"), "{err}");
}
