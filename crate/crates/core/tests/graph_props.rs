use std::path::PathBuf;

use ahgfc::dataset::load_dataset;
use ahgfc::fusion::update_hr;
use ahgfc::graph::{homophily_ratio, random_walk_normalize, true_homophily_report};
use ahgfc::{MultiViewGraph, OneHotLabels};
use ndarray::Array2;
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// Symmetric 0/1 adjacency without self-loops.
fn adjacency(n: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(any::<bool>(), n * n).prop_map(move |bits| {
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if bits[i * n + j] {
                    a[[i, j]] = 1.0;
                    a[[j, i]] = 1.0;
                }
            }
        }
        a
    })
}

fn graph_and_labels() -> impl Strategy<Value = (Array2<f64>, Vec<usize>, usize)> {
    (2usize..20, 1usize..5).prop_flat_map(|(n, c)| (adjacency(n), prop::collection::vec(0..c, n), Just(c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_walk_rows_are_stochastic(a in (1usize..25).prop_flat_map(adjacency), loops in any::<bool>()) {
        let g = random_walk_normalize(a.view(), loops).unwrap();
        for (i, row) in g.a_rw.rows().into_iter().enumerate() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            if !loops && a.row(i).sum() == 0.0 {
                prop_assert_eq!(g.a_rw[[i, i]], 1.0);
            }
        }
        let eye = Array2::<f64>::eye(a.nrows());
        prop_assert!((&g.l_rw - &(&eye - &g.a_rw)).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn homophily_in_unit_interval((a, labels, c) in graph_and_labels()) {
        let y = OneHotLabels::new(labels.clone(), c).unwrap();
        match homophily_ratio(&a, &y) {
            Ok(hr) => {
                prop_assert!((0.0..=1.0).contains(&hr));
                // Edge-counting oracle.
                let n = labels.len();
                let (mut same, mut all) = (0.0, 0.0);
                for i in 0..n {
                    for j in (i + 1)..n {
                        if a[[i, j]] == 1.0 {
                            all += 1.0;
                            same += (labels[i] == labels[j]) as u8 as f64;
                        }
                    }
                }
                prop_assert!((hr - same / all).abs() < 1e-12);
            }
            Err(_) => prop_assert_eq!(a.sum(), 0.0),
        }
    }

    #[test]
    fn ground_truth_pseudo_labels_reproduce_true_report((a, labels, c) in graph_and_labels()) {
        prop_assume!(a.sum() > 0.0);
        let n = labels.len();
        let g = MultiViewGraph::new(Array2::zeros((n, 1)), vec![a.clone(), a], Some(labels.clone()), c).unwrap();
        let y = OneHotLabels::new(labels, c).unwrap();
        prop_assert_eq!(update_hr(&g, &y).unwrap(), true_homophily_report(&g).unwrap());
    }

    #[test]
    fn single_class_gives_full_homophily(a in (2usize..20).prop_flat_map(adjacency)) {
        prop_assume!(a.sum() > 0.0);
        let y = OneHotLabels::new(vec![0; a.nrows()], 3).unwrap();
        prop_assert_eq!(homophily_ratio(&a, &y).unwrap(), 1.0);
    }
}

#[test]
fn acm_style_fixture_ratios() {
    let g = load_dataset(&fixture("acm_style.json")).unwrap();
    let y = OneHotLabels::new(g.labels().unwrap().to_vec(), g.n_clusters()).unwrap();
    let hr = update_hr(&g, &y).unwrap();
    assert!((hr[0] - 0.82).abs() < 1e-9, "{hr:?}");
    assert!((hr[1] - 0.64).abs() < 1e-9, "{hr:?}");
}

#[test]
fn heterophilous_fixture_ratio() {
    let g = load_dataset(&fixture("hetero_small.json")).unwrap();
    let report = true_homophily_report(&g).unwrap();
    assert!((report[0] - 0.1).abs() < 1e-9, "{report:?}");
}

#[test]
fn tiny3_fixture() {
    let g = load_dataset(&fixture("tiny3.json")).unwrap();
    assert_eq!((g.n_views(), g.n_nodes()), (2, 3));
    assert_eq!(true_homophily_report(&g).unwrap(), vec![0.0, 1.0]);
}
