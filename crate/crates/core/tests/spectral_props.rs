use ahgfc::graph::random_walk_normalize;
use ahgfc::spectral::{random_walk_spectrum, read_spectrum_csv, spectrum, write_spectrum_csv, MatrixTag};
use ndarray::Array2;
use proptest::prelude::*;

fn symmetric(n: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
        let m = Array2::from_shape_vec((n, n), v).unwrap();
        (&m + &m.t()) * 0.5
    })
}

fn weights(n: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(0.0f64..1.0, n * n).prop_map(move |v| {
        let m = Array2::from_shape_vec((n, n), v).unwrap().mapv(|x| if x < 0.4 { 0.0 } else { x });
        &m + &m.t()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eigenvalues_sum_to_trace(m in (1usize..20).prop_flat_map(symmetric)) {
        let r = spectrum(&m, false, MatrixTag::AdjacencyRw).unwrap();
        let n = m.nrows() as f64;
        prop_assert!((r.eigenvalues.iter().sum::<f64>() - m.diag().sum()).abs() < 1e-8 * n);
        prop_assert!(r.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn high_pass_duality(m in (1usize..20).prop_flat_map(symmetric)) {
        let eye = Array2::<f64>::eye(m.nrows());
        let lo = spectrum(&m, false, MatrixTag::AdjacencyRw).unwrap().eigenvalues;
        let hi = spectrum(&(&eye - &m), false, MatrixTag::AdjacencyRw).unwrap().eigenvalues;
        for (l, h) in lo.iter().rev().zip(&hi) {
            prop_assert!((1.0 - l - h).abs() < 1e-9);
        }
    }

    #[test]
    fn random_walk_spectrum_in_unit_disk(w in (1usize..25).prop_flat_map(weights)) {
        let r = random_walk_spectrum(&w, MatrixTag::JointAggregationRw).unwrap();
        prop_assert!(r.eigenvalues.iter().all(|l| l.abs() <= 1.0 + 1e-8));
        prop_assert!((r.summary.max - 1.0).abs() < 1e-8);
    }

    #[test]
    fn similarity_transform_keeps_trace(w in (1usize..25).prop_flat_map(weights)) {
        // Binary version so the reference normalization applies unchanged.
        let a = w.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
        let mut a = a;
        a.diag_mut().fill(0.0);
        let rw = random_walk_normalize(a.view(), false).unwrap().a_rw;
        let r = random_walk_spectrum(&a, MatrixTag::AdjacencyRw).unwrap();
        let n = a.nrows() as f64;
        prop_assert!((r.eigenvalues.iter().sum::<f64>() - rw.diag().sum()).abs() < 1e-8 * n);
    }
}

#[test]
fn symmetric_stochastic_has_perron_root() {
    let m = Array2::from_shape_vec((3, 3), vec![0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]).unwrap();
    let r = spectrum(&m, false, MatrixTag::AdjacencyRw).unwrap();
    assert!((r.summary.max - 1.0).abs() < 1e-12);
}

#[test]
fn csv_round_trip() {
    let m = Array2::from_shape_fn((7, 7), |(i, j)| ((i * 7 + j) as f64).sin());
    let r = spectrum(&m, true, MatrixTag::JointAggregationRw).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    write_spectrum_csv(&r, &p).unwrap();
    let back = read_spectrum_csv(&p, MatrixTag::JointAggregationRw).unwrap();
    for (a, b) in r.eigenvalues.iter().zip(&back.eigenvalues) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(back.summary, r.summary);
}
