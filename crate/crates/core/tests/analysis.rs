use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairprobe::engine::{self, EngineConfig, SearchSpace};
use fairprobe::model::Predictor;
use fairprobe::metrics::{dss_or_elapsed, pca_2d, sur};
use fairprobe::retrain::{assert_disjoint, augment_dataset, augmentation_count, majority_label, split_records, LabelPolicy};
use fairprobe::synth::{planted_dataset, planted_schema, PlantedBias};
use fairprobe::Error;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    // anisotropic box, sheared by a random mixing matrix
    let spread = [5.0, 3.0, 1.5, 0.7, 0.2];
    let mix: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = spread.iter().map(|s| s * (rng.gen::<f64>() - 0.5) * 3.4).collect();
            (0..5).map(|j| (0..5).map(|k| mix[j][k] * z[k]).sum::<f64>() + j as f64).collect()
        })
        .collect()
}

#[test]
fn pca_agrees_with_symmetric_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let rows = cloud(&mut rng, 60);
        let n = rows.len();
        let x = DMatrix::from_fn(n, 5, |i, j| rows[i][j]);
        let mean = x.row_mean();
        let c = DMatrix::from_fn(n, 5, |i, j| x[(i, j)] - mean[j]);
        let cov = c.transpose() * &c / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let p = pca_2d(&rows).unwrap();
        let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
        assert!((p.variances.0 - l1).abs() <= 1e-7 * l1);
        assert!((p.variances.1 - l2).abs() <= 1e-7 * l1);
        for (k, idx) in order[..2].iter().enumerate() {
            let v = eig.eigenvectors.column(*idx);
            let reference: Vec<f64> = (0..n).map(|i| c.row(i).dot(&v.transpose())).collect();
            let got: Vec<f64> = p.points.iter().map(|pt| if k == 0 { pt.0 } else { pt.1 }).collect();
            let same = reference.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let flipped = reference.iter().zip(&got).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            assert!(same.min(flipped) < 1e-5, "component {k}: {same} / {flipped}");
        }
    }
}

#[test]
fn pca_reports_degenerate_clouds() {
    let line: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
    match pca_2d(&line) {
        Err(Error::DegenerateData { points }) => {
            assert_eq!(points.len(), 10);
            assert!(points.iter().all(|p| p.1 == 0.0));
        }
        other => panic!("{other:?}"),
    }
    assert!(pca_2d(&[vec![1.0], vec![2.0]]).is_err());
}

#[test]
fn ratio_metrics() {
    assert_eq!(sur(0, 0), 0.0);
    assert_eq!(sur(3, 12), 0.25);
    assert_eq!(dss_or_elapsed(10.0, 0), 10.0);
    assert_eq!(dss_or_elapsed(10.0, 4), 2.5);
}

fn planted_records(n: u64) -> (fairprobe::data::Dataset, SearchSpace, Vec<fairprobe::DiscriminatoryRecord>) {
    let f = PlantedBias::standard();
    let data = planted_dataset(&f, 100, false, 13);
    let space = SearchSpace::tabular(planted_schema()).unwrap();
    let cfg = EngineConfig { time_budget: None, tsn_budget: Some(n), ..EngineConfig::tabular(1) };
    let out = engine::run(&data, &space, &f, &cfg).unwrap();
    (data, space, out.records)
}

#[test]
fn binary_majority_ties_resolve_to_smallest_label() {
    let f = PlantedBias::standard();
    let (_, space, records) = planted_records(2000);
    assert!(!records.is_empty());
    for r in &records {
        assert_eq!(f.labels()[majority_label(r, &f, &space).unwrap()], "no");
    }
}

#[test]
fn augmentation_adds_both_variants_with_one_label() {
    let f = PlantedBias::standard();
    let (data, space, records) = planted_records(4000);
    let need = augmentation_count(data.len(), records.len(), 0.1, false);
    assert_eq!(need, 10);
    let aug = augment_dataset(&data, &records, 0.1, &f, &space, LabelPolicy::Majority).unwrap();
    assert_eq!(aug.len(), data.len() + 2 * need);
    let labels = aug.labels.as_ref().unwrap();
    for k in 0..need {
        let (i, j) = (data.len() + 2 * k, data.len() + 2 * k + 1);
        assert_eq!(labels[i], labels[j]);
        assert_eq!(aug.samples[i].values, records[k].variant_a.values);
        assert_eq!(aug.samples[j].values, records[k].variant_b.values);
    }
    assert!(matches!(
        augment_dataset(&data, &records[..3], 0.1, &f, &space, LabelPolicy::Majority),
        Err(Error::NotEnoughRecords { needed: 10, available: 3 })
    ));
}

#[test]
fn record_split_is_disjoint() {
    let (_, _, records) = planted_records(3000);
    let (a, b) = split_records(&records);
    assert_eq!(a.len() + b.len(), records.len());
    assert!(assert_disjoint(&a, &b).is_ok());
    assert!(matches!(assert_disjoint(&a, &a[..1]), Err(Error::HoldoutOverlap { .. })));
}
