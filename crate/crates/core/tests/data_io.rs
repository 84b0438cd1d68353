mod common;

use std::fs;

use common::{normal_matrix, rng, sim_config};
use lcap::data::{
    center_dataset, load_dataset, save_dataset, validate_dataset, LongitudinalDataset, VisitBlock,
};
use lcap::panel::Panel;
use lcap::simulation::generate_dataset;
use lcap::LcapError;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn bits(ds: &LongitudinalDataset) -> Vec<u64> {
    ds.blocks()
        .flat_map(|b| b.observations.iter().chain(b.covariates.iter()))
        .map(|x| x.to_bits())
        .collect()
}

#[test]
fn save_load_round_trip_is_bit_exact() {
    let (mut ds, _) = generate_dataset(&sim_config(4, 6, 3, 7), 1).unwrap();
    // awkward values: subnormal, huge, negative zero, many digits
    let b = &mut ds.subjects[0].visits[0].observations;
    b[(0, 0)] = 5e-324;
    b[(0, 1)] = -1.7976931348623157e308;
    b[(1, 0)] = -0.0;
    b[(1, 1)] = 0.1 + 0.2;
    let dir = tempfile::tempdir().unwrap();
    let (d, c) = (dir.path().join("data.csv"), dir.path().join("cov.csv"));
    save_dataset(&ds, &d, &c).unwrap();
    let back = load_dataset(&d, &c).unwrap();
    assert_eq!(back.p, ds.p);
    assert_eq!(back.q, ds.q);
    assert_eq!(bits(&back), bits(&ds));
    assert_eq!(back, ds);

    // saving again reproduces the files byte for byte
    let (d2, c2) = (dir.path().join("d2.csv"), dir.path().join("c2.csv"));
    save_dataset(&back, &d2, &c2).unwrap();
    assert_eq!(fs::read(&d).unwrap(), fs::read(&d2).unwrap());
    assert_eq!(fs::read(&c).unwrap(), fs::read(&c2).unwrap());
}

fn write(dir: &std::path::Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn load_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(
        dir.path(),
        "data.csv",
        "subject_id,visit,y1,y2\na,1,1,2\na,1,2,1\na,1,0,0\n",
    );
    let cov = write(dir.path(), "cov.csv", "subject_id,visit,x1\na,1,0.5\n");
    assert!(load_dataset(&data, &cov).is_ok());

    let missing = dir.path().join("nope.csv");
    let err = load_dataset(&data, &missing).unwrap_err();
    assert!(matches!(err, LcapError::Io { .. }));
    assert!(err.to_string().contains("nope.csv"));

    let bad = write(
        dir.path(),
        "bad.csv",
        "subject_id,visit,y1,y2\na,1,1,x\na,1,2,1\n",
    );
    let err = load_dataset(&bad, &cov).unwrap_err();
    assert!(err.to_string().contains("bad.csv"), "{err}");
    assert!(err.is_validation());

    let no_cov = write(dir.path(), "cov2.csv", "subject_id,visit,x1\nb,1,0.5\n");
    assert!(load_dataset(&data, &no_cov).is_err());

    let header = write(dir.path(), "h.csv", "id,visit,y1\na,1,1\n");
    assert!(load_dataset(&header, &cov).is_err());

    let missing_value = write(dir.path(), "cov3.csv", "subject_id,visit,x1\na,1,\n");
    assert!(load_dataset(&data, &missing_value).is_err());
}

fn block(id: &str, visit: i64, rows: DMatrix<f64>) -> VisitBlock {
    VisitBlock::new(id, visit, rows, DVector::from_vec(vec![1.0]))
}

#[test]
fn validation_reports() {
    let mut r = rng(2);
    let ok = LongitudinalDataset::from_blocks(vec![
        block("a", 1, normal_matrix(6, 3, &mut r)),
        block("a", 4, normal_matrix(6, 3, &mut r)),
        block("b", 2, normal_matrix(5, 3, &mut r)),
    ])
    .unwrap();
    let report = validate_dataset(&ok);
    assert!(report.is_ok(), "{:?}", report.errors);
    assert!(report.warnings.is_empty());

    let short =
        LongitudinalDataset::from_blocks(vec![block("a", 1, normal_matrix(1, 3, &mut r))]).unwrap();
    let report = validate_dataset(&short);
    assert!(report
        .errors
        .iter()
        .any(|(_, m)| m.contains("T_iv >= 2 required")));

    let wide = LongitudinalDataset::from_blocks(vec![
        block("a", 1, normal_matrix(50, 100, &mut r)),
        block("b", 1, normal_matrix(50, 100, &mut r)),
    ])
    .unwrap();
    let report = validate_dataset(&wide);
    assert!(report.is_ok());
    assert!(report
        .warnings
        .iter()
        .any(|w| w.contains("high-dimensional regime: shrinkage estimator required")));
}

#[test]
fn panel_requires_centering() {
    let (ds, _) = generate_dataset(&sim_config(4, 4, 2, 5), 3).unwrap();
    assert!(matches!(
        Panel::from_dataset(&ds),
        Err(LcapError::Precondition(_))
    ));
    assert!(Panel::from_dataset(&center_dataset(ds)).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn centering_is_idempotent(seed in any::<u64>(), t in 2usize..12, p in 1usize..5) {
        let mut r = rng(seed);
        let raw = LongitudinalDataset::from_blocks(vec![
            block("a", 1, normal_matrix(t, p, &mut r) * 3.0 + DMatrix::from_element(t, p, 5.0)),
            block("b", 1, normal_matrix(t + 1, p, &mut r)),
        ]).unwrap();
        let once = center_dataset(raw.clone());
        let twice = center_dataset(once.clone());
        for (a, b) in once.blocks().zip(twice.blocks()) {
            prop_assert!((&a.observations - &b.observations).amax() <= 1e-12);
        }
        // the centered second moment equals the mean-corrected covariance
        for (c, u) in once.blocks().zip(raw.blocks()) {
            let tt = u.n_rows() as f64;
            let mean = u.observations.row_sum() / tt;
            let mut expected = u.observations.tr_mul(&u.observations) / tt;
            expected -= mean.transpose() * &mean;
            let got = lcap::covariance::sample_covariance(c).unwrap();
            prop_assert!((got - expected).amax() <= 1e-10 * (1.0 + u.observations.amax().powi(2)));
        }
    }
}
