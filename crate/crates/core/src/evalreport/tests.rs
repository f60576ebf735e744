use super::*;
use crate::district::make_splits;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn pearson_examples() {
    let x = [1.0, 2.0, 3.0, 5.0];
    assert!(close(pearson(&x, &x.map(|v| 3.0 * v - 1.0)).unwrap(), 1.0, 1e-15));
    assert!(close(pearson(&x, &x.map(|v| -v)).unwrap(), -1.0, 1e-15));
    // Covariance oracle: cov = 3.0833.., sx = 1.7078.., sy = 2.2174..
    let y = [2.0, 1.0, 4.0, 6.0];
    let r = pearson(&x, &y).unwrap();
    let (mx, my) = (11.0 / 4.0, 13.0 / 4.0);
    let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    assert!(close(r, cov / (vx * vy).sqrt(), 1e-12));
    assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn spearman_examples() {
    let x = [0.3, 1.0, 2.5, 7.0, 9.0];
    let y: Vec<f64> = x.iter().map(|v: &f64| v.powi(3) + 1.0).collect();
    assert!(close(spearman(&x, &y).unwrap(), 1.0, 1e-15));
    let rev: Vec<f64> = x.iter().rev().copied().collect();
    assert!(close(spearman(&x, &rev).unwrap(), -1.0, 1e-15));
    assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
    // Ranks (1, 2.5, 2.5, 4) vs (1, 3, 2, 4).
    let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    let expected = pearson(&[1.0, 2.5, 2.5, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert_eq!(r, expected);
    assert!(matches!(spearman(&[2.0; 3], &[1.0, 2.0, 3.0]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn r_squared_examples() {
    let y = [1.0, 4.0, 2.0, 8.0];
    assert_eq!(r_squared(&y, &y).unwrap(), 1.0);
    assert!(close(r_squared(&y, &[3.75; 4]).unwrap(), 0.0, 1e-15));
    assert!(matches!(r_squared(&[1.0; 3], &[1.0, 2.0, 3.0]), Err(Error::UndefinedMetric(_))));
}

proptest! {
    #[test]
    fn metrics_permutation_invariant(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..30), k in 1usize..7) {
        let x: Vec<f64> = v.iter().map(|p| p.0).collect();
        let y: Vec<f64> = v.iter().map(|p| p.1).collect();
        let n = x.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * k + 1) % n).collect();
        prop_assume!(perm.iter().collect::<std::collections::BTreeSet<_>>().len() == n);
        let px: Vec<f64> = perm.iter().map(|&i| x[i]).collect();
        let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        prop_assert!(close(pearson(&x, &y).unwrap(), pearson(&px, &py).unwrap(), 1e-12));
        prop_assert!(close(spearman(&x, &y).unwrap(), spearman(&px, &py).unwrap(), 1e-12));
        prop_assert!(close(r_squared(&x, &y).unwrap(), r_squared(&px, &py).unwrap(), 1e-9));
        let p = pearson(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&p));
    }

    #[test]
    fn mean_predictor_has_zero_r2(y in proptest::collection::vec(-100.0f64..100.0, 2..40)) {
        prop_assume!(y.iter().any(|v| *v != y[0]));
        let m = y.iter().sum::<f64>() / y.len() as f64;
        prop_assert!(r_squared(&y, &vec![m; y.len()]).unwrap().abs() < 1e-9);
    }
}

fn toy_blocks(n: usize, seed: u64) -> DistrictBlocks {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
    let signal = |noise: f64, rng: &mut rand_chacha::ChaCha8Rng| {
        Array2::from_shape_fn((n, 3), |(i, j)| targets[i] * (j as f64 + 1.0) / 100.0 + noise * rng.random_range(-1.0..1.0))
    };
    DistrictBlocks {
        ids: (0..n as u32).map(|i| 100 + i).collect(),
        morph: Some(signal(0.1, &mut rng)),
        access: Some(signal(0.5, &mut rng)),
        econ: Some(signal(0.2, &mut rng)),
        econ_proxy: Some(signal(3.0, &mut rng)),
        targets,
    }
}

#[test]
fn informative_features_score_well_and_shuffled_do_not() {
    let b = toy_blocks(40, 1);
    let plan = make_splits(&b.ids, 5).unwrap();
    let full = evaluate_variant("full", b.features(Variant::Full.blocks()).unwrap().view(), &b.ids, &b.targets, &plan, 2, ForestParams::default()).unwrap();
    assert!(full.metrics.pearson.mean > 0.9, "{:?}", full.metrics);
    assert_eq!(full.reps.len(), 50);

    let mut shuffled = b.targets.clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
    let null = evaluate_variant("null", b.features(Variant::Full.blocks()).unwrap().view(), &b.ids, &shuffled, &plan, 2, ForestParams::default()).unwrap();
    assert!(null.metrics.pearson.mean.abs() < 0.3, "{:?}", null.metrics);
}

#[test]
fn identical_reps_have_zero_sd() {
    let b = toy_blocks(20, 2);
    let mut plan = make_splits(&b.ids, 1).unwrap();
    let first = plan.reps[0].clone();
    plan.reps.iter_mut().for_each(|r| *r = first.clone());
    plan.reps.truncate(5);
    let x = b.features(&[Block::Morph]).unwrap();
    // Forest seeds differ per repetition, so fix the forest to be deterministic.
    let params = ForestParams { n_trees: 1, bootstrap: false, max_features: Some(3), ..ForestParams::default() };
    let r = evaluate_variant("m", x.view(), &b.ids, &b.targets, &plan, 0, params).unwrap();
    assert!(r.metrics.pearson.sd < 1e-15);
}

#[test]
fn ablation_rows_and_errors() {
    let b = toy_blocks(30, 3);
    let plan = make_splits(&b.ids, 9).unwrap();
    let rows = ablate(&b, &Variant::ALL, &plan, 4, ForestParams::default()).unwrap();
    assert_eq!(rows.len(), 6);
    let x = b.features(Variant::Full.blocks()).unwrap();
    let direct = evaluate_variant("full", x.view(), &b.ids, &b.targets, &plan, 4, ForestParams::default()).unwrap();
    assert_eq!(rows[0], direct);
    assert!(matches!(b.features(&[]), Err(Error::Domain(_))));
    assert!(matches!("bogus".parse::<Variant>(), Err(Error::Config(m)) if m.contains("nobackdoor")));
    assert_eq!(Variant::parse_list("full,proxy").unwrap(), vec![Variant::Full, Variant::Proxy]);
}

#[test]
fn quartile_groups() {
    let y: Vec<f64> = (0..8).map(|i| i as f64 * 10.0).collect();
    let rows = quartile_analysis(&y, &y).unwrap();
    assert_eq!(rows.iter().map(|r| r.members).collect::<Vec<_>>(), vec![2, 4, 4, 2]);
    assert!(rows.iter().all(|r| close(r.pearson.unwrap(), 1.0, 1e-15)));
    assert!(quartile_analysis(&y[..7], &y[..7]).is_err());
    let flat = [1.0, 1.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
    let rows = quartile_analysis(&y, &flat).unwrap();
    assert_eq!(rows[0].pearson, None);
}

#[test]
fn out_of_fold_means() {
    let b = toy_blocks(10, 4);
    let plan = make_splits(&b.ids, 2).unwrap();
    let x = b.features(&[Block::Morph]).unwrap();
    let r = evaluate_variant("m", x.view(), &b.ids, &b.targets, &plan, 0, ForestParams::default()).unwrap();
    let oof = out_of_fold(&r, &plan, &b.ids);
    assert_eq!(oof.len(), 10);
    assert!(oof.iter().all(|v| v.is_finite()));
}

#[test]
fn report_files_are_written_and_deterministic() {
    let b = toy_blocks(12, 5);
    let plan = make_splits(&b.ids, 2).unwrap();
    let rows = ablate(&b, &[Variant::Full, Variant::Proxy], &plan, 1, ForestParams::default()).unwrap();
    let t = paired_ttest(&rows[0].pearsons(), &rows[1].pearsons()).unwrap();
    let report = EvalReport {
        config: vec![("seed".into(), "1".into())],
        ttests: vec![("full".into(), "proxy".into(), t)],
        variants: rows,
        transfer: vec![TransferMatrix {
            variant: "full".into(),
            cities: vec!["a".into(), "b".into()],
            pearson: vec![vec![0.9, 0.5], vec![0.4, 0.8]],
        }],
        ..Default::default()
    };
    assert!(close(report.transfer[0].off_diagonal_mean(), 0.45, 1e-15));
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("variant,repetition,metric,value\nfull,0,pearson,"));
    let md = std::fs::read_to_string(dir.path().join("summary.md")).unwrap();
    assert!(md.contains("| full |") && md.contains("seed=1"));
    for f in ["variants.svg", "transfer_full.svg", "transfer_full.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(csv, report.csv());
}
