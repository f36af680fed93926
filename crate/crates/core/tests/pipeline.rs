//! Cross-module checks through the public API.

use std::sync::Arc;

use fwmw::harness::{run_power_study, run_tests, ExperimentConfig, ShiftGrid, TestId, TestOptions};
use fwmw::meantests::mean_tests;
use fwmw::simproc::{apply_shift, gen_sample, KlSpec, ShiftKind, ShiftSpec};
use fwmw::wmw::{wmw_test, WmwConfig};
use fwmw::{Grid, LpGeometry, Sample, WeightMode};
use proptest::prelude::*;

fn sample(grid: &Arc<Grid>, rows: &[Vec<f64>]) -> Sample {
    Sample::from_rows(grid.clone(), rows.to_vec()).unwrap()
}

fn curves(m: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn decision_and_p_value_are_coherent(
        (d, xs, ys) in (2usize..6).prop_flat_map(|d| (Just(d), curves(4, d), curves(5, d))),
        p in prop::sample::select(vec![2.0, 3.0, 4.0]),
        seed in any::<u64>(),
    ) {
        let grid = Arc::new(Grid::unit(d, WeightMode::Euclidean).unwrap());
        let (x, y) = (sample(&grid, &xs), sample(&grid, &ys));
        let geom = LpGeometry::new(p, WeightMode::Euclidean).unwrap();
        let cfg = WmwConfig { n_mc: 2000, seed, ..Default::default() };
        let r = wmw_test(&x, &y, &geom, &cfg).unwrap();
        prop_assert!(r.statistic >= 0.0);
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        prop_assert_eq!(r.reject, r.statistic > r.critical_value);
        // labels do not matter to the statistic or its calibration
        let s = wmw_test(&y, &x, &geom, &cfg).unwrap();
        prop_assert!((r.statistic - s.statistic).abs() < 1e-10);
        prop_assert!((r.critical_value - s.critical_value).abs() < 1e-10);
        prop_assert_eq!(r.p_value, s.p_value);
    }
}

fn experiment(c: f64) -> ExperimentConfig {
    ExperimentConfig {
        m: 10,
        n: 10,
        grid: Arc::new(Grid::unit(40, WeightMode::Euclidean).unwrap()),
        distribution: KlSpec::sbm(),
        shifts: vec![ShiftGrid {
            shift: ShiftSpec::new(ShiftKind::Delta1, 1.0),
            c_values: vec![c],
        }],
        tests: TestId::ALL.to_vec(),
        replicates: 40,
        seed: 99,
        options: TestOptions {
            n_mc: 2000,
            ..Default::default()
        },
    }
}

#[test]
fn large_shift_is_always_detected() {
    let t = run_power_study(&experiment(5.0)).unwrap();
    for row in &t.rows {
        assert_eq!(row.rejection_rate, 1.0, "{row:?}");
    }
}

#[test]
fn harness_decisions_match_direct_calls() {
    let grid = Arc::new(Grid::unit(25, WeightMode::Trapezoid).unwrap());
    let spec = KlSpec::t_process(5.0);
    let x = gen_sample(&spec, 9, &grid, 1).unwrap();
    let y = apply_shift(&gen_sample(&spec, 11, &grid, 2).unwrap(), &ShiftSpec::new(ShiftKind::Delta2, 1.2)).unwrap();
    let opts = TestOptions {
        p: 3.0,
        weight_mode: WeightMode::Trapezoid,
        n_mc: 3000,
        ..Default::default()
    };
    let decisions = run_tests(&x, &y, &TestId::ALL, &opts, 17).unwrap();
    let w = wmw_test(&x, &y, &opts.geometry().unwrap(), &opts.wmw_config(17)).unwrap();
    let m = mean_tests(&x, &y, &opts.mean_config(17)).unwrap();
    assert_eq!(decisions, vec![w.reject, m[0].reject, m[1].reject, m[2].reject]);
}

#[test]
fn null_rejections_stay_rare() {
    let t = run_power_study(&experiment(0.0)).unwrap();
    for row in &t.rows {
        // 40 replicates at level 0.05: eight or more rejections has
        // probability below 0.2% for a valid test
        assert!(row.rejections < 8, "{row:?}");
    }
}
