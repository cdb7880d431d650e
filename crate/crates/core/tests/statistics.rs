use nalgebra::{DMatrix, DVector};
use rdream_core::rdream::size_adjustment_factor;
use rdream_core::simulation::OutlierModel;
use rdream_core::{
    centered_rank_transform, fit_robust, generate_scenario, gwz_statistic, pairwise_weights,
    rdream_test, scale_columns, sensitivity_curve, sensitivity_reports, sn_statistic,
    validate_dataset, var_estimate, vn_statistic, ContaminationSpec, Dataset, Family, HuberConfig,
    LinkSpec, ScenarioSpec, TestMethod, TestOptions,
};

fn clean_linear(n: usize, p: usize, seed: u64) -> Dataset {
    let spec = ScenarioSpec::new(Family::H11, 0.0, n)
        .with_p(p)
        .with_contamination(ContaminationSpec::none());
    generate_scenario(&spec, seed).unwrap().0
}

fn fixed(b: DMatrix<f64>, h: f64) -> TestOptions {
    let mut o = TestOptions::default();
    o.overrides.b_hat = Some(b);
    o.overrides.h = Some(h);
    o
}

#[test]
fn standardization_arithmetic() {
    assert_eq!(sn_statistic(0.0, 0.3, 50, 0.4), 0.0);
    let s = sn_statistic(0.01, 0.0025, 100, 0.2);
    assert!((s - 8.8545).abs() < 1e-3, "{s}");
    assert_eq!(sn_statistic(0.02, 0.0025, 100, 0.2), 2.0 * s);
    assert!((size_adjustment_factor(100) - 1.100475).abs() < 1e-6);
    let factors: Vec<f64> = [60, 100, 200, 1_000_000]
        .iter()
        .map(|&n| size_adjustment_factor(n))
        .collect();
    assert!(factors.windows(2).all(|w| w[1] < w[0]));
    assert!(factors[3] - 1.0 < 1e-4);
}

#[test]
fn variance_estimate_matches_its_limit() {
    let d = clean_linear(2000, 8, 11);
    let z = d.x().columns(0, 1).into_owned();
    let h = 0.5 * 2000f64.powf(-0.2);
    let limit = (5.0 / 7.0) / (2.0 * std::f64::consts::PI.sqrt()) / 72.0;
    assert!((limit - 0.002800).abs() < 1e-5);
    let var = var_estimate(&z, h).unwrap();
    assert!((var / limit - 1.0).abs() < 0.15, "{var} vs {limit}");
}

#[test]
fn wq_in_one_dimension_is_rdream_with_identity_projection() {
    let d = scale_columns(&clean_linear(80, 8, 3)).unwrap();
    let x1 = d.x().columns(0, 1).into_owned();
    let d1 = validate_dataset(d.y().clone(), x1).unwrap();
    let h = 0.45;
    let wq = rdream_test(
        &d1,
        &LinkSpec::linear(),
        TestMethod::Wq,
        &fixed(DMatrix::identity(1, 1), h),
    )
    .unwrap();
    let rd = rdream_test(
        &d1,
        &LinkSpec::linear(),
        TestMethod::Opg,
        &fixed(DMatrix::identity(1, 1), h),
    )
    .unwrap();
    assert!((wq.v_n - rd.v_n).abs() < 1e-12);
    assert!((wq.s_n_adj.unwrap() - rd.s_n_adj.unwrap()).abs() < 1e-12);
    assert!((wq.p_value.unwrap() - rd.p_value.unwrap()).abs() < 1e-12);
}

#[test]
fn rank_channel_ignores_monotone_residual_maps_but_gwz_does_not() {
    let d = clean_linear(120, 8, 5);
    let fit = fit_robust(&d, &LinkSpec::linear(), &HuberConfig::default()).unwrap();
    let b = DMatrix::from_element(8, 1, 1.0 / 8f64.sqrt());
    let h = 0.6;
    let z = d.x() * &b;
    let w = pairwise_weights(&z, h).unwrap();
    let var = var_estimate(&z, h).unwrap();

    let e = fit.residuals.clone();
    let base = vn_statistic(&centered_rank_transform(e.as_slice()).unwrap(), &w);
    let maps: [fn(f64) -> f64; 3] = [|u| 2.0 * u + 3.0, |u| u * u * u, f64::exp];
    for phi in maps {
        let mapped: Vec<f64> = e.iter().map(|&u| phi(u)).collect();
        let v = vn_statistic(&centered_rank_transform(&mapped).unwrap(), &w);
        assert_eq!(v, base);
        assert_eq!(
            sn_statistic(v, var, 120, h),
            sn_statistic(base, var, 120, h)
        );
    }

    let gwz = |res: DVector<f64>| {
        let mut f = fit.clone();
        f.residuals = res;
        gwz_statistic(&d, &f, &b, h).unwrap().s_n_adj.unwrap()
    };
    let t0 = gwz(e.clone());
    let t_cube = gwz(e.map(|u| u * u * u));
    let t_exp = gwz(e.map(f64::exp));
    assert!((t0 - t_cube).abs() > 1e-3 && (t0 - t_exp).abs() > 1e-3);
}

#[test]
fn statistic_is_invariant_to_observation_order() {
    let d = clean_linear(90, 8, 9);
    let b = DMatrix::from_element(8, 1, 1.0 / 8f64.sqrt());
    let opts = fixed(b, 0.55);
    let perm: Vec<usize> = (0..90).map(|i| (i * 37 + 11) % 90).collect();
    let r1 = rdream_test(&d, &LinkSpec::linear(), TestMethod::Dee, &opts).unwrap();
    let r2 = rdream_test(
        &d.permuted(&perm),
        &LinkSpec::linear(),
        TestMethod::Dee,
        &opts,
    )
    .unwrap();
    assert!((r1.v_n - r2.v_n).abs() < 1e-10);
    assert!((r1.s_n.unwrap() - r2.s_n.unwrap()).abs() < 1e-10);
    assert!((r1.p_value.unwrap() - r2.p_value.unwrap()).abs() < 1e-10);
}

#[test]
fn p_values_lie_in_unit_interval() {
    for seed in 0..6 {
        let spec = ScenarioSpec::new(Family::H21, 0.6, 100).with_p(4);
        let (d, _) = generate_scenario(&spec, seed).unwrap();
        for m in TestMethod::ALL {
            let r = rdream_test(&d, &LinkSpec::linear(), m, &TestOptions::default()).unwrap();
            if r.var_hat.is_some() {
                let p = r.p_value.unwrap();
                assert!((0.0..=1.0).contains(&p), "{m}: {p}");
            }
        }
    }
}

#[test]
fn sensitivity_identity_and_constant_grid() {
    let d = clean_linear(60, 8, 2);
    let opts = TestOptions::default();
    let link = LinkSpec::linear();
    let base = rdream_test(&d, &link, TestMethod::Opg, &opts)
        .unwrap()
        .s_n_adj
        .unwrap();
    let y0 = d.y()[4];
    let curve =
        sensitivity_curve(&d, &link, TestMethod::Opg, 4, &[y0, 7.0, 7.0, 7.0], &opts).unwrap();
    assert_eq!(curve[0], base);
    assert_eq!(curve[1], curve[2]);
    assert_eq!(curve[2], curve[3]);
    assert!(sensitivity_curve(&d, &link, TestMethod::Opg, 60, &[0.0], &opts).is_err());
}

#[test]
fn rdream_sensitivity_is_bounded_where_gwz_is_not() {
    let d = clean_linear(100, 8, 21);
    let opts = TestOptions::default();
    let link = LinkSpec::linear();
    let grid: Vec<f64> = (0..21).map(|k| -1e6 + 1e5 * k as f64).collect();
    let range = |v: Vec<f64>| {
        let hi = v.iter().cloned().fold(f64::MIN, f64::max);
        let lo = v.iter().cloned().fold(f64::MAX, f64::min);
        hi - lo
    };
    let rd = range(sensitivity_curve(&d, &link, TestMethod::Opg, 0, &grid, &opts).unwrap());
    let gwz_raw = range(
        sensitivity_reports(&d, &link, TestMethod::Gwz, 0, &grid, &opts)
            .unwrap()
            .into_iter()
            .map(|r| r.v_n)
            .collect(),
    );
    assert!(rd < 1.0, "{rd}");
    assert!(gwz_raw > 10.0 * rd, "rdream {rd}, gwz {gwz_raw}");
}

#[test]
fn statistic_grows_with_n_under_a_fixed_alternative() {
    let median_at = |n: usize| {
        let spec = ScenarioSpec::new(Family::H11, 1.0, n);
        let mut s: Vec<f64> = (0..40)
            .map(|seed| {
                let (d, _) = generate_scenario(&spec, 1000 + seed).unwrap();
                rdream_test(
                    &d,
                    &LinkSpec::linear(),
                    TestMethod::Opg,
                    &TestOptions::default(),
                )
                .unwrap()
                .s_n_adj
                .unwrap()
            })
            .collect();
        s.sort_by(f64::total_cmp);
        (s[19] + s[20]) / 2.0
    };
    assert!(median_at(200) > median_at(100));
}

#[test]
fn study_three_outliers_replace_responses() {
    let spec = ScenarioSpec::new(Family::H31, 0.0, 200)
        .with_contamination(ContaminationSpec::replace(OutlierModel::Exponential, 0.1));
    let clean =
        ScenarioSpec::new(Family::H31, 0.0, 200).with_contamination(ContaminationSpec::none());
    let (dirty, _) = generate_scenario(&spec, 4).unwrap();
    let (plain, _) = generate_scenario(&clean, 4).unwrap();
    assert_eq!(dirty.x(), plain.x());
    let changed = (0..200).filter(|&i| dirty.y()[i] != plain.y()[i]).count();
    assert_eq!(changed, 20);
}
