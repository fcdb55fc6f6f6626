use sxnet_core::gradcheck::{run_suite, table_header, SuiteOptions, F32_TOLERANCE, F64_TOLERANCE};

#[test]
fn every_component_passes_in_f64() {
    println!("{}", table_header());
    let results = run_suite::<f64>(&SuiteOptions::default(), |r| println!("{r}")).unwrap();
    for r in &results {
        assert!(
            r.report.max_rel_error < F64_TOLERANCE,
            "{} failed: {:e} at {:?}",
            r.component,
            r.report.max_rel_error,
            r.report.worst
        );
    }
}

#[test]
fn corrupted_gradients_are_detected() {
    let options = SuiteOptions {
        corrupt: vec!["tanh".into(), "model/k3_m4_b1".into()],
        ..Default::default()
    };
    let results = run_suite::<f64>(&options, |_| {}).unwrap();
    for r in &results {
        let corrupted = options.corrupt.contains(&r.component);
        assert_eq!(r.passed(), !corrupted, "{r}");
    }
}

#[test]
fn f32_uses_relaxed_tolerance() {
    let results = run_suite::<f32>(&SuiteOptions::default(), |_| {}).unwrap();
    assert!(results.iter().all(|r| r.tolerance == F32_TOLERANCE));
}
