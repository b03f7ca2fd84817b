use nof1_core::series::{DagConfig, Role};
use nof1_core::ssm::{fit_mle, FitOptions, Regime, SsmSpec};
use nof1_core::synthgen::{generate, TruthSpec};

#[test]
fn missing_outcomes_become_prediction_steps() {
    let syn = generate(&TruthSpec::demo(12)).unwrap();
    let missing: Vec<usize> = (50..=550).step_by(25).collect();
    let series = syn.series.with_missing_outcomes(&missing);
    let spec = SsmSpec::from_dag(&DagConfig::standard(1, 1), Role::Outcome, series.schema()).unwrap();
    let full = fit_mle(&spec, &syn.series, &FitOptions::default()).unwrap();
    let gappy = fit_mle(&spec, &series, &FitOptions::default()).unwrap();
    for t in &missing {
        assert!(gappy.prediction_only.contains(t), "t={t}");
    }
    assert!(gappy.n_used < full.n_used);
    let (a, se) = full.estimate("beta1", 600).unwrap();
    let (b, _) = gappy.estimate("beta1", 600).unwrap();
    assert!((a - b).abs() < se, "{a} vs {b}");
}

#[test]
fn random_walk_intercept_tracks_a_drifting_level() {
    let mut truth = TruthSpec::demo(13);
    truth.outcome_coefficients.insert(
        "beta0".into(),
        nof1_core::synthgen::Trajectory::Piecewise { values: vec![0.0, 2.0], change_points: vec![300] },
    );
    let syn = generate(&truth).unwrap();
    let spec = SsmSpec::from_dag(&DagConfig::standard(1, 1), Role::Outcome, syn.series.schema())
        .unwrap()
        .with_regime("beta0", Regime::RandomWalk)
        .unwrap();
    let fit = fit_mle(&spec, &syn.series, &FitOptions::default()).unwrap();
    let early = fit.estimate("beta0", 150).unwrap().0;
    let late = fit.estimate("beta0", 500).unwrap().0;
    assert!(late - early > 1.0, "{early} -> {late}");
    assert!(fit.hyper.state_variances.iter().any(|&w| w > 0.0));
}
