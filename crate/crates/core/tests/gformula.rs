use nof1_core::estimands::{evaluate, Estimand};
use nof1_core::gformula::{mc_contrast, mc_estimand, McConfig, NoiseMode};
use nof1_core::series::{DagConfig, Role};
use nof1_core::ssm::{fit_mle, FitOptions, SsmSpec};
use nof1_core::estimands::{CoefficientFrame, SystemLayout};
use nof1_core::synthgen::{generate, TruthSpec};

fn fitted() -> (CoefficientFrame, nof1_core::series::Series) {
    let syn = generate(&TruthSpec::demo(3)).unwrap();
    let dag = DagConfig::standard(1, 1);
    let layout = SystemLayout::from_dag(&dag, syn.series.schema()).unwrap();
    let fits: Vec<_> = [Role::Outcome, Role::Covariate(0)]
        .iter()
        .map(|&r| fit_mle(&SsmSpec::from_dag(&dag, r, syn.series.schema()).unwrap(), &syn.series, &FitOptions::default()).unwrap())
        .collect();
    (CoefficientFrame::from_fits(layout, &fits[0], &fits[1..]).unwrap(), syn.series)
}

#[test]
fn mean_path_without_sampling_equals_closed_form() {
    let (frame, series) = fitted();
    let cfg = McConfig { draws: 3, noise: NoiseMode::MeanPath, sample_coefficients: false, ..Default::default() };
    for est in [Estimand::Ce, Estimand::Le { q: 2 }, Estimand::Te { q: 3 }, Estimand::Ge { strategy: vec![1, 0, 1] }, Estimand::CumDe] {
        let closed = evaluate(&frame, &est, 0, 400).unwrap().value;
        let mc = mc_estimand(&frame, &series, 0, &est, 400, &cfg).unwrap();
        assert!((mc.estimate - closed).abs() < 1e-12, "{}: {} vs {closed}", est.label(), mc.estimate);
    }
}

#[test]
fn standard_error_halves_with_four_times_the_draws() {
    let (frame, series) = fitted();
    let run = |draws| {
        let cfg = McConfig { draws, copies: 50, seed: 9, ..Default::default() };
        mc_estimand(&frame, &series, 0, &Estimand::Le { q: 1 }, 300, &cfg).unwrap().mc_se
    };
    let ratio = run(400) / run(1600);
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn results_depend_only_on_the_seed() {
    let (frame, series) = fitted();
    let cfg = McConfig { draws: 50, copies: 20, seed: 4, ..Default::default() };
    let a = mc_contrast(&frame, &series, 0, 200, &[1, 1, 0], &[0, 0, 0], &cfg).unwrap();
    let b = mc_contrast(&frame, &series, 0, 200, &[1, 1, 0], &[0, 0, 0], &cfg).unwrap();
    assert_eq!(a, b);
    let c = mc_contrast(&frame, &series, 0, 200, &[1, 1, 0], &[0, 0, 0], &McConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a.estimate, c.estimate);
}

#[test]
fn mismatched_strategies_are_rejected() {
    let (frame, series) = fitted();
    assert!(mc_contrast(&frame, &series, 0, 200, &[1, 1], &[0], &McConfig::default()).is_err());
}
