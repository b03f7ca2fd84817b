use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use nof1_core::diagnostics::positivity_report;
use nof1_core::estimands::{evaluate, CoefficientFrame, Estimand, SystemLayout};
use nof1_core::series::{Schema, Series};
use nof1_core::ssm::kalman::{filter_loglik, StateSpaceModel};

fn cell() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![1 => Just(None), 6 => (-1e6f64..1e6).prop_map(Some)]
}

fn binary() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![1 => Just(None), 8 => any::<bool>().prop_map(|b| Some(b as u8 as f64))]
}

fn series() -> impl Strategy<Value = Series> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(binary(), n),
            prop::collection::vec(cell(), n),
            prop::collection::vec(cell(), n),
            prop::option::of(prop::collection::vec(cell(), 1)),
        )
            .prop_map(|(a, y, c, base)| {
                Series::new(Schema::new(&["A"], "Y", &["C"]), vec![a], y, vec![c], base).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn csv_round_trip(s in series()) {
        let text = s.to_csv_string();
        let back = Series::from_csv_reader(text.as_bytes(), s.schema()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn loglik_invariant_to_column_order(
        rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 5..30),
        ys in prop::collection::vec(prop::option::weighted(0.9, -5.0f64..5.0), 30),
        w in prop::collection::vec(0.0f64..0.5, 3),
        v in 0.1f64..3.0,
        perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
    ) {
        let n = rows.len();
        let model = |order: &[usize]| StateSpaceModel {
            obs_variance: v,
            state_noise: DMatrix::from_diagonal(&DVector::from_iterator(3, order.iter().map(|&i| w[i]))),
            m0: DVector::zeros(3),
            c0: DMatrix::identity(3, 3) * 10.0,
        };
        let design = |order: &[usize]| -> Vec<DVector<f64>> {
            rows.iter().map(|r| DVector::from_iterator(3, order.iter().map(|&i| r[i]))).collect()
        };
        let base = filter_loglik(&model(&[0, 1, 2]), &ys[..n], &design(&[0, 1, 2])).unwrap();
        let permuted = filter_loglik(&model(&perm), &ys[..n], &design(&perm)).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-9 * (1.0 + base.abs()));
    }

    #[test]
    fn positivity_counts_are_consistent(s in series()) {
        let report = positivity_report(&s, 0, 8).unwrap();
        let mut last = f64::INFINITY;
        for p in 1..=8 {
            let d = report.duration(p).unwrap();
            prop_assert!(d.observed <= 1 << p);
            prop_assert!(d.observed <= d.windows);
            prop_assert!(d.percentage <= last);
            last = d.percentage;
        }
    }

    #[test]
    fn total_effect_is_sum_of_lagged_effects(
        coefs in prop::collection::vec(-0.9f64..0.9, 9),
        q in 1usize..6,
    ) {
        let layout = SystemLayout::standard(1, 1);
        let widths: Vec<usize> = layout.columns.iter().map(|c| c.len()).collect();
        let mut it = coefs.iter().cycle();
        let values: Vec<Vec<f64>> = widths.iter().map(|&w| (0..w).map(|_| *it.next().unwrap()).collect()).collect();
        let frame = CoefficientFrame::constant(layout, 1, 30, &values).unwrap();
        let t = 20;
        let te = evaluate(&frame, &Estimand::Te { q }, 0, t).unwrap().value;
        let mut sum = evaluate(&frame, &Estimand::Ce, 0, t).unwrap().value;
        for k in 1..=q {
            sum += evaluate(&frame, &Estimand::Le { q: k }, 0, t).unwrap().value;
        }
        prop_assert!((te - sum).abs() <= 1e-10);
    }
}
