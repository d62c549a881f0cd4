use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use wsl_fa::fa::{log_likelihood, posterior_moments, FaParams};
use wsl_fa::label_model::{LabelModel, ThresholdKind};
use wsl_fa::labelling::{covariance_matrix, GoldLabels, LabelMatrix};
use wsl_fa::metrics::evaluate;

fn label_matrix_of_width(m: usize, max_n: usize) -> impl Strategy<Value = LabelMatrix> {
    (2..=max_n).prop_flat_map(move |n| {
        proptest::collection::vec(-1i8..=1, n * m).prop_map(move |values| {
            LabelMatrix::from_rows_unnamed(
                &values.chunks(m).map(<[i8]>::to_vec).collect::<Vec<_>>(),
            )
            .unwrap()
        })
    })
}

fn label_matrix(max_n: usize, max_m: usize) -> impl Strategy<Value = LabelMatrix> {
    (1..=max_m).prop_flat_map(move |m| label_matrix_of_width(m, max_n))
}

fn fa_params(m: usize, k: usize) -> impl Strategy<Value = FaParams> {
    (
        proptest::collection::vec(-2.0f64..2.0, m * k),
        proptest::collection::vec(-1.0f64..1.0, m),
        proptest::collection::vec(0.05f64..2.0, m),
    )
        .prop_map(move |(w, c, psi)| {
            FaParams::new(
                DMatrix::from_row_slice(m, k, &w),
                DVector::from_vec(c),
                DVector::from_vec(psi),
                1e-6,
            )
            .unwrap()
        })
}

proptest! {
    #[test]
    fn label_matrix_csv_round_trip(lm in label_matrix(20, 6)) {
        let text = lm.to_csv_string();
        let back = LabelMatrix::from_csv_reader(text.as_bytes()).unwrap();
        prop_assert_eq!(back, lm);
    }

    #[test]
    fn gold_csv_round_trip(values in proptest::collection::vec((0u8..=1, any::<bool>()), 1..30)) {
        let (labels, mask): (Vec<u8>, Vec<bool>) = values.into_iter().unzip();
        let gold = GoldLabels::with_mask(labels, mask).unwrap();
        let back = GoldLabels::from_csv_reader(gold.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(back.labelled().collect::<Vec<_>>(), gold.labelled().collect::<Vec<_>>());
        prop_assert_eq!(back.len(), gold.len());
    }

    #[test]
    fn covariance_is_symmetric_psd(lm in label_matrix(25, 5)) {
        let cov = covariance_matrix(&lm).unwrap();
        prop_assert_eq!(cov.clone(), cov.transpose());
        let min = SymmetricEigen::new(cov).eigenvalues.min();
        prop_assert!(min > -1e-9, "min eigenvalue {}", min);
    }

    #[test]
    fn evaluate_ignores_row_order(
        rows in proptest::collection::vec((0u8..=1, 0u8..=1), 1..40),
        rotate in 0usize..40,
    ) {
        let (pred, gold): (Vec<u8>, Vec<u8>) = rows.iter().copied().unzip();
        let r = rotate % rows.len();
        let mut permuted = rows.clone();
        permuted.rotate_left(r);
        permuted.reverse();
        let (pred2, gold2): (Vec<u8>, Vec<u8>) = permuted.into_iter().unzip();
        prop_assert_eq!(
            evaluate(&pred, &GoldLabels::new(gold).unwrap()).unwrap(),
            evaluate(&pred2, &GoldLabels::new(gold2).unwrap()).unwrap()
        );
    }

    #[test]
    fn stacking_doubles_log_likelihood((params, lm) in (1usize..=4).prop_flat_map(|m| (fa_params(m, 1), label_matrix_of_width(m, 15)))) {
        let once = log_likelihood(&params, &lm).unwrap();
        let twice = log_likelihood(&params, &lm.vstack(&lm).unwrap()).unwrap();
        prop_assert_eq!(twice, 2.0 * once);
    }

    #[test]
    fn sign_flip_negates_posterior_mean((params, lm) in (2usize..=4).prop_flat_map(|m| (fa_params(m, 2), label_matrix_of_width(m, 10)))) {
        let a = posterior_moments(&params, &lm).unwrap();
        let b = posterior_moments(&params.flip_factor(0), &lm).unwrap();
        for i in 0..lm.n() {
            prop_assert!((a.mean[(i, 0)] + b.mean[(i, 0)]).abs() < 1e-12);
            prop_assert!((a.mean[(i, 1)] - b.mean[(i, 1)]).abs() < 1e-12);
        }
        prop_assert_eq!(log_likelihood(&params, &lm).unwrap(), log_likelihood(&params.flip_factor(0), &lm).unwrap());
    }

    #[test]
    fn labels_are_monotone_in_score(
        (params, lm) in (1usize..=4).prop_flat_map(|m| (fa_params(m, 1), label_matrix_of_width(m, 30))),
        mean_kind in any::<bool>(),
    ) {
        let kind = if mean_kind { ThresholdKind::Mean } else { ThresholdKind::Median };
        let model = LabelModel::from_params(params, &lm, kind, None).unwrap();
        let pred = model.predict(&lm).unwrap();
        for i in 0..lm.n() {
            for j in 0..lm.n() {
                if pred.scores[i] <= pred.scores[j] {
                    prop_assert!(pred.labels[i] <= pred.labels[j]);
                }
            }
        }
    }
}
