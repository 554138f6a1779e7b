use proptest::prelude::*;

use gist_core::classifier::topk_indices;
use gist_core::eval::{format_cell, topk_accuracy};
use gist_core::linalg::Matrix;
use gist_core::trainer::contrastive_loss;

fn unit_rows(rows: Vec<Vec<f64>>) -> Option<Matrix> {
    let mut out = Vec::new();
    for r in rows {
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-3 {
            return None;
        }
        out.push(r.iter().map(|x| x / n).collect());
    }
    Some(Matrix::from_rows(&out))
}

proptest! {
    #[test]
    fn topk_is_a_stable_descending_sort(scores in prop::collection::vec(-3i32..3, 1..20), k in 1usize..25) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let got = topk_indices(&scores, k);
        let mut want: Vec<usize> = (0..scores.len()).collect();
        want.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        want.truncate(k);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn topk_accuracy_grows_with_k(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 5), 1..30),
        seed in 0usize..5,
    ) {
        let labels: Vec<usize> = (0..rows.len()).map(|i| (i + seed) % 5).collect();
        let mut last = 0.0;
        for k in 1..=5 {
            let a = topk_accuracy(&rows, &labels, k).unwrap();
            prop_assert!(a >= last);
            last = a;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn loss_is_non_negative_and_symmetric(
        im in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..6),
        scale in 0.1f64..30.0,
    ) {
        let b = im.len();
        let tx: Vec<Vec<f64>> = im.iter().rev().cloned().collect();
        if let (Some(im), Some(tx)) = (unit_rows(im), unit_rows(tx)) {
            prop_assume!(im.rows == b);
            let l = contrastive_loss(&im, &tx, scale).unwrap();
            let swapped = contrastive_loss(&tx, &im, scale).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert!((l - swapped).abs() < 1e-9);
        }
    }

    #[test]
    fn cells_have_two_decimals(mean in 0.0f64..100.0, std in 0.0f64..20.0) {
        let cell = format_cell(mean, std);
        let (m, rest) = cell.split_once(" (").unwrap();
        let s = rest.strip_suffix(')').unwrap();
        for part in [m, s] {
            prop_assert_eq!(part.split_once('.').unwrap().1.len(), 2);
        }
        prop_assert!((m.parse::<f64>().unwrap() - mean).abs() <= 0.005 + 1e-9);
    }
}
