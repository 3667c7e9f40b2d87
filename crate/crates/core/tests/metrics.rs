use csanet_core::metrics::{accuracy, kappa, std_across, ConfusionMatrix};
use csanet_core::Error;
use proptest::prelude::*;

fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn closed_forms() {
    assert_eq!(accuracy(&cm(&[&[45, 5], &[10, 40]])).unwrap(), 0.85);
    assert_eq!(accuracy(&cm(&[&[9, 0, 0], &[0, 4, 0], &[0, 0, 1]])).unwrap(), 1.0);
    assert!((kappa(&cm(&[&[40, 10], &[20, 30]])).unwrap() - 0.4).abs() <= f64::EPSILON);
    assert_eq!(kappa(&cm(&[&[50, 0], &[0, 50]])).unwrap(), 1.0);
    assert_eq!(kappa(&cm(&[&[25, 25], &[25, 25]])).unwrap(), 0.0);
    assert!((std_across(&[0.7, 0.9]).unwrap() - 0.1).abs() <= 2.0 * f64::EPSILON);
    assert_eq!(std_across(&[0.3]).unwrap(), 0.0);
}

#[test]
fn degenerate_inputs() {
    assert!(matches!(accuracy(&ConfusionMatrix::new(2)), Err(Error::Data(_))));
    assert!(matches!(std_across(&[]), Err(Error::Data(_))));
    assert!(matches!(kappa(&ConfusionMatrix::new(2)), Err(Error::Data(_))));
    assert!(ConfusionMatrix::from_rows(&[vec![1, 2], vec![3]]).is_err());
}

fn matrix() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..5).prop_flat_map(|l| prop::collection::vec(prop::collection::vec(0u64..40, l), l))
}

proptest! {
    #[test]
    fn accuracy_is_trace_over_total(rows in matrix()) {
        let m = ConfusionMatrix::from_rows(&rows).unwrap();
        prop_assume!(m.total() > 0);
        prop_assert_eq!(accuracy(&m).unwrap(), m.trace() as f64 / m.total() as f64);
    }

    #[test]
    fn relabelling_classes_changes_nothing(rows in matrix(), rot in 1usize..4) {
        let l = rows.len();
        let perm: Vec<usize> = (0..l).map(|i| (i + rot) % l).collect();
        let permuted: Vec<Vec<u64>> = (0..l).map(|i| (0..l).map(|j| rows[perm[i]][perm[j]]).collect()).collect();
        let a = ConfusionMatrix::from_rows(&rows).unwrap();
        let b = ConfusionMatrix::from_rows(&permuted).unwrap();
        prop_assume!(a.total() > 0);
        prop_assert_eq!(accuracy(&a).unwrap(), accuracy(&b).unwrap());
        match (kappa(&a), kappa(&b)) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn kappa_is_transpose_symmetric(rows in matrix()) {
        let a = ConfusionMatrix::from_rows(&rows).unwrap();
        prop_assume!(a.total() > 0);
        match (kappa(&a), kappa(&a.transpose())) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn kappa_is_one_exactly_for_diagonal_matrices(diag in prop::collection::vec(1u64..30, 2..5), off in 0u64..3) {
        let l = diag.len();
        let mut rows: Vec<Vec<u64>> = (0..l).map(|i| (0..l).map(|j| if i == j { diag[i] } else { 0 }).collect()).collect();
        rows[0][1] += off;
        let k = kappa(&ConfusionMatrix::from_rows(&rows).unwrap()).unwrap();
        prop_assert_eq!(k == 1.0, off == 0);
    }
}
