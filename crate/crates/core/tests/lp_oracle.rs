//! The simplex against brute-force vertex enumeration on random 2-D boxes.

use nocert::linalg::{Matrix, Vector};
use nocert::lp::{lp_solve, LpProblem, LpStatus};
use proptest::prelude::*;

const BOX: f64 = 5.0;

/// Every intersection of two constraint lines that satisfies all constraints.
fn vertices(rows: &[[f64; 3]]) -> Vec<[f64; 2]> {
    let feasible = |x: [f64; 2]| rows.iter().all(|r| r[0] * x[0] + r[1] * x[1] <= r[2] + 1e-9);
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a, b) = (rows[i], rows[j]);
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() < 1e-12 {
                continue;
            }
            let x = [(a[2] * b[1] - a[1] * b[2]) / det, (a[0] * b[2] - a[2] * b[0]) / det];
            if feasible(x) {
                out.push(x);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn simplex_matches_vertex_enumeration(
        c in proptest::array::uniform2(-3i32..=3),
        cuts in proptest::collection::vec(proptest::array::uniform3(-4i32..=4), 0..5),
    ) {
        let c = [c[0] as f64, c[1] as f64];
        let cuts: Vec<[f64; 3]> = cuts.iter().map(|r| [r[0] as f64, r[1] as f64, r[2] as f64]).collect();
        let mut rows = cuts.clone();
        rows.extend([[1.0, 0.0, BOX], [-1.0, 0.0, BOX], [0.0, 1.0, BOX], [0.0, -1.0, BOX]]);
        let verts = vertices(&rows);

        let a = Matrix::from_fn(cuts.len(), 2, |i, j| cuts[i][j]);
        let b = Vector::from_iterator(cuts.len(), cuts.iter().map(|r| r[2]));
        let lp = LpProblem::new(Vector::from_vec(c.to_vec()))
            .with_inequalities(a, b)
            .with_bounds(vec![-BOX; 2], vec![BOX; 2]);
        let res = lp_solve(&lp).unwrap();

        if verts.is_empty() {
            prop_assert_eq!(res.status, LpStatus::Infeasible);
        } else {
            prop_assert_eq!(res.status, LpStatus::Optimal);
            let best = verts.iter().map(|x| c[0] * x[0] + c[1] * x[1]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!((res.objective - best).abs() < 1e-8, "simplex {} vs vertices {}", res.objective, best);
            prop_assert!(lp.max_violation(&res.x) < 1e-9);
        }
    }
}
