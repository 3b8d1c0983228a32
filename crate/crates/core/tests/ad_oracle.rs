//! Forward-mode derivatives against central finite differences.

use nocert::expr::{Layout, VectorFunction};

const COMPONENTS: [&str; 6] = [
    "sin(x1) * exp(x2) - x3^3",
    "log(1 + x1^2) / (2 + cos(x3))",
    "sqrt(4 + x2^2) * x1 - x2 * x3",
    "exp(-x1^2 - x2^2) + sin(x3)^2",
    "(x1 - x2)^4 / (1 + x3^2)",
    "x1 * x2 * x3",
];

fn points() -> Vec<[f64; 3]> {
    vec![[0.3, -0.7, 1.1], [-1.2, 0.4, 0.0], [2.0, 1.5, -0.6], [0.0, 0.0, 0.0]]
}

fn f() -> VectorFunction {
    VectorFunction::parse(&COMPONENTS, &Layout::new(&[("x", 3)])).unwrap()
}

#[test]
fn jacobian_matches_central_differences() {
    let f = f();
    let h = 1e-6;
    for p in points() {
        let jac = f.jacobian(&p).unwrap();
        for j in 0..3 {
            let (mut lo, mut hi) = (p, p);
            lo[j] -= h;
            hi[j] += h;
            let fd = (f.eval(&hi).unwrap() - f.eval(&lo).unwrap()) / (2.0 * h);
            for i in 0..COMPONENTS.len() {
                let scale = 1.0 + jac[(i, j)].abs();
                assert!((jac[(i, j)] - fd[i]).abs() / scale < 1e-7, "{} at {p:?}, d/dx{}", COMPONENTS[i], j + 1);
            }
        }
    }
}

#[test]
fn hessian_form_matches_second_differences() {
    let f = f();
    let h = 1e-4;
    let d = [0.6, -0.3, 0.8];
    for p in points() {
        let q = f.hessian_quadratic_form(&p, &d).unwrap();
        let at = |s: f64| f.eval(&[p[0] + s * d[0], p[1] + s * d[1], p[2] + s * d[2]]).unwrap();
        let fd = (at(h) - at(0.0) * 2.0 + at(-h)) / (h * h);
        for i in 0..COMPONENTS.len() {
            let scale = 1.0 + q[i].abs();
            assert!((q[i] - fd[i]).abs() / scale < 1e-5, "{} at {p:?}: {} vs {}", COMPONENTS[i], q[i], fd[i]);
        }
    }
}

#[test]
fn full_hessian_agrees_with_quadratic_form() {
    let f = f();
    let d = nocert::linalg::Vector::from_vec(vec![0.6, -0.3, 0.8]);
    for p in points() {
        let q = f.hessian_quadratic_form(&p, d.as_slice()).unwrap();
        for i in 0..COMPONENTS.len() {
            let hess = f.hessian(i, &p).unwrap();
            let via = (d.transpose() * &hess * &d)[0];
            assert!((via - q[i]).abs() < 1e-10 * (1.0 + q[i].abs()));
            assert!((&hess - hess.transpose()).amax() < 1e-12);
        }
    }
}
