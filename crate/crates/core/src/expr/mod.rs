//! Differentiable scalar expression trees over a named variable layout.
//!
//! Expressions are immutable after construction. Constant subtrees are folded
//! by the smart constructors, so [`Expr::degree`] is purely syntactic but stable.
//! Only smooth primitives exist (no `abs`/`max`), which keeps every gradient a
//! classical one.

mod ad;
mod parse;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use ad::{Dual, Jet2, Scalar};
pub use parse::parse_expression;

use crate::error::ExprError;

/// A named block of consecutive variables, e.g. the state block `x` of dimension 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub dim: usize,
    pub offset: usize,
}

/// Ordered variable blocks. Variable `k` of block `b` has flat index `b.offset + k`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    pub fn new<S: AsRef<str>>(blocks: &[(S, usize)]) -> Self {
        let mut layout = Layout::default();
        for (name, dim) in blocks {
            layout.push(name.as_ref(), *dim);
        }
        layout
    }

    pub fn push(&mut self, name: &str, dim: usize) {
        let offset = self.len();
        self.blocks.push(Block {
            name: name.to_string(),
            dim,
            offset,
        });
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Flat index range of a block, empty if absent.
    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        self.block(name)
            .map_or(0..0, |b| b.offset..b.offset + b.dim)
    }

    /// Display name of flat variable `idx`: `x` for scalar blocks, `x[2]` otherwise.
    pub fn var_name(&self, idx: usize) -> String {
        for b in &self.blocks {
            if idx >= b.offset && idx < b.offset + b.dim {
                return if b.dim == 1 {
                    b.name.clone()
                } else {
                    format!("{}[{}]", b.name, idx - b.offset + 1)
                };
            }
        }
        format!("?{idx}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Power with a constant non-negative integer exponent.
    Powi(Box<Expr>, u32),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(idx: usize) -> Expr {
        Expr::Var(idx)
    }

    pub fn unary(op: UnaryOp, arg: Expr) -> Expr {
        if let Expr::Const(c) = arg {
            let v = match op {
                UnaryOp::Neg => Some(-c),
                UnaryOp::Sin => Some(c.sin()),
                UnaryOp::Cos => Some(c.cos()),
                UnaryOp::Exp => Some(c.exp()),
                UnaryOp::Log if c > 0.0 => Some(c.ln()),
                UnaryOp::Sqrt if c >= 0.0 => Some(c.sqrt()),
                _ => None,
            };
            if let Some(v) = v.filter(|v| v.is_finite()) {
                return Expr::Const(v);
            }
        }
        Expr::Unary(op, Box::new(arg))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        if let (Expr::Const(a), Expr::Const(b)) = (&lhs, &rhs) {
            let v = match op {
                BinaryOp::Add => Some(a + b),
                BinaryOp::Sub => Some(a - b),
                BinaryOp::Mul => Some(a * b),
                BinaryOp::Div if *b != 0.0 => Some(a / b),
                BinaryOp::Div => None,
            };
            if let Some(v) = v.filter(|v| v.is_finite()) {
                return Expr::Const(v);
            }
        }
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn powi(base: Expr, exp: u32) -> Expr {
        match (base, exp) {
            (_, 0) => Expr::Const(1.0),
            (b, 1) => b,
            (Expr::Const(c), k) => Expr::Const(c.powi(k as i32)),
            (b, k) => Expr::Powi(Box::new(b), k),
        }
    }

    /// Highest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) | Expr::Powi(a, _) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    /// Same tree with every variable index `i` replaced by `f(i)`.
    pub fn remap(&self, f: &dyn Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(f(*i)),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.remap(f))),
            Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.remap(f)), Box::new(b.remap(f))),
            Expr::Powi(a, k) => Expr::Powi(Box::new(a.remap(f)), *k),
        }
    }

    /// Syntactic polynomial degree; `None` for non-polynomial subtrees.
    pub fn degree(&self) -> Option<u32> {
        match self {
            Expr::Const(_) => Some(0),
            Expr::Var(_) => Some(1),
            Expr::Unary(UnaryOp::Neg, a) => a.degree(),
            Expr::Unary(_, a) => match a.degree() {
                Some(0) => Some(0),
                _ => None,
            },
            Expr::Binary(BinaryOp::Add | BinaryOp::Sub, a, b) => {
                Some(a.degree()?.max(b.degree()?))
            }
            Expr::Binary(BinaryOp::Mul, a, b) => Some(a.degree()? + b.degree()?),
            Expr::Binary(BinaryOp::Div, a, b) => match b.degree()? {
                0 => a.degree(),
                _ => None,
            },
            Expr::Powi(a, k) => a.degree()?.checked_mul(*k),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.degree(), Some(d) if d <= 1)
    }

    /// Evaluate over any [`Scalar`] type.
    pub fn eval<T: Scalar>(&self, point: &[T]) -> Result<T, String> {
        match self {
            Expr::Const(c) => Ok(T::from_f64(*c)),
            Expr::Var(i) => Ok(point[*i]),
            Expr::Unary(op, a) => {
                let a = a.eval(point)?;
                match op {
                    UnaryOp::Neg => Ok(-a),
                    UnaryOp::Sin => Ok(a.sin()),
                    UnaryOp::Cos => Ok(a.cos()),
                    UnaryOp::Exp => Ok(a.exp()),
                    UnaryOp::Log => {
                        if a.value() <= 0.0 {
                            Err(format!("log of non-positive value {}", a.value()))
                        } else {
                            Ok(a.ln())
                        }
                    }
                    UnaryOp::Sqrt => {
                        if a.value() < 0.0 || (a.value() == 0.0 && a.has_tangent()) {
                            Err(format!("sqrt outside its smooth domain at {}", a.value()))
                        } else {
                            Ok(a.sqrt())
                        }
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let a = a.eval(point)?;
                let b = b.eval(point)?;
                match op {
                    BinaryOp::Add => Ok(a + b),
                    BinaryOp::Sub => Ok(a - b),
                    BinaryOp::Mul => Ok(a * b),
                    BinaryOp::Div => {
                        if b.value() == 0.0 {
                            Err("division by zero".to_string())
                        } else {
                            Ok(a / b)
                        }
                    }
                }
            }
            Expr::Powi(a, k) => Ok(a.eval(point)?.powi(*k)),
        }
    }

    pub fn display<'a>(&'a self, layout: &'a Layout) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, layout }
    }
}

/// Fully parenthesised infix printer; its output re-parses to the same tree.
pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    layout: &'a Layout,
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let layout = self.layout;
        match self.expr {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => write!(f, "{}", layout.var_name(*i)),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{})", a.display(layout)),
            Expr::Unary(op, a) => write!(f, "{}({})", op.name(), a.display(layout)),
            Expr::Binary(op, a, b) => write!(
                f,
                "({} {} {})",
                a.display(layout),
                op.symbol(),
                b.display(layout)
            ),
            Expr::Powi(a, k) => write!(f, "({}^{k})", a.display(layout)),
        }
    }
}

/// An ordered list of scalar expressions sharing one variable layout.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFunction {
    components: Vec<Expr>,
    layout: Layout,
}

impl VectorFunction {
    pub fn new(components: Vec<Expr>, layout: Layout) -> Result<Self, ExprError> {
        let n = layout.len();
        for (i, c) in components.iter().enumerate() {
            if let Some(v) = c.max_var() {
                if v >= n {
                    return Err(ExprError::UnknownVariable {
                        name: format!("#{v} in component {i}"),
                        pos: 0,
                    });
                }
            }
        }
        Ok(VectorFunction { components, layout })
    }

    pub fn parse<S: AsRef<str>>(texts: &[S], layout: &Layout) -> Result<Self, ExprError> {
        let components = texts
            .iter()
            .map(|t| parse_expression(t.as_ref(), layout))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(VectorFunction {
            components,
            layout: layout.clone(),
        })
    }

    pub fn identity(layout: &Layout) -> Self {
        VectorFunction {
            components: (0..layout.len()).map(Expr::Var).collect(),
            layout: layout.clone(),
        }
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layout.len()
    }

    /// Printable component strings.
    pub fn to_strings(&self) -> Vec<String> {
        self.components
            .iter()
            .map(|c| c.display(&self.layout).to_string())
            .collect()
    }

    fn check_point(&self, point: &[f64]) -> Result<(), ExprError> {
        if point.len() != self.input_dim() {
            return Err(ExprError::DimensionMismatch {
                expected: self.input_dim(),
                found: point.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, point: &[f64]) -> Result<DVector<f64>, ExprError> {
        self.check_point(point)?;
        let mut out = DVector::zeros(self.output_dim());
        for (i, c) in self.components.iter().enumerate() {
            out[i] = c
                .eval(point)
                .map_err(|message| ExprError::Domain { component: i, message })?;
        }
        Ok(out)
    }

    /// Forward-mode Jacobian, one tangent pass per input variable.
    pub fn jacobian(&self, point: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        self.check_point(point)?;
        let n = self.input_dim();
        let mut jac = DMatrix::zeros(self.output_dim(), n);
        let mut seeded: Vec<Dual> = point.iter().map(|&v| Dual::constant(v)).collect();
        for j in 0..n {
            seeded[j].d = 1.0;
            for (i, c) in self.components.iter().enumerate() {
                let r = c
                    .eval(&seeded)
                    .map_err(|message| ExprError::Domain { component: i, message })?;
                jac[(i, j)] = r.d;
            }
            seeded[j].d = 0.0;
        }
        Ok(jac)
    }

    /// Per-component second directional derivatives `q_i = dᵀ∇²f_i(point) d`.
    pub fn hessian_quadratic_form(
        &self,
        point: &[f64],
        d: &[f64],
    ) -> Result<DVector<f64>, ExprError> {
        self.check_point(point)?;
        self.check_point(d)?;
        let seeded: Vec<Jet2> = point
            .iter()
            .zip(d)
            .map(|(&v, &dv)| Jet2::new(v, dv, 0.0))
            .collect();
        let mut q = DVector::zeros(self.output_dim());
        for (i, c) in self.components.iter().enumerate() {
            q[i] = c
                .eval(&seeded)
                .map_err(|message| ExprError::Domain { component: i, message })?
                .d2;
        }
        Ok(q)
    }

    /// Full Hessian of component `i`, by polarisation of directional second derivatives.
    pub fn hessian(&self, i: usize, point: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        self.check_point(point)?;
        let n = self.input_dim();
        let expr = &self.components[i];
        let second = |a: usize, b: Option<usize>| -> Result<f64, ExprError> {
            let seeded: Vec<Jet2> = (0..n)
                .map(|k| {
                    let dk = if k == a || Some(k) == b { 1.0 } else { 0.0 };
                    Jet2::new(point[k], dk, 0.0)
                })
                .collect();
            expr.eval(&seeded)
                .map(|r| r.d2)
                .map_err(|message| ExprError::Domain { component: i, message })
        };
        let mut h = DMatrix::zeros(n, n);
        let mut diag = vec![0.0; n];
        for (a, slot) in diag.iter_mut().enumerate() {
            *slot = second(a, None)?;
            h[(a, a)] = *slot;
        }
        for a in 0..n {
            for b in a + 1..n {
                let v = 0.5 * (second(a, Some(b))? - diag[a] - diag[b]);
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        Ok(h)
    }

    pub fn is_affine(&self) -> Vec<bool> {
        self.components.iter().map(Expr::is_affine).collect()
    }

    /// Same components over a layout with identical total length (renamed blocks).
    pub fn with_layout(&self, layout: Layout) -> Result<Self, ExprError> {
        VectorFunction::new(self.components.clone(), layout)
    }

    /// Sub-function made of the selected components.
    pub fn select(&self, rows: &[usize]) -> Self {
        VectorFunction {
            components: rows.iter().map(|&r| self.components[r].clone()).collect(),
            layout: self.layout.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xyu() -> Layout {
        Layout::new(&[("x", 1), ("y", 1), ("u", 1)])
    }

    #[test]
    fn square_of_difference_evaluates() {
        let f = VectorFunction::parse(&["(u - y)^2"], &xyu()).unwrap();
        assert_eq!(f.eval(&[0.0, 1.0, 3.0]).unwrap()[0], 4.0);
        assert_eq!(f.eval(&[0.0, 0.0, 0.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn algebraic_part_values() {
        let h = VectorFunction::parse(&["u - y"], &xyu()).unwrap();
        assert_eq!(h.eval(&[0.0, 0.5, 0.5]).unwrap()[0], 0.0);
        let h2 = VectorFunction::parse(&["y - u"], &xyu()).unwrap();
        assert_eq!(h2.eval(&[0.0, 2.0, 1.0]).unwrap()[0], 1.0);
    }

    #[test]
    fn identity_map() {
        let l = Layout::new(&[("x", 3)]);
        let f = VectorFunction::identity(&l);
        let p = [0.3, -1.0, 7.5];
        assert_eq!(f.eval(&p).unwrap().as_slice(), &p);
    }

    #[test]
    fn jacobian_of_affine_and_square() {
        let h = VectorFunction::parse(&["u - y"], &xyu()).unwrap();
        let j = h.jacobian(&[0.4, -2.0, 9.0]).unwrap();
        assert_eq!(j.row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, -1.0, 1.0]);
        let phi = VectorFunction::parse(&["(u - y)^2"], &xyu()).unwrap();
        let j = phi.jacobian(&[0.0, 0.0, 0.0]).unwrap();
        assert!(j.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_form_basics() {
        let l = Layout::new(&[("y", 1)]);
        let f = VectorFunction::parse(&["y^2"], &l).unwrap();
        assert_eq!(f.hessian_quadratic_form(&[0.0], &[1.0]).unwrap()[0], 2.0);
        let g = VectorFunction::parse(&["3*y - 7", "-y"], &l).unwrap();
        let q = g.hessian_quadratic_form(&[1.3], &[-4.0]).unwrap();
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affinity_detection() {
        let l = Layout::new(&[("x", 2), ("y", 1), ("u", 1)]);
        let f = VectorFunction::parse(&["u - y", "(u - y)^2", "3*x1 + 2", "x[2] / 4", "sin(0) * y"], &l)
            .unwrap();
        assert_eq!(f.is_affine(), vec![true, false, true, true, true]);
        let g = VectorFunction::parse(&["y / x1", "exp(y)", "(2 + 1)^3 * u"], &l).unwrap();
        assert_eq!(g.is_affine(), vec![false, false, true]);
    }

    #[test]
    fn domain_errors_carry_component() {
        let l = Layout::new(&[("x", 1)]);
        let f = VectorFunction::parse(&["x", "log(x)", "1 / x"], &l).unwrap();
        match f.eval(&[0.0]) {
            Err(ExprError::Domain { component, .. }) => assert_eq!(component, 1),
            other => panic!("unexpected {other:?}"),
        }
        let g = VectorFunction::parse(&["1 / x"], &l).unwrap();
        assert!(matches!(g.eval(&[0.0]), Err(ExprError::Domain { component: 0, .. })));
        assert!(matches!(g.jacobian(&[0.0]), Err(ExprError::Domain { .. })));
    }

    #[test]
    fn full_hessian_matches_hand_values() {
        let l = Layout::new(&[("x", 2)]);
        let f = VectorFunction::parse(&["x1^2 * x2 + sin(x2)"], &l).unwrap();
        let h = f.hessian(0, &[1.5, 0.3]).unwrap();
        assert!((h[(0, 0)] - 2.0 * 0.3).abs() < 1e-12);
        assert!((h[(0, 1)] - 2.0 * 1.5).abs() < 1e-12);
        assert!((h[(1, 1)] + 0.3f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_bitwise_deterministic() {
        let l = Layout::new(&[("x", 2)]);
        let f = VectorFunction::parse(&["exp(x1) * cos(x2) / (1 + x1^2)"], &l).unwrap();
        let a = f.jacobian(&[0.123, 4.56]).unwrap();
        let b = f.jacobian(&[0.123, 4.56]).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
