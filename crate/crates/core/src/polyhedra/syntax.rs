//! Text form of sets:
//!
//! ```text
//! set := 'box' '(' vec ',' vec ')' | 'polyhedron' '(' mat ',' vec [',' mat ',' vec] ')'
//!      | 'union' '(' set (',' set)* ')' | 'product' '(' set (',' set)* ')'
//!      | 'zero' '(' int ')' | 'nonpositive' '(' int ')' | 'free' '(' int ')'
//! vec := number | '[' [number (',' number)*] ']'
//! mat := '[' [vec (',' vec)*] ']'
//! ```
//! Numbers accept `inf` and `-inf`.

use std::fmt;

use super::{PolyUnion, Polyhedron, SetTag};
use crate::error::SetError;
use crate::linalg::{Matrix, Vector};

pub fn parse_set(text: &str) -> Result<PolyUnion, SetError> {
    let mut p = Parser { s: text.as_bytes(), pos: 0 };
    let set = p.set()?;
    p.ws();
    if p.pos != p.s.len() {
        return Err(p.err("trailing input"));
    }
    Ok(set)
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> SetError {
        SetError::Syntax(format!("{msg} at position {}", self.pos))
    }

    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), SetError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn word(&mut self) -> String {
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_') {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<f64, SetError> {
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len()
            && (self.s[self.pos].is_ascii_alphanumeric() || b"+-.".contains(&self.s[self.pos]))
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| SetError::Syntax(format!("malformed number '{text}' at position {start}")))
    }

    fn vector(&mut self) -> Result<Vec<f64>, SetError> {
        if !self.eat(b'[') {
            return Ok(vec![self.number()?]);
        }
        let mut out = Vec::new();
        if self.eat(b']') {
            return Ok(out);
        }
        loop {
            out.push(self.number()?);
            if self.eat(b']') {
                return Ok(out);
            }
            self.expect(b',')?;
        }
    }

    fn matrix(&mut self) -> Result<Vec<Vec<f64>>, SetError> {
        self.expect(b'[')?;
        let mut rows = Vec::new();
        if self.eat(b']') {
            return Ok(rows);
        }
        loop {
            self.ws();
            if self.s.get(self.pos) != Some(&b'[') {
                return Err(self.err("expected a matrix row"));
            }
            rows.push(self.vector()?);
            if self.eat(b']') {
                return Ok(rows);
            }
            self.expect(b',')?;
        }
    }

    fn count(&mut self) -> Result<usize, SetError> {
        let v = self.number()?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(self.err("expected a non-negative integer"));
        }
        Ok(v as usize)
    }

    fn set_list(&mut self) -> Result<Vec<PolyUnion>, SetError> {
        let mut out = vec![self.set()?];
        while self.eat(b',') {
            out.push(self.set()?);
        }
        Ok(out)
    }

    fn set(&mut self) -> Result<PolyUnion, SetError> {
        let name = self.word();
        self.expect(b'(')?;
        let out = match name.as_str() {
            "box" => {
                let lo = self.vector()?;
                self.expect(b',')?;
                let hi = self.vector()?;
                PolyUnion::boxed(&lo, &hi)?
            }
            "zero" => PolyUnion::zero(self.count()?),
            "nonpositive" => PolyUnion::nonpositive(self.count()?),
            "free" => PolyUnion::whole(self.count()?),
            "union" => {
                let parts = self.set_list()?;
                PolyUnion::new(parts.into_iter().flat_map(|u| u.pieces).collect())?
            }
            "product" => {
                let parts = self.set_list()?;
                let mut it = parts.into_iter();
                let first = it.next().expect("set_list yields one set");
                it.fold(first, |acc, s| acc.product(&s))
            }
            "polyhedron" => {
                let a = self.matrix()?;
                self.expect(b',')?;
                let b = self.vector()?;
                let (g, gv) = if self.eat(b',') {
                    let g = self.matrix()?;
                    self.expect(b',')?;
                    (g, self.vector()?)
                } else {
                    (Vec::new(), Vec::new())
                };
                let dim = a.first().or(g.first()).map(Vec::len).ok_or_else(|| {
                    SetError::Syntax("polyhedron without rows; use free(n)".into())
                })?;
                PolyUnion::single(Polyhedron::new(to_matrix(&a, dim)?, Vector::from_vec(b), to_matrix(&g, dim)?, Vector::from_vec(gv))?)
            }
            other => return Err(SetError::Syntax(format!("unknown set constructor '{other}'"))),
        };
        self.expect(b')')?;
        Ok(out)
    }
}

fn to_matrix(rows: &[Vec<f64>], dim: usize) -> Result<Matrix, SetError> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(SetError::Dimension {
            expected: dim,
            found: r.len(),
        });
    }
    Ok(Matrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

struct Num(f64);

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0.0 {
            // normalise −0
            return write!(f, "0.0");
        }
        write!(f, "{:?}", self.0)
    }
}

fn write_vec<'a>(f: &mut fmt::Formatter<'_>, v: impl Iterator<Item = &'a f64>) -> fmt::Result {
    write!(f, "[")?;
    for (i, x) in v.enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{}", Num(*x))?;
    }
    write!(f, "]")
}

fn write_mat(f: &mut fmt::Formatter<'_>, m: &Matrix) -> fmt::Result {
    write!(f, "[")?;
    for i in 0..m.nrows() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write_vec(f, m.row(i).iter())?;
    }
    write!(f, "]")
}

fn write_piece(p: &Polyhedron, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match p.tag() {
        SetTag::Whole(n) => write!(f, "free({n})"),
        SetTag::Zero(n) => write!(f, "zero({n})"),
        SetTag::Nonpositive(n) => write!(f, "nonpositive({n})"),
        SetTag::Box { lo, hi } => {
            write!(f, "box(")?;
            write_vec(f, lo.iter())?;
            write!(f, ", ")?;
            write_vec(f, hi.iter())?;
            write!(f, ")")
        }
        SetTag::General => {
            write!(f, "polyhedron(")?;
            write_mat(f, p.a())?;
            write!(f, ", ")?;
            write_vec(f, p.b().iter())?;
            if p.g().nrows() > 0 {
                write!(f, ", ")?;
                write_mat(f, p.g())?;
                write!(f, ", ")?;
                write_vec(f, p.gv().iter())?;
            }
            write!(f, ")")
        }
    }
}

pub(super) fn write_set(u: &PolyUnion, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if u.pieces().len() == 1 {
        return write_piece(&u.pieces()[0], f);
    }
    write!(f, "union(")?;
    for (i, p) in u.pieces().iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write_piece(p, f)?;
    }
    write!(f, ")")
}
