//! Recursive-descent parser for infix expressions.
//!
//! Grammar:
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := atom ('^' unary)?
//! atom    := number | call | variable | '(' sum ')'
//! call    := ('sin' | 'cos' | 'exp' | 'log' | 'sqrt') '(' sum ')'
//! variable:= name | name '[' index ']' | name index
//! ```
//! Variable indices are 1-based. A bare block name is accepted only for blocks
//! of dimension one. Exponents must fold to a non-negative integer constant.

use super::{BinaryOp, Expr, Layout, UnaryOp};
use crate::error::ExprError;

pub fn parse_expression(text: &str, layout: &Layout) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        layout,
    };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    layout: &'a Layout,
}

impl Parser<'_> {
    fn syntax(&self, msg: &str) -> ExprError {
        ExprError::Syntax {
            pos: self.pos,
            message: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected '{}'", c as char)))
        }
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            return Ok(Expr::unary(UnaryOp::Neg, self.unary()?));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let at = self.pos;
        match self.unary()? {
            Expr::Const(k) if k >= 0.0 && k.fract() == 0.0 && k <= u32::MAX as f64 => {
                Ok(Expr::powi(base, k as u32))
            }
            _ => Err(ExprError::Syntax {
                pos: at,
                message: "exponent must be a non-negative integer constant".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.syntax("unexpected character")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if self.pos == exp_start {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ExprError::Syntax {
                pos: start,
                message: format!("malformed number '{text}'"),
            })
    }

    fn identifier(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .unwrap_or("")
            .to_string();
        let func = match name.as_str() {
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "exp" => Some(UnaryOp::Exp),
            "log" => Some(UnaryOp::Log),
            "sqrt" => Some(UnaryOp::Sqrt),
            _ => None,
        };
        if let Some(op) = func {
            if self.peek() == Some(b'(') {
                self.pos += 1;
                let arg = self.sum()?;
                self.expect(b')')?;
                return Ok(Expr::unary(op, arg));
            }
        }
        if name == "pi" && self.layout.block("pi").is_none() {
            return Ok(Expr::Const(std::f64::consts::PI));
        }
        let unknown = || ExprError::UnknownVariable {
            name: name.clone(),
            pos: start,
        };
        if let Some(block) = self.layout.block(&name) {
            if self.peek() == Some(b'[') {
                self.pos += 1;
                self.skip_ws();
                let idx_start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let idx: usize = std::str::from_utf8(&self.src[idx_start..self.pos])
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| self.syntax("expected a 1-based index"))?;
                self.expect(b']')?;
                if idx == 0 || idx > block.dim {
                    return Err(ExprError::UnknownVariable {
                        name: format!("{name}[{idx}]"),
                        pos: start,
                    });
                }
                return Ok(Expr::Var(block.offset + idx - 1));
            }
            if block.dim == 1 {
                return Ok(Expr::Var(block.offset));
            }
            return Err(ExprError::Syntax {
                pos: start,
                message: format!("block '{name}' has dimension {}; index it", block.dim),
            });
        }
        // `x2` shorthand: longest block-name prefix followed by digits only.
        let best = self
            .layout
            .blocks()
            .iter()
            .filter(|b| {
                name.len() > b.name.len()
                    && name.starts_with(&b.name)
                    && name[b.name.len()..].bytes().all(|c| c.is_ascii_digit())
            })
            .max_by_key(|b| b.name.len());
        if let Some(block) = best {
            let idx: usize = name[block.name.len()..].parse().map_err(|_| unknown())?;
            if idx >= 1 && idx <= block.dim {
                return Ok(Expr::Var(block.offset + idx - 1));
            }
        }
        Err(unknown())
    }
}
