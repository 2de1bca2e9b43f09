//! Complex scalar expressions for scenario files.
//!
//! Scenario values are written as readable expressions over numbers, the
//! imaginary unit `i`, `pi`, named constants, `sqrt`/`exp`, parentheses and
//! the four arithmetic operators, so a file says `1/sqrt(2)` instead of
//! 0.7071067811865475.

use std::collections::BTreeMap;
use std::fmt;

use crate::linalg::C64;

/// Why an expression failed to evaluate.
#[derive(Clone, Debug, PartialEq)]
pub enum ExprError {
    Syntax { pos: usize, detail: String },
    UnknownName { name: String },
    NonFinite,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprError::Syntax { pos, detail } => {
                write!(f, "syntax error at byte {pos}: {detail}")
            }
            ExprError::UnknownName { name } => write!(f, "unknown name {name:?}"),
            ExprError::NonFinite => write!(f, "expression does not evaluate to a finite number"),
        }
    }
}

impl std::error::Error for ExprError {}

/// Evaluates an expression against a table of named constants.
pub fn eval(src: &str, constants: &BTreeMap<String, C64>) -> Result<C64, ExprError> {
    let tokens = lex(src)?;
    let mut p = Parser { tokens, idx: 0, depth: 0, constants };
    let value = p.expression()?;
    match p.tokens.get(p.idx) {
        Some(&(_, pos)) => Err(ExprError::Syntax {
            pos,
            detail: "trailing input after expression".into(),
        }),
        None => {
            if value.re.is_finite() && value.im.is_finite() {
                Ok(value)
            } else {
                Err(ExprError::NonFinite)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(f64),
    Name(String),
    Plus,
    Minus,
    Star,
    Slash,
    Open,
    Close,
}

fn lex(src: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' => push_op(&mut out, Token::Plus, &mut i),
            b'-' => push_op(&mut out, Token::Minus, &mut i),
            b'*' => push_op(&mut out, Token::Star, &mut i),
            b'/' => push_op(&mut out, Token::Slash, &mut i),
            b'(' => push_op(&mut out, Token::Open, &mut i),
            b')' => push_op(&mut out, Token::Close, &mut i),
            b'0'..=b'9' | b'.' => {
                let start = i;
                i += 1;
                while i < bytes.len() && matches!(bytes[i], b'0'..=b'9' | b'.') {
                    i += 1;
                }
                if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j + 1;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    pos: start,
                    detail: format!("malformed number {text:?}"),
                })?;
                out.push((Token::Number(value), start));
            }
            b'A'..=b'Z' | b'a'..=b'z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i], b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'_')
                {
                    i += 1;
                }
                out.push((Token::Name(src[start..i].to_string()), start));
            }
            _ => {
                return Err(ExprError::Syntax {
                    pos: i,
                    detail: format!("unexpected character {:?}", src[i..].chars().next().unwrap()),
                })
            }
        }
    }
    Ok(out)
}

fn push_op(out: &mut Vec<(Token, usize)>, t: Token, i: &mut usize) {
    out.push((t, *i));
    *i += 1;
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    idx: usize,
    depth: usize,
    constants: &'a BTreeMap<String, C64>,
}

const MAX_DEPTH: usize = 64;

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.tokens.get(self.idx).map(|&(_, p)| p).unwrap_or(usize::MAX)
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ExprError::Syntax {
                pos: self.pos(),
                detail: "expression too deeply nested".into(),
            });
        }
        Ok(())
    }

    fn expression(&mut self) -> Result<C64, ExprError> {
        let mut value = self.term()?;
        while let Some(op) = self.peek().cloned() {
            match op {
                Token::Plus => {
                    self.idx += 1;
                    value += self.term()?;
                }
                Token::Minus => {
                    self.idx += 1;
                    value -= self.term()?;
                }
                _ => break,
            }
        }
        Ok(value)
    }

    fn term(&mut self) -> Result<C64, ExprError> {
        let mut value = self.unary()?;
        while let Some(op) = self.peek().cloned() {
            match op {
                Token::Star => {
                    self.idx += 1;
                    value *= self.unary()?;
                }
                Token::Slash => {
                    self.idx += 1;
                    value /= self.unary()?;
                }
                _ => break,
            }
        }
        Ok(value)
    }

    fn unary(&mut self) -> Result<C64, ExprError> {
        self.enter()?;
        let value = match self.peek() {
            Some(Token::Minus) => {
                self.idx += 1;
                -self.unary()?
            }
            Some(Token::Plus) => {
                self.idx += 1;
                self.unary()?
            }
            _ => self.atom()?,
        };
        self.depth -= 1;
        Ok(value)
    }

    fn atom(&mut self) -> Result<C64, ExprError> {
        let pos = self.pos();
        let value = match self.tokens.get(self.idx).cloned() {
            Some((Token::Number(x), _)) => {
                self.idx += 1;
                C64::new(x, 0.0)
            }
            Some((Token::Name(name), _)) => {
                self.idx += 1;
                match name.as_str() {
                    "i" => C64::new(0.0, 1.0),
                    "pi" => C64::new(std::f64::consts::PI, 0.0),
                    "sqrt" => self.call(pos, &name)?.sqrt(),
                    "exp" => self.call(pos, &name)?.exp(),
                    _ => self
                        .constants
                        .get(&name)
                        .copied()
                        .ok_or(ExprError::UnknownName { name })?,
                }
            }
            Some((Token::Open, _)) => {
                self.enter()?;
                self.idx += 1;
                let inner = self.expression()?;
                self.expect_close(pos)?;
                self.depth -= 1;
                inner
            }
            Some((t, p)) => {
                return Err(ExprError::Syntax {
                    pos: p,
                    detail: format!("expected a value, found {t:?}"),
                })
            }
            None => {
                return Err(ExprError::Syntax {
                    pos,
                    detail: "expected a value, found end of input".into(),
                })
            }
        };
        Ok(value)
    }

    fn call(&mut self, pos: usize, name: &str) -> Result<C64, ExprError> {
        match self.peek() {
            Some(Token::Open) => {
                self.enter()?;
                self.idx += 1;
                let arg = self.expression()?;
                self.expect_close(pos)?;
                self.depth -= 1;
                Ok(arg)
            }
            _ => Err(ExprError::Syntax {
                pos,
                detail: format!("{name} needs a parenthesized argument"),
            }),
        }
    }

    fn expect_close(&mut self, open_pos: usize) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token::Close) => {
                self.idx += 1;
                Ok(())
            }
            _ => Err(ExprError::Syntax {
                pos: open_pos,
                detail: "unclosed parenthesis".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str) -> Result<C64, ExprError> {
        eval(src, &BTreeMap::new())
    }

    fn close(z: C64, re: f64, im: f64) -> bool {
        (z.re - re).abs() <= 1e-15 && (z.im - im).abs() <= 1e-15
    }

    #[test]
    fn arithmetic_and_functions_evaluate() {
        assert!(close(ev("1/2").unwrap(), 0.5, 0.0));
        assert!(close(ev("1/sqrt(2)").unwrap(), std::f64::consts::FRAC_1_SQRT_2, 0.0));
        assert!(close(ev("sqrt(2)*sqrt(2)").unwrap(), 2.0000000000000004, 0.0));
        assert!(close(ev("-i/2").unwrap(), 0.0, -0.5));
        assert!(close(ev("i*i").unwrap(), -1.0, 0.0));
        assert!(close(ev("(1+i)*(1-i)").unwrap(), 2.0, 0.0));
        assert!(close(ev("2e-1").unwrap(), 0.2, 0.0));
        assert!(close(ev("exp(0)").unwrap(), 1.0, 0.0));
        let z = ev("exp(i*pi)").unwrap();
        assert!((z.re + 1.0).abs() <= 1e-15 && z.im.abs() <= 1e-14);
    }

    #[test]
    fn constants_resolve() {
        let mut table = BTreeMap::new();
        table.insert("u".to_string(), C64::new(0.5, 0.0));
        assert!(close(eval("2*u + i*u", &table).unwrap(), 1.0, 0.5));
        assert_eq!(
            eval("v", &table),
            Err(ExprError::UnknownName { name: "v".into() })
        );
    }

    #[test]
    fn precedence_binds_products_before_sums() {
        assert!(close(ev("1+2*3").unwrap(), 7.0, 0.0));
        assert!(close(ev("(1+2)*3").unwrap(), 9.0, 0.0));
        assert!(close(ev("-2*3").unwrap(), -6.0, 0.0));
        assert!(close(ev("1-2-3").unwrap(), -4.0, 0.0));
        assert!(close(ev("8/2/2").unwrap(), 2.0, 0.0));
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(matches!(ev(""), Err(ExprError::Syntax { .. })));
        assert!(matches!(ev("1+"), Err(ExprError::Syntax { .. })));
        assert!(matches!(ev("(1"), Err(ExprError::Syntax { .. })));
        assert!(matches!(ev("1)"), Err(ExprError::Syntax { .. })));
        assert!(matches!(ev("1..2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(ev("sqrt 2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(ev("$"), Err(ExprError::Syntax { .. })));
        assert!(matches!(ev("1/0"), Err(ExprError::NonFinite)));
        assert!(matches!(ev("0/0"), Err(ExprError::NonFinite)));
    }

    #[test]
    fn nesting_is_bounded() {
        let mut deep = String::new();
        for _ in 0..200 {
            deep.push('(');
        }
        deep.push('1');
        for _ in 0..200 {
            deep.push(')');
        }
        assert!(matches!(ev(&deep), Err(ExprError::Syntax { .. })));
        let shallow = format!("{}1{}", "(".repeat(20), ")".repeat(20));
        assert!(close(ev(&shallow).unwrap(), 1.0, 0.0));
    }
}
