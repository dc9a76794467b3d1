//! Recursive-descent parser for basis-function expressions.
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" int)?
//! atom    := number | var | "pi" | func "(" args ")" | "(" expr ")"
//! var     := "x" digits          (1-based: x1 .. xn)
//! func    := abs | sin | cos | tan | exp | sinc | pow
//! ```
//!
//! `-x1^2` parses as `-(x1^2)`. The exponent after `^` must be an integer
//! literal, optionally signed.

use super::{Expr, ExprError, Func};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            c if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // exponent part: e / E followed by optional sign and digits
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    pos: start,
                    msg: format!("malformed number '{text}'"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            other => {
                return Err(ExprError::Syntax {
                    pos: start,
                    msg: format!("unexpected character '{other}'"),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(_, p)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).map(|(t, _)| t.clone());
        self.at += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        let pos = self.pos();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(ExprError::Syntax { pos, msg: format!("expected {what}, found {t:?}") }),
            None => Err(ExprError::Syntax { pos, msg: format!("expected {what}, found end of input") }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn int_exponent(&mut self) -> Result<i32, ExprError> {
        if self.peek() == Some(&Tok::LParen) {
            self.bump();
            let k = self.int_exponent()?;
            return match self.bump() {
                Some(Tok::RParen) => Ok(k),
                _ => Err(ExprError::Syntax { pos: self.pos(), msg: "expected ')' after exponent".into() }),
            };
        }
        let pos = self.pos();
        let negative = if self.peek() == Some(&Tok::Minus) {
            self.bump();
            true
        } else {
            false
        };
        match self.bump() {
            Some(Tok::Num(v)) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                let k = v as i32;
                Ok(if negative { -k } else { k })
            }
            _ => Err(ExprError::Syntax { pos, msg: "exponent must be an integer literal".into() }),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.bump();
            let k = self.int_exponent()?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<(Expr, usize)>, ExprError> {
        self.expect(Tok::LParen, "'('")?;
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.bump();
            return Ok(args);
        }
        loop {
            let pos = self.pos();
            args.push((self.expr()?, pos));
            match self.peek() {
                Some(Tok::Comma) => {
                    self.bump();
                }
                _ => break,
            }
        }
        self.expect(Tok::RParen, "')'")?;
        Ok(args)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => self.ident(name, pos),
            Some(t) => Err(ExprError::Syntax { pos, msg: format!("unexpected token {t:?}") }),
            None => Err(ExprError::Syntax { pos, msg: "unexpected end of input".into() }),
        }
    }

    fn ident(&mut self, name: String, pos: usize) -> Result<Expr, ExprError> {
        if name == "pi" {
            return Ok(Expr::Const(std::f64::consts::PI));
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let idx: usize = digits
                    .parse()
                    .map_err(|_| ExprError::UnknownIdentifier { name: name.clone(), pos })?;
                if idx == 0 {
                    return Err(ExprError::UnknownIdentifier { name, pos });
                }
                return Ok(Expr::Var(idx - 1));
            }
        }
        let func = match name.as_str() {
            "abs" => Some(Func::Abs),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "tan" => Some(Func::Tan),
            "exp" => Some(Func::Exp),
            "sinc" => Some(Func::Sinc),
            "pow" => None,
            _ => return Err(ExprError::UnknownIdentifier { name, pos }),
        };
        let mut args = self.args()?;
        match func {
            Some(f) => {
                if args.len() != 1 {
                    return Err(ExprError::Arity { name, expected: 1, found: args.len(), pos });
                }
                let (arg, _) = args.pop().unwrap();
                Ok(Expr::Call(f, Box::new(arg)))
            }
            None => {
                if args.len() != 2 {
                    return Err(ExprError::Arity { name, expected: 2, found: args.len(), pos });
                }
                let (exponent, epos) = args.pop().unwrap();
                let (base, _) = args.pop().unwrap();
                let k = match exponent {
                    Expr::Const(v) if v.fract() == 0.0 => v as i32,
                    Expr::Neg(inner) => match *inner {
                        Expr::Const(v) if v.fract() == 0.0 => -(v as i32),
                        _ => return Err(ExprError::Syntax { pos: epos, msg: "pow exponent must be an integer literal".into() }),
                    },
                    _ => return Err(ExprError::Syntax { pos: epos, msg: "pow exponent must be an integer literal".into() }),
                };
                Ok(Expr::Pow(Box::new(base), k))
            }
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let toks = tokenize(src)?;
    if toks.is_empty() {
        return Err(ExprError::Syntax { pos: 0, msg: "empty expression".into() });
    }
    let mut p = Parser { toks, at: 0, end: src.len() };
    let e = p.expr()?;
    if p.at < p.toks.len() {
        let pos = p.pos();
        return Err(ExprError::Syntax { pos, msg: format!("trailing input {:?}", p.peek().unwrap()) });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = parse("1 + 2*3^2").unwrap();
        assert_eq!(e.eval(&[]).unwrap(), 19.0);
        let e = parse("-x1^2").unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -9.0);
        let e = parse("2/4/2").unwrap();
        assert_eq!(e.eval(&[]).unwrap(), 0.25);
    }

    #[test]
    fn scientific_literals() {
        let e = parse("1.5e-3 + 2E2").unwrap();
        assert!((e.eval(&[]).unwrap() - 200.0015).abs() < 1e-12);
    }

    #[test]
    fn pow_call_form() {
        let e = parse("pow(x1, 3)").unwrap();
        assert_eq!(e.eval(&[2.0]).unwrap(), 8.0);
        let e = parse("pow(x1, -1)").unwrap();
        assert_eq!(e.eval(&[4.0]).unwrap(), 0.25);
    }

    #[test]
    fn errors_carry_positions() {
        match parse("1 + $") {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        match parse("1 + foo(x1)") {
            Err(ExprError::UnknownIdentifier { name, pos }) => {
                assert_eq!(name, "foo");
                assert_eq!(pos, 4);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("sin(x1, x2)"), Err(ExprError::Arity { expected: 1, found: 2, .. })));
        assert!(matches!(parse("pow(x1)"), Err(ExprError::Arity { expected: 2, found: 1, .. })));
        assert!(matches!(parse("x0"), Err(ExprError::UnknownIdentifier { .. })));
        assert!(matches!(parse("(1 + 2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x1^0.5"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse(""), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("1 2"), Err(ExprError::Syntax { .. })));
    }
}
