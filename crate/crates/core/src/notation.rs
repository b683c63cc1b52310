//! Plain-text syntax for expressions and forms, with text and LaTeX printers.
//!
//! Jet coordinates are written `u_xxy` when every base name is one
//! character (`u_4x` repeats a variable), and `A1_t_x1` otherwise.
//! Formal functions are differentiated with `d_x f` or `d_x^2 f`.
//! Forms use `dx` for base differentials, `th(u_x)` for contact forms and
//! `&` for the wedge product.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use crate::error::Error;
use crate::forms::{Basis, Context, Form, Word};
use crate::jetspace::Bundle;
use crate::symexpr::{Atom, Coeff, Expr, InvertibleRegistry, MultiIndex, Poly};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("{message}")]
    Name { offset: usize, message: String },
    #[error("{message}")]
    Arity { offset: usize, message: String },
    #[error(transparent)]
    Domain(#[from] Error),
}

impl ParseError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::Name { offset, .. } | ParseError::Arity { offset, .. } => {
                Some(*offset)
            }
            ParseError::Domain(_) => None,
        }
    }

    /// Shift offsets by the position of the fragment in a larger source.
    pub fn shifted(self, by: usize) -> Self {
        match self {
            ParseError::Syntax { offset, expected } => ParseError::Syntax { offset: offset + by, expected },
            ParseError::Name { offset, message } => ParseError::Name { offset: offset + by, message },
            ParseError::Arity { offset, message } => ParseError::Arity { offset: offset + by, message },
            d => d,
        }
    }
}

type PResult<T> = std::result::Result<T, ParseError>;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(BigInt),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn lex(src: &str) -> PResult<Lexer> {
    let mut toks = Vec::new();
    let bytes: Vec<(usize, char)> = src.char_indices().collect();
    let mut i = 0;
    while i < bytes.len() {
        let (off, c) = bytes[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].1.is_ascii_digit() {
                i += 1;
            }
            let s: String = bytes[start..i].iter().map(|p| p.1).collect();
            toks.push((Tok::Num(s.parse().unwrap()), off));
        } else if c.is_alphabetic() {
            let start = i;
            while i < bytes.len() && (bytes[i].1.is_alphanumeric() || bytes[i].1 == '_') {
                i += 1;
            }
            toks.push((Tok::Ident(bytes[start..i].iter().map(|p| p.1).collect()), off));
        } else if "+-*/^()&,".contains(c) {
            toks.push((Tok::Sym(c), off));
            i += 1;
        } else {
            return Err(ParseError::Syntax {
                offset: off,
                expected: "an expression".into(),
            });
        }
    }
    toks.push((Tok::End, src.len()));
    Ok(Lexer { toks, pos: 0 })
}

impl Lexer {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn next(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> PResult<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(ParseError::Syntax {
                offset: self.offset(),
                expected: format!("`{c}`"),
            })
        }
    }
}

/// Split a jet suffix like `xxy`, `4x` or `t_x1` into a multi-index.
fn parse_suffix(b: &Bundle, s: &str) -> Option<MultiIndex> {
    let mut idx = b.zero_index();
    for seg in s.split('_') {
        if seg.is_empty() {
            return None;
        }
        let mut rest = seg;
        while !rest.is_empty() {
            let digits = rest.chars().take_while(char::is_ascii_digit).count();
            let count: u16 = if digits > 0 { rest[..digits].parse().ok()? } else { 1 };
            rest = &rest[digits..];
            let k = (0..b.n())
                .filter(|&k| rest.starts_with(&*b.base_names()[k]))
                .max_by_key(|&k| b.base_names()[k].len())?;
            rest = &rest[b.base_names()[k].len()..];
            for _ in 0..count {
                idx = idx.incremented(k);
            }
        }
    }
    Some(idx)
}

/// Resolve a jet coordinate name like `u_xy`.
pub fn parse_jet(b: &Bundle, name: &str) -> Option<(usize, MultiIndex)> {
    if let Some(i) = b.fiber_index(name) {
        return Some((i, b.zero_index()));
    }
    let mut best = None;
    for (i, f) in b.fiber_names().iter().enumerate() {
        if let Some(rest) = name.strip_prefix(&**f).and_then(|r| r.strip_prefix('_')) {
            if let Some(idx) = parse_suffix(b, rest) {
                if best.as_ref().is_none_or(|(_, len, _)| f.len() > *len) {
                    best = Some((i, f.len(), idx));
                }
            }
        }
    }
    best.map(|(i, _, idx)| (i, idx))
}

struct Parser<'a> {
    lx: Lexer,
    b: &'a Bundle,
    reg: &'a InvertibleRegistry,
    forms: bool,
}

impl Parser<'_> {
    fn zero_form(&self, e: Expr) -> Form {
        Form::function(e, Context::Free)
    }

    fn as_function(&self, f: &Form, offset: usize) -> PResult<Expr> {
        if f.terms().all(|(w, _)| w.degree() == 0) {
            Ok(f.coefficient(&Word::empty()))
        } else {
            Err(ParseError::Arity {
                offset,
                message: "a function is required here, found a differential form".into(),
            })
        }
    }

    fn sum(&mut self) -> PResult<Form> {
        let neg = if self.lx.eat('-') {
            true
        } else {
            self.lx.eat('+');
            false
        };
        let mut acc = self.term()?;
        if neg {
            acc = acc.neg();
        }
        loop {
            if self.lx.eat('+') {
                acc = acc.add(&self.term()?)?;
            } else if self.lx.eat('-') {
                acc = acc.sub(&self.term()?)?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> PResult<Form> {
        let mut acc = self.unary()?;
        loop {
            if self.lx.eat('*') || (self.forms && self.lx.eat('&')) {
                acc = acc.wedge(&self.unary()?)?;
            } else if *self.lx.peek() == Tok::Sym('/') {
                self.lx.next();
                let off = self.lx.offset();
                let d = self.unary()?;
                let d = self.as_function(&d, off)?;
                if d.is_zero() {
                    return Err(Error::DivisionByNonInvertible { divisor: "0".into() }.into());
                }
                acc = acc.map_coefficients(|c| c.div_expr(&d, self.reg))?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> PResult<Form> {
        if self.lx.eat('-') {
            return Ok(self.unary()?.neg());
        }
        self.power()
    }

    fn exponent(&mut self) -> PResult<u32> {
        let off = self.lx.offset();
        match self.lx.next() {
            (Tok::Num(n), _) => u32::try_from(n).map_err(|_| ParseError::Syntax {
                offset: off,
                expected: "a small exponent".into(),
            }),
            _ => Err(ParseError::Syntax {
                offset: off,
                expected: "an integer exponent".into(),
            }),
        }
    }

    fn power(&mut self) -> PResult<Form> {
        let off = self.lx.offset();
        let base = self.primary()?;
        if self.lx.eat('^') {
            let e = self.exponent()?;
            let f = self.as_function(&base, off)?;
            return Ok(self.zero_form(f.pow(e)));
        }
        Ok(base)
    }

    fn derivative_var(&self, name: &str) -> Option<usize> {
        let rest = name.strip_prefix("d_")?;
        self.b.base_index(rest)
    }

    fn primary(&mut self) -> PResult<Form> {
        let (tok, off) = self.lx.next();
        match tok {
            Tok::Num(n) => Ok(self.zero_form(Expr::rational(Coeff::from_integer(n)))),
            Tok::Sym('(') => {
                let f = self.sum()?;
                self.lx.expect(')')?;
                Ok(f)
            }
            Tok::Ident(name) => self.ident(name, off),
            _ => Err(ParseError::Syntax {
                offset: off,
                expected: "a number, a name or `(`".into(),
            }),
        }
    }

    fn ident(&mut self, name: String, off: usize) -> PResult<Form> {
        let b = self.b;
        if let Some(k) = b.base_index(&name) {
            return Ok(self.zero_form(b.x(k)));
        }
        if b.is_param(&name) {
            return Ok(self.zero_form(b.param(&name)?));
        }
        if b.function(&name).is_some() {
            return Ok(self.zero_form(b.func(&name, &[])?));
        }
        if let Some((i, idx)) = parse_jet(b, &name) {
            return Ok(self.zero_form(Expr::atom(Atom::jet(i, idx))));
        }
        if let Some(k) = self.derivative_var(&name) {
            let times = if self.lx.eat('^') { self.exponent()? } else { 1 };
            let arg_off = self.lx.offset();
            let arg = self.power()?;
            let mut e = self.as_function(&arg, arg_off)?;
            for _ in 0..times {
                e = e.total_derivative(k);
            }
            return Ok(self.zero_form(e));
        }
        if self.forms {
            if name == "th" && *self.lx.peek() == Tok::Sym('(') {
                self.lx.next();
                let (t, o) = self.lx.next();
                let Tok::Ident(j) = t else {
                    return Err(ParseError::Syntax {
                        offset: o,
                        expected: "a jet coordinate".into(),
                    });
                };
                let (i, idx) = parse_jet(b, &j).ok_or_else(|| ParseError::Name {
                    offset: o,
                    message: format!("`{j}` is not a jet coordinate"),
                })?;
                if *self.lx.peek() == Tok::Sym(',') {
                    return Err(ParseError::Arity {
                        offset: self.lx.offset(),
                        message: "th takes one argument".into(),
                    });
                }
                self.lx.expect(')')?;
                return Ok(Form::theta(i, idx, Context::Free));
            }
            if let Some(k) = name.strip_prefix('d').and_then(|r| b.base_index(r)) {
                return Ok(Form::dx(k, Context::Free));
            }
        }
        Err(ParseError::Name {
            offset: off,
            message: format!("unknown name `{name}`"),
        })
    }

    fn finish<T>(&mut self, v: T) -> PResult<T> {
        if *self.lx.peek() != Tok::End {
            return Err(ParseError::Syntax {
                offset: self.lx.offset(),
                expected: "an operator or end of input".into(),
            });
        }
        Ok(v)
    }
}

/// Parse an expression (a 0-form) over the names of `b`.
pub fn parse_expr(src: &str, b: &Bundle, reg: &InvertibleRegistry) -> PResult<Expr> {
    let mut p = Parser {
        lx: lex(src)?,
        b,
        reg,
        forms: false,
    };
    let f = p.sum()?;
    let e = p.as_function(&f, 0)?;
    p.finish(e)
}

/// Parse a differential form on free jets.
pub fn parse_form(src: &str, b: &Bundle, reg: &InvertibleRegistry) -> PResult<Form> {
    let mut p = Parser {
        lx: lex(src)?,
        b,
        reg,
        forms: true,
    };
    let f = p.sum()?;
    p.finish(f)
}

/// Output flavour of the printers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Style {
    #[default]
    Text,
    Latex,
}

/// Printer for expressions and forms over a bundle.
#[derive(Clone, Copy)]
pub struct Printer<'a> {
    pub bundle: &'a Bundle,
    pub style: Style,
}

fn single_char_bases(b: &Bundle) -> bool {
    b.base_names().iter().all(|s| s.chars().count() == 1)
}

impl<'a> Printer<'a> {
    pub fn new(bundle: &'a Bundle, style: Style) -> Self {
        Printer { bundle, style }
    }

    fn suffix(&self, idx: &MultiIndex) -> String {
        let b = self.bundle;
        let names: Vec<&str> = (0..b.n())
            .flat_map(|k| std::iter::repeat_n(&*b.base_names()[k], usize::from(idx.get(k))))
            .collect();
        if single_char_bases(b) || self.style == Style::Latex {
            names.concat()
        } else {
            names.join("_")
        }
    }

    fn name(&self, s: &str) -> String {
        match self.style {
            Style::Text => s.to_string(),
            Style::Latex => {
                let (head, digits) = s.split_at(s.trim_end_matches(|c: char| c.is_ascii_digit()).len());
                let head = if head.chars().count() > 1 && !head.contains('_') {
                    format!("\\mathrm{{{head}}}")
                } else {
                    head.to_string()
                };
                if digits.is_empty() {
                    head
                } else {
                    format!("{head}_{{{digits}}}")
                }
            }
        }
    }

    pub fn jet(&self, fiber: usize, idx: &MultiIndex) -> String {
        let f = &self.bundle.fiber_names()[fiber];
        if idx.is_zero() {
            return self.name(f);
        }
        match self.style {
            Style::Text => format!("{f}_{}", self.suffix(idx)),
            Style::Latex => format!("{{{}}}_{{{}}}", self.name(f), self.suffix(idx)),
        }
    }

    /// `d_y d_x f`: the last variable is applied outermost.
    fn derivative(&self, name: &str, idx: &MultiIndex) -> String {
        let mut out = String::new();
        for k in (0..self.bundle.n()).rev() {
            let e = idx.get(k);
            if e == 0 {
                continue;
            }
            let v = &self.bundle.base_names()[k];
            match (self.style, e) {
                (Style::Text, 1) => write!(out, "d_{v} "),
                (Style::Text, _) => write!(out, "d_{v}^{e} "),
                (Style::Latex, 1) => write!(out, "\\partial_{{{v}}} "),
                (Style::Latex, _) => write!(out, "\\partial_{{{v}}}^{{{e}}} "),
            }
            .unwrap();
        }
        out.push_str(&self.name(name));
        out
    }

    pub fn atom(&self, a: &Atom) -> String {
        match a {
            Atom::Base(k) => self.name(&self.bundle.base_names()[*k]),
            Atom::Jet { fiber, index } => self.jet(*fiber, index),
            Atom::Func { name, index, .. } => self.derivative(name, index),
            Atom::Param(p) => self.name(p),
        }
    }

    fn power(&self, a: &Atom, e: u32) -> String {
        let s = self.atom(a);
        if e == 1 {
            return s;
        }
        let s = if matches!(a, Atom::Func { index, .. } if !index.is_zero()) {
            match self.style {
                Style::Text => format!("({s})"),
                Style::Latex => format!("\\left({s}\\right)"),
            }
        } else {
            s
        };
        match self.style {
            Style::Text => format!("{s}^{e}"),
            Style::Latex => format!("{s}^{{{e}}}"),
        }
    }

    fn coeff_abs(&self, c: &Coeff) -> String {
        let c = c.abs();
        if c.denom().is_one() {
            return c.numer().to_string();
        }
        match self.style {
            Style::Text => format!("{}/{}", c.numer(), c.denom()),
            Style::Latex => format!("\\frac{{{}}}{{{}}}", c.numer(), c.denom()),
        }
    }

    /// Terms with leading signs; the first sign is `-` or empty.
    fn poly_terms(&self, p: &Poly) -> Vec<(bool, String)> {
        let sep = match self.style {
            Style::Text => "*",
            Style::Latex => " ",
        };
        p.terms()
            .rev()
            .map(|(m, c)| {
                let mut parts: Vec<String> = Vec::new();
                if m.is_one() || !c.abs().is_one() {
                    parts.push(self.coeff_abs(c));
                }
                parts.extend(m.factors().iter().map(|(a, e)| self.power(a, *e)));
                (c.is_negative(), parts.join(sep))
            })
            .collect()
    }

    fn join_terms(terms: &[(bool, String)]) -> String {
        if terms.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (i, (neg, s)) in terms.iter().enumerate() {
            match (i, neg) {
                (0, true) => out.push('-'),
                (0, false) => {}
                (_, true) => out.push_str(" - "),
                (_, false) => out.push_str(" + "),
            }
            out.push_str(s);
        }
        out
    }

    pub fn poly(&self, p: &Poly) -> String {
        Self::join_terms(&self.poly_terms(p))
    }

    fn wrap(&self, s: String) -> String {
        match self.style {
            Style::Text => format!("({s})"),
            Style::Latex => format!("\\left({s}\\right)"),
        }
    }

    fn denominator(&self, e: &Expr) -> String {
        let factors: Vec<String> = e
            .denominator_factors()
            .iter()
            .map(|(p, k)| {
                let s = if p.term_count() > 1 || !p.is_single_monomial() {
                    self.wrap(self.poly(p))
                } else {
                    self.poly(p)
                };
                match (self.style, *k) {
                    (_, 1) => s,
                    (Style::Text, k) => format!("{s}^{k}"),
                    (Style::Latex, k) => format!("{s}^{{{k}}}"),
                }
            })
            .collect();
        match self.style {
            Style::Text => factors.join("*"),
            Style::Latex => factors.join(" "),
        }
    }

    pub fn expr(&self, e: &Expr) -> String {
        if e.denominator_factors().is_empty() {
            return self.poly(e.numerator());
        }
        let terms = self.poly_terms(e.numerator());
        let den = self.denominator(e);
        match self.style {
            Style::Text => {
                let num = if terms.len() == 1 {
                    Self::join_terms(&terms)
                } else {
                    self.wrap(Self::join_terms(&terms))
                };
                let den = if e.denominator_factors().len() > 1 { self.wrap(den) } else { den };
                format!("{num}/{den}")
            }
            Style::Latex => {
                let (neg, num) = if terms.len() == 1 {
                    (terms[0].0, terms[0].1.clone())
                } else {
                    (false, Self::join_terms(&terms))
                };
                format!("{}\\frac{{{num}}}{{{den}}}", if neg { "-" } else { "" })
            }
        }
    }

    pub fn basis(&self, b: &Basis) -> String {
        match (self.style, b) {
            (Style::Text, Basis::Dx(k)) => format!("d{}", self.bundle.base_names()[*k]),
            (Style::Latex, Basis::Dx(k)) => format!("d{}", self.name(&self.bundle.base_names()[*k])),
            (Style::Text, Basis::Theta { fiber, index }) => format!("th({})", self.jet(*fiber, index)),
            (Style::Latex, Basis::Theta { fiber, index }) => {
                let f = self.name(&self.bundle.fiber_names()[*fiber]);
                let s = if index.is_zero() { "0".to_string() } else { self.suffix(index) };
                if self.bundle.m() == 1 {
                    format!("\\theta_{{{s}}}")
                } else {
                    format!("\\theta^{{{f}}}_{{{s}}}")
                }
            }
        }
    }

    pub fn word(&self, w: &Word) -> String {
        let sep = match self.style {
            Style::Text => " & ",
            Style::Latex => " \\wedge ",
        };
        w.factors().iter().map(|b| self.basis(b)).collect::<Vec<_>>().join(sep)
    }

    pub fn form(&self, f: &Form) -> String {
        let mut out = String::new();
        for (i, (w, c)) in f.terms().enumerate() {
            let (neg, body) = if w.degree() == 0 {
                let s = self.expr(c);
                match s.strip_prefix('-') {
                    Some(r) if c.numerator().term_count() == 1 && c.denominator_factors().is_empty() => (true, r.to_string()),
                    _ => (false, s),
                }
            } else {
                let ws = self.word(w);
                let single = c.denominator_factors().is_empty() && c.numerator().term_count() == 1;
                let neg = single && c.numerator().leading().is_some_and(|(_, k)| k.is_negative());
                let abs = if neg { -c.clone() } else { c.clone() };
                let cs = if single { self.expr(&abs) } else { self.wrap(self.expr(&abs)) };
                let sep = match self.style {
                    Style::Text => " * ",
                    Style::Latex => "\\, ",
                };
                if abs.as_constant().is_some_and(|k| k.is_one()) {
                    (neg, ws)
                } else {
                    (neg, format!("{cs}{sep}{ws}"))
                }
            };
            match (i, neg) {
                (0, true) => out.push('-'),
                (0, false) => {}
                (_, true) => out.push_str(" - "),
                (_, false) => out.push_str(" + "),
            }
            out.push_str(&body);
        }
        if out.is_empty() {
            out.push('0');
        }
        out
    }
}

/// A rational number in the printers' syntax.
pub fn coeff_string(c: &Coeff) -> String {
    if c.denom().is_one() {
        c.numer().to_string()
    } else if c.is_zero() {
        "0".into()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> Bundle {
        let mut b = Bundle::new(&["x", "y"], &["u", "v"]).unwrap();
        b.add_function("f", &["x", "y"]).unwrap();
        b.add_function("Y", &["x", "y"]).unwrap();
        b.add_param("m").unwrap();
        b
    }

    #[test]
    fn jets_and_repeats() {
        let b = bundle();
        let reg = InvertibleRegistry::new();
        assert_eq!(parse_expr("u_4x", &b, &reg).unwrap(), b.u(0, &[4, 0]));
        assert_eq!(parse_expr("v_xyy", &b, &reg).unwrap(), b.u(1, &[1, 2]));
        assert_eq!(parse_expr("d_y d_x f", &b, &reg).unwrap(), b.func("f", &[1, 1]).unwrap());
    }

    #[test]
    fn round_trip_with_denominator() {
        let b = bundle();
        let mut reg = InvertibleRegistry::new();
        let y = b.func("Y", &[]).unwrap();
        reg.declare(&(Expr::one() + y.pow(2)));
        let src = "(d_x f + Y*u_y)^2/(2*(1 + Y^2)) - 3/2*m*(d_x f)^2";
        let e = parse_expr(src, &b, &reg).unwrap();
        let p = Printer::new(&b, Style::Text);
        assert_eq!(parse_expr(&p.expr(&e), &b, &reg).unwrap(), e);
    }

    #[test]
    fn forms_round_trip() {
        let b = bundle();
        let reg = InvertibleRegistry::new();
        let w = parse_form("-u_x*th(u)&dy + u_y*th(u) & dx + (u + v)*dx&dy", &b, &reg).unwrap();
        let p = Printer::new(&b, Style::Text);
        assert_eq!(parse_form(&p.form(&w), &b, &reg).unwrap(), w);
    }

    #[test]
    fn errors_carry_offsets() {
        let b = bundle();
        let reg = InvertibleRegistry::new();
        let e = parse_expr("u + w", &b, &reg).unwrap_err();
        assert!(matches!(e, ParseError::Name { offset: 4, .. }));
        let e = parse_expr("u + * v", &b, &reg).unwrap_err();
        assert!(matches!(e, ParseError::Syntax { offset: 4, .. }));
        let e = parse_expr("1/u", &b, &reg).unwrap_err();
        assert!(matches!(e, ParseError::Domain(_)));
    }
}
