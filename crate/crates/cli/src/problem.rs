//! Problem files: declarations, systems, coverings, ansätze and tasks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use jetvar_core::forms::Form;
use jetvar_core::jetspace::Bundle;
use jetvar_core::notation::{self, parse_jet, Printer, Style};
use jetvar_core::symexpr::{Atom, Expr, InvertibleRegistry};

use crate::template::{expand_forall, expand_name, expand_sums};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{line}:{column}: syntax error: expected {}", expected.join(" or "))]
    Syntax {
        line: usize,
        column: usize,
        expected: Vec<String>,
    },
    #[error("{line}:{column}: name error: {message}")]
    Name { line: usize, column: usize, message: String },
    #[error("{line}:{column}: arity error: {message}")]
    Arity { line: usize, column: usize, message: String },
    #[error("{line}: {error}")]
    Domain { line: usize, error: jetvar_core::Error },
}

type PResult<T> = Result<T, ParseError>;

/// A named computation and the pipeline it runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pipeline {
    Euler,
    NoetherForm,
    InternalLagrangian,
    PresymplecticCheck,
    NoetherClassify,
    SectionEl,
    Kovalevskaya,
    ConservedCurrent,
    Nondegeneracy,
    RestrictedDerivatives,
    SymmetryCheck,
    CosymmetryCheck,
    SymmetryAction,
}

impl Pipeline {
    pub const ALL: [Pipeline; 13] = [
        Pipeline::Euler,
        Pipeline::NoetherForm,
        Pipeline::InternalLagrangian,
        Pipeline::PresymplecticCheck,
        Pipeline::NoetherClassify,
        Pipeline::SectionEl,
        Pipeline::Kovalevskaya,
        Pipeline::ConservedCurrent,
        Pipeline::Nondegeneracy,
        Pipeline::RestrictedDerivatives,
        Pipeline::SymmetryCheck,
        Pipeline::CosymmetryCheck,
        Pipeline::SymmetryAction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Euler => "euler",
            Pipeline::NoetherForm => "noether-form",
            Pipeline::InternalLagrangian => "internal-lagrangian",
            Pipeline::PresymplecticCheck => "presymplectic-check",
            Pipeline::NoetherClassify => "noether-classify",
            Pipeline::SectionEl => "section-EL",
            Pipeline::Kovalevskaya => "kovalevskaya",
            Pipeline::ConservedCurrent => "conserved-current",
            Pipeline::Nondegeneracy => "nondegeneracy",
            Pipeline::RestrictedDerivatives => "restricted-derivatives",
            Pipeline::SymmetryCheck => "symmetry-check",
            Pipeline::CosymmetryCheck => "cosymmetry-check",
            Pipeline::SymmetryAction => "symmetry-action",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Required and optional task keys.
    pub fn keys(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Pipeline::Euler => (&["density"], &[]),
            Pipeline::NoetherForm => (&["density"], &["skip"]),
            Pipeline::InternalLagrangian => (&["density", "system"], &["skip"]),
            Pipeline::PresymplecticCheck => (&["system", "operator"], &[]),
            Pipeline::NoetherClassify => (&["density", "system", "symmetry"], &["skip"]),
            Pipeline::SectionEl => (&["ansatz"], &["density", "vary", "show", "skip"]),
            Pipeline::Kovalevskaya => (&["density", "along", "k"], &[]),
            Pipeline::ConservedCurrent => (&["system", "current"], &[]),
            Pipeline::Nondegeneracy => (&["density", "covector", "k"], &[]),
            Pipeline::RestrictedDerivatives => (&["system", "order"], &[]),
            Pipeline::SymmetryCheck => (&["system", "symmetry"], &[]),
            Pipeline::CosymmetryCheck => (&["system", "cosymmetry"], &[]),
            Pipeline::SymmetryAction => (&["density", "system", "symmetry"], &["skip"]),
        }
    }
}

/// Order in which task keys are printed.
const KEY_ORDER: [&str; 15] = [
    "density",
    "system",
    "ansatz",
    "skip",
    "along",
    "k",
    "order",
    "operator",
    "symmetry",
    "cosymmetry",
    "covector",
    "current",
    "vary",
    "show",
    "",
];

#[derive(Clone, Debug, PartialEq)]
pub enum Arg {
    Ref(String),
    Names(Vec<String>),
    Jets(Vec<Atom>),
    Exprs(Vec<Expr>),
    Form(Form),
    Int(u32),
    /// Rows of operator entries, polynomial in the `D_x` symbols.
    Operator(Vec<Vec<Expr>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub name: String,
    pub pipeline: Pipeline,
    pub args: BTreeMap<String, Arg>,
}

impl Task {
    pub fn reference(&self, key: &str) -> Option<&str> {
        match self.args.get(key) {
            Some(Arg::Ref(s)) => Some(s),
            _ => None,
        }
    }

    pub fn int(&self, key: &str) -> Option<u32> {
        match self.args.get(key) {
            Some(Arg::Int(k)) => Some(*k),
            _ => None,
        }
    }

    pub fn exprs(&self, key: &str) -> Option<&[Expr]> {
        match self.args.get(key) {
            Some(Arg::Exprs(v)) => Some(v),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct System {
    pub name: String,
    pub relations: Vec<(Atom, Expr)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Covering {
    pub name: String,
    pub over: String,
    pub fibers: Vec<String>,
    /// The bundle of the base system extended by the new fibers.
    pub bundle: Bundle,
    pub relations: Vec<(Atom, Expr)>,
    pub chart: Option<Vec<(Atom, Expr)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ansatz {
    pub name: String,
    pub on: String,
    pub free: Vec<(Atom, Expr)>,
    pub directions: Vec<Vec<Expr>>,
    pub order: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemFile {
    pub name: String,
    pub bundle: Bundle,
    pub invertible: Vec<Expr>,
    pub registry: InvertibleRegistry,
    pub densities: Vec<(String, Expr)>,
    pub systems: Vec<System>,
    pub coverings: Vec<Covering>,
    pub ansatze: Vec<Ansatz>,
    pub tasks: Vec<Task>,
}

impl ProblemFile {
    pub fn density(&self, name: &str) -> Option<&Expr> {
        self.densities.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn system(&self, name: &str) -> Option<&System> {
        self.systems.iter().find(|s| s.name == name)
    }

    pub fn covering(&self, name: &str) -> Option<&Covering> {
        self.coverings.iter().find(|s| s.name == name)
    }

    pub fn ansatz(&self, name: &str) -> Option<&Ansatz> {
        self.ansatze.iter().find(|s| s.name == name)
    }

    pub fn task(&self, name: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.name == name)
    }

    /// Bundle in which expressions on the named system or covering live.
    pub fn scope(&self, name: &str) -> Option<&Bundle> {
        if self.system(name).is_some() {
            Some(&self.bundle)
        } else {
            self.covering(name).map(|c| &c.bundle)
        }
    }

    fn declared(&self, name: &str) -> bool {
        self.densities.iter().any(|(n, _)| n == name)
            || self.systems.iter().any(|s| s.name == name)
            || self.coverings.iter().any(|s| s.name == name)
            || self.ansatze.iter().any(|s| s.name == name)
    }
}

/// Bundle extended by the operator symbols `D_x`, …
pub fn operator_bundle(b: &Bundle) -> Bundle {
    let mut ob = b.clone();
    for x in b.base_names() {
        ob.add_param(&format!("D_{x}")).expect("operator symbols are fresh");
    }
    ob
}

struct Line {
    no: usize,
    /// Byte offset of `text` in the source line.
    indent: usize,
    text: String,
}

fn is_name(s: &str) -> bool {
    let mut cs = s.chars();
    cs.next().is_some_and(char::is_alphabetic) && cs.all(char::is_alphanumeric)
}

struct Parser {
    lines: Vec<Line>,
    pos: usize,
    name: Option<String>,
    base: Option<Vec<String>>,
    bundle: Option<Bundle>,
    invertible: Vec<Expr>,
    reg: InvertibleRegistry,
    pf: Option<ProblemFile>,
}

impl Parser {
    fn syntax(&self, l: &Line, col: usize, expected: &[&str]) -> ParseError {
        ParseError::Syntax {
            line: l.no,
            column: l.indent + col + 1,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn name_err(l: &Line, col: usize, message: String) -> ParseError {
        ParseError::Name {
            line: l.no,
            column: l.indent + col + 1,
            message,
        }
    }

    fn arity(l: &Line, col: usize, message: String) -> ParseError {
        ParseError::Arity {
            line: l.no,
            column: l.indent + col + 1,
            message,
        }
    }

    fn pf(&mut self, l: &Line) -> PResult<&mut ProblemFile> {
        if self.pf.is_none() {
            let Some(b) = self.bundle.clone() else {
                return Err(self.syntax(l, 0, &["`base`", "`fibers`"]));
            };
            self.pf = Some(ProblemFile {
                name: self.name.clone().unwrap_or_else(|| "problem".into()),
                bundle: b,
                invertible: Vec::new(),
                registry: InvertibleRegistry::new(),
                densities: Vec::new(),
                systems: Vec::new(),
                coverings: Vec::new(),
                ansatze: Vec::new(),
                tasks: Vec::new(),
            });
        }
        Ok(self.pf.as_mut().unwrap())
    }

    fn expr_in(&self, b: &Bundle, l: &Line, col: usize, src: &str) -> PResult<Expr> {
        let expanded = expand_sums(src).map_err(|m| Self::arity(l, col, m))?;
        notation::parse_expr(&expanded, b, &self.reg).map_err(|e| self.lift(l, col, src, &expanded, e))
    }

    fn form_in(&self, b: &Bundle, l: &Line, col: usize, src: &str) -> PResult<Form> {
        let expanded = expand_sums(src).map_err(|m| Self::arity(l, col, m))?;
        notation::parse_form(&expanded, b, &self.reg).map_err(|e| self.lift(l, col, src, &expanded, e))
    }

    fn lift(&self, l: &Line, col: usize, src: &str, expanded: &str, e: notation::ParseError) -> ParseError {
        let at = |off: usize| if src == expanded { col + off } else { col };
        match e {
            notation::ParseError::Syntax { offset, expected } => ParseError::Syntax {
                line: l.no,
                column: l.indent + at(offset) + 1,
                expected: vec![expected],
            },
            notation::ParseError::Name { offset, message } => Self::name_err(l, at(offset), message),
            notation::ParseError::Arity { offset, message } => Self::arity(l, at(offset), message),
            notation::ParseError::Domain(error) => ParseError::Domain { line: l.no, error },
        }
    }

    fn jet_in(b: &Bundle, l: &Line, col: usize, s: &str) -> PResult<Atom> {
        parse_jet(b, s.trim())
            .map(|(f, i)| Atom::jet(f, i))
            .ok_or_else(|| Self::name_err(l, col, format!("`{}` is not a jet coordinate", s.trim())))
    }

    /// `jet = expr` inside system, covering and chart blocks.
    fn relation(&self, b: &Bundle, l: &Line, text: &str, col: usize) -> PResult<(Atom, Expr)> {
        let Some(eq) = text.find('=') else {
            return Err(self.syntax(l, col + text.len(), &["`=`"]));
        };
        let lhs = Self::jet_in(b, l, col, &text[..eq])?;
        let rhs_start = eq + 1 + (text[eq + 1..].len() - text[eq + 1..].trim_start().len());
        let rhs = self.expr_in(b, l, col + rhs_start, text[eq + 1..].trim())?;
        Ok((lhs, rhs))
    }

    fn names(&self, l: &Line, col: usize, rest: &str) -> PResult<Vec<String>> {
        let mut out = Vec::new();
        let mut c = col;
        for tok in rest.split_whitespace() {
            let here = rest[c - col..].find(tok).map_or(c, |p| c + p);
            for n in expand_name(tok).map_err(|m| self.syntax(l, here, &[&m]))? {
                if !is_name(&n) {
                    return Err(self.syntax(l, here, &["a name"]));
                }
                if out.contains(&n) {
                    return Err(Self::name_err(l, here, format!("duplicate name `{n}`")));
                }
                out.push(n);
            }
            c = here + tok.len();
        }
        Ok(out)
    }

    fn fresh(&self, l: &Line, col: usize, b: &Bundle, n: &str) -> PResult<()> {
        let taken = b.base_names().iter().any(|s| &**s == n)
            || b.fiber_names().iter().any(|s| &**s == n)
            || b.is_param(n)
            || b.function(n).is_some()
            || self.pf.as_ref().is_some_and(|pf| pf.declared(n));
        if taken {
            Err(Self::name_err(l, col, format!("`{n}` is already declared")))
        } else {
            Ok(())
        }
    }

    /// Lines of a `{ … }` block following the current line.
    fn block(&mut self, open: &Line) -> PResult<Vec<Line>> {
        let mut out = Vec::new();
        loop {
            if self.pos >= self.lines.len() {
                return Err(self.syntax(open, open.text.len(), &["`}`"]));
            }
            let l = std::mem::replace(
                &mut self.lines[self.pos],
                Line {
                    no: 0,
                    indent: 0,
                    text: String::new(),
                },
            );
            self.pos += 1;
            if l.text == "}" {
                return Ok(out);
            }
            if l.text.ends_with('{') {
                // nested block, kept with a marker
                let inner = self.block(&l)?;
                out.push(l);
                out.extend(inner);
                out.push(Line {
                    no: 0,
                    indent: 0,
                    text: "}".into(),
                });
                continue;
            }
            for text in expand_forall(&l.text).map_err(|m| self.syntax(&l, 0, &[&m]))? {
                out.push(Line {
                    no: l.no,
                    indent: l.indent,
                    text,
                });
            }
        }
    }

    fn header<'a>(&self, l: &'a Line, kw: &str, extra: &[&str]) -> PResult<Vec<&'a str>> {
        let body = l.text.strip_suffix('{').ok_or_else(|| self.syntax(l, l.text.len(), &["`{`"]))?;
        let words: Vec<&str> = body.split_whitespace().collect();
        if words.len() != 2 + extra.len() || words[0] != kw {
            let shape = [&[kw, "NAME"][..], extra, &["{"]].concat().join(" ");
            return Err(self.syntax(l, 0, &[&format!("`{shape}`")]));
        }
        Ok(words)
    }

    fn statement(&mut self, l: Line) -> PResult<()> {
        let (kw, rest) = l.text.split_once(char::is_whitespace).unwrap_or((&l.text, ""));
        let col = kw.len() + (rest.len() - rest.trim_start().len()) + usize::from(!rest.is_empty());
        let col = col.min(l.text.len());
        let rest = rest.trim();
        match kw {
            "problem" => {
                if !is_name_dashed(rest) {
                    return Err(self.syntax(&l, col, &["a problem name"]));
                }
                self.name = Some(rest.to_string());
            }
            "base" => {
                if self.base.is_some() {
                    return Err(Self::name_err(&l, 0, "base variables are already declared".into()));
                }
                let names = self.names(&l, col, rest)?;
                if names.is_empty() {
                    return Err(Self::arity(&l, col, "at least one base variable is required".into()));
                }
                self.base = Some(names);
            }
            "fibers" => {
                let Some(base) = self.base.clone() else {
                    return Err(self.syntax(&l, 0, &["`base`"]));
                };
                if self.bundle.is_some() {
                    return Err(Self::name_err(&l, 0, "fibers are already declared".into()));
                }
                let names = self.names(&l, col, rest)?;
                if let Some(d) = names.iter().find(|n| base.contains(n)) {
                    return Err(Self::name_err(&l, col, format!("duplicate name `{d}`")));
                }
                if names.is_empty() {
                    return Err(Self::arity(&l, col, "at least one fiber variable is required".into()));
                }
                let b = Bundle::new(&base, &names).map_err(|e| ParseError::Domain { line: l.no, error: e })?;
                self.bundle = Some(b);
            }
            "params" => {
                let names = self.names(&l, col, rest)?;
                for n in names {
                    let b = self.bundle.clone().ok_or_else(|| self.syntax(&l, 0, &["`fibers`"]))?;
                    self.fresh(&l, col, &b, &n)?;
                    self.bundle.as_mut().unwrap().add_param(&n).unwrap();
                }
                self.sync_bundle();
            }
            "function" => {
                let b = self.bundle.clone().ok_or_else(|| self.syntax(&l, 0, &["`fibers`"]))?;
                let (name, args) = rest.split_once('(').ok_or_else(|| self.syntax(&l, l.text.len(), &["`(`"]))?;
                let args = args.strip_suffix(')').ok_or_else(|| self.syntax(&l, l.text.len(), &["`)`"]))?;
                let args: Vec<&str> = args.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                for a in &args {
                    if b.base_index(a).is_none() {
                        return Err(Self::name_err(&l, col, format!("`{a}` is not a base variable")));
                    }
                }
                for n in expand_name(name.trim()).map_err(|m| self.syntax(&l, col, &[&m]))? {
                    if !is_name(&n) {
                        return Err(self.syntax(&l, col, &["a function name"]));
                    }
                    let cur = self.bundle.clone().unwrap();
                    self.fresh(&l, col, &cur, &n)?;
                    self.bundle.as_mut().unwrap().add_function(&n, &args).unwrap();
                }
                self.sync_bundle();
            }
            "invertible" => {
                let b = self.bundle.clone().ok_or_else(|| self.syntax(&l, 0, &["`fibers`"]))?;
                let e = self.expr_in(&b, &l, col, rest)?;
                if e.is_zero() {
                    return Err(ParseError::Domain {
                        line: l.no,
                        error: jetvar_core::Error::Invalid("zero cannot be invertible".into()),
                    });
                }
                self.reg.declare(&e);
                self.invertible.push(e);
                if let Some(pf) = self.pf.as_mut() {
                    pf.invertible = self.invertible.clone();
                    pf.registry = self.reg.clone();
                }
            }
            "density" => {
                let (name, value) = rest.split_once('=').ok_or_else(|| self.syntax(&l, l.text.len(), &["`=`"]))?;
                let name = name.trim();
                if !is_name(name) {
                    return Err(self.syntax(&l, col, &["a density name"]));
                }
                let b = self.bundle.clone().ok_or_else(|| self.syntax(&l, 0, &["`fibers`"]))?;
                self.fresh(&l, col, &b, name)?;
                let vcol = col + rest.find('=').unwrap() + 1 + (value.len() - value.trim_start().len());
                let e = self.expr_in(&b, &l, vcol, value.trim())?;
                let name = name.to_string();
                self.pf(&l)?.densities.push((name, e));
            }
            "system" => {
                let words = self.header(&l, "system", &[])?;
                let name = words[1].to_string();
                let b = self.bundle.clone().ok_or_else(|| self.syntax(&l, 0, &["`fibers`"]))?;
                self.check_new_name(&l, &b, &name)?;
                let body = self.block(&l)?;
                let mut relations = Vec::new();
                for bl in &body {
                    relations.push(self.relation(&b, bl, &bl.text, 0)?);
                }
                self.pf(&l)?.systems.push(System { name, relations });
            }
            "covering" => {
                let words = self.header(&l, "covering", &["over", "SYSTEM"])?;
                if words[2] != "over" {
                    return Err(self.syntax(&l, 0, &["`over`"]));
                }
                let (name, over) = (words[1].to_string(), words[3].to_string());
                let b = self.bundle.clone().ok_or_else(|| self.syntax(&l, 0, &["`fibers`"]))?;
                self.check_new_name(&l, &b, &name)?;
                let scope = self
                    .pf(&l)?
                    .scope(&over)
                    .cloned()
                    .ok_or_else(|| Self::name_err(&l, 0, format!("unknown system `{over}`")))?;
                let body = self.block(&l)?;
                let mut it = body.iter().peekable();
                let first = it.next().ok_or_else(|| self.syntax(&l, l.text.len(), &["`fibers`"]))?;
                let Some(rest) = first.text.strip_prefix("fibers ") else {
                    return Err(self.syntax(first, 0, &["`fibers`"]));
                };
                let fibers = self.names(first, 7, rest)?;
                let mut cb = scope.clone();
                for f in &fibers {
                    self.fresh(first, 7, &cb, f)?;
                    cb.add_fiber(f).unwrap();
                }
                let mut relations = Vec::new();
                let mut chart = None;
                while let Some(bl) = it.next() {
                    if bl.text == "chart {" {
                        let mut rows = Vec::new();
                        for cl in it.by_ref() {
                            if cl.text == "}" {
                                break;
                            }
                            rows.push(self.relation(&cb, cl, &cl.text, 0)?);
                        }
                        chart = Some(rows);
                    } else {
                        relations.push(self.relation(&cb, bl, &bl.text, 0)?);
                    }
                }
                self.pf(&l)?.coverings.push(Covering {
                    name,
                    over,
                    fibers,
                    bundle: cb,
                    relations,
                    chart,
                });
            }
            "ansatz" => {
                let words = self.header(&l, "ansatz", &["on", "SYSTEM"])?;
                if words[2] != "on" {
                    return Err(self.syntax(&l, 0, &["`on`"]));
                }
                let (name, on) = (words[1].to_string(), words[3].to_string());
                let b = self.bundle.clone().ok_or_else(|| self.syntax(&l, 0, &["`fibers`"]))?;
                self.check_new_name(&l, &b, &name)?;
                let scope = self
                    .pf(&l)?
                    .scope(&on)
                    .cloned()
                    .ok_or_else(|| Self::name_err(&l, 0, format!("unknown system `{on}`")))?;
                let mut free = Vec::new();
                let mut directions = Vec::new();
                let mut order = None;
                for bl in self.block(&l)? {
                    let (k, r) = bl.text.split_once(char::is_whitespace).unwrap_or((&bl.text, ""));
                    let c = bl.text.len() - r.trim_start().len();
                    match k {
                        "free" => free.push(self.relation(&scope, &bl, r, c)?),
                        "direction" => {
                            let comps = split_top(r)
                                .into_iter()
                                .map(|(o, s)| self.expr_in(&scope, &bl, c + o, s))
                                .collect::<PResult<Vec<_>>>()?;
                            if comps.len() != scope.n() {
                                return Err(Self::arity(
                                    &bl,
                                    c,
                                    format!("a direction needs {} components, found {}", scope.n(), comps.len()),
                                ));
                            }
                            directions.push(comps);
                        }
                        "order" => order = Some(r.trim().parse().map_err(|_| self.syntax(&bl, c, &["an integer"]))?),
                        _ => return Err(self.syntax(&bl, 0, &["`free`", "`direction`", "`order`"])),
                    }
                }
                let order = order.ok_or_else(|| Self::arity(&l, 0, "ansatz needs an `order`".into()))?;
                self.pf(&l)?.ansatze.push(Ansatz {
                    name,
                    on,
                    free,
                    directions,
                    order,
                });
            }
            "task" => {
                let body = l.text.strip_suffix('{').ok_or_else(|| self.syntax(&l, l.text.len(), &["`{`"]))?;
                let words: Vec<&str> = body.split_whitespace().collect();
                if words.len() != 3 {
                    return Err(self.syntax(&l, 0, &["`task NAME PIPELINE {`"]));
                }
                let name = words[1].to_string();
                if !is_name_dashed(&name) {
                    return Err(self.syntax(&l, 5, &["a task name"]));
                }
                let pcol = l.text.find(words[2]).unwrap_or(0);
                let pipeline = Pipeline::from_name(words[2]).ok_or_else(|| {
                    let all: Vec<&str> = Pipeline::ALL.iter().map(|p| p.name()).collect();
                    self.syntax(&l, pcol, &all)
                })?;
                if self.pf(&l)?.task(&name).is_some() {
                    return Err(Self::name_err(&l, 5, format!("duplicate task `{name}`")));
                }
                let body = self.block(&l)?;
                let task = self.task(&l, name, pipeline, &body)?;
                self.pf(&l)?.tasks.push(task);
            }
            _ => {
                return Err(self.syntax(
                    &l,
                    0,
                    &[
                        "`problem`",
                        "`base`",
                        "`fibers`",
                        "`params`",
                        "`function`",
                        "`invertible`",
                        "`density`",
                        "`system`",
                        "`covering`",
                        "`ansatz`",
                        "`task`",
                    ],
                ))
            }
        }
        Ok(())
    }

    fn sync_bundle(&mut self) {
        if let (Some(pf), Some(b)) = (self.pf.as_mut(), self.bundle.as_ref()) {
            pf.bundle = b.clone();
        }
    }

    fn check_new_name(&self, l: &Line, b: &Bundle, name: &str) -> PResult<()> {
        if !is_name(name) {
            return Err(self.syntax(l, 0, &["a name"]));
        }
        self.fresh(l, 0, b, name)
    }

    fn task(&mut self, l: &Line, name: String, pipeline: Pipeline, body: &[Line]) -> PResult<Task> {
        let (required, optional) = pipeline.keys();
        let mut raw: BTreeMap<String, (&Line, usize, String)> = BTreeMap::new();
        for bl in body {
            let (k, r) = bl.text.split_once(char::is_whitespace).unwrap_or((&bl.text, ""));
            if !required.contains(&k) && !optional.contains(&k) {
                let mut keys: Vec<&str> = required.iter().chain(optional).copied().collect();
                keys.sort();
                return Err(self.syntax(bl, 0, &keys));
            }
            if raw.contains_key(k) {
                return Err(Self::name_err(bl, 0, format!("duplicate key `{k}`")));
            }
            let c = bl.text.len() - r.trim_start().len();
            raw.insert(k.to_string(), (bl, c, r.trim().to_string()));
        }
        for k in required {
            if !raw.contains_key(*k) {
                return Err(Self::arity(l, 0, format!("pipeline {} needs `{k}`", pipeline.name())));
            }
        }
        if raw.contains_key("density") != raw.contains_key("vary") && pipeline == Pipeline::SectionEl {
            return Err(Self::arity(l, 0, "`density` and `vary` go together".into()));
        }
        let pf = self.pf.as_ref().unwrap();
        let base = pf.bundle.clone();
        let mut args = BTreeMap::new();
        let mut scope = base.clone();
        for key in ["density", "system", "ansatz"] {
            let Some((bl, c, v)) = raw.get(key) else { continue };
            let ok = match key {
                "density" => pf.density(v).is_some(),
                "system" => pf.scope(v).is_some(),
                _ => pf.ansatz(v).is_some(),
            };
            if !ok {
                return Err(Self::name_err(bl, *c, format!("unknown {key} `{v}`")));
            }
            if key == "system" {
                scope = pf.scope(v).unwrap().clone();
            }
            if key == "ansatz" {
                scope = pf.scope(&pf.ansatz(v).unwrap().on).unwrap().clone();
            }
            args.insert(key.to_string(), Arg::Ref(v.clone()));
        }
        for (key, (bl, c, v)) in &raw {
            let (bl, c) = (*bl, *c);
            let arg = match key.as_str() {
                "density" | "system" | "ansatz" => continue,
                "skip" | "along" => {
                    if scope.base_index(v).is_none() {
                        return Err(Self::name_err(bl, c, format!("`{v}` is not a base variable")));
                    }
                    Arg::Ref(v.clone())
                }
                "k" | "order" => Arg::Int(v.parse().map_err(|_| self.syntax(bl, c, &["an integer"]))?),
                "vary" => {
                    let names = self.names(bl, c, v)?;
                    for n in &names {
                        if scope.function(n).is_none() {
                            return Err(Self::name_err(bl, c, format!("`{n}` is not a declared function")));
                        }
                    }
                    Arg::Names(names)
                }
                "show" => {
                    let mut jets = Vec::new();
                    for tok in v.split_whitespace() {
                        jets.push(Self::jet_in(&scope, bl, c, tok)?);
                    }
                    Arg::Jets(jets)
                }
                "symmetry" | "cosymmetry" | "covector" => {
                    let comps = split_top(v)
                        .into_iter()
                        .map(|(o, s)| self.expr_in(&scope, bl, c + o, s))
                        .collect::<PResult<Vec<_>>>()?;
                    let want = if key == "covector" { scope.n() } else { scope.m() };
                    if comps.len() != want {
                        return Err(Self::arity(bl, c, format!("`{key}` needs {want} components, found {}", comps.len())));
                    }
                    Arg::Exprs(comps)
                }
                "current" => Arg::Form(self.form_in(&scope, bl, c, v)?),
                "operator" => {
                    let ob = operator_bundle(&scope);
                    let mut rows = Vec::new();
                    let mut off = 0;
                    for row in v.split(';') {
                        let r = split_top(row)
                            .into_iter()
                            .map(|(o, s)| self.expr_in(&ob, bl, c + off + o, s))
                            .collect::<PResult<Vec<_>>>()?;
                        if r.len() != scope.m() {
                            return Err(Self::arity(bl, c + off, format!("operator rows need {} entries", scope.m())));
                        }
                        rows.push(r);
                        off += row.len() + 1;
                    }
                    if rows.len() != scope.m() {
                        return Err(Self::arity(bl, c, format!("operator needs {} rows", scope.m())));
                    }
                    Arg::Operator(rows)
                }
                _ => unreachable!("keys are validated above"),
            };
            args.insert(key.clone(), arg);
        }
        Ok(Task { name, pipeline, args })
    }
}

fn is_name_dashed(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '-' || c == '_')
}

/// Split on commas outside parentheses, keeping offsets.
fn split_top(s: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push((start, &s[start..i]));
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push((start, &s[start..]));
    out.into_iter()
        .map(|(o, t)| (o + (t.len() - t.trim_start().len()), t.trim()))
        .collect()
}

/// Parse problem-file source text.
pub fn parse_str(src: &str) -> PResult<ProblemFile> {
    let lines = src
        .lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let code = raw.split('#').next().unwrap_or("");
            let text = code.trim();
            (!text.is_empty()).then(|| Line {
                no: i + 1,
                indent: code.len() - code.trim_start().len(),
                text: text.to_string(),
            })
        })
        .collect();
    let mut p = Parser {
        lines,
        pos: 0,
        name: None,
        base: None,
        bundle: None,
        invertible: Vec::new(),
        reg: InvertibleRegistry::new(),
        pf: None,
    };
    while p.pos < p.lines.len() {
        let l = std::mem::replace(
            &mut p.lines[p.pos],
            Line {
                no: 0,
                indent: 0,
                text: String::new(),
            },
        );
        p.pos += 1;
        if l.text == "}" {
            return Err(p.syntax(&l, 0, &["a statement"]));
        }
        p.statement(l)?;
    }
    if p.pf.is_none() {
        let end = Line {
            no: src.lines().count().max(1),
            indent: 0,
            text: String::new(),
        };
        p.pf(&end)?;
    }
    let mut pf = p.pf.unwrap();
    pf.name = p.name.unwrap_or_else(|| "problem".into());
    pf.registry = p.reg;
    pf.invertible = p.invertible;
    Ok(pf)
}

/// Canonical source text of a problem file.
pub fn print(pf: &ProblemFile) -> String {
    let b = &pf.bundle;
    let p = Printer::new(b, Style::Text);
    let mut out = String::new();
    let join = |v: &[std::sync::Arc<str>]| v.iter().map(|s| &**s).collect::<Vec<_>>().join(" ");
    writeln!(out, "problem {}", pf.name).unwrap();
    writeln!(out, "base {}", join(b.base_names())).unwrap();
    writeln!(out, "fibers {}", join(b.fiber_names())).unwrap();
    if !b.params().is_empty() {
        writeln!(out, "params {}", join(b.params())).unwrap();
    }
    for f in b.functions() {
        let args: Vec<&str> = (0..b.n()).filter(|&k| f.args.contains(k)).map(|k| &*b.base_names()[k]).collect();
        writeln!(out, "function {}({})", f.name, args.join(", ")).unwrap();
    }
    for e in &pf.invertible {
        writeln!(out, "invertible {}", p.expr(e)).unwrap();
    }
    for (n, e) in &pf.densities {
        writeln!(out, "density {n} = {}", p.expr(e)).unwrap();
    }
    let rel = |out: &mut String, pr: &Printer, indent: &str, rows: &[(Atom, Expr)]| {
        for (a, e) in rows {
            writeln!(out, "{indent}{} = {}", pr.atom(a), pr.expr(e)).unwrap();
        }
    };
    for s in &pf.systems {
        writeln!(out, "system {} {{", s.name).unwrap();
        rel(&mut out, &p, "  ", &s.relations);
        writeln!(out, "}}").unwrap();
    }
    for c in &pf.coverings {
        let cp = Printer::new(&c.bundle, Style::Text);
        writeln!(out, "covering {} over {} {{", c.name, c.over).unwrap();
        writeln!(out, "  fibers {}", c.fibers.join(" ")).unwrap();
        rel(&mut out, &cp, "  ", &c.relations);
        if let Some(ch) = &c.chart {
            writeln!(out, "  chart {{").unwrap();
            rel(&mut out, &cp, "    ", ch);
            writeln!(out, "  }}").unwrap();
        }
        writeln!(out, "}}").unwrap();
    }
    for a in &pf.ansatze {
        let sb = pf.scope(&a.on).unwrap_or(b);
        let sp = Printer::new(sb, Style::Text);
        writeln!(out, "ansatz {} on {} {{", a.name, a.on).unwrap();
        for (j, e) in &a.free {
            writeln!(out, "  free {} = {}", sp.atom(j), sp.expr(e)).unwrap();
        }
        for d in &a.directions {
            let comps: Vec<String> = d.iter().map(|e| sp.expr(e)).collect();
            writeln!(out, "  direction {}", comps.join(", ")).unwrap();
        }
        writeln!(out, "  order {}", a.order).unwrap();
        writeln!(out, "}}").unwrap();
    }
    for t in &pf.tasks {
        let scope = t
            .reference("system")
            .and_then(|s| pf.scope(s))
            .or_else(|| t.reference("ansatz").and_then(|a| pf.ansatz(a)).and_then(|a| pf.scope(&a.on)))
            .unwrap_or(b);
        let sp = Printer::new(scope, Style::Text);
        writeln!(out, "task {} {} {{", t.name, t.pipeline.name()).unwrap();
        let mut keys: Vec<&String> = t.args.keys().collect();
        keys.sort_by_key(|k| KEY_ORDER.iter().position(|o| o == k).unwrap_or(KEY_ORDER.len()));
        for k in keys {
            let v = match &t.args[k] {
                Arg::Ref(s) => s.clone(),
                Arg::Names(v) => v.join(" "),
                Arg::Jets(v) => v.iter().map(|a| sp.atom(a)).collect::<Vec<_>>().join(" "),
                Arg::Exprs(v) => v.iter().map(|e| sp.expr(e)).collect::<Vec<_>>().join(", "),
                Arg::Form(f) => sp.form(f),
                Arg::Int(k) => k.to_string(),
                Arg::Operator(rows) => {
                    let ob = operator_bundle(scope);
                    let op = Printer::new(&ob, Style::Text);
                    rows.iter()
                        .map(|r| r.iter().map(|e| op.expr(e)).collect::<Vec<_>>().join(", "))
                        .collect::<Vec<_>>()
                        .join("; ")
                }
            };
            writeln!(out, "  {k} {v}").unwrap();
        }
        writeln!(out, "}}").unwrap();
    }
    out
}
