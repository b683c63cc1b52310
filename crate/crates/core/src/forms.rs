//! Differential forms on jets and on equation manifolds.

use std::collections::BTreeMap;
use std::fmt;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::jetspace::Characteristic;
use crate::symexpr::{Atom, Expr, InvertibleRegistry, MultiIndex};

/// Coframe element. Horizontal covectors precede contact forms.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Basis {
    Dx(usize),
    Theta { fiber: usize, index: MultiIndex },
}

impl Basis {
    pub fn is_contact(&self) -> bool {
        matches!(self, Basis::Theta { .. })
    }

    pub fn theta_of(a: &Atom) -> Option<Basis> {
        a.jet_parts().map(|(fiber, index)| Basis::Theta {
            fiber,
            index: index.clone(),
        })
    }
}

impl fmt::Debug for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Basis::Dx(k) => write!(f, "dx{k}"),
            Basis::Theta { fiber, index } => write!(f, "th{fiber}{index:?}"),
        }
    }
}

/// Strictly increasing wedge word.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(SmallVec<[Basis; 4]>);

impl Word {
    pub fn empty() -> Self {
        Word::default()
    }

    pub fn single(b: Basis) -> Self {
        Word(SmallVec::from_elem(b, 1))
    }

    /// Sort the factors; returns the sign, or `None` if a factor repeats.
    pub fn normalize(mut factors: SmallVec<[Basis; 4]>) -> Option<(i64, Word)> {
        let mut sign = 1;
        // insertion sort counts transpositions
        for i in 1..factors.len() {
            let mut j = i;
            while j > 0 && factors[j - 1] > factors[j] {
                factors.swap(j - 1, j);
                sign = -sign;
                j -= 1;
            }
            if j > 0 && factors[j - 1] == factors[j] {
                return None;
            }
        }
        Some((sign, Word(factors)))
    }

    pub fn factors(&self) -> &[Basis] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn contact_degree(&self) -> usize {
        self.0.iter().filter(|b| b.is_contact()).count()
    }

    pub fn horizontal_degree(&self) -> usize {
        self.degree() - self.contact_degree()
    }

    pub fn wedge(&self, other: &Word) -> Option<(i64, Word)> {
        let mut f = self.0.clone();
        f.extend(other.0.iter().cloned());
        Word::normalize(f)
    }

    fn without(&self, j: usize) -> Word {
        let mut f = self.0.clone();
        f.remove(j);
        Word(f)
    }

    pub fn volume(n: usize) -> Word {
        Word((0..n).map(Basis::Dx).collect())
    }
}

impl fmt::Debug for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0.as_slice())
    }
}

/// Which space a form lives on.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default)]
pub enum Context {
    #[default]
    Free,
    Manifold(u64),
}

/// Coordinates in which forms are expressed: total derivatives and the
/// expansion of an arbitrary contact form in the frame's coframe.
pub trait Frame {
    fn n(&self) -> usize;
    fn context(&self) -> Context;
    fn registry(&self) -> &InvertibleRegistry;
    fn total_derivative(&self, e: &Expr, k: usize) -> Result<Expr>;
    fn theta(&self, fiber: usize, index: &MultiIndex) -> Result<Vec<(Basis, Expr)>>;

    fn total_derivative_multi(&self, e: &Expr, alpha: &MultiIndex) -> Result<Expr> {
        let mut out = e.clone();
        for (k, &c) in alpha.exponents().iter().enumerate() {
            for _ in 0..c {
                if out.is_zero() {
                    return Ok(out);
                }
                out = self.total_derivative(&out, k)?;
            }
        }
        Ok(out)
    }
}

/// The free jet space over `n` base variables.
#[derive(Clone, Debug, Default)]
pub struct FreeJets {
    n: usize,
    reg: InvertibleRegistry,
}

impl FreeJets {
    pub fn new(n: usize, reg: InvertibleRegistry) -> Self {
        FreeJets { n, reg }
    }
}

impl Frame for FreeJets {
    fn n(&self) -> usize {
        self.n
    }

    fn context(&self) -> Context {
        Context::Free
    }

    fn registry(&self) -> &InvertibleRegistry {
        &self.reg
    }

    fn total_derivative(&self, e: &Expr, k: usize) -> Result<Expr> {
        Ok(e.total_derivative(k))
    }

    fn theta(&self, fiber: usize, index: &MultiIndex) -> Result<Vec<(Basis, Expr)>> {
        Ok(vec![(
            Basis::Theta {
                fiber,
                index: index.clone(),
            },
            Expr::one(),
        )])
    }
}

/// Finite sum of coefficient times normalized wedge word.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Form {
    ctx: Context,
    terms: BTreeMap<Word, Expr>,
}

impl Form {
    pub fn zero(ctx: Context) -> Self {
        Form {
            ctx,
            terms: BTreeMap::new(),
        }
    }

    pub fn function(e: Expr, ctx: Context) -> Self {
        Form::term(e, Word::empty(), ctx)
    }

    pub fn term(c: Expr, w: Word, ctx: Context) -> Self {
        let mut f = Form::zero(ctx);
        f.add_term(w, c);
        f
    }

    pub fn basis(b: Basis, ctx: Context) -> Self {
        Form::term(Expr::one(), Word::single(b), ctx)
    }

    pub fn dx(k: usize, ctx: Context) -> Self {
        Form::basis(Basis::Dx(k), ctx)
    }

    pub fn theta(fiber: usize, index: MultiIndex, ctx: Context) -> Self {
        Form::basis(Basis::Theta { fiber, index }, ctx)
    }

    pub fn volume(n: usize, c: Expr, ctx: Context) -> Self {
        Form::term(c, Word::volume(n), ctx)
    }

    /// Build from unnormalized factor lists.
    pub fn from_products(it: impl IntoIterator<Item = (Expr, Vec<Basis>)>, ctx: Context) -> Self {
        let mut f = Form::zero(ctx);
        for (c, bs) in it {
            if let Some((s, w)) = Word::normalize(bs.into_iter().collect()) {
                f.add_term(w, c.scale(&crate::symexpr::coeff_int(s)));
            }
        }
        f
    }

    pub fn context(&self) -> Context {
        self.ctx
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Expr)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, w: &Word) -> Expr {
        self.terms.get(w).cloned().unwrap_or_default()
    }

    pub fn add_term(&mut self, w: Word, c: Expr) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(w) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = o.get().add_expr(&c);
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn check(&self, other: &Form) -> Result<()> {
        if self.ctx != other.ctx {
            return Err(Error::ContextMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &Form) -> Result<Form> {
        self.check(other)?;
        let mut out = self.clone();
        for (w, c) in &other.terms {
            out.add_term(w.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Form) -> Result<Form> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Form {
        self.scale(&-Expr::one())
    }

    pub fn scale(&self, e: &Expr) -> Form {
        let mut out = Form::zero(self.ctx);
        if e.is_zero() {
            return out;
        }
        for (w, c) in &self.terms {
            out.add_term(w.clone(), c.mul_expr(e));
        }
        out
    }

    pub fn wedge(&self, other: &Form) -> Result<Form> {
        self.check(other)?;
        let mut out = Form::zero(self.ctx);
        for (wa, ca) in &self.terms {
            for (wb, cb) in &other.terms {
                if let Some((s, w)) = wa.wedge(wb) {
                    out.add_term(w, ca.mul_expr(cb).scale(&crate::symexpr::coeff_int(s)));
                }
            }
        }
        Ok(out)
    }

    pub fn map_coefficients(&self, mut f: impl FnMut(&Expr) -> Result<Expr>) -> Result<Form> {
        let mut out = Form::zero(self.ctx);
        for (w, c) in &self.terms {
            out.add_term(w.clone(), f(c)?);
        }
        Ok(out)
    }

    /// Terms with contact degree at least `p`.
    pub fn contact_filter(&self, p: usize) -> Form {
        self.filter(|w| w.contact_degree() >= p)
    }

    /// The purely horizontal terms.
    pub fn horizontal_part(&self) -> Form {
        self.filter(|w| w.contact_degree() == 0)
    }

    fn filter(&self, keep: impl Fn(&Word) -> bool) -> Form {
        Form {
            ctx: self.ctx,
            terms: self.terms.iter().filter(|(w, _)| keep(w)).map(|(w, c)| (w.clone(), c.clone())).collect(),
        }
    }

    pub fn min_contact_degree(&self) -> Option<usize> {
        self.terms.keys().map(Word::contact_degree).min()
    }

    pub fn is_horizontal(&self) -> bool {
        self.terms.keys().all(|w| w.contact_degree() == 0)
    }

    /// Distinct `(horizontal, contact)` bidegrees present.
    pub fn bidegrees(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = self
            .terms
            .keys()
            .map(|w| (w.horizontal_degree(), w.contact_degree()))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Graded interior product with the vector whose pairing with each basis
    /// element is given.
    pub fn contract_with(&self, mut pair: impl FnMut(&Basis) -> Result<Expr>) -> Result<Form> {
        let mut out = Form::zero(self.ctx);
        let mut cache: BTreeMap<Basis, Expr> = BTreeMap::new();
        for (w, c) in &self.terms {
            for (j, b) in w.factors().iter().enumerate() {
                let v = match cache.get(b) {
                    Some(v) => v.clone(),
                    None => {
                        let v = pair(b)?;
                        cache.insert(b.clone(), v.clone());
                        v
                    }
                };
                if v.is_zero() {
                    continue;
                }
                let s = if j % 2 == 0 { 1 } else { -1 };
                out.add_term(w.without(j), c.mul_expr(&v).scale(&crate::symexpr::coeff_int(s)));
            }
        }
        Ok(out)
    }

    pub fn contract_field(&self, v: &CartanField) -> Result<Form> {
        if v.ctx != self.ctx {
            return Err(Error::ContextMismatch);
        }
        self.contract_with(|b| {
            Ok(match b {
                Basis::Dx(k) => v.horizontal.get(*k).cloned().unwrap_or_default(),
                Basis::Theta { fiber, index } => v.vertical.get(&(*fiber, index.clone())).cloned().unwrap_or_default(),
            })
        })
    }

    /// Interior product with the evolutionary field `E_φ` (restricted to the frame).
    pub fn contract_evolutionary(&self, phi: &Characteristic, frame: &dyn Frame) -> Result<Form> {
        if frame.context() != self.ctx {
            return Err(Error::ContextMismatch);
        }
        self.contract_with(|b| match b {
            Basis::Dx(_) => Ok(Expr::zero()),
            Basis::Theta { fiber, index } => {
                let base = phi.components().get(*fiber).cloned().unwrap_or_default();
                frame.total_derivative_multi(&base, index)
            }
        })
    }

    /// Exterior derivative computed in the given frame.
    pub fn exterior_d(&self, frame: &dyn Frame) -> Result<Form> {
        if frame.context() != self.ctx {
            return Err(Error::ContextMismatch);
        }
        let mut out = Form::zero(self.ctx);
        let mut dtheta: BTreeMap<Basis, Form> = BTreeMap::new();
        for (w, c) in &self.terms {
            let dc = d_function(c, frame)?;
            out = out.add(&dc.wedge(&Form::term(Expr::one(), w.clone(), self.ctx))?)?;
            for (j, b) in w.factors().iter().enumerate() {
                let Basis::Theta { fiber, index } = b else { continue };
                if !dtheta.contains_key(b) {
                    let mut acc = Form::zero(self.ctx);
                    for k in 0..frame.n() {
                        for (tb, tc) in frame.theta(*fiber, &index.incremented(k))? {
                            acc = acc.add(&Form::from_products([(tc, vec![Basis::Dx(k), tb])], self.ctx))?;
                        }
                    }
                    dtheta.insert(b.clone(), acc);
                }
                let db = &dtheta[b];
                if db.is_zero() {
                    continue;
                }
                let head = Form::term(Expr::one(), Word(w.factors()[..j].iter().cloned().collect()), self.ctx);
                let tail = Form::term(Expr::one(), Word(w.factors()[j + 1..].iter().cloned().collect()), self.ctx);
                let s = if j % 2 == 0 { Expr::one() } else { -Expr::one() };
                let piece = head.wedge(db)?.wedge(&tail)?.scale(&c.mul_expr(&s));
                out = out.add(&piece)?;
            }
        }
        Ok(out)
    }

    /// `d_h` on a horizontal form: `Σ dx^k ∧ D_k(coefficient)`.
    pub fn horizontal_d(&self, frame: &dyn Frame) -> Result<Form> {
        if !self.is_horizontal() {
            return Err(Error::NotHorizontal);
        }
        if frame.context() != self.ctx {
            return Err(Error::ContextMismatch);
        }
        let mut out = Form::zero(self.ctx);
        for (w, c) in &self.terms {
            for k in 0..frame.n() {
                let dk = frame.total_derivative(c, k)?;
                if dk.is_zero() {
                    continue;
                }
                let mut f: SmallVec<[Basis; 4]> = SmallVec::new();
                f.push(Basis::Dx(k));
                f.extend(w.factors().iter().cloned());
                if let Some((s, nw)) = Word::normalize(f) {
                    out.add_term(nw, dk.scale(&crate::symexpr::coeff_int(s)));
                }
            }
        }
        Ok(out)
    }
}

/// `df = Σ D_k f dx^k + Σ ∂f/∂u θ_u` in the frame.
pub fn d_function(f: &Expr, frame: &dyn Frame) -> Result<Form> {
    let ctx = frame.context();
    let mut out = Form::zero(ctx);
    if f.is_constant() {
        return Ok(out);
    }
    for k in 0..frame.n() {
        out.add_term(Word::single(Basis::Dx(k)), frame.total_derivative(f, k)?);
    }
    for a in f.atoms() {
        let Some((fiber, index)) = a.jet_parts() else { continue };
        let p = f.diff(&a);
        for (b, c) in frame.theta(fiber, index)? {
            out.add_term(Word::single(b), p.mul_expr(&c));
        }
    }
    Ok(out)
}

/// A field in the Cartan distribution plus vertical components:
/// `Σ c^k D_k + Σ v_{iα} ∂/∂u^i_α`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CartanField {
    pub ctx: Context,
    pub horizontal: Vec<Expr>,
    pub vertical: BTreeMap<(usize, MultiIndex), Expr>,
}

impl CartanField {
    pub fn horizontal(ctx: Context, components: Vec<Expr>) -> Self {
        CartanField {
            ctx,
            horizontal: components,
            vertical: BTreeMap::new(),
        }
    }

    pub fn vertical(ctx: Context, components: BTreeMap<(usize, MultiIndex), Expr>) -> Self {
        CartanField {
            ctx,
            horizontal: Vec::new(),
            vertical: components,
        }
    }
}

impl fmt::Debug for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (w, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c:?}){w:?}")?;
        }
        Ok(())
    }
}
