//! Euler operator, Noether forms, C-differential operators and their adjoints.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forms::{Basis, Context, Form};
use crate::jetspace::total_derivative_multi;
use crate::symexpr::{coeff_int, Atom, Expr, MultiIndex};

/// A dependent symbol for variational derivatives.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dependent {
    Fiber(usize),
    Function(Arc<str>),
}

impl Dependent {
    fn index_of<'a>(&self, a: &'a Atom) -> Option<&'a MultiIndex> {
        match (self, a) {
            (Dependent::Fiber(i), Atom::Jet { fiber, index }) if fiber == i => Some(index),
            (Dependent::Function(f), Atom::Func { name, index, .. }) if name == f => Some(index),
            _ => None,
        }
    }

    pub fn fibers(m: usize) -> Vec<Dependent> {
        (0..m).map(Dependent::Fiber).collect()
    }
}

/// Components `ψ_i` of the source form `Σ ψ_i θ^i_0 ∧ vol`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceForm(pub Vec<Expr>);

impl SourceForm {
    pub fn components(&self) -> &[Expr] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Expr::is_zero)
    }

    /// The source form as a contact `(n+1)`-form on free jets.
    pub fn to_form(&self, n: usize) -> Form {
        Form::from_products(
            self.0.iter().enumerate().map(|(i, c)| {
                let mut w = vec![Basis::Theta {
                    fiber: i,
                    index: MultiIndex::zero(n),
                }];
                w.extend((0..n).map(Basis::Dx));
                (c.clone(), w)
            }),
            Context::Free,
        )
    }
}

/// Variational derivative `Σ_α (−1)^|α| D_α(∂λ/∂s_α)` for each dependent `s`.
pub fn euler(lambda: &Expr, deps: &[Dependent]) -> SourceForm {
    let atoms = lambda.atoms();
    SourceForm(
        deps.iter()
            .map(|d| {
                atoms
                    .iter()
                    .filter_map(|a| d.index_of(a).map(|alpha| (a, alpha)))
                    .map(|(a, alpha)| {
                        let t = total_derivative_multi(&lambda.diff(a), alpha);
                        if alpha.order() % 2 == 0 {
                            t
                        } else {
                            -t
                        }
                    })
                    .sum()
            })
            .collect(),
    )
}

/// `ι_k vol = (−1)^k dx^0 ∧ … ∧ dx^{k−1} ∧ dx^{k+1} ∧ … ∧ dx^{n−1}` (0-based `k`).
pub(crate) fn inner_volume(n: usize, k: usize) -> (i64, Vec<Basis>) {
    let sign = if k.is_multiple_of(2) { 1 } else { -1 };
    (sign, (0..n).filter(|&j| j != k).map(Basis::Dx).collect())
}

/// The coefficients `B^k = Σ c^k_{iβ} D_β φ^i` from integrating `E_φ(λ)` by parts.
///
/// Keys are `(k, fiber, β)`. Variables are peeled in index order; `skip`
/// goes last.
pub fn noether_coefficients(lambda: &Expr, n: usize, skip: Option<usize>) -> BTreeMap<(usize, usize, MultiIndex), Expr> {
    let mut work: BTreeMap<(u32, usize, MultiIndex), Expr> = BTreeMap::new();
    for a in lambda.atoms() {
        if let Atom::Jet { fiber, index } = &a {
            if index.order() > 0 {
                let p = lambda.diff(&a);
                add_to(&mut work, (index.order(), *fiber, index.clone()), p);
            }
        }
    }
    let mut out = BTreeMap::new();
    while let Some(((_, fiber, alpha), p)) = work.pop_last() {
        let k = (0..n)
            .filter(|&k| Some(k) != skip)
            .find(|&k| alpha.get(k) > 0)
            .unwrap_or_else(|| skip.expect("nonzero multi-index"));
        let lower = alpha.decremented(k).unwrap();
        let dp = -p.total_derivative(k);
        add_to(&mut out, (k, fiber, lower.clone()), p);
        if lower.order() > 0 {
            add_to(&mut work, (lower.order(), fiber, lower), dp);
        }
    }
    out
}

fn add_to<K: Ord>(map: &mut BTreeMap<K, Expr>, key: K, v: Expr) {
    if v.is_zero() {
        return;
    }
    match map.entry(key) {
        std::collections::btree_map::Entry::Vacant(e) => {
            e.insert(v);
        }
        std::collections::btree_map::Entry::Occupied(mut e) => {
            let s = e.get() + &v;
            if s.is_zero() {
                e.remove();
            } else {
                *e.get_mut() = s;
            }
        }
    }
}

/// Noether form `ω_L = Σ c^k_{iβ} θ^i_β ∧ ι_k vol` on the free jet space.
pub fn noether_form(lambda: &Expr, n: usize, skip: Option<usize>) -> Form {
    Form::from_products(
        noether_coefficients(lambda, n, skip).into_iter().map(|((k, fiber, beta), c)| {
            let (s, rest) = inner_volume(n, k);
            let mut w = vec![Basis::Theta { fiber, index: beta }];
            w.extend(rest);
            (c.scale(&coeff_int(s)), w)
        }),
        Context::Free,
    )
}

/// `Σ_α a^α D_α`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DiffPoly(pub BTreeMap<MultiIndex, Expr>);

impl DiffPoly {
    pub fn zero() -> Self {
        DiffPoly::default()
    }

    pub fn scalar(e: Expr, n: usize) -> Self {
        let mut p = DiffPoly::zero();
        p.add_term(MultiIndex::zero(n), e);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_term(&mut self, alpha: MultiIndex, a: Expr) {
        add_to(&mut self.0, alpha, a);
    }

    pub fn add(&self, other: &DiffPoly) -> DiffPoly {
        let mut out = self.clone();
        for (a, c) in &other.0 {
            out.add_term(a.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> DiffPoly {
        DiffPoly(self.0.iter().map(|(a, c)| (a.clone(), -c)).collect())
    }

    /// `(a D_α) ∘ (b D_β) = Σ_{γ ≤ α} C(α, γ) a D_γ(b) D_{α−γ+β}`.
    pub fn compose(&self, other: &DiffPoly) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (alpha, a) in &self.0 {
            let subs = alpha.sub_indices();
            for (beta, b) in &other.0 {
                for (gamma, c) in &subs {
                    let db = total_derivative_multi(b, gamma);
                    if db.is_zero() {
                        continue;
                    }
                    let idx = alpha.checked_sub(gamma).unwrap().add(beta);
                    out.add_term(idx, (a * &db).scale(&coeff_int(*c as i64)));
                }
            }
        }
        out
    }

    /// `(a D_α)^* = (−1)^|α| Σ_{β ≤ α} C(α, β) D_{α−β}(a) D_β`.
    pub fn adjoint(&self) -> DiffPoly {
        let mut out = DiffPoly::zero();
        for (alpha, a) in &self.0 {
            let sign = if alpha.order() % 2 == 0 { 1 } else { -1 };
            for (beta, c) in alpha.sub_indices() {
                let rest = alpha.checked_sub(&beta).unwrap();
                let da = total_derivative_multi(a, &rest);
                out.add_term(beta, da.scale(&coeff_int(sign * c as i64)));
            }
        }
        out
    }

    pub fn apply(&self, p: &Expr) -> Expr {
        self.0.iter().map(|(alpha, a)| a * &total_derivative_multi(p, alpha)).sum()
    }

    pub fn map_coefficients(&self, mut f: impl FnMut(&Expr) -> Result<Expr>) -> Result<DiffPoly> {
        let mut out = DiffPoly::zero();
        for (a, c) in &self.0 {
            out.add_term(a.clone(), f(c)?);
        }
        Ok(out)
    }
}

/// Matrix of `DiffPoly` entries acting on vectors of expressions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CDiffOperator {
    n: usize,
    entries: Vec<Vec<DiffPoly>>,
    cols: usize,
}

impl CDiffOperator {
    pub fn zero(rows: usize, cols: usize, n: usize) -> Self {
        CDiffOperator {
            n,
            entries: vec![vec![DiffPoly::zero(); cols]; rows],
            cols,
        }
    }

    pub fn identity(m: usize, n: usize) -> Self {
        let mut op = CDiffOperator::zero(m, m, n);
        for i in 0..m {
            op.entries[i][i] = DiffPoly::scalar(Expr::one(), n);
        }
        op
    }

    /// `D_α` on a single component.
    pub fn total_derivative(n: usize, alpha: MultiIndex) -> Self {
        let mut op = CDiffOperator::zero(1, 1, n);
        op.entries[0][0].add_term(alpha, Expr::one());
        op
    }

    pub fn from_entries(n: usize, entries: Vec<Vec<DiffPoly>>) -> Result<Self> {
        let cols = entries.first().map_or(0, Vec::len);
        if entries.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged operator matrix".into()));
        }
        Ok(CDiffOperator { n, entries, cols })
    }

    /// The linearization `l_F` with entries `Σ_α ∂F_j/∂u^i_α D_α`.
    pub fn linearization(f: &[Expr], m: usize, n: usize) -> Self {
        let mut op = CDiffOperator::zero(f.len(), m, n);
        for (j, fj) in f.iter().enumerate() {
            for a in fj.atoms() {
                if let Atom::Jet { fiber, index } = &a {
                    op.entries[j][*fiber].add_term(index.clone(), fj.diff(&a));
                }
            }
        }
        op
    }

    pub fn rows(&self) -> usize {
        self.entries.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, i: usize, j: usize) -> &DiffPoly {
        &self.entries[i][j]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().flatten().all(DiffPoly::is_zero)
    }

    pub fn compose(&self, other: &CDiffOperator) -> Result<CDiffOperator> {
        if self.cols != other.rows() {
            return Err(Error::ShapeMismatch(format!(
                "cannot compose {}x{} with {}x{}",
                self.rows(),
                self.cols,
                other.rows(),
                other.cols
            )));
        }
        let mut out = CDiffOperator::zero(self.rows(), other.cols, self.n);
        for i in 0..self.rows() {
            for j in 0..other.cols {
                let mut acc = DiffPoly::zero();
                for l in 0..self.cols {
                    acc = acc.add(&self.entries[i][l].compose(&other.entries[l][j]));
                }
                out.entries[i][j] = acc;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &CDiffOperator) -> Result<CDiffOperator> {
        if self.rows() != other.rows() || self.cols != other.cols {
            return Err(Error::ShapeMismatch("operands differ in shape".into()));
        }
        let mut out = self.clone();
        for (r, o) in out.entries.iter_mut().zip(&other.entries) {
            for (a, b) in r.iter_mut().zip(o) {
                *a = a.add(b);
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &CDiffOperator) -> Result<CDiffOperator> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> CDiffOperator {
        let mut out = self.clone();
        for e in out.entries.iter_mut().flatten() {
            *e = e.neg();
        }
        out
    }

    /// Formal adjoint: adjoint entries, transposed.
    pub fn adjoint(&self) -> CDiffOperator {
        let mut out = CDiffOperator::zero(self.cols, self.rows(), self.n);
        for (i, r) in self.entries.iter().enumerate() {
            for (j, e) in r.iter().enumerate() {
                out.entries[j][i] = e.adjoint();
            }
        }
        out
    }

    pub fn apply(&self, p: &[Expr]) -> Result<Vec<Expr>> {
        if p.len() != self.cols {
            return Err(Error::ShapeMismatch(format!("operator takes {} components, got {}", self.cols, p.len())));
        }
        Ok(self
            .entries
            .iter()
            .map(|r| r.iter().zip(p).map(|(e, x)| e.apply(x)).sum())
            .collect())
    }

    pub fn map_coefficients(&self, mut f: impl FnMut(&Expr) -> Result<Expr>) -> Result<CDiffOperator> {
        let mut out = self.clone();
        for e in out.entries.iter_mut().flatten() {
            *e = e.map_coefficients(&mut f)?;
        }
        Ok(out)
    }
}

/// `A_ij = Σ_{|α|=|β|=k} ∂²λ/∂u^i_α∂u^j_β ξ^{α+β}`.
pub fn nondegeneracy_matrix(lambda: &Expr, m: usize, k: u32, xi: &[Expr]) -> Vec<Vec<Expr>> {
    let n = xi.len();
    let top = MultiIndex::all_of_order(n, k);
    let xi_pow = |g: &MultiIndex| -> Expr {
        g.exponents()
            .iter()
            .zip(xi)
            .fold(Expr::one(), |acc, (&e, x)| acc * x.pow(u32::from(e)))
    };
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut acc = Expr::zero();
                    for a in &top {
                        let da = lambda.diff(&Atom::jet(i, a.clone()));
                        if da.is_zero() {
                            continue;
                        }
                        for b in &top {
                            let dab = da.diff(&Atom::jet(j, b.clone()));
                            if !dab.is_zero() {
                                acc = acc + dab * xi_pow(&a.add(b));
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}
