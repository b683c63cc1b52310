use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_traits::{One, Zero};

use super::atom::{Atom, AtomDerivative};
use super::poly::{coeff_int, Coeff, Monomial, Poly};
use super::registry::InvertibleRegistry;
use crate::error::{Error, Result};

/// Exact rational expression in canonical form.
///
/// The denominator is a product of powers of declared-invertible factors
/// (monic, pairwise coprime). No factor divides the numerator, so two
/// expressions are equal as values iff their representations are equal.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Expr {
    num: Poly,
    den: Vec<(Arc<Poly>, u32)>,
}

impl Expr {
    pub fn zero() -> Self {
        Expr::default()
    }

    pub fn one() -> Self {
        Expr::from_poly(Poly::one())
    }

    pub fn int(n: i64) -> Self {
        Expr::from_poly(Poly::constant(coeff_int(n)))
    }

    pub fn rational(c: Coeff) -> Self {
        Expr::from_poly(Poly::constant(c))
    }

    pub fn atom(a: Atom) -> Self {
        Expr::from_poly(Poly::atom(a))
    }

    pub fn from_poly(p: Poly) -> Self {
        Expr {
            num: p,
            den: Vec::new(),
        }
    }

    /// Build `num / Π den_i^{e_i}` from monic registered factors and cancel.
    pub(crate) fn from_parts(num: Poly, den: Vec<(Arc<Poly>, u32)>) -> Self {
        let mut e = Expr { num, den };
        e.cancel();
        e
    }

    pub fn numerator(&self) -> &Poly {
        &self.num
    }

    pub fn denominator_factors(&self) -> &[(Arc<Poly>, u32)] {
        &self.den
    }

    pub fn denominator(&self) -> Poly {
        self.den
            .iter()
            .fold(Poly::one(), |acc, (p, e)| acc.mul(&p.pow(*e)))
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.is_empty()
    }

    pub fn as_constant(&self) -> Option<Coeff> {
        if self.den.is_empty() {
            self.num.as_constant()
        } else {
            None
        }
    }

    pub fn is_constant(&self) -> bool {
        self.as_constant().is_some()
    }

    fn cancel(&mut self) {
        if self.num.is_zero() {
            self.den.clear();
            return;
        }
        for (p, e) in self.den.iter_mut() {
            while *e > 0 {
                match self.num.exact_div(p) {
                    Some(q) => {
                        self.num = q;
                        *e -= 1;
                    }
                    None => break,
                }
            }
        }
        self.den.retain(|(_, e)| *e > 0);
    }

    fn merged_den(
        a: &[(Arc<Poly>, u32)],
        b: &[(Arc<Poly>, u32)],
        combine: impl Fn(u32, u32) -> u32,
    ) -> Vec<(Arc<Poly>, u32)> {
        let mut map: BTreeMap<Arc<Poly>, (u32, u32)> = BTreeMap::new();
        for (p, e) in a {
            map.entry(p.clone()).or_default().0 = *e;
        }
        for (p, e) in b {
            map.entry(p.clone()).or_default().1 = *e;
        }
        map.into_iter()
            .map(|(p, (x, y))| (p, combine(x, y)))
            .filter(|(_, e)| *e > 0)
            .collect()
    }

    /// Numerator multiplied up to the given (larger) denominator.
    fn lift_num(&self, target: &[(Arc<Poly>, u32)]) -> Poly {
        let mut num = self.num.clone();
        for (p, e) in target {
            let have = self
                .den
                .iter()
                .find(|(q, _)| q == p)
                .map(|(_, e)| *e)
                .unwrap_or(0);
            if *e > have {
                num = num.mul(&p.pow(e - have));
            }
        }
        num
    }

    pub fn add_expr(&self, other: &Expr) -> Expr {
        if other.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return other.clone();
        }
        if self.den == other.den {
            return Expr::from_parts(self.num.add(&other.num), self.den.clone());
        }
        let den = Self::merged_den(&self.den, &other.den, u32::max);
        let num = self.lift_num(&den).add(&other.lift_num(&den));
        Expr::from_parts(num, den)
    }

    pub fn mul_expr(&self, other: &Expr) -> Expr {
        if self.is_zero() || other.is_zero() {
            return Expr::zero();
        }
        let den = Self::merged_den(&self.den, &other.den, |x, y| x + y);
        let num = self.num.mul(&other.num);
        if den.is_empty() {
            return Expr::from_poly(num);
        }
        Expr::from_parts(num, den)
    }

    pub fn scale(&self, c: &Coeff) -> Expr {
        if c.is_zero() {
            return Expr::zero();
        }
        Expr {
            num: self.num.scale(c),
            den: self.den.clone(),
        }
    }

    pub fn pow(&self, e: u32) -> Expr {
        let mut acc = Expr::one();
        for _ in 0..e {
            acc = acc.mul_expr(self);
        }
        acc
    }

    /// Division by an expression whose numerator factors over the registry.
    pub fn div_expr(&self, other: &Expr, reg: &InvertibleRegistry) -> Result<Expr> {
        let (c, factors) = reg.factor(&other.num).ok_or_else(|| Error::DivisionByNonInvertible {
            divisor: format!("{other:?}"),
        })?;
        let inv_num = other.den.iter().fold(Poly::one(), |acc, (p, e)| acc.mul(&p.pow(*e)));
        let inv = Expr::from_parts(inv_num.scale(&c.recip()), factors);
        Ok(self.mul_expr(&inv))
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut s = self.num.atoms();
        for (p, _) in &self.den {
            s.extend(p.atoms());
        }
        s
    }

    pub fn contains_atom(&self, a: &Atom) -> bool {
        self.num.contains_atom(a) || self.den.iter().any(|(p, _)| p.contains_atom(a))
    }

    /// Apply a derivation determined by its values on atoms.
    pub fn derive_with(&self, image: &mut impl FnMut(&Atom) -> Expr) -> Expr {
        let mut cache: HashMap<Atom, Expr> = HashMap::new();
        let mut img = |a: &Atom| -> Expr {
            if let Some(v) = cache.get(a) {
                return v.clone();
            }
            let v = image(a);
            cache.insert(a.clone(), v.clone());
            v
        };
        let inv_den = Expr::from_parts(Poly::one(), self.den.clone());
        let mut out = derive_poly_expr(&self.num, &mut img).mul_expr(&inv_den);
        for (i, (p, e)) in self.den.iter().enumerate() {
            let dp = derive_poly_expr(p, &mut img);
            if dp.is_zero() {
                continue;
            }
            // −e·N·p'/(D·p)
            let mut den = self.den.clone();
            den[i].1 += 1;
            let term = Expr::from_parts(self.num.clone(), den).mul_expr(&dp);
            out = out.add_expr(&term.scale(&coeff_int(-(*e as i64))));
        }
        out
    }

    /// Formal partial derivative treating distinct atoms as independent.
    pub fn diff(&self, a: &Atom) -> Expr {
        if !self.contains_atom(a) {
            return Expr::zero();
        }
        self.derive_with(&mut |b| if b == a { Expr::one() } else { Expr::zero() })
    }

    /// Total derivative along `x^k` on the free jet space.
    pub fn total_derivative(&self, k: usize) -> Expr {
        self.derive_with(&mut |a| match a.total_derivative(k) {
            None => Expr::zero(),
            Some(AtomDerivative::One) => Expr::one(),
            Some(AtomDerivative::Atom(b)) => Expr::atom(b),
        })
    }

    /// Simultaneous substitution of atoms followed by normalization.
    pub fn substitute(
        &self,
        bindings: &impl Fn(&Atom) -> Option<Expr>,
        reg: &InvertibleRegistry,
    ) -> Result<Expr> {
        let mut pow_cache: HashMap<(Atom, u32), Expr> = HashMap::new();
        let mut eval_poly = |p: &Poly| -> (Expr, bool) {
            let mut acc = Expr::zero();
            let mut plain = Poly::zero();
            let mut touched = false;
            for (m, c) in p.terms() {
                let mut rest = Vec::new();
                let mut val = Expr::rational(c.clone());
                let mut any = false;
                for (a, e) in m.factors() {
                    match bindings(a) {
                        Some(v) => {
                            any = true;
                            let pw = pow_cache
                                .entry((a.clone(), *e))
                                .or_insert_with(|| v.pow(*e))
                                .clone();
                            val = val.mul_expr(&pw);
                        }
                        None => rest.push((a.clone(), *e)),
                    }
                }
                if any {
                    touched = true;
                    let rest = Poly::from_terms([(Monomial::from_pairs(rest), Coeff::one())]);
                    acc = acc.add_expr(&val.mul_expr(&Expr::from_poly(rest)));
                } else {
                    plain.add_term(m.clone(), c.clone());
                }
            }
            (acc.add_expr(&Expr::from_poly(plain)), touched)
        };
        let (num, touched) = eval_poly(&self.num);
        let mut kept = Vec::new();
        let mut moved = Expr::one();
        for (p, e) in &self.den {
            let (v, t) = eval_poly(p);
            if t {
                moved = moved.mul_expr(&v.pow(*e));
            } else {
                kept.push((p.clone(), *e));
            }
        }
        if !touched && kept.len() == self.den.len() {
            return Ok(self.clone());
        }
        let base = num.mul_expr(&Expr::from_parts(Poly::one(), kept));
        if moved == Expr::one() {
            return Ok(base);
        }
        base.div_expr(&moved, reg)
    }

    pub fn substitute_map(&self, map: &HashMap<Atom, Expr>, reg: &InvertibleRegistry) -> Result<Expr> {
        if map.is_empty() {
            return Ok(self.clone());
        }
        self.substitute(&|a| map.get(a).cloned(), reg)
    }

    pub fn is_linear_in(&self, atoms: &BTreeSet<Atom>) -> bool {
        if self.den.iter().any(|(p, _)| atoms.iter().any(|a| p.contains_atom(a))) {
            return false;
        }
        self.num
            .terms()
            .all(|(m, _)| m.factors().iter().filter(|(a, _)| atoms.contains(a)).map(|(_, e)| e).sum::<u32>() <= 1)
    }

    pub fn max_jet_order(&self) -> u32 {
        self.atoms()
            .iter()
            .filter_map(|a| a.jet_parts().map(|(_, m)| m.order()))
            .max()
            .unwrap_or(0)
    }
}

pub(crate) fn derive_poly_expr(p: &Poly, image: &mut impl FnMut(&Atom) -> Expr) -> Expr {
    let mut out = Expr::zero();
    let mut acc = Poly::zero();
    for a in p.atoms() {
        let img = image(&a);
        if img.is_zero() {
            continue;
        }
        let dp = p.partial(&a);
        if img.is_polynomial() {
            acc = acc.add(&dp.mul(&img.num));
        } else {
            out = out.add_expr(&Expr::from_poly(dp).mul_expr(&img));
        }
    }
    out.add_expr(&Expr::from_poly(acc))
}

macro_rules! binop {
    ($tr:ident, $f:ident, $body:expr) => {
        impl $tr<&Expr> for &Expr {
            type Output = Expr;
            fn $f(self, rhs: &Expr) -> Expr {
                $body(self, rhs)
            }
        }
        impl $tr<Expr> for Expr {
            type Output = Expr;
            fn $f(self, rhs: Expr) -> Expr {
                $body(&self, &rhs)
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $f(self, rhs: &Expr) -> Expr {
                $body(&self, rhs)
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $f(self, rhs: Expr) -> Expr {
                $body(self, &rhs)
            }
        }
    };
}

binop!(Add, add, |a: &Expr, b: &Expr| a.add_expr(b));
binop!(Sub, sub, |a: &Expr, b: &Expr| a.add_expr(&-b));
binop!(Mul, mul, |a: &Expr, b: &Expr| a.mul_expr(b));

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr {
            num: self.num.neg(),
            den: self.den.clone(),
        }
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -&self
    }
}

impl std::iter::Sum for Expr {
    fn sum<I: Iterator<Item = Expr>>(iter: I) -> Expr {
        iter.fold(Expr::zero(), |a, b| a.add_expr(&b))
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let poly = |p: &Poly, f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if p.is_zero() {
                return write!(f, "0");
            }
            for (i, (m, c)) in p.terms().rev().enumerate() {
                if i > 0 {
                    write!(f, " + ")?;
                }
                write!(f, "{c}")?;
                for (a, e) in m.factors() {
                    if *e == 1 {
                        write!(f, "*{a:?}")?;
                    } else {
                        write!(f, "*{a:?}^{e}")?;
                    }
                }
            }
            Ok(())
        };
        write!(f, "(")?;
        poly(&self.num, f)?;
        write!(f, ")")?;
        for (p, e) in &self.den {
            write!(f, "/(")?;
            poly(p, f)?;
            write!(f, ")^{e}")?;
        }
        Ok(())
    }
}
