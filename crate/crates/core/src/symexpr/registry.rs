use std::sync::Arc;

use num_traits::Zero;

use super::atom::Atom;
use super::expr::Expr;
use super::poly::{Coeff, Poly};

/// Generator powers `g_i^{e_i}` of a factorization.
pub type Factors = Vec<(Arc<Poly>, u32)>;

/// Multiplicative set of expressions that may appear in denominators.
///
/// Stored as monic generators assumed pairwise coprime. A declared monomial
/// registers each of its atoms; any other polynomial registers what remains
/// after dividing out the generators already present.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InvertibleRegistry {
    generators: Vec<Arc<Poly>>,
}

impl InvertibleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn generators(&self) -> &[Arc<Poly>] {
        &self.generators
    }

    /// Declare an expression invertible. Its numerator and denominator both
    /// join the multiplicative set.
    pub fn declare(&mut self, e: &Expr) {
        self.declare_poly(e.numerator());
        for (p, _) in e.denominator_factors() {
            self.declare_poly(p);
        }
    }

    pub fn declare_poly(&mut self, p: &Poly) {
        if p.is_zero() || p.as_constant().is_some() {
            return;
        }
        if p.is_single_monomial() {
            let (m, _) = p.leading().unwrap();
            let atoms: Vec<Atom> = m.factors().iter().map(|(a, _)| a.clone()).collect();
            for a in atoms {
                self.insert(Poly::atom(a));
            }
            return;
        }
        let mut rest = p.clone();
        for g in &self.generators {
            while let Some(q) = rest.exact_div(g) {
                rest = q;
            }
        }
        if rest.as_constant().is_none() {
            let (_, m) = rest.monic();
            self.insert(m);
        }
    }

    fn insert(&mut self, p: Poly) {
        if !self.generators.iter().any(|g| **g == p) {
            self.generators.push(Arc::new(p));
            self.generators.sort();
        }
    }

    pub fn is_invertible(&self, e: &Expr) -> bool {
        self.factor(e.numerator()).is_some()
    }

    /// Write `p = c · Π g_i^{e_i}` over the generators, if possible.
    pub fn factor(&self, p: &Poly) -> Option<(Coeff, Factors)> {
        if p.is_zero() {
            return None;
        }
        let mut rest = p.clone();
        let mut out = Vec::new();
        for g in &self.generators {
            let mut e = 0;
            while let Some(q) = rest.exact_div(g) {
                rest = q;
                e += 1;
            }
            if e > 0 {
                out.push((g.clone(), e));
            }
        }
        let c = rest.as_constant()?;
        (!c.is_zero()).then_some((c, out))
    }
}
