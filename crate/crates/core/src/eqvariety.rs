//! Infinitely prolonged systems in solved form.

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::forms::{Basis, Context, Form, Frame, Word};
use crate::jetspace::{linearize, Bundle, Characteristic};
use crate::symexpr::{Atom, AtomDerivative, Expr, InvertibleRegistry, MultiIndex};
use crate::varcalc::CDiffOperator;

pub const DEFAULT_MAX_ORDER: u32 = 12;

/// Jet-order cap from `JETVAR_MAX_ORDER`, falling back to the default.
pub fn max_order_from_env() -> u32 {
    std::env::var("JETVAR_MAX_ORDER")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_ORDER)
}

type Coord = (usize, MultiIndex);

/// A PDE system `u^i_γ = h(internal coordinates)` together with all its
/// differential consequences, computed on demand.
#[derive(Debug)]
pub struct EquationManifold {
    bundle: Bundle,
    relations: BTreeMap<Coord, Expr>,
    leaders: Vec<Vec<MultiIndex>>,
    reg: InvertibleRegistry,
    max_order: u32,
    id: u64,
    cache: RwLock<HashMap<Coord, Expr>>,
}

impl Clone for EquationManifold {
    fn clone(&self) -> Self {
        EquationManifold {
            bundle: self.bundle.clone(),
            relations: self.relations.clone(),
            leaders: self.leaders.clone(),
            reg: self.reg.clone(),
            max_order: self.max_order,
            id: self.id,
            cache: RwLock::new(self.cache.read().unwrap().clone()),
        }
    }
}

impl EquationManifold {
    /// Build from solved relations `leader ↦ rhs`.
    pub fn build(bundle: Bundle, relations: Vec<(Atom, Expr)>, reg: InvertibleRegistry) -> Result<Self> {
        Self::build_with_order(bundle, relations, reg, max_order_from_env())
    }

    pub fn build_with_order(
        bundle: Bundle,
        relations: Vec<(Atom, Expr)>,
        reg: InvertibleRegistry,
        max_order: u32,
    ) -> Result<Self> {
        let n = bundle.n();
        let m = bundle.m();
        let mut rel: BTreeMap<Coord, Expr> = BTreeMap::new();
        let mut leaders = vec![Vec::new(); m];
        for (lhs, rhs) in relations {
            let Atom::Jet { fiber, index } = lhs else {
                return Err(Error::Invalid(format!("left side {lhs:?} is not a jet coordinate")));
            };
            if fiber >= m || index.dim() != n {
                return Err(Error::Invalid(format!("jet coordinate {fiber}{index:?} does not belong to the bundle")));
            }
            if rel.insert((fiber, index.clone()), rhs).is_some() {
                return Err(Error::InconsistentSystem(format!(
                    "coordinate {} is solved twice",
                    coord_name(&bundle, fiber, &index)
                )));
            }
            leaders[fiber].push(index);
        }
        for (fiber, ls) in leaders.iter().enumerate() {
            for a in ls {
                for b in ls {
                    if a != b && a.le(b) {
                        return Err(Error::InconsistentSystem(format!(
                            "{} is a derivative of the solved coordinate {}",
                            coord_name(&bundle, fiber, b),
                            coord_name(&bundle, fiber, a)
                        )));
                    }
                }
            }
        }
        let mut hasher = DefaultHasher::new();
        bundle.base_names().hash(&mut hasher);
        bundle.fiber_names().hash(&mut hasher);
        rel.hash(&mut hasher);
        let em = EquationManifold {
            bundle,
            relations: rel,
            leaders,
            reg,
            max_order,
            id: hasher.finish(),
            cache: RwLock::new(HashMap::new()),
        };
        for ((fiber, index), rhs) in &em.relations {
            for a in rhs.atoms() {
                if let Atom::Jet { fiber: f, index: i } = &a {
                    if !em.is_internal(*f, i) {
                        return Err(Error::NotSolved(format!(
                            "right side for {} contains the external coordinate {}",
                            coord_name(&em.bundle, *fiber, index),
                            coord_name(&em.bundle, *f, i)
                        )));
                    }
                }
            }
        }
        // integrability at the least common multiples of leaders
        for (fiber, ls) in em.leaders.iter().enumerate() {
            for (x, a) in ls.iter().enumerate() {
                for b in &ls[x + 1..] {
                    let lcm = MultiIndex::from_slice(
                        &a.exponents().iter().zip(b.exponents()).map(|(p, q)| *p.max(q)).collect::<Vec<_>>(),
                    );
                    if lcm.order() <= em.max_order {
                        em.normal_form(fiber, &lcm)?;
                    }
                }
            }
        }
        Ok(em)
    }

    pub fn bundle(&self) -> &Bundle {
        &self.bundle
    }

    pub fn registry(&self) -> &InvertibleRegistry {
        &self.reg
    }

    pub fn relations(&self) -> &BTreeMap<(usize, MultiIndex), Expr> {
        &self.relations
    }

    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn context(&self) -> Context {
        Context::Manifold(self.id)
    }

    pub fn is_internal(&self, fiber: usize, index: &MultiIndex) -> bool {
        !self.leaders[fiber].iter().any(|l| l.le(index))
    }

    pub fn is_internal_atom(&self, a: &Atom) -> bool {
        match a.jet_parts() {
            Some((f, i)) => self.is_internal(f, i),
            None => true,
        }
    }

    /// Internal jet coordinates of order at most `order`, in canonical order.
    pub fn internal_coordinates(&self, order: u32) -> Vec<Atom> {
        let n = self.bundle.n();
        let mut out = Vec::new();
        for fiber in 0..self.bundle.m() {
            for o in 0..=order {
                for idx in MultiIndex::all_of_order(n, o) {
                    if self.is_internal(fiber, &idx) {
                        out.push(Atom::jet(fiber, idx));
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// The defining equations `u_leader − rhs`.
    pub fn equations(&self) -> Vec<Expr> {
        self.relations
            .iter()
            .map(|((f, i), rhs)| Expr::atom(Atom::jet(*f, i.clone())) - rhs)
            .collect()
    }

    /// Normal form of `u^fiber_index` in internal coordinates.
    pub fn normal_form(&self, fiber: usize, index: &MultiIndex) -> Result<Expr> {
        if self.is_internal(fiber, index) {
            return Ok(Expr::atom(Atom::jet(fiber, index.clone())));
        }
        if index.order() > self.max_order {
            return Err(Error::OrderLimit {
                order: index.order(),
                limit: self.max_order,
            });
        }
        let key = (fiber, index.clone());
        if let Some(v) = self.cache.read().unwrap().get(&key) {
            return Ok(v.clone());
        }
        let value = if let Some(rhs) = self.relations.get(&key) {
            rhs.clone()
        } else {
            let mut first: Option<(usize, Expr)> = None;
            for k in 0..self.bundle.n() {
                let Some(pred) = index.decremented(k) else { continue };
                if self.is_internal(fiber, &pred) {
                    continue;
                }
                let v = self.total_derivative_internal(&self.normal_form(fiber, &pred)?, k)?;
                match &first {
                    None => first = Some((k, v)),
                    Some((k0, v0)) => {
                        if *v0 != v {
                            return Err(Error::InconsistentSystem(format!(
                                "{} has different normal forms along {} and {}",
                                coord_name(&self.bundle, fiber, index),
                                self.bundle.base_names()[*k0],
                                self.bundle.base_names()[k]
                            )));
                        }
                    }
                }
            }
            first.expect("external coordinate above a leader").1
        };
        self.cache.write().unwrap().insert(key, value.clone());
        Ok(value)
    }

    fn total_derivative_internal(&self, e: &Expr, k: usize) -> Result<Expr> {
        let err: RefCell<Option<Error>> = RefCell::new(None);
        let out = e.derive_with(&mut |a| match a {
            Atom::Jet { fiber, index } => match self.normal_form(*fiber, &index.incremented(k)) {
                Ok(v) => v,
                Err(x) => {
                    err.borrow_mut().get_or_insert(x);
                    Expr::zero()
                }
            },
            other => match other.total_derivative(k) {
                None => Expr::zero(),
                Some(AtomDerivative::One) => Expr::one(),
                Some(AtomDerivative::Atom(b)) => Expr::atom(b),
            },
        });
        match err.into_inner() {
            Some(x) => Err(x),
            None => Ok(out),
        }
    }

    /// Replace every external coordinate by its normal form.
    pub fn restrict(&self, e: &Expr) -> Result<Expr> {
        let ext: Vec<Atom> = e.atoms().into_iter().filter(|a| !self.is_internal_atom(a)).collect();
        if ext.is_empty() {
            return Ok(e.clone());
        }
        let mut map = HashMap::new();
        for a in ext {
            let (f, i) = a.jet_parts().unwrap();
            let v = self.normal_form(f, i)?;
            map.insert(a, v);
        }
        e.substitute_map(&map, &self.reg)
    }

    /// `D̄_k`, restricting the argument first.
    pub fn restricted_total_derivative(&self, e: &Expr, k: usize) -> Result<Expr> {
        self.total_derivative_internal(&self.restrict(e)?, k)
    }

    /// Pull a free-jet form back to the manifold.
    pub fn restrict_form(&self, w: &Form) -> Result<Form> {
        let ctx = self.context();
        if w.context() == ctx {
            return Ok(w.clone());
        }
        if w.context() != Context::Free {
            return Err(Error::ContextMismatch);
        }
        let mut out = Form::zero(ctx);
        let mut theta_cache: BTreeMap<Basis, Form> = BTreeMap::new();
        for (word, c) in w.terms() {
            let mut acc = Form::function(self.restrict(c)?, ctx);
            for b in word.factors() {
                let f = match theta_cache.get(b) {
                    Some(f) => f.clone(),
                    None => {
                        let f = match b {
                            Basis::Dx(_) => Form::basis(b.clone(), ctx),
                            Basis::Theta { fiber, index } => {
                                let mut f = Form::zero(ctx);
                                for (tb, tc) in self.theta(*fiber, index)? {
                                    f.add_term(Word::single(tb), tc);
                                }
                                f
                            }
                        };
                        theta_cache.insert(b.clone(), f.clone());
                        f
                    }
                };
                acc = acc.wedge(&f)?;
                if acc.is_zero() {
                    break;
                }
            }
            out = out.add(&acc)?;
        }
        Ok(out)
    }

    /// The linearization `l_E` of the defining equations.
    pub fn linearization(&self) -> CDiffOperator {
        CDiffOperator::linearization(&self.equations(), self.bundle.m(), self.bundle.n())
    }

    /// `l_E(φ)` restricted to the manifold vanishes.
    pub fn is_symmetry(&self, phi: &Characteristic) -> Result<bool> {
        for v in linearize(&self.equations(), phi) {
            if !self.restrict(&v)?.is_zero() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `l_E^*(ψ)` restricted to the manifold vanishes.
    pub fn is_cosymmetry(&self, psi: &[Expr]) -> Result<bool> {
        for v in self.linearization().adjoint().apply(psi)? {
            if !self.restrict(&v)?.is_zero() {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Extend by new fiber variables with solved relations over the combined bundle.
    ///
    /// With a chart, the result is expressed in the chart's relations after
    /// checking that both descriptions cut out the same system.
    pub fn adjoin_covering(&self, cov: &CoveringSpec) -> Result<EquationManifold> {
        let mut bundle = self.bundle.clone();
        let old_m = bundle.m();
        for name in &cov.new_fibers {
            bundle.add_fiber(name).map_err(|e| Error::InconsistentCovering(e.to_string()))?;
        }
        let covering_err = |e: Error| match e {
            Error::InconsistentSystem(s) | Error::NotSolved(s) | Error::Invalid(s) => Error::InconsistentCovering(s),
            other => other,
        };
        let mut relations: Vec<(Atom, Expr)> = self
            .relations
            .iter()
            .map(|((f, i), r)| (Atom::jet(*f, i.clone()), r.clone()))
            .collect();
        for (lhs, rhs) in &cov.relations {
            match lhs.jet_parts() {
                Some((f, _)) if f >= old_m => relations.push((lhs.clone(), rhs.clone())),
                _ => {
                    return Err(Error::InconsistentCovering(format!(
                        "covering relation for {lhs:?} must solve for a new variable"
                    )))
                }
            }
        }
        let union = EquationManifold::build_with_order(bundle.clone(), relations, self.reg.clone(), self.max_order)
            .map_err(covering_err)?;
        let Some(chart) = &cov.chart else {
            return Ok(union);
        };
        let alt = EquationManifold::build_with_order(bundle, chart.clone(), self.reg.clone(), self.max_order)
            .map_err(covering_err)?;
        for e in union.equations() {
            if !alt.restrict(&e)?.is_zero() {
                return Err(Error::InconsistentCovering(format!("chart does not imply {e:?} = 0")));
            }
        }
        for e in alt.equations() {
            if !union.restrict(&e)?.is_zero() {
                return Err(Error::InconsistentCovering(format!("covering does not imply {e:?} = 0")));
            }
        }
        Ok(alt)
    }

    /// Jet atoms of `e` that are external.
    pub fn external_atoms(&self, e: &Expr) -> BTreeSet<Atom> {
        e.atoms().into_iter().filter(|a| !self.is_internal_atom(a)).collect()
    }
}

impl Frame for EquationManifold {
    fn n(&self) -> usize {
        self.bundle.n()
    }

    fn context(&self) -> Context {
        EquationManifold::context(self)
    }

    fn registry(&self) -> &InvertibleRegistry {
        &self.reg
    }

    fn total_derivative(&self, e: &Expr, k: usize) -> Result<Expr> {
        self.restricted_total_derivative(e, k)
    }

    /// `θ_ext = Σ ∂N/∂w θ_w` over internal `w`, where `N` is the normal form.
    fn theta(&self, fiber: usize, index: &MultiIndex) -> Result<Vec<(Basis, Expr)>> {
        if self.is_internal(fiber, index) {
            return Ok(vec![(
                Basis::Theta {
                    fiber,
                    index: index.clone(),
                },
                Expr::one(),
            )]);
        }
        let nf = self.normal_form(fiber, index)?;
        Ok(nf
            .atoms()
            .into_iter()
            .filter_map(|a| Basis::theta_of(&a).map(|b| (b, nf.diff(&a))))
            .filter(|(_, c)| !c.is_zero())
            .collect())
    }
}

/// New fiber variables with relations defining them over an existing system.
#[derive(Clone, Debug, Default)]
pub struct CoveringSpec {
    pub new_fibers: Vec<String>,
    pub relations: Vec<(Atom, Expr)>,
    /// Optional equivalent solved form used as the coordinate chart.
    pub chart: Option<Vec<(Atom, Expr)>>,
}

pub(crate) fn coord_name(b: &Bundle, fiber: usize, index: &MultiIndex) -> String {
    let mut s = b.fiber_names().get(fiber).map_or_else(|| format!("u{fiber}"), |f| f.to_string());
    if !index.is_zero() {
        s.push('_');
        for (k, &e) in index.exponents().iter().enumerate() {
            for _ in 0..e {
                s.push_str(&b.base_names()[k]);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace() -> EquationManifold {
        let b = Bundle::new(&["x", "y"], &["u"]).unwrap();
        let rel = vec![(b.jet_atom(0, &[0, 2]), -b.u(0, &[2, 0]))];
        EquationManifold::build(b, rel, InvertibleRegistry::new()).unwrap()
    }

    #[test]
    fn laplace_prolongation() {
        let e = laplace();
        let b = e.bundle().clone();
        assert_eq!(e.normal_form(0, &MultiIndex::from_slice(&[1, 3])).unwrap(), -b.u(0, &[3, 1]));
        assert_eq!(e.normal_form(0, &MultiIndex::from_slice(&[0, 4])).unwrap(), b.u(0, &[4, 0]));
        assert_eq!(e.restricted_total_derivative(&b.u(0, &[0, 1]), 1).unwrap(), -b.u(0, &[2, 0]));
    }

    #[test]
    fn heat_mixed_derivatives() {
        let b = Bundle::new(&["x", "t"], &["u"]).unwrap();
        let rel = vec![(b.jet_atom(0, &[0, 1]), b.u(0, &[2, 0]))];
        let e = EquationManifold::build(b.clone(), rel, InvertibleRegistry::new()).unwrap();
        assert_eq!(e.normal_form(0, &MultiIndex::from_slice(&[0, 2])).unwrap(), b.u(0, &[4, 0]));
        assert_eq!(e.normal_form(0, &MultiIndex::from_slice(&[1, 2])).unwrap(), b.u(0, &[5, 0]));
    }

    #[test]
    fn external_theta_expands() {
        let e = laplace();
        let f = Form::theta(0, MultiIndex::from_slice(&[0, 2]), Context::Free);
        let r = e.restrict_form(&f).unwrap();
        let want = Form::theta(0, MultiIndex::from_slice(&[2, 0]), e.context()).neg();
        assert_eq!(r, want);
    }

    #[test]
    fn inconsistent_covering_detected() {
        let b = Bundle::new(&["x", "y"], &["u"]).unwrap();
        let free = EquationManifold::build(b.clone(), vec![], InvertibleRegistry::new()).unwrap();
        let mut ext = b.clone();
        ext.add_fiber("v").unwrap();
        let cov = CoveringSpec {
            new_fibers: vec!["v".into()],
            relations: vec![(ext.jet_atom(1, &[1, 0]), b.u(0, &[])), (ext.jet_atom(1, &[0, 1]), b.u(0, &[]))],
            chart: None,
        };
        assert!(matches!(free.adjoin_covering(&cov), Err(Error::InconsistentCovering(_))));
    }

    #[test]
    fn order_limit_is_an_error() {
        let b = Bundle::new(&["x", "y"], &["u"]).unwrap();
        let rel = vec![(b.jet_atom(0, &[0, 2]), -b.u(0, &[2, 0]))];
        let e = EquationManifold::build_with_order(b, rel, InvertibleRegistry::new(), 3).unwrap();
        assert!(matches!(
            e.normal_form(0, &MultiIndex::from_slice(&[0, 4])),
            Err(Error::OrderLimit { order: 4, limit: 3 })
        ));
    }
}
