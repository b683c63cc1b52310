//! Sections of equation manifolds: tangency ansätze, pullbacks of internal
//! Lagrangians and the reduced variational problems they define.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use crate::eqvariety::EquationManifold;
use crate::error::{Error, Result};
use crate::forms::{Basis, Context, Form, Word};
use crate::intlag::internal_lagrangian;
use crate::jetspace::Bundle;
use crate::linalg::{determinant, solve_affine};
use crate::symexpr::{ArgSet, Atom, Expr, InvertibleRegistry, MultiIndex};
use crate::varcalc::{euler, nondegeneracy_matrix, Dependent};

type Coord = (usize, MultiIndex);

/// A section given by values of internal coordinates in formal functions.
#[derive(Clone, Debug)]
pub struct SectionAnsatz {
    pub assignment: BTreeMap<Coord, Expr>,
    /// Base vector fields `Σ w^k ∂_k` along which the section is Cartan.
    pub directions: Vec<Vec<Expr>>,
    pub free: Vec<(Coord, Expr)>,
    pub order: u32,
}

impl SectionAnsatz {
    /// `σ^*` of an expression on the manifold.
    pub fn pull(&self, e: &EquationManifold, x: &Expr) -> Result<Expr> {
        let x = e.restrict(x)?;
        let mut map = HashMap::new();
        for a in x.atoms() {
            if let Some((f, i)) = a.jet_parts() {
                let v = self.assignment.get(&(f, i.clone())).ok_or_else(|| {
                    Error::UnderDetermined(format!(
                        "coordinate {} is not determined by the ansatz",
                        crate::eqvariety::coord_name(e.bundle(), f, i)
                    ))
                })?;
                map.insert(a, v.clone());
            }
        }
        x.substitute_map(&map, e.registry())
    }

    /// `σ^*` of a jet coordinate, internal or external.
    pub fn value(&self, e: &EquationManifold, fiber: usize, index: &MultiIndex) -> Result<Expr> {
        self.pull(e, &e.normal_form(fiber, index)?)
    }
}

fn apply_direction(w: &[Expr], f: &Expr) -> Expr {
    w.iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(k, c)| c * &f.total_derivative(k))
        .sum()
}

fn substitute_known(x: &Expr, known: &BTreeMap<Coord, Expr>, reg: &InvertibleRegistry) -> Result<Expr> {
    x.substitute(&|a: &Atom| a.jet_parts().and_then(|(f, i)| known.get(&(f, i.clone())).cloned()), reg)
}

/// `Σ_k w^k σ^*(D̄_k c) − w(σ^* c)` with unknown coordinates left as atoms.
fn tangency_residual(
    e: &EquationManifold,
    known: &BTreeMap<Coord, Expr>,
    c: &Coord,
    w: &[Expr],
) -> Result<Expr> {
    let mut acc = -apply_direction(w, &known[c]);
    for (k, wk) in w.iter().enumerate() {
        if wk.is_zero() {
            continue;
        }
        let nf = e.normal_form(c.0, &c.1.incremented(k))?;
        acc = acc + wk * &substitute_known(&nf, known, e.registry())?;
    }
    Ok(acc)
}

/// Determine all internal coordinates up to `order` from free data and
/// tangency along the given directions.
pub fn solve_ansatz(
    e: &EquationManifold,
    free: Vec<(Coord, Expr)>,
    directions: Vec<Vec<Expr>>,
    order: u32,
) -> Result<SectionAnsatz> {
    let n = e.bundle().n();
    if order > e.max_order() {
        return Err(Error::OrderLimit {
            order,
            limit: e.max_order(),
        });
    }
    let mut known: BTreeMap<Coord, Expr> = BTreeMap::new();
    for ((f, i), v) in &free {
        if !e.is_internal(*f, i) {
            return Err(Error::Invalid(format!(
                "free data for the external coordinate {}",
                crate::eqvariety::coord_name(e.bundle(), *f, i)
            )));
        }
        if v.atoms().iter().any(Atom::is_jet) {
            return Err(Error::Invalid("free data must be given in formal functions".into()));
        }
        known.insert((*f, i.clone()), v.clone());
    }
    if directions.iter().any(|w| w.len() != n) {
        return Err(Error::Invalid("direction has the wrong number of components".into()));
    }
    let mut processed: BTreeSet<(Coord, usize)> = BTreeSet::new();
    let mut pending: Vec<Expr> = Vec::new();
    loop {
        let mut rows = Vec::new();
        let coords: Vec<Coord> = known.keys().filter(|c| c.1.order() < order).cloned().collect();
        for c in coords {
            for (d, w) in directions.iter().enumerate() {
                if !processed.insert((c.clone(), d)) {
                    continue;
                }
                let r = tangency_residual(e, &known, &c, w)?;
                if r.atoms().iter().any(|a| a.jet_parts().is_some_and(|(_, i)| i.order() > order)) {
                    continue;
                }
                rows.push(r);
            }
        }
        if rows.is_empty() {
            break;
        }
        for r in pending.drain(..) {
            rows.push(substitute_known(&r, &known, e.registry())?);
        }
        let unknowns: BTreeSet<Atom> = rows.iter().flat_map(|r| r.atoms()).filter(Atom::is_jet).collect();
        let sol = solve_affine(rows, &unknowns, e.registry())?;
        for (a, v) in sol.solved {
            let (f, i) = a.jet_parts().unwrap();
            known.insert((f, i.clone()), v);
        }
        pending = sol.pending;
        pending.extend(sol.stuck.into_iter().map(|(r, _)| r));
    }
    if !pending.is_empty() {
        let unknowns: BTreeSet<Atom> = pending.iter().flat_map(|r| r.atoms()).filter(Atom::is_jet).collect();
        let sol = solve_affine(pending.clone(), &unknowns, e.registry())?;
        if let Some((_, c)) = sol.stuck.first() {
            return Err(Error::NotSolvable(format!("{c:?}")));
        }
        return Err(Error::UnderDetermined(format!("{} tangency conditions remain", pending.len())));
    }
    Ok(SectionAnsatz {
        assignment: known,
        directions,
        free,
        order,
    })
}

/// Every assigned coordinate below the top order satisfies the tangency conditions.
pub fn check_almost_cartan(sigma: &SectionAnsatz, e: &EquationManifold) -> Result<bool> {
    for c in sigma.assignment.keys().filter(|c| c.1.order() < sigma.order) {
        for w in &sigma.directions {
            let r = tangency_residual(e, &sigma.assignment, c, w)?;
            if !r.is_zero() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// `σ^*θ^i_α = Σ_k (∂_k σ^*u^i_α − σ^*(D̄_k u^i_α)) dx^k`.
fn pull_basis(sigma: &SectionAnsatz, e: &EquationManifold, b: &Basis) -> Result<Form> {
    let ctx = Context::Free;
    match b {
        Basis::Dx(_) => Ok(Form::basis(b.clone(), ctx)),
        Basis::Theta { fiber, index } => {
            let v = sigma.value(e, *fiber, index)?;
            let mut out = Form::zero(ctx);
            for k in 0..e.bundle().n() {
                let c = v.total_derivative(k) - sigma.value(e, *fiber, &index.incremented(k))?;
                out.add_term(Word::single(Basis::Dx(k)), c);
            }
            Ok(out)
        }
    }
}

/// Pull a form on the manifold back to the base.
pub fn pullback_form(w: &Form, sigma: &SectionAnsatz, e: &EquationManifold) -> Result<Form> {
    let ctx = Context::Free;
    let mut out = Form::zero(ctx);
    let mut cache: BTreeMap<Basis, Form> = BTreeMap::new();
    for (word, c) in w.terms() {
        let mut acc = Form::function(sigma.pull(e, c)?, ctx);
        for b in word.factors() {
            if !cache.contains_key(b) {
                cache.insert(b.clone(), pull_basis(sigma, e, b)?);
            }
            acc = acc.wedge(&cache[b])?;
            if acc.is_zero() {
                break;
            }
        }
        out = out.add(&acc)?;
    }
    Ok(out)
}

/// Density of `σ^*(l)` with respect to `dx^1 ∧ … ∧ dx^n`.
pub fn pullback_density(representative: &Form, sigma: &SectionAnsatz, e: &EquationManifold) -> Result<Expr> {
    let n = e.bundle().n();
    let f = pullback_form(representative, sigma, e)?;
    Ok(f.coefficient(&Word::volume(n)))
}

/// Variational derivatives of a reduced density with respect to formal functions.
pub fn stationarity_equations(density: &Expr, unknowns: &[Arc<str>]) -> Vec<Expr> {
    let deps: Vec<Dependent> = unknowns.iter().cloned().map(Dependent::Function).collect();
    euler(density, &deps).0
}

/// One link of the chain `δ/δv_{2k−r} ⇒ v_r = ∂_y^r v_0`.
#[derive(Clone, Debug)]
pub struct ConsequenceStep {
    pub r: u32,
    /// `δ/δv^j_{2k−r}` reduced by the relations already derived.
    pub equations: Vec<Expr>,
    /// Determinant of the coefficient matrix of `v_r`.
    pub determinant: Expr,
    pub holds: bool,
}

#[derive(Clone, Debug)]
pub struct KovalevskayaReport {
    pub manifold: EquationManifold,
    /// Names `v^i_j` of the reduced unknowns, indexed `[j][i]`.
    pub unknowns: Vec<Vec<Arc<str>>>,
    /// Pullback of the internal Lagrangian through the `Φ` section.
    pub density: Expr,
    /// The same density from the closed-form expression.
    pub density_formula: Expr,
    pub steps: Vec<ConsequenceStep>,
    /// `δ/δv_0` reduced by all relations.
    pub reduced_original: Vec<Expr>,
    /// The Euler-Lagrange expressions of `λ` in `v_0`.
    pub original: Vec<Expr>,
    /// `Some(±1)` if `reduced_original = ±original`.
    pub sign: Option<i64>,
}

impl KovalevskayaReport {
    pub fn verified(&self) -> bool {
        self.density == self.density_formula && self.steps.iter().all(|s| s.holds) && self.sign.is_some()
    }
}

fn func_atom(name: &Arc<str>, index: MultiIndex, n: usize) -> Atom {
    Atom::func(name, index, ArgSet::all(n))
}

/// Reduce a non-degenerate variational problem along `y` to first order in
/// `y` and verify that stationarity of the reduced density implies the
/// original equations.
pub fn kovalevskaya_reduction(
    lambda: &Expr,
    bundle: &Bundle,
    reg: &InvertibleRegistry,
    k: u32,
    y: usize,
) -> Result<KovalevskayaReport> {
    let (n, m) = (bundle.n(), bundle.m());
    if k == 0 || y >= n {
        return Err(Error::Invalid("order must be positive and y a base variable".into()));
    }
    let mut xi = vec![Expr::zero(); n];
    xi[y] = Expr::one();
    let a = nondegeneracy_matrix(lambda, m, k, &xi);
    let det = determinant(&a);
    if !(det.is_constant() && !det.is_zero()) && !reg.is_invertible(&det) {
        return Err(Error::NondegeneracyFailure(format!("det A = {det:?} is not invertible")));
    }
    let top = |i: usize| {
        let mut idx = MultiIndex::zero(n);
        for _ in 0..2 * k {
            idx = idx.incremented(y);
        }
        Atom::jet(i, idx)
    };
    let el = euler(lambda, &Dependent::fibers(m)).0;
    let unknowns: BTreeSet<Atom> = (0..m).map(top).collect();
    let sol = solve_affine(el.clone(), &unknowns, reg)?;
    if sol.solved.len() != m {
        return Err(Error::NondegeneracyFailure("cannot solve for the top y-derivatives".into()));
    }
    let mut ext = bundle.clone();
    let mut names: Vec<Vec<Arc<str>>> = Vec::new();
    for j in 0..2 * k {
        let mut row = Vec::new();
        for i in 0..m {
            let name = if m == 1 {
                format!("v{j}")
            } else {
                format!("v{j}{}", bundle.fiber_names()[i])
            };
            let all: Vec<&str> = bundle.base_names().iter().map(|s| &**s).collect();
            ext.add_function(&name, &all)?;
            row.push(Arc::from(name.as_str()));
        }
        names.push(row);
    }
    let relations: Vec<(Atom, Expr)> = sol.solved.into_iter().collect();
    let e = EquationManifold::build(ext, relations, reg.clone())?;
    let il = internal_lagrangian(lambda, &e, Some(y))?;

    let ydir = |j: u32| {
        let mut idx = MultiIndex::zero(n);
        for _ in 0..j {
            idx = idx.incremented(y);
        }
        idx
    };
    let mut free = Vec::new();
    for (j, row) in names.iter().enumerate() {
        for (i, name) in row.iter().enumerate() {
            free.push(((i, ydir(j as u32)), Expr::atom(func_atom(name, MultiIndex::zero(n), n))));
        }
    }
    let directions: Vec<Vec<Expr>> = (0..n)
        .filter(|&s| s != y)
        .map(|s| (0..n).map(|t| if t == s { Expr::one() } else { Expr::zero() }).collect())
        .collect();
    let needed = il
        .representative
        .terms()
        .map(|(w, c)| {
            let wo = w
                .factors()
                .iter()
                .map(|b| match b {
                    Basis::Theta { index, .. } => index.order() + 1,
                    Basis::Dx(_) => 0,
                })
                .max()
                .unwrap_or(0);
            wo.max(c.max_jet_order())
        })
        .max()
        .unwrap_or(0)
        .max(2 * k);
    let sigma = solve_ansatz(&e, free, directions, needed)?;
    let density = pullback_density(&il.representative, &sigma, &e)?;

    // Φ^*(λ) + Σ (−1)^|α| D̃_α(∂λ/∂u^i_{α+(r+1)y}) (v^i_{r;y} − v^i_{r+1})
    let mut formula = sigma.pull(&e, lambda)?;
    let v = |j: u32, i: usize, idx: MultiIndex| Expr::atom(func_atom(&names[j as usize][i], idx, n));
    for r in 0..k {
        for i in 0..m {
            let gap = v(r, i, MultiIndex::unit(n, y)) - v(r + 1, i, MultiIndex::zero(n));
            for o in 0..(k - r) {
                for alpha in MultiIndex::all_of_order(n, o) {
                    let target = Atom::jet(i, alpha.add(&ydir(r + 1)));
                    let p = lambda.diff(&target);
                    if p.is_zero() {
                        continue;
                    }
                    let dp = crate::jetspace::total_derivative_multi(&p, &alpha);
                    let dp = sigma.pull(&e, &dp)?;
                    let t = &dp * &gap;
                    formula = if o % 2 == 0 { formula + t } else { formula - t };
                }
            }
        }
    }

    // v^i_{r;α} ↦ v^i_{0;α+ry} for the established r
    let reduce = |x: &Expr, upto: u32| -> Result<Expr> {
        x.substitute(
            &|a: &Atom| match a {
                Atom::Func { name, index, .. } => {
                    for r in 1..=upto {
                        if let Some(i) = names[r as usize].iter().position(|s| s == name) {
                            return Some(v(0, i, index.add(&ydir(r))));
                        }
                    }
                    None
                }
                _ => None,
            },
            reg,
        )
    };
    let mut steps = Vec::new();
    for r in 1..2 * k {
        let vary: Vec<Arc<str>> = names[(2 * k - r) as usize].clone();
        let eqs = stationarity_equations(&density, &vary)
            .iter()
            .map(|q| reduce(q, r - 1))
            .collect::<Result<Vec<_>>>()?;
        let vr: Vec<Atom> = (0..m).map(|i| func_atom(&names[r as usize][i], MultiIndex::zero(n), n)).collect();
        let vr_set: BTreeSet<Atom> = vr.iter().cloned().collect();
        let derivs_absent = eqs.iter().all(|q| {
            q.atoms()
                .iter()
                .all(|a| !matches!(a, Atom::Func { name, index, .. } if names[r as usize].contains(name) && !index.is_zero()))
        });
        let linear = eqs.iter().all(|q| q.is_linear_in(&vr_set));
        let mat: Vec<Vec<Expr>> = eqs.iter().map(|q| vr.iter().map(|a| q.diff(a)).collect()).collect();
        let det = determinant(&mat);
        let invertible = (det.is_constant() && !det.is_zero()) || reg.is_invertible(&det);
        let vanishes = eqs
            .iter()
            .map(|q| reduce(q, r))
            .collect::<Result<Vec<_>>>()?
            .iter()
            .all(Expr::is_zero);
        steps.push(ConsequenceStep {
            r,
            equations: eqs,
            determinant: det,
            holds: derivs_absent && linear && invertible && vanishes,
        });
    }
    let reduced_original = stationarity_equations(&density, &names[0])
        .iter()
        .map(|q| reduce(q, 2 * k - 1))
        .collect::<Result<Vec<_>>>()?;
    let to_v0: HashMap<Atom, Expr> = el
        .iter()
        .flat_map(|q| q.atoms())
        .filter_map(|a| match &a {
            Atom::Jet { fiber, index } => Some((a.clone(), v(0, *fiber, index.clone()))),
            _ => None,
        })
        .collect();
    let original = el
        .iter()
        .map(|q| q.substitute_map(&to_v0, reg))
        .collect::<Result<Vec<_>>>()?;
    let sign = if reduced_original == original {
        Some(1)
    } else if reduced_original.iter().zip(&original).all(|(a, b)| (a + b).is_zero()) {
        Some(-1)
    } else {
        None
    };
    Ok(KovalevskayaReport {
        manifold: e,
        unknowns: names,
        density,
        density_formula: formula,
        steps,
        reduced_original,
        original,
        sign,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::coeff_ratio;

    #[test]
    fn heat_ansatz_through_order_four() {
        let mut b = Bundle::new(&["x", "t"], &["u"]).unwrap();
        b.add_function("f", &["x", "t"]).unwrap();
        let rel = vec![(b.jet_atom(0, &[0, 1]), b.u(0, &[2, 0]))];
        let e = EquationManifold::build(b.clone(), rel, InvertibleRegistry::new()).unwrap();
        let f = b.func("f", &[]).unwrap();
        let s = solve_ansatz(
            &e,
            vec![((0, MultiIndex::zero(2)), f)],
            vec![vec![Expr::one(), Expr::zero()]],
            4,
        )
        .unwrap();
        assert_eq!(s.value(&e, 0, &MultiIndex::from_slice(&[0, 2])).unwrap(), b.func("f", &[4, 0]).unwrap());
        assert!(check_almost_cartan(&s, &e).unwrap());
    }

    #[test]
    fn free_particle_reduction() {
        let b = Bundle::new(&["y"], &["u"]).unwrap();
        let l = b.u(0, &[1]).pow(2).scale(&coeff_ratio(1, 2));
        let rep = kovalevskaya_reduction(&l, &b, &InvertibleRegistry::new(), 1, 0).unwrap();
        assert!(rep.verified(), "{rep:?}");
        assert_eq!(rep.sign, Some(1));
    }

    fn laplace() -> (Bundle, Expr) {
        let mut b = Bundle::new(&["x", "y"], &["u"]).unwrap();
        for f in ["f", "g", "Y"] {
            b.add_function(f, &["x", "y"]).unwrap();
        }
        let l = -(b.u(0, &[1, 0]).pow(2) + b.u(0, &[0, 1]).pow(2)).scale(&coeff_ratio(1, 2));
        (b, l)
    }

    #[test]
    fn laplace_y_section() {
        let (b, l) = laplace();
        let yy = b.func("Y", &[]).unwrap();
        let mut reg = InvertibleRegistry::new();
        reg.declare(&(Expr::one() + yy.pow(2)));
        let rel = vec![(b.jet_atom(0, &[2, 0]), -b.u(0, &[0, 2]))];
        let e = EquationManifold::build(b.clone(), rel, reg).unwrap();
        let il = internal_lagrangian(&l, &e, None).unwrap();
        let f = |i: &[u16]| b.func("f", i).unwrap();
        let g = |i: &[u16]| b.func("g", i).unwrap();
        let free = vec![
            ((0, MultiIndex::zero(2)), f(&[])),
            ((0, MultiIndex::unit(2, 1)), g(&[])),
        ];
        let s = solve_ansatz(&e, free, vec![vec![Expr::one(), yy.clone()]], 1).unwrap();
        let rho = pullback_density(&il.representative, &s, &e).unwrap();
        let gap = f(&[0, 1]) - g(&[]);
        let expected = (yy.pow(2) * gap.pow(2) - f(&[1, 0]).pow(2) + g(&[]).pow(2)).scale(&coeff_ratio(1, 2))
            - g(&[]) * f(&[0, 1]);
        assert_eq!(rho, expected);
        let eqs = stationarity_equations(&rho, &["f".into(), "g".into()]);
        let t = yy.pow(2) * (g(&[]) - f(&[0, 1]));
        assert_eq!(eqs[0], f(&[2, 0]) + g(&[0, 1]) + t.total_derivative(1));
        assert_eq!(eqs[1], (g(&[]) - f(&[0, 1])) * (yy.pow(2) + Expr::one()));
    }

    #[test]
    fn wave_dy_section() {
        let mut b = Bundle::new(&["x", "y"], &["u"]).unwrap();
        b.add_function("f", &["x", "y"]).unwrap();
        b.add_function("h1", &["y"]).unwrap();
        let l = -(b.u(0, &[1, 0]) * b.u(0, &[0, 1])).scale(&coeff_ratio(1, 2));
        let e = EquationManifold::build(b.clone(), vec![(b.jet_atom(0, &[1, 1]), Expr::zero())], InvertibleRegistry::new())
            .unwrap();
        let il = internal_lagrangian(&l, &e, None).unwrap();
        let free = vec![
            ((0, MultiIndex::zero(2)), b.func("f", &[]).unwrap()),
            ((0, MultiIndex::unit(2, 1)), b.func("h1", &[]).unwrap()),
        ];
        let s = solve_ansatz(&e, free, vec![vec![Expr::one(), Expr::zero()]], 1).unwrap();
        let rho = pullback_density(&il.representative, &s, &e).unwrap();
        let eqs = stationarity_equations(&rho, &["f".into(), "h1".into()]);
        assert_eq!(eqs[0], b.func("f", &[1, 1]).unwrap());
        assert!(eqs[1].is_zero());
    }

    #[test]
    fn pkdv_xi_section() {
        let mut b = Bundle::new(&["t", "x"], &["u"]).unwrap();
        for f in ["f", "g", "h", "X"] {
            b.add_function(f, &["t", "x"]).unwrap();
        }
        let (ux, ut) = (b.u(0, &[0, 1]), b.u(0, &[1, 0]));
        let l = (&ux * &ut).scale(&coeff_ratio(1, 2)) - ux.pow(3) + b.u(0, &[0, 2]).pow(2).scale(&coeff_ratio(1, 2));
        let rel = vec![(b.jet_atom(0, &[0, 3]), ut - Expr::int(3) * ux.pow(2))];
        let e = EquationManifold::build(b.clone(), rel, InvertibleRegistry::new()).unwrap();
        let il = internal_lagrangian(&l, &e, None).unwrap();
        let fx = |name: &str, i: &[u16]| b.func(name, i).unwrap();
        let free = vec![
            ((0, MultiIndex::zero(2)), fx("f", &[])),
            ((0, MultiIndex::from_slice(&[0, 1])), fx("g", &[])),
            ((0, MultiIndex::from_slice(&[0, 2])), fx("h", &[])),
        ];
        let x = fx("X", &[]);
        let s = solve_ansatz(&e, free, vec![vec![Expr::one(), x.clone()]], 2).unwrap();
        let gap = fx("f", &[0, 1]) - fx("g", &[]);
        assert_eq!(s.value(&e, 0, &MultiIndex::from_slice(&[1, 0])).unwrap(), fx("f", &[1, 0]) + &x * &gap);
        let rho = pullback_density(&il.representative, &s, &e).unwrap();
        let half = coeff_ratio(1, 2);
        let expected = -(fx("f", &[0, 1]) * fx("f", &[1, 0])).scale(&half) + fx("g", &[]) * fx("f", &[1, 0])
            - fx("g", &[]).pow(3)
            + fx("h", &[]) * fx("g", &[0, 1])
            - fx("h", &[]).pow(2).scale(&half)
            - (&x * &gap.pow(2)).scale(&half);
        assert_eq!(rho, expected);
        let eqs = stationarity_equations(&rho, &["f".into(), "g".into(), "h".into(), "X".into()]);
        assert_eq!(eqs[2], fx("g", &[0, 1]) - fx("h", &[]));
        assert_eq!(eqs[3], -gap.pow(2).scale(&half));
    }
}
