//! Internal Lagrangians, presymplectic structures and the Noether correspondence.

use crate::eqvariety::EquationManifold;
use crate::error::{Error, Result};
use crate::forms::{Basis, CartanField, Context, Form, Frame};
use crate::jetspace::{apply_evolutionary, Characteristic};
use crate::symexpr::{coeff_int, Coeff, Expr, MultiIndex};
use crate::varcalc::{euler, noether_form, CDiffOperator, Dependent, DiffPoly};

/// A representative `(L + ω_L)|_E` together with the data it came from.
#[derive(Clone, Debug)]
pub struct InternalLagrangian {
    pub density: Expr,
    pub noether: Form,
    pub representative: Form,
}

/// Build `(λ vol + ω_L)|_E`, checking that the Euler-Lagrange expressions vanish on `E`.
pub fn internal_lagrangian(lambda: &Expr, e: &EquationManifold, skip: Option<usize>) -> Result<InternalLagrangian> {
    let b = e.bundle();
    let n = b.n();
    for (i, c) in euler(lambda, &Dependent::fibers(b.m())).0.iter().enumerate() {
        let r = e.restrict(c)?;
        if !r.is_zero() {
            return Err(Error::EulerNotVanishing(format!("component {}: {r:?}", b.fiber_names()[i])));
        }
    }
    let noether = noether_form(lambda, n, skip);
    let full = Form::volume(n, lambda.clone(), Context::Free).add(&noether)?;
    let representative = e.restrict_form(&full)?;
    let il = InternalLagrangian {
        density: lambda.clone(),
        noether,
        representative,
    };
    presymplectic(&il, e)?;
    Ok(il)
}

/// `dl`; every term has contact degree at least two.
pub fn presymplectic(il: &InternalLagrangian, e: &EquationManifold) -> Result<Form> {
    let d = il.representative.exterior_d(e)?;
    if let Some(c) = d.min_contact_degree() {
        if c < 2 {
            return Err(Error::Invalid(format!(
                "differential of the representative has contact degree {c}: {:?}",
                d.contact_filter(0).horizontal_part()
            )));
        }
    }
    Ok(d)
}

/// Vector used to contract the presymplectic form.
#[derive(Clone, Debug)]
pub enum SymmetryField {
    Evolutionary(Characteristic),
    Field(CartanField),
}

/// `i_X dl`. Evolutionary fields must be symmetries of `E`.
pub fn symmetry_action(il: &InternalLagrangian, e: &EquationManifold, x: &SymmetryField) -> Result<Form> {
    if let SymmetryField::Evolutionary(phi) = x {
        if !e.is_symmetry(phi)? {
            return Err(Error::NotASymmetry);
        }
    }
    symmetry_action_unchecked(il, e, x)
}

pub fn symmetry_action_unchecked(il: &InternalLagrangian, e: &EquationManifold, x: &SymmetryField) -> Result<Form> {
    let dl = presymplectic(il, e)?;
    match x {
        SymmetryField::Evolutionary(phi) => {
            let phi = Characteristic::new(phi.components().iter().map(|c| e.restrict(c)).collect::<Result<_>>()?);
            dl.contract_evolutionary(&phi, e)
        }
        SymmetryField::Field(v) => dl.contract_field(v),
    }
}

/// `d_h ω` vanishes on `E` for a horizontal `(n−1)`-form given on free jets.
pub fn check_conserved_current(w: &Form, e: &EquationManifold) -> Result<bool> {
    if !w.is_horizontal() {
        return Err(Error::NotHorizontal);
    }
    let r = e.restrict_form(w)?;
    Ok(r.horizontal_d(e)?.is_zero())
}

/// `l_E^* ∘ Δ − Δ^* ∘ l_E` with coefficients restricted to `E`.
pub fn presymplectic_defect(delta: &CDiffOperator, e: &EquationManifold) -> Result<CDiffOperator> {
    let l = e.linearization();
    let lhs = l.adjoint().compose(delta)?;
    let rhs = delta.adjoint().compose(&l)?;
    lhs.sub(&rhs)?.map_coefficients(|c| e.restrict(c))
}

pub fn check_presymplectic_operator(delta: &CDiffOperator, e: &EquationManifold) -> Result<bool> {
    Ok(presymplectic_defect(delta, e)?.is_zero())
}

/// Three-valued outcome of the Noether analysis of a symmetry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NoetherClass {
    /// `E_φ(λ)` is a total divergence. Carries the cosymmetry read off from
    /// `i_X dl` when the extraction succeeds; a zero cosymmetry means the
    /// characteristic lies in the kernel of the presymplectic operator.
    ConservationLawProducing { cosymmetry: Option<Vec<Expr>> },
    /// `E_φ(λ) = c λ` up to a divergence with `c ≠ 0`.
    NontrivialInternalLagrangian { factor: Coeff },
    Undecided,
}

impl NoetherClass {
    pub fn is_kernel_degenerate(&self) -> bool {
        matches!(self, NoetherClass::ConservationLawProducing { cosymmetry: Some(c) } if c.iter().all(Expr::is_zero))
    }
}

pub fn noether_classify(il: &InternalLagrangian, e: &EquationManifold, phi: &Characteristic) -> Result<NoetherClass> {
    if !e.is_symmetry(phi)? {
        return Err(Error::NotASymmetry);
    }
    let deps = Dependent::fibers(e.bundle().m());
    let moved = apply_evolutionary(phi, &il.density);
    let reduced = euler(&moved, &deps);
    if reduced.is_zero() {
        let theta = symmetry_action_unchecked(il, e, &SymmetryField::Evolutionary(phi.clone()))?;
        return Ok(NoetherClass::ConservationLawProducing {
            cosymmetry: extract_cosymmetry(&theta, e)?,
        });
    }
    let base = euler(&il.density, &deps);
    let ratio = reduced
        .0
        .iter()
        .zip(&base.0)
        .find(|(_, b)| !b.is_zero())
        .and_then(|(r, b)| {
            let (_, rc) = r.numerator().leading()?;
            let (_, bc) = b.numerator().leading()?;
            Some(rc / bc)
        });
    if let Some(c) = ratio {
        let ce = Expr::rational(c.clone());
        if reduced.0.iter().zip(&base.0).all(|(r, b)| (r - &(&ce * b)).is_zero()) {
            return Ok(NoetherClass::NontrivialInternalLagrangian { factor: c });
        }
    }
    Ok(NoetherClass::Undecided)
}

/// Read a cosymmetry `ψ` off a variational 1-form `ϑ` on `E`.
///
/// The `(1, n−1)` part `Σ a^k_w θ_w ∧ ι_k vol` defines operators `∇_k`; the
/// composite `Σ D̄_k ∘ ∇_k` must factor as `ψ ∘ l_E`. Returns `None` if it does not.
pub fn extract_cosymmetry(theta: &Form, e: &EquationManifold) -> Result<Option<Vec<Expr>>> {
    let b = e.bundle();
    let (n, m) = (b.n(), b.m());
    let mut boxop: Vec<DiffPoly> = vec![DiffPoly::zero(); m];
    for (word, c) in theta.terms() {
        if word.contact_degree() != 1 || word.horizontal_degree() + 1 != n {
            continue;
        }
        let mut fiber_w = None;
        let mut missing = n;
        let dxs: Vec<usize> = word
            .factors()
            .iter()
            .filter_map(|f| match f {
                Basis::Dx(k) => Some(*k),
                Basis::Theta { fiber, index } => {
                    fiber_w = Some((*fiber, index.clone()));
                    None
                }
            })
            .collect();
        for k in 0..n {
            if !dxs.contains(&k) {
                missing = k;
            }
        }
        let (fiber, w) = fiber_w.unwrap();
        // word = ± θ_w ∧ ι_k vol
        let sign = if (missing + n - 1) % 2 == 0 { 1 } else { -1 };
        let a = c.scale(&coeff_int(sign));
        let dk = e.restricted_total_derivative(&a, missing)?;
        boxop[fiber].add_term(w.clone(), dk);
        boxop[fiber].add_term(w.incremented(missing), a);
    }
    let leaders: Vec<(usize, MultiIndex)> = e.relations().keys().cloned().collect();
    let l = e.linearization();
    // Divide □ by l_E: every external index β ≥ γ_a is removed with D_{β−γ_a} ∘ l_E[a].
    let mut quotient: Vec<DiffPoly> = vec![DiffPoly::zero(); leaders.len()];
    for _ in 0..REDUCTION_STEPS {
        let hit = boxop.iter().enumerate().find_map(|(f, p)| {
            p.0.iter().rev().find_map(|(beta, c)| {
                leaders
                    .iter()
                    .position(|(lf, g)| *lf == f && g.le(beta))
                    .map(|a| (a, beta.checked_sub(&leaders[a].1).unwrap(), c.clone()))
            })
        });
        let Some((a, shift, c)) = hit else {
            let all_zero = boxop.iter().all(DiffPoly::is_zero);
            if !all_zero {
                return Ok(None);
            }
            let psi = quotient
                .iter()
                .map(|q| {
                    q.0.iter()
                        .map(|(alpha, c)| {
                            let t = Frame::total_derivative_multi(e, c, alpha)?;
                            Ok(if alpha.order() % 2 == 0 { t } else { -t })
                        })
                        .sum::<Result<Expr>>()
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(Some(psi));
        };
        let step = DiffPoly(std::iter::once((shift, c)).collect());
        quotient[a] = quotient[a].add(&step);
        for (f, bx) in boxop.iter_mut().enumerate() {
            let sub = step.compose(l.entry(a, f)).map_coefficients(|x| e.restrict(x))?;
            *bx = bx.add(&sub.neg());
        }
    }
    Ok(None)
}

const REDUCTION_STEPS: usize = 10_000;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jetspace::Bundle;
    use crate::symexpr::{coeff_ratio, InvertibleRegistry};

    fn pkdv() -> (EquationManifold, Expr) {
        let b = Bundle::new(&["t", "x"], &["u"]).unwrap();
        let ux = b.u(0, &[0, 1]);
        let rel = vec![(b.jet_atom(0, &[1, 0]), Expr::int(3) * ux.pow(2) + b.u(0, &[0, 3]))];
        let lambda = (&ux * &b.u(0, &[1, 0])).scale(&coeff_ratio(1, 2)) - ux.pow(3)
            + b.u(0, &[0, 2]).pow(2).scale(&coeff_ratio(1, 2));
        (EquationManifold::build(b, rel, InvertibleRegistry::new()).unwrap(), lambda)
    }

    #[test]
    fn pkdv_translation_in_kernel() {
        let (e, l) = pkdv();
        let il = internal_lagrangian(&l, &e, None).unwrap();
        let c = noether_classify(&il, &e, &Characteristic::new(vec![Expr::one()])).unwrap();
        assert!(c.is_kernel_degenerate(), "{c:?}");
    }

    #[test]
    fn pkdv_presymplectic_operator() {
        let (e, _) = pkdv();
        let dx = CDiffOperator::total_derivative(2, MultiIndex::unit(2, 1));
        assert!(check_presymplectic_operator(&dx, &e).unwrap());
    }
}
