//! Randomized invariants shared by the property suite and the acceptance run.
//!
//! Each property draws small random polynomials over a fixed atom pool and
//! checks an identity at exact equality.

use std::sync::{Arc, OnceLock};

use jetvar_core::eqvariety::EquationManifold;
use jetvar_core::forms::{Basis, Context, Form, FreeJets};
use jetvar_core::intlag::internal_lagrangian;
use jetvar_core::jetspace::{apply_evolutionary, total_derivative, Bundle, Characteristic};
use jetvar_core::sections::{pullback_density, solve_ansatz, stationarity_equations, SectionAnsatz};
use jetvar_core::symexpr::{coeff_ratio, Atom, Expr, InvertibleRegistry, MultiIndex};
use jetvar_core::varcalc::{euler, noether_form, CDiffOperator, Dependent, DiffPoly};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestError, TestRunner};

type Check = Result<(), TestCaseError>;

/// Terms `c * Π pool[i]` of a random polynomial.
pub type Recipe = Vec<(i64, Vec<usize>)>;

fn recipe(pool: usize, terms: usize) -> impl Strategy<Value = Recipe> {
    let coeff = prop_oneof![-3i64..=-1, 1i64..=3];
    prop::collection::vec((coeff, prop::collection::vec(0..pool, 0..=3)), 1..=terms)
}

/// Pool indices wrap around, so one strategy serves pools of any size.
fn build(r: &Recipe, pool: &[Expr]) -> Expr {
    r.iter()
        .map(|(c, idx)| idx.iter().fold(Expr::int(*c), |acc, &i| &acc * &pool[i % pool.len()]))
        .sum()
}

/// Terms `poly * Π basis[i]` of a random form.
pub type FormRecipe = Vec<(Recipe, Vec<usize>)>;

fn form_recipe(pool: usize, basis: usize, max_degree: usize) -> impl Strategy<Value = FormRecipe> {
    prop::collection::vec((recipe(pool, 2), prop::collection::vec(0..basis, 0..=max_degree)), 1..=3)
}

fn build_form(r: &FormRecipe, pool: &[Expr], basis: &[Basis], ctx: Context) -> Form {
    Form::from_products(
        r.iter()
            .map(|(c, w)| (build(c, pool), w.iter().map(|&i| basis[i % basis.len()].clone()).collect())),
        ctx,
    )
}

fn idx(e: &[u16]) -> MultiIndex {
    MultiIndex::from_slice(e)
}

/// Base `x, y`, fibers `u, v`, formal functions `f, g, Y`.
fn free_bundle() -> Bundle {
    let mut b = Bundle::new(&["x", "y"], &["u", "v"]).unwrap();
    for f in ["f", "g", "Y"] {
        b.add_function(f, &["x", "y"]).unwrap();
    }
    b
}

fn jets_up_to(b: &Bundle, order: u16) -> Vec<Expr> {
    let mut out = Vec::new();
    for f in 0..b.m() {
        for a in 0..=order {
            for c in 0..=order - a {
                out.push(b.u(f, &[a, c]));
            }
        }
    }
    out
}

fn free_pool(order: u16) -> Vec<Expr> {
    let b = free_bundle();
    let mut p = jets_up_to(&b, order);
    p.push(b.x(0));
    p
}

fn free_basis() -> Vec<Basis> {
    let th = |f, e: &[u16]| Basis::Theta { fiber: f, index: idx(e) };
    vec![
        Basis::Dx(0),
        Basis::Dx(1),
        th(0, &[0, 0]),
        th(0, &[1, 0]),
        th(0, &[0, 1]),
        th(1, &[0, 0]),
        th(0, &[2, 0]),
    ]
}

fn frame() -> FreeJets {
    FreeJets::new(2, InvertibleRegistry::new())
}

/// Laplace `u_xx = -u_yy` in the single-fiber bundle.
struct Laplace {
    e: EquationManifold,
    pool: Vec<Expr>,
    basis: Vec<Basis>,
    sigma: SectionAnsatz,
    representative: Form,
}

fn laplace() -> &'static Laplace {
    static L: OnceLock<Laplace> = OnceLock::new();
    L.get_or_init(|| {
        let mut b = Bundle::new(&["x", "y"], &["u"]).unwrap();
        for f in ["f", "g", "Y"] {
            b.add_function(f, &["x", "y"]).unwrap();
        }
        let y = b.func("Y", &[]).unwrap();
        let mut reg = InvertibleRegistry::new();
        reg.declare(&(Expr::one() + y.pow(2)));
        let e = EquationManifold::build(b.clone(), vec![(b.jet_atom(0, &[2, 0]), -b.u(0, &[0, 2]))], reg).unwrap();
        let coords = e.internal_coordinates(2);
        let pool: Vec<Expr> = coords.iter().cloned().map(Expr::atom).collect();
        let mut basis = vec![Basis::Dx(0), Basis::Dx(1)];
        basis.extend(e.internal_coordinates(1).iter().filter_map(Basis::theta_of));
        let free = vec![
            ((0, idx(&[0, 0])), b.func("f", &[]).unwrap()),
            ((0, idx(&[0, 1])), b.func("g", &[]).unwrap()),
        ];
        let sigma = solve_ansatz(&e, free, vec![vec![Expr::one(), y]], 2).unwrap();
        let lambda = -(b.u(0, &[1, 0]).pow(2) + b.u(0, &[0, 1]).pow(2)).scale(&coeff_ratio(1, 2));
        let representative = internal_lagrangian(&lambda, &e, None).unwrap().representative;
        Laplace {
            e,
            pool,
            basis,
            sigma,
            representative,
        }
    })
}

/// The example manifolds used for restriction identities.
fn manifolds() -> &'static [EquationManifold] {
    static M: OnceLock<Vec<EquationManifold>> = OnceLock::new();
    M.get_or_init(|| {
        let reg = InvertibleRegistry::new();
        let heat = Bundle::new(&["x", "t"], &["u"]).unwrap();
        let pkdv = Bundle::new(&["t", "x"], &["u"]).unwrap();
        let ux = pkdv.u(0, &[0, 1]);
        vec![
            laplace().e.clone(),
            EquationManifold::build(heat.clone(), vec![(heat.jet_atom(0, &[0, 1]), heat.u(0, &[2, 0]))], reg.clone())
                .unwrap(),
            EquationManifold::build(
                pkdv.clone(),
                vec![(pkdv.jet_atom(0, &[0, 3]), pkdv.u(0, &[1, 0]) - Expr::int(3) * ux.pow(2))],
                reg,
            )
            .unwrap(),
        ]
    })
}

fn internal_pool(e: &EquationManifold, order: u32) -> Vec<Expr> {
    e.internal_coordinates(order).into_iter().map(Expr::atom).collect()
}

fn ok<T>(r: jetvar_core::Result<T>) -> Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::fail(e.to_string()))
}

fn leibniz((a, b, k): (Recipe, Recipe, usize)) -> Check {
    let pool = free_pool(2);
    let (a, b) = (build(&a, &pool), build(&b, &pool));
    let atom = pool[k].atoms().into_iter().next().unwrap();
    let lhs = (&a * &b).diff(&atom);
    let rhs = &a.diff(&atom) * &b + &a * &b.diff(&atom);
    prop_assert_eq!(lhs, rhs);
    Ok(())
}

fn partials_commute((e, i, j): (Recipe, usize, usize)) -> Check {
    let pool = free_pool(2);
    let e = build(&e, &pool);
    let (a, b) = (
        pool[i].atoms().into_iter().next().unwrap(),
        pool[j].atoms().into_iter().next().unwrap(),
    );
    prop_assert_eq!(e.diff(&a).diff(&b), e.diff(&b).diff(&a));
    Ok(())
}

fn substitution_distributes((a, b, s0, s1): (Recipe, Recipe, Recipe, Recipe)) -> Check {
    let pool = free_pool(1);
    let (a, b) = (build(&a, &pool), build(&b, &pool));
    let fb = free_bundle();
    let vals = [fb.func("f", &[0, 1]).unwrap(), fb.func("g", &[]).unwrap()];
    let (v0, v1) = (build(&s0, &vals), build(&s1, &vals));
    let (u, ux) = (fb.jet_atom(0, &[0, 0]), fb.jet_atom(0, &[1, 0]));
    let reg = InvertibleRegistry::new();
    let sub = |e: &Expr| {
        e.substitute(
            &|x: &Atom| {
                if *x == u {
                    Some(v0.clone())
                } else if *x == ux {
                    Some(v1.clone())
                } else {
                    None
                }
            },
            &reg,
        )
    };
    prop_assert_eq!(ok(sub(&(&a + &b)))?, ok(sub(&a))? + ok(sub(&b))?);
    prop_assert_eq!(ok(sub(&(&a * &b)))?, &ok(sub(&a))? * &ok(sub(&b))?);
    Ok(())
}

fn total_derivatives_commute(e: Recipe) -> Check {
    let e = build(&e, &free_pool(4));
    prop_assert_eq!(total_derivative(&total_derivative(&e, 0), 1), total_derivative(&total_derivative(&e, 1), 0));
    Ok(())
}

fn evolutionary_commutes((p0, p1, e, k): (Recipe, Recipe, Recipe, usize)) -> Check {
    let (p2, p3) = (free_pool(2), free_pool(3));
    let phi = Characteristic::new(vec![build(&p0, &p2), build(&p1, &p2)]);
    let e = build(&e, &p3);
    prop_assert_eq!(
        apply_evolutionary(&phi, &total_derivative(&e, k)),
        total_derivative(&apply_evolutionary(&phi, &e), k)
    );
    let b = free_bundle();
    prop_assert_eq!(&apply_evolutionary(&phi, &b.u(0, &[0, 0])), &phi.components()[0]);
    prop_assert_eq!(&apply_evolutionary(&phi, &b.u(1, &[0, 0])), &phi.components()[1]);
    Ok(())
}

fn d_squared_free(w: FormRecipe) -> Check {
    let w = build_form(&w, &free_pool(2), &free_basis(), Context::Free);
    let fr = frame();
    let dw = ok(w.exterior_d(&fr))?;
    prop_assert!(ok(dw.exterior_d(&fr))?.is_zero());
    if let (Some(a), Some(b)) = (w.min_contact_degree(), dw.min_contact_degree()) {
        prop_assert!(b >= a, "contact degree dropped from {} to {}", a, b);
    }
    Ok(())
}

fn d_squared_laplace(w: FormRecipe) -> Check {
    let l = laplace();
    let w = build_form(&w, &l.pool, &l.basis, l.e.context());
    let dw = ok(w.exterior_d(&l.e))?;
    prop_assert!(ok(dw.exterior_d(&l.e))?.is_zero());
    Ok(())
}

fn d_leibniz((a, b): (FormRecipe, FormRecipe)) -> Check {
    let (pool, basis, fr) = (free_pool(2), free_basis(), frame());
    let a = build_form(&a, &pool, &basis, Context::Free);
    let b = build_form(&b, &pool, &basis, Context::Free);
    // keep `a` homogeneous so that the sign is well defined
    let deg = a.terms().next().map_or(0, |(w, _)| w.degree());
    let a = Form::from_products(
        a.terms().filter(|(w, _)| w.degree() == deg).map(|(w, c)| (c.clone(), w.factors().to_vec())),
        Context::Free,
    );
    let lhs = ok(ok(a.wedge(&b))?.exterior_d(&fr))?;
    let first = ok(ok(a.exterior_d(&fr))?.wedge(&b))?;
    let second = ok(a.wedge(&ok(b.exterior_d(&fr))?))?;
    let second = if deg.is_multiple_of(2) { second } else { second.neg() };
    prop_assert_eq!(lhs, ok(first.add(&second))?);
    Ok(())
}

fn dh_squared(w: FormRecipe) -> Check {
    let (pool, fr) = (free_pool(2), frame());
    let w = build_form(&w, &pool, &[Basis::Dx(0), Basis::Dx(1)], Context::Free);
    let once = ok(w.horizontal_d(&fr))?;
    prop_assert!(ok(once.horizontal_d(&fr))?.is_zero());
    Ok(())
}

fn cartan_magic((p0, p1, f): (Recipe, Recipe, Recipe)) -> Check {
    let pool = free_pool(2);
    let phi = Characteristic::new(vec![build(&p0, &pool), build(&p1, &pool)]);
    let f = build(&f, &pool);
    let fr = frame();
    let df = ok(Form::function(f.clone(), Context::Free).exterior_d(&fr))?;
    let contracted = ok(df.contract_evolutionary(&phi, &fr))?;
    prop_assert_eq!(contracted, Form::function(apply_evolutionary(&phi, &f), Context::Free));
    Ok(())
}

fn noether_residual((lambda, p0, p1): (Recipe, Recipe, Recipe)) -> Check {
    let pool = free_pool(2);
    let lambda = build(&lambda, &pool);
    let phi = Characteristic::new(vec![build(&p0, &pool), build(&p1, &pool)]);
    let fr = frame();
    let el = euler(&lambda, &Dependent::fibers(2));
    let pairing: Expr = el.components().iter().zip(phi.components()).map(|(a, b)| a * b).sum();
    let omega = noether_form(&lambda, 2, None);
    let flux = ok(ok(omega.contract_evolutionary(&phi, &fr))?.horizontal_d(&fr))?;
    let residual = ok(Form::volume(2, apply_evolutionary(&phi, &lambda) - pairing, Context::Free).sub(&flux))?;
    prop_assert!(residual.is_zero(), "{:?}", residual);
    Ok(())
}

fn noether_form_defines_cartan_form(lambda: Recipe) -> Check {
    let lambda = build(&lambda, &free_pool(2));
    let fr = frame();
    let full = ok(Form::volume(2, lambda.clone(), Context::Free).add(&noether_form(&lambda, 2, None)))?;
    let rest = ok(ok(full.exterior_d(&fr))?.sub(&euler(&lambda, &Dependent::fibers(2)).to_form(2)))?;
    prop_assert!(rest.min_contact_degree().is_none_or(|c| c >= 2), "{:?}", rest);
    Ok(())
}

fn euler_kills_divergences((p, q): (Recipe, Recipe)) -> Check {
    let pool = free_pool(2);
    let div = total_derivative(&build(&p, &pool), 0) + total_derivative(&build(&q, &pool), 1);
    prop_assert!(euler(&div, &Dependent::fibers(2)).is_zero());
    Ok(())
}

type OpRecipe = Vec<Vec<Vec<(u16, u16, Recipe)>>>;

fn op_recipe() -> impl Strategy<Value = OpRecipe> {
    let entry = prop::collection::vec((0u16..=2, 0u16..=2, recipe(6, 2)), 0..=2);
    prop::collection::vec(prop::collection::vec(entry, 2), 2)
}

fn build_op(r: &OpRecipe) -> CDiffOperator {
    let pool = free_pool(1);
    let rows = r
        .iter()
        .map(|row| {
            row.iter()
                .map(|terms| {
                    let mut p = DiffPoly::zero();
                    for (a, b, c) in terms {
                        p.add_term(idx(&[*a, (*b).min(2 - *a)]), build(c, &pool));
                    }
                    p
                })
                .collect()
        })
        .collect();
    CDiffOperator::from_entries(2, rows).unwrap()
}

fn adjoint_laws((a, b): (OpRecipe, OpRecipe)) -> Check {
    let (a, b) = (build_op(&a), build_op(&b));
    prop_assert_eq!(&a.adjoint().adjoint(), &a);
    prop_assert_eq!(ok(a.compose(&b))?.adjoint(), ok(b.adjoint().compose(&a.adjoint()))?);
    Ok(())
}

fn restriction_laws((which, a, b, k): (usize, Recipe, Recipe, usize)) -> Check {
    let e = &manifolds()[which];
    let pool = free_pool(3);
    // the single-fiber manifolds only see fiber 0 of the pool
    let pool: Vec<Expr> = pool.into_iter().take(10).collect();
    let (a, b) = (build(&a, &pool), build(&b, &pool));
    let ra = ok(e.restrict(&a))?;
    prop_assert_eq!(ok(e.restrict(&total_derivative(&a, k)))?, ok(e.restricted_total_derivative(&ra, k))?);
    prop_assert_eq!(ok(e.restrict(&(&a * &b)))?, &ra * &ok(e.restrict(&b))?);
    Ok(())
}

fn restricted_derivatives_commute((which, a): (usize, Recipe)) -> Check {
    let e = &manifolds()[which];
    let a = build(&a, &internal_pool(e, 3));
    let xy = ok(e.restricted_total_derivative(&ok(e.restricted_total_derivative(&a, 0))?, 1))?;
    let yx = ok(e.restricted_total_derivative(&ok(e.restricted_total_derivative(&a, 1))?, 0))?;
    prop_assert_eq!(xy, yx);
    Ok(())
}

fn pullback_kills_contact((c, i, j): (Recipe, usize, usize)) -> Check {
    let l = laplace();
    let thetas: Vec<&Basis> = l.basis.iter().filter(|b| b.is_contact()).collect();
    let w = Form::from_products(
        [(
            build(&c, &l.pool),
            vec![thetas[i % thetas.len()].clone(), thetas[j % thetas.len()].clone()],
        )],
        l.e.context(),
    );
    prop_assert_eq!(ok(pullback_density(&w, &l.sigma, &l.e))?, Expr::zero());
    Ok(())
}

fn boundary_terms_drop_out((p, q, junk): (Recipe, Recipe, Recipe)) -> Check {
    let l = laplace();
    let pool: Vec<Expr> = internal_pool(&l.e, 1);
    let ctx = l.e.context();
    let eta = Form::from_products(
        [(build(&p, &pool), vec![Basis::Dx(0)]), (build(&q, &pool), vec![Basis::Dx(1)])],
        ctx,
    );
    let theta = |e: &[u16]| Basis::Theta { fiber: 0, index: idx(e) };
    let c2 = Form::from_products([(build(&junk, &pool), vec![theta(&[0, 0]), theta(&[0, 1])])], ctx);
    let unknowns: Vec<Arc<str>> = ["f", "g", "Y"].into_iter().map(Arc::from).collect();
    let before = stationarity_equations(&ok(pullback_density(&l.representative, &l.sigma, &l.e))?, &unknowns);
    let shifted = ok(ok(l.representative.add(&ok(eta.exterior_d(&l.e))?))?.add(&c2))?;
    let after = stationarity_equations(&ok(pullback_density(&shifted, &l.sigma, &l.e))?, &unknowns);
    prop_assert_eq!(before, after);
    Ok(())
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn report<T: std::fmt::Debug>(r: Result<(), TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

/// A named property and its runner.
pub struct Property {
    pub name: &'static str,
    pub run: fn(u32) -> Result<(), String>,
}

macro_rules! property {
    ($name:literal, $strategy:expr, $check:expr) => {
        Property {
            name: $name,
            run: |cases| report(runner(cases).run(&$strategy, $check)),
        }
    };
}

pub fn all() -> Vec<Property> {
    vec![
        property!("derivation rule for partials", (recipe(13, 3), recipe(13, 3), 0usize..13), leibniz),
        property!("mixed partials commute", (recipe(13, 4), 0usize..13, 0usize..13), partials_commute),
        property!(
            "substitution distributes",
            (recipe(7, 3), recipe(7, 3), recipe(2, 2), recipe(2, 2)),
            substitution_distributes
        ),
        property!("[D_x, D_y] = 0", recipe(31, 4), total_derivatives_commute),
        property!(
            "[E_phi, D_i] = 0 and E_phi(u) = phi",
            (recipe(13, 2), recipe(13, 2), recipe(21, 3), 0usize..2),
            evolutionary_commutes
        ),
        property!("d^2 = 0 on free jets", form_recipe(13, 7, 2), d_squared_free),
        property!("d^2 = 0 on the Laplace equation", form_recipe(8, 10, 2), d_squared_laplace),
        property!("Leibniz rule for d", (form_recipe(13, 7, 1), form_recipe(13, 7, 1)), d_leibniz),
        property!("d_h^2 = 0", form_recipe(13, 2, 1), dh_squared),
        property!("i_E_phi df = E_phi(f)", (recipe(13, 2), recipe(13, 2), recipe(13, 3)), cartan_magic),
        property!("Noether residual vanishes", (recipe(13, 3), recipe(13, 2), recipe(13, 2)), noether_residual),
        property!(
            "d(L + omega_L) - E(L) has contact degree >= 2",
            recipe(13, 3),
            noether_form_defines_cartan_form
        ),
        property!("euler of a divergence is zero", (recipe(13, 3), recipe(13, 3)), euler_kills_divergences),
        property!("adjoint is a contravariant involution", (op_recipe(), op_recipe()), adjoint_laws),
        property!(
            "restrict commutes with D and products",
            (0usize..3, recipe(10, 3), recipe(10, 2), 0usize..2),
            restriction_laws
        ),
        property!(
            "restricted total derivatives commute",
            (0usize..3, recipe(6, 3)),
            restricted_derivatives_commute
        ),
        property!(
            "pullback kills contact degree >= 2",
            (recipe(8, 2), 0usize..8, 0usize..8),
            pullback_kills_contact
        ),
        property!(
            "stationarity ignores exact and C^2 terms",
            (recipe(4, 3), recipe(4, 3), recipe(4, 2)),
            boundary_terms_drop_out
        ),
    ]
}
