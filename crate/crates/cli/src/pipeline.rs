//! Named derivation pipelines over a parsed problem file.

use std::collections::HashMap;
use std::sync::Arc;

use jetvar_core::eqvariety::{CoveringSpec, EquationManifold};
use jetvar_core::forms::Form;
use jetvar_core::intlag::{
    check_conserved_current, internal_lagrangian, noether_classify, presymplectic_defect, symmetry_action_unchecked,
    InternalLagrangian, NoetherClass, SymmetryField,
};
use jetvar_core::jetspace::{apply_evolutionary, Bundle, Characteristic};
use jetvar_core::linalg::determinant;
use jetvar_core::notation::{coeff_string, Printer, Style};
use jetvar_core::sections::{check_almost_cartan, kovalevskaya_reduction, pullback_density, solve_ansatz, stationarity_equations};
use jetvar_core::symexpr::{coeff_int, ArgSet, Atom, Expr, InvertibleRegistry, MultiIndex};
use jetvar_core::varcalc::{euler, noether_form, nondegeneracy_matrix, CDiffOperator, Dependent, DiffPoly};
use jetvar_core::Error;

use crate::problem::{operator_bundle, Arg, Pipeline, ProblemFile, Task};
use crate::report::{DerivationReport, Label, Step};

/// A domain error attributed to the step that raised it.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{step}: {error}")]
pub struct StepError {
    pub step: String,
    pub error: Error,
}

type SResult<T> = Result<T, StepError>;

fn at<T>(step: &str, r: jetvar_core::Result<T>) -> SResult<T> {
    r.map_err(|error| StepError {
        step: step.to_string(),
        error,
    })
}

fn invalid(step: &str, msg: String) -> StepError {
    StepError {
        step: step.to_string(),
        error: Error::Invalid(msg),
    }
}

/// Built equation manifolds, shared by the tasks of one file.
pub struct Session<'a> {
    pub pf: &'a ProblemFile,
    manifolds: HashMap<String, EquationManifold>,
}

impl<'a> Session<'a> {
    pub fn new(pf: &'a ProblemFile) -> Self {
        Session {
            pf,
            manifolds: HashMap::new(),
        }
    }

    /// Build (or fetch) the named system or covering.
    pub fn manifold(&mut self, name: &str) -> SResult<EquationManifold> {
        if let Some(m) = self.manifolds.get(name) {
            return Ok(m.clone());
        }
        let step = format!("build {name}");
        let pf = self.pf;
        let m = if let Some(s) = pf.system(name) {
            at(
                &step,
                EquationManifold::build(pf.bundle.clone(), s.relations.clone(), pf.registry.clone()),
            )?
        } else if let Some(c) = pf.covering(name) {
            let base = self.manifold(&c.over)?;
            let spec = CoveringSpec {
                new_fibers: c.fibers.clone(),
                relations: c.relations.clone(),
                chart: c.chart.clone(),
            };
            at(&step, base.adjoin_covering(&spec))?
        } else {
            return Err(invalid(&step, format!("unknown system `{name}`")));
        };
        self.manifolds.insert(name.to_string(), m.clone());
        Ok(m)
    }

    /// Build every system and covering.
    pub fn check(&mut self) -> SResult<()> {
        let pf = self.pf;
        for s in &pf.systems {
            self.manifold(&s.name)?;
        }
        for c in &pf.coverings {
            self.manifold(&c.name)?;
        }
        Ok(())
    }

    pub fn run(&mut self, task: &Task) -> SResult<DerivationReport> {
        let pf = self.pf;
        let mut report = DerivationReport {
            problem: pf.name.clone(),
            task: task.name.clone(),
            pipeline: task.pipeline.name().to_string(),
            bundle: pf.bundle.clone(),
            steps: Vec::new(),
        };
        let lambda = task.reference("density").and_then(|d| pf.density(d)).cloned();
        let system = match task.reference("system") {
            Some(s) => Some(self.manifold(s)?),
            None => None,
        };
        if let Some(e) = &system {
            report.bundle = e.bundle().clone();
        }
        let skip = task.reference("skip").and_then(|s| report.bundle.base_index(s));
        let n = report.bundle.n();
        let m = report.bundle.m();
        let steps = &mut report.steps;
        match task.pipeline {
            Pipeline::Euler => {
                let l = lambda.unwrap();
                let el = euler(&l, &Dependent::fibers(m));
                let mut s = Step::new("Euler-Lagrange expressions");
                for (i, c) in el.components().iter().enumerate() {
                    s = s.value(Label::Plain(format!("E({})", pf.bundle.fiber_names()[i])), c.clone());
                }
                steps.push(s);
            }
            Pipeline::NoetherForm => {
                let w = noether_form(&lambda.unwrap(), n, skip);
                steps.push(Step::new("Noether form").form(Label::Plain("omega_L".into()), w));
            }
            Pipeline::InternalLagrangian => {
                let e = system.unwrap();
                let il = at("internal Lagrangian", internal_lagrangian(&lambda.unwrap(), &e, skip))?;
                let dl = at("presymplectic form", jetvar_core::intlag::presymplectic(&il, &e))?;
                steps.push(Step::new("Noether form").form(Label::Plain("omega_L".into()), il.noether.clone()));
                steps.push(Step::new("representative").form(Label::Plain("l".into()), il.representative.clone()));
                steps.push(Step::new("presymplectic form").form(Label::Plain("dl".into()), dl));
            }
            Pipeline::PresymplecticCheck => {
                let e = system.unwrap();
                let Some(Arg::Operator(rows)) = task.args.get("operator") else {
                    unreachable!("operator is required")
                };
                let ob = operator_bundle(e.bundle());
                let op = at("operator", operator_from_rows(rows, &ob))?;
                let defect = at("defect", presymplectic_defect(&op, &e))?;
                let mut s = Step::new("presymplectic defect");
                for i in 0..defect.rows() {
                    for j in 0..defect.cols() {
                        s = s.value(
                            Label::Plain(format!("defect[{}][{}]", i + 1, j + 1)),
                            operator_expr(defect.entry(i, j), &ob),
                        );
                    }
                }
                steps.push(s.flag("presymplectic", defect.is_zero()));
            }
            Pipeline::NoetherClassify | Pipeline::SymmetryAction => {
                let e = system.unwrap();
                let l = lambda.unwrap();
                let phi = Characteristic::new(task.exprs("symmetry").unwrap().to_vec());
                let il = at("internal Lagrangian", internal_lagrangian(&l, &e, skip))?;
                let is_sym = at("symmetry check", e.is_symmetry(&phi))?;
                if !is_sym {
                    return Err(StepError {
                        step: "symmetry check".into(),
                        error: Error::NotASymmetry,
                    });
                }
                let theta = at(
                    "symmetry action",
                    symmetry_action_unchecked(&il, &e, &SymmetryField::Evolutionary(phi.clone())),
                )?;
                if task.pipeline == Pipeline::SymmetryAction {
                    steps.push(
                        Step::new("symmetry action")
                            .form(Label::Plain("i_X dl".into()), theta.clone())
                            .flag("vanishes", theta.is_zero()),
                    );
                } else {
                    steps.push(noether_steps(&il, &e, &phi, &l, &theta)?);
                }
            }
            Pipeline::SectionEl => {
                let a = pf.ansatz(task.reference("ansatz").unwrap()).unwrap();
                let e = self.manifold(&a.on)?;
                report.bundle = e.bundle().clone();
                let skip = task.reference("skip").and_then(|s| report.bundle.base_index(s));
                let free = a
                    .free
                    .iter()
                    .map(|(j, v)| {
                        let (f, i) = j.jet_parts().unwrap();
                        ((f, i.clone()), v.clone())
                    })
                    .collect();
                let sigma = at("section", solve_ansatz(&e, free, a.directions.clone(), a.order))?;
                let mut s = Step::new("section");
                if let Some(Arg::Jets(show)) = task.args.get("show") {
                    for j in show {
                        let (f, i) = j.jet_parts().unwrap();
                        s = s.value(Label::Expr(Expr::atom(j.clone())), at("section", sigma.value(&e, f, i))?);
                    }
                }
                s = s.flag("almost Cartan", at("section", check_almost_cartan(&sigma, &e))?);
                let steps = &mut report.steps;
                steps.push(s);
                let (Some(l), Some(Arg::Names(vary))) = (lambda, task.args.get("vary")) else {
                    return Ok(report);
                };
                let il = at("internal Lagrangian", internal_lagrangian(&l, &e, skip))?;
                let rho = at("pullback", pullback_density(&il.representative, &sigma, &e))?;
                steps.push(Step::new("pullback density").value(Label::Plain("rho".into()), rho.clone()));
                let names: Vec<Arc<str>> = vary.iter().map(|v| Arc::from(v.as_str())).collect();
                let eqs = stationarity_equations(&rho, &names);
                steps.push(Step::new("stationarity equations").equations(eqs.into_iter().filter(|q| !q.is_zero())));
            }
            Pipeline::Kovalevskaya => {
                let l = lambda.unwrap();
                let y = pf.bundle.base_index(task.reference("along").unwrap()).unwrap();
                let k = task.int("k").unwrap();
                let r = at("reduction", kovalevskaya_reduction(&l, &pf.bundle, &pf.registry, k, y))?;
                report.bundle = r.manifold.bundle().clone();
                let steps = &mut report.steps;
                let pr = Printer::new(&report.bundle, Style::Text);
                let mut solved = Step::new("Kovalevskaya form");
                for ((f, i), v) in r.manifold.relations() {
                    solved = solved.value(Label::Expr(Expr::atom(Atom::jet(*f, i.clone()))), v.clone());
                }
                steps.push(solved);
                steps.push(
                    Step::new("reduced density")
                        .value(Label::Plain("rho".into()), r.density.clone())
                        .flag("agrees with the closed form", r.density == r.density_formula),
                );
                for st in &r.steps {
                    let target: Vec<String> = r.unknowns[st.r as usize]
                        .iter()
                        .zip(&r.unknowns[0])
                        .map(|(vr, v0)| {
                            let d = Expr::atom(Atom::func(v0, MultiIndex::zero(n), ArgSet::all(n)));
                            let mut dd = d;
                            for _ in 0..st.r {
                                dd = dd.total_derivative(y);
                            }
                            format!("{vr} = {}", pr.expr(&dd))
                        })
                        .collect();
                    steps.push(
                        Step::new(&format!("variation of {}", r.unknowns[(2 * k - st.r) as usize].join(", ")))
                            .equations(st.equations.clone())
                            .value(Label::Plain("det".into()), st.determinant.clone())
                            .text(format!("implies {}", target.join(", ")))
                            .flag("holds", st.holds),
                    );
                }
                let sign = match r.sign {
                    Some(1) => "+",
                    Some(_) => "-",
                    None => "none",
                };
                steps.push(
                    Step::new(&format!("variation of {}", r.unknowns[0].join(", ")))
                        .equations(r.reduced_original.clone())
                        .text(format!("sign relative to the original equations: {sign}"))
                        .flag("original equations recovered", r.verified()),
                );
            }
            Pipeline::ConservedCurrent => {
                let e = system.unwrap();
                let Some(Arg::Form(w)) = task.args.get("current") else {
                    unreachable!("current is required")
                };
                let ok = at("conservation", check_conserved_current(w, &e))?;
                steps.push(
                    Step::new("conservation")
                        .form(Label::Plain("omega".into()), w.clone())
                        .flag("conserved", ok),
                );
            }
            Pipeline::Nondegeneracy => {
                let l = lambda.unwrap();
                let xi = task.exprs("covector").unwrap();
                let k = task.int("k").unwrap();
                let a = nondegeneracy_matrix(&l, m, k, xi);
                let det = determinant(&a);
                let mut s = Step::new("symbol matrix");
                for (i, row) in a.iter().enumerate() {
                    for (j, c) in row.iter().enumerate() {
                        s = s.value(Label::Plain(format!("A[{}][{}]", i + 1, j + 1)), c.clone());
                    }
                }
                steps.push(s.value(Label::Plain("det".into()), det.clone()).flag("singular", det.is_zero()));
            }
            Pipeline::RestrictedDerivatives => {
                let e = system.unwrap();
                let order = task.int("order").unwrap();
                if order >= e.max_order() {
                    return Err(StepError {
                        step: "restricted derivatives".into(),
                        error: Error::OrderLimit {
                            order: order + 1,
                            limit: e.max_order(),
                        },
                    });
                }
                let mut s = Step::new("restricted total derivatives");
                for c in e.internal_coordinates(order) {
                    let (f, i) = c.jet_parts().unwrap();
                    for k in 0..n {
                        let v = at("restricted derivatives", e.normal_form(f, &i.incremented(k)))?;
                        s = s.value(
                            Label::Derivative(e.bundle().base_names()[k].to_string(), Expr::atom(c.clone())),
                            v,
                        );
                    }
                }
                steps.push(s);
            }
            Pipeline::SymmetryCheck => {
                let e = system.unwrap();
                let phi = Characteristic::new(task.exprs("symmetry").unwrap().to_vec());
                let ok = at("symmetry check", e.is_symmetry(&phi))?;
                let lin = at(
                    "symmetry check",
                    e.linearization()
                        .apply(phi.components())
                        .and_then(|v| v.iter().map(|c| e.restrict(c)).collect::<jetvar_core::Result<Vec<_>>>()),
                )?;
                let mut s = Step::new("linearized equations");
                for (i, c) in lin.into_iter().enumerate() {
                    s = s.value(Label::Plain(format!("l_E(phi)[{}]", i + 1)), c);
                }
                steps.push(s.flag("symmetry", ok));
            }
            Pipeline::CosymmetryCheck => {
                let e = system.unwrap();
                let psi = task.exprs("cosymmetry").unwrap();
                let ok = at("cosymmetry check", e.is_cosymmetry(psi))?;
                steps.push(Step::new("adjoint linearization").flag("cosymmetry", ok));
            }
        }
        Ok(report)
    }
}

fn noether_steps(
    il: &InternalLagrangian,
    e: &EquationManifold,
    phi: &Characteristic,
    l: &Expr,
    theta: &Form,
) -> SResult<Step> {
    let class = at("classification", noether_classify(il, e, phi))?;
    let pr = Printer::new(e.bundle(), Style::Text);
    let phis: Vec<String> = phi.components().iter().map(|c| pr.expr(c)).collect();
    let mut s = Step::new("Noether classification")
        .value(Label::Plain("E_phi(L)".into()), apply_evolutionary(phi, l))
        .form(Label::Plain("i_X dl".into()), theta.clone());
    s = match &class {
        c if c.is_kernel_degenerate() => s.text(format!(
            "conservation-law-producing or kernel-degenerate: \u{394}({}) = 0",
            phis.join(", ")
        )),
        NoetherClass::ConservationLawProducing { cosymmetry: Some(psi) } => {
            let mut s = s.text("conservation-law-producing");
            for (i, c) in psi.iter().enumerate() {
                s = s.value(Label::Plain(format!("psi[{}]", i + 1)), c.clone());
            }
            s
        }
        NoetherClass::ConservationLawProducing { cosymmetry: None } => {
            s.text("conservation-law-producing; no cosymmetry extracted")
        }
        NoetherClass::NontrivialInternalLagrangian { factor } => s.text(format!(
            "nontrivial internal Lagrangian: E_phi(L) = {} L modulo divergences",
            coeff_string(factor)
        )),
        NoetherClass::Undecided => s.text("undecided"),
    };
    Ok(s)
}

/// Read a matrix of operators written as polynomials in `D_x`, … .
fn operator_from_rows(rows: &[Vec<Expr>], ob: &Bundle) -> jetvar_core::Result<CDiffOperator> {
    let entries = rows
        .iter()
        .map(|r| r.iter().map(|e| expr_operator(e, ob)).collect::<jetvar_core::Result<Vec<_>>>())
        .collect::<jetvar_core::Result<Vec<_>>>()?;
    CDiffOperator::from_entries(ob.n(), entries)
}

fn operator_symbols(ob: &Bundle) -> Vec<Atom> {
    ob.base_names()
        .iter()
        .map(|x| Atom::Param(Arc::from(format!("D_{x}").as_str())))
        .collect()
}

/// Split `Σ c_α D^α` into its coefficients by Taylor expansion in the symbols.
fn expr_operator(e: &Expr, ob: &Bundle) -> jetvar_core::Result<DiffPoly> {
    let syms = operator_symbols(ob);
    let at_zero = |x: &Expr| x.substitute(&|a: &Atom| syms.contains(a).then(Expr::zero), &InvertibleRegistry::new());
    let mut out = DiffPoly::zero();
    for o in 0..=e.numerator().total_degree() {
        for alpha in MultiIndex::all_of_order(ob.n(), o) {
            let mut d = e.clone();
            let mut fact: i64 = 1;
            for (k, a) in syms.iter().enumerate() {
                for j in 0..alpha.get(k) {
                    d = d.diff(a);
                    fact *= i64::from(j) + 1;
                }
            }
            let c = at_zero(&d)?.scale(&(coeff_int(1) / coeff_int(fact)));
            if !c.is_zero() {
                out.add_term(alpha, c);
            }
        }
    }
    Ok(out)
}

fn operator_expr(p: &DiffPoly, ob: &Bundle) -> Expr {
    p.0.iter()
        .map(|(alpha, c)| {
            let mut t = c.clone();
            for (k, &e) in alpha.exponents().iter().enumerate() {
                if e > 0 {
                    let sym = ob.param(&format!("D_{}", ob.base_names()[k])).expect("operator symbol");
                    t = t * sym.pow(u32::from(e));
                }
            }
            t
        })
        .sum()
}
