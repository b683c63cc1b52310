//! Acceptance run over the example problems: every criterion at exact
//! equality, one PASS/FAIL line each.

#[path = "../../core/tests/props/mod.rs"]
mod props;

use std::fmt::Debug;
use std::path::Path;
use std::time::{Duration, Instant};

use jetvar::report::{Item, Label};
use jetvar::{parse_str, DerivationReport, ProblemFile, Session};
use jetvar_core::forms::Form;
use jetvar_core::notation::{parse_expr, parse_form, parse_jet};
use jetvar_core::symexpr::{Atom, Expr};

type Check = Result<(), String>;

fn load(name: &str) -> ProblemFile {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name);
    parse_str(&std::fs::read_to_string(&p).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// A problem file with a session and a parser for expected values.
struct Problem {
    pf: ProblemFile,
}

impl Problem {
    fn new(name: &str) -> Self {
        Problem { pf: load(name) }
    }

    fn run(&self, task: &str) -> Result<DerivationReport, String> {
        let t = self.pf.task(task).ok_or(format!("no task {task}"))?;
        Session::new(&self.pf).run(t).map_err(|e| e.to_string())
    }

    fn expr(&self, r: &DerivationReport, src: &str) -> Expr {
        parse_expr(src, &r.bundle, &self.pf.registry).unwrap_or_else(|e| panic!("{src}: {e}"))
    }

    fn in_scope(&self, scope: &str, src: &str) -> Expr {
        let b = self.pf.scope(scope).unwrap();
        parse_expr(src, b, &self.pf.registry).unwrap_or_else(|e| panic!("{src}: {e}"))
    }

    fn form(&self, r: &DerivationReport, src: &str) -> Form {
        parse_form(src, &r.bundle, &self.pf.registry).unwrap_or_else(|e| panic!("{src}: {e}"))
    }

    fn normal_form(&self, system: &str, jet: &str) -> Result<Expr, String> {
        let m = Session::new(&self.pf).manifold(system).map_err(|e| e.to_string())?;
        let (f, i) = parse_jet(m.bundle(), jet).ok_or(format!("bad jet {jet}"))?;
        m.normal_form(f, &i).map_err(|e| e.to_string())
    }
}

fn same<T: PartialEq + Debug>(what: &str, got: T, want: T) -> Check {
    if got == want {
        Ok(())
    } else {
        Err(format!("{what}: got {got:?}, expected {want:?}"))
    }
}

/// Forms compared term by term; the context tag is not part of the value.
fn same_form(what: &str, got: Option<&Form>, want: &Form) -> Check {
    let got = got.ok_or(format!("{what}: missing"))?;
    let terms = |f: &Form| f.terms().map(|(w, c)| (w.clone(), c.clone())).collect::<Vec<_>>();
    same(what, terms(got), terms(want))
}

fn value<'a>(r: &'a DerivationReport, label: &str) -> Result<&'a Expr, String> {
    r.value(label).ok_or(format!("no value {label}"))
}

fn flag(r: &DerivationReport, label: &str, want: bool) -> Check {
    same(label, r.flag(label), Some(want))
}

fn equations(r: &DerivationReport, step: &str) -> Vec<Expr> {
    r.equations(step).into_iter().cloned().collect()
}

/// Value shown for a coordinate in a section step.
fn shown<'a>(r: &'a DerivationReport, jet: &str) -> Result<&'a Expr, String> {
    let (f, i) = parse_jet(&r.bundle, jet).ok_or(format!("bad jet {jet}"))?;
    let key = Expr::atom(Atom::jet(f, i));
    r.steps
        .iter()
        .flat_map(|s| &s.items)
        .find_map(|it| match it {
            Item::Value {
                label: Label::Expr(e),
                value,
            } if *e == key => Some(value),
            _ => None,
        })
        .ok_or(format!("{jet} not shown"))
}

fn has_text(r: &DerivationReport, text: &str) -> Check {
    let found = r.steps.iter().flat_map(|s| &s.items).any(|it| matches!(it, Item::Text(t) if t == text));
    if found {
        Ok(())
    } else {
        Err(format!("missing line `{text}`"))
    }
}

fn timed(limit: Duration, body: impl FnOnce() -> Check) -> (Check, Duration) {
    let start = Instant::now();
    let r = body();
    let t = start.elapsed();
    match r {
        Ok(()) if t > limit => (Err(format!("took {t:?}, limit {limit:?}")), t),
        r => (r, t),
    }
}

fn laplace() -> Check {
    let p = Problem::new("laplace.jv");

    let r = p.run("el")?;
    same("E(u)", value(&r, "E(u)")?, &p.expr(&r, "u_xx + u_yy"))?;

    let r = p.run("noether")?;
    same_form("omega_L", r.form("omega_L"), &p.form(&r, "-u_x*th(u)&dy + u_y*th(u)&dx"))?;

    // D_y raises the y-order, D_x u_{x y^b} is eliminated through u_xx = -u_yy
    let r = p.run("derivatives")?;
    let mut seen = 0;
    for it in r.steps.iter().flat_map(|s| &s.items) {
        let Item::Value {
            label: Label::Derivative(x, c),
            value,
        } = it
        else {
            continue;
        };
        let Some(Atom::Jet { index, .. }) = c.atoms().into_iter().next() else {
            return Err("derivative of a non-coordinate".into());
        };
        let (a, b) = (index.get(0), index.get(1));
        let want = match (x.as_str(), a) {
            ("y", _) => p.expr(&r, &jet("u", a, b + 1)),
            ("x", 0) => p.expr(&r, &jet("u", 1, b)),
            _ => -p.expr(&r, &jet("u", 0, b + 2)),
        };
        same(&format!("D_{x} {}", jet("u", a, b)), value, &want)?;
        seen += 1;
    }
    same("restricted derivatives listed", seen, 18)?;

    let r = p.run("stationarity")?;
    same(
        "rho",
        value(&r, "rho")?,
        &p.expr(&r, "(Y^2*(d_y f - g)^2 - (d_x f)^2 + g^2)/2 - g*d_y f"),
    )?;
    same(
        "stationarity equations",
        equations(&r, "stationarity equations"),
        vec![
            p.expr(&r, "d_x^2 f + d_y g + d_y(Y^2*(g - d_y f))"),
            p.expr(&r, "(g - d_y f)*(Y^2 + 1)"),
        ],
    )
}

fn jet(u: &str, a: u16, b: u16) -> String {
    if a + b == 0 {
        return u.to_string();
    }
    format!("{u}_{}{}", "x".repeat(a as usize), "y".repeat(b as usize))
}

fn heat() -> Check {
    let p = Problem::new("heat.jv");
    let r = p.run("section")?;
    for (j, v) in [
        ("u", "f"),
        ("u_x", "d_x f"),
        ("u_t", "d_x^2 f"),
        ("u_xx", "d_x^2 f"),
        ("u_xt", "d_x^3 f"),
        ("u_tt", "d_x^4 f"),
    ] {
        same(j, shown(&r, j)?, &p.expr(&r, v))?;
    }
    flag(&r, "almost Cartan", true)
}

fn wave() -> Check {
    let p = Problem::new("wave.jv");
    flag(&p.run("symbol")?, "singular", true)?;
    let r = p.run("stationarity")?;
    let eqs = equations(&r, "stationarity equations");
    same("stationarity equations", eqs.clone(), vec![p.expr(&r, "d_x d_y f")])?;
    let h = eqs.iter().flat_map(Expr::atoms).any(|a| matches!(&a, Atom::Func { name, .. } if &**name == "h1"));
    same("h1 constrained", h, false)
}

fn schrodinger() -> Check {
    let p = Problem::new("schrodinger.jv");
    same(
        "lambda",
        p.pf.density("L").unwrap(),
        &p.in_scope("E", "-V*(u^2 + v^2)/2 - (u_x^2 + v_x^2)/2 + (v*u_t - u*v_t)/2"),
    )?;
    same("u_t", p.normal_form("E", "u_t")?, p.in_scope("E", "-v_xx + V*v"))?;
    same("v_t", p.normal_form("E", "v_t")?, p.in_scope("E", "u_xx - V*u"))?;

    // th(u) stands for du - u_x dx + (v_xx - V v) dt on the equation
    let r = p.run("lagrangian")?;
    same_form(
        "l",
        r.form("l"),
        &p.form(
            &r,
            "-(u*u_xx + u_x^2 + v*v_xx + v_x^2)/2*dt&dx - u_x*dt&th(u) - v_x*dt&th(v) - v/2*dx&th(u) + u/2*dx&th(v)",
        ),
    )?;

    flag(&p.run("dt")?, "singular", true)?;
    flag(&p.run("dx")?, "singular", false)?;

    let r = p.run("stationarity")?;
    flag(&r, "almost Cartan", true)?;
    same(
        "rho",
        value(&r, "rho")?,
        &p.expr(&r, "(g*d_t f - f*d_t g)/2 - ((d_x f)^2 + (d_x g)^2)/2 - V*(f^2 + g^2)/2"),
    )?;
    same(
        "stationarity equations",
        equations(&r, "stationarity equations"),
        vec![
            p.expr(&r, "-d_t g + d_x^2 f - V*f"),
            p.expr(&r, "d_t f + d_x^2 g - V*g"),
        ],
    )
}

fn cauchy_riemann() -> Check {
    let p = Problem::new("cr.jv");
    same("chart u_y", p.normal_form("S", "u_y")?, p.in_scope("S", "-v_x"))?;
    same("chart v_y", p.normal_form("S", "v_y")?, p.in_scope("S", "u_x"))?;

    let r = p.run("derivatives")?;
    let want = [
        ("x", "u", "u_x"),
        ("y", "u", "-v_x"),
        ("x", "u_x", "u_xx"),
        ("y", "u_x", "-v_xx"),
        ("x", "v", "v_x"),
        ("y", "v", "u_x"),
        ("x", "v_x", "v_xx"),
        ("y", "v_x", "u_xx"),
    ];
    let got: Vec<(String, Expr, Expr)> = r
        .steps
        .iter()
        .flat_map(|s| &s.items)
        .filter_map(|it| match it {
            Item::Value {
                label: Label::Derivative(x, c),
                value,
            } => Some((x.clone(), c.clone(), value.clone())),
            _ => None,
        })
        .collect();
    let want: Vec<(String, Expr, Expr)> = want
        .iter()
        .map(|(x, c, v)| (x.to_string(), p.expr(&r, c), p.expr(&r, v)))
        .collect();
    same("restricted derivatives", got, want)?;

    flag(&p.run("current")?, "conserved", true)?;

    let r = p.run("lagrangian")?;
    same_form(
        "l",
        r.form("l"),
        &p.form(&r, "-(u_x^2 + v_x^2)/2*dx&dy - u_x*th(u)&dy - v_x*th(u)&dx"),
    )?;

    let r = p.run("gauge")?;
    same_form("i_X dl", r.form("i_X dl"), &Form::zero(r.form("i_X dl").unwrap().context()))?;
    flag(&r, "vanishes", true)?;

    let r = p.run("stationarity")?;
    flag(&r, "almost Cartan", true)?;
    same(
        "u_x",
        shown(&r, "u_x")?,
        &p.expr(&r, "(d_x f + Y*d_y f + Y*d_x g + Y^2*d_y g)/(1 + Y^2)"),
    )?;
    same(
        "v_x",
        shown(&r, "v_x")?,
        &p.expr(&r, "-(Y*(d_x f + Y*d_y f) - d_x g - Y*d_y g)/(1 + Y^2)"),
    )?;
    same(
        "rho",
        value(&r, "rho")?,
        &p.expr(
            &r,
            "-((d_x f + Y*d_y f)^2 - (d_x g + Y*d_y g)^2 + 2*(d_x g + Y*d_y g)*(Y*d_x f - d_y f))/(2*(1 + Y^2))",
        ),
    )?;
    let eqs = equations(&r, "stationarity equations");
    same("equation count", eqs.len(), 3)?;
    same(
        "variation of Y",
        eqs[2].clone(),
        p.expr(
            &r,
            "(Y*d_x f - d_y f - d_x g - Y*d_y g)*(d_x f + Y*d_y f + Y*d_x g - d_y g)/(1 + Y^2)^2",
        ),
    )
}

fn pkdv() -> Check {
    let p = Problem::new("pkdv.jv");
    same(
        "lambda",
        p.pf.density("L").unwrap(),
        &p.in_scope("E", "u_x*u_t/2 - u_x^3 + u_xx^2/2"),
    )?;
    same("u_xxx", p.normal_form("E", "u_xxx")?, p.in_scope("E", "u_t - 3*u_x^2"))?;
    flag(&p.run("dx")?, "presymplectic", true)?;
    has_text(
        &p.run("constant")?,
        "conservation-law-producing or kernel-degenerate: Δ(1) = 0",
    )?;

    let r = p.run("stationarity")?;
    flag(&r, "almost Cartan", true)?;
    same(
        "rho",
        value(&r, "rho")?,
        &p.expr(
            &r,
            "-d_x f*d_t f/2 + g*d_t f - g^3 + h*d_x g - h^2/2 - X/2*(d_x f - g)^2",
        ),
    )?;
    same(
        "stationarity equations",
        equations(&r, "stationarity equations"),
        vec![
            p.expr(&r, "d_t d_x f - d_t g + d_x X*(d_x f - g) + X*(d_x^2 f - d_x g)"),
            p.expr(&r, "d_t f - 3*g^2 + X*(d_x f - g) - d_x h"),
            p.expr(&r, "d_x g - h"),
        ],
    )?;
    let r = p.run("slope")?;
    same(
        "variation of X",
        equations(&r, "stationarity equations"),
        vec![p.expr(&r, "-(d_x f - g)^2/2")],
    )
}

fn proca() -> Check {
    let p = Problem::new("proca.jv");
    let s = |src: &str| p.in_scope("E", src);
    same(
        "lambda",
        p.pf.density("L").unwrap(),
        &s("m^2*(A0^2 - A1^2 - A2^2 - A3^2)/2 \
            + ((A1_t + A0_x1)^2 + (A2_t + A0_x2)^2 + (A3_t + A0_x3)^2)/2 \
            - ((A2_x1 - A1_x2)^2 + (A3_x1 - A1_x3)^2 + (A3_x2 - A2_x3)^2)/2"),
    )?;
    same(
        "A0",
        p.normal_form("E", "A0")?,
        s("(F01_x1 + F02_x2 + F03_x3)/m^2"),
    )?;
    same(
        "A1_t",
        p.normal_form("E", "A1_t")?,
        s("F01 - (F01_x1_x1 + F02_x1_x2 + F03_x1_x3)/m^2"),
    )?;
    same(
        "F01_t",
        p.normal_form("E", "F01_t")?,
        s("A1_x2_x2 + A1_x3_x3 - A2_x1_x2 - A3_x1_x3 - m^2*A1"),
    )?;

    let r = p.run("stationarity")?;
    flag(&r, "almost Cartan", true)?;
    let e = |src: &str| p.expr(&r, src);
    let mut want = Vec::new();
    for i in 1..=3 {
        let curl: Vec<String> = (1..=3)
            .map(|j| format!("d_x{j}(d_x{j} f{i} - d_x{i} f{j})"))
            .collect();
        want.push(e(&format!("-(d_t g{i} - ({}) + m^2*f{i})", curl.join(" + "))));
    }
    for i in 1..=3 {
        want.push(e(&format!(
            "d_t f{i} - g{i} + d_x{i}(d_x1 g1 + d_x2 g2 + d_x3 g3)/m^2"
        )));
    }
    same("stationarity equations", equations(&r, "stationarity equations"), want)
}

fn properties() -> Check {
    let all = props::all();
    let failed: Vec<String> = all
        .iter()
        .filter_map(|p| (p.run)(200).err().map(|e| format!("{}: {e}", p.name)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(failed.join("; "))
    }
}

fn kovalevskaya() -> Check {
    let p = Problem::new("laplace.jv");
    let r = p.run("reduction")?;
    same(
        "Laplace reduced density",
        value(&r, "rho")?,
        &p.expr(&r, "-d_y v0*v1 - (d_x v0)^2/2 + v1^2/2"),
    )?;
    reduction_verified(&r)?;

    let p = Problem::new("free_particle.jv");
    let r = p.run("reduction")?;
    same(
        "free particle reduced density",
        value(&r, "rho")?,
        &p.expr(&r, "d_y v0*v1 - v1^2/2"),
    )?;
    same(
        "free particle consequences",
        r.equations("variation of v1")
            .into_iter()
            .chain(r.equations("variation of v0"))
            .cloned()
            .collect::<Vec<_>>(),
        vec![p.expr(&r, "d_y v0 - v1"), p.expr(&r, "-d_y^2 v0")],
    )?;
    reduction_verified(&r)?;

    let p = Problem::new("schrodinger.jv");
    let r = p.run("reduction")?;
    reduction_verified(&r)
}

fn reduction_verified(r: &DerivationReport) -> Check {
    flag(r, "agrees with the closed form", true)?;
    flag(r, "holds", true)?;
    flag(r, "original equations recovered", true)
}

/// Name, time limit in seconds, check.
type Criterion = (&'static str, u64, fn() -> Check);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 Laplace", 5, laplace),
        ("2 heat", 1, heat),
        ("3 wave", 2, wave),
        ("4 Schrodinger", 5, schrodinger),
        ("5 Cauchy-Riemann covering", 10, cauchy_riemann),
        ("6 potential KdV", 5, pkdv),
        ("7 Proca", 30, proca),
        ("8 properties, 200 cases each", 3600, properties),
        ("9 Kovalevskaya reduction, k = 1", 10, kovalevskaya),
    ];
    let mut failures = 0;
    for (name, secs, check) in criteria {
        let (r, t) = timed(Duration::from_secs(secs), check);
        match r {
            Ok(()) => println!("PASS criterion {name} ({:.2}s)", t.as_secs_f64()),
            Err(e) => {
                failures += 1;
                println!("FAIL criterion {name} ({:.2}s): {e}", t.as_secs_f64());
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
