//! Derivation reports and their text and LaTeX renderings.

use std::fmt::Write as _;

use jetvar_core::forms::Form;
use jetvar_core::jetspace::Bundle;
use jetvar_core::notation::{Printer, Style};
use jetvar_core::symexpr::Expr;

/// Left-hand side of a displayed identity.
#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Plain(String),
    Expr(Expr),
    /// `D_x u_y`, a restricted total derivative of a coordinate.
    Derivative(String, Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Item {
    Value { label: Label, value: Expr },
    Form { label: Label, value: Form },
    /// `value = 0`
    Equation(Expr),
    Flag { label: String, value: bool },
    Text(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub name: String,
    pub items: Vec<Item>,
}

impl Step {
    pub fn new(name: &str) -> Self {
        Step {
            name: name.to_string(),
            items: Vec::new(),
        }
    }

    pub fn value(mut self, label: Label, value: Expr) -> Self {
        self.items.push(Item::Value { label, value });
        self
    }

    pub fn form(mut self, label: Label, value: Form) -> Self {
        self.items.push(Item::Form { label, value });
        self
    }

    pub fn flag(mut self, label: &str, value: bool) -> Self {
        self.items.push(Item::Flag {
            label: label.to_string(),
            value,
        });
        self
    }

    pub fn text(mut self, s: impl Into<String>) -> Self {
        self.items.push(Item::Text(s.into()));
        self
    }

    pub fn equations(mut self, eqs: impl IntoIterator<Item = Expr>) -> Self {
        self.items.extend(eqs.into_iter().map(Item::Equation));
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivationReport {
    pub problem: String,
    pub task: String,
    pub pipeline: String,
    /// Names used to print every expression of the report.
    pub bundle: Bundle,
    pub steps: Vec<Step>,
}

impl DerivationReport {
    /// All equation items of the named step.
    pub fn equations(&self, step: &str) -> Vec<&Expr> {
        self.steps
            .iter()
            .filter(|s| s.name == step)
            .flat_map(|s| &s.items)
            .filter_map(|i| match i {
                Item::Equation(e) => Some(e),
                _ => None,
            })
            .collect()
    }

    pub fn flag(&self, label: &str) -> Option<bool> {
        self.steps.iter().flat_map(|s| &s.items).find_map(|i| match i {
            Item::Flag { label: l, value } if l == label => Some(*value),
            _ => None,
        })
    }

    pub fn value(&self, label: &str) -> Option<&Expr> {
        self.steps.iter().flat_map(|s| &s.items).find_map(|i| match i {
            Item::Value {
                label: Label::Plain(l),
                value,
            } if l == label => Some(value),
            _ => None,
        })
    }

    pub fn form(&self, label: &str) -> Option<&Form> {
        self.steps.iter().flat_map(|s| &s.items).find_map(|i| match i {
            Item::Form {
                label: Label::Plain(l),
                value,
            } if l == label => Some(value),
            _ => None,
        })
    }
}

fn label(p: &Printer, l: &Label) -> String {
    match (l, p.style) {
        (Label::Plain(s), Style::Text) => s.clone(),
        (Label::Plain(s), Style::Latex) => latex_label(s),
        (Label::Expr(e), _) => p.expr(e),
        (Label::Derivative(x, e), Style::Text) => format!("D_{x} {}", p.expr(e)),
        (Label::Derivative(x, e), Style::Latex) => format!("\\bar{{D}}_{{{x}}} {}", p.expr(e)),
    }
}

fn latex_label(s: &str) -> String {
    let word = |w: &str| match w {
        "omega" | "rho" | "psi" | "phi" | "lambda" => format!("\\{w}"),
        _ => format!("\\mathrm{{{w}}}"),
    };
    match s.split_once('_') {
        Some((head, tail)) => format!("{}_{{{}}}", word(head), word(tail)),
        None => word(s),
    }
}

/// Render a report; identical reports give identical bytes.
pub fn render(r: &DerivationReport, style: Style) -> String {
    let p = Printer::new(&r.bundle, style);
    let mut out = String::new();
    match style {
        Style::Text => {
            writeln!(out, "jetvar report").unwrap();
            writeln!(out, "problem: {}", r.problem).unwrap();
            writeln!(out, "task: {} ({})", r.task, r.pipeline).unwrap();
        }
        Style::Latex => {
            writeln!(out, "% jetvar report").unwrap();
            writeln!(out, "% problem: {}", r.problem).unwrap();
            writeln!(out, "% task: {} ({})", r.task, r.pipeline).unwrap();
        }
    }
    for s in &r.steps {
        out.push('\n');
        match style {
            Style::Text => writeln!(out, "[{}]", s.name).unwrap(),
            Style::Latex => writeln!(out, "\\paragraph{{{}}}", s.name).unwrap(),
        }
        for it in &s.items {
            let line = match (it, style) {
                (Item::Value { label: l, value }, Style::Text) => format!("{} = {}", label(&p, l), p.expr(value)),
                (Item::Form { label: l, value }, Style::Text) => format!("{} = {}", label(&p, l), p.form(value)),
                (Item::Equation(e), Style::Text) => format!("{} = 0", p.expr(e)),
                (Item::Value { label: l, value }, Style::Latex) => {
                    format!("\\[ {} = {} \\]", label(&p, l), p.expr(value))
                }
                (Item::Form { label: l, value }, Style::Latex) => {
                    format!("\\[ {} = {} \\]", label(&p, l), p.form(value))
                }
                (Item::Equation(e), Style::Latex) => format!("\\[ {} = 0 \\]", p.expr(e)),
                (Item::Flag { label, value }, _) => format!("{label}: {value}"),
                (Item::Text(t), _) => t.clone(),
            };
            writeln!(out, "{line}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        let r = DerivationReport {
            problem: "p".into(),
            task: "t".into(),
            pipeline: "euler".into(),
            bundle: Bundle::new(&["x"], &["u"]).unwrap(),
            steps: Vec::new(),
        };
        assert_eq!(render(&r, Style::Text), "jetvar report\nproblem: p\ntask: t (euler)\n");
    }
}
