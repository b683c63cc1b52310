//! Affine systems and small determinants over the expression field.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::symexpr::{Atom, Expr, InvertibleRegistry};

/// Outcome of row-reducing an affine system.
#[derive(Clone, Debug, Default)]
pub struct AffineSolution {
    /// Unknowns fully determined by the system.
    pub solved: BTreeMap<Atom, Expr>,
    /// Reduced rows that still involve several unknowns.
    pub pending: Vec<Expr>,
    /// Rows with unknowns none of whose coefficients could be inverted.
    pub stuck: Vec<(Expr, Expr)>,
}

struct PivotRow {
    atom: Atom,
    /// Normalized so the pivot coefficient is one.
    row: Expr,
}

fn unknowns_in(e: &Expr, unknowns: &BTreeSet<Atom>) -> Vec<Atom> {
    e.atoms().into_iter().filter(|a| unknowns.contains(a)).collect()
}

fn eliminate(row: &Expr, p: &PivotRow) -> Expr {
    let c = row.diff(&p.atom);
    if c.is_zero() {
        return row.clone();
    }
    row - &(c * &p.row)
}

/// Gauss-Jordan elimination of affine rows (`row = 0`) in the given unknowns.
///
/// Pivots prefer constant coefficients, then registered-invertible ones;
/// among equals the largest atom wins.
pub fn solve_affine(
    rows: impl IntoIterator<Item = Expr>,
    unknowns: &BTreeSet<Atom>,
    reg: &InvertibleRegistry,
) -> Result<AffineSolution> {
    let mut pivots: Vec<PivotRow> = Vec::new();
    let mut queue: Vec<Expr> = rows.into_iter().collect();
    let mut deferred: Vec<Expr> = Vec::new();
    loop {
        let mut progress = false;
        for mut row in queue.drain(..) {
            for p in &pivots {
                row = eliminate(&row, p);
            }
            let us = unknowns_in(&row, unknowns);
            if us.is_empty() {
                if !row.is_zero() {
                    return Err(Error::OverDetermined(format!("{row:?} = 0")));
                }
                continue;
            }
            if !row.is_linear_in(unknowns) {
                return Err(Error::Invalid(format!("equation is not affine in the unknowns: {row:?}")));
            }
            let coeffs: Vec<(Atom, Expr)> = us.iter().map(|a| (a.clone(), row.diff(a))).collect();
            let pick = coeffs
                .iter()
                .rev()
                .find(|(_, c)| c.is_constant())
                .or_else(|| coeffs.iter().rev().find(|(_, c)| reg.is_invertible(c)));
            let Some((atom, c)) = pick.cloned() else {
                deferred.push(row);
                continue;
            };
            let row = row.div_expr(&c, reg)?;
            let new = PivotRow { atom, row };
            for p in pivots.iter_mut() {
                p.row = eliminate(&p.row, &new);
            }
            pivots.push(new);
            progress = true;
        }
        if !progress || deferred.is_empty() {
            break;
        }
        queue = std::mem::take(&mut deferred);
    }
    let mut out = AffineSolution::default();
    for p in pivots {
        let us = unknowns_in(&p.row, unknowns);
        if us.len() == 1 {
            let value = Expr::atom(p.atom.clone()) - &p.row;
            out.solved.insert(p.atom, value);
        } else {
            out.pending.push(p.row);
        }
    }
    for row in deferred {
        let a = unknowns_in(&row, unknowns).pop().unwrap();
        let c = row.diff(&a);
        out.stuck.push((row, c));
    }
    Ok(out)
}

/// Determinant by cofactor expansion; intended for small matrices.
pub fn determinant(m: &[Vec<Expr>]) -> Expr {
    match m.len() {
        0 => Expr::one(),
        1 => m[0][0].clone(),
        2 => &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0],
        n => (0..n)
            .filter(|&j| !m[0][j].is_zero())
            .map(|j| {
                let minor: Vec<Vec<Expr>> = m[1..]
                    .iter()
                    .map(|r| r.iter().enumerate().filter(|(c, _)| *c != j).map(|(_, e)| e.clone()).collect())
                    .collect();
                let t = &m[0][j] * &determinant(&minor);
                if j % 2 == 0 {
                    t
                } else {
                    -t
                }
            })
            .sum(),
    }
}
