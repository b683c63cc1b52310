//! Free jet space: bundle declarations, total derivatives, evolutionary fields.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::symexpr::{ArgSet, Atom, Expr, MultiIndex};

/// A formal function on the base with its declared arguments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FunctionDecl {
    pub name: Arc<str>,
    pub args: ArgSet,
}

/// Names of base variables, fiber variables, parameters and formal functions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bundle {
    base: Vec<Arc<str>>,
    fibers: Vec<Arc<str>>,
    params: Vec<Arc<str>>,
    functions: Vec<FunctionDecl>,
}

impl Bundle {
    pub fn new<S: AsRef<str>>(base: &[S], fibers: &[S]) -> Result<Self> {
        if base.is_empty() || fibers.is_empty() {
            return Err(Error::Invalid("a bundle needs at least one base and one fiber variable".into()));
        }
        if base.len() > 16 {
            return Err(Error::Invalid("at most 16 base variables are supported".into()));
        }
        let mut b = Bundle {
            base: Vec::new(),
            fibers: Vec::new(),
            params: Vec::new(),
            functions: Vec::new(),
        };
        for s in base {
            b.check_fresh(s.as_ref())?;
            b.base.push(Arc::from(s.as_ref()));
        }
        for s in fibers {
            b.check_fresh(s.as_ref())?;
            b.fibers.push(Arc::from(s.as_ref()));
        }
        Ok(b)
    }

    fn check_fresh(&self, name: &str) -> Result<()> {
        if name.is_empty() {
            return Err(Error::Invalid("empty name".into()));
        }
        let taken = self.base.iter().any(|s| &**s == name)
            || self.fibers.iter().any(|s| &**s == name)
            || self.params.iter().any(|s| &**s == name)
            || self.functions.iter().any(|f| &*f.name == name);
        if taken {
            return Err(Error::Invalid(format!("duplicate name `{name}`")));
        }
        Ok(())
    }

    pub fn add_param(&mut self, name: &str) -> Result<()> {
        self.check_fresh(name)?;
        self.params.push(Arc::from(name));
        Ok(())
    }

    /// Declare a formal function depending on the named base variables.
    pub fn add_function(&mut self, name: &str, args: &[&str]) -> Result<()> {
        self.check_fresh(name)?;
        let idx = args
            .iter()
            .map(|a| self.base_index(a).ok_or_else(|| Error::Invalid(format!("unknown base variable `{a}`"))))
            .collect::<Result<Vec<_>>>()?;
        self.functions.push(FunctionDecl {
            name: Arc::from(name),
            args: ArgSet::from_indices(idx),
        });
        Ok(())
    }

    pub fn add_fiber(&mut self, name: &str) -> Result<()> {
        self.check_fresh(name)?;
        self.fibers.push(Arc::from(name));
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.base.len()
    }

    pub fn m(&self) -> usize {
        self.fibers.len()
    }

    pub fn base_names(&self) -> &[Arc<str>] {
        &self.base
    }

    pub fn fiber_names(&self) -> &[Arc<str>] {
        &self.fibers
    }

    pub fn params(&self) -> &[Arc<str>] {
        &self.params
    }

    pub fn functions(&self) -> &[FunctionDecl] {
        &self.functions
    }

    pub fn base_index(&self, name: &str) -> Option<usize> {
        self.base.iter().position(|s| &**s == name)
    }

    pub fn fiber_index(&self, name: &str) -> Option<usize> {
        self.fibers.iter().position(|s| &**s == name)
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| &*f.name == name)
    }

    pub fn is_param(&self, name: &str) -> bool {
        self.params.iter().any(|s| &**s == name)
    }

    pub fn zero_index(&self) -> MultiIndex {
        MultiIndex::zero(self.n())
    }

    pub fn x(&self, k: usize) -> Expr {
        Expr::atom(Atom::Base(k))
    }

    pub fn u(&self, fiber: usize, exps: &[u16]) -> Expr {
        Expr::atom(self.jet_atom(fiber, exps))
    }

    pub fn jet_atom(&self, fiber: usize, exps: &[u16]) -> Atom {
        let mut idx = self.zero_index();
        for (k, &e) in exps.iter().enumerate() {
            for _ in 0..e {
                idx = idx.incremented(k);
            }
        }
        Atom::jet(fiber, idx)
    }

    /// Derivative `∂_α f` of a declared formal function, zero off its arguments.
    pub fn func(&self, name: &str, exps: &[u16]) -> Result<Expr> {
        let decl = self
            .function(name)
            .ok_or_else(|| Error::Invalid(format!("unknown function `{name}`")))?;
        let mut e = Expr::atom(Atom::func(&decl.name, self.zero_index(), decl.args));
        for (k, &n) in exps.iter().enumerate() {
            for _ in 0..n {
                e = e.total_derivative(k);
            }
        }
        Ok(e)
    }

    pub fn param(&self, name: &str) -> Result<Expr> {
        self.params
            .iter()
            .find(|s| &***s == name)
            .map(|s| Expr::atom(Atom::Param(s.clone())))
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))
    }
}

pub fn total_derivative(e: &Expr, k: usize) -> Expr {
    e.total_derivative(k)
}

/// `D_α e` on the free jet space.
pub fn total_derivative_multi(e: &Expr, alpha: &MultiIndex) -> Expr {
    let mut out = e.clone();
    for (k, &n) in alpha.exponents().iter().enumerate() {
        for _ in 0..n {
            if out.is_zero() {
                return out;
            }
            out = out.total_derivative(k);
        }
    }
    out
}

/// Generating section of an evolutionary vector field, one component per fiber.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Characteristic(pub Vec<Expr>);

impl Characteristic {
    pub fn new(components: Vec<Expr>) -> Self {
        Characteristic(components)
    }

    pub fn components(&self) -> &[Expr] {
        &self.0
    }

    pub fn max_order(&self) -> u32 {
        self.0.iter().map(Expr::max_jet_order).max().unwrap_or(0)
    }
}

/// Memoized `D_α φ^i` for a fixed characteristic.
pub(crate) struct ProlongedCharacteristic<'a> {
    phi: &'a Characteristic,
    cache: HashMap<(usize, MultiIndex), Expr>,
}

impl<'a> ProlongedCharacteristic<'a> {
    pub(crate) fn new(phi: &'a Characteristic) -> Self {
        ProlongedCharacteristic {
            phi,
            cache: HashMap::new(),
        }
    }

    pub(crate) fn get(&mut self, fiber: usize, alpha: &MultiIndex) -> Expr {
        if let Some(v) = self.cache.get(&(fiber, alpha.clone())) {
            return v.clone();
        }
        let v = match (0..alpha.dim()).find(|&k| alpha.get(k) > 0) {
            None => self.phi.0.get(fiber).cloned().unwrap_or_default(),
            Some(k) => {
                let lower = alpha.decremented(k).unwrap();
                self.get(fiber, &lower).total_derivative(k)
            }
        };
        self.cache.insert((fiber, alpha.clone()), v.clone());
        v
    }
}

/// `E_φ(e) = Σ D_α(φ^i) ∂e/∂u^i_α`.
pub fn apply_evolutionary(phi: &Characteristic, e: &Expr) -> Expr {
    let mut pro = ProlongedCharacteristic::new(phi);
    e.derive_with(&mut |a| match a {
        Atom::Jet { fiber, index } => pro.get(*fiber, index),
        _ => Expr::zero(),
    })
}

/// The linearization `l_F(φ)`, componentwise.
pub fn linearize(f: &[Expr], phi: &Characteristic) -> Vec<Expr> {
    f.iter().map(|e| apply_evolutionary(phi, e)).collect()
}
