use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

/// Exponent vector over the base variables: `α = α_1 x^1 + … + α_n x^n`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MultiIndex(SmallVec<[u16; 4]>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        MultiIndex(SmallVec::from_elem(0, n))
    }

    pub fn from_slice(exps: &[u16]) -> Self {
        MultiIndex(SmallVec::from_slice(exps))
    }

    /// The unit multi-index `x^k` in `n` variables.
    pub fn unit(n: usize, k: usize) -> Self {
        let mut m = Self::zero(n);
        m.0[k] = 1;
        m
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn order(&self) -> u32 {
        self.0.iter().map(|&e| u32::from(e)).sum()
    }

    pub fn get(&self, k: usize) -> u16 {
        self.0[k]
    }

    pub fn exponents(&self) -> &[u16] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn incremented(&self, k: usize) -> Self {
        let mut m = self.clone();
        m.0[k] += 1;
        m
    }

    pub fn decremented(&self, k: usize) -> Option<Self> {
        if self.0[k] == 0 {
            return None;
        }
        let mut m = self.clone();
        m.0[k] -= 1;
        Some(m)
    }

    pub fn add(&self, other: &MultiIndex) -> Self {
        assert_eq!(self.dim(), other.dim(), "multi-index dimension mismatch");
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self - other` when `other <= self` componentwise.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<Self> {
        let mut out = SmallVec::with_capacity(self.dim());
        for (a, b) in self.0.iter().zip(&other.0) {
            out.push(a.checked_sub(*b)?);
        }
        Some(MultiIndex(out))
    }

    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Support as a bitmask of variables with nonzero exponent.
    pub fn support(&self) -> u32 {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .fold(0, |acc, (k, _)| acc | (1 << k))
    }

    /// All multi-indices `β <= self`, each with the product of binomials `C(self, β)`.
    pub fn sub_indices(&self) -> Vec<(MultiIndex, u64)> {
        let mut out = vec![(MultiIndex(SmallVec::new()), 1u64)];
        for &a in &self.0 {
            let mut next = Vec::with_capacity(out.len() * (a as usize + 1));
            for (prefix, c) in &out {
                for b in 0..=a {
                    let mut m = prefix.clone();
                    m.0.push(b);
                    next.push((m, c * binomial(u64::from(a), u64::from(b))));
                }
            }
            out = next;
        }
        out
    }

    /// All multi-indices of the given total order in `n` variables.
    pub fn all_of_order(n: usize, order: u32) -> Vec<MultiIndex> {
        fn rec(n: usize, left: u32, cur: &mut Vec<u16>, out: &mut Vec<MultiIndex>) {
            if cur.len() + 1 == n {
                cur.push(left as u16);
                out.push(MultiIndex::from_slice(cur));
                cur.pop();
                return;
            }
            for e in (0..=left).rev() {
                cur.push(e as u16);
                rec(n, left - e, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        if n == 0 {
            return out;
        }
        rec(n, order, &mut Vec::with_capacity(n), &mut out);
        out
    }
}

pub(crate) fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0.as_slice())
    }
}

/// Set of base variables a formal function depends on, as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ArgSet(pub u32);

impl ArgSet {
    pub fn all(n: usize) -> Self {
        ArgSet(if n >= 32 { u32::MAX } else { (1u32 << n) - 1 })
    }

    pub fn from_indices(idx: impl IntoIterator<Item = usize>) -> Self {
        ArgSet(idx.into_iter().fold(0, |acc, k| acc | (1 << k)))
    }

    pub fn contains(&self, k: usize) -> bool {
        self.0 & (1 << k) != 0
    }
}

/// The generators of the expression algebra.
///
/// Variant order is the atom kind order; inside a kind atoms compare by
/// index, then multi-index.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    /// Base coordinate `x^k`.
    Base(usize),
    /// Jet coordinate `u^i_α`.
    Jet { fiber: usize, index: MultiIndex },
    /// Partial derivative `∂_α f` of a formal function on the base.
    Func {
        name: Arc<str>,
        index: MultiIndex,
        args: ArgSet,
    },
    /// Constant parameter.
    Param(Arc<str>),
}

impl Atom {
    pub fn jet(fiber: usize, index: MultiIndex) -> Self {
        Atom::Jet { fiber, index }
    }

    pub fn func(name: &Arc<str>, index: MultiIndex, args: ArgSet) -> Self {
        Atom::Func {
            name: name.clone(),
            index,
            args,
        }
    }

    pub fn is_jet(&self) -> bool {
        matches!(self, Atom::Jet { .. })
    }

    pub fn jet_parts(&self) -> Option<(usize, &MultiIndex)> {
        match self {
            Atom::Jet { fiber, index } => Some((*fiber, index)),
            _ => None,
        }
    }

    /// Total derivative of the atom along `x^k`; `None` means zero.
    ///
    /// Jet coordinates move up one order; formal functions only depend on
    /// their declared arguments.
    pub fn total_derivative(&self, k: usize) -> Option<AtomDerivative> {
        match self {
            Atom::Base(j) => (*j == k).then_some(AtomDerivative::One),
            Atom::Jet { fiber, index } => Some(AtomDerivative::Atom(Atom::Jet {
                fiber: *fiber,
                index: index.incremented(k),
            })),
            Atom::Func { name, index, args } => args.contains(k).then(|| {
                AtomDerivative::Atom(Atom::Func {
                    name: name.clone(),
                    index: index.incremented(k),
                    args: *args,
                })
            }),
            Atom::Param(_) => None,
        }
    }
}

pub enum AtomDerivative {
    One,
    Atom(Atom),
}

impl fmt::Debug for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Base(k) => write!(f, "x{k}"),
            Atom::Jet { fiber, index } => write!(f, "u{fiber}{index:?}"),
            Atom::Func { name, index, .. } => write!(f, "{name}{index:?}"),
            Atom::Param(p) => write!(f, "{p}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_indices_carry_binomials() {
        let a = MultiIndex::from_slice(&[2, 1]);
        let subs = a.sub_indices();
        assert_eq!(subs.len(), 6);
        let total: u64 = subs.iter().map(|(_, c)| c).sum();
        // Σ C(2,b1)·C(1,b2) = 4·2
        assert_eq!(total, 8);
    }

    #[test]
    fn all_of_order_counts() {
        assert_eq!(MultiIndex::all_of_order(2, 3).len(), 4);
        assert_eq!(MultiIndex::all_of_order(3, 2).len(), 6);
        assert_eq!(MultiIndex::all_of_order(1, 5).len(), 1);
    }

    #[test]
    fn formal_function_ignores_non_arguments() {
        let h: Arc<str> = Arc::from("h");
        let a = Atom::func(&h, MultiIndex::zero(2), ArgSet::from_indices([1]));
        assert!(a.total_derivative(0).is_none());
        assert!(a.total_derivative(1).is_some());
    }
}
