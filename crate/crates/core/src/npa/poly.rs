use std::collections::BTreeMap;
use std::ops::{Add, Mul};

use crate::scalar::Scalar;

use super::{canonicalize, Letter, Party, Scenario};

/// Real linear combination of operator words, kept in canonical form.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Polynomial<T> {
    terms: BTreeMap<Vec<Letter>, T>,
}

impl<T: Scalar> Polynomial<T> {
    pub fn zero() -> Self {
        Self { terms: BTreeMap::new() }
    }

    pub fn constant(c: T) -> Self {
        let mut p = Self::zero();
        p.add_term(&[], c);
        p
    }

    pub fn word(w: &[Letter]) -> Self {
        let mut p = Self::zero();
        p.add_term(w, T::one());
        p
    }

    /// Projector for `outcome` of `party`'s measurement `input`; the last
    /// outcome is expanded as identity minus the explicit projectors.
    pub fn projector(scenario: &Scenario, party: Party, input: u8, outcome: u8) -> Self {
        let n = scenario
            .outcome_count(party, input)
            .unwrap_or_else(|| panic!("{party:?} has no measurement {input}"));
        assert!(outcome < n, "outcome {outcome} out of range for {party:?}{input}");
        if outcome + 1 < n {
            return Self::word(&[Letter::new(party, input, outcome)]);
        }
        let mut p = Self::constant(T::one());
        for o in 0..n - 1 {
            p.add_term(&[Letter::new(party, input, o)], -T::one());
        }
        p
    }

    pub fn add_term(&mut self, w: &[Letter], c: T) {
        let m = canonicalize(w);
        if m.is_zero || c == T::zero() {
            return;
        }
        let e = self.terms.entry(m.word).or_insert(T::zero());
        *e += c;
    }

    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (w, &c) in &other.terms {
            self.add_term(w, s * c);
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut p = Self::zero();
        p.add_scaled(s, self);
        p
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[Letter], T)> {
        self.terms.iter().filter(|(_, c)| **c != T::zero()).map(|(w, &c)| (w.as_slice(), c))
    }

    pub fn constant_term(&self) -> T {
        self.terms.get(&Vec::new()).copied().unwrap_or(T::zero())
    }
}

impl<T: Scalar> Add for &Polynomial<T> {
    type Output = Polynomial<T>;

    fn add(self, rhs: Self) -> Polynomial<T> {
        let mut p = self.clone();
        p.add_scaled(T::one(), rhs);
        p
    }
}

impl<T: Scalar> Mul for &Polynomial<T> {
    type Output = Polynomial<T>;

    fn mul(self, rhs: Self) -> Polynomial<T> {
        let mut p = Polynomial::zero();
        for (a, ca) in self.terms() {
            for (b, cb) in rhs.terms() {
                let w: Vec<Letter> = a.iter().chain(b).copied().collect();
                p.add_term(&w, ca * cb);
            }
        }
        p
    }
}
