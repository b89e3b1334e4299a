//! NPA moment-matrix relaxation over projector letters.
//!
//! Parties A, C (client) and E (eavesdropper guess) mutually commute and
//! commute with B; B does not commute with C or E because Bob's and the
//! client's measurements act on the same routed photon at different times.

mod moment;
mod poly;

pub use moment::{build_moment_sdp, DualCertificate, MomentIndex, MomentSdp, NpaSolution};
pub use poly::Polynomial;

use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum NpaError {
    #[error("moment {0} is not in the generated index (hierarchy level too low)")]
    MissingMoment(String),
    #[error("invalid NPA level {0:?}")]
    BadLevel(String),
    #[error("inconsistent equality constraints (residual {0:e})")]
    Inconsistent(f64),
    #[error(transparent)]
    Sdp(#[from] crate::sdp::SdpError),
}

/// Party of a projector letter. Declaration order is the sorting order
/// used for commuting letters: A < C < E < B.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Party {
    A,
    C,
    E,
    B,
}

impl Party {
    pub fn commutes_with(self, other: Party) -> bool {
        use Party::*;
        match (self, other) {
            (p, q) if p == q => false,
            (B, C) | (C, B) | (B, E) | (E, B) => false,
            _ => true,
        }
    }

    fn from_char(c: char) -> Option<Party> {
        match c.to_ascii_uppercase() {
            'A' => Some(Party::A),
            'B' => Some(Party::B),
            'C' => Some(Party::C),
            'E' => Some(Party::E),
            _ => None,
        }
    }
}

/// Projector `P_{outcome|input}` of one party. For E the input is an
/// announced-context id (see [`eve_context`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Letter {
    pub party: Party,
    pub input: u8,
    pub outcome: u8,
}

impl Letter {
    pub const fn new(party: Party, input: u8, outcome: u8) -> Self {
        Self { party, input, outcome }
    }

    fn same_measurement(&self, other: &Letter) -> bool {
        self.party == other.party && self.input == other.input
    }

    fn commutes_with(&self, other: &Letter) -> bool {
        self.party.commutes_with(other.party)
    }
}

/// Context id of Eve's measurement given Alice's announced outcome `a`,
/// her input `x` and the client input `z`.
pub const fn eve_context(a: u8, x: u8, z: u8) -> u8 {
    a * 4 + x * 2 + z
}

pub const fn eve_context_parts(ctx: u8) -> (u8, u8, u8) {
    (ctx / 4, (ctx / 2) % 2, ctx % 2)
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.party {
            Party::E => {
                let (a, x, z) = eve_context_parts(self.input);
                write!(f, "E{}|{}{}{}", self.outcome, a, x, z)
            }
            p => write!(f, "{:?}{}|{}", p, self.outcome, self.input),
        }
    }
}

/// Canonical operator word. The empty word is the identity.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial {
    pub word: Vec<Letter>,
    pub is_zero: bool,
}

impl Monomial {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn zero() -> Self {
        Self { word: Vec::new(), is_zero: true }
    }

    pub fn is_identity(&self) -> bool {
        !self.is_zero && self.word.is_empty()
    }

    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero {
            return f.write_str("0");
        }
        if self.word.is_empty() {
            return f.write_str("1");
        }
        for (i, l) in self.word.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Lexicographically smallest word in the commutation class of `w`.
fn lex_normal(w: &[Letter]) -> Vec<Letter> {
    let mut rest: Vec<Letter> = w.to_vec();
    let mut out = Vec::with_capacity(w.len());
    while !rest.is_empty() {
        let mut best: Option<usize> = None;
        for i in 0..rest.len() {
            if rest[..i].iter().all(|p| p.commutes_with(&rest[i]))
                && best.is_none_or(|b| rest[i] < rest[b])
            {
                best = Some(i);
            }
        }
        let i = best.expect("first letter is always available");
        out.push(rest.remove(i));
    }
    out
}

/// Reduce a word to its canonical form: commuting letters sorted, repeated
/// projectors collapsed (idempotence) and distinct outcomes of the same
/// measurement annihilated (orthogonality).
pub fn canonicalize(w: &[Letter]) -> Monomial {
    let mut cur = w.to_vec();
    loop {
        let sorted = lex_normal(&cur);
        let mut reduced: Vec<Letter> = Vec::with_capacity(sorted.len());
        for l in sorted {
            if let Some(prev) = reduced.last() {
                if prev.same_measurement(&l) {
                    if prev.outcome != l.outcome {
                        return Monomial::zero();
                    }
                    continue;
                }
            }
            reduced.push(l);
        }
        if reduced == cur {
            return Monomial { word: cur, is_zero: false };
        }
        cur = reduced;
    }
}

/// Key of the real moment `<ψ|w|ψ>`: words and their reversals share one variable.
pub fn moment_key(w: &[Letter]) -> Option<Vec<Letter>> {
    let c = canonicalize(w);
    if c.is_zero {
        return None;
    }
    let mut rev = c.word.clone();
    rev.reverse();
    let r = canonicalize(&rev);
    Some(if r.word < c.word { r.word } else { c.word })
}

/// Measurement layout of a scenario. Each party has per-input outcome
/// counts; the last outcome of every measurement is implicit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub a_outcomes: Vec<u8>,
    pub b_outcomes: Vec<u8>,
    pub c_outcomes: Vec<u8>,
    /// `(context id, outcome count)` for each of Eve's measurements.
    pub e_measurements: Vec<(u8, u8)>,
}

impl Scenario {
    /// Two parties, binary inputs and outputs.
    pub fn chsh() -> Self {
        Self { a_outcomes: vec![2, 2], b_outcomes: vec![2, 2], c_outcomes: vec![], e_measurements: vec![] }
    }

    /// Routed scenario: binary A and B, `c_outcomes`-valued client, and one Eve
    /// measurement with `c_outcomes` outcomes per context in `eve_contexts`.
    pub fn routed(c_outcomes: u8, eve_contexts: &[u8]) -> Self {
        Self {
            a_outcomes: vec![2, 2],
            b_outcomes: vec![2, 2],
            c_outcomes: vec![c_outcomes, c_outcomes],
            e_measurements: eve_contexts.iter().map(|&c| (c, c_outcomes)).collect(),
        }
    }

    /// All eight `(a, x, z)` contexts.
    pub fn all_eve_contexts() -> Vec<u8> {
        (0..8).collect()
    }

    fn party_measurements(&self, p: Party) -> Vec<(u8, u8)> {
        match p {
            Party::A => self.a_outcomes.iter().enumerate().map(|(i, &o)| (i as u8, o)).collect(),
            Party::B => self.b_outcomes.iter().enumerate().map(|(i, &o)| (i as u8, o)).collect(),
            Party::C => self.c_outcomes.iter().enumerate().map(|(i, &o)| (i as u8, o)).collect(),
            Party::E => self.e_measurements.clone(),
        }
    }

    /// Explicit letters of one party (last outcome of each measurement omitted).
    pub fn letters(&self, p: Party) -> Vec<Letter> {
        self.party_measurements(p)
            .into_iter()
            .flat_map(|(input, n)| (0..n.saturating_sub(1)).map(move |o| Letter::new(p, input, o)))
            .collect()
    }

    /// Letters in the row order A, B, C, E.
    pub fn all_letters(&self) -> Vec<Letter> {
        [Party::A, Party::B, Party::C, Party::E].into_iter().flat_map(|p| self.letters(p)).collect()
    }

    pub fn outcome_count(&self, p: Party, input: u8) -> Option<u8> {
        self.party_measurements(p).into_iter().find(|m| m.0 == input).map(|m| m.1)
    }
}

/// Hierarchy level: all words up to `length` plus listed party patterns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSpec {
    pub length: usize,
    pub extras: Vec<Vec<Party>>,
}

impl Default for LevelSpec {
    fn default() -> Self {
        "1+AC+AE+CE+AB".parse().expect("default level")
    }
}

impl std::str::FromStr for LevelSpec {
    type Err = NpaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NpaError::BadLevel(s.to_string());
        let mut parts = s.split('+').map(str::trim);
        let length: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if length < 1 {
            return Err(bad());
        }
        let extras = parts
            .map(|p| {
                if p.is_empty() {
                    return Err(bad());
                }
                p.chars().map(|c| Party::from_char(c).ok_or_else(bad)).collect()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { length, extras })
    }
}

impl fmt::Display for LevelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.length)?;
        for e in &self.extras {
            f.write_str("+")?;
            for p in e {
                write!(f, "{p:?}")?;
            }
        }
        Ok(())
    }
}

/// Identity, all canonical non-zero words of length ≤ `level.length`, then the
/// products named by each extra pattern; duplicates removed, order stable.
pub fn generate_monomials(scenario: &Scenario, level: &LevelSpec) -> Vec<Monomial> {
    let mut out = vec![Monomial::identity()];
    let mut seen: std::collections::HashSet<Vec<Letter>> = std::collections::HashSet::new();
    seen.insert(Vec::new());
    let mut push = |w: &[Letter], out: &mut Vec<Monomial>| {
        let m = canonicalize(w);
        if !m.is_zero && seen.insert(m.word.clone()) {
            out.push(m);
        }
    };
    let letters = scenario.all_letters();
    let mut frontier: Vec<Vec<Letter>> = vec![Vec::new()];
    for _ in 0..level.length {
        let mut next = Vec::new();
        for w in &frontier {
            for &l in &letters {
                let mut v = w.clone();
                v.push(l);
                push(&v, &mut out);
                next.push(v);
            }
        }
        frontier = next;
    }
    for pattern in &level.extras {
        let mut words: Vec<Vec<Letter>> = vec![Vec::new()];
        for &p in pattern {
            let ls = scenario.letters(p);
            words = words
                .iter()
                .flat_map(|w| {
                    ls.iter().map(move |&l| {
                        let mut v = w.clone();
                        v.push(l);
                        v
                    })
                })
                .collect();
        }
        for w in &words {
            push(w, &mut out);
        }
    }
    out
}

#[cfg(test)]
mod tests;
