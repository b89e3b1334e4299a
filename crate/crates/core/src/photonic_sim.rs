//! Exact behaviour of the photonic routed Bell test and per-round sampling.
//!
//! A single polarisation-entangled pair is shared between Alice and the
//! routed photon (Bob when s=0, the client when s=1). Each detector is a
//! polarising beam splitter after a rotation by θ, preceded by loss of
//! transmissivity η; a lost photon gives the inconclusive outcome ∅.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{Behavior, InputDist, Outcome};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid optical model: {0}")]
    Invalid(String),
}

/// How a simultaneous click in both detectors is mapped to an outcome. With
/// a single pair and no dark counts double clicks never occur; the rule is
/// kept so configurations stay valid if multi-photon terms are added.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoubleClickRule {
    #[default]
    RandomBit,
    FixedZero,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct OpticalModel<T> {
    pub eta_a: T,
    pub eta_b: T,
    pub eta_c: T,
    /// Polarisation rotation per input, in degrees.
    pub angles_a: [T; 2],
    pub angles_b: [T; 2],
    pub angles_c: [T; 2],
    pub p_switch: T,
    pub px: InputDist<T>,
    pub py: InputDist<T>,
    pub pz: InputDist<T>,
    #[serde(default)]
    pub double_click_rule: DoubleClickRule,
    /// Weight of the pair state against white noise; 1 is the ideal source.
    #[serde(default = "unit")]
    pub visibility: T,
}

fn unit<T: Scalar>() -> T {
    T::one()
}

impl<T: Scalar> Default for OpticalModel<T> {
    fn default() -> Self {
        let half = T::lit(0.5);
        Self {
            eta_a: T::one(),
            eta_b: T::one(),
            eta_c: T::one(),
            angles_a: [T::zero(), T::lit(45.0)],
            angles_b: [T::lit(22.5), T::lit(-22.5)],
            angles_c: [T::zero(), T::lit(45.0)],
            p_switch: half,
            px: [half, half],
            py: [half, half],
            pz: [half, half],
            double_click_rule: DoubleClickRule::RandomBit,
            visibility: T::one(),
        }
    }
}

impl<T: Scalar> OpticalModel<T> {
    pub fn with_eta_c(mut self, eta_c: T) -> Self {
        self.eta_c = eta_c;
        self
    }

    pub fn with_visibility(mut self, v: T) -> Self {
        self.visibility = v;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.visibility >= T::zero() && self.visibility <= T::one()) {
            return Err(SimError::Invalid(format!("visibility = {} outside [0, 1]", self.visibility)));
        }
        for (name, e) in [("eta_a", self.eta_a), ("eta_b", self.eta_b), ("eta_c", self.eta_c)] {
            if !(e >= T::zero() && e <= T::one()) {
                return Err(SimError::Invalid(format!("{name} = {e} outside [0, 1]")));
            }
        }
        if !(self.p_switch > T::zero() && self.p_switch < T::one()) {
            return Err(SimError::Invalid(format!("p_switch = {} outside (0, 1)", self.p_switch)));
        }
        for (name, d) in [("px", self.px), ("py", self.py), ("pz", self.pz)] {
            if d.iter().any(|&p| !(p >= T::zero() && p <= T::one())) || (d[0] + d[1] - T::one()).abs() > T::lit(1e-12) {
                return Err(SimError::Invalid(format!("{name} is not a distribution")));
            }
        }
        for a in self.angles_a.iter().chain(&self.angles_b).chain(&self.angles_c) {
            if !a.is_finite() {
                return Err(SimError::Invalid("non-finite angle".into()));
            }
        }
        Ok(())
    }
}

/// Two-qubit pure state over the basis HH, HV, VH, VV (Alice first).
#[derive(Clone, Debug, PartialEq)]
pub struct TwoQubitState<T> {
    pub amplitudes: [Complex<T>; 4],
}

impl<T: Scalar> TwoQubitState<T> {
    pub fn norm_sqr(&self) -> T {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`
    pub fn inner(&self, other: &Self) -> Complex<T> {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }

    /// `<ψ| E ⊗ F |ψ>` (real part; the operators are Hermitian).
    pub fn expectation(&self, e: &Op2<T>, f: &Op2<T>) -> T {
        let mut acc = Complex::new(T::zero(), T::zero());
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        acc += self.amplitudes[2 * i + j].conj() * e[i][k] * f[j][l] * self.amplitudes[2 * k + l];
                    }
                }
            }
        }
        acc.re
    }
}

/// `(|HH⟩ + |VV⟩)/√2`
pub fn ideal_pair_state<T: Scalar>() -> TwoQubitState<T> {
    let h = Complex::new(T::one() / T::lit(2.0).sqrt(), T::zero());
    let z = Complex::new(T::zero(), T::zero());
    TwoQubitState { amplitudes: [h, z, z, h] }
}

/// Single-qubit operator, row-major.
pub type Op2<T> = [[Complex<T>; 2]; 2];

fn projector<T: Scalar>(v: [T; 2], scale: T) -> Op2<T> {
    let c = |r: T| Complex::new(r, T::zero());
    [[c(scale * v[0] * v[0]), c(scale * v[0] * v[1])], [c(scale * v[1] * v[0]), c(scale * v[1] * v[1])]]
}

/// POVM `[E_0, E_1, E_∅]` of a lossy polarisation measurement at `angle_degrees`.
pub fn measurement_effects<T: Scalar>(angle_degrees: T, eta: T, _rule: DoubleClickRule) -> Result<[Op2<T>; 3], SimError> {
    if !(eta >= T::zero() && eta <= T::one()) {
        return Err(SimError::Invalid(format!("eta = {eta} outside [0, 1]")));
    }
    let t = angle_degrees.to_radians();
    let (s, c) = t.sin_cos();
    let e0 = projector([c, s], eta);
    let e1 = projector([-s, c], eta);
    let z = Complex::new(T::zero(), T::zero());
    let l = Complex::new(T::one() - eta, T::zero());
    Ok([e0, e1, [[l, z], [z, l]]])
}

fn trace<T: Scalar>(e: &Op2<T>) -> T {
    e[0][0].re + e[1][1].re
}

/// Closed-form `p(ab|xy, s=0)` and `p(ac|xz, s=1)` for the single-pair
/// model, mixed with white noise when the visibility is below 1.
pub fn exact_behavior<T: Scalar>(model: &OpticalModel<T>) -> Result<Behavior<T>, SimError> {
    model.validate()?;
    let psi = ideal_pair_state::<T>();
    let rule = model.double_click_rule;
    let v = model.visibility;
    let quarter = T::lit(0.25);
    let joint = |e: &Op2<T>, f: &Op2<T>| v * psi.expectation(e, f) + (T::one() - v) * quarter * trace(e) * trace(f);
    let mut b = Behavior::zeros(model.px, model.py, model.pz, model.p_switch);
    for x in 0..2 {
        let ea = measurement_effects(model.angles_a[x], model.eta_a, rule)?;
        for y in 0..2 {
            let eb = measurement_effects(model.angles_b[y], model.eta_b, rule)?;
            for a in 0..3 {
                for o in 0..3 {
                    b.table0[x][y][a][o] = joint(&ea[a], &eb[o]);
                }
            }
        }
        for z in 0..2 {
            let ec = measurement_effects(model.angles_c[z], model.eta_c, rule)?;
            for a in 0..3 {
                for o in 0..3 {
                    b.table1[x][z][a][o] = joint(&ea[a], &ec[o]);
                }
            }
        }
    }
    Ok(b)
}

fn draw<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // u landed on the rounding slack; pick the last outcome with mass
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Samples outcomes from the exact behaviour. The server side draws `(a, b)`
/// (or `a` alone when routed to the client) and the client draws `c` from
/// `p(c | a, x, z)`, so the two sides can live in different processes.
#[derive(Clone, Debug)]
pub struct RoundSampler {
    behavior: Behavior<f64>,
}

impl RoundSampler {
    pub fn new(model: &OpticalModel<f64>) -> Result<Self, SimError> {
        Ok(Self { behavior: exact_behavior(model)? })
    }

    pub fn from_behavior(behavior: Behavior<f64>) -> Self {
        Self { behavior }
    }

    pub fn behavior(&self) -> &Behavior<f64> {
        &self.behavior
    }

    /// Server outcomes; `b = ∅` whenever `s = 1`.
    pub fn sample_server<R: Rng + ?Sized>(&self, rng: &mut R, s: u8, x: u8, y: u8) -> (Outcome, Outcome) {
        let (x, y) = (x as usize, y as usize);
        if s == 0 {
            let w: Vec<f64> = self.behavior.table0[x][y].iter().flatten().copied().collect();
            let k = draw(rng, &w);
            (Outcome::ALL[k / 3], Outcome::ALL[k % 3])
        } else {
            // p(a|x) from the s=1 table at z=0; identical for z=1 by no-signalling
            let w: Vec<f64> = (0..3).map(|a| self.behavior.table1[x][0][a].iter().sum()).collect();
            (Outcome::ALL[draw(rng, &w)], Outcome::Void)
        }
    }

    /// Client outcome conditioned on the server's announced `(a, x)`.
    pub fn sample_client<R: Rng + ?Sized>(&self, rng: &mut R, a: Outcome, x: u8, z: u8) -> Outcome {
        let row = &self.behavior.table1[x as usize][z as usize][a.index()];
        if row.iter().sum::<f64>() <= 0.0 {
            return Outcome::Void;
        }
        Outcome::ALL[draw(rng, row)]
    }

    /// One full round; `c = ∅` when `s = 0`.
    pub fn sample_round<R: Rng + ?Sized>(&self, rng: &mut R, s: u8, x: u8, y: u8, z: u8) -> (Outcome, Outcome, Outcome) {
        let (a, b) = self.sample_server(rng, s, x, y);
        let c = if s == 1 { self.sample_client(rng, a, x, z) } else { Outcome::Void };
        (a, b, c)
    }
}
