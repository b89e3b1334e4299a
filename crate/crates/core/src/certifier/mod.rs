//! Guessing-probability programs and the entropy statements built on them.

mod scan;
mod score;
mod tradeoff;


use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::behavior::{Behavior, BehaviorError, InputDist};
use crate::npa::{
    build_moment_sdp, eve_context, generate_monomials, DualCertificate, LevelSpec, MomentSdp, NpaError, Party,
    Polynomial, Scenario,
};
use crate::scalar::Scalar;
use crate::sdp::{SolveStatus, SolverOptions};

pub use scan::{rate_scan, write_scan_csv, ScanOptions, ScanRow};
pub use score::{Score, ScoreDistribution, ScoreModel};
pub use tradeoff::{asymptotic_rate, build_min_tradeoff, min_entropy_rate, tangent_bound, AcceptedSet, MinTradeoff, Tangent};

#[derive(Debug, thiserror::Error)]
pub enum CertifierError {
    #[error("Pr[S=1, Z≠X] is zero; no generation rounds")]
    NoGenerationRounds,
    #[error("behavior signals (max deviation {0:e})")]
    Signalling(f64),
    #[error("{0}")]
    Invalid(String),
    #[error("accepted set is empty")]
    EmptyAcceptedSet,
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Npa(#[from] NpaError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Which statistics constrain the adversary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    FullDistribution,
    CoarseGrained,
}

/// Treatment of inconclusive outcomes.
///
/// `SemiDi` discards rounds where Alice does not click (fair sampling on the
/// server's detectors) and keeps ∅ as a third client outcome. `FullyDi` maps
/// every ∅ to 0 and keeps all rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiMode {
    #[default]
    SemiDi,
    FullyDi,
}

impl fmt::Display for DiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiMode::SemiDi => "semi_di",
            DiMode::FullyDi => "fully_di",
        })
    }
}

impl FromStr for DiMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "semi_di" => Ok(DiMode::SemiDi),
            "fully_di" => Ok(DiMode::FullyDi),
            _ => Err(format!("unknown mode {s:?} (expected semi_di or fully_di)")),
        }
    }
}

impl FromStr for ConstraintMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" | "full_distribution" => Ok(ConstraintMode::FullDistribution),
            "coarse" | "coarse_grained" => Ok(ConstraintMode::CoarseGrained),
            _ => Err(format!("unknown constraint mode {s:?} (expected full or coarse)")),
        }
    }
}

impl DiMode {
    /// Client outcome alphabet size seen by the program.
    pub fn client_outcomes(self) -> u8 {
        match self {
            DiMode::SemiDi => 3,
            DiMode::FullyDi => 2,
        }
    }
}

/// Score-level constraint values: the CHSH win probability and, for `X=Z=z`,
/// the probabilities that the client clicks and disagrees or agrees with A.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseValues<T> {
    pub win: T,
    pub error: [T; 2],
    pub agree: [T; 2],
}

impl<T: Scalar> CoarseValues<T> {
    pub fn from_behavior(b: &Behavior<T>, mode: DiMode) -> Result<Self, CertifierError> {
        let t = ProgramTables::new(b, mode)?;
        let mut win = T::zero();
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for o in 0..2 {
                        if (a ^ o) == (x & y) {
                            win += b.px[x] * b.py[y] * t.ab[x][y][a][o];
                        }
                    }
                }
            }
        }
        let mut error = [T::zero(); 2];
        let mut agree = [T::zero(); 2];
        for z in 0..2 {
            for a in 0..2 {
                for c in 0..2 {
                    if a == c {
                        agree[z] += t.ac[z][z][a][c];
                    } else {
                        error[z] += t.ac[z][z][a][c];
                    }
                }
            }
        }
        Ok(Self { win, error, agree })
    }

    /// Values in program order: `[win, error_0, error_1, agree_0, agree_1]`,
    /// without the agree terms in fully-DI mode where they are implied.
    pub fn to_vec(&self, mode: DiMode) -> Vec<T> {
        let mut v = vec![self.win, self.error[0], self.error[1]];
        if mode == DiMode::SemiDi {
            v.extend(self.agree);
        }
        v
    }
}

/// Conditional tables fed to the program: `ab[x][y][a][b]` with A, B
/// conclusive and `ac[x][z][a][c]` with A conclusive (c = 2 is ∅ in
/// semi-DI mode and never populated in fully-DI mode).
struct ProgramTables<T> {
    ab: [[[[T; 2]; 2]; 2]; 2],
    ac: [[[[T; 3]; 2]; 2]; 2],
}

impl<T: Scalar> ProgramTables<T> {
    fn new(b: &Behavior<T>, mode: DiMode) -> Result<Self, CertifierError> {
        let src = match mode {
            DiMode::SemiDi => b.clone(),
            DiMode::FullyDi => b.to_fully_di(),
        };
        let mut ab = [[[[T::zero(); 2]; 2]; 2]; 2];
        let mut ac = [[[[T::zero(); 3]; 2]; 2]; 2];
        for x in 0..2 {
            for y in 0..2 {
                let cell = &src.table0[x][y];
                let norm: T = (0..2).flat_map(|a| (0..2).map(move |o| cell[a][o])).sum();
                if norm <= T::zero() {
                    return Err(BehaviorError::ZeroConditioning("s=0, A≠∅, B≠∅").into());
                }
                for a in 0..2 {
                    for o in 0..2 {
                        ab[x][y][a][o] = cell[a][o] / norm;
                    }
                }
            }
            for z in 0..2 {
                let cell = &src.table1[x][z];
                let norm: T = cell[..2].iter().flatten().copied().sum();
                if norm <= T::zero() {
                    return Err(BehaviorError::ZeroConditioning("s=1, A≠∅").into());
                }
                for a in 0..2 {
                    for c in 0..3 {
                        ac[x][z][a][c] = cell[a][c] / norm;
                    }
                }
            }
        }
        Ok(Self { ab, ac })
    }
}

/// Constraint data of a guessing program.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraints<T> {
    /// No behavior constraints (the adversary is unconstrained).
    None,
    /// Every moment of `p(ab|xy, s=0)` and `p(ac|xz, s=1)` visible to the program.
    Full(Behavior<T>),
    /// Score-level constraints only.
    Coarse(CoarseValues<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuessingProgramSpec<T> {
    pub mode: DiMode,
    pub constraints: Constraints<T>,
    pub px: InputDist<T>,
    pub py: InputDist<T>,
    pub pz: InputDist<T>,
    pub p_switch: T,
    pub level: LevelSpec,
    /// Diagonal shift of the moment LMI (see `MomentSdp::perturbation`).
    pub perturbation: T,
}

impl<T: Scalar> GuessingProgramSpec<T> {
    pub fn from_behavior(b: &Behavior<T>, constraint_mode: ConstraintMode, mode: DiMode) -> Result<Self, CertifierError> {
        let constraints = match constraint_mode {
            ConstraintMode::FullDistribution => Constraints::Full(b.clone()),
            ConstraintMode::CoarseGrained => Constraints::Coarse(CoarseValues::from_behavior(b, mode)?),
        };
        Ok(Self {
            mode,
            constraints,
            px: b.px,
            py: b.py,
            pz: b.pz,
            p_switch: b.p_switch,
            level: LevelSpec::default(),
            perturbation: T::lit(1e-8),
        })
    }

    pub fn constraint_mode(&self) -> Option<ConstraintMode> {
        match self.constraints {
            Constraints::None => None,
            Constraints::Full(_) => Some(ConstraintMode::FullDistribution),
            Constraints::Coarse(_) => Some(ConstraintMode::CoarseGrained),
        }
    }

    /// `Pr[S=1, Z≠X]`.
    pub fn p_gen(&self) -> T {
        self.p_switch * (self.px[0] * self.pz[1] + self.px[1] * self.pz[0])
    }
}

/// The built moment relaxation for a spec, reusable across constraint values.
#[derive(Clone, Debug)]
pub struct GuessingProgram<T> {
    pub sdp: MomentSdp<T>,
    pub labels: Vec<String>,
    pub p_gen: T,
}

fn gen_contexts() -> Vec<u8> {
    let mut v = Vec::new();
    for a in 0..2 {
        for x in 0..2 {
            v.push(eve_context(a, x, 1 - x));
        }
    }
    v.sort_unstable();
    v
}

/// Assemble `max Σ_{x≠z} Pr[x,z|S=1,Z≠X] Σ_{a,c} <A_{a|x} C_{c|z} E_{c|axz}>`
/// under the program's equality constraints.
pub fn build_program<T: Scalar>(spec: &GuessingProgramSpec<T>) -> Result<GuessingProgram<T>, CertifierError> {
    let p_gen = spec.p_gen();
    if !(p_gen > T::zero()) {
        return Err(CertifierError::NoGenerationRounds);
    }
    let nc = spec.mode.client_outcomes();
    let scenario = Scenario::routed(nc, &gen_contexts());
    let pr = |p: Party, i: u8, o: u8| Polynomial::<T>::projector(&scenario, p, i, o);

    let pxz = p_gen / spec.p_switch;
    let mut objective = Polynomial::zero();
    for a in 0..2u8 {
        for x in 0..2u8 {
            let z = 1 - x;
            let w = spec.px[x as usize] * spec.pz[z as usize] / pxz;
            let ctx = eve_context(a, x, z);
            for c in 0..nc {
                let t = &(&pr(Party::A, x, a) * &pr(Party::C, z, c)) * &pr(Party::E, ctx, c);
                objective.add_scaled(w, &t);
            }
        }
    }

    let mut constraints: Vec<(Polynomial<T>, T)> = Vec::new();
    let mut labels = Vec::new();
    match &spec.constraints {
        Constraints::None => {}
        Constraints::Full(b) => {
            let report = b.no_signalling(T::lit(1e-6));
            if !report.passed {
                return Err(CertifierError::Signalling(report.max_deviation.to_f64_lossy()));
            }
            let t = ProgramTables::new(b, spec.mode)?;
            for x in 0..2 {
                let v: T = (0..2).map(|z| b.pz[z] * t.ac[x][z][0].iter().copied().sum::<T>()).sum();
                constraints.push((pr(Party::A, x as u8, 0), v));
                labels.push(format!("A0|{x}"));
            }
            for y in 0..2 {
                let v: T = (0..2).map(|x| b.px[x] * (t.ab[x][y][0][0] + t.ab[x][y][1][0])).sum();
                constraints.push((pr(Party::B, y as u8, 0), v));
                labels.push(format!("B0|{y}"));
            }
            for x in 0..2 {
                for y in 0..2 {
                    constraints.push((&pr(Party::A, x as u8, 0) * &pr(Party::B, y as u8, 0), t.ab[x][y][0][0]));
                    labels.push(format!("A0B0|{x}{y}"));
                }
            }
            for z in 0..2 {
                for c in 0..(nc - 1) as usize {
                    let v: T = (0..2).map(|x| b.px[x] * (t.ac[x][z][0][c] + t.ac[x][z][1][c])).sum();
                    constraints.push((pr(Party::C, z as u8, c as u8), v));
                    labels.push(format!("C{c}|{z}"));
                    for x in 0..2 {
                        let ac = &pr(Party::A, x as u8, 0) * &pr(Party::C, z as u8, c as u8);
                        constraints.push((ac, t.ac[x][z][0][c]));
                        labels.push(format!("A0C{c}|{x}{z}"));
                    }
                }
            }
        }
        Constraints::Coarse(cv) => {
            let mut win = Polynomial::zero();
            for x in 0..2u8 {
                for y in 0..2u8 {
                    for a in 0..2u8 {
                        for o in 0..2u8 {
                            if (a ^ o) == (x & y) {
                                let w = spec.px[x as usize] * spec.py[y as usize];
                                win.add_scaled(w, &(&pr(Party::A, x, a) * &pr(Party::B, y, o)));
                            }
                        }
                    }
                }
            }
            constraints.push((win, cv.win));
            labels.push("win".into());
            for z in 0..2u8 {
                let err = &(&pr(Party::A, z, 0) * &pr(Party::C, z, 1)) + &(&pr(Party::A, z, 1) * &pr(Party::C, z, 0));
                constraints.push((err, cv.error[z as usize]));
                labels.push(format!("error_{z}"));
            }
            if spec.mode == DiMode::SemiDi {
                for z in 0..2u8 {
                    let agree =
                        &(&pr(Party::A, z, 0) * &pr(Party::C, z, 0)) + &(&pr(Party::A, z, 1) * &pr(Party::C, z, 1));
                    constraints.push((agree, cv.agree[z as usize]));
                    labels.push(format!("agree_{z}"));
                }
            }
        }
    }

    let monomials = generate_monomials(&scenario, &spec.level);
    let mut sdp = build_moment_sdp(&monomials, &objective, &constraints)?;
    sdp.perturbation = spec.perturbation;
    Ok(GuessingProgram { sdp, labels, p_gen })
}

/// Certified bound on the client's guessing probability.
#[derive(Clone, Debug)]
pub struct GuessingBound<T> {
    /// Rigorous upper bound, clipped to 1.
    pub pg_upper: T,
    /// Affine upper bound on `P_g` in the constraint values.
    pub certificate: DualCertificate<T>,
    pub values: Vec<T>,
    pub labels: Vec<String>,
    pub p_gen: T,
    pub status: SolveStatus,
    pub gap: T,
    pub iterations: usize,
}

impl<T: Scalar> GuessingProgram<T> {
    pub fn solve_with_values(&self, values: &[T], opts: &SolverOptions<T>) -> Result<GuessingBound<T>, CertifierError> {
        let sol = self.sdp.solve_with_values(values, opts)?;
        Ok(GuessingBound {
            pg_upper: sol.upper_bound.min(T::one()),
            certificate: sol.certificate,
            values: values.to_vec(),
            labels: self.labels.clone(),
            p_gen: self.p_gen,
            status: sol.status,
            gap: sol.gap,
            iterations: sol.iterations,
        })
    }

    pub fn solve(&self, opts: &SolverOptions<T>) -> Result<GuessingBound<T>, CertifierError> {
        let v = self.sdp.nominal_values().to_vec();
        self.solve_with_values(&v, opts)
    }
}

pub fn guessing_probability<T: Scalar>(
    spec: &GuessingProgramSpec<T>,
    opts: &SolverOptions<T>,
) -> Result<GuessingBound<T>, CertifierError> {
    build_program(spec)?.solve(opts)
}
