use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::behavior::{Behavior, InputDist, Outcome};
use crate::scalar::Scalar;

use super::{CertifierError, CoarseValues, DiMode};

/// Test score of one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    /// Generation round.
    Bottom,
    ChshWin,
    ChshLoss,
    /// s=0 test round with an inconclusive server outcome.
    ServerNoclick,
    #[serde(rename = "agree_0")]
    Agree0,
    #[serde(rename = "agree_1")]
    Agree1,
    #[serde(rename = "error_0")]
    Error0,
    #[serde(rename = "error_1")]
    Error1,
    #[serde(rename = "client_noclick_0")]
    ClientNoclick0,
    #[serde(rename = "client_noclick_1")]
    ClientNoclick1,
    /// s=1 test round with x≠z.
    Offbasis,
}

impl Score {
    pub const COUNT: usize = 11;
    pub const ALL: [Score; 11] = [
        Score::Bottom,
        Score::ChshWin,
        Score::ChshLoss,
        Score::ServerNoclick,
        Score::Agree0,
        Score::Agree1,
        Score::Error0,
        Score::Error1,
        Score::ClientNoclick0,
        Score::ClientNoclick1,
        Score::Offbasis,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Score::Bottom => "bottom",
            Score::ChshWin => "chsh_win",
            Score::ChshLoss => "chsh_loss",
            Score::ServerNoclick => "server_noclick",
            Score::Agree0 => "agree_0",
            Score::Agree1 => "agree_1",
            Score::Error0 => "error_0",
            Score::Error1 => "error_1",
            Score::ClientNoclick0 => "client_noclick_0",
            Score::ClientNoclick1 => "client_noclick_1",
            Score::Offbasis => "offbasis",
        }
    }

    fn agree(z: u8) -> Self {
        if z == 0 { Score::Agree0 } else { Score::Agree1 }
    }

    fn error(z: u8) -> Self {
        if z == 0 { Score::Error0 } else { Score::Error1 }
    }

    fn client_noclick(z: u8) -> Self {
        if z == 0 { Score::ClientNoclick0 } else { Score::ClientNoclick1 }
    }

    /// Score of a round. Test rounds with s=1 and `a = ∅` count as
    /// `server_noclick`: the server's detector failed, nothing is learned
    /// about the client.
    #[allow(clippy::too_many_arguments)]
    pub fn of_round(s: u8, x: u8, y: u8, z: u8, a: Outcome, b: Outcome, c: Outcome, t: bool) -> Self {
        if !t {
            return Score::Bottom;
        }
        if s == 0 {
            return match (a.as_bit(), b.as_bit()) {
                (Some(a), Some(b)) if (a ^ b) == (x & y) => Score::ChshWin,
                (Some(_), Some(_)) => Score::ChshLoss,
                _ => Score::ServerNoclick,
            };
        }
        if x != z {
            return Score::Offbasis;
        }
        match (a.as_bit(), c.as_bit()) {
            (None, _) => Score::ServerNoclick,
            (Some(_), None) => Score::client_noclick(z),
            (Some(a), Some(c)) if a == c => Score::agree(z),
            _ => Score::error(z),
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Score {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Score::ALL.into_iter().find(|d| d.name() == s).ok_or_else(|| format!("unknown score {s:?}"))
    }
}

/// Distribution (or frequency vector) over the score alphabet, indexed by `Score::index`.
pub type ScoreDistribution<T> = [T; Score::COUNT];

/// Protocol parameters that relate score frequencies to the program's
/// constraint values. In semi-DI mode frequencies are taken over heralded
/// rounds (A ≠ ∅); in fully-DI mode over all rounds after ∅ → 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel<T> {
    pub mode: DiMode,
    /// Test-round probability for s=0 and s=1 rounds.
    pub gamma: [T; 2],
    pub p_switch: T,
    pub px: InputDist<T>,
    pub py: InputDist<T>,
    pub pz: InputDist<T>,
    /// Calibrated click probability of Bob's detector; the CHSH score is
    /// normalised by it under fair sampling. Ignored in fully-DI mode.
    pub bob_efficiency: T,
}

impl<T: Scalar> ScoreModel<T> {
    pub fn validate(&self) -> Result<(), CertifierError> {
        let unit = |v: T| v > T::zero() && v <= T::one();
        for g in self.gamma {
            if !(g > T::zero() && g < T::one()) {
                return Err(CertifierError::Invalid(format!("gamma = {g} outside (0, 1)")));
            }
        }
        if !(self.p_switch > T::zero() && self.p_switch < T::one()) {
            return Err(CertifierError::Invalid(format!("p_switch = {} outside (0, 1)", self.p_switch)));
        }
        if !unit(self.bob_efficiency) {
            return Err(CertifierError::Invalid(format!("bob_efficiency = {} outside (0, 1]", self.bob_efficiency)));
        }
        for z in 0..2 {
            if !(self.px[z] * self.pz[z] > T::zero()) {
                return Err(CertifierError::Invalid(format!("Pr[X=Z={z}] is zero")));
            }
        }
        Ok(())
    }

    fn win_norm(&self) -> T {
        let eta = match self.mode {
            DiMode::SemiDi => self.bob_efficiency,
            DiMode::FullyDi => T::one(),
        };
        self.gamma[0] * (T::one() - self.p_switch) * eta
    }

    fn basis_norm(&self, z: usize) -> T {
        self.gamma[1] * self.p_switch * self.px[z] * self.pz[z]
    }

    /// Constraint values implied by score frequencies `q` (linear in `q`).
    pub fn coarse_values(&self, q: &ScoreDistribution<T>) -> CoarseValues<T> {
        CoarseValues {
            win: q[Score::ChshWin.index()] / self.win_norm(),
            error: [q[Score::Error0.index()] / self.basis_norm(0), q[Score::Error1.index()] / self.basis_norm(1)],
            agree: [q[Score::Agree0.index()] / self.basis_norm(0), q[Score::Agree1.index()] / self.basis_norm(1)],
        }
    }

    /// Rows `L` with `coarse_values(q).to_vec(mode)[i] = Σ_d L[i][d] q_d`.
    pub fn linear_rows(&self) -> Vec<ScoreDistribution<T>> {
        let row = |d: Score, n: T| {
            let mut r = [T::zero(); Score::COUNT];
            r[d.index()] = T::one() / n;
            r
        };
        let mut rows = vec![
            row(Score::ChshWin, self.win_norm()),
            row(Score::Error0, self.basis_norm(0)),
            row(Score::Error1, self.basis_norm(1)),
        ];
        if self.mode == DiMode::SemiDi {
            rows.push(row(Score::Agree0, self.basis_norm(0)));
            rows.push(row(Score::Agree1, self.basis_norm(1)));
        }
        rows
    }

    /// Expected score distribution of a behavior run with these parameters.
    pub fn expected(&self, b: &Behavior<T>) -> Result<ScoreDistribution<T>, CertifierError> {
        let src = match self.mode {
            DiMode::SemiDi => b.heralded()?,
            DiMode::FullyDi => b.to_fully_di(),
        };
        let mut q = [T::zero(); Score::COUNT];
        let t0 = self.gamma[0] * (T::one() - self.p_switch);
        let t1 = self.gamma[1] * self.p_switch;
        q[Score::Bottom.index()] = T::one() - t0 - t1;
        for x in 0..2u8 {
            for y in 0..2u8 {
                let w = t0 * self.px[x as usize] * self.py[y as usize];
                for a in Outcome::ALL {
                    for o in Outcome::ALL {
                        let p = src.p0(a, o, x as usize, y as usize);
                        q[Score::of_round(0, x, y, 0, a, o, Outcome::Void, true).index()] += w * p;
                    }
                }
            }
        }
        for x in 0..2u8 {
            for z in 0..2u8 {
                let w = t1 * self.px[x as usize] * self.pz[z as usize];
                for a in Outcome::ALL {
                    for c in Outcome::ALL {
                        let p = src.p1(a, c, x as usize, z as usize);
                        q[Score::of_round(1, x, 0, z, a, Outcome::Void, c, true).index()] += w * p;
                    }
                }
            }
        }
        Ok(q)
    }
}
