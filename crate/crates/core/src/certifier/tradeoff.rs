use serde::{Deserialize, Serialize};

use crate::npa::DualCertificate;
use crate::scalar::Scalar;
use crate::sdp::SolverOptions;

use super::score::{Score, ScoreDistribution, ScoreModel};
use super::{build_program, CertifierError, Constraints, GuessingBound, GuessingProgram, GuessingProgramSpec};

/// `p_gen · (−log₂ pg)`, clipped below at 0.
pub fn min_entropy_rate<T: Scalar>(pg_upper: T, p_gen: T) -> Result<T, CertifierError> {
    if !(pg_upper > T::zero()) {
        return Err(CertifierError::Invalid(format!("guessing probability {pg_upper} must be positive")));
    }
    if !(p_gen >= T::zero() && p_gen <= T::one()) {
        return Err(CertifierError::Invalid(format!("p_gen = {p_gen} outside [0, 1]")));
    }
    Ok((p_gen * -pg_upper.log2()).max(T::zero()))
}

/// Tangent of `−log₂ p` at `p0`: `g(p) = −log₂ p0 − (p − p0)/(p0 ln 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tangent<T> {
    pub p0: T,
    pub intercept: T,
    pub slope: T,
}

impl<T: Scalar> Tangent<T> {
    pub fn evaluate(&self, p: T) -> T {
        self.intercept + self.slope * p
    }
}

pub fn tangent_bound<T: Scalar>(p0: T) -> Result<Tangent<T>, CertifierError> {
    if !(p0 > T::zero() && p0 <= T::one()) {
        return Err(CertifierError::Invalid(format!("tangent point {p0} outside (0, 1]")));
    }
    let k = T::one() / (p0 * T::lit(std::f64::consts::LN_2));
    Ok(Tangent { p0, intercept: -p0.log2() + p0 * k, slope: -k })
}

/// Affine lower bound `f(q) = constant + Σ_d coeffs[d] q_d` on the entropy
/// produced per (heralded) round with score distribution `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinTradeoff<T> {
    pub constant: T,
    pub coeffs: ScoreDistribution<T>,
    pub tangent: Tangent<T>,
    pub p_gen: T,
}

impl<T: Scalar> MinTradeoff<T> {
    /// Compose `q ↦ v(q)` (linear), the certificate `v ↦ P_g` (affine), the
    /// tangent and the `p_gen` prefactor.
    pub fn from_certificate(
        certificate: &DualCertificate<T>,
        model: &ScoreModel<T>,
        tangent: Tangent<T>,
        p_gen: T,
    ) -> Result<Self, CertifierError> {
        let rows = model.linear_rows();
        if rows.len() != certificate.coeffs.len() {
            return Err(CertifierError::Invalid(format!(
                "certificate has {} coefficients but the score model yields {} constraint values",
                certificate.coeffs.len(),
                rows.len()
            )));
        }
        let mut coeffs = [T::zero(); Score::COUNT];
        for (row, &c) in rows.iter().zip(&certificate.coeffs) {
            for d in 0..Score::COUNT {
                coeffs[d] += p_gen * tangent.slope * c * row[d];
            }
        }
        let constant = p_gen * (tangent.intercept + tangent.slope * certificate.constant);
        Ok(Self { constant, coeffs, tangent, p_gen })
    }

    pub fn evaluate(&self, q: &ScoreDistribution<T>) -> T {
        self.constant + self.coeffs.iter().zip(q).map(|(&c, &x)| c * x).sum::<T>()
    }
}

/// Build the min-tradeoff function from a score-constrained program. The
/// tangent point defaults to the certified `P_g` at the program's own constraint values.
pub fn build_min_tradeoff<T: Scalar>(
    spec: &GuessingProgramSpec<T>,
    model: &ScoreModel<T>,
    p0: Option<T>,
    opts: &SolverOptions<T>,
) -> Result<(MinTradeoff<T>, GuessingBound<T>, GuessingProgram<T>), CertifierError> {
    if !matches!(spec.constraints, Constraints::Coarse(_)) {
        return Err(CertifierError::Invalid("min-tradeoff functions need score-level (coarse) constraints".into()));
    }
    if spec.mode != model.mode {
        return Err(CertifierError::Invalid("program and score model disagree on the DI mode".into()));
    }
    model.validate()?;
    let program = build_program(spec)?;
    let bound = program.solve(opts)?;
    let tangent = tangent_bound(p0.unwrap_or(bound.pg_upper))?;
    let f = MinTradeoff::from_certificate(&bound.certificate, model, tangent, program.p_gen)?;
    Ok((f, bound, program))
}

/// Per-score frequency intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptedSet<T> {
    pub lo: ScoreDistribution<T>,
    pub hi: ScoreDistribution<T>,
}

impl<T: Scalar> AcceptedSet<T> {
    pub fn new(lo: ScoreDistribution<T>, hi: ScoreDistribution<T>) -> Result<Self, CertifierError> {
        let s = Self { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CertifierError> {
        for d in 0..Score::COUNT {
            if !(self.lo[d] >= T::zero() && self.lo[d] <= self.hi[d] && self.hi[d] <= T::one()) {
                return Err(CertifierError::Invalid(format!(
                    "interval for {} is [{}, {}]",
                    Score::ALL[d],
                    self.lo[d],
                    self.hi[d]
                )));
            }
        }
        let lo: T = self.lo.iter().copied().sum();
        let hi: T = self.hi.iter().copied().sum();
        if lo > T::one() || hi < T::one() {
            return Err(CertifierError::EmptyAcceptedSet);
        }
        Ok(())
    }

    /// `[q_d − slack_d, q_d + slack_d]` clipped to `[0, 1]`.
    pub fn around(q: &ScoreDistribution<T>, slack: &ScoreDistribution<T>) -> Result<Self, CertifierError> {
        let mut lo = [T::zero(); Score::COUNT];
        let mut hi = [T::zero(); Score::COUNT];
        for d in 0..Score::COUNT {
            lo[d] = (q[d] - slack[d]).max(T::zero());
            hi[d] = (q[d] + slack[d]).min(T::one());
        }
        Self::new(lo, hi)
    }

    /// Honest scores ± `k` binomial standard deviations for `n` rounds.
    pub fn with_sigmas(q: &ScoreDistribution<T>, n: usize, k: T) -> Result<Self, CertifierError> {
        let n = T::from_usize_lossy(n);
        let mut slack = [T::zero(); Score::COUNT];
        for d in 0..Score::COUNT {
            slack[d] = k * (q[d] * (T::one() - q[d]) / n).sqrt();
        }
        Self::around(q, &slack)
    }

    pub fn contains(&self, q: &ScoreDistribution<T>) -> bool {
        (0..Score::COUNT).all(|d| q[d] >= self.lo[d] && q[d] <= self.hi[d])
    }
}

/// `h* = min f(q)` over distributions `q` with `lo ≤ q ≤ hi`: start from the
/// lower ends and pour the remaining mass into the cheapest coordinates.
pub fn asymptotic_rate<T: Scalar>(f: &MinTradeoff<T>, acc: &AcceptedSet<T>) -> Result<T, CertifierError> {
    acc.validate()?;
    let q = minimising_distribution(&f.coeffs, acc);
    Ok(f.evaluate(&q))
}

pub(crate) fn minimising_distribution<T: Scalar>(coeffs: &ScoreDistribution<T>, acc: &AcceptedSet<T>) -> ScoreDistribution<T> {
    let mut q = acc.lo;
    let mut rest = T::one() - q.iter().copied().sum::<T>();
    let mut order: Vec<usize> = (0..Score::COUNT).collect();
    order.sort_by(|&i, &j| coeffs[i].partial_cmp(&coeffs[j]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    for d in order {
        if rest <= T::zero() {
            break;
        }
        let add = (acc.hi[d] - acc.lo[d]).min(rest);
        q[d] += add;
        rest -= add;
    }
    q
}
