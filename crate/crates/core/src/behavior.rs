//! Correlation tables, coarse-grained scores and frequency accumulation.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum BehaviorError {
    #[error("conditioning event has probability zero: {0}")]
    ZeroConditioning(&'static str),
    #[error("invalid behavior: {0}")]
    Invalid(String),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Measurement outcome: a bit or the inconclusive (no-click) symbol ∅.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Outcome {
    #[default]
    Zero,
    One,
    Void,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Zero, Outcome::One, Outcome::Void];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn bit(b: u8) -> Self {
        if b == 0 {
            Outcome::Zero
        } else {
            Outcome::One
        }
    }

    pub fn is_conclusive(self) -> bool {
        self != Outcome::Void
    }

    pub fn as_bit(self) -> Option<u8> {
        match self {
            Outcome::Zero => Some(0),
            Outcome::One => Some(1),
            Outcome::Void => None,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Zero => "0",
            Outcome::One => "1",
            Outcome::Void => "void",
        })
    }
}

impl std::str::FromStr for Outcome {
    type Err = BehaviorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "0" => Ok(Outcome::Zero),
            "1" => Ok(Outcome::One),
            "void" | "∅" => Ok(Outcome::Void),
            other => Err(BehaviorError::Invalid(format!("bad outcome {other:?}"))),
        }
    }
}

// JSON form: 0, 1 or "void".
impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Outcome::Zero => s.serialize_u8(0),
            Outcome::One => s.serialize_u8(1),
            Outcome::Void => s.serialize_str("void"),
        }
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u8),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Ok(Outcome::Zero),
            Raw::N(1) => Ok(Outcome::One),
            Raw::S(s) if s == "void" => Ok(Outcome::Void),
            _ => Err(serde::de::Error::custom("outcome must be 0, 1 or \"void\"")),
        }
    }
}

/// `[p(0), p(1)]` of a binary input.
pub type InputDist<T> = [T; 2];

/// Conditional outcome tables of the routed Bell test.
///
/// `table0[x][y][a][b] = p(ab|xy, s=0)` and `table1[x][z][a][c] = p(ac|xz, s=1)`,
/// indexed by [`Outcome::index`].
#[derive(Clone, Debug, PartialEq)]
pub struct Behavior<T> {
    pub table0: [[[[T; 3]; 3]; 2]; 2],
    pub table1: [[[[T; 3]; 3]; 2]; 2],
    pub px: InputDist<T>,
    pub py: InputDist<T>,
    pub pz: InputDist<T>,
    pub p_switch: T,
}

impl<T: Scalar> Behavior<T> {
    pub fn zeros(px: InputDist<T>, py: InputDist<T>, pz: InputDist<T>, p_switch: T) -> Self {
        let z = [[[[T::zero(); 3]; 3]; 2]; 2];
        Self { table0: z, table1: z, px, py, pz, p_switch }
    }

    pub fn p0(&self, a: Outcome, b: Outcome, x: usize, y: usize) -> T {
        self.table0[x][y][a.index()][b.index()]
    }

    pub fn p1(&self, a: Outcome, c: Outcome, x: usize, z: usize) -> T {
        self.table1[x][z][a.index()][c.index()]
    }

    /// Alice's marginal `p(a|x)` from the s=0 table at Bob input `y`.
    pub fn alice_marginal0(&self, a: Outcome, x: usize, y: usize) -> T {
        self.table0[x][y][a.index()].iter().copied().sum()
    }

    pub fn alice_marginal1(&self, a: Outcome, x: usize, z: usize) -> T {
        self.table1[x][z][a.index()].iter().copied().sum()
    }

    /// Check normalisation and range; `tol` bounds the normalisation error.
    pub fn validate(&self, tol: T) -> Result<(), BehaviorError> {
        let check_dist = |d: &InputDist<T>, name: &str| -> Result<(), BehaviorError> {
            if d.iter().any(|&p| !(p >= T::zero() && p <= T::one())) || ((d[0] + d[1]) - T::one()).abs() > tol {
                return Err(BehaviorError::Invalid(format!("{name} is not a distribution")));
            }
            Ok(())
        };
        check_dist(&self.px, "px")?;
        check_dist(&self.py, "py")?;
        check_dist(&self.pz, "pz")?;
        if !(self.p_switch >= T::zero() && self.p_switch <= T::one()) {
            return Err(BehaviorError::Invalid("p_switch outside [0,1]".into()));
        }
        for (name, t) in [("s=0", &self.table0), ("s=1", &self.table1)] {
            for (i, row) in t.iter().enumerate() {
                for (j, cell) in row.iter().enumerate() {
                    let mut sum = T::zero();
                    for v in cell.iter().flatten() {
                        if !(*v >= -tol && *v <= T::one() + tol) {
                            return Err(BehaviorError::Invalid(format!("{name} entry out of [0,1] at inputs ({i},{j})")));
                        }
                        sum += *v;
                    }
                    if (sum - T::one()).abs() > tol {
                        return Err(BehaviorError::Invalid(format!(
                            "{name} table for inputs ({i},{j}) sums to {sum}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Merge ∅ into outcome 0 for all parties.
    pub fn to_fully_di(&self) -> Self {
        let merge = |t: &[[[[T; 3]; 3]; 2]; 2]| {
            let mut out = [[[[T::zero(); 3]; 3]; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    for a in 0..3 {
                        for b in 0..3 {
                            let (ma, mb) = (if a == 2 { 0 } else { a }, if b == 2 { 0 } else { b });
                            out[i][j][ma][mb] += t[i][j][a][b];
                        }
                    }
                }
            }
            out
        };
        Self { table0: merge(&self.table0), table1: merge(&self.table1), ..self.clone() }
    }

    /// Restrict to rounds where Alice's outcome is conclusive and renormalise
    /// each conditional table (fair sampling makes `p(a≠∅|x)` input independent).
    pub fn heralded(&self) -> Result<Self, BehaviorError> {
        let mut out = self.clone();
        for t in [&mut out.table0, &mut out.table1] {
            for row in t.iter_mut() {
                for cell in row.iter_mut() {
                    let norm: T = cell[..2].iter().flatten().copied().sum();
                    if norm <= T::zero() {
                        return Err(BehaviorError::ZeroConditioning("Alice conclusive"));
                    }
                    for a in 0..3 {
                        for v in cell[a].iter_mut() {
                            *v = if a == 2 { T::zero() } else { *v / norm };
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `Pr[A ≠ ∅]` averaged over the input distributions and both routes.
    pub fn heralding_rate(&self) -> T {
        let mut r = T::zero();
        for x in 0..2 {
            for y in 0..2 {
                let m = T::one() - self.alice_marginal0(Outcome::Void, x, y);
                r += (T::one() - self.p_switch) * self.px[x] * self.py[y] * m;
            }
            for z in 0..2 {
                let m = T::one() - self.alice_marginal1(Outcome::Void, x, z);
                r += self.p_switch * self.px[x] * self.pz[z] * m;
            }
        }
        r
    }

    /// Expected CHSH score `Σ_{xy} p(x)p(y) Pr[A⊕B = xy, A,B ≠ ∅ | xy]`
    /// together with the conclusive mass, unnormalised.
    fn chsh_masses(&self) -> (T, T) {
        let (mut win, mut conc) = (T::zero(), T::zero());
        for x in 0..2 {
            for y in 0..2 {
                let w = self.px[x] * self.py[y];
                for a in 0..2 {
                    for b in 0..2 {
                        let p = w * self.table0[x][y][a][b];
                        conc += p;
                        if (a ^ b) == (x & y) {
                            win += p;
                        }
                    }
                }
            }
        }
        (win, conc)
    }

    pub fn no_signalling(&self, tol: T) -> NoSignallingReport<T> {
        let mut r = NoSignallingReport {
            alice_across_y: T::zero(),
            alice_across_z: T::zero(),
            alice_across_s: T::zero(),
            bob_across_x: T::zero(),
            charlie_across_x: T::zero(),
            max_deviation: T::zero(),
            passed: true,
        };
        for a in Outcome::ALL {
            for x in 0..2 {
                let d = (self.alice_marginal0(a, x, 0) - self.alice_marginal0(a, x, 1)).abs();
                r.alice_across_y = r.alice_across_y.max(d);
                let d = (self.alice_marginal1(a, x, 0) - self.alice_marginal1(a, x, 1)).abs();
                r.alice_across_z = r.alice_across_z.max(d);
                for y in 0..2 {
                    for z in 0..2 {
                        let d = (self.alice_marginal0(a, x, y) - self.alice_marginal1(a, x, z)).abs();
                        r.alice_across_s = r.alice_across_s.max(d);
                    }
                }
            }
        }
        for o in Outcome::ALL {
            let i = o.index();
            for y in 0..2 {
                let m = |x: usize| -> T { (0..3).map(|a| self.table0[x][y][a][i]).sum() };
                r.bob_across_x = r.bob_across_x.max((m(0) - m(1)).abs());
            }
            for z in 0..2 {
                let m = |x: usize| -> T { (0..3).map(|a| self.table1[x][z][a][i]).sum() };
                r.charlie_across_x = r.charlie_across_x.max((m(0) - m(1)).abs());
            }
        }
        r.max_deviation = [r.alice_across_y, r.alice_across_z, r.alice_across_s, r.bob_across_x, r.charlie_across_x]
            .into_iter()
            .fold(T::zero(), |m, v| m.max(v));
        r.passed = r.max_deviation < tol;
        r
    }

    /// Write the table as CSV with columns `s,x,y,z,a,b,c,probability`.
    /// Inputs and outcomes that do not apply to a route are written as `-`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BehaviorError> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["s", "x", "y", "z", "a", "b", "c", "probability"])?;
        for x in 0..2 {
            for y in 0..2 {
                for a in Outcome::ALL {
                    for b in Outcome::ALL {
                        wr.write_record([
                            "0".into(),
                            x.to_string(),
                            y.to_string(),
                            "-".into(),
                            a.to_string(),
                            b.to_string(),
                            "-".into(),
                            format!("{:e}", self.p0(a, b, x, y).to_f64_lossy()),
                        ])?;
                    }
                }
            }
        }
        for x in 0..2 {
            for z in 0..2 {
                for a in Outcome::ALL {
                    for c in Outcome::ALL {
                        wr.write_record([
                            "1".into(),
                            x.to_string(),
                            "-".into(),
                            z.to_string(),
                            a.to_string(),
                            "-".into(),
                            c.to_string(),
                            format!("{:e}", self.p1(a, c, x, z).to_f64_lossy()),
                        ])?;
                    }
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Read a table written by [`Behavior::write_csv`]; input distributions
    /// are not part of the table and must be supplied.
    pub fn read_csv<R: std::io::Read>(
        r: R,
        px: InputDist<T>,
        py: InputDist<T>,
        pz: InputDist<T>,
        p_switch: T,
    ) -> Result<Self, BehaviorError> {
        let mut b = Self::zeros(px, py, pz, p_switch);
        let mut rd = csv::Reader::from_reader(r);
        let bit = |s: &str| -> Result<usize, BehaviorError> {
            match s.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                o => Err(BehaviorError::Invalid(format!("expected input bit, got {o:?}"))),
            }
        };
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 8 {
                return Err(BehaviorError::Invalid(format!("expected 8 columns, got {}", rec.len())));
            }
            let p: f64 = rec[7]
                .trim()
                .parse()
                .map_err(|_| BehaviorError::Invalid(format!("bad probability {:?}", &rec[7])))?;
            let a: Outcome = rec[4].parse()?;
            match rec[0].trim() {
                "0" => {
                    let o: Outcome = rec[5].parse()?;
                    b.table0[bit(&rec[1])?][bit(&rec[2])?][a.index()][o.index()] = T::lit(p);
                }
                "1" => {
                    let o: Outcome = rec[6].parse()?;
                    b.table1[bit(&rec[1])?][bit(&rec[3])?][a.index()][o.index()] = T::lit(p);
                }
                s => return Err(BehaviorError::Invalid(format!("bad route {s:?}"))),
            }
        }
        b.validate(T::lit(1e-9))?;
        Ok(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoSignallingReport<T> {
    pub alice_across_y: T,
    pub alice_across_z: T,
    pub alice_across_s: T,
    pub bob_across_x: T,
    pub charlie_across_x: T,
    pub max_deviation: T,
    pub passed: bool,
}

/// Scores monitored by the protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseStats<T> {
    /// CHSH winning probability conditioned on conclusive server outcomes.
    pub omega: T,
    pub q0: T,
    pub q1: T,
    pub tau0: T,
    pub tau1: T,
    pub heralding_rate: T,
}

impl<T: Scalar> CoarseStats<T> {
    pub fn q(&self, z: usize) -> T {
        if z == 0 {
            self.q0
        } else {
            self.q1
        }
    }

    pub fn tau(&self, z: usize) -> T {
        if z == 0 {
            self.tau0
        } else {
            self.tau1
        }
    }
}

pub fn coarse_grain<T: Scalar>(b: &Behavior<T>) -> Result<CoarseStats<T>, BehaviorError> {
    let (win, conc) = b.chsh_masses();
    if conc <= T::zero() {
        return Err(BehaviorError::ZeroConditioning("s=0, A≠∅, B≠∅"));
    }
    let mut q = [T::zero(); 2];
    let mut tau = [T::zero(); 2];
    for z in 0..2 {
        let (mut err, mut tot) = (T::zero(), T::zero());
        for a in 0..2 {
            for c in 0..2 {
                let p = b.table1[z][z][a][c];
                tot += p;
                if a != c {
                    err += p;
                }
            }
        }
        if tot <= T::zero() {
            return Err(BehaviorError::ZeroConditioning("s=1, X=Z, A≠∅, C≠∅"));
        }
        q[z] = err / tot;
        let px_norm = b.px[0] + b.px[1];
        if px_norm <= T::zero() {
            return Err(BehaviorError::ZeroConditioning("s=1, Z=z"));
        }
        let mut t = T::zero();
        for x in 0..2 {
            for a in 0..3 {
                t += b.px[x] * (b.table1[x][z][a][0] + b.table1[x][z][a][1]);
            }
        }
        tau[z] = t / px_norm;
    }
    Ok(CoarseStats {
        omega: win / conc,
        q0: q[0],
        q1: q[1],
        tau0: tau[0],
        tau1: tau[1],
        heralding_rate: b.heralding_rate(),
    })
}

/// Inputs and outcomes of one round as seen by the statistics layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub s: u8,
    pub x: u8,
    pub y: u8,
    pub z: u8,
    pub a: Outcome,
    pub b: Outcome,
    pub c: Outcome,
}

const CELLS: usize = 2 * 2 * 2 * 2 * 3 * 3 * 3;

fn cell_index(o: &Observation) -> usize {
    ((((((o.s as usize * 2 + o.x as usize) * 2 + o.y as usize) * 2 + o.z as usize) * 3 + o.a.index()) * 3
        + o.b.index())
        * 3)
        + o.c.index()
}

fn cell_observation(mut i: usize) -> Observation {
    let c = i % 3;
    i /= 3;
    let b = i % 3;
    i /= 3;
    let a = i % 3;
    i /= 3;
    let z = i % 2;
    i /= 2;
    let y = i % 2;
    i /= 2;
    let x = i % 2;
    i /= 2;
    Observation {
        s: i as u8,
        x: x as u8,
        y: y as u8,
        z: z as u8,
        a: Outcome::ALL[a],
        b: Outcome::ALL[b],
        c: Outcome::ALL[c],
    }
}

/// Per-(s,x,y,z,a,b,c) counters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyCounter {
    counts: Vec<u64>,
    total: u64,
}

impl Default for FrequencyCounter {
    fn default() -> Self {
        Self { counts: vec![0; CELLS], total: 0 }
    }
}

#[derive(Serialize)]
struct FrequencyLine {
    #[serde(flatten)]
    obs: Observation,
    count: u64,
    frequency: f64,
}

impl FrequencyCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, o: &Observation) {
        self.counts[cell_index(o)] += 1;
        self.total += 1;
    }

    pub fn count(&self, o: &Observation) -> u64 {
        self.counts[cell_index(o)]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Non-zero cells in index order.
    pub fn cells(&self) -> impl Iterator<Item = (Observation, u64)> + '_ {
        self.counts.iter().enumerate().filter(|(_, &n)| n > 0).map(|(i, &n)| (cell_observation(i), n))
    }

    /// Empirical behavior: conditional frequencies per input pair and the
    /// empirical input distributions. Input pairs never seen get a uniform row.
    pub fn estimate<T: Scalar>(&self) -> Behavior<T> {
        let (mut ns, mut nx, mut ny, mut nz) = ([0u64; 2], [0u64; 2], [0u64; 2], [0u64; 2]);
        let mut b = Behavior::zeros([T::zero(); 2], [T::zero(); 2], [T::zero(); 2], T::zero());
        let mut denom0 = [[0u64; 2]; 2];
        let mut denom1 = [[0u64; 2]; 2];
        for (o, n) in self.cells() {
            ns[o.s as usize] += n;
            nx[o.x as usize] += n;
            if o.s == 0 {
                ny[o.y as usize] += n;
                denom0[o.x as usize][o.y as usize] += n;
                b.table0[o.x as usize][o.y as usize][o.a.index()][o.b.index()] += T::from_usize_lossy(n as usize);
            } else {
                nz[o.z as usize] += n;
                denom1[o.x as usize][o.z as usize] += n;
                b.table1[o.x as usize][o.z as usize][o.a.index()][o.c.index()] += T::from_usize_lossy(n as usize);
            }
        }
        let norm = |t: &mut [[[[T; 3]; 3]; 2]; 2], d: &[[u64; 2]; 2]| {
            for i in 0..2 {
                for j in 0..2 {
                    if d[i][j] == 0 {
                        let u = T::one() / T::lit(4.0);
                        for a in 0..2 {
                            for c in 0..2 {
                                t[i][j][a][c] = u;
                            }
                        }
                    } else {
                        let n = T::from_usize_lossy(d[i][j] as usize);
                        t[i][j].iter_mut().flatten().for_each(|v| *v /= n);
                    }
                }
            }
        };
        norm(&mut b.table0, &denom0);
        norm(&mut b.table1, &denom1);
        let dist = |c: [u64; 2]| -> InputDist<T> {
            let t = c[0] + c[1];
            if t == 0 {
                [T::lit(0.5), T::lit(0.5)]
            } else {
                let t = T::from_usize_lossy(t as usize);
                [T::from_usize_lossy(c[0] as usize) / t, T::from_usize_lossy(c[1] as usize) / t]
            }
        };
        b.px = dist(nx);
        b.py = dist(ny);
        b.pz = dist(nz);
        b.p_switch = if self.total == 0 {
            T::zero()
        } else {
            T::from_usize_lossy(ns[1] as usize) / T::from_usize_lossy(self.total as usize)
        };
        b
    }

    /// One JSON object per non-zero cell.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), BehaviorError> {
        for (obs, count) in self.cells() {
            let line = FrequencyLine { obs, count, frequency: count as f64 / self.total.max(1) as f64 };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Inverse of [`FrequencyCounter::write_jsonl`].
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, BehaviorError> {
        #[derive(Deserialize)]
        struct Line {
            #[serde(flatten)]
            obs: Observation,
            count: u64,
        }
        let mut c = Self::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line)?;
            c.counts[cell_index(&l.obs)] += l.count;
            c.total += l.count;
        }
        Ok(c)
    }
}
