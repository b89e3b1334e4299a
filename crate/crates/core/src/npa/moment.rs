use std::collections::HashMap;

use crate::linalg::{psd_projection, Matrix};
use crate::scalar::Scalar;
use crate::sdp::{self, BlockKind, SdpProblem, Sense, SolveStatus, SolverOptions, SparseSym};

use super::{moment_key, Letter, Monomial, NpaError, Polynomial};

/// Map from moment keys to variable indices; index 0 is the identity.
#[derive(Clone, Debug, Default)]
pub struct MomentIndex {
    keys: Vec<Vec<Letter>>,
    map: HashMap<Vec<Letter>, usize>,
}

impl MomentIndex {
    fn insert(&mut self, key: Vec<Letter>) -> usize {
        if let Some(&i) = self.map.get(&key) {
            return i;
        }
        self.keys.push(key.clone());
        self.map.insert(key, self.keys.len() - 1);
        self.keys.len() - 1
    }

    /// Variable of the moment `<ψ|w|ψ>`; `Ok(None)` when `w` vanishes.
    pub fn lookup(&self, w: &[Letter]) -> Result<Option<usize>, NpaError> {
        match moment_key(w) {
            None => Ok(None),
            Some(k) => self
                .map
                .get(&k)
                .copied()
                .map(Some)
                .ok_or_else(|| NpaError::MissingMoment(Monomial { word: k, is_zero: false }.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, i: usize) -> &[Letter] {
        &self.keys[i]
    }
}

/// Affine upper bound `constant + Σ coeffs[i]·v[i]` on the objective, valid
/// for every quantum realisation whose constraint values are `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualCertificate<T> {
    pub constant: T,
    pub coeffs: Vec<T>,
}

impl<T: Scalar> DualCertificate<T> {
    pub fn evaluate(&self, v: &[T]) -> T {
        self.constant + self.coeffs.iter().zip(v).map(|(&c, &x)| c * x).sum::<T>()
    }
}

#[derive(Clone, Debug)]
pub struct NpaSolution<T> {
    /// Objective at the solver's moment assignment.
    pub value: T,
    /// Rigorous upper bound derived from the dual certificate.
    pub upper_bound: T,
    pub certificate: DualCertificate<T>,
    pub status: SolveStatus,
    pub gap: T,
    pub iterations: usize,
    /// Moment values (index 0 is the identity) from the solver's dual vector.
    pub moments: Vec<T>,
}

/// Moment relaxation with the equality constraints eliminated: pivot moments
/// are affine in the free moments and the constraint values, and the
/// remaining free moments are the variables of an LMI solved in SDP form.
#[derive(Clone, Debug)]
pub struct MomentSdp<T> {
    pub monomials: Vec<Monomial>,
    pub index: MomentIndex,
    /// Moment variable of `Γ[i][j]` (`None` for structural zeros), row-major.
    gamma: Vec<Option<usize>>,
    /// Upper-triangle positions of each moment.
    positions: Vec<Vec<(usize, usize)>>,
    objective: Vec<T>,
    /// Constant parts `c_i0` of the constraint functionals.
    constraint_offsets: Vec<T>,
    nominal_values: Vec<T>,
    free: Vec<usize>,
    pivots: Vec<usize>,
    /// `t_pivot = Σ_i g[p][i] (v_i − c_i0) − Σ_f r[p][f] t_f`
    r: Vec<Vec<T>>,
    g: Vec<Vec<T>>,
    /// Reduced objective over free moments.
    reduced_objective: Vec<T>,
    constraint_mats: Vec<SparseSym<T>>,
    /// The LMI is solved as `Γ(t) + εI ⪰ 0`. Behaviours on the boundary of
    /// the quantum set (e.g. maximal CHSH violation) leave the moment LMI
    /// without interior points; the shift restores them. The reported
    /// upper bound stays rigorous because it is recomputed from `X`.
    pub perturbation: T,
}

fn resolve<T: Scalar>(index: &MomentIndex, p: &Polynomial<T>) -> Result<Vec<(usize, T)>, NpaError> {
    let mut out: Vec<(usize, T)> = Vec::new();
    for (w, c) in p.terms() {
        if let Some(k) = index.lookup(w)? {
            match out.iter_mut().find(|e| e.0 == k) {
                Some(e) => e.1 += c,
                None => out.push((k, c)),
            }
        }
    }
    Ok(out)
}

/// Assemble the moment relaxation `max <objective>` over `Γ ⪰ 0`, `Γ[1,1] = 1`
/// and the affine equalities `<fᵢ> = vᵢ`.
pub fn build_moment_sdp<T: Scalar>(
    monomials: &[Monomial],
    objective: &Polynomial<T>,
    constraints: &[(Polynomial<T>, T)],
) -> Result<MomentSdp<T>, NpaError> {
    let n = monomials.len();
    let mut index = MomentIndex::default();
    index.insert(Vec::new());
    let mut gamma = vec![None; n * n];
    for i in 0..n {
        let mut left = monomials[i].word.clone();
        left.reverse();
        for j in i..n {
            let w: Vec<Letter> = left.iter().chain(&monomials[j].word).copied().collect();
            if let Some(k) = moment_key(&w) {
                let id = index.insert(k);
                gamma[i * n + j] = Some(id);
                gamma[j * n + i] = Some(id);
            }
        }
    }
    let m = index.len();
    let mut positions = vec![Vec::new(); m];
    for i in 0..n {
        for j in i..n {
            if let Some(k) = gamma[i * n + j] {
                positions[k].push((i, j));
            }
        }
    }

    let mut obj = vec![T::zero(); m];
    for (k, c) in resolve(&index, objective)? {
        obj[k] += c;
    }

    // Gauss-Jordan on the constraint rows over moments 1..m.
    let k = constraints.len();
    let mut rows: Vec<Vec<T>> = Vec::with_capacity(k);
    let mut offsets = Vec::with_capacity(k);
    for (p, _) in constraints {
        let mut row = vec![T::zero(); m];
        for (id, c) in resolve(&index, p)? {
            row[id] += c;
        }
        offsets.push(row[0]);
        row[0] = T::zero();
        rows.push(row);
    }
    let mut comb: Vec<Vec<T>> =
        (0..k).map(|i| (0..k).map(|j| if i == j { T::one() } else { T::zero() }).collect()).collect();
    let mut pivot_of_row: Vec<Option<usize>> = vec![None; k];
    let tiny = T::lit(1e-12);
    for i in 0..k {
        let (col, val) = rows[i]
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(c, _)| !pivot_of_row.contains(&Some(*c)))
            .fold((0, T::zero()), |best, (c, &v)| if v.abs() > best.1.abs() { (c, v) } else { best });
        if val.abs() <= tiny {
            continue;
        }
        let inv = T::one() / val;
        rows[i].iter_mut().for_each(|x| *x *= inv);
        comb[i].iter_mut().for_each(|x| *x *= inv);
        for r in 0..k {
            if r == i {
                continue;
            }
            let f = rows[r][col];
            if f == T::zero() {
                continue;
            }
            let (ri, rr) = (rows[i].clone(), comb[i].clone());
            rows[r].iter_mut().zip(&ri).for_each(|(a, &b)| *a -= f * b);
            comb[r].iter_mut().zip(&rr).for_each(|(a, &b)| *a -= f * b);
        }
        pivot_of_row[i] = Some(col);
    }
    for (i, p) in pivot_of_row.iter().enumerate() {
        if p.is_none() {
            let resid: T = comb[i]
                .iter()
                .zip(constraints.iter().zip(&offsets))
                .map(|(&c, ((_, v), &o))| c * (*v - o))
                .sum();
            if resid.abs() > T::lit(1e-9) {
                return Err(NpaError::Inconsistent(resid.to_f64_lossy()));
            }
        }
    }
    let pivots: Vec<usize> = pivot_of_row.iter().flatten().copied().collect();
    let free: Vec<usize> = (1..m).filter(|c| !pivots.contains(c)).collect();
    let mut r = Vec::with_capacity(pivots.len());
    let mut g = Vec::with_capacity(pivots.len());
    for (i, p) in pivot_of_row.iter().enumerate() {
        if p.is_some() {
            r.push(free.iter().map(|&f| rows[i][f]).collect::<Vec<T>>());
            g.push(comb[i].clone());
        }
    }

    let reduced_objective: Vec<T> = free
        .iter()
        .enumerate()
        .map(|(fi, &f)| obj[f] - pivots.iter().enumerate().map(|(pi, &p)| obj[p] * r[pi][fi]).sum::<T>())
        .collect();

    let mut constraint_mats = Vec::with_capacity(free.len());
    for (fi, &f) in free.iter().enumerate() {
        let mut a = SparseSym::new();
        for &(i, j) in &positions[f] {
            a.push_unique(0, i, j, T::one());
        }
        for (pi, &p) in pivots.iter().enumerate() {
            let c = r[pi][fi];
            if c != T::zero() {
                for &(i, j) in &positions[p] {
                    a.push_unique(0, i, j, -c);
                }
            }
        }
        constraint_mats.push(a);
    }

    Ok(MomentSdp {
        monomials: monomials.to_vec(),
        index,
        gamma,
        positions,
        objective: obj,
        constraint_offsets: offsets,
        nominal_values: constraints.iter().map(|c| c.1).collect(),
        free,
        pivots,
        r,
        g,
        reduced_objective,
        constraint_mats,
        perturbation: T::lit(1e-8),
    })
}

impl<T: Scalar> MomentSdp<T> {
    pub fn dimension(&self) -> usize {
        self.monomials.len()
    }

    pub fn num_moments(&self) -> usize {
        self.index.len()
    }

    pub fn num_free_moments(&self) -> usize {
        self.free.len()
    }

    pub fn nominal_values(&self) -> &[T] {
        &self.nominal_values
    }

    /// Moment variable at `Γ[i][j]`.
    pub fn gamma_entry(&self, i: usize, j: usize) -> Option<usize> {
        self.gamma[i * self.dimension() + j]
    }

    fn pivot_values(&self, values: &[T]) -> Vec<T> {
        self.g
            .iter()
            .map(|gp| {
                gp.iter()
                    .zip(values.iter().zip(&self.constraint_offsets))
                    .map(|(&c, (&v, &o))| c * (v - o))
                    .sum()
            })
            .collect()
    }

    /// Standard-form SDP for the nominal constraint values.
    pub fn problem(&self) -> SdpProblem<T> {
        self.problem_with_values(&self.nominal_values)
    }

    /// Standard-form SDP `max <−Γ0(v), X> s.t. <F_f, X> = −g_f`; its dual is
    /// the moment LMI `Γ0(v) + Σ t_f F_f ⪰ 0` minimising `−g·t`.
    pub fn problem_with_values(&self, values: &[T]) -> SdpProblem<T> {
        assert_eq!(values.len(), self.nominal_values.len(), "constraint value count");
        let mut p = SdpProblem::new(vec![BlockKind::Dense(self.dimension())], Sense::Maximize);
        let s = self.pivot_values(values);
        let mut c = SparseSym::new();
        for &(i, j) in &self.positions[0] {
            c.push_unique(0, i, j, -T::one());
        }
        for (pi, &pm) in self.pivots.iter().enumerate() {
            if s[pi] != T::zero() {
                for &(i, j) in &self.positions[pm] {
                    c.push_unique(0, i, j, -s[pi]);
                }
            }
        }
        if self.perturbation != T::zero() {
            for i in 0..self.dimension() {
                c.add(0, i, i, -self.perturbation);
            }
        }
        p.objective = c;
        for (a, &gf) in self.constraint_mats.iter().zip(&self.reduced_objective) {
            p.add_constraint(a.clone(), -gf);
        }
        p
    }

    pub fn solve(&self, opts: &SolverOptions<T>) -> Result<NpaSolution<T>, NpaError> {
        self.solve_with_values(&self.nominal_values, opts)
    }

    pub fn solve_with_values(&self, values: &[T], opts: &SolverOptions<T>) -> Result<NpaSolution<T>, NpaError> {
        let problem = self.problem_with_values(values);
        let sol = sdp::solve(&problem, opts)?;
        let s = self.pivot_values(values);

        let mut moments = vec![T::zero(); self.num_moments()];
        moments[0] = T::one();
        for (fi, &f) in self.free.iter().enumerate() {
            moments[f] = sol.y[fi];
        }
        for (pi, &p) in self.pivots.iter().enumerate() {
            moments[p] = s[pi] - self.r[pi].iter().zip(&sol.y).map(|(&a, &b)| a * b).sum::<T>();
        }
        let value: T = self.objective.iter().zip(&moments).map(|(&o, &t)| o * t).sum();

        let certificate = self.certificate(&sol.x.blocks[0]);
        let upper_bound = certificate.evaluate(values);
        Ok(NpaSolution {
            value,
            upper_bound,
            certificate,
            status: sol.status,
            gap: sol.gap,
            iterations: sol.iterations,
            moments,
        })
    }

    /// Affine bound from a (not necessarily exact) primal matrix `X`. With
    /// `X⁺` its PSD part, every quantum assignment `t` with `|t_f| ≤ 1`
    /// satisfies `g·t ≤ <Γ0(v), X⁺> + Σ |<F_f, X⁺> + g_f|`.
    pub fn certificate(&self, x: &Matrix<T>) -> DualCertificate<T> {
        let xp = psd_projection(x);
        let two = T::lit(2.0);
        let mass = |k: usize| -> T {
            self.positions[k]
                .iter()
                .map(|&(i, j)| if i == j { xp[(i, j)] } else { two * xp[(i, j)] })
                .sum()
        };
        let slack: T = self
            .constraint_mats
            .iter()
            .zip(&self.reduced_objective)
            .map(|(a, &gf)| {
                let d: T = a
                    .entries()
                    .iter()
                    .map(|e| if e.row == e.col { e.value * xp[(e.row, e.col)] } else { two * e.value * xp[(e.row, e.col)] })
                    .sum();
                (d + gf).abs()
            })
            .sum();
        // objective = o_0 + Σ_p o_p s_p(v) + g·t, and Γ0(v) = E_0 + Σ_p s_p(v) E_p
        let mut constant = self.objective[0] + mass(0) + slack;
        let mut coeffs = vec![T::zero(); self.nominal_values.len()];
        for (pi, &p) in self.pivots.iter().enumerate() {
            let w = self.objective[p] + mass(p);
            for (i, &gi) in self.g[pi].iter().enumerate() {
                coeffs[i] += w * gi;
                constant -= w * gi * self.constraint_offsets[i];
            }
        }
        DualCertificate { constant, coeffs }
    }
}
