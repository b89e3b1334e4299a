//! Infeasible-start primal-dual interior-point method (HKM direction with a
//! Mehrotra predictor-corrector), dense Cholesky on the Schur complement.

use std::collections::HashMap;

use crate::linalg::{Cholesky, Matrix, SymmetricEigen};
use crate::scalar::Scalar;

use super::problem::{BlockMatrix, SdpProblem, Sense, SparseSym};
use super::SdpError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions<T> {
    pub gap_tol: T,
    pub feas_tol: T,
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: T,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            gap_tol: T::lit(1e-8),
            feas_tol: T::lit(1e-8),
            max_iter: 200,
            step_fraction: T::lit(0.98),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasiblePrimal,
    InfeasibleDual,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasiblePrimal => "infeasible_primal",
            SolveStatus::InfeasibleDual => "infeasible_dual",
            SolveStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

/// Objective values and infeasibilities of one iterate, in the problem's own sense.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterateInfo<T> {
    pub primal_objective: T,
    pub dual_objective: T,
    pub primal_infeasibility: T,
    pub dual_infeasibility: T,
    pub mu: T,
    /// Primal and dual step lengths taken from this iterate (zero for the last one).
    pub step: (T, T),
}

#[derive(Clone, Debug)]
pub struct SdpSolution<T> {
    pub x: BlockMatrix<T>,
    pub y: Vec<T>,
    pub z: BlockMatrix<T>,
    pub primal_objective: T,
    pub dual_objective: T,
    /// `|primal − dual|`.
    pub gap: T,
    pub iterations: usize,
    pub status: SolveStatus,
    pub history: Vec<IterateInfo<T>>,
}

/// Independently recomputed optimality measures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Residuals<T> {
    /// `‖A(X) − b‖∞`
    pub primal_feas: T,
    /// `‖Z − (A*(y) − C)‖∞` (sign of `C − A*(y)` for minimization)
    pub dual_feas: T,
    /// `|<C, X> − bᵀy|`
    pub gap: T,
}

/// Recompute feasibility residuals and duality gap straight from the definitions.
pub fn residuals<T: Scalar>(p: &SdpProblem<T>, sol: &SdpSolution<T>) -> Residuals<T> {
    let ax = p.apply(&sol.x);
    let primal_feas = ax
        .iter()
        .zip(&p.rhs)
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
    let mut expected_z = p.adjoint(&sol.y);
    match p.sense {
        Sense::Maximize => p.objective.add_to(&mut expected_z, -T::one()),
        Sense::Minimize => {
            expected_z.scale(-T::one());
            p.objective.add_to(&mut expected_z, T::one());
        }
    }
    let mut diff = sol.z.clone();
    diff.add_scaled(-T::one(), &expected_z);
    let pobj = p.objective.dot(&sol.x);
    let dobj: T = p.rhs.iter().zip(&sol.y).map(|(&b, &y)| b * y).sum();
    Residuals { primal_feas, dual_feas: diff.max_abs(), gap: (pobj - dobj).abs() }
}

/// Constraint matrix split per block with the set of rows it touches.
struct BlockSlice<T> {
    block: usize,
    entries: Vec<(usize, usize, T)>,
    rows: Vec<usize>,
}

fn slice_constraint<T: Scalar>(a: &SparseSym<T>) -> Vec<BlockSlice<T>> {
    let mut out: Vec<BlockSlice<T>> = Vec::new();
    for e in a.entries() {
        if e.value == T::zero() {
            continue;
        }
        let pos = match out.iter().position(|s| s.block == e.block) {
            Some(p) => p,
            None => {
                out.push(BlockSlice { block: e.block, entries: Vec::new(), rows: Vec::new() });
                out.len() - 1
            }
        };
        let s = &mut out[pos];
        s.entries.push((e.row, e.col, e.value));
        for r in [e.row, e.col] {
            if !s.rows.contains(&r) {
                s.rows.push(r);
            }
        }
    }
    out
}

#[inline]
fn trace_with<T: Scalar>(entries: &[(usize, usize, T)], b: &Matrix<T>) -> T {
    let mut s = T::zero();
    for &(p, q, v) in entries {
        if p == q {
            s += v * b[(p, p)];
        } else {
            s += v * (b[(p, q)] + b[(q, p)]);
        }
    }
    s
}

struct Workspace<'a, T> {
    prob: &'a SdpProblem<T>,
    c: SparseSym<T>,
    b: Vec<T>,
    slices: Vec<Vec<BlockSlice<T>>>,
}

impl<'a, T: Scalar> Workspace<'a, T> {
    fn new(prob: &'a SdpProblem<T>) -> Self {
        let c = match prob.sense {
            Sense::Maximize => prob.objective.clone(),
            Sense::Minimize => prob.objective.scaled(-T::one()),
        };
        let slices = prob.constraints.iter().map(slice_constraint).collect();
        Self { prob, c, b: prob.rhs.clone(), slices }
    }

    fn apply(&self, x: &BlockMatrix<T>) -> Vec<T> {
        self.slices
            .iter()
            .map(|sl| sl.iter().map(|s| trace_with(&s.entries, &x.blocks[s.block])).sum())
            .collect()
    }

    /// `tr(Aᵢ G)` for a possibly non-symmetric `G`.
    fn apply_general(&self, g: &BlockMatrix<T>) -> Vec<T> {
        self.apply(g)
    }

    /// `Rd = A*(y) − C − Z`.
    fn dual_residual(&self, y: &[T], z: &BlockMatrix<T>) -> BlockMatrix<T> {
        let mut rd = self.prob.adjoint(y);
        self.c.add_to(&mut rd, -T::one());
        rd.add_scaled(-T::one(), z);
        rd
    }

    /// Gram matrix `<Aᵢ, Aⱼ>` of the constraint matrices.
    fn gram(&self) -> Matrix<T> {
        let m = self.slices.len();
        let mut out = Matrix::zeros(m, m);
        let mut owner: HashMap<(usize, usize, usize), Vec<(usize, T)>> = HashMap::new();
        for (i, sl) in self.slices.iter().enumerate() {
            for s in sl {
                for &(p, q, v) in &s.entries {
                    owner.entry((s.block, p, q)).or_default().push((i, v));
                }
            }
        }
        let mut keys: Vec<_> = owner.keys().copied().collect();
        keys.sort_unstable();
        for k in keys {
            let w = if k.1 == k.2 { T::one() } else { T::lit(2.0) };
            let list = &owner[&k];
            for &(i, vi) in list {
                for &(j, vj) in list {
                    out[(i, j)] += w * vi * vj;
                }
            }
        }
        out
    }

    /// Schur complement `M_ij = tr(Aᵢ X Aⱼ Z⁻¹)`.
    fn schur(&self, x: &BlockMatrix<T>, zinv: &BlockMatrix<T>) -> Matrix<T> {
        let m = self.slices.len();
        let mut out = Matrix::zeros(m, m);
        let mut bufs: Vec<Matrix<T>> = x.blocks.iter().map(|b| Matrix::zeros(b.rows(), b.cols())).collect();
        let mut wrow: Vec<T> = Vec::new();
        for i in 0..m {
            let mut used = vec![false; bufs.len()];
            for s in &self.slices[i] {
                let bl = s.block;
                let n = x.blocks[bl].rows();
                let zi = &zinv.blocks[bl];
                let xb = &x.blocks[bl];
                let buf = &mut bufs[bl];
                buf.as_mut_slice().fill(T::zero());
                used[bl] = true;
                // B = X (Aᵢ Z⁻¹): row r of Aᵢ Z⁻¹ is Σ over entries touching r.
                wrow.resize(n, T::zero());
                for &r in &s.rows {
                    for w in wrow.iter_mut() {
                        *w = T::zero();
                    }
                    for &(p, q, v) in &s.entries {
                        if p == r {
                            for (w, &zz) in wrow.iter_mut().zip(zi.row(q)) {
                                *w += v * zz;
                            }
                        }
                        if q == r && p != q {
                            for (w, &zz) in wrow.iter_mut().zip(zi.row(p)) {
                                *w += v * zz;
                            }
                        }
                    }
                    for srow in 0..n {
                        let xs = xb[(srow, r)];
                        if xs == T::zero() {
                            continue;
                        }
                        for (o, &w) in buf.row_mut(srow).iter_mut().zip(wrow.iter()) {
                            *o += xs * w;
                        }
                    }
                }
            }
            for j in i..m {
                let mut acc = T::zero();
                for s in &self.slices[j] {
                    if used[s.block] {
                        acc += trace_with(&s.entries, &bufs[s.block]);
                    }
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }
}

fn block_product<T: Scalar>(a: &BlockMatrix<T>, b: &BlockMatrix<T>) -> BlockMatrix<T> {
    BlockMatrix { blocks: a.blocks.iter().zip(&b.blocks).map(|(x, y)| x.matmul(y)).collect() }
}

fn block_inverse<T: Scalar>(a: &BlockMatrix<T>) -> Result<BlockMatrix<T>, SdpError> {
    let mut blocks = Vec::with_capacity(a.blocks.len());
    for b in &a.blocks {
        if b.rows() == 0 {
            blocks.push(b.clone());
            continue;
        }
        let ch = Cholesky::new(b).map_err(|_| SdpError::Numerical("iterate left the cone".into()))?;
        blocks.push(ch.inverse());
    }
    Ok(BlockMatrix { blocks })
}

/// Largest `α` with `X + α ΔX ⪰ 0` (infinite when `ΔX ⪰ 0`).
fn max_step<T: Scalar>(x: &BlockMatrix<T>, dx: &BlockMatrix<T>) -> Result<T, SdpError> {
    let mut alpha = T::infinity();
    for (xb, db) in x.blocks.iter().zip(&dx.blocks) {
        if xb.rows() == 0 {
            continue;
        }
        let ch = Cholesky::new(xb).map_err(|_| SdpError::Numerical("iterate left the cone".into()))?;
        let li = ch.lower_inverse();
        let s = li.matmul(db).matmul(&li.transpose());
        let lmin = SymmetricEigen::new(&s).min();
        if lmin < T::zero() {
            alpha = alpha.min(-T::one() / lmin);
        }
    }
    Ok(alpha)
}

fn sym<T: Scalar>(mut m: BlockMatrix<T>) -> BlockMatrix<T> {
    for b in &mut m.blocks {
        b.symmetrize();
    }
    m
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

fn factor_schur<T: Scalar>(m: &Matrix<T>) -> Option<Cholesky<T>> {
    if let Ok(ch) = Cholesky::new(m) {
        return Some(ch);
    }
    let scale = (0..m.rows()).fold(T::zero(), |a, i| a.max(m[(i, i)].abs())).max(T::min_positive_value());
    for exp in [-14.0, -12.0, -10.0, -8.0] {
        let mut reg = m.clone();
        let d = scale * T::lit(10f64.powf(exp));
        for i in 0..reg.rows() {
            reg[(i, i)] += d;
        }
        if let Ok(ch) = Cholesky::new(&reg) {
            return Some(ch);
        }
    }
    None
}

/// Solve the SDP. Infeasibility and numerical breakdown are reported through
/// `status`; `Err` is returned only for malformed problems.
pub fn solve<T: Scalar>(p: &SdpProblem<T>, opts: &SolverOptions<T>) -> Result<SdpSolution<T>, SdpError> {
    p.validate()?;
    let ws = Workspace::new(p);
    let m = p.num_constraints();
    let ntot = T::from_usize_lossy(p.total_dim().max(1));
    let bmax = inf_norm(&ws.b);
    let cmax = ws.c.max_abs();
    let tau = T::one() + bmax;

    // Used to restore `A(ΔX) = rp` exactly after each direction computation;
    // skipped when the constraints are linearly dependent.
    let gram = Cholesky::new(&ws.gram()).ok();
    let mut x = BlockMatrix::scaled_identity(&p.blocks, tau);
    let mut z = BlockMatrix::scaled_identity(&p.blocks, tau);
    let mut y = vec![T::zero(); m];
    let mut history = Vec::new();
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;

    for iter in 0..=opts.max_iter {
        iterations = iter;
        let ax = ws.apply(&x);
        let rp: Vec<T> = ws.b.iter().zip(&ax).map(|(&b, &a)| b - a).collect();
        let rd = ws.dual_residual(&y, &z);
        let pobj = ws.c.dot(&x);
        let dobj: T = ws.b.iter().zip(&y).map(|(&b, &yy)| b * yy).sum();
        let pinf = inf_norm(&rp);
        let dinf = rd.max_abs();
        let mu = x.dot(&z) / ntot;
        history.push(oriented_info(p.sense, pobj, dobj, pinf, dinf, mu));

        // absolute gap; implies the relative bound gap_tol·(1 + |primal|)
        if (pobj - dobj).abs() <= opts.gap_tol
            && pinf <= opts.feas_tol
            && dinf <= opts.feas_tol
        {
            status = SolveStatus::Optimal;
            break;
        }
        // Rays: a diverging dual objective certifies primal infeasibility and
        // a diverging primal objective certifies dual infeasibility.
        if dobj < T::zero() && (dinf + cmax) < opts.feas_tol * (-dobj) {
            status = SolveStatus::InfeasiblePrimal;
            break;
        }
        if pobj > T::zero() && (pinf + bmax) < opts.feas_tol * pobj {
            status = SolveStatus::InfeasibleDual;
            break;
        }
        if iter == opts.max_iter {
            break;
        }

        let zinv = match block_inverse(&z) {
            Ok(v) => v,
            Err(_) => {
                status = SolveStatus::NumericalFailure;
                break;
            }
        };
        let schur = ws.schur(&x, &zinv);
        let Some(chol) = factor_schur(&schur) else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let x_rd_zinv = block_product(&block_product(&x, &rd), &zinv);

        let direction = |sigma_mu: T, corr: Option<&BlockMatrix<T>>| {
            // rhs = A(σμ Z⁻¹ − X Rd Z⁻¹ − corr) − b
            let mut g = zinv.clone();
            g.scale(sigma_mu);
            g.add_scaled(-T::one(), &x_rd_zinv);
            if let Some(c) = corr {
                g.add_scaled(-T::one(), c);
            }
            let ag = ws.apply_general(&g);
            let rhs: Vec<T> = ag.iter().zip(&ws.b).map(|(&a, &b)| a - b).collect();
            let mut dy = chol.solve(&rhs);
            // iterative refinement against the unregularised Schur matrix
            for _ in 0..2 {
                let md = schur.mul_vec(&dy);
                let r: Vec<T> = rhs.iter().zip(&md).map(|(&a, &b)| a - b).collect();
                let corr = chol.solve(&r);
                dy.iter_mut().zip(&corr).for_each(|(d, &c)| *d += c);
            }
            let mut dz = p.adjoint(&dy);
            dz.add_scaled(T::one(), &rd);
            // ΔX = σμ Z⁻¹ − X − X ΔZ Z⁻¹ − corr, symmetrized
            let mut dx = g.clone();
            dx.add_scaled(T::one(), &x_rd_zinv);
            dx.add_scaled(-T::one(), &x);
            let xdz = block_product(&block_product(&x, &dz), &zinv);
            dx.add_scaled(-T::one(), &xdz);
            let mut dx = sym(dx);
            if let Some(gc) = &gram {
                let adx = ws.apply(&dx);
                let e: Vec<T> = rp.iter().zip(&adx).map(|(&r, &a)| r - a).collect();
                let w = gc.solve(&e);
                dx.add_scaled(T::one(), &p.adjoint(&w));
            }
            (dx, dy, sym(dz))
        };

        // predictor
        let (dx_a, _dy_a, dz_a) = direction(T::zero(), None);
        let (ap, ad) = match (max_step(&x, &dx_a), max_step(&z, &dz_a)) {
            (Ok(a), Ok(b)) => (a.min(T::one()), b.min(T::one())),
            _ => {
                status = SolveStatus::NumericalFailure;
                break;
            }
        };
        let mut xa = x.clone();
        xa.add_scaled(ap, &dx_a);
        let mut za = z.clone();
        za.add_scaled(ad, &dz_a);
        let mu_aff = xa.dot(&za) / ntot;
        let ratio = (mu_aff / mu).max(T::zero()).min(T::one());
        let sigma = ratio * ratio * ratio;

        // corrector
        let corr = block_product(&block_product(&dx_a, &dz_a), &zinv);
        let (dx, dy, dz) = direction(sigma * mu, Some(&corr));
        let (ap, ad) = match (max_step(&x, &dx), max_step(&z, &dz)) {
            (Ok(a), Ok(b)) => (
                (opts.step_fraction * a).min(T::one()),
                (opts.step_fraction * b).min(T::one()),
            ),
            _ => {
                status = SolveStatus::NumericalFailure;
                break;
            }
        };
        if ap < T::lit(1e-10) && ad < T::lit(1e-10) {
            status = SolveStatus::NumericalFailure;
            break;
        }
        if let Some(h) = history.last_mut() {
            h.step = (ap, ad);
        }
        x.add_scaled(ap, &dx);
        z.add_scaled(ad, &dz);
        for (yi, di) in y.iter_mut().zip(&dy) {
            *yi += ad * *di;
        }
    }

    let pobj = ws.c.dot(&x);
    let dobj: T = ws.b.iter().zip(&y).map(|(&b, &yy)| b * yy).sum();
    let (primal_objective, dual_objective, y) = match p.sense {
        Sense::Maximize => (pobj, dobj, y),
        Sense::Minimize => (-pobj, -dobj, y.into_iter().map(|v| -v).collect()),
    };
    Ok(SdpSolution {
        x,
        y,
        z,
        primal_objective,
        dual_objective,
        gap: (primal_objective - dual_objective).abs(),
        iterations,
        status,
        history,
    })
}

fn oriented_info<T: Scalar>(sense: Sense, pobj: T, dobj: T, pinf: T, dinf: T, mu: T) -> IterateInfo<T> {
    let (p, d) = match sense {
        Sense::Maximize => (pobj, dobj),
        Sense::Minimize => (-pobj, -dobj),
    };
    IterateInfo {
        primal_objective: p,
        dual_objective: d,
        primal_infeasibility: pinf,
        dual_infeasibility: dinf,
        mu,
        step: (T::zero(), T::zero()),
    }
}
