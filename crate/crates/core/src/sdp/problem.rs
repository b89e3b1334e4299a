use crate::linalg::Matrix;
use crate::scalar::Scalar;

use super::SdpError;

/// One diagonal block of the variable matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Dense symmetric block of the given dimension.
    Dense(usize),
    /// Diagonal (linear) block; SDPA writes these with a negative size.
    Diagonal(usize),
}

impl BlockKind {
    pub fn dim(self) -> usize {
        match self {
            BlockKind::Dense(n) | BlockKind::Diagonal(n) => n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    #[default]
    Maximize,
    Minimize,
}

/// Single upper-triangle entry of a sparse symmetric block matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entry<T> {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: T,
}

/// Sparse symmetric block-diagonal matrix, stored as upper-triangle entries.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SparseSym<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> SparseSym<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    /// Accumulate `value` at `(row, col)` and its mirror.
    pub fn add(&mut self, block: usize, row: usize, col: usize, value: T) {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.block == block && e.row == row && e.col == col)
        {
            e.value += value;
        } else {
            self.entries.push(Entry { block, row, col, value });
        }
    }

    /// Append without searching for duplicates; caller guarantees uniqueness.
    pub fn push_unique(&mut self, block: usize, row: usize, col: usize, value: T) {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        self.entries.push(Entry { block, row, col, value });
    }

    pub fn with_entry(mut self, block: usize, row: usize, col: usize, value: T) -> Self {
        self.add(block, row, col, value);
        self
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|e| e.value == T::zero())
    }

    /// Drop explicit zeros and sort entries by position.
    pub fn canonicalize(&mut self) {
        self.entries.retain(|e| e.value != T::zero());
        self.entries.sort_by_key(|e| (e.block, e.row, e.col));
    }

    /// Frobenius inner product with a dense block matrix.
    pub fn dot(&self, x: &BlockMatrix<T>) -> T {
        let two = T::lit(2.0);
        self.entries
            .iter()
            .map(|e| {
                let v = e.value * x.blocks[e.block][(e.row, e.col)];
                if e.row == e.col {
                    v
                } else {
                    two * v
                }
            })
            .sum()
    }

    /// `x += s * self`.
    pub fn add_to(&self, x: &mut BlockMatrix<T>, s: T) {
        for e in &self.entries {
            let b = &mut x.blocks[e.block];
            b[(e.row, e.col)] += s * e.value;
            if e.row != e.col {
                b[(e.col, e.row)] += s * e.value;
            }
        }
    }

    pub fn to_dense(&self, blocks: &[BlockKind]) -> BlockMatrix<T> {
        let mut m = BlockMatrix::zeros(blocks);
        self.add_to(&mut m, T::one());
        m
    }

    pub fn max_abs(&self) -> T {
        self.entries.iter().fold(T::zero(), |m, e| m.max(e.value.abs()))
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| Entry { value: e.value * s, ..*e })
                .collect(),
        }
    }
}

/// Dense block-diagonal symmetric matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix<T> {
    pub blocks: Vec<Matrix<T>>,
}

impl<T: Scalar> BlockMatrix<T> {
    pub fn zeros(kinds: &[BlockKind]) -> Self {
        Self { blocks: kinds.iter().map(|k| Matrix::zeros(k.dim(), k.dim())).collect() }
    }

    pub fn scaled_identity(kinds: &[BlockKind], s: T) -> Self {
        Self { blocks: kinds.iter().map(|k| Matrix::scaled_identity(k.dim(), s)).collect() }
    }

    pub fn dot(&self, other: &Self) -> T {
        self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_scaled(s, b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for b in &mut self.blocks {
            b.scale(s);
        }
    }

    pub fn max_abs(&self) -> T {
        self.blocks.iter().fold(T::zero(), |m, b| m.max(b.max_abs()))
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.rows()).sum()
    }

    pub fn min_eigenvalue(&self) -> T {
        self.blocks
            .iter()
            .filter(|b| b.rows() > 0)
            .map(crate::linalg::min_eigenvalue)
            .fold(T::infinity(), |a, b| a.min(b))
    }

    pub fn trace(&self) -> T {
        self.blocks.iter().map(|b| b.trace()).sum()
    }
}

/// Semidefinite program in standard form:
///
/// ```text
/// maximize (or minimize)  <C, X>
/// subject to              <A_i, X> = b_i,  i = 1..k
///                         X ⪰ 0 (block diagonal)
/// ```
///
/// The associated dual (for `Maximize`) is `min bᵀy s.t. Σ yᵢAᵢ − C ⪰ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SdpProblem<T> {
    pub blocks: Vec<BlockKind>,
    pub objective: SparseSym<T>,
    pub constraints: Vec<SparseSym<T>>,
    pub rhs: Vec<T>,
    pub sense: Sense,
}

impl<T: Scalar> SdpProblem<T> {
    pub fn new(blocks: Vec<BlockKind>, sense: Sense) -> Self {
        Self { blocks, objective: SparseSym::new(), constraints: Vec::new(), rhs: Vec::new(), sense }
    }

    pub fn add_constraint(&mut self, a: SparseSym<T>, b: T) -> usize {
        self.constraints.push(a);
        self.rhs.push(b);
        self.constraints.len() - 1
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim()).sum()
    }

    /// `A(X)`: the vector of constraint inner products.
    pub fn apply(&self, x: &BlockMatrix<T>) -> Vec<T> {
        self.constraints.iter().map(|a| a.dot(x)).collect()
    }

    /// `A*(y) = Σ yᵢ Aᵢ` as a dense block matrix.
    pub fn adjoint(&self, y: &[T]) -> BlockMatrix<T> {
        let mut out = BlockMatrix::zeros(&self.blocks);
        for (a, &yi) in self.constraints.iter().zip(y) {
            if yi != T::zero() {
                a.add_to(&mut out, yi);
            }
        }
        out
    }

    /// Check dimensions, index bounds and block kinds.
    pub fn validate(&self) -> Result<(), SdpError> {
        if self.constraints.is_empty() {
            return Err(SdpError::Invalid("at least one constraint is required".into()));
        }
        if self.constraints.len() != self.rhs.len() {
            return Err(SdpError::Invalid(format!(
                "{} constraint matrices but {} right-hand sides",
                self.constraints.len(),
                self.rhs.len()
            )));
        }
        let check = |m: &SparseSym<T>, what: &str| -> Result<(), SdpError> {
            for e in m.entries() {
                let kind = self.blocks.get(e.block).ok_or_else(|| {
                    SdpError::Invalid(format!("{what}: block {} out of range", e.block))
                })?;
                if e.row >= kind.dim() || e.col >= kind.dim() {
                    return Err(SdpError::Invalid(format!(
                        "{what}: entry ({}, {}) outside block {} of size {}",
                        e.row,
                        e.col,
                        e.block,
                        kind.dim()
                    )));
                }
                if matches!(kind, BlockKind::Diagonal(_)) && e.row != e.col {
                    return Err(SdpError::Invalid(format!(
                        "{what}: off-diagonal entry in diagonal block {}",
                        e.block
                    )));
                }
                if !e.value.is_finite() {
                    return Err(SdpError::Invalid(format!("{what}: non-finite entry")));
                }
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (i, a) in self.constraints.iter().enumerate() {
            check(a, &format!("constraint {i}"))?;
        }
        if self.rhs.iter().any(|b| !b.is_finite()) {
            return Err(SdpError::Invalid("non-finite right-hand side".into()));
        }
        Ok(())
    }
}
