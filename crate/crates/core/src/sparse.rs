//! Compressed sparse row matrices, triplet assembly and direct solves.
//!
//! Factorizations are delegated to faer's sparse LU with partial pivoting.
//! A CSR matrix shares its arrays with the CSC layout of its transpose, so the
//! factorization is done on `A^T` and systems are solved with the transposed
//! factors; no copy of the pattern is needed.

use std::io::Write;
use std::path::Path;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut};

use crate::error::{Error, Result};
use crate::fem::Constraints;

#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push((row, col, value));
    }

    /// Appends every entry of `m`, scaled and shifted by a block offset.
    pub fn push_block(&mut self, m: &CsrMatrix, row_offset: usize, col_offset: usize, scale: f64) {
        for i in 0..m.n_rows {
            for (j, v) in m.row(i) {
                self.push(row_offset + i, col_offset + j, scale * v);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    /// Sorted and unique within each row.
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// Builds a CSR matrix, summing duplicates. Entries are bucketed by row and
/// stably sorted by column, so the layout depends only on the set of positions.
pub fn from_triplets(t: &Triplets) -> Result<CsrMatrix> {
    for &(row, col, _) in &t.entries {
        if row >= t.n_rows || col >= t.n_cols {
            return Err(Error::IndexOutOfBounds {
                row,
                col,
                n_rows: t.n_rows,
                n_cols: t.n_cols,
            });
        }
    }

    let mut counts = vec![0usize; t.n_rows + 1];
    for &(row, _, _) in &t.entries {
        counts[row + 1] += 1;
    }
    for i in 0..t.n_rows {
        counts[i + 1] += counts[i];
    }
    let mut next = counts.clone();
    let mut bucket = vec![(0usize, 0.0f64); t.entries.len()];
    for &(row, col, v) in &t.entries {
        bucket[next[row]] = (col, v);
        next[row] += 1;
    }

    let mut row_ptr = Vec::with_capacity(t.n_rows + 1);
    let mut col_idx = Vec::with_capacity(t.entries.len());
    let mut values = Vec::with_capacity(t.entries.len());
    row_ptr.push(0);
    for i in 0..t.n_rows {
        let seg = &mut bucket[counts[i]..counts[i + 1]];
        seg.sort_by_key(|&(c, _)| c);
        let mut k = 0;
        while k < seg.len() {
            let col = seg[k].0;
            let mut sum = 0.0;
            while k < seg.len() && seg[k].0 == col {
                sum += seg[k].1;
                k += 1;
            }
            col_idx.push(col);
            values.push(sum);
        }
        row_ptr.push(col_idx.len());
    }

    Ok(CsrMatrix {
        n_rows: t.n_rows,
        n_cols: t.n_cols,
        row_ptr,
        col_idx,
        values,
    })
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    /// Index into `values` of entry `(i, j)`, if structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        let cols = &self.col_idx[start..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.n_cols || y.len() != self.n_rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix, x of length {}, y of length {}",
                self.n_rows,
                self.n_cols,
                x.len(),
                y.len()
            )));
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
        Ok(())
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let ay = self.spmv(y)?;
        Ok(dot(x, &ay))
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.col_idx[k];
                col_idx[next[c]] = i;
                values[next[c]] = self.values[k];
                next[c] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Linear combination `sum_k c_k A_k` of equally sized matrices.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix> {
        let (n_rows, n_cols) = match terms.first() {
            Some((_, m)) => (m.n_rows, m.n_cols),
            None => return Err(Error::InvalidInput("empty linear combination".into())),
        };
        let cap = terms.iter().map(|(_, m)| m.nnz()).sum();
        let mut t = Triplets::with_capacity(n_rows, n_cols, cap);
        for &(c, m) in terms {
            if m.n_rows != n_rows || m.n_cols != n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "{}x{} vs {}x{}",
                    m.n_rows, m.n_cols, n_rows, n_cols
                )));
            }
            t.push_block(m, 0, 0, c);
        }
        from_triplets(&t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the matrix in MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "%%MatrixMarket matrix coordinate real general").map_err(io)?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz()).map_err(io)?;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// ---------------------------------------------------------------------------
// Boundary conditions

/// Replaces constrained rows by identity rows with the prescribed value on the
/// right-hand side, and eliminates constrained columns into the right-hand
/// side. The sparsity pattern is left untouched (eliminated entries become
/// explicit zeros), so a symbolic factorization stays reusable.
pub fn apply_dirichlet(a: &mut CsrMatrix, rhs: &mut [f64], constraints: &Constraints) -> Result<()> {
    if a.n_rows != a.n_cols || rhs.len() != a.n_rows {
        return Err(Error::DimensionMismatch(format!(
            "Dirichlet application on {}x{} with rhs {}",
            a.n_rows,
            a.n_cols,
            rhs.len()
        )));
    }
    if constraints.is_empty() {
        return Ok(());
    }
    let mut prescribed: Vec<Option<f64>> = vec![None; a.n_rows];
    for (&d, &v) in constraints.dofs.iter().zip(&constraints.values) {
        prescribed[d] = Some(v);
    }
    for i in 0..a.n_rows {
        let range = a.row_ptr[i]..a.row_ptr[i + 1];
        if let Some(g) = prescribed[i] {
            let mut has_diag = false;
            for k in range {
                if a.col_idx[k] == i {
                    a.values[k] = 1.0;
                    has_diag = true;
                } else {
                    a.values[k] = 0.0;
                }
            }
            if !has_diag {
                return Err(Error::InvalidInput(format!(
                    "constrained row {i} has no structural diagonal"
                )));
            }
            rhs[i] = g;
        } else {
            for k in range {
                if let Some(g) = prescribed[a.col_idx[k]] {
                    rhs[i] -= a.values[k] * g;
                    a.values[k] = 0.0;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Direct solves

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Required relative residual `||Ax - b|| / ||b||`.
    pub rel_tol: f64,
    /// Iterative refinement sweeps allowed after the first solve.
    pub max_refinements: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_refinements: 3,
        }
    }
}

/// Sparse LU that keeps the symbolic analysis of the last pattern it saw, so
/// repeated factorizations of matrices sharing a pattern skip the ordering.
#[derive(Default)]
pub struct LuSolver {
    symbolic: Option<(Vec<usize>, Vec<usize>, SymbolicLu<usize>)>,
    pub options: SolveOptions,
}

pub struct Factorization<'a> {
    matrix: &'a CsrMatrix,
    lu: Lu<usize, f64>,
    options: SolveOptions,
}

impl std::fmt::Debug for LuSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LuSolver")
            .field("has_symbolic", &self.symbolic.is_some())
            .field("options", &self.options)
            .finish()
    }
}

impl LuSolver {
    pub fn new(options: SolveOptions) -> Self {
        Self {
            symbolic: None,
            options,
        }
    }

    pub fn factorize<'a>(&mut self, a: &'a CsrMatrix) -> Result<Factorization<'a>> {
        if a.n_rows != a.n_cols {
            return Err(Error::DimensionMismatch(format!(
                "LU of non-square {}x{} matrix",
                a.n_rows, a.n_cols
            )));
        }
        let n = a.n_rows;
        // the CSR arrays of A are the CSC arrays of A^T
        let pattern = SymbolicSparseColMatRef::new_checked(n, n, &a.row_ptr, None, &a.col_idx);
        let reuse = self.pattern_matches(a);
        if !reuse {
            let symbolic = SymbolicLu::try_new(pattern)
                .map_err(|e| Error::Singular(format!("symbolic LU failed: {e:?}")))?;
            self.symbolic = Some((a.row_ptr.clone(), a.col_idx.clone(), symbolic));
        }
        let symbolic = self.symbolic.as_ref().map(|(_, _, s)| s.clone()).expect("symbolic set");
        let lu = Lu::try_new_with_symbolic(symbolic, SparseColMatRef::new(pattern, &a.values))
            .map_err(|e| Error::Singular(format!("LU factorization failed: {e:?}")))?;
        Ok(Factorization {
            matrix: a,
            lu,
            options: self.options,
        })
    }

    pub fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
        self.factorize(a)?.solve(b)
    }

    fn pattern_matches(&self, a: &CsrMatrix) -> bool {
        matches!(&self.symbolic, Some((rp, ci, _)) if *rp == a.row_ptr && *ci == a.col_idx)
    }
}

fn raw_solve(lu: &Lu<usize, f64>, rhs: &mut [f64]) {
    let n = rhs.len();
    let mat = MatMut::from_column_major_slice_mut(rhs, n, 1);
    lu.solve_transpose_in_place_with_conj(Conj::No, mat);
}

fn check_rhs(a: &CsrMatrix, b: &[f64]) -> Result<()> {
    if b.len() != a.n_rows {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for {}x{} system",
            b.len(),
            a.n_rows,
            a.n_cols
        )));
    }
    Ok(())
}

/// Outcome of iterative refinement preconditioned by an LU factorization.
enum Refined {
    Converged(Vec<f64>),
    /// Final relative residual, or infinity for non-finite iterates.
    Failed(f64),
}

/// Iterative refinement `x += LU^{-1} (b - A x)` until the relative residual
/// meets `tol`. With `min_contraction` set, stops as soon as a sweep reduces
/// the residual by less than that factor.
fn refine(
    lu: &Lu<usize, f64>,
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_sweeps: usize,
    min_contraction: Option<f64>,
) -> Refined {
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Refined::Converged(vec![0.0; b.len()]);
    }
    let mut x = b.to_vec();
    raw_solve(lu, &mut x);
    let mut r = vec![0.0; b.len()];
    let mut prev = f64::INFINITY;
    for sweep in 0..=max_sweeps {
        if x.iter().any(|v| !v.is_finite()) {
            return Refined::Failed(f64::INFINITY);
        }
        a.spmv_into(&x, &mut r).expect("square system");
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let rel = norm2(&r) / bnorm;
        if rel <= tol {
            return Refined::Converged(x);
        }
        let stalled = min_contraction.is_some_and(|c| rel > c * prev);
        if sweep == max_sweeps || stalled || !rel.is_finite() {
            return Refined::Failed(rel);
        }
        prev = rel;
        raw_solve(lu, &mut r);
        for (xi, di) in x.iter_mut().zip(&r) {
            *xi += di;
        }
    }
    unreachable!("loop returns on the last sweep")
}

impl Factorization<'_> {
    /// Solves `A x = b`, refining until the relative residual meets the
    /// tolerance. Returns `x = 0` for `b = 0`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_rhs(self.matrix, b)?;
        match refine(&self.lu, self.matrix, b, self.options.rel_tol, self.options.max_refinements, None) {
            Refined::Converged(x) => Ok(x),
            Refined::Failed(rel) if rel.is_finite() => Err(Error::Singular(format!(
                "relative residual {rel:.3e} above tolerance {:.1e}",
                self.options.rel_tol
            ))),
            Refined::Failed(_) => Err(Error::Singular("non-finite solution from LU".into())),
        }
    }
}

/// Solver for a sequence of matrices sharing one pattern whose values drift
/// slowly (time stepping). The last numeric factorization preconditions
/// iterative refinement against each new matrix; a fresh factorization is
/// computed only when refinement stalls or fails.
pub struct ReusingSolver {
    lu: LuSolver,
    current: Option<Lu<usize, f64>>,
    /// Refinement sweeps tried with a stale factorization.
    pub max_stale_sweeps: usize,
    /// Required residual reduction per sweep with a stale factorization.
    pub min_contraction: f64,
    pub factorizations: usize,
    pub solves: usize,
}

impl std::fmt::Debug for ReusingSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReusingSolver")
            .field("factorizations", &self.factorizations)
            .field("solves", &self.solves)
            .finish()
    }
}

impl ReusingSolver {
    pub fn new(options: SolveOptions) -> Self {
        Self {
            lu: LuSolver::new(options),
            current: None,
            max_stale_sweeps: 20,
            min_contraction: 0.3,
            factorizations: 0,
            solves: 0,
        }
    }

    /// Drops the stored factorization.
    pub fn invalidate(&mut self) {
        self.current = None;
    }

    pub fn solve(&mut self, a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
        check_rhs(a, b)?;
        self.solves += 1;
        let tol = self.lu.options.rel_tol;
        if let Some(lu) = &self.current {
            if self.lu.pattern_matches(a) {
                if let Refined::Converged(x) = refine(lu, a, b, tol, self.max_stale_sweeps, Some(self.min_contraction)) {
                    return Ok(x);
                }
            }
        }
        self.current = None;
        let fac = self.lu.factorize(a)?;
        self.factorizations += 1;
        let x = fac.solve(b)?;
        self.current = Some(fac.lu);
        Ok(x)
    }
}

/// One-shot direct solve of `A x = b`.
pub fn solve(a: &CsrMatrix, b: &[f64], options: SolveOptions) -> Result<Vec<f64>> {
    LuSolver::new(options).solve(a, b)
}

/// Appends the constraint row `r` and column `r^T` to `A`.
pub fn border(a: &CsrMatrix, r: &[f64]) -> Result<CsrMatrix> {
    if a.n_rows != a.n_cols || r.len() != a.n_cols {
        return Err(Error::DimensionMismatch(format!(
            "border of length {} for {}x{} matrix",
            r.len(),
            a.n_rows,
            a.n_cols
        )));
    }
    let n = a.n_rows;
    let mut t = Triplets::with_capacity(n + 1, n + 1, a.nnz() + 2 * n + 1);
    t.push_block(a, 0, 0, 1.0);
    for (j, &v) in r.iter().enumerate() {
        if v != 0.0 {
            t.push(n, j, v);
            t.push(j, n, v);
        }
    }
    // structural zero so the pattern always has a full diagonal
    t.push(n, n, 0.0);
    from_triplets(&t)
}

/// Solves `[[A, r^T], [r, 0]] (x, lambda) = (b, 0)`.
pub fn solve_bordered(
    a: &CsrMatrix,
    b: &[f64],
    r: &[f64],
    options: SolveOptions,
) -> Result<(Vec<f64>, f64)> {
    let bordered = border(a, r)?;
    let mut rhs = b.to_vec();
    rhs.push(0.0);
    let mut x = solve(&bordered, &rhs, options)?;
    let lambda = x.pop().expect("bordered solution has the multiplier");
    Ok((x, lambda))
}
