//! CSR matrices, assembly of `A = C_uᵀ Q C_u` on a fixed pattern, and a
//! direct sparse solver.
//!
//! The solver is a left-looking LU with threshold partial pivoting that
//! prefers the diagonal. On definite systems (all force densities of one
//! sign) every diagonal pivot is accepted and the fill equals that of a
//! Cholesky factor; on indefinite systems rows are swapped as needed.
//! The fill-reducing ordering is the only symbolic step and is computed
//! once per sparsity pattern.

use std::sync::Arc;

use crate::error::{FdmError, Result};
use crate::network::{Connectivity, VertexSlot};

const NONE: usize = usize::MAX;

/// Accept the diagonal pivot when it is at least this fraction of the
/// largest candidate in its column.
const DIAGONAL_PIVOT_THRESHOLD: f64 = 0.01;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, checking the layout invariants.
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return Err(FdmError::InvalidMatrix(
                "row offsets must have rows + 1 entries starting at 0".into(),
            ));
        }
        if col_indices.len() != values.len() || row_offsets[rows] != values.len() {
            return Err(FdmError::InvalidMatrix(
                "last row offset must equal the number of stored values".into(),
            ));
        }
        for r in 0..rows {
            let (start, end) = (row_offsets[r], row_offsets[r + 1]);
            if start > end {
                return Err(FdmError::InvalidMatrix(format!(
                    "row offsets decrease at row {r}"
                )));
            }
            let cols_in_row = &col_indices[start..end];
            if cols_in_row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(FdmError::InvalidMatrix(format!(
                    "column indices of row {r} are not strictly increasing"
                )));
            }
            if cols_in_row.last().is_some_and(|&c| c >= cols) {
                return Err(FdmError::InvalidMatrix(format!(
                    "column index out of range in row {r}"
                )));
            }
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0; rows + 1];
        let mut col_indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        SparseMatrix {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn col_count(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.col_indices[range.clone()], &self.values[range])
    }

    /// Stored value at `(r, c)`, zero when the entry is not in the pattern.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.row_offsets == other.row_offsets
            && self.col_indices == other.col_indices
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in dense.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        dense
    }

    /// Infinity norm (maximum absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `self · x` for a block of `K` columns.
    pub fn mul<const K: usize>(&self, x: &[[f64; K]]) -> Vec<[f64; K]> {
        assert_eq!(x.len(), self.cols, "operand rows must match matrix columns");
        (0..self.rows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                let mut acc = [0.0; K];
                for (&c, &v) in cols.iter().zip(vals) {
                    for d in 0..K {
                        acc[d] += v * x[c][d];
                    }
                }
                acc
            })
            .collect()
    }

    /// `selfᵀ · x` for a block of `K` columns.
    pub fn mul_transpose<const K: usize>(&self, x: &[[f64; K]]) -> Vec<[f64; K]> {
        assert_eq!(x.len(), self.rows, "operand rows must match matrix rows");
        let mut out = vec![[0.0; K]; self.cols];
        for (r, xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for d in 0..K {
                    out[c][d] += v * xr[d];
                }
            }
        }
        out
    }

    fn is_structurally_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|r| {
                self.row(r)
                    .0
                    .iter()
                    .all(|&c| self.row(c).0.binary_search(&r).is_ok())
            })
    }
}

/// Fixed sparsity pattern of `A = C_uᵀ Q C_u` and, for every stored entry,
/// the signed force densities that sum into it.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyPlan {
    size: usize,
    edge_count: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    contribution_offsets: Vec<usize>,
    contribution_edges: Vec<usize>,
    contribution_signs: Vec<f64>,
}

pub fn plan_assembly(conn: &Connectivity) -> AssemblyPlan {
    let size = conn.free_count();
    // (row, col, edge, sign)
    let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
    for j in 0..size {
        entries.push((j, j, NONE, 0.0));
    }
    for (i, &(a, b)) in conn.edges().iter().enumerate() {
        let fa = conn.slot(a).free();
        let fb = conn.slot(b).free();
        if let Some(ja) = fa {
            entries.push((ja, ja, i, 1.0));
        }
        if let Some(jb) = fb {
            entries.push((jb, jb, i, 1.0));
        }
        if let (Some(ja), Some(jb)) = (fa, fb) {
            entries.push((ja, jb, i, -1.0));
            entries.push((jb, ja, i, -1.0));
        }
    }
    entries.sort_by_key(|&(r, c, e, _)| (r, c, e));

    let mut row_offsets = vec![0; size + 1];
    let mut col_indices = Vec::new();
    let mut contribution_offsets = vec![0];
    let mut contribution_edges = Vec::new();
    let mut contribution_signs = Vec::new();
    let mut last = None;
    for (r, c, e, s) in entries {
        if last != Some((r, c)) {
            if last.is_some() {
                contribution_offsets.push(contribution_edges.len());
            }
            col_indices.push(c);
            row_offsets[r + 1] += 1;
            last = Some((r, c));
        }
        if e != NONE {
            contribution_edges.push(e);
            contribution_signs.push(s);
        }
    }
    if last.is_some() {
        contribution_offsets.push(contribution_edges.len());
    }
    for r in 0..size {
        row_offsets[r + 1] += row_offsets[r];
    }

    AssemblyPlan {
        size,
        edge_count: conn.edge_count(),
        row_offsets,
        col_indices,
        contribution_offsets,
        contribution_edges,
        contribution_signs,
    }
}

impl AssemblyPlan {
    /// Number of free vertices, the order of `A`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// `(edge, sign)` pairs summed into stored entry `k`.
    pub fn contributions(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.contribution_offsets[k]..self.contribution_offsets[k + 1];
        self.contribution_edges[range.clone()]
            .iter()
            .copied()
            .zip(self.contribution_signs[range].iter().copied())
    }

    /// Writes the values of `A` for force densities `q` into `values`.
    pub fn assemble_into(&self, q: &[f64], values: &mut [f64]) -> Result<()> {
        if q.len() != self.edge_count {
            return Err(FdmError::DimensionMismatch {
                what: "force densities",
                expected: self.edge_count,
                found: q.len(),
            });
        }
        assert_eq!(values.len(), self.nnz());
        for (k, value) in values.iter_mut().enumerate() {
            *value = self.contributions(k).map(|(e, s)| s * q[e]).sum();
        }
        Ok(())
    }
}

pub fn assemble(plan: &AssemblyPlan, q: &[f64]) -> Result<SparseMatrix> {
    let mut values = vec![0.0; plan.nnz()];
    plan.assemble_into(q, &mut values)?;
    Ok(SparseMatrix {
        rows: plan.size,
        cols: plan.size,
        row_offsets: plan.row_offsets.clone(),
        col_indices: plan.col_indices.clone(),
        values,
    })
}

/// Fill-reducing ordering for one sparsity pattern.
#[derive(Debug, Clone)]
pub struct SymbolicFactorization {
    size: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    ordering: Vec<usize>,
}

impl SymbolicFactorization {
    /// Computes an approximate-minimum-degree ordering of a square,
    /// structurally symmetric pattern.
    pub fn analyze(a: &SparseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(FdmError::InvalidMatrix(format!(
                "matrix is {}x{}, expected square",
                a.rows, a.cols
            )));
        }
        if !a.is_structurally_symmetric() {
            return Err(FdmError::InvalidMatrix(
                "matrix is not structurally symmetric".into(),
            ));
        }
        let ordering = if a.rows == 0 {
            Vec::new()
        } else {
            let (perm, _, _) = amd::order(
                a.rows,
                &a.row_offsets,
                &a.col_indices,
                &amd::Control::default(),
            )
            .map_err(|status| FdmError::InvalidMatrix(format!("ordering failed: {status:?}")))?;
            perm
        };
        Ok(SymbolicFactorization {
            size: a.rows,
            row_offsets: a.row_offsets.clone(),
            col_indices: a.col_indices.clone(),
            ordering,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Elimination order: position `k` eliminates original index `ordering[k]`.
    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// Whether `a` has the pattern this analysis was computed for.
    pub fn matches(&self, a: &SparseMatrix) -> bool {
        a.rows == self.size
            && a.cols == self.size
            && a.row_offsets == self.row_offsets
            && a.col_indices == self.col_indices
    }
}

/// Numeric LU factors `P A Q = L U`, with `Q` the cached symmetric ordering
/// and `P` the row pivoting chosen during factorization.
#[derive(Debug, Clone)]
pub struct Factorization {
    symbolic: Arc<SymbolicFactorization>,
    row_pivot: Vec<usize>,
    l_offsets: Vec<usize>,
    l_rows: Vec<usize>,
    l_values: Vec<f64>,
    u_offsets: Vec<usize>,
    u_rows: Vec<usize>,
    u_values: Vec<f64>,
}

/// Symbolic analysis followed by numeric factorization.
pub fn factorize(a: &SparseMatrix) -> Result<Factorization> {
    let symbolic = Arc::new(SymbolicFactorization::analyze(a)?);
    Factorization::numeric(symbolic, a)
}

impl Factorization {
    /// Numeric factorization reusing an existing symbolic analysis.
    pub fn numeric(symbolic: Arc<SymbolicFactorization>, a: &SparseMatrix) -> Result<Self> {
        if !symbolic.matches(a) {
            return Err(FdmError::InvalidMatrix(
                "pattern differs from the analysed pattern".into(),
            ));
        }
        let n = symbolic.size;
        let max_abs = a.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let pivot_floor = f64::EPSILON * n as f64 * max_abs;

        // A is structurally symmetric and numerically symmetric, so its CSR
        // arrays double as CSC arrays.
        let (ap, ai, ax) = (&a.row_offsets, &a.col_indices, &a.values);

        let mut x = vec![0.0; n];
        let mut xi = vec![0usize; n];
        let mut pstack = vec![0usize; n];
        let mut marked = vec![false; n];
        let mut row_pivot = vec![NONE; n];

        let mut l_offsets = Vec::with_capacity(n + 1);
        let mut l_rows = Vec::with_capacity(2 * a.nnz());
        let mut l_values = Vec::with_capacity(2 * a.nnz());
        let mut u_offsets = Vec::with_capacity(n + 1);
        let mut u_rows = Vec::with_capacity(2 * a.nnz());
        let mut u_values = Vec::with_capacity(2 * a.nnz());

        for k in 0..n {
            l_offsets.push(l_rows.len());
            u_offsets.push(u_rows.len());
            let col = symbolic.ordering[k];

            // Nonzero pattern of L \ A(:, col), in topological order.
            let mut top = n;
            for &i in &ai[ap[col]..ap[col + 1]] {
                if !marked[i] {
                    top = depth_first(
                        i,
                        top,
                        &l_offsets,
                        &l_rows,
                        &row_pivot,
                        &mut xi,
                        &mut pstack,
                        &mut marked,
                    );
                }
            }
            for &i in &xi[top..n] {
                marked[i] = false;
            }

            for &i in &xi[top..n] {
                x[i] = 0.0;
            }
            for p in ap[col]..ap[col + 1] {
                x[ai[p]] = ax[p];
            }
            for px in top..n {
                let j = xi[px];
                let jj = row_pivot[j];
                if jj == NONE {
                    continue;
                }
                let xj = x[j];
                // First entry of each L column is its unit diagonal.
                for p in l_offsets[jj] + 1..l_offsets[jj + 1] {
                    x[l_rows[p]] -= l_values[p] * xj;
                }
            }

            let mut pivot_row = NONE;
            let mut largest = -1.0;
            for &i in &xi[top..n] {
                if row_pivot[i] == NONE {
                    let t = x[i].abs();
                    if t > largest {
                        largest = t;
                        pivot_row = i;
                    }
                } else {
                    u_rows.push(row_pivot[i]);
                    u_values.push(x[i]);
                }
            }
            if pivot_row == NONE || largest.is_nan() || largest <= pivot_floor {
                return Err(FdmError::SingularMatrix { column: k });
            }
            if row_pivot[col] == NONE && x[col].abs() >= largest * DIAGONAL_PIVOT_THRESHOLD {
                pivot_row = col;
            }
            let pivot = x[pivot_row];
            u_rows.push(k);
            u_values.push(pivot);
            row_pivot[pivot_row] = k;
            l_rows.push(pivot_row);
            l_values.push(1.0);
            for &i in &xi[top..n] {
                if row_pivot[i] == NONE {
                    l_rows.push(i);
                    l_values.push(x[i] / pivot);
                }
                x[i] = 0.0;
            }
        }
        l_offsets.push(l_rows.len());
        u_offsets.push(u_rows.len());
        for r in &mut l_rows {
            *r = row_pivot[*r];
        }

        Ok(Factorization {
            symbolic,
            row_pivot,
            l_offsets,
            l_rows,
            l_values,
            u_offsets,
            u_rows,
            u_values,
        })
    }

    pub fn size(&self) -> usize {
        self.symbolic.size
    }

    pub fn symbolic(&self) -> &Arc<SymbolicFactorization> {
        &self.symbolic
    }

    /// Stored entries in `L` and `U` together.
    pub fn factor_nnz(&self) -> usize {
        self.l_values.len() + self.u_values.len()
    }

    /// Solves `A X = B` for all `K` right-hand-side columns in one sweep.
    pub fn solve<const K: usize>(&self, rhs: &[[f64; K]]) -> Result<Vec<[f64; K]>> {
        let n = self.size();
        if rhs.len() != n {
            return Err(FdmError::DimensionMismatch {
                what: "right-hand side rows",
                expected: n,
                found: rhs.len(),
            });
        }
        let mut y = vec![[0.0; K]; n];
        for (i, b) in rhs.iter().enumerate() {
            y[self.row_pivot[i]] = *b;
        }
        for j in 0..n {
            let yj = y[j];
            for p in self.l_offsets[j] + 1..self.l_offsets[j + 1] {
                let target = &mut y[self.l_rows[p]];
                for d in 0..K {
                    target[d] -= self.l_values[p] * yj[d];
                }
            }
        }
        for j in (0..n).rev() {
            let diag = self.u_offsets[j + 1] - 1;
            for d in 0..K {
                y[j][d] /= self.u_values[diag];
            }
            let yj = y[j];
            for p in self.u_offsets[j]..diag {
                let target = &mut y[self.u_rows[p]];
                for d in 0..K {
                    target[d] -= self.u_values[p] * yj[d];
                }
            }
        }
        let mut x = vec![[0.0; K]; n];
        for (k, &original) in self.symbolic.ordering.iter().enumerate() {
            x[original] = y[k];
        }
        Ok(x)
    }
}

/// Non-recursive depth-first search from row `start` through the finished
/// columns of `L`, pushing completed rows onto `xi[top..]`. Rows already
/// pivoted map to a finished column; `l_offsets` holds one more entry than
/// there are finished columns.
#[allow(clippy::too_many_arguments)]
fn depth_first(
    start: usize,
    mut top: usize,
    l_offsets: &[usize],
    l_rows: &[usize],
    row_pivot: &[usize],
    xi: &mut [usize],
    pstack: &mut [usize],
    marked: &mut [bool],
) -> usize {
    let mut head = 0;
    xi[0] = start;
    loop {
        let j = xi[head];
        let jj = row_pivot[j];
        let (begin, end) = if jj == NONE {
            (0, 0)
        } else {
            (l_offsets[jj], l_offsets[jj + 1])
        };
        if !marked[j] {
            marked[j] = true;
            pstack[head] = begin;
        }
        let mut done = true;
        let mut p = pstack[head];
        while p < end {
            let i = l_rows[p];
            if marked[i] {
                p += 1;
                continue;
            }
            pstack[head] = p;
            head += 1;
            xi[head] = i;
            done = false;
            break;
        }
        if done {
            top -= 1;
            xi[top] = j;
            if head == 0 {
                return top;
            }
            head -= 1;
        }
    }
}

/// Dense Gaussian elimination with partial pivoting. `a` is n × n, `b` is
/// n × k; both row-major. Reference solver for tests and gradient checks.
pub fn dense_solve_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    if b.len() != n {
        return Err(FdmError::DimensionMismatch {
            what: "right-hand side rows",
            expected: n,
            found: b.len(),
        });
    }
    if let Some(row) = a.iter().find(|row| row.len() != n) {
        return Err(FdmError::DimensionMismatch {
            what: "dense matrix columns",
            expected: n,
            found: row.len(),
        });
    }
    let k = b.first().map_or(0, Vec::len);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let max_abs = a.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let floor = f64::EPSILON * n as f64 * max_abs;

    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        let d = m[p][c].abs();
        if d.is_nan() || d <= floor {
            return Err(FdmError::SingularMatrix { column: c });
        }
        m.swap(c, p);
        x.swap(c, p);
        let (pivot_rows, rest) = m.split_at_mut(c + 1);
        let pivot_row = &pivot_rows[c];
        let (x_pivot, x_rest) = x.split_at_mut(c + 1);
        for (row, xr) in rest.iter_mut().zip(x_rest.iter_mut()) {
            let f = row[c] / pivot_row[c];
            if f == 0.0 {
                continue;
            }
            for j in c..n {
                row[j] -= f * pivot_row[j];
            }
            for d in 0..k {
                xr[d] -= f * x_pivot[c][d];
            }
        }
    }
    for c in (0..n).rev() {
        for d in 0..k {
            let s: f64 = (c + 1..n).map(|j| m[c][j] * x[j][d]).sum();
            x[c][d] = (x[c][d] - s) / m[c][c];
        }
    }
    Ok(x)
}

/// Dense `A = C_uᵀ Q C_u` built directly from the edge list, independent of
/// [`AssemblyPlan`]. Used as a cross-check in tests.
pub fn dense_coefficient_matrix(conn: &Connectivity, q: &[f64]) -> Vec<Vec<f64>> {
    let n = conn.free_count();
    let mut a = vec![vec![0.0; n]; n];
    for (i, &(s, e)) in conn.edges().iter().enumerate() {
        let fs = conn.slot(s);
        let fe = conn.slot(e);
        if let VertexSlot::Free(js) = fs {
            a[js][js] += q[i];
        }
        if let VertexSlot::Free(je) = fe {
            a[je][je] += q[i];
        }
        if let (VertexSlot::Free(js), VertexSlot::Free(je)) = (fs, fe) {
            a[js][je] -= q[i];
            a[je][js] -= q[i];
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{chain, grid};
    use proptest::prelude::*;

    fn dense(rows: &[&[f64]]) -> SparseMatrix {
        let n = rows.len();
        let mut t = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((r, c, v));
                }
            }
        }
        SparseMatrix::from_triplets(n, rows[0].len(), t)
    }

    fn full_pattern(rows: &[&[f64]]) -> SparseMatrix {
        let n = rows.len();
        let mut t = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                t.push((r, c, v));
            }
        }
        SparseMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn new_checks_layout() {
        assert!(SparseMatrix::new(2, 2, vec![0, 1, 2], vec![0, 1], vec![1.0, 1.0]).is_ok());
        assert!(SparseMatrix::new(2, 2, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 2], vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 1], vec![3], vec![1.0]).is_err());
        assert!(SparseMatrix::new(1, 2, vec![0, 2], vec![0], vec![1.0]).is_err());
    }

    #[test]
    fn chain_plan_is_scalar() {
        let plan = plan_assembly(&chain().connectivity());
        assert_eq!(plan.size(), 1);
        let contribs: Vec<_> = plan.contributions(0).collect();
        assert_eq!(contribs, vec![(0, 1.0), (1, 1.0)]);
        assert_eq!(
            assemble(&plan, &[1.0, 1.0]).unwrap().to_dense(),
            vec![vec![2.0]]
        );
        assert_eq!(
            assemble(&plan, &[-1.0, -1.0]).unwrap().to_dense(),
            vec![vec![-2.0]]
        );
        assert_eq!(assemble(&plan, &[0.3, 0.4]).unwrap().get(0, 0), 0.3 + 0.4);
    }

    #[test]
    fn three_by_three_grid_has_one_interior_vertex() {
        let net = grid(3, 3, 1.0);
        let conn = net.connectivity();
        let plan = plan_assembly(&conn);
        assert_eq!(plan.size(), 1);
        let mut q = vec![0.0; net.edge_count()];
        let mut expected = 0.0;
        for (i, &(a, b)) in net.edges().iter().enumerate() {
            q[i] = 1.0 + i as f64;
            if a == 4 || b == 4 {
                expected += q[i];
            }
        }
        assert_eq!(assemble(&plan, &q).unwrap().get(0, 0), expected);
        assert_eq!(plan.contributions(0).count(), 4);
    }

    #[test]
    fn planning_is_deterministic() {
        let conn = grid(5, 4, 1.0).connectivity();
        assert_eq!(plan_assembly(&conn), plan_assembly(&conn));
    }

    #[test]
    fn assemble_rejects_wrong_length() {
        let plan = plan_assembly(&chain().connectivity());
        assert!(matches!(
            assemble(&plan, &[1.0]),
            Err(FdmError::DimensionMismatch {
                expected: 2,
                found: 1,
                ..
            })
        ));
    }

    #[test]
    fn zero_densities_give_zero_values() {
        let net = grid(6, 5, 1.0);
        let plan = plan_assembly(&net.connectivity());
        let a = assemble(&plan, &vec![0.0; net.edge_count()]).unwrap();
        assert!(a.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assembled_matrix_matches_dense_construction() {
        let net = grid(6, 5, 1.0);
        let conn = net.connectivity();
        let q: Vec<f64> = (0..net.edge_count())
            .map(|i| 0.5 + (i % 7) as f64)
            .collect();
        let a = assemble(&plan_assembly(&conn), &q).unwrap();
        assert_eq!(a.to_dense(), dense_coefficient_matrix(&conn, &q));
        for r in 0..a.row_count() {
            for c in 0..a.col_count() {
                assert_eq!(a.get(r, c), a.get(c, r));
            }
        }
    }

    #[test]
    fn factorize_scalar() {
        let f = factorize(&dense(&[&[2.0]])).unwrap();
        assert_eq!(f.solve(&[[1.0]]).unwrap(), vec![[0.5]]);
    }

    #[test]
    fn cancelling_densities_are_singular() {
        let plan = plan_assembly(&chain().connectivity());
        let a = assemble(&plan, &[1.0, -1.0]).unwrap();
        assert!(matches!(
            factorize(&a),
            Err(FdmError::SingularMatrix { .. })
        ));
    }

    #[test]
    fn two_by_two_system() {
        let f = factorize(&dense(&[&[2.0, -1.0], &[-1.0, 2.0]])).unwrap();
        let x = f.solve(&[[1.0], [0.0]]).unwrap();
        assert!((x[0][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((x[1][0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_diagonal_requires_row_pivoting() {
        let a = full_pattern(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let x = factorize(&a).unwrap().solve(&[[1.0], [2.0]]).unwrap();
        assert_eq!(x, vec![[2.0], [1.0]]);
    }

    #[test]
    fn chain_solve_three_columns() {
        let plan = plan_assembly(&chain().connectivity());
        let a = assemble(&plan, &[1.0, 1.0]).unwrap();
        let x = factorize(&a).unwrap().solve(&[[2.0, 0.0, -1.0]]).unwrap();
        assert_eq!(x, vec![[1.0, 0.0, -0.5]]);
    }

    #[test]
    fn diagonal_matrix_scales_by_reciprocal() {
        let d = [2.0, 4.0, 0.5, -8.0];
        let a = SparseMatrix::from_triplets(
            4,
            4,
            d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect(),
        );
        let b = [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]];
        let x = factorize(&a).unwrap().solve(&b).unwrap();
        for i in 0..4 {
            for k in 0..2 {
                assert_eq!(x[i][k], b[i][k] / d[i]);
            }
        }
    }

    #[test]
    fn solve_rejects_wrong_rhs_length() {
        let f = factorize(&dense(&[&[2.0]])).unwrap();
        assert!(matches!(
            f.solve(&[[1.0], [1.0]]),
            Err(FdmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn analyze_rejects_unsymmetric_patterns() {
        let a = dense(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert!(matches!(factorize(&a), Err(FdmError::InvalidMatrix(_))));
        let a = dense(&[&[1.0, 1.0]]);
        assert!(matches!(factorize(&a), Err(FdmError::InvalidMatrix(_))));
    }

    #[test]
    fn numeric_refactorization_reuses_ordering() {
        let net = grid(8, 7, 1.0);
        let plan = plan_assembly(&net.connectivity());
        let a1 = assemble(&plan, &vec![1.0; net.edge_count()]).unwrap();
        let f1 = factorize(&a1).unwrap();
        let a2 = assemble(&plan, &vec![-2.5; net.edge_count()]).unwrap();
        let f2 = Factorization::numeric(f1.symbolic().clone(), &a2).unwrap();
        assert!(Arc::ptr_eq(f1.symbolic(), f2.symbolic()));
        let b = vec![[1.0, -2.0, 0.5]; plan.size()];
        let x1 = f1.solve(&b).unwrap();
        let x2 = f2.solve(&b).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            for d in 0..3 {
                assert!((u[d] + 2.5 * v[d]).abs() < 1e-12 * u[d].abs().max(1.0));
            }
        }
        let other = grid(4, 4, 1.0);
        let a3 = assemble(
            &plan_assembly(&other.connectivity()),
            &vec![1.0; other.edge_count()],
        )
        .unwrap();
        assert!(Factorization::numeric(f1.symbolic().clone(), &a3).is_err());
    }

    #[test]
    fn empty_system() {
        let a = SparseMatrix::from_triplets(0, 0, vec![]);
        let f = factorize(&a).unwrap();
        assert!(f.solve::<3>(&[]).unwrap().is_empty());
    }

    // Hilbert matrix inverse entries are integers with a closed form.
    #[test]
    fn dense_oracle_inverts_hilbert() {
        let h: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| 1.0 / (i + j + 1) as f64).collect())
            .collect();
        let inverse = [
            [9.0, -36.0, 30.0],
            [-36.0, 192.0, -180.0],
            [30.0, -180.0, 180.0],
        ];
        let identity: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let x = dense_solve_oracle(&h, &identity).unwrap();
        let sparse = full_pattern(&[&h[0], &h[1], &h[2]]);
        let f = factorize(&sparse).unwrap();
        for c in 0..3 {
            let col: Vec<[f64; 1]> = (0..3).map(|r| [identity[r][c]]).collect();
            let xs = f.solve(&col).unwrap();
            for r in 0..3 {
                let rel = (x[r][c] - inverse[r][c]).abs() / inverse[r][c].abs();
                assert!(rel < 1e-10, "dense ({r},{c}) rel err {rel}");
                let rel = (xs[r][0] - inverse[r][c]).abs() / inverse[r][c].abs();
                assert!(rel < 1e-10, "sparse ({r},{c}) rel err {rel}");
            }
        }
    }

    #[test]
    fn dense_oracle_small_cases() {
        assert_eq!(
            dense_solve_oracle(&[vec![2.0]], &[vec![1.0]]).unwrap(),
            vec![vec![0.5]]
        );
        let x = dense_solve_oracle(&[vec![2.0, -1.0], vec![-1.0, 2.0]], &[vec![1.0], vec![0.0]])
            .unwrap();
        assert!((x[0][0] - 2.0 / 3.0).abs() < 1e-15 && (x[1][0] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            dense_solve_oracle(&[vec![1.0, 2.0], vec![2.0, 4.0]], &[vec![1.0], vec![1.0]]),
            Err(FdmError::SingularMatrix { .. })
        ));
    }

    fn random_spd_case(nx: usize, ny: usize, q: &[f64]) -> (SparseMatrix, Vec<Vec<f64>>) {
        let net = grid(nx, ny, 1.0);
        let conn = net.connectivity();
        let q: Vec<f64> = (0..net.edge_count()).map(|i| q[i % q.len()]).collect();
        let a = assemble(&plan_assembly(&conn), &q).unwrap();
        let d = dense_coefficient_matrix(&conn, &q);
        (a, d)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn sparse_matches_dense_oracle(
            nx in 3usize..14,
            ny in 3usize..14,
            q in prop::collection::vec(0.5f64..2.0, 1..40),
            sign in prop::sample::select(vec![1.0, -1.0]),
            rhs_seed in 0.0f64..1.0,
        ) {
            let q: Vec<f64> = q.iter().map(|v| sign * v).collect();
            let (a, d) = random_spd_case(nx, ny, &q);
            let n = a.row_count();
            let b: Vec<[f64; 3]> = (0..n)
                .map(|i| {
                    let t = rhs_seed + i as f64;
                    [t.sin(), t.cos(), 1.0 - (0.3 * t).sin()]
                })
                .collect();
            let x = factorize(&a).unwrap().solve(&b).unwrap();
            let bd: Vec<Vec<f64>> = b.iter().map(|r| r.to_vec()).collect();
            let xd = dense_solve_oracle(&d, &bd).unwrap();
            let scale = xd.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                for k in 0..3 {
                    prop_assert!((x[i][k] - xd[i][k]).abs() <= 1e-10 * scale);
                }
            }
            // Residual bound.
            let ax = a.mul(&x);
            let xnorm = x.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
            let bnorm = b.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
            for i in 0..n {
                for k in 0..3 {
                    prop_assert!((ax[i][k] - b[i][k]).abs() <= 1e-10 * (a.norm_inf() * xnorm + bnorm));
                }
            }
        }

        #[test]
        fn assembly_is_linear_with_fixed_pattern(
            q1 in prop::collection::vec(-3.0f64..3.0, 31),
            q2 in prop::collection::vec(-3.0f64..3.0, 31),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let net = grid(5, 4, 1.0);
            prop_assert_eq!(net.edge_count(), 31);
            let plan = plan_assembly(&net.connectivity());
            let a1 = assemble(&plan, &q1).unwrap();
            let a2 = assemble(&plan, &q2).unwrap();
            let mix: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| alpha * a + beta * b).collect();
            let am = assemble(&plan, &mix).unwrap();
            prop_assert!(a1.same_pattern(&a2) && a1.same_pattern(&am));
            for k in 0..am.nnz() {
                let expected = alpha * a1.values()[k] + beta * a2.values()[k];
                prop_assert!((am.values()[k] - expected).abs() < 1e-12);
            }
        }

        #[test]
        fn indefinite_systems_solve(
            q in prop::collection::vec(prop_oneof![0.5f64..2.0, -2.0f64..-0.5], 31),
        ) {
            let net = grid(5, 4, 1.0);
            let conn = net.connectivity();
            let a = assemble(&plan_assembly(&conn), &q).unwrap();
            let d = dense_coefficient_matrix(&conn, &q);
            let b: Vec<[f64; 1]> = (0..a.row_count()).map(|i| [1.0 + i as f64]).collect();
            let bd: Vec<Vec<f64>> = b.iter().map(|r| r.to_vec()).collect();
            // Only compare when the system is comfortably nonsingular.
            if let Ok(xd) = dense_solve_oracle(&d, &bd) {
                let scale = xd.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
                prop_assume!(scale < 1e6);
                let x = factorize(&a).unwrap().solve(&b).unwrap();
                for i in 0..a.row_count() {
                    prop_assert!((x[i][0] - xd[i][0]).abs() <= 1e-8 * scale);
                }
            }
        }
    }
}
