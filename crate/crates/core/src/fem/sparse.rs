//! Compressed sparse column storage and the sparse LDLᵀ wrapper.
//!
//! Symmetric matrices keep only the upper triangle (`row <= col`), row
//! indices sorted inside each column. All products and factorizations accept
//! that layout directly.

use std::io::Write;
use std::path::Path;

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::cholesky::ldlt::factor::{LdltParams, LdltRegularization};
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side, Spec};

use crate::error::{Error, Result};

/// Sparsity pattern builder: collects `(row, col)` pairs column by column.
#[derive(Clone, Debug)]
pub struct PatternBuilder {
    nrows: usize,
    cols: Vec<Vec<usize>>,
    upper_only: bool,
}

impl PatternBuilder {
    pub fn symmetric(n: usize) -> Self {
        PatternBuilder {
            nrows: n,
            cols: vec![Vec::new(); n],
            upper_only: true,
        }
    }

    pub fn general(nrows: usize, ncols: usize) -> Self {
        PatternBuilder {
            nrows,
            cols: vec![Vec::new(); ncols],
            upper_only: false,
        }
    }

    pub fn insert(&mut self, row: usize, col: usize) {
        let (r, c) = if self.upper_only && row > col { (col, row) } else { (row, col) };
        self.cols[c].push(r);
    }

    /// Adds the dense block `rows × cols`.
    pub fn insert_block(&mut self, rows: &[usize], cols: &[usize]) {
        for &c in cols {
            for &r in rows {
                self.insert(r, c);
            }
        }
    }

    fn finish(self) -> (usize, usize, Vec<usize>, Vec<usize>) {
        let ncols = self.cols.len();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        for mut c in self.cols {
            c.sort_unstable();
            c.dedup();
            row_idx.extend(c);
            col_ptr.push(row_idx.len());
        }
        (self.nrows, ncols, col_ptr, row_idx)
    }

    pub fn build_symmetric(self) -> SymCsc {
        assert!(self.upper_only);
        let (n, _, col_ptr, row_idx) = self.finish();
        let nnz = row_idx.len();
        SymCsc {
            n,
            col_ptr,
            row_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn build_general(self) -> Csc {
        assert!(!self.upper_only);
        let (nrows, ncols, col_ptr, row_idx) = self.finish();
        let nnz = row_idx.len();
        Csc {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values: vec![0.0; nnz],
        }
    }
}

/// Symmetric matrix, upper triangle in CSC.
#[derive(Clone, Debug, PartialEq)]
pub struct SymCsc {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

/// General CSC matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Csc {
    pub nrows: usize,
    pub ncols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

fn find(row_idx: &[usize], col_ptr: &[usize], row: usize, col: usize) -> Option<usize> {
    let (s, e) = (col_ptr[col], col_ptr[col + 1]);
    row_idx[s..e].binary_search(&row).ok().map(|k| s + k)
}

impl SymCsc {
    pub fn zeros_like(&self) -> SymCsc {
        SymCsc {
            values: vec![0.0; self.values.len()],
            ..self.clone()
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Storage slot of entry `(row, col)`; either triangle may be named.
    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let (r, c) = if row > col { (col, row) } else { (row, col) };
        find(&self.row_idx, &self.col_ptr, r, c)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slot(row, col).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` to `(row, col)`; panics if the entry is outside the pattern.
    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let k = self
            .slot(row, col)
            .unwrap_or_else(|| panic!("entry ({row}, {col}) outside the sparsity pattern"));
        self.values[k] += v;
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        self.mul_vec_acc(1.0, x, y);
    }

    /// `y += alpha A x`.
    pub fn mul_vec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for c in 0..self.n {
            let xc = x[c];
            let mut acc = 0.0;
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                let v = self.values[k];
                if r == c {
                    acc += v * xc;
                } else {
                    y[r] += alpha * v * xc;
                    acc += v * x[r];
                }
            }
            y[c] += alpha * acc;
        }
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.n];
        self.mul_vec(x, &mut y);
        dot(x, &y)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Keeps rows/columns with `map[i] = Some(new)`. The map must be
    /// increasing on the kept indices so the upper triangle stays upper.
    pub fn restrict(&self, map: &[Option<usize>], n_new: usize) -> SymCsc {
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut inverse = vec![usize::MAX; n_new];
        for (old, m) in map.iter().enumerate() {
            if let Some(new) = m {
                inverse[*new] = old;
            }
        }
        for &old_c in &inverse {
            for k in self.col_ptr[old_c]..self.col_ptr[old_c + 1] {
                if let Some(nr) = map[self.row_idx[k]] {
                    row_idx.push(nr);
                    values.push(self.values[k]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        SymCsc {
            n: n_new,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Dense copy, both triangles filled.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                d[(r, c)] = self.values[k];
                d[(c, r)] = self.values[k];
            }
        }
        d
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| {
            (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k]))
        })
    }

    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "%%MatrixMarket matrix coordinate real symmetric").unwrap();
        writeln!(out, "{} {} {}", self.n, self.n, self.nnz()).unwrap();
        // Matrix Market symmetric storage is the lower triangle.
        for (r, c, v) in self.triplets() {
            writeln!(out, "{} {} {:e}", c + 1, r + 1, v).unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl Csc {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        let k = find(&self.row_idx, &self.col_ptr, row, col)
            .unwrap_or_else(|| panic!("entry ({row}, {col}) outside the sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        find(&self.row_idx, &self.col_ptr, row, col).map_or(0.0, |k| self.values[k])
    }

    /// `y += alpha A x`.
    pub fn mul_vec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for c in 0..self.ncols {
            let xc = alpha * x[c];
            if xc == 0.0 {
                continue;
            }
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
    }

    /// `y += alpha Aᵀ x`.
    pub fn mul_t_vec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for c in 0..self.ncols {
            let mut acc = 0.0;
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                acc += self.values[k] * x[self.row_idx[k]];
            }
            y[c] += alpha * acc;
        }
    }

    /// Keeps rows by `row_map` and columns by `col_map` (both increasing).
    pub fn restrict(&self, row_map: &[Option<usize>], nrows: usize, col_map: &[Option<usize>], ncols: usize) -> Csc {
        let mut inverse = vec![usize::MAX; ncols];
        for (old, m) in col_map.iter().enumerate() {
            if let Some(new) = m {
                inverse[*new] = old;
            }
        }
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for &old_c in &inverse {
            for k in self.col_ptr[old_c]..self.col_ptr[old_c + 1] {
                if let Some(nr) = row_map[self.row_idx[k]] {
                    row_idx.push(nr);
                    values.push(self.values[k]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Csc {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Sum of selected columns with weights: returns `A w` restricted to the
    /// columns where `weights` is non-zero.
    pub fn column(&self, col: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.col_ptr[col]..self.col_ptr[col + 1]).map(move |k| (self.row_idx[k], self.values[k]))
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for c in 0..self.ncols {
            for (r, v) in self.column(c) {
                d[(r, c)] = v;
            }
        }
        d
    }

    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "%%MatrixMarket matrix coordinate real general").unwrap();
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz()).unwrap();
        for c in 0..self.ncols {
            for (r, v) in self.column(c) {
                writeln!(out, "{} {} {:e}", r + 1, c + 1, v).unwrap();
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Sparse symmetric LDLᵀ factorization (no pivoting, AMD ordering).
///
/// Suitable for symmetric quasi-definite and shifted indefinite systems; the
/// caller checks residuals where it matters.
pub struct SparseLdlt {
    n: usize,
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    /// Solve scratch; concurrent solvers fall back to a fresh buffer.
    mem: std::sync::Mutex<MemBuffer>,
    solve_req: StackReq,
}

impl std::fmt::Debug for SparseLdlt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLdlt")
            .field("n", &self.n)
            .field("factor_nnz", &self.values.len())
            .finish()
    }
}

impl SparseLdlt {
    pub fn factorize(a: &SymCsc) -> Result<Self> {
        let n = a.n;
        let symbolic_view = SymbolicSparseColMatRef::new_checked(n, n, &a.col_ptr, None, &a.row_idx);
        let view = SparseColMatRef::new(symbolic_view, &a.values);
        let symbolic = factorize_symbolic_cholesky(
            view.symbolic(),
            Side::Upper,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|e| Error::Factorization(format!("symbolic analysis: {e:?}")))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let req = symbolic
            .factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Spec::<LdltParams, f64>::default())
            .or(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        let mut mem = MemBuffer::new(req);
        symbolic
            .factorize_numeric_ldlt(
                &mut values,
                view,
                Side::Upper,
                LdltRegularization::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Spec::default(),
            )
            .map_err(|e| Error::Factorization(format!("numeric LDLT: {e:?}")))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("non-finite pivot".into()));
        }
        let symbolic_solve_req = symbolic.solve_in_place_scratch::<f64>(1, Par::Seq);
        Ok(SparseLdlt {
            n,
            symbolic,
            values,
            mem: std::sync::Mutex::new(mem),
            solve_req: symbolic_solve_req,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let ldlt = LdltRef::<usize, f64>::new(&self.symbolic, &self.values);
        let rhs = MatMut::from_column_major_slice_mut(b, self.n, 1);
        match self.mem.try_lock() {
            Ok(mut mem) => ldlt.solve_in_place_with_conj(Conj::No, rhs, Par::Seq, MemStack::new(&mut mem)),
            Err(_) => {
                let mut mem = MemBuffer::new(self.solve_req);
                ldlt.solve_in_place_with_conj(Conj::No, rhs, Par::Seq, MemStack::new(&mut mem))
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
