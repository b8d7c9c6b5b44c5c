//! Sparse symmetric matrices assembled from element blocks, backed by a
//! cached symbolic Cholesky factorization.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Mat, MatMut, Side};

use crate::error::FemError;

/// Marks an eliminated (constrained) local degree of freedom.
pub const FIXED: usize = usize::MAX;

/// Lower-triangular CSC sparsity of a symmetric matrix together with the
/// element-to-slot scatter map and the symbolic factorization.
#[derive(Debug)]
pub struct SymmetricPattern {
    n: usize,
    k: usize,
    dofs: Vec<usize>,
    slots: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    llt: SymbolicLlt<usize>,
}

impl SymmetricPattern {
    /// `dofs` lists `k` global indices per element, `FIXED` for eliminated ones.
    pub fn new(n: usize, k: usize, dofs: Vec<usize>) -> Result<Self, FemError> {
        assert_eq!(dofs.len() % k, 0);
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in dofs.chunks_exact(k) {
            for &i in e.iter().filter(|&&i| i != FIXED) {
                for &j in e.iter().filter(|&&j| j != FIXED && j <= i) {
                    cols[j].push(i);
                }
            }
        }
        // Keep the diagonal present even for dofs without elements so that
        // the factorization reports them as singular rather than panicking.
        for (j, c) in cols.iter_mut().enumerate() {
            c.push(j);
            c.sort_unstable();
            c.dedup();
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        for c in &cols {
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        let slot = |i: usize, j: usize| -> usize {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            let col = &row_idx[col_ptr[c]..col_ptr[c + 1]];
            col_ptr[c] + col.binary_search(&r).expect("entry in pattern")
        };
        let mut slots = Vec::with_capacity(dofs.len() / k * k * k);
        for e in dofs.chunks_exact(k) {
            for &i in e {
                for &j in e {
                    slots.push(if i == FIXED || j == FIXED || j > i { FIXED } else { slot(i, j) });
                }
            }
        }
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let llt = SymbolicLlt::try_new(symbolic.as_ref(), Side::Lower)
            .map_err(|e| FemError::Factorization(format!("{e:?}")))?;
        Ok(Self { n, k, dofs, slots, symbolic, llt })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.symbolic.row_idx().len()
    }

    pub fn num_elements(&self) -> usize {
        self.dofs.len() / self.k
    }

    /// Global indices of element `e`.
    pub fn element_dofs(&self, e: usize) -> &[usize] {
        &self.dofs[e * self.k..(e + 1) * self.k]
    }

    pub fn zeros(self: &Arc<Self>) -> SymmetricMatrix {
        SymmetricMatrix { pattern: Arc::clone(self), values: vec![0.0; self.nnz()] }
    }
}

/// Symmetric matrix stored as its lower triangle.
#[derive(Debug, Clone)]
pub struct SymmetricMatrix {
    pattern: Arc<SymmetricPattern>,
    values: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<SymmetricPattern> {
        &self.pattern
    }

    /// Adds the full row-major `k x k` element matrix `ke` of element `e`;
    /// only its lower triangle is read.
    #[inline]
    pub fn scatter(&mut self, e: usize, ke: &[f64]) {
        let k = self.pattern.k;
        let slots = &self.pattern.slots[e * k * k..(e + 1) * k * k];
        for (s, v) in slots.iter().zip(ke) {
            if *s != FIXED {
                self.values[*s] += v;
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let p = &self.pattern;
        let (cp, ri) = (p.symbolic.col_ptr(), p.symbolic.row_idx());
        match ri[cp[c]..cp[c + 1]].binary_search(&r) {
            Ok(o) => self.values[cp[c] + o],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let (cp, ri) = (p.symbolic.col_ptr(), p.symbolic.row_idx());
        let mut y = vec![0.0; p.n];
        for j in 0..p.n {
            for o in cp[j]..cp[j + 1] {
                let (i, v) = (ri[o], self.values[o]);
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.pattern.n;
        let mut d = vec![vec![0.0; n]; n];
        let (cp, ri) = (self.pattern.symbolic.col_ptr(), self.pattern.symbolic.row_idx());
        for j in 0..n {
            for o in cp[j]..cp[j + 1] {
                d[ri[o]][j] = self.values[o];
                d[j][ri[o]] = self.values[o];
            }
        }
        d
    }

    pub fn factor(&self) -> Result<Cholesky, FemError> {
        let p = &self.pattern;
        let mat = SparseColMatRef::new(p.symbolic.as_ref(), &self.values);
        let llt = Llt::try_new_with_symbolic(p.llt.clone(), mat, Side::Lower).map_err(|e| match e {
            faer::sparse::linalg::LltError::Numeric(_) => FemError::Singular,
            other => FemError::Factorization(format!("{other:?}")),
        })?;
        Ok(Cholesky { n: p.n, llt })
    }
}

/// Numeric Cholesky factor of a [`SymmetricMatrix`].
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    llt: Llt<usize, f64>,
}

impl Cholesky {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        if self.n > 0 {
            self.llt.solve_in_place(MatMut::from_column_major_slice_mut(rhs, self.n, 1));
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solves `a x = b` for a symmetric positive definite dense `a`; `None` if
/// the Cholesky factorization breaks down.
pub fn spd_solve(a: &Mat<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.nrows();
    let llt = a.llt(Side::Lower).ok()?;
    let mut x = b.to_vec();
    if n > 0 {
        llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
    }
    Some(x)
}

pub fn is_positive_definite(a: &Mat<f64>) -> bool {
    a.llt(Side::Lower).is_ok()
}

/// Largest absolute entry.
pub fn max_abs(a: &Mat<f64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

pub fn mat_vec(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows()).map(|i| (0..a.ncols()).map(|j| a[(i, j)] * x[j]).sum()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
