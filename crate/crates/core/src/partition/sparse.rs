//! Compressed sparse symmetric matrices and the masked Gram products.

use rayon::prelude::*;

use crate::error::{Result, SccnError};
use crate::model::{InferenceMatrix, InfrastructureGraph, Matrix};

/// Symmetric matrix in CSR form with both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl SparseSym {
    /// Builds from per-row `(column, value)` lists. Rows must be sorted by
    /// column and the pattern and values must be symmetric.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for row in &rows {
            for &(j, v) in row {
                if j >= n {
                    return Err(SccnError::Dimension(format!("column {j} outside {n}x{n}")));
                }
                indices.push(j);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        let m = SparseSym {
            n,
            indptr,
            indices,
            data,
        };
        for i in 0..n {
            for (j, v) in m.row(i) {
                if m.get(j, i) != v {
                    return Err(SccnError::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn from_dense(a: &Matrix) -> Result<Self> {
        if !a.is_symmetric() {
            return Err(SccnError::InvalidArgument("matrix is not symmetric".into()));
        }
        let rows = (0..a.rows())
            .map(|i| {
                (0..a.cols())
                    .filter(|&j| a.get(i, j) != 0.0)
                    .map(|j| (j, a.get(i, j)))
                    .collect()
            })
            .collect();
        SparseSym::from_rows(rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.data[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.data[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.set(i, j, v);
            }
        }
        out
    }

    /// Off-diagonal row sums; the diagonal cancels in `Deg - M`.
    pub fn off_diagonal_degrees(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).filter(|&(j, _)| j != i).map(|(_, v)| v).sum())
            .collect()
    }

    /// `y = L x` for the unnormalized Laplacian `L = Deg - M`.
    pub fn laplacian_apply(&self, degrees: &[f64], x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = degrees[i] * x[i];
            for (j, v) in self.row(i) {
                if j != i {
                    acc -= v * x[j];
                }
            }
            y[i] = acc;
        }
    }

    /// Dense unnormalized Laplacian.
    pub fn laplacian_dense(&self) -> Matrix {
        let deg = self.off_diagonal_degrees();
        let mut out = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            out.set(i, i, deg[i]);
            for (j, v) in self.row(i) {
                if j != i {
                    out.set(i, j, -v);
                }
            }
        }
        out
    }
}

/// Row Gram products masked by an adjacency pattern: entry `(i, i')` is the
/// dot product of rows `i` and `i'` of `w` when `i == i'` or the voxels are
/// adjacent, zero otherwise.
pub fn masked_gram(w: &Matrix, s: &InfrastructureGraph) -> Result<SparseSym> {
    if w.rows() != s.n {
        return Err(SccnError::Dimension(format!(
            "{} matrix rows vs {} voxels",
            w.rows(),
            s.n
        )));
    }
    let dot = |a: usize, b: usize| -> f64 {
        w.row(a).iter().zip(w.row(b)).map(|(x, y)| x * y).sum()
    };
    // Upper triangle only, mirrored so both triangles hold the same bits.
    let upper: Vec<Vec<(usize, f64)>> = (0..s.n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![(i, dot(i, i))];
            row.extend(s.neighbors(i).iter().filter(|&&j| j > i).map(|&j| (j, dot(i, j))));
            row
        })
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); s.n];
    for (i, r) in upper.iter().enumerate() {
        for &(j, v) in r {
            if j > i {
                rows[j].push((i, v));
            }
        }
    }
    for (i, r) in upper.into_iter().enumerate() {
        rows[i].extend(r);
    }
    Ok(SparseSym {
        n: s.n,
        indptr: std::iter::once(0)
            .chain(rows.iter().scan(0, |acc, r| {
                *acc += r.len();
                Some(*acc)
            }))
            .collect(),
        indices: rows.iter().flat_map(|r| r.iter().map(|&(j, _)| j)).collect(),
        data: rows.iter().flat_map(|r| r.iter().map(|&(_, v)| v)).collect(),
    })
}

/// `W_A = W Wᵀ ⊙ S_A` and `W_B = Wᵀ W ⊙ S_B`, computed only on the masks.
pub fn project_weights(
    w: &InferenceMatrix,
    sa: &InfrastructureGraph,
    sb: &InfrastructureGraph,
) -> Result<(SparseSym, SparseSym)> {
    let wa = masked_gram(&w.values, sa)?;
    let wb = masked_gram(&w.values.transpose(), sb)?;
    Ok((wa, wb))
}
