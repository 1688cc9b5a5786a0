//! Bottom eigenpairs of the unnormalized graph Laplacian.
//!
//! Small graphs use a dense symmetric eigendecomposition. Larger graphs use
//! Chebyshev-filtered block subspace iteration on the sparse Laplacian,
//! which handles the repeated near-zero eigenvalues of weakly connected
//! graphs that single-vector Krylov methods miss.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SccnError};
use crate::model::Matrix;
use crate::rng::{derived_rng, Stream};

use super::sparse::SparseSym;

pub const DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub dense_limit: usize,
    pub filter_degree: usize,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig {
            tol: 1e-8,
            max_iter: 5000,
            dense_limit: DENSE_LIMIT,
            filter_degree: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpairs {
    /// Ascending.
    pub values: Vec<f64>,
    /// `n x k`; column `j` pairs with `values[j]`.
    pub vectors: Matrix,
    pub warning: Option<String>,
}

/// The `k` smallest eigenpairs of `Deg - M`, each vector sign-normalized so
/// that its largest-magnitude entry is positive.
pub fn laplacian_bottom(m: &SparseSym, k: usize, cfg: &EigenConfig) -> Result<Eigenpairs> {
    let n = m.n();
    if k == 0 || k > n {
        return Err(SccnError::InvalidArgument(format!(
            "cannot take {k} eigenvectors of a {n}-node graph"
        )));
    }
    let mut out = if n <= cfg.dense_limit {
        dense_bottom(&m.laplacian_dense(), k)?
    } else {
        match subspace_bottom(m, k, cfg) {
            Ok(e) => e,
            Err(reason) => {
                let mut e = dense_bottom(&m.laplacian_dense(), k)?;
                e.warning = Some(format!("iterative eigensolver fell back to dense: {reason}"));
                e
            }
        }
    };
    normalize_signs(&mut out.vectors);
    Ok(out)
}

// (value, component, local index, global rows, vector)
type Pair = (f64, usize, usize, std::rc::Rc<Vec<usize>>, Vec<f64>);

/// Bottom eigenpairs of a dense Laplacian. Each connected component is
/// decomposed on its own: the spectrum is the union of the component
/// spectra, and small decoupled blocks can drive the dense solver into
/// non-finite shifts when solved together.
pub fn dense_bottom(l: &Matrix, k: usize) -> Result<Eigenpairs> {
    let n = l.rows();
    let mut pairs: Vec<Pair> = Vec::new();
    for (ci, comp) in components(l).into_iter().enumerate() {
        let size = comp.len();
        let block = DMatrix::from_fn(size, size, |a, b| l.get(comp[a], comp[b]));
        let eig = SymmetricEigen::new(block);
        if eig.eigenvalues.iter().chain(eig.eigenvectors.iter()).any(|v| !v.is_finite()) {
            return Err(SccnError::Numeric("dense eigendecomposition produced non-finite values".into()));
        }
        let comp = std::rc::Rc::new(comp);
        for c in 0..size {
            let v = (0..size).map(|a| eig.eigenvectors[(a, c)]).collect();
            pairs.push((eig.eigenvalues[c], ci, c, comp.clone(), v));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    pairs.truncate(k);
    let mut vectors = Matrix::zeros(n, k);
    for (j, (_, _, _, rows, v)) in pairs.iter().enumerate() {
        for (&i, &x) in rows.iter().zip(v) {
            vectors.set(i, j, x);
        }
    }
    Ok(Eigenpairs {
        values: pairs.iter().map(|p| p.0).collect(),
        vectors,
        warning: None,
    })
}

/// Connected components of the off-diagonal pattern, each sorted, in order
/// of their smallest node.
fn components(l: &Matrix) -> Vec<Vec<usize>> {
    let n = l.rows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut k = 0;
        while k < comp.len() {
            let i = comp[k];
            for (j, &v) in l.row(i).iter().enumerate() {
                if j != i && v != 0.0 && !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn normalize_signs(v: &mut Matrix) {
    let (n, k) = v.shape();
    for j in 0..k {
        let mut best = 0usize;
        for i in 1..n {
            if v.get(i, j).abs() > v.get(best, j).abs() {
                best = i;
            }
        }
        if v.get(best, j) < 0.0 {
            for i in 0..n {
                v.set(i, j, -v.get(i, j));
            }
        }
    }
}

// Column-major block of vectors, one Vec per column.
type Block = Vec<Vec<f64>>;

fn subspace_bottom(m: &SparseSym, k: usize, cfg: &EigenConfig) -> std::result::Result<Eigenpairs, String> {
    let n = m.n();
    let deg = m.off_diagonal_degrees();
    let upper = 2.0 * deg.iter().cloned().fold(0.0, f64::max);
    if upper == 0.0 {
        // Edgeless graph: the Laplacian is zero and any basis will do.
        return Ok(Eigenpairs {
            values: vec![0.0; k],
            vectors: Matrix::from_fn(n, k, |i, j| if i == j { 1.0 } else { 0.0 }),
            warning: None,
        });
    }
    let b = (k + 8).max(2 * k).min(n);
    let apply = |x: &[f64]| {
        let mut y = vec![0.0; n];
        m.laplacian_apply(&deg, x, &mut y);
        y
    };
    let mut rng = derived_rng(n as u64, Stream::Eigen, k as u64);
    let mut x: Block = (0..b)
        .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    orthonormalize(&mut x)?;
    let tol = cfg.tol * upper;
    for _ in 0..cfg.max_iter {
        let lx: Block = x.iter().map(|c| apply(c)).collect();
        let (theta, rotated, lrot) = rayleigh_ritz(&x, &lx);
        x = rotated;
        let converged = (0..k).all(|j| {
            let r: f64 = lrot[j]
                .iter()
                .zip(&x[j])
                .map(|(a, v)| (a - theta[j] * v).powi(2))
                .sum();
            r.sqrt() <= tol
        });
        if converged {
            return Ok(Eigenpairs {
                values: theta[..k].to_vec(),
                vectors: Matrix::from_fn(n, k, |i, j| x[j][i]),
                warning: None,
            });
        }
        let lower = theta[b - 1].min(upper * (1.0 - 1e-12));
        chebyshev_filter(&mut x, &apply, lower, upper, cfg.filter_degree);
        orthonormalize(&mut x)?;
    }
    Err(format!("no convergence in {} iterations", cfg.max_iter))
}

// Damps the spectral interval [lower, upper] relative to eigenvalues below it.
fn chebyshev_filter(x: &mut Block, apply: &impl Fn(&[f64]) -> Vec<f64>, lower: f64, upper: f64, degree: usize) {
    let e = (upper - lower) / 2.0;
    let c = (upper + lower) / 2.0;
    for col in x.iter_mut() {
        let mut prev = col.clone();
        let ly = apply(&prev);
        let mut cur: Vec<f64> = ly.iter().zip(&prev).map(|(a, v)| (a - c * v) / e).collect();
        for _ in 1..degree {
            let lc = apply(&cur);
            let next: Vec<f64> = lc
                .iter()
                .zip(&cur)
                .zip(&prev)
                .map(|((a, v), p)| 2.0 * (a - c * v) / e - p)
                .collect();
            prev = std::mem::replace(&mut cur, next);
            let scale = cur.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            if scale > 1e100 {
                cur.iter_mut().for_each(|v| *v /= scale);
                prev.iter_mut().for_each(|v| *v /= scale);
            }
        }
        *col = cur;
    }
}

fn rayleigh_ritz(x: &Block, lx: &Block) -> (Vec<f64>, Block, Block) {
    let b = x.len();
    let mut h = DMatrix::<f64>::zeros(b, b);
    for i in 0..b {
        for j in i..b {
            let v: f64 = x[i].iter().zip(&lx[j]).map(|(a, c)| a * c).sum();
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]).then(a.cmp(&c)));
    let combine = |src: &Block| -> Block {
        order
            .iter()
            .map(|&col| {
                let mut out = vec![0.0; src[0].len()];
                for (r, s) in src.iter().enumerate() {
                    let w = eig.eigenvectors[(r, col)];
                    out.iter_mut().zip(s).for_each(|(o, v)| *o += w * v);
                }
                out
            })
            .collect()
    };
    let theta = order.iter().map(|&c| eig.eigenvalues[c]).collect();
    (theta, combine(x), combine(lx))
}

fn orthonormalize(x: &mut Block) -> std::result::Result<(), String> {
    for j in 0..x.len() {
        for _ in 0..2 {
            for i in 0..j {
                let (done, rest) = x.split_at_mut(j);
                let c: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
                rest[0].iter_mut().zip(&done[i]).for_each(|(v, q)| *v -= c * q);
            }
        }
        let norm = x[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-300) || !norm.is_finite() {
            return Err("subspace basis collapsed".into());
        }
        x[j].iter_mut().for_each(|v| *v /= norm);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize) -> SparseSym {
        let rows = (0..n)
            .map(|i| {
                let mut r = Vec::new();
                if i > 0 {
                    r.push((i - 1, 1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, 1.0));
                }
                r
            })
            .collect();
        SparseSym::from_rows(rows).unwrap()
    }

    #[test]
    fn dense_handles_sparse_block_laplacian() {
        let edges = [
            (0, 7, 13.487750865776004),
            (3, 9, 16.181396367061094),
            (7, 14, 11.804142462253395),
            (13, 19, 20.053890524811045),
            (20, 25, 11.505375160409635),
            (20, 26, 14.029142650469673),
            (25, 26, 15.601111703823404),
        ];
        let n = 30;
        let mut l = Matrix::zeros(n, n);
        for &(i, j, w) in &edges {
            l.set(i, j, -w);
            l.set(j, i, -w);
            l.set(i, i, l.get(i, i) + w);
            l.set(j, j, l.get(j, j) + w);
        }
        let e = dense_bottom(&l, n).unwrap();
        assert_eq!(e.values.iter().filter(|v| v.abs() < 1e-9).count(), 24);
        for j in 0..n {
            for i in 0..n {
                let lv: f64 = (0..n).map(|k| l.get(i, k) * e.vectors.get(k, j)).sum();
                assert!((lv - e.values[j] * e.vectors.get(i, j)).abs() < 1e-9);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn path_spectrum_is_analytic() {
        let n = 40;
        let e = laplacian_bottom(&path_graph(n), 4, &EigenConfig::default()).unwrap();
        for (j, v) in e.values.iter().enumerate() {
            let exact = 2.0 - 2.0 * (std::f64::consts::PI * j as f64 / n as f64).cos();
            assert!((v - exact).abs() < 1e-10, "{j}: {v} vs {exact}");
        }
    }

    #[test]
    fn iterative_agrees_with_dense() {
        let n = 120;
        let g = path_graph(n);
        let cfg = EigenConfig {
            dense_limit: 0,
            ..Default::default()
        };
        let it = laplacian_bottom(&g, 5, &cfg).unwrap();
        let de = laplacian_bottom(&g, 5, &EigenConfig::default()).unwrap();
        assert!(it.warning.is_none());
        for j in 0..5 {
            assert!((it.values[j] - de.values[j]).abs() < 1e-9);
            let dot: f64 = (0..n).map(|i| it.vectors.get(i, j) * de.vectors.get(i, j)).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn iterative_finds_repeated_zero_eigenvalues() {
        // Three disjoint paths: the zero eigenvalue has multiplicity three.
        let mut rows = Vec::new();
        for block in 0..3 {
            let p = path_graph(30);
            for i in 0..30 {
                rows.push(p.row(i).map(|(j, v)| (j + 30 * block, v)).collect());
            }
        }
        let g = SparseSym::from_rows(rows).unwrap();
        let cfg = EigenConfig {
            dense_limit: 0,
            ..Default::default()
        };
        let e = laplacian_bottom(&g, 3, &cfg).unwrap();
        assert!(e.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn signs_are_normalized() {
        let e = laplacian_bottom(&path_graph(10), 3, &EigenConfig::default()).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = (0..10).map(|i| e.vectors.get(i, j)).collect();
            let max = col.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn too_many_vectors_rejected() {
        assert!(laplacian_bottom(&path_graph(3), 4, &EigenConfig::default()).is_err());
    }
}
