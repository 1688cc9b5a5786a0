//! Edge-wise association tests between connectivity and the primary covariate.
//!
//! Each edge is fit with `Y = a0 + x1 * beta + X_rest * alpha + e` by
//! least squares. The design is shared by all edges, so the nuisance part is
//! projected out of the responses once (Frisch–Waugh–Lovell) and every
//! subsequent fit, including permuted ones, is a single weighted pass over
//! the residualized data.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SccnError};
use crate::model::{InferenceMatrix, Matrix, SubjectDataset};
use crate::rng::{derived_rng, Stream};
use crate::stats::{normal_upper_quantile, t_two_sided_p, t_upper_p, P_FLOOR};

const EDGE_CHUNK: usize = 4096;
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationScheme {
    /// Shuffle the primary covariate, nuisance columns fixed.
    Shuffle,
    /// Permute reduced-model residuals (Freedman–Lane).
    FreedmanLane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub screen_p: f64,
    pub two_sided: bool,
    pub corr_clamp: f64,
    pub scheme: PermutationScheme,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            screen_p: 0.05,
            two_sided: true,
            corr_clamp: 1.0 - 1e-7,
            scheme: PermutationScheme::Shuffle,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.screen_p > 0.0 && self.screen_p <= 1.0) {
            return Err(SccnError::InvalidArgument(format!(
                "screen_p {} outside (0, 1]",
                self.screen_p
            )));
        }
        if !(self.corr_clamp > 0.0 && self.corr_clamp < 1.0) {
            return Err(SccnError::InvalidArgument(format!(
                "corr_clamp {} outside (0, 1)",
                self.corr_clamp
            )));
        }
        Ok(())
    }
}

/// Per-edge p-values, normal-scale statistics and slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub pvals: Matrix,
    pub zstats: Matrix,
    pub beta: Matrix,
    pub df: f64,
}

/// Fisher z-transformed Pearson correlations between the rows of two
/// time-series matrices (voxels x time points).
pub fn fisher_z(a: &Matrix, b: &Matrix, corr_clamp: f64) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(SccnError::Dimension(format!(
            "time series lengths differ: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    if a.cols() < 3 {
        return Err(SccnError::InvalidArgument(format!(
            "need at least 3 time points, got {}",
            a.cols()
        )));
    }
    let za = standardize_rows(a, "A")?;
    let zb = standardize_rows(b, "B")?;
    let t = a.cols();
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        let r: f64 = za[i * t..(i + 1) * t]
            .iter()
            .zip(&zb[j * t..(j + 1) * t])
            .map(|(x, y)| x * y)
            .sum();
        r.clamp(-corr_clamp, corr_clamp).atanh()
    }))
}

fn standardize_rows(m: &Matrix, region: &str) -> Result<Vec<f64>> {
    let t = m.cols();
    let mut out = Vec::with_capacity(m.rows() * t);
    for i in 0..m.rows() {
        let row = m.row(i);
        let mean = row.iter().sum::<f64>() / t as f64;
        let ss: f64 = row.iter().map(|v| (v - mean).powi(2)).sum();
        if !(ss > 0.0) {
            return Err(SccnError::ZeroVariance {
                region: region.to_string(),
                voxel: i,
            });
        }
        let norm = ss.sqrt();
        out.extend(row.iter().map(|v| (v - mean) / norm));
    }
    Ok(out)
}

/// Prepared edge-wise regression over one dataset.
///
/// Holds the responses with the intercept and nuisance covariates projected
/// out, so a fit for any primary-covariate vector costs one pass over the
/// data.
#[derive(Debug, Clone)]
pub struct EdgeModel {
    rows: usize,
    cols: usize,
    residuals: Vec<Vec<f64>>,
    resid_ss: Vec<f64>,
    basis: Vec<Vec<f64>>,
    primary: Vec<f64>,
    df: f64,
    two_sided: bool,
}

impl EdgeModel {
    /// Builds the model from a borrowed dataset (copies the connectivity data).
    pub fn new(ds: &SubjectDataset, two_sided: bool) -> Result<Self> {
        Self::from_dataset(ds.clone(), two_sided)
    }

    /// Builds the model by residualizing the dataset's connectivity in place.
    pub fn from_dataset(ds: SubjectDataset, two_sided: bool) -> Result<Self> {
        let s = ds.len();
        let p = ds.covariate_names.len();
        if ds.primary_index >= p {
            return Err(SccnError::InvalidArgument(format!(
                "primary index {} out of range for {p} covariates",
                ds.primary_index
            )));
        }
        if s < p + 2 {
            return Err(SccnError::InvalidArgument(format!(
                "need more than {} subjects for {p} covariates, got {s}",
                p + 1
            )));
        }
        let (rows, cols) = ds.shape();
        check_rank(&ds)?;
        let primary = ds.primary();

        let mut columns = vec![vec![1.0; s]];
        for k in (0..p).filter(|&k| k != ds.primary_index) {
            columns.push(ds.subjects.iter().map(|x| x.covariates[k]).collect());
        }
        let basis = orthonormalize(columns).map_err(|_| {
            SccnError::Numeric("nuisance design lost rank after the rank check".into())
        })?;

        let mut residuals: Vec<Vec<f64>> =
            ds.subjects.into_iter().map(|x| x.connectivity.into_vec()).collect();
        let coefs = weighted_sums(&residuals, &basis);
        let edges = rows * cols;
        residuals.par_iter_mut().enumerate().for_each(|(si, r)| {
            for (q, c) in basis.iter().zip(&coefs) {
                let w = q[si];
                for e in 0..edges {
                    r[e] -= w * c[e];
                }
            }
        });
        let resid_ss = sum_squares(&residuals, edges);
        Ok(EdgeModel {
            rows,
            cols,
            residuals,
            resid_ss,
            basis,
            primary,
            df: (s - p - 1) as f64,
            two_sided,
        })
    }

    pub fn subjects(&self) -> usize {
        self.residuals.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn primary(&self) -> &[f64] {
        &self.primary
    }

    pub fn observed(&self) -> Result<EdgeStats> {
        self.fit(&self.primary)
    }

    /// Fits every edge with `x` as the primary covariate (nuisance fixed).
    pub fn fit(&self, x: &[f64]) -> Result<EdgeStats> {
        if x.len() != self.subjects() {
            return Err(SccnError::Dimension(format!(
                "primary covariate has {} entries for {} subjects",
                x.len(),
                self.subjects()
            )));
        }
        let xt = self.project_out(x);
        let sxx: f64 = xt.iter().map(|v| v * v).sum();
        let sx: f64 = x.iter().map(|v| v * v).sum();
        if sxx <= COLLINEAR_TOL * sx.max(1.0) {
            return Err(SccnError::RankDeficient(vec!["primary covariate".into()]));
        }
        let num = weighted_sums(&self.residuals, std::slice::from_ref(&xt))
            .pop()
            .expect("one weight vector");
        Ok(self.finish(&num, sxx, &self.resid_ss))
    }

    /// Fits several primary vectors in one pass over the data.
    pub fn fit_many(&self, xs: &[Vec<f64>]) -> Result<Vec<EdgeStats>> {
        let mut weights = Vec::with_capacity(xs.len());
        let mut sxxs = Vec::with_capacity(xs.len());
        for x in xs {
            if x.len() != self.subjects() {
                return Err(SccnError::Dimension(format!(
                    "primary covariate has {} entries for {} subjects",
                    x.len(),
                    self.subjects()
                )));
            }
            let xt = self.project_out(x);
            let sxx: f64 = xt.iter().map(|v| v * v).sum();
            let sx: f64 = x.iter().map(|v| v * v).sum();
            if sxx <= COLLINEAR_TOL * sx.max(1.0) {
                return Err(SccnError::RankDeficient(vec!["primary covariate".into()]));
            }
            weights.push(xt);
            sxxs.push(sxx);
        }
        let nums = weighted_sums(&self.residuals, &weights);
        Ok(nums
            .iter()
            .zip(sxxs)
            .map(|(num, sxx)| self.finish(num, sxx, &self.resid_ss))
            .collect())
    }

    /// Shuffled primary vector for permutation `seed`.
    pub fn permuted_primary(&self, seed: u64) -> Vec<f64> {
        permutation(self.subjects(), seed).iter().map(|&k| self.primary[k]).collect()
    }

    /// Fit under a seeded permutation of subjects, following `scheme`.
    pub fn fit_permuted(&self, seed: u64, scheme: PermutationScheme) -> Result<EdgeStats> {
        let perm = permutation(self.subjects(), seed);
        match scheme {
            PermutationScheme::Shuffle => {
                let x: Vec<f64> = perm.iter().map(|&k| self.primary[k]).collect();
                self.fit(&x)
            }
            PermutationScheme::FreedmanLane => self.fit_freedman_lane(&perm),
        }
    }

    // With Y* = fitted_N + P R, the full-model fit on Y* only needs dot
    // products of the residual rows with inversely permuted weight vectors.
    fn fit_freedman_lane(&self, perm: &[usize]) -> Result<EdgeStats> {
        let s = self.subjects();
        let xt = self.project_out(&self.primary);
        let sxx: f64 = xt.iter().map(|v| v * v).sum();
        let scatter = |w: &[f64]| {
            let mut out = vec![0.0; s];
            for (a, &b) in perm.iter().enumerate() {
                out[b] = w[a];
            }
            out
        };
        let mut weights = vec![scatter(&xt)];
        weights.extend(self.basis.iter().map(|q| scatter(q)));
        let mut sums = weighted_sums(&self.residuals, &weights);
        let num = sums.remove(0);
        let ss: Vec<f64> = (0..self.rows * self.cols)
            .map(|e| self.resid_ss[e] - sums.iter().map(|c| c[e] * c[e]).sum::<f64>())
            .collect();
        Ok(self.finish(&num, sxx, &ss))
    }

    fn project_out(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for q in &self.basis {
            let c: f64 = q.iter().zip(x).map(|(a, b)| a * b).sum();
            for (o, qv) in out.iter_mut().zip(q) {
                *o -= c * qv;
            }
        }
        out
    }

    fn finish(&self, num: &[f64], sxx: f64, ss: &[f64]) -> EdgeStats {
        finish_stats(self.rows, self.cols, num, sxx, ss, self.df, self.two_sided)
    }
}

fn finish_stats(rows: usize, cols: usize, num: &[f64], sxx: f64, ss: &[f64], df: f64, two_sided: bool) -> EdgeStats {
    let results: Vec<(f64, f64, f64)> = num
        .par_iter()
        .zip(ss.par_iter())
        .with_min_len(EDGE_CHUNK)
        .map(|(&nu, &ss)| edge_test(nu, sxx, ss, df, two_sided))
        .collect();
    let mut p = Vec::with_capacity(results.len());
    let mut z = Vec::with_capacity(results.len());
    let mut b = Vec::with_capacity(results.len());
    for (pv, zv, bv) in results {
        p.push(pv);
        z.push(zv);
        b.push(bv);
    }
    let mk = |v| Matrix::from_vec(rows, cols, v).expect("edge count");
    EdgeStats {
        pvals: mk(p),
        zstats: mk(z),
        beta: mk(b),
        df,
    }
}

fn edge_test(num: f64, sxx: f64, ss: f64, df: f64, two_sided: bool) -> (f64, f64, f64) {
    let beta = num / sxx;
    let rss = (ss - num * num / sxx).max(0.0);
    let se = (rss / df / sxx).sqrt();
    let t = if se > 0.0 {
        beta / se
    } else if beta == 0.0 {
        0.0
    } else {
        beta.signum() * f64::INFINITY
    };
    if two_sided {
        let p = t_two_sided_p(t, df);
        let z = if beta == 0.0 {
            0.0
        } else {
            beta.signum() * normal_upper_quantile(p / 2.0)
        };
        (p, z, beta)
    } else {
        let p = t_upper_p(t, df);
        (p, normal_upper_quantile(p), beta)
    }
}

/// Observed edge-wise fit accumulated one subject at a time, for data too
/// large to hold in memory. Subjects must be pushed in design order.
#[derive(Debug, Clone)]
pub struct StreamingFit {
    rows: usize,
    cols: usize,
    basis: Vec<Vec<f64>>,
    xt: Vec<f64>,
    sxx: f64,
    df: f64,
    two_sided: bool,
    next: usize,
    sum_sq: Vec<f64>,
    proj: Vec<Vec<f64>>,
    num: Vec<f64>,
}

impl StreamingFit {
    /// `covariates` holds one row per subject, in push order.
    pub fn new(
        covariate_names: &[String],
        covariates: &[Vec<f64>],
        primary_index: usize,
        shape: (usize, usize),
        two_sided: bool,
    ) -> Result<Self> {
        let s = covariates.len();
        let p = covariate_names.len();
        if primary_index >= p {
            return Err(SccnError::InvalidArgument(format!(
                "primary index {primary_index} out of range for {p} covariates"
            )));
        }
        if s < p + 2 {
            return Err(SccnError::InvalidArgument(format!(
                "need more than {} subjects for {p} covariates, got {s}",
                p + 1
            )));
        }
        if let Some(row) = covariates.iter().position(|r| r.len() != p) {
            return Err(SccnError::Dimension(format!("covariate row {row} does not have {p} entries")));
        }
        let rows: Vec<&[f64]> = covariates.iter().map(Vec::as_slice).collect();
        check_design(covariate_names, &rows, primary_index)?;
        let mut columns = vec![vec![1.0; s]];
        for k in (0..p).filter(|&k| k != primary_index) {
            columns.push(covariates.iter().map(|r| r[k]).collect());
        }
        let basis = orthonormalize(columns)
            .map_err(|_| SccnError::Numeric("nuisance design lost rank after the rank check".into()))?;
        let mut xt: Vec<f64> = covariates.iter().map(|r| r[primary_index]).collect();
        for q in &basis {
            let c: f64 = q.iter().zip(&xt).map(|(a, b)| a * b).sum();
            for (o, qv) in xt.iter_mut().zip(q) {
                *o -= c * qv;
            }
        }
        let sxx = xt.iter().map(|v| v * v).sum();
        let edges = shape.0 * shape.1;
        Ok(StreamingFit {
            rows: shape.0,
            cols: shape.1,
            proj: vec![vec![0.0; edges]; basis.len()],
            basis,
            xt,
            sxx,
            df: (s - p - 1) as f64,
            two_sided,
            next: 0,
            sum_sq: vec![0.0; edges],
            num: vec![0.0; edges],
        })
    }

    pub fn push(&mut self, connectivity: &Matrix) -> Result<()> {
        if self.next >= self.xt.len() {
            return Err(SccnError::InvalidArgument("more subjects than design rows".into()));
        }
        if connectivity.shape() != (self.rows, self.cols) {
            return Err(SccnError::Dimension(format!(
                "subject {} has shape {:?}, expected {:?}",
                self.next,
                connectivity.shape(),
                (self.rows, self.cols)
            )));
        }
        let s = self.next;
        let y = connectivity.as_slice();
        let xs = self.xt[s];
        let qs: Vec<f64> = self.basis.iter().map(|q| q[s]).collect();
        let mut proj: Vec<&mut [f64]> = self.proj.iter_mut().map(|v| v.as_mut_slice()).collect();
        let mut proj_chunks: Vec<std::slice::ChunksMut<'_, f64>> =
            proj.iter_mut().map(|v| v.chunks_mut(EDGE_CHUNK)).collect();
        let mut work = Vec::new();
        for ((ss, num), yc) in self
            .sum_sq
            .chunks_mut(EDGE_CHUNK)
            .zip(self.num.chunks_mut(EDGE_CHUNK))
            .zip(y.chunks(EDGE_CHUNK))
        {
            let pc: Vec<&mut [f64]> = proj_chunks.iter_mut().map(|it| it.next().expect("same length")).collect();
            work.push((ss, num, pc, yc));
        }
        work.into_par_iter().for_each(|(ss, num, mut pc, yc)| {
            for (k, &v) in yc.iter().enumerate() {
                ss[k] += v * v;
                num[k] += xs * v;
            }
            for (p, &q) in pc.iter_mut().zip(&qs) {
                for (a, &v) in p.iter_mut().zip(yc) {
                    *a += q * v;
                }
            }
        });
        self.next += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<EdgeStats> {
        if self.next != self.xt.len() {
            return Err(SccnError::InvalidArgument(format!(
                "received {} of {} subjects",
                self.next,
                self.xt.len()
            )));
        }
        let ss: Vec<f64> = (0..self.sum_sq.len())
            .map(|e| self.sum_sq[e] - self.proj.iter().map(|c| c[e] * c[e]).sum::<f64>())
            .collect();
        Ok(finish_stats(self.rows, self.cols, &self.num, self.sxx, &ss, self.df, self.two_sided))
    }
}

/// Edge-wise regression of connectivity on the primary covariate.
pub fn edge_regression(ds: &SubjectDataset, cfg: &RegressionConfig) -> Result<EdgeStats> {
    EdgeModel::new(ds, cfg.two_sided)?.observed()
}

/// Screened `-ln p` matrix: entries with `p <= screen_p` keep `-ln p`, the
/// rest are zero.
pub fn build_inference_matrix(
    pvals: &Matrix,
    zstats: &Matrix,
    cfg: &RegressionConfig,
) -> Result<InferenceMatrix> {
    cfg.validate()?;
    if pvals.shape() != zstats.shape() {
        return Err(SccnError::Dimension(format!(
            "pvals {:?} vs zstats {:?}",
            pvals.shape(),
            zstats.shape()
        )));
    }
    let (n, m) = pvals.shape();
    let values = Matrix::from_fn(n, m, |i, j| {
        let p = pvals.get(i, j).max(P_FLOOR);
        if p <= cfg.screen_p {
            -p.ln()
        } else {
            0.0
        }
    });
    InferenceMatrix::new(values, cfg.screen_p, zstats.clone())
}

/// Seeded uniform permutation of `0..n`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derived_rng(seed, Stream::Permutation, 0));
    idx
}

/// Dataset with the primary covariate shuffled across subjects.
pub fn permute_primary(ds: &SubjectDataset, seed: u64) -> SubjectDataset {
    let perm = permutation(ds.len(), seed);
    let x = ds.primary();
    let mut out = ds.clone();
    for (s, &k) in perm.iter().enumerate() {
        out.subjects[s].covariates[ds.primary_index] = x[k];
    }
    out
}

fn check_rank(ds: &SubjectDataset) -> Result<()> {
    let rows: Vec<&[f64]> = ds.subjects.iter().map(|x| x.covariates.as_slice()).collect();
    check_design(&ds.covariate_names, &rows, ds.primary_index)
}

fn check_design(covariate_names: &[String], rows: &[&[f64]], primary_index: usize) -> Result<()> {
    let p = covariate_names.len();
    let mut order = vec![primary_index];
    order.extend((0..p).filter(|&k| k != primary_index));
    let mut names = vec!["intercept".to_string()];
    let mut columns = vec![vec![1.0; rows.len()]];
    for k in order {
        names.push(covariate_names[k].clone());
        columns.push(rows.iter().map(|x| x[k]).collect());
    }
    match orthonormalize(columns) {
        Ok(_) => Ok(()),
        Err(bad) => Err(SccnError::RankDeficient(
            bad.into_iter().map(|k| names[k].clone()).collect(),
        )),
    }
}

/// Modified Gram–Schmidt with one reorthogonalization pass. On failure
/// returns the indices of columns dependent on earlier ones.
fn orthonormalize(columns: Vec<Vec<f64>>) -> std::result::Result<Vec<Vec<f64>>, Vec<usize>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut bad = Vec::new();
    for (k, mut v) in columns.into_iter().enumerate() {
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for q in &basis {
                let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (x, qv) in v.iter_mut().zip(q) {
                    *x -= c * qv;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= COLLINEAR_TOL * norm0.max(1.0) {
            bad.push(k);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    if bad.is_empty() {
        Ok(basis)
    } else {
        Err(bad)
    }
}

/// For each weight vector `w`, the per-edge sums `sum_s w[s] * data[s][e]`.
/// Subjects are always accumulated in order, so results do not depend on
/// the number of worker threads.
fn weighted_sums(data: &[Vec<f64>], weights: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let edges = data.first().map_or(0, Vec::len);
    let chunks: Vec<Vec<Vec<f64>>> = (0..edges)
        .step_by(EDGE_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + EDGE_CHUNK).min(edges);
            let mut acc = vec![vec![0.0; end - start]; weights.len()];
            for (s, row) in data.iter().enumerate() {
                let row = &row[start..end];
                for (a, w) in acc.iter_mut().zip(weights) {
                    let ws = w[s];
                    if ws == 0.0 {
                        continue;
                    }
                    for (x, y) in a.iter_mut().zip(row) {
                        *x += ws * y;
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![Vec::with_capacity(edges); weights.len()];
    for chunk in chunks {
        for (o, c) in out.iter_mut().zip(chunk) {
            o.extend(c);
        }
    }
    out
}

fn sum_squares(data: &[Vec<f64>], edges: usize) -> Vec<f64> {
    let chunks: Vec<Vec<f64>> = (0..edges)
        .step_by(EDGE_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + EDGE_CHUNK).min(edges);
            let mut acc = vec![0.0; end - start];
            for row in data {
                for (a, y) in acc.iter_mut().zip(&row[start..end]) {
                    *a += y * y;
                }
            }
            acc
        })
        .collect();
    chunks.concat()
}
