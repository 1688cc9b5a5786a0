//! Comparison methods: Benjamini–Hochberg FDR, max-statistic permutation
//! FWER, and bipartite spectral graph partitioning.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SccnError};
use crate::inference::{EdgeModel, PermutationScheme};
use crate::model::{InferenceMatrix, Matrix, SubjectDataset};
use crate::partition::kmeans::{kmeans, DEFAULT_RESTARTS};
use crate::rng::{derive_seed, Stream};

const DEGREE_RIDGE: f64 = 1e-12;

/// BH-adjusted p-values (step-up, capped at 1), in input order.
pub fn bh_adjust(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    let mut running = 1.0f64;
    for rank in (0..n).rev() {
        let k = order[rank];
        running = running.min(p[k] * n as f64 / (rank + 1) as f64);
        out[k] = running.min(1.0);
    }
    out
}

/// Rejection mask of the BH step-up procedure at level `q`.
pub fn bh_fdr(p: &[f64], q: f64) -> Result<Vec<bool>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SccnError::InvalidArgument(format!("q = {q} outside (0, 1)")));
    }
    let n = p.len();
    let mut sorted: Vec<f64> = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cutoff = None;
    for (rank, &v) in sorted.iter().enumerate() {
        if v <= (rank + 1) as f64 * q / n as f64 {
            cutoff = Some(v);
        }
    }
    Ok(match cutoff {
        Some(c) => p.iter().map(|&v| v <= c).collect(),
        None => vec![false; n],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxT {
    pub threshold: f64,
    /// Row-major rejection mask.
    pub reject: Vec<bool>,
    /// Per-permutation maxima of `|z|`, in permutation order.
    pub maxima: Vec<f64>,
}

/// Edge-wise FWER control with the permutation distribution of `max |z|`.
pub fn maxt_fwer(ds: &SubjectDataset, h: usize, alpha: f64, seed: u64) -> Result<MaxT> {
    let model = EdgeModel::new(ds, true)?;
    let observed = model.observed()?;
    maxt_from_model(&model, &observed.zstats, h, alpha, seed, PermutationScheme::Shuffle)
}

pub fn maxt_from_model(
    model: &EdgeModel,
    zstats: &Matrix,
    h: usize,
    alpha: f64,
    seed: u64,
    scheme: PermutationScheme,
) -> Result<MaxT> {
    if h == 0 {
        return Err(SccnError::InvalidArgument("need at least one permutation".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SccnError::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")));
    }
    let maxima = (0..h)
        .into_par_iter()
        .map(|k| {
            let stats = model.fit_permuted(derive_seed(seed, Stream::Baseline, k as u64), scheme)?;
            Ok(stats.zstats.as_slice().iter().fold(0.0f64, |a, z| a.max(z.abs())))
        })
        .collect::<Result<Vec<f64>>>()?;
    let threshold = maxt_threshold(&maxima, alpha);
    Ok(MaxT {
        threshold,
        reject: zstats.as_slice().iter().map(|z| z.abs() > threshold).collect(),
        maxima,
    })
}

/// Empirical `1 - alpha` quantile of the permutation maxima: the order
/// statistic at rank `ceil((1 - alpha) H)`.
pub fn maxt_threshold(maxima: &[f64], alpha: f64) -> f64 {
    let mut sorted = maxima.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = sorted.len();
    let rank = (((1.0 - alpha) * h as f64).ceil() as usize).clamp(1, h);
    sorted[rank - 1]
}

/// Co-cluster labels over both regions; a co-cluster may be empty on one side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoClusters {
    pub k: usize,
    pub u_labels: Vec<usize>,
    pub v_labels: Vec<usize>,
}

impl CoClusters {
    /// `(U members, V members)` of co-cluster `c`.
    pub fn members(&self, c: usize) -> (Vec<usize>, Vec<usize>) {
        let pick = |l: &[usize]| l.iter().enumerate().filter(|&(_, &x)| x == c).map(|(i, _)| i).collect();
        (pick(&self.u_labels), pick(&self.v_labels))
    }

    /// Fraction of nonzero entries inside co-cluster `c`; `None` if one side is empty.
    pub fn support_density(&self, w: &Matrix, c: usize) -> Option<f64> {
        let (u, v) = self.members(c);
        if u.is_empty() || v.is_empty() {
            return None;
        }
        let hits = u
            .iter()
            .map(|&i| v.iter().filter(|&&j| w.get(i, j) > 0.0).count())
            .sum::<usize>();
        Some(hits as f64 / (u.len() * v.len()) as f64)
    }

    /// Co-clusters denser than the matrix as a whole.
    pub fn informative(&self, w: &Matrix) -> Vec<usize> {
        let total = w.as_slice().iter().filter(|&&v| v > 0.0).count() as f64 / w.as_slice().len().max(1) as f64;
        (0..self.k)
            .filter(|&c| self.support_density(w, c).is_some_and(|d| d > total))
            .collect()
    }
}

/// Bipartite spectral co-clustering with `k` singular vectors of the
/// degree-normalized matrix.
pub fn bsgp(w: &InferenceMatrix, k: usize, seed: u64) -> Result<CoClusters> {
    let (n, m) = w.shape();
    if k < 2 || k > n.min(m) {
        return Err(SccnError::InvalidArgument(format!(
            "BSGP needs 2 <= k <= min(n, m) = {}, got {k}",
            n.min(m)
        )));
    }
    let vals = &w.values;
    let d1: Vec<f64> = (0..n).map(|i| 1.0 / (vals.row(i).iter().sum::<f64>() + DEGREE_RIDGE).sqrt()).collect();
    let d2: Vec<f64> = (0..m)
        .map(|j| 1.0 / ((0..n).map(|i| vals.get(i, j)).sum::<f64>() + DEGREE_RIDGE).sqrt())
        .collect();
    let a = DMatrix::from_fn(n, m, |i, j| d1[i] * vals.get(i, j) * d2[j]);
    let gram = &a * a.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let mut z = Matrix::zeros(n + m, k);
    for (col, &e) in order.iter().take(k).enumerate() {
        let u = eig.eigenvectors.column(e);
        let sigma = eig.eigenvalues[e].max(0.0).sqrt();
        let sign = if u.iter().fold(0.0f64, |acc, &x| if x.abs() > acc.abs() { x } else { acc }) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            z.set(i, col, sign * d1[i] * u[i]);
        }
        if sigma > 1e-12 {
            let v = a.transpose() * u;
            for j in 0..m {
                z.set(n + j, col, sign * d2[j] * v[j] / sigma);
            }
        }
    }
    let labels = kmeans(&z, k, derive_seed(seed, Stream::Baseline, k as u64), DEFAULT_RESTARTS)?;
    let labels = labels.labels();
    Ok(CoClusters {
        k,
        u_labels: labels[..n].to_vec(),
        v_labels: labels[n..].to_vec(),
    })
}

/// BSGP over `k` in `ks`, keeping the co-clustering with the highest mean
/// within-co-cluster support density (ties to smaller `k`).
pub fn bsgp_select(w: &InferenceMatrix, ks: std::ops::RangeInclusive<usize>, seed: u64) -> Result<CoClusters> {
    let (n, m) = w.shape();
    let hi = (*ks.end()).min(n.min(m));
    let mut best: Option<(f64, CoClusters)> = None;
    for k in *ks.start()..=hi {
        let cc = bsgp(w, k, seed)?;
        let dens: Vec<f64> = (0..k).filter_map(|c| cc.support_density(&w.values, c)).collect();
        let score = if dens.is_empty() { 0.0 } else { dens.iter().sum::<f64>() / dens.len() as f64 };
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cc));
        }
    }
    best.map(|(_, cc)| cc)
        .ok_or_else(|| SccnError::InvalidArgument("empty BSGP k range".into()))
}
