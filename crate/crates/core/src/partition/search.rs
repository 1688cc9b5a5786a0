//! Grid search over the numbers of sub-areas in each region.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SccnError};
use crate::model::{Bipartition, InferenceMatrix, InfrastructureGraph, Labeling, ThresholdPrior};
use crate::rng::{derive_seed, Stream};
use crate::spatial::split_noncontiguous;

use super::eigen::{laplacian_bottom, EigenConfig};
use super::kmeans::{kmeans, DEFAULT_RESTARTS};
use super::objective::{check_lambda, evaluate_terms, Support};
use super::sparse::{project_weights, SparseSym};

pub const DEFAULT_GRID_MAX: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub c_min: usize,
    pub c_max: usize,
    pub d_min: usize,
    pub d_max: usize,
    /// `None` means `1 / (n m)`.
    pub density_floor: Option<f64>,
}

impl SearchGrid {
    pub fn new(c_max: usize, d_max: usize) -> Self {
        SearchGrid {
            c_min: 1,
            c_max,
            d_min: 1,
            d_max,
            density_floor: None,
        }
    }

    /// Default bounds `min(n, 64)` and `min(m, 64)`.
    pub fn for_shape(n: usize, m: usize) -> Self {
        SearchGrid::new(n.min(DEFAULT_GRID_MAX), m.min(DEFAULT_GRID_MAX))
    }

    pub fn floor(&self, n: usize, m: usize) -> f64 {
        self.density_floor.unwrap_or(1.0 / (n as f64 * m as f64))
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let ok = 1 <= self.c_min
            && self.c_min <= self.c_max
            && self.c_max <= n
            && 1 <= self.d_min
            && self.d_min <= self.d_max
            && self.d_max <= m;
        if !ok {
            return Err(SccnError::InvalidArgument(format!(
                "search grid C {}..={}, D {}..={} does not fit a {n}x{m} matrix",
                self.c_min, self.c_max, self.d_min, self.d_max
            )));
        }
        if let Some(f) = self.density_floor {
            if !(f > 0.0 && f.is_finite()) {
                return Err(SccnError::InvalidArgument(format!("density floor {f} must be positive")));
            }
        }
        Ok(())
    }

    /// Grid restricted to `[lo, hi]` in both directions, clamped to this grid.
    pub fn window(&self, c: (usize, usize), d: (usize, usize)) -> SearchGrid {
        let clamp = |(lo, hi): (usize, usize), min: usize, max: usize| {
            let lo = lo.clamp(min, max);
            (lo, hi.clamp(lo, max))
        };
        let (c_min, c_max) = clamp(c, self.c_min, self.c_max);
        let (d_min, d_max) = clamp(d, self.d_min, self.d_max);
        SearchGrid {
            c_min,
            c_max,
            d_min,
            d_max,
            density_floor: self.density_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub restarts: usize,
    pub eigen: EigenConfigSerde,
}

/// Serializable mirror of [`EigenConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenConfigSerde {
    pub tol: f64,
    pub max_iter: usize,
    pub dense_limit: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        let e = EigenConfig::default();
        SpectralConfig {
            restarts: DEFAULT_RESTARTS,
            eigen: EigenConfigSerde {
                tol: e.tol,
                max_iter: e.max_iter,
                dense_limit: e.dense_limit,
            },
        }
    }
}

impl SpectralConfig {
    pub fn eigen_config(&self) -> EigenConfig {
        EigenConfig {
            tol: self.eigen.tol,
            max_iter: self.eigen.max_iter,
            dense_limit: self.eigen.dense_limit,
            ..EigenConfig::default()
        }
    }
}

/// Ratio-cut spectral clustering of a nonnegative symmetric similarity
/// matrix into `clusters` groups.
pub fn ratio_cut_cluster(m: &SparseSym, clusters: usize, seed: u64, cfg: &SpectralConfig) -> Result<Labeling> {
    let n = m.n();
    if clusters == 0 || clusters > n {
        return Err(SccnError::InvalidArgument(format!(
            "cannot form {clusters} clusters from {n} nodes"
        )));
    }
    if clusters == 1 {
        return Ok(Labeling::single(n));
    }
    let e = laplacian_bottom(m, clusters, &cfg.eigen_config())?;
    kmeans(&e.vectors, clusters, seed, cfg.restarts)
}

/// Contiguity-enforced labelings of one region for every cluster count in
/// `lo..=hi`, from one shared eigendecomposition.
#[derive(Debug, Clone)]
pub struct RegionCandidates {
    pub lo: usize,
    pub labelings: Vec<Labeling>,
    pub warnings: Vec<String>,
}

impl RegionCandidates {
    pub fn build(
        m: &SparseSym,
        s: &InfrastructureGraph,
        lo: usize,
        hi: usize,
        seed: u64,
        cfg: &SpectralConfig,
    ) -> Result<Self> {
        let eig = laplacian_bottom(m, hi, &cfg.eigen_config())?;
        let labelings = (lo..=hi)
            .into_par_iter()
            .map(|k| {
                if k == 1 {
                    return Ok(Labeling::single(m.n()));
                }
                let prefix = crate::model::Matrix::from_fn(m.n(), k, |i, j| eig.vectors.get(i, j));
                let l = kmeans(&prefix, k, derive_seed(seed, Stream::Clustering, k as u64), cfg.restarts)?;
                Ok(split_noncontiguous(&l, s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RegionCandidates {
            lo,
            labelings,
            warnings: eig.warning.into_iter().collect(),
        })
    }

    pub fn get(&self, k: usize) -> &Labeling {
        &self.labelings[k - self.lo]
    }

    pub fn range(&self) -> std::ops::RangeInclusive<usize> {
        self.lo..=self.lo + self.labelings.len() - 1
    }
}

/// Candidate labelings for both regions over a search grid.
#[derive(Debug, Clone)]
pub struct Candidates {
    pub grid: SearchGrid,
    pub u: RegionCandidates,
    pub v: RegionCandidates,
}

impl Candidates {
    pub fn build(
        w: &InferenceMatrix,
        sa: &InfrastructureGraph,
        sb: &InfrastructureGraph,
        grid: &SearchGrid,
        seed: u64,
        cfg: &SpectralConfig,
    ) -> Result<Self> {
        let (n, m) = w.shape();
        grid.validate(n, m)?;
        let (wa, wb) = project_weights(w, sa, sb)?;
        let u = RegionCandidates::build(&wa, sa, grid.c_min, grid.c_max, derive_seed(seed, Stream::Clustering, 0), cfg)?;
        let v = RegionCandidates::build(&wb, sb, grid.d_min, grid.d_max, derive_seed(seed, Stream::Clustering, 1), cfg)?;
        Ok(Candidates { grid: *grid, u, v })
    }

    pub fn warnings(&self) -> Vec<String> {
        self.u.warnings.iter().chain(&self.v.warnings).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub partition: Bipartition,
    pub objective: f64,
    /// Cluster counts of the winning grid cell, before contiguity splitting.
    pub cell: (usize, usize),
    pub warnings: Vec<String>,
}

/// Best grid cell for one lambda. Ties go to the smaller cell `C`, then `D`.
pub fn best_partition(
    support: &Support,
    cands: &Candidates,
    g: &ThresholdPrior,
    lambda: f64,
) -> Result<SearchResult> {
    Ok(best_partitions(support, cands, g, &[lambda])?.remove(0))
}

/// Best grid cell for each lambda, scoring every cell once.
pub fn best_partitions(
    support: &Support,
    cands: &Candidates,
    g: &ThresholdPrior,
    lambdas: &[f64],
) -> Result<Vec<SearchResult>> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    let floor = cands.grid.floor(support.n, support.m);
    let cells: Vec<(usize, usize)> = cands
        .u
        .range()
        .flat_map(|c| cands.v.range().map(move |d| (c, d)))
        .collect();
    let terms: Vec<(f64, f64)> = cells
        .par_iter()
        .map(|&(c, d)| {
            let part = Bipartition::new(cands.u.get(c).clone(), cands.v.get(d).clone());
            evaluate_terms(support, &part, g, floor)
        })
        .collect();
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let score = |k: usize| terms[k].0 + lambda * terms[k].1;
            let mut best = 0;
            for k in 1..terms.len() {
                if score(k) > score(best) {
                    best = k;
                }
            }
            let (c, d) = cells[best];
            let mut warnings = cands.warnings();
            if c == cands.grid.c_max && c < support.n {
                warnings.push(format!("selected C = {c} sits on the search boundary c_max"));
            }
            if d == cands.grid.d_max && d < support.m {
                warnings.push(format!("selected D = {d} sits on the search boundary d_max"));
            }
            SearchResult {
                partition: Bipartition::new(cands.u.get(c).clone(), cands.v.get(d).clone()),
                objective: score(best),
                cell: (c, d),
                warnings,
            }
        })
        .collect())
}

/// Spectral partition search maximizing the objective over the grid.
pub fn search_partition(
    w: &InferenceMatrix,
    sa: &InfrastructureGraph,
    sb: &InfrastructureGraph,
    g: &ThresholdPrior,
    lambda: f64,
    grid: &SearchGrid,
    seed: u64,
    cfg: &SpectralConfig,
) -> Result<SearchResult> {
    check_lambda(lambda)?;
    let cands = Candidates::build(w, sa, sb, grid, seed, cfg)?;
    best_partition(&Support::new(w), &cands, g, lambda)
}
