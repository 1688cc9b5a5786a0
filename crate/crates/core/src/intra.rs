//! Single-region detection on a symmetric within-region inference matrix.
//! One label vector is shared by both sides and pairs are unordered.

use rayon::prelude::*;

use crate::config::DetectConfig;
use crate::error::{Result, SccnError};
use crate::lambda::{default_threshold_prior, integrated_loglik};
use crate::model::{Bipartition, InferenceMatrix, InfrastructureGraph, LambdaTraceEntry, Matrix};
use crate::partition::objective::{check_lambda, evaluate};
use crate::partition::search::RegionCandidates;
use crate::partition::{project_weights, SearchGrid, SearchResult, Support};
use crate::pipeline::{detect_within_matrix, Detection, Fit};
use crate::rng::{derive_seed, Stream};

/// Detects densely altered sub-area pairs `(c, d)`, `c <= d`, inside one
/// region. `W` must be symmetric with a zero diagonal.
pub fn detect_within(w: InferenceMatrix, s: &InfrastructureGraph, cfg: &DetectConfig) -> Result<Detection> {
    let (n, m) = w.shape();
    if n != m {
        return Err(SccnError::Dimension(format!("within-region W must be square, got {n}x{m}")));
    }
    if s.n != n {
        return Err(SccnError::Dimension(format!(
            "W has {n} voxels, the infrastructure graph {}",
            s.n
        )));
    }
    if !w.values.is_symmetric() || !w.zstats.is_symmetric() {
        return Err(SccnError::InvalidArgument("within-region W must be symmetric".into()));
    }
    if (0..n).any(|i| w.values.get(i, i) != 0.0) {
        return Err(SccnError::InvalidArgument("within-region W must have a zero diagonal".into()));
    }
    detect_within_matrix(w, s, cfg)
}

/// Shared-label partition search: the candidate for `C` clusters is used
/// on both sides, so the grid is one-dimensional.
pub(crate) fn fit_shared(
    w: &InferenceMatrix,
    pvals: &Matrix,
    s: &InfrastructureGraph,
    grid: &SearchGrid,
    cfg: &DetectConfig,
    seed: u64,
) -> Result<Fit> {
    let n = w.shape().0;
    let prior = match &cfg.threshold_prior {
        Some(g) => g.clone(),
        None => default_threshold_prior(pvals),
    };
    let (wa, _) = project_weights(w, s, s)?;
    let cands = RegionCandidates::build(
        &wa,
        s,
        grid.c_min,
        grid.c_max,
        derive_seed(seed, Stream::Clustering, 0),
        &cfg.spectral,
    )?;
    let support = Support::new(w);
    let floor = grid.floor(n, n);
    let parts: Vec<(usize, Bipartition)> = cands
        .range()
        .map(|c| (c, Bipartition::new(cands.get(c).clone(), cands.get(c).clone())))
        .collect();
    let best_for = |lambda: f64| -> Result<SearchResult> {
        check_lambda(lambda)?;
        let scores: Vec<f64> = parts
            .par_iter()
            .map(|(_, p)| evaluate(&support, p, &prior, lambda, floor))
            .collect();
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        let (c, part) = &parts[best];
        let mut warnings = cands.warnings.clone();
        if *c == grid.c_max && *c < n {
            warnings.push(format!("selected C = {c} sits on the search boundary c_max"));
        }
        Ok(SearchResult {
            partition: part.clone(),
            objective: scores[best],
            cell: (*c, *c),
            warnings,
        })
    };
    let g0 = cfg.r0_prior.clone().unwrap_or_else(|| prior.clone());
    let (lambdas, source) = match cfg.lambda {
        Some(l) => (vec![l], "fixed"),
        None => (cfg.lambda_grid.clone(), "selected"),
    };
    let runs = lambdas
        .iter()
        .map(|&l| {
            let r = best_for(l)?;
            let ll = integrated_loglik(&support, &r.partition, &g0);
            Ok((r, ll))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for k in 1..runs.len() {
        if runs[k].1 > runs[best].1 {
            best = k;
        }
    }
    let trace = lambdas
        .iter()
        .zip(&runs)
        .map(|(&lambda, (r, ll))| LambdaTraceEntry {
            lambda,
            c: r.partition.c,
            d: r.partition.d,
            objective: r.objective,
            loglik: *ll,
        })
        .collect();
    Ok(Fit {
        lambda_hat: lambdas[best],
        lambda_source: source,
        trace,
        prior,
        result: runs[best].0.clone(),
    })
}
