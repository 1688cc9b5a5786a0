//! End-to-end detection: edge inference, screening, threshold prior and
//! lambda selection, partition search, and the MDL permutation test.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::config::{DetectConfig, DiagonalMembership};
use crate::error::{Result, SccnError, StageExt};
use crate::inference::{build_inference_matrix, EdgeModel, EdgeStats, PermutationScheme};
use crate::lambda::{default_threshold_prior, integrated_loglik, select_lambda};
use crate::mdl::{block_means, mdl_value, perm_p_value, score, PermutationMode};
use crate::model::{
    validate_dataset, Bipartition, DetectionReport, InferenceMatrix, InfrastructureGraph,
    LambdaTraceEntry, Matrix, SubareaPairResult, SubjectDataset, ThresholdPrior, VoxelGrid,
};
use crate::partition::{best_partition, objective_value, Candidates, SearchGrid, SearchResult, Support};
use crate::rng::{derive_seed, derived_rng, Stream};
use crate::spatial::{build_infrastructure, enforce_contiguity};
use crate::stats::{log2_binomial, P_FLOOR};

/// Permutations fitted per pass over the subject data.
const FIT_BATCH: usize = 8;

/// A report plus the observed inference matrix it was computed from.
#[derive(Debug, Clone)]
pub struct Detection {
    pub report: DetectionReport,
    pub w: InferenceMatrix,
    pub pvals: Matrix,
}

/// Partition chosen for one inference matrix.
#[derive(Debug, Clone)]
pub struct Fit {
    pub lambda_hat: f64,
    pub lambda_source: &'static str,
    pub trace: Vec<LambdaTraceEntry>,
    pub prior: ThresholdPrior,
    pub result: SearchResult,
}

/// How pairs are scored and which pairs exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layout {
    Bipartite,
    /// One region on both sides; only pairs `c <= d` are reported.
    Within(DiagonalMembership),
}

/// Source of permuted inference matrices.
enum Null<'a> {
    Subjects(&'a EdgeModel, PermutationScheme),
    EdgeShuffle(&'a InferenceMatrix),
    /// Shuffles the upper triangle of a symmetric matrix and mirrors it.
    SymmetricShuffle(&'a InferenceMatrix),
}

impl Null<'_> {
    fn name(&self) -> &'static str {
        match self {
            Null::Subjects(_, PermutationScheme::Shuffle) => "shuffle",
            Null::Subjects(_, PermutationScheme::FreedmanLane) => "freedman-lane",
            Null::EdgeShuffle(_) => "edge-shuffle",
            Null::SymmetricShuffle(_) => "symmetric-edge-shuffle",
        }
    }

    /// Permuted `(W, p)` for permutation indices `hs`.
    fn draw(&self, hs: &[usize], cfg: &DetectConfig) -> Result<Vec<(InferenceMatrix, Matrix)>> {
        let seed = |h: usize| derive_seed(cfg.seed, Stream::Permutation, h as u64);
        match *self {
            Null::Subjects(model, PermutationScheme::Shuffle) => {
                let xs: Vec<Vec<f64>> = hs.iter().map(|&h| model.permuted_primary(seed(h))).collect();
                model
                    .fit_many(&xs)?
                    .into_iter()
                    .map(|s| to_inference(s, cfg))
                    .collect()
            }
            Null::Subjects(model, scheme) => hs
                .iter()
                .map(|&h| to_inference(model.fit_permuted(seed(h), scheme)?, cfg))
                .collect(),
            Null::EdgeShuffle(w) => Ok(hs.iter().map(|&h| shuffle_edges(w, seed(h))).collect()),
            Null::SymmetricShuffle(w) => Ok(hs.iter().map(|&h| shuffle_symmetric(w, seed(h))).collect()),
        }
    }
}

fn to_inference(stats: EdgeStats, cfg: &DetectConfig) -> Result<(InferenceMatrix, Matrix)> {
    let w = build_inference_matrix(&stats.pvals, &stats.zstats, &cfg.regression)?;
    Ok((w, stats.pvals))
}

/// Permutes the `(W, zeta)` entry pairs jointly over all edge positions.
pub fn shuffle_edges(w: &InferenceMatrix, seed: u64) -> (InferenceMatrix, Matrix) {
    let (n, m) = w.shape();
    let mut order: Vec<usize> = (0..n * m).collect();
    order.shuffle(&mut derived_rng(seed, Stream::Permutation, 0));
    let values = Matrix::from_fn(n, m, |i, j| w.values.as_slice()[order[i * m + j]]);
    let zstats = Matrix::from_fn(n, m, |i, j| w.zstats.as_slice()[order[i * m + j]]);
    let pvals = pvals_from_w(&values);
    let out = InferenceMatrix {
        values,
        screen_p: w.screen_p,
        zstats,
    };
    (out, pvals)
}

/// Permutes the strictly-upper-triangular `(W, zeta)` pairs jointly and
/// mirrors them; the diagonal stays in place.
pub fn shuffle_symmetric(w: &InferenceMatrix, seed: u64) -> (InferenceMatrix, Matrix) {
    let n = w.shape().0;
    let upper: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut order: Vec<usize> = (0..upper.len()).collect();
    order.shuffle(&mut derived_rng(seed, Stream::Permutation, 0));
    let mut values = w.values.clone();
    let mut zstats = w.zstats.clone();
    for (k, &(i, j)) in upper.iter().enumerate() {
        let (a, b) = upper[order[k]];
        for (dst, src) in [(&mut values, &w.values), (&mut zstats, &w.zstats)] {
            let v = src.get(a, b);
            dst.set(i, j, v);
            dst.set(j, i, v);
        }
    }
    let pvals = pvals_from_w(&values);
    let out = InferenceMatrix {
        values,
        screen_p: w.screen_p,
        zstats,
    };
    (out, pvals)
}

/// p-values implied by a screened matrix: `exp(-W)` where kept, 1 elsewhere.
pub fn pvals_from_w(values: &Matrix) -> Matrix {
    let (n, m) = values.shape();
    Matrix::from_fn(n, m, |i, j| {
        let v = values.get(i, j);
        if v > 0.0 {
            (-v).exp().max(P_FLOOR)
        } else {
            1.0
        }
    })
}

/// Threshold prior, lambda and partition for one inference matrix.
pub fn fit_partition(
    w: &InferenceMatrix,
    pvals: &Matrix,
    sa: &InfrastructureGraph,
    sb: &InfrastructureGraph,
    grid: &SearchGrid,
    cfg: &DetectConfig,
    seed: u64,
) -> Result<Fit> {
    let prior = match &cfg.threshold_prior {
        Some(g) => g.clone(),
        None => default_threshold_prior(pvals),
    };
    let cands = Candidates::build(w, sa, sb, grid, seed, &cfg.spectral)?;
    fit_with(w, &cands, prior, cfg.lambda, cfg)
}

fn fit_with(
    w: &InferenceMatrix,
    cands: &Candidates,
    prior: ThresholdPrior,
    lambda: Option<f64>,
    cfg: &DetectConfig,
) -> Result<Fit> {
    match lambda {
        Some(l) => {
            let support = Support::new(w);
            let result = best_partition(&support, cands, &prior, l)?;
            let g0 = cfg.r0_prior.as_ref().unwrap_or(&prior);
            let trace = vec![LambdaTraceEntry {
                lambda: l,
                c: result.partition.c,
                d: result.partition.d,
                objective: result.objective,
                loglik: integrated_loglik(&support, &result.partition, g0),
            }];
            Ok(Fit {
                lambda_hat: l,
                lambda_source: "fixed",
                trace,
                prior,
                result,
            })
        }
        None => {
            let sel = select_lambda(w, cands, &prior, &cfg.lambda_config())?;
            Ok(Fit {
                lambda_hat: sel.lambda_hat,
                lambda_source: "selected",
                trace: sel.trace,
                prior,
                result: sel.result,
            })
        }
    }
}

/// Full pipeline on subject data.
pub fn detect_dataset(
    ds: SubjectDataset,
    ga: &VoxelGrid,
    gb: &VoxelGrid,
    cfg: &DetectConfig,
) -> Result<Detection> {
    cfg.validate()?;
    let ds = validate_dataset(ds, ga, gb).stage("validate")?;
    let sa = build_infrastructure(ga, cfg.epsilon_a).stage("spatial")?;
    let sb = build_infrastructure(gb, cfg.epsilon_b).stage("spatial")?;
    let model = EdgeModel::from_dataset(ds, cfg.regression.two_sided).stage("infer")?;
    let stats = model.observed().stage("infer")?;
    let (w, pvals) = to_inference(stats, cfg).stage("screen")?;
    let null = Null::Subjects(&model, cfg.regression.scheme);
    run(w, pvals, &sa, &sb, &null, Layout::Bipartite, cfg, None)
}

/// Pipeline on an already fitted edge model, so the subject data can be
/// shared with other analyses. The model must be built from a dataset that
/// passed validation against `ga` and `gb`.
pub fn detect_model(model: &EdgeModel, ga: &VoxelGrid, gb: &VoxelGrid, cfg: &DetectConfig) -> Result<Detection> {
    cfg.validate()?;
    if model.shape() != (ga.len(), gb.len()) {
        return Err(SccnError::Dimension(format!(
            "model is {:?} but the regions have {} and {} voxels",
            model.shape(),
            ga.len(),
            gb.len()
        )));
    }
    let sa = build_infrastructure(ga, cfg.epsilon_a).stage("spatial")?;
    let sb = build_infrastructure(gb, cfg.epsilon_b).stage("spatial")?;
    let stats = model.observed().stage("infer")?;
    let (w, pvals) = to_inference(stats, cfg).stage("screen")?;
    let null = Null::Subjects(model, cfg.regression.scheme);
    run(w, pvals, &sa, &sb, &null, Layout::Bipartite, cfg, None)
}

/// Permutation test of a supplied partition. Lambda and the threshold prior
/// are still fitted (or taken from `cfg`) because each permuted matrix is
/// partitioned afresh; the supplied partition is split into contiguous
/// pieces first.
pub fn test_dataset(
    ds: SubjectDataset,
    ga: &VoxelGrid,
    gb: &VoxelGrid,
    part: &Bipartition,
    cfg: &DetectConfig,
) -> Result<Detection> {
    cfg.validate()?;
    let ds = validate_dataset(ds, ga, gb).stage("validate")?;
    let sa = build_infrastructure(ga, cfg.epsilon_a).stage("spatial")?;
    let sb = build_infrastructure(gb, cfg.epsilon_b).stage("spatial")?;
    let part = enforce_contiguity(part, &sa, &sb).stage("validate")?;
    let model = EdgeModel::from_dataset(ds, cfg.regression.two_sided).stage("infer")?;
    let stats = model.observed().stage("infer")?;
    let (w, pvals) = to_inference(stats, cfg).stage("screen")?;
    let null = Null::Subjects(&model, cfg.regression.scheme);
    run(w, pvals, &sa, &sb, &null, Layout::Bipartite, cfg, Some(part))
}

/// Pipeline on a precomputed inference matrix; the null shuffles edges.
pub fn detect_matrix(
    w: InferenceMatrix,
    sa: &InfrastructureGraph,
    sb: &InfrastructureGraph,
    cfg: &DetectConfig,
) -> Result<Detection> {
    cfg.validate()?;
    let (n, m) = w.shape();
    if sa.n != n || sb.n != m {
        return Err(SccnError::Dimension(format!(
            "W is {n}x{m} but the infrastructure graphs have {} and {} voxels",
            sa.n, sb.n
        )));
    }
    let pvals = pvals_from_w(&w.values);
    let copy = w.clone();
    let null = Null::EdgeShuffle(&copy);
    run(w, pvals, sa, sb, &null, Layout::Bipartite, cfg, None)
}

pub(crate) fn detect_within_matrix(
    w: InferenceMatrix,
    s: &InfrastructureGraph,
    cfg: &DetectConfig,
) -> Result<Detection> {
    cfg.validate()?;
    let pvals = pvals_from_w(&w.values);
    let copy = w.clone();
    let null = Null::SymmetricShuffle(&copy);
    run(w, pvals, s, s, &null, Layout::Within(cfg.diagonal_membership), cfg, None)
}

#[allow(clippy::too_many_arguments)]
fn run(
    w: InferenceMatrix,
    pvals: Matrix,
    sa: &InfrastructureGraph,
    sb: &InfrastructureGraph,
    null: &Null<'_>,
    layout: Layout,
    cfg: &DetectConfig,
    fixed: Option<Bipartition>,
) -> Result<Detection> {
    let (n, m) = w.shape();
    let grid = cfg.grid(n, m);
    grid.validate(n, m)?;
    let mut fit = fit_layout(&w, &pvals, sa, sb, &grid, cfg, layout, cfg.seed).stage("partition")?;
    if let Some(part) = fixed {
        fit.result.objective = objective_value(&w, &part, &fit.prior, fit.lambda_hat, &grid)?;
        fit.result.cell = (part.c, part.d);
        fit.result.partition = part;
        fit.result.warnings.push("partition supplied by the caller; the search result was discarded".into());
    }
    log::info!(
        "lambda {} ({}), C = {}, D = {}",
        fit.lambda_hat,
        fit.lambda_source,
        fit.result.partition.c,
        fit.result.partition.d
    );

    let maxima = null_maxima(null, &fit, sa, sb, &grid, layout, cfg).stage("test")?;
    let part = &fit.result.partition;
    let stats = pair_statistics(part, &w, cfg.permutation.mdl_constant, layout);
    let mut pairs = Vec::with_capacity(stats.len());
    let mut significant = Vec::new();
    let (uc, vc) = (part.u().classes(), part.v().classes());
    for s in stats {
        let perm_p = perm_p_value(score(s.mdl), &maxima, cfg.permutation.smoothed);
        if perm_p <= cfg.permutation.alpha {
            significant.push((s.c, s.d));
        }
        pairs.push(SubareaPairResult {
            c: s.c,
            d: s.d,
            u_members: uc[s.c].iter().map(|&i| i as u32).collect(),
            v_members: vc[s.d].iter().map(|&j| j as u32).collect(),
            mdl: s.mdl,
            perm_p,
            density: s.density,
            mu1: s.mu1,
        });
    }
    let report = DetectionReport {
        lambda_hat: fit.lambda_hat,
        lambda_source: fit.lambda_source.to_string(),
        lambda_trace: fit.trace,
        c_hat: part.c,
        d_hat: part.d,
        objective: fit.result.objective,
        partition: part.clone(),
        pairs,
        significant,
        alpha: cfg.permutation.alpha,
        permutations: cfg.permutation.h,
        permutation_mode: cfg.permutation.mode.to_string(),
        null_scheme: null.name().to_string(),
        p_value_reference: "maximum block score of each permuted partition".into(),
        density_floor: grid.floor(n, m),
        mdl_constant: cfg.permutation.mdl_constant,
        warnings: fit.result.warnings.clone(),
        seed: cfg.seed,
        config_digest: cfg.digest(),
    };
    Ok(Detection { report, w, pvals })
}

#[allow(clippy::too_many_arguments)]
fn fit_layout(
    w: &InferenceMatrix,
    pvals: &Matrix,
    sa: &InfrastructureGraph,
    sb: &InfrastructureGraph,
    grid: &SearchGrid,
    cfg: &DetectConfig,
    layout: Layout,
    seed: u64,
) -> Result<Fit> {
    match layout {
        Layout::Bipartite => fit_partition(w, pvals, sa, sb, grid, cfg, seed),
        Layout::Within(_) => crate::intra::fit_shared(w, pvals, sa, grid, cfg, seed),
    }
}

/// Maximum block score of the permuted partition, for each permutation in
/// index order.
fn null_maxima(
    null: &Null<'_>,
    fit: &Fit,
    sa: &InfrastructureGraph,
    sb: &InfrastructureGraph,
    grid: &SearchGrid,
    layout: Layout,
    cfg: &DetectConfig,
) -> Result<Vec<f64>> {
    let h = cfg.permutation.h;
    let (cell_c, cell_d) = fit.result.cell;
    let null_grid = match cfg.permutation.mode {
        PermutationMode::Fast => grid.window(
            cfg.permutation.window_around(cell_c),
            cfg.permutation.window_around(cell_d),
        ),
        PermutationMode::Full => *grid,
    };
    let batches: Vec<Vec<usize>> = (0..h)
        .collect::<Vec<_>>()
        .chunks(FIT_BATCH)
        .map(|c| c.to_vec())
        .collect();
    let per_batch = batches
        .par_iter()
        .map(|hs| {
            let draws = null.draw(hs, cfg)?;
            hs.par_iter()
                .zip(draws.into_par_iter())
                .map(|(&k, (wh, ph))| {
                    let seed = derive_seed(cfg.seed, Stream::Permutation, k as u64);
                    let fit_h = match cfg.permutation.mode {
                        PermutationMode::Fast => {
                            fast_refit(&wh, sa, sb, &null_grid, fit, layout, cfg, seed)?
                        }
                        PermutationMode::Full => fit_layout(&wh, &ph, sa, sb, &null_grid, cfg, layout, seed)?,
                    };
                    let stats = pair_statistics(&fit_h.result.partition, &wh, cfg.permutation.mdl_constant, layout);
                    Ok(stats
                        .iter()
                        .map(|s| score(s.mdl))
                        .fold(f64::NEG_INFINITY, f64::max))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(per_batch.into_iter().flatten().collect())
}

// Fast mode keeps the observed threshold prior and lambda and searches a
// window of cluster counts around the observed cell.
#[allow(clippy::too_many_arguments)]
fn fast_refit(
    w: &InferenceMatrix,
    sa: &InfrastructureGraph,
    sb: &InfrastructureGraph,
    grid: &SearchGrid,
    fit: &Fit,
    layout: Layout,
    cfg: &DetectConfig,
    seed: u64,
) -> Result<Fit> {
    let mut fixed = cfg.clone();
    fixed.threshold_prior = Some(fit.prior.clone());
    fixed.lambda = Some(fit.lambda_hat);
    let pvals = Matrix::zeros(0, 0);
    fit_layout(w, &pvals, sa, sb, grid, &fixed, layout, seed)
}

pub(crate) struct PairStat {
    pub c: usize,
    pub d: usize,
    pub mdl: f64,
    pub mu1: f64,
    pub density: f64,
}

/// MDL, mean statistic and mean screened weight of every reported pair.
pub(crate) fn pair_statistics(part: &Bipartition, w: &InferenceMatrix, c_mdl: f64, layout: Layout) -> Vec<PairStat> {
    let (n, m) = w.shape();
    let means = block_means(part, &w.zstats);
    let masses = block_means(part, &w.values);
    let (us, vs) = (part.u().sizes(), part.v().sizes());
    let mut out = Vec::new();
    for c in 0..part.c {
        for d in 0..part.d {
            let k = c * part.d + d;
            let (membership, size) = match layout {
                Layout::Bipartite => (log2_binomial(n, us[c]) + log2_binomial(m, vs[d]), us[c] * vs[d]),
                Layout::Within(diag) => {
                    if c > d {
                        continue;
                    }
                    let bits = if c == d && diag == DiagonalMembership::Single {
                        log2_binomial(n, us[c])
                    } else {
                        log2_binomial(n, us[c]) + log2_binomial(n, us[d])
                    };
                    (bits, us[c] * vs[d])
                }
            };
            out.push(PairStat {
                c,
                d,
                mdl: mdl_value(membership, size, means[k], c_mdl),
                mu1: means[k],
                density: masses[k],
            });
        }
    }
    out
}
