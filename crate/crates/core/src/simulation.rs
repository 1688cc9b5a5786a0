//! Synthetic datasets with planted altered sub-area pairs, a negative
//! control, and detection metrics against the planted truth.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SccnError};
use crate::inference::{EdgeStats, StreamingFit};
use crate::model::{Bipartition, DetectionReport, Labeling, Matrix, Subject, SubjectDataset, VoxelGrid};
use crate::rng::{derived_rng, Stream};
use crate::spatial::{build_infrastructure, connected_components, DEFAULT_EPSILON};

pub const COVARIATE_NAMES: [&str; 3] = ["group", "age", "sex"];
pub const DEFAULT_ISOLATED_FRACTION: f64 = 0.002;
pub const STRONG_EFFECT: f64 = 0.9;
pub const WEAK_EFFECT: f64 = 0.13;

/// Inclusive axis-aligned voxel box `lo..=hi` on a box grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl VoxelBox {
    pub fn new(x: (usize, usize), y: (usize, usize), z: (usize, usize)) -> Self {
        VoxelBox {
            lo: [x.0, y.0, z.0],
            hi: [x.1, y.1, z.1],
        }
    }

    pub fn len(&self) -> usize {
        (0..3).map(|a| self.hi[a] + 1 - self.lo[a]).product()
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.hi[a] < self.lo[a])
    }

    pub fn fits(&self, dims: [usize; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= self.hi[a] && self.hi[a] < dims[a])
    }

    /// Positions in [`VoxelGrid::box_grid`] order, ascending.
    pub fn members(&self, dims: [usize; 3]) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for z in self.lo[2]..=self.hi[2] {
            for y in self.lo[1]..=self.hi[1] {
                for x in self.lo[0]..=self.hi[0] {
                    out.push(x + dims[0] * (y + dims[1] * z));
                }
            }
        }
        out
    }

    pub fn intersects(&self, other: &VoxelBox) -> bool {
        (0..3).all(|a| self.lo[a] <= other.hi[a] && other.lo[a] <= self.hi[a])
    }

    fn scaled_x(&self, f: usize) -> VoxelBox {
        let mut b = *self;
        b.lo[0] = self.lo[0] * f;
        b.hi[0] = (self.hi[0] + 1) * f - 1;
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedBlock {
    pub u: VoxelBox,
    pub v: VoxelBox,
    pub beta3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub dims_a: [usize; 3],
    pub dims_b: [usize; 3],
    pub blocks: Vec<PlantedBlock>,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub sigma: f64,
    pub subjects: usize,
    pub isolated_fraction: f64,
    pub isolated_beta3: f64,
    pub seed: u64,
}

/// Region A 10x10x9 (900 voxels) and B 10x16x10 (1600) with the three
/// planted pairs (84x70, 84x64, 96x117). `variance` is the noise variance.
pub fn paper_spec(variance: f64, subjects: usize) -> SimulationSpec {
    let u1 = VoxelBox::new((0, 3), (0, 2), (0, 6));
    let u2 = VoxelBox::new((6, 9), (6, 9), (0, 5));
    let v1 = VoxelBox::new((0, 4), (0, 1), (0, 6));
    let v2 = VoxelBox::new((6, 9), (0, 3), (0, 3));
    let v3 = VoxelBox::new((0, 2), (3, 15), (7, 9));
    base_spec([10, 10, 9], [10, 16, 10], [(u1, v1), (u1, v2), (u2, v3)], variance, subjects)
}

/// Desk-scale geometry: A 10x10x3 (300 voxels), B 10x10x5 (500), planted
/// pairs 28x24, 28x20 and 32x36 with the same effect sizes.
pub fn desk_spec(variance: f64, subjects: usize) -> SimulationSpec {
    let u1 = VoxelBox::new((0, 1), (0, 6), (0, 1));
    let u2 = VoxelBox::new((6, 9), (6, 9), (0, 1));
    let v1 = VoxelBox::new((0, 3), (0, 2), (0, 1));
    let v2 = VoxelBox::new((5, 9), (0, 1), (0, 1));
    let v3 = VoxelBox::new((0, 2), (4, 7), (2, 4));
    base_spec([10, 10, 3], [10, 10, 5], [(u1, v1), (u1, v2), (u2, v3)], variance, subjects)
}

fn base_spec(
    dims_a: [usize; 3],
    dims_b: [usize; 3],
    pairs: [(VoxelBox, VoxelBox); 3],
    variance: f64,
    subjects: usize,
) -> SimulationSpec {
    let betas = [STRONG_EFFECT, STRONG_EFFECT, WEAK_EFFECT];
    SimulationSpec {
        dims_a,
        dims_b,
        blocks: pairs
            .iter()
            .zip(betas)
            .map(|(&(u, v), beta3)| PlantedBlock { u, v, beta3 })
            .collect(),
        beta0: 0.0,
        beta1: 0.01,
        beta2: 0.1,
        sigma: variance.sqrt(),
        subjects,
        isolated_fraction: DEFAULT_ISOLATED_FRACTION,
        isolated_beta3: STRONG_EFFECT,
        seed: 0,
    }
}

/// Pure noise on the full-size geometry: no planted pairs, no isolated
/// positives.
pub fn negative_control_spec(subjects: usize, sigma: f64) -> SimulationSpec {
    let mut spec = paper_spec(1.0, subjects);
    spec.blocks.clear();
    spec.isolated_fraction = 0.0;
    spec.sigma = sigma;
    spec
}

impl SimulationSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n(&self) -> usize {
        self.dims_a.iter().product()
    }

    pub fn m(&self) -> usize {
        self.dims_b.iter().product()
    }

    /// Stretches both regions and every block along x by `factor`, keeping
    /// block proportions fixed.
    pub fn scaled_x(&self, factor: usize) -> SimulationSpec {
        let mut out = self.clone();
        out.dims_a[0] *= factor;
        out.dims_b[0] *= factor;
        for b in &mut out.blocks {
            b.u = b.u.scaled_x(factor);
            b.v = b.v.scaled_x(factor);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SccnError::InvalidArgument(msg));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.subjects < 4 {
            return bad(format!("need at least 4 subjects, got {}", self.subjects));
        }
        if self.dims_a.contains(&0) || self.dims_b.contains(&0) {
            return bad("region dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.isolated_fraction) {
            return bad(format!("isolated fraction {} outside [0, 1)", self.isolated_fraction));
        }
        for x in [self.beta0, self.beta1, self.beta2, self.isolated_beta3] {
            if !x.is_finite() {
                return bad("coefficients must be finite".into());
            }
        }
        let ga = VoxelGrid::box_grid("A", self.dims_a);
        let gb = VoxelGrid::box_grid("B", self.dims_b);
        let sa = build_infrastructure(&ga, DEFAULT_EPSILON)?;
        let sb = build_infrastructure(&gb, DEFAULT_EPSILON)?;
        for (k, b) in self.blocks.iter().enumerate() {
            if !b.beta3.is_finite() {
                return bad(format!("block {k} has a non-finite effect"));
            }
            if !b.u.fits(self.dims_a) || !b.v.fits(self.dims_b) {
                return bad(format!("block {k} lies outside its region"));
            }
            if connected_components(&sa, &b.u.members(self.dims_a)).len() != 1
                || connected_components(&sb, &b.v.members(self.dims_b)).len() != 1
            {
                return bad(format!("block {k} is not spatially contiguous"));
            }
        }
        for (k, a) in self.blocks.iter().enumerate() {
            for (l, b) in self.blocks.iter().enumerate().skip(k + 1) {
                if a.u.intersects(&b.u) && a.v.intersects(&b.v) {
                    return bad(format!("blocks {k} and {l} share edges"));
                }
                for (x, y) in [(a.u, b.u), (a.v, b.v)] {
                    if x != y && x.intersects(&y) {
                        return bad(format!("blocks {k} and {l} partially overlap in a region"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One planted pair as sorted voxel positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub u: Vec<usize>,
    pub v: Vec<usize>,
    pub beta3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub n: usize,
    pub m: usize,
    pub pairs: Vec<PlantedPair>,
    /// Isolated positive edges `(i, j)`, sorted.
    pub isolated: Vec<(usize, usize)>,
    pub partition: Bipartition,
}

impl GroundTruth {
    /// Row-major mask of every edge with a nonzero primary effect.
    pub fn edge_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n * self.m];
        for p in &self.pairs {
            if p.beta3 == 0.0 {
                continue;
            }
            for &i in &p.u {
                for &j in &p.v {
                    mask[i * self.m + j] = true;
                }
            }
        }
        for &(i, j) in &self.isolated {
            mask[i * self.m + j] = true;
        }
        mask
    }

    pub fn positives(&self) -> usize {
        self.edge_mask().iter().filter(|&&b| b).count()
    }

    pub fn planted_edges(&self) -> usize {
        self.pairs.iter().map(|p| p.u.len() * p.v.len()).sum()
    }
}

/// Planted pairs, isolated positives and the planted bipartition, with
/// region labels in order of first appearance (background usually 0).
pub fn ground_truth(spec: &SimulationSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let (n, m) = (spec.n(), spec.m());
    let pairs: Vec<PlantedPair> = spec
        .blocks
        .iter()
        .map(|b| PlantedPair {
            u: b.u.members(spec.dims_a),
            v: b.v.members(spec.dims_b),
            beta3: b.beta3,
        })
        .collect();
    let region_labels = |boxes: Vec<VoxelBox>, dims: [usize; 3], len: usize| {
        let mut raw = vec![0usize; len];
        let mut seen: Vec<VoxelBox> = Vec::new();
        for b in boxes {
            if seen.contains(&b) {
                continue;
            }
            seen.push(b);
            for i in b.members(dims) {
                raw[i] = seen.len();
            }
        }
        Labeling::compact(&raw)
    };
    let partition = Bipartition::new(
        region_labels(spec.blocks.iter().map(|b| b.u).collect(), spec.dims_a, n),
        region_labels(spec.blocks.iter().map(|b| b.v).collect(), spec.dims_b, m),
    );
    let isolated = isolated_positives(spec, &pairs)?;
    Ok(GroundTruth {
        n,
        m,
        pairs,
        isolated,
        partition,
    })
}

// Null edges drawn uniformly without replacement among those whose voxels
// are not both within one step of the same planted pair, so isolated
// positives never thicken a planted block.
fn isolated_positives(spec: &SimulationSpec, pairs: &[PlantedPair]) -> Result<Vec<(usize, usize)>> {
    if spec.isolated_fraction == 0.0 {
        return Ok(Vec::new());
    }
    let (n, m) = (spec.n(), spec.m());
    let sa = build_infrastructure(&VoxelGrid::box_grid("A", spec.dims_a), DEFAULT_EPSILON)?;
    let sb = build_infrastructure(&VoxelGrid::box_grid("B", spec.dims_b), DEFAULT_EPSILON)?;
    let closed = |members: &[usize], neighbors: &dyn Fn(usize) -> Vec<usize>, len: usize| {
        let mut near = vec![false; len];
        for &i in members {
            near[i] = true;
            for j in neighbors(i) {
                near[j] = true;
            }
        }
        near
    };
    let halos: Vec<(Vec<bool>, Vec<bool>)> = pairs
        .iter()
        .map(|p| {
            (
                closed(&p.u, &|i| sa.neighbors(i).to_vec(), n),
                closed(&p.v, &|j| sb.neighbors(j).to_vec(), m),
            )
        })
        .collect();
    let mut eligible = Vec::new();
    let mut null_edges = 0usize;
    for i in 0..n {
        for j in 0..m {
            if pairs.iter().any(|p| p.u.binary_search(&i).is_ok() && p.v.binary_search(&j).is_ok()) {
                continue;
            }
            null_edges += 1;
            if !halos.iter().any(|(hu, hv)| hu[i] && hv[j]) {
                eligible.push((i, j));
            }
        }
    }
    let count = (spec.isolated_fraction * null_edges as f64).round() as usize;
    if count > eligible.len() {
        return Err(SccnError::InvalidArgument(format!(
            "{count} isolated positives requested but only {} edges are isolated from planted pairs",
            eligible.len()
        )));
    }
    let mut rng = derived_rng(spec.seed, Stream::Isolated, 0);
    let mut chosen: Vec<(usize, usize)> = eligible.choose_multiple(&mut rng, count).copied().collect();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Per-subject covariates `[group, age, sex]`: balanced groups in shuffled
/// order, age uniform on [20, 70], sex Bernoulli(0.5).
pub fn simulate_covariates(spec: &SimulationSpec) -> Vec<Vec<f64>> {
    let s = spec.subjects;
    let mut rng = derived_rng(spec.seed, Stream::Covariates, 0);
    let mut group: Vec<f64> = (0..s).map(|k| if k < s / 2 { 0.0 } else { 1.0 }).collect();
    group.shuffle(&mut rng);
    group
        .into_iter()
        .map(|g| {
            let age = rng.gen_range(20.0..70.0);
            let sex = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            vec![g, age, sex]
        })
        .collect()
}

fn effect_matrix(spec: &SimulationSpec, truth: &GroundTruth) -> Vec<f64> {
    let m = truth.m;
    let mut beta3 = vec![0.0; truth.n * m];
    for p in &truth.pairs {
        for &i in &p.u {
            for &j in &p.v {
                beta3[i * m + j] = p.beta3;
            }
        }
    }
    for &(i, j) in &truth.isolated {
        beta3[i * m + j] = spec.isolated_beta3;
    }
    beta3
}

fn subject_matrix(spec: &SimulationSpec, beta3: &[f64], cov: &[f64], s: usize) -> Matrix {
    let mut rng = derived_rng(spec.seed, Stream::Subject, s as u64);
    let base = spec.beta0 + spec.beta1 * cov[1] + spec.beta2 * cov[2];
    let g = cov[0];
    let data = beta3
        .iter()
        .map(|&b| {
            let e: f64 = rng.sample(StandardNormal);
            base + b * g + spec.sigma * e
        })
        .collect();
    Matrix::from_vec(spec.n(), spec.m(), data).expect("shape")
}

/// Draws the subject dataset and its ground truth. Each subject has its
/// own generator, so the result does not depend on thread count.
pub fn generate_dataset(spec: &SimulationSpec) -> Result<(SubjectDataset, GroundTruth)> {
    let truth = ground_truth(spec)?;
    let beta3 = effect_matrix(spec, &truth);
    let covs = simulate_covariates(spec);
    let subjects = covs
        .into_par_iter()
        .enumerate()
        .map(|(s, cov)| Subject {
            subject_id: format!("s{s:05}"),
            connectivity: subject_matrix(spec, &beta3, &cov, s),
            covariates: cov,
        })
        .collect();
    let ds = SubjectDataset {
        subjects,
        covariate_names: COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(),
        primary_index: 0,
    };
    Ok((ds, truth))
}

/// Observed edge statistics of the dataset `generate_dataset` would return,
/// computed without holding more than a batch of subjects in memory.
pub fn simulate_edge_stats(spec: &SimulationSpec, two_sided: bool) -> Result<(EdgeStats, GroundTruth)> {
    const BATCH: usize = 16;
    let truth = ground_truth(spec)?;
    let beta3 = effect_matrix(spec, &truth);
    let covs = simulate_covariates(spec);
    let names: Vec<String> = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut fit = StreamingFit::new(&names, &covs, 0, (truth.n, truth.m), two_sided)?;
    for start in (0..covs.len()).step_by(BATCH) {
        let end = (start + BATCH).min(covs.len());
        let batch: Vec<Matrix> = (start..end)
            .into_par_iter()
            .map(|s| subject_matrix(spec, &beta3, &covs[s], s))
            .collect();
        for mat in &batch {
            fit.push(mat)?;
        }
    }
    Ok((fit.finish()?, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tpr: f64,
    pub fpr: f64,
    pub network_detected: bool,
    /// Missing when only an edge mask was evaluated.
    pub edge_misassignment: Option<f64>,
    /// True when the truth has no positive edges; `tpr` is then reported as 0.
    pub no_positives: bool,
}

/// Edge-wise rates of a row-major detection mask.
pub fn evaluate_mask(mask: &[bool], truth: &GroundTruth) -> Result<Metrics> {
    if mask.len() != truth.n * truth.m {
        return Err(SccnError::Dimension(format!(
            "mask has {} edges, truth has {}",
            mask.len(),
            truth.n * truth.m
        )));
    }
    let t = truth.edge_mask();
    let (mut tp, mut fp, mut pos) = (0usize, 0usize, 0usize);
    for (&d, &p) in mask.iter().zip(&t) {
        pos += p as usize;
        if d && p {
            tp += 1;
        } else if d {
            fp += 1;
        }
    }
    let neg = t.len() - pos;
    Ok(Metrics {
        tpr: if pos == 0 { 0.0 } else { tp as f64 / pos as f64 },
        fpr: if neg == 0 { 0.0 } else { fp as f64 / neg as f64 },
        network_detected: false,
        edge_misassignment: None,
        no_positives: pos == 0,
    })
}

/// Union of the significant pairs as an edge mask.
pub fn report_mask(report: &DetectionReport) -> Vec<bool> {
    let n = report.partition.u_labels.len();
    let m = report.partition.v_labels.len();
    let mut mask = vec![false; n * m];
    for p in report.significant_pairs() {
        for &i in &p.u_members {
            for &j in &p.v_members {
                mask[i as usize * m + j as usize] = true;
            }
        }
    }
    mask
}

pub fn evaluate(report: &DetectionReport, truth: &GroundTruth) -> Result<Metrics> {
    let mut metrics = evaluate_mask(&report_mask(report), truth)?;
    let detected: Vec<(Vec<usize>, Vec<usize>)> = report
        .significant_pairs()
        .map(|p| {
            (
                p.u_members.iter().map(|&i| i as usize).collect(),
                p.v_members.iter().map(|&j| j as usize).collect(),
            )
        })
        .collect();
    metrics.network_detected = pairs_recovered(truth, &detected);
    metrics.edge_misassignment = Some(edge_misassignment(&report.partition, truth)?);
    Ok(metrics)
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_unstable();
    x.dedup();
    y.sort_unstable();
    y.dedup();
    let inter = x.iter().filter(|i| y.binary_search(i).is_ok()).count();
    let union = x.len() + y.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Planted pair `t` and detected pair `d` match when both their U members
/// and their V members overlap with Jaccard at least 0.5.
pub fn pair_matches(t: &PlantedPair, d: &(Vec<usize>, Vec<usize>)) -> bool {
    jaccard(&t.u, &d.0) >= 0.5 && jaccard(&t.v, &d.1) >= 0.5
}

/// True when the planted pairs match the detected pairs one-to-one and no
/// detected pair is left over.
pub fn pairs_recovered(truth: &GroundTruth, detected: &[(Vec<usize>, Vec<usize>)]) -> bool {
    if detected.len() != truth.pairs.len() {
        return false;
    }
    let adj: Vec<Vec<usize>> = truth
        .pairs
        .iter()
        .map(|t| (0..detected.len()).filter(|&k| pair_matches(t, &detected[k])).collect())
        .collect();
    max_matching(&adj, detected.len()) == truth.pairs.len()
}

fn max_matching(adj: &[Vec<usize>], right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; right];
    (0..adj.len())
        .filter(|&u| augment(u, adj, &mut vec![false; right], &mut owner))
        .count()
}

/// Mis-assigned planted edges as a fraction of planted edges. Each planted
/// sub-area is matched to the estimated class holding most of its voxels
/// (one-to-one per region, largest overlaps first); a planted edge counts
/// as assigned when both endpoints fall in the matched classes.
pub fn edge_misassignment(part: &Bipartition, truth: &GroundTruth) -> Result<f64> {
    if part.u_labels.len() != truth.n || part.v_labels.len() != truth.m {
        return Err(SccnError::Dimension("partition does not match the truth".into()));
    }
    let planted = truth.planted_edges();
    if planted == 0 {
        return Ok(0.0);
    }
    let unique = |sets: Vec<&Vec<usize>>| {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for s in sets {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        out
    };
    let us = unique(truth.pairs.iter().map(|p| &p.u).collect());
    let vs = unique(truth.pairs.iter().map(|p| &p.v).collect());
    let mu = match_areas(&us, &part.u_labels, part.c);
    let mv = match_areas(&vs, &part.v_labels, part.d);
    let mut missed = 0usize;
    for p in &truth.pairs {
        let a = us.iter().position(|u| u == &p.u).expect("listed");
        let b = vs.iter().position(|v| v == &p.v).expect("listed");
        let hit_u = p.u.iter().filter(|&&i| Some(part.u_labels[i]) == mu[a]).count();
        let hit_v = p.v.iter().filter(|&&j| Some(part.v_labels[j]) == mv[b]).count();
        missed += p.u.len() * p.v.len() - hit_u * hit_v;
    }
    Ok(missed as f64 / planted as f64)
}

fn match_areas(areas: &[Vec<usize>], labels: &[usize], k: usize) -> Vec<Option<usize>> {
    let mut overlaps = Vec::new();
    for (a, members) in areas.iter().enumerate() {
        let mut counts = vec![0usize; k];
        for &i in members {
            counts[labels[i]] += 1;
        }
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                overlaps.push((cnt, a, c));
            }
        }
    }
    overlaps.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut out = vec![None; areas.len()];
    let mut taken = vec![false; k];
    for (_, a, c) in overlaps {
        if out[a].is_none() && !taken[c] {
            out[a] = Some(c);
            taken[c] = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{build_inference_matrix, edge_regression, RegressionConfig};
    use crate::model::SubareaPairResult;
    use crate::stats::ks_uniform;
    use approx::assert_relative_eq;

    fn small_spec() -> SimulationSpec {
        SimulationSpec {
            dims_a: [4, 4, 1],
            dims_b: [4, 4, 1],
            blocks: vec![PlantedBlock {
                u: VoxelBox::new((0, 1), (0, 1), (0, 0)),
                v: VoxelBox::new((2, 3), (2, 3), (0, 0)),
                beta3: 2.0,
            }],
            beta0: 0.0,
            beta1: 0.01,
            beta2: 0.1,
            sigma: 1.0,
            subjects: 40,
            isolated_fraction: 0.0,
            isolated_beta3: 0.9,
            seed: 3,
        }
    }

    #[test]
    fn paper_geometry() {
        let spec = paper_spec(1.0, 200);
        assert_eq!((spec.n(), spec.m()), (900, 1600));
        let sizes: Vec<usize> = spec.blocks.iter().map(|b| b.u.len() * b.v.len()).collect();
        assert_eq!(sizes, vec![5880, 5376, 11232]);
        let u: Vec<usize> = spec.blocks.iter().map(|b| b.u.len()).collect();
        let v: Vec<usize> = spec.blocks.iter().map(|b| b.v.len()).collect();
        assert_eq!((u, v), (vec![84, 84, 96], vec![70, 64, 117]));
        let betas: Vec<f64> = spec.blocks.iter().map(|b| b.beta3).collect();
        assert_eq!(betas, vec![0.9, 0.9, 0.13]);
        assert_relative_eq!(paper_spec(2.0, 100).sigma, 2f64.sqrt());
        spec.validate().unwrap();
    }

    #[test]
    fn paper_truth_counts_planted_plus_isolated() {
        let spec = paper_spec(1.0, 100);
        let truth = ground_truth(&spec).unwrap();
        let planted = 5880 + 5376 + 11232;
        let null = 900 * 1600 - planted;
        assert_eq!(truth.isolated.len(), (0.002 * null as f64).round() as usize);
        assert_eq!(truth.positives(), planted + truth.isolated.len());
        let sa = build_infrastructure(&VoxelGrid::box_grid("A", spec.dims_a), DEFAULT_EPSILON).unwrap();
        for p in &truth.pairs {
            assert_eq!(connected_components(&sa, &p.u).len(), 1);
        }
        assert_eq!((truth.partition.c, truth.partition.d), (3, 4));
    }

    #[test]
    fn desk_geometry_is_valid() {
        let spec = desk_spec(1.0, 50);
        spec.validate().unwrap();
        assert_eq!((spec.n(), spec.m()), (300, 500));
        let sizes: Vec<usize> = spec.blocks.iter().map(|b| b.u.len() * b.v.len()).collect();
        assert_eq!(sizes, vec![672, 560, 1152]);
        let doubled = spec.scaled_x(2);
        doubled.validate().unwrap();
        assert_eq!((doubled.n(), doubled.m()), (600, 1000));
        for (a, b) in spec.blocks.iter().zip(&doubled.blocks) {
            assert_eq!(2 * a.u.len(), b.u.len());
            assert_eq!(2 * a.v.len(), b.v.len());
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small_spec();
        s.blocks.push(PlantedBlock {
            u: VoxelBox::new((1, 2), (1, 2), (0, 0)),
            v: VoxelBox::new((3, 3), (3, 3), (0, 0)),
            beta3: 1.0,
        });
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.sigma = 0.0;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.subjects = 3;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.blocks[0].v = VoxelBox::new((2, 4), (0, 0), (0, 0));
        assert!(s.validate().is_err());
    }

    #[test]
    fn balanced_groups() {
        let spec = small_spec();
        let covs = simulate_covariates(&SimulationSpec { subjects: 100, ..spec });
        assert_eq!(covs.iter().filter(|c| c[0] == 1.0).count(), 50);
        assert!(covs.iter().all(|c| (20.0..70.0).contains(&c[1]) && (c[2] == 0.0 || c[2] == 1.0)));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let (a, ta) = generate_dataset(&spec).unwrap();
        let (b, tb) = generate_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (c, _) = pool.install(|| generate_dataset(&spec).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn streamed_stats_match_generated_dataset() {
        let spec = small_spec();
        let (ds, _) = generate_dataset(&spec).unwrap();
        let direct = edge_regression(&ds, &RegressionConfig::default()).unwrap();
        let (streamed, _) = simulate_edge_stats(&spec, true).unwrap();
        for (a, b) in streamed.pvals.as_slice().iter().zip(direct.pvals.as_slice()) {
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn negative_control_screening_and_uniformity() {
        let mut spec = negative_control_spec(60, 1.0);
        spec.dims_a = [10, 10, 1];
        spec.dims_b = [10, 10, 1];
        let (stats, truth) = simulate_edge_stats(&spec.with_seed(11), true).unwrap();
        assert_eq!(truth.positives(), 0);
        let p = stats.pvals.as_slice();
        assert!(ks_uniform(p) < 0.02, "ks {}", ks_uniform(p));
        let w = build_inference_matrix(&stats.pvals, &stats.zstats, &RegressionConfig::default()).unwrap();
        let frac = w.nnz() as f64 / p.len() as f64;
        assert!((frac - 0.05).abs() < 0.005, "{frac}");
    }

    fn report(part: Bipartition, pairs: Vec<(Vec<u32>, Vec<u32>, usize, usize)>) -> DetectionReport {
        let significant = pairs.iter().map(|p| (p.2, p.3)).collect();
        DetectionReport {
            lambda_hat: 0.5,
            lambda_source: "fixed".into(),
            lambda_trace: vec![],
            c_hat: part.c,
            d_hat: part.d,
            objective: 0.0,
            partition: part,
            pairs: pairs
                .into_iter()
                .map(|(u, v, c, d)| SubareaPairResult {
                    c,
                    d,
                    u_members: u,
                    v_members: v,
                    mdl: 0.0,
                    perm_p: 0.0,
                    density: 0.0,
                    mu1: 0.0,
                })
                .collect(),
            significant,
            alpha: 0.05,
            permutations: 0,
            permutation_mode: "fast".into(),
            null_scheme: "shuffle".into(),
            p_value_reference: "max".into(),
            density_floor: 0.0,
            mdl_constant: 0.0,
            warnings: vec![],
            seed: 0,
            config_digest: String::new(),
        }
    }

    #[test]
    fn perfect_and_empty_detection() {
        let truth = ground_truth(&small_spec()).unwrap();
        let p = &truth.pairs[0];
        let u: Vec<u32> = p.u.iter().map(|&i| i as u32).collect();
        let v: Vec<u32> = p.v.iter().map(|&j| j as u32).collect();
        let perfect = report(truth.partition.clone(), vec![(u, v, 1, 1)]);
        let m = evaluate(&perfect, &truth).unwrap();
        assert_eq!((m.tpr, m.fpr, m.network_detected), (1.0, 0.0, true));
        assert_eq!(m.edge_misassignment, Some(0.0));
        let empty = report(truth.partition.clone(), vec![]);
        let m = evaluate(&empty, &truth).unwrap();
        assert_eq!((m.tpr, m.fpr, m.network_detected), (0.0, 0.0, false));
    }

    #[test]
    fn negative_control_reports_flag() {
        let mut spec = negative_control_spec(10, 1.0);
        spec.dims_a = [2, 2, 1];
        spec.dims_b = [2, 2, 1];
        let truth = ground_truth(&spec).unwrap();
        let m = evaluate_mask(&[true, false, false, false, false, false, false, false, false, false, false, false, false, false, false, false], &truth).unwrap();
        assert!(m.no_positives);
        assert_eq!(m.tpr, 0.0);
        assert_relative_eq!(m.fpr, 1.0 / 16.0);
    }

    #[test]
    fn misassignment_counts_lost_edges() {
        let truth = ground_truth(&small_spec()).unwrap();
        // Move one planted U voxel into the background class.
        let mut part = truth.partition.clone();
        let lost = truth.pairs[0].u[0];
        let background = part.u_labels[3];
        part.u_labels[lost] = background;
        let f = edge_misassignment(&part, &truth).unwrap();
        assert_relative_eq!(f, 4.0 / 16.0);
    }

    #[test]
    fn one_to_one_matching_required() {
        let truth = GroundTruth {
            n: 4,
            m: 4,
            pairs: vec![
                PlantedPair { u: vec![0, 1], v: vec![0, 1], beta3: 1.0 },
                PlantedPair { u: vec![0, 1], v: vec![2, 3], beta3: 1.0 },
            ],
            isolated: vec![],
            partition: Bipartition::from_labels(vec![0, 0, 1, 1], 2, vec![0, 0, 1, 1], 2).unwrap(),
        };
        let merged = vec![(vec![0, 1], vec![0, 1, 2]), (vec![0, 1], vec![0, 1, 2])];
        assert!(!pairs_recovered(&truth, &merged[..1]));
        let exact = vec![(vec![0, 1], vec![2, 3]), (vec![0, 1], vec![0, 1])];
        assert!(pairs_recovered(&truth, &exact));
        assert!(!pairs_recovered(&truth, &merged));
        assert_relative_eq!(jaccard(&[0, 1], &[1, 2]), 1.0 / 3.0);
    }
}
