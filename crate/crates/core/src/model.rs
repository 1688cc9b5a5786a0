//! Domain types shared across the pipeline.
//!
//! Every matrix is indexed by position in the owning [`VoxelGrid`]'s voxel
//! list, never by `voxel_id`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SccnError, Violation};

/// Dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SccnError::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Exact symmetry check (bitwise on values).
    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Rows and columns reordered: entry (a, b) of the result is `self[row_order[a]][col_order[b]]`.
    pub fn reorder(&self, row_order: &[usize], col_order: &[usize]) -> Matrix {
        Matrix::from_fn(row_order.len(), col_order.len(), |a, b| {
            self.get(row_order[a], col_order[b])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Voxel {
    pub id: u32,
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Voxel {
    pub fn coords(&self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }
}

/// Voxel coordinates of one region; the list order is the matrix order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub region_id: String,
    pub voxels: Vec<Voxel>,
}

impl VoxelGrid {
    /// Validates uniqueness of ids and coordinates, then canonicalizes.
    pub fn new(region_id: impl Into<String>, voxels: Vec<Voxel>) -> Result<Self> {
        let grid = VoxelGrid {
            region_id: region_id.into(),
            voxels,
        };
        let violations = grid.violations();
        if !violations.is_empty() {
            return Err(SccnError::Validation(violations));
        }
        Ok(grid.canonicalize())
    }

    /// Axis-aligned box of `dims[0] x dims[1] x dims[2]` voxels, x fastest.
    pub fn box_grid(region_id: impl Into<String>, dims: [usize; 3]) -> Self {
        let mut voxels = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    voxels.push(Voxel {
                        id: voxels.len() as u32,
                        x: x as i32,
                        y: y as i32,
                        z: z as i32,
                    });
                }
            }
        }
        VoxelGrid {
            region_id: region_id.into(),
            voxels,
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut ids = HashSet::new();
        let mut coords = HashSet::new();
        for v in &self.voxels {
            if !ids.insert(v.id) {
                out.push(Violation::DuplicateVoxelId(v.id));
            }
            if !coords.insert(v.coords()) {
                out.push(Violation::DuplicateCoordinate(v.coords()));
            }
        }
        out
    }

    /// Sorts voxels by id and renumbers ids to `0..n`. Idempotent.
    pub fn canonicalize(mut self) -> Self {
        self.voxels.sort_by_key(|v| v.id);
        for (k, v) in self.voxels.iter_mut().enumerate() {
            v.id = k as u32;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.voxels[a], self.voxels[b]);
        let d2 = sq(p.x - q.x) + sq(p.y - q.y) + sq(p.z - q.z);
        (d2 as f64).sqrt()
    }
}

fn sq(v: i32) -> i64 {
    let v = v as i64;
    v * v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    pub covariates: Vec<f64>,
    pub connectivity: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDataset {
    pub subjects: Vec<Subject>,
    pub covariate_names: Vec<String>,
    pub primary_index: usize,
}

impl SubjectDataset {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Connectivity shape of the first subject, `(0, 0)` when empty.
    pub fn shape(&self) -> (usize, usize) {
        self.subjects
            .first()
            .map(|s| s.connectivity.shape())
            .unwrap_or((0, 0))
    }

    pub fn primary(&self) -> Vec<f64> {
        self.subjects
            .iter()
            .map(|s| s.covariates[self.primary_index])
            .collect()
    }

    pub fn primary_name(&self) -> &str {
        &self.covariate_names[self.primary_index]
    }
}

/// Checks every dataset invariant against the two region grids and returns
/// the dataset untouched, or all violations at once.
pub fn validate_dataset(
    ds: SubjectDataset,
    ga: &VoxelGrid,
    gb: &VoxelGrid,
) -> Result<SubjectDataset> {
    let mut violations = ga.violations();
    violations.extend(gb.violations());
    let p = ds.covariate_names.len();
    if ds.primary_index >= p {
        violations.push(Violation::PrimaryIndex {
            index: ds.primary_index,
            covariates: p,
        });
    }
    let expected = (ga.len(), gb.len());
    let mut seen = HashSet::new();
    for s in &ds.subjects {
        if !seen.insert(s.subject_id.as_str()) {
            violations.push(Violation::DuplicateSubject(s.subject_id.clone()));
        }
        if s.covariates.len() != p {
            violations.push(Violation::CovariateLength {
                subject: s.subject_id.clone(),
                expected: p,
                found: s.covariates.len(),
            });
        }
        if let Some(column) = s.covariates.iter().position(|v| !v.is_finite()) {
            violations.push(Violation::NonFiniteCovariate {
                subject: s.subject_id.clone(),
                column,
            });
        }
        let found = s.connectivity.shape();
        if found != expected {
            violations.push(Violation::Dimension {
                subject: s.subject_id.clone(),
                expected,
                found,
            });
        }
        if let Some(k) = s.connectivity.as_slice().iter().position(|v| !v.is_finite()) {
            let cols = s.connectivity.cols().max(1);
            violations.push(Violation::NonFinite {
                subject: s.subject_id.clone(),
                i: k / cols,
                j: k % cols,
            });
        }
    }
    if violations.is_empty() {
        Ok(ds)
    } else {
        Err(SccnError::Validation(violations))
    }
}

/// Screened `-ln p` values plus signed normal-scale edge statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceMatrix {
    pub values: Matrix,
    pub screen_p: f64,
    pub zstats: Matrix,
}

impl InferenceMatrix {
    pub fn new(values: Matrix, screen_p: f64, zstats: Matrix) -> Result<Self> {
        if values.shape() != zstats.shape() {
            return Err(SccnError::Dimension(format!(
                "values {:?} vs zstats {:?}",
                values.shape(),
                zstats.shape()
            )));
        }
        if !(screen_p > 0.0 && screen_p <= 1.0) {
            return Err(SccnError::InvalidArgument(format!(
                "screen_p {screen_p} outside (0, 1]"
            )));
        }
        let floor = -screen_p.ln();
        let mut violations = Vec::new();
        for (k, &v) in values.as_slice().iter().enumerate() {
            let bad = !v.is_finite() || v < 0.0 || (v > 0.0 && v < floor * (1.0 - 1e-12));
            if bad {
                violations.push(Violation::Other(format!(
                    "inference value {v} at ({}, {}) is not a screened -ln p",
                    k / values.cols(),
                    k % values.cols()
                )));
                break;
            }
        }
        if let Some(k) = zstats.as_slice().iter().position(|v| !v.is_finite()) {
            violations.push(Violation::Other(format!(
                "non-finite edge statistic at ({}, {})",
                k / zstats.cols(),
                k % zstats.cols()
            )));
        }
        if !violations.is_empty() {
            return Err(SccnError::Validation(violations));
        }
        Ok(InferenceMatrix {
            values,
            screen_p,
            zstats,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn nnz(&self) -> usize {
        self.values.as_slice().iter().filter(|&&v| v > 0.0).count()
    }
}

/// Sparse symmetric spatial-adjacency graph over one region's voxels.
///
/// Neighbor lists are sorted and exclude the voxel itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfrastructureGraph {
    pub n: usize,
    pub epsilon: f64,
    neighbors: Vec<Vec<usize>>,
}

impl InfrastructureGraph {
    pub fn from_neighbors(epsilon: f64, mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for list in neighbors.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if j >= n || j == i || neighbors[j].binary_search(&i).is_err() {
                    return Err(SccnError::InvalidArgument(format!(
                        "adjacency ({i}, {j}) is out of range, a self-loop, or asymmetric"
                    )));
                }
            }
        }
        Ok(InfrastructureGraph {
            n,
            epsilon,
            neighbors,
        })
    }

    /// Graph with every pair adjacent.
    pub fn complete(n: usize) -> Self {
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        InfrastructureGraph {
            n,
            epsilon: f64::INFINITY,
            neighbors,
        }
    }

    pub fn edgeless(n: usize) -> Self {
        InfrastructureGraph {
            n,
            epsilon: 0.0,
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Unordered edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Labels of one region's voxels into `k` nonempty classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labeling {
    labels: Vec<usize>,
    k: usize,
}

impl Labeling {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        let mut counts = vec![0usize; k];
        for &l in &labels {
            if l >= k {
                return Err(SccnError::InvalidArgument(format!(
                    "label {l} out of range 0..{k}"
                )));
            }
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(SccnError::InvalidArgument(format!("label class {c} is empty")));
        }
        Ok(Labeling { labels, k })
    }

    /// Relabels arbitrary labels to `0..k` in order of first appearance.
    pub fn compact(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        Labeling {
            labels,
            k: map.len(),
        }
    }

    pub fn single(n: usize) -> Self {
        Labeling {
            labels: vec![0; n],
            k: usize::from(n > 0),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Members of every class, each sorted ascending.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Voxel order grouping classes together (class order, then index).
    pub fn grouped_order(&self) -> Vec<usize> {
        self.classes().into_iter().flatten().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bipartition {
    pub u_labels: Vec<usize>,
    pub v_labels: Vec<usize>,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "D")]
    pub d: usize,
}

impl Bipartition {
    pub fn new(u: Labeling, v: Labeling) -> Self {
        Bipartition {
            c: u.k,
            d: v.k,
            u_labels: u.labels,
            v_labels: v.labels,
        }
    }

    pub fn from_labels(u_labels: Vec<usize>, c: usize, v_labels: Vec<usize>, d: usize) -> Result<Self> {
        Ok(Bipartition::new(
            Labeling::new(u_labels, c)?,
            Labeling::new(v_labels, d)?,
        ))
    }

    pub fn u(&self) -> Labeling {
        Labeling {
            labels: self.u_labels.clone(),
            k: self.c,
        }
    }

    pub fn v(&self) -> Labeling {
        Labeling {
            labels: self.v_labels.clone(),
            k: self.d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Labeling::new(self.u_labels.clone(), self.c)?;
        Labeling::new(self.v_labels.clone(), self.d)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub r: f64,
    pub mass: f64,
}

/// Discrete distribution over thresholds on `-ln p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPrior {
    points: Vec<ThresholdPoint>,
}

impl ThresholdPrior {
    pub fn new(points: Vec<ThresholdPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(SccnError::InvalidArgument("empty threshold prior".into()));
        }
        let total: f64 = points.iter().map(|p| p.mass).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SccnError::InvalidArgument(format!(
                "threshold masses sum to {total}, not 1"
            )));
        }
        for p in &points {
            if !(p.r > 0.0 && p.r.is_finite()) || !(0.0..=1.0).contains(&p.mass) {
                return Err(SccnError::InvalidArgument(format!(
                    "invalid threshold point r={} mass={}",
                    p.r, p.mass
                )));
            }
        }
        if points.windows(2).any(|w| w[0].r >= w[1].r) {
            return Err(SccnError::InvalidArgument(
                "threshold values must be strictly increasing".into(),
            ));
        }
        Ok(ThresholdPrior { points })
    }

    /// Single threshold with all mass.
    pub fn point(r: f64) -> Result<Self> {
        ThresholdPrior::new(vec![ThresholdPoint { r, mass: 1.0 }])
    }

    pub fn points(&self) -> &[ThresholdPoint] {
        &self.points
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubareaPairResult {
    pub c: usize,
    pub d: usize,
    pub u_members: Vec<u32>,
    pub v_members: Vec<u32>,
    pub mdl: f64,
    pub perm_p: f64,
    pub density: f64,
    pub mu1: f64,
}

/// One evaluated point of the lambda grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTraceEntry {
    pub lambda: f64,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub objective: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub lambda_hat: f64,
    /// `"selected"` when chosen by likelihood, `"fixed"` when supplied.
    pub lambda_source: String,
    pub lambda_trace: Vec<LambdaTraceEntry>,
    #[serde(rename = "C_hat")]
    pub c_hat: usize,
    #[serde(rename = "D_hat")]
    pub d_hat: usize,
    pub objective: f64,
    pub partition: Bipartition,
    pub pairs: Vec<SubareaPairResult>,
    pub significant: Vec<(usize, usize)>,
    pub alpha: f64,
    pub permutations: usize,
    pub permutation_mode: String,
    pub null_scheme: String,
    pub p_value_reference: String,
    pub density_floor: f64,
    pub mdl_constant: f64,
    pub warnings: Vec<String>,
    pub seed: u64,
    pub config_digest: String,
}

impl DetectionReport {
    pub fn significant_pairs(&self) -> impl Iterator<Item = &SubareaPairResult> + '_ {
        self.pairs
            .iter()
            .filter(|p| self.significant.contains(&(p.c, p.d)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, n: usize, m: usize) -> Subject {
        Subject {
            subject_id: id.into(),
            covariates: vec![1.0, 30.0],
            connectivity: Matrix::from_fn(n, m, |i, j| (i * m + j) as f64 * 0.1),
        }
    }

    fn dataset(subjects: Vec<Subject>) -> SubjectDataset {
        SubjectDataset {
            subjects,
            covariate_names: vec!["group".into(), "age".into()],
            primary_index: 0,
        }
    }

    #[test]
    fn consistent_dataset_passes() {
        let ga = VoxelGrid::box_grid("A", [3, 1, 1]);
        let gb = VoxelGrid::box_grid("B", [4, 1, 1]);
        let ds = dataset(vec![subject("s1", 3, 4), subject("s2", 3, 4)]);
        assert!(validate_dataset(ds, &ga, &gb).is_ok());
    }

    #[test]
    fn dimension_mismatch_reported() {
        let ga = VoxelGrid::box_grid("A", [5, 1, 1]);
        let gb = VoxelGrid::box_grid("B", [4, 1, 1]);
        let ds = dataset(vec![subject("s1", 3, 4)]);
        match validate_dataset(ds, &ga, &gb) {
            Err(SccnError::Validation(v)) => {
                assert!(matches!(v[0], Violation::Dimension { found: (3, 4), expected: (5, 4), .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_named_by_subject_and_position() {
        let ga = VoxelGrid::box_grid("A", [3, 1, 1]);
        let gb = VoxelGrid::box_grid("B", [4, 1, 1]);
        let mut bad = subject("s2", 3, 4);
        bad.connectivity.set(1, 2, f64::NAN);
        let ds = dataset(vec![subject("s1", 3, 4), bad]);
        let err = validate_dataset(ds, &ga, &gb).unwrap_err();
        match err {
            SccnError::Validation(v) => assert_eq!(
                v,
                vec![Violation::NonFinite {
                    subject: "s2".into(),
                    i: 1,
                    j: 2
                }]
            ),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn every_violation_listed() {
        let ga = VoxelGrid::box_grid("A", [3, 1, 1]);
        let gb = VoxelGrid::box_grid("B", [4, 1, 1]);
        let mut bad = subject("s1", 2, 4);
        bad.connectivity.set(0, 0, f64::INFINITY);
        let ds = dataset(vec![subject("s1", 3, 4), bad]);
        let Err(SccnError::Validation(v)) = validate_dataset(ds, &ga, &gb) else {
            panic!()
        };
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn validation_is_idempotent() {
        let ga = VoxelGrid::box_grid("A", [3, 1, 1]);
        let gb = VoxelGrid::box_grid("B", [4, 1, 1]);
        let ds = dataset(vec![subject("s1", 3, 4)]);
        let once = validate_dataset(ds, &ga, &gb).unwrap();
        let twice = validate_dataset(once.clone(), &ga, &gb).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn canonicalize_sorts_and_renumbers() {
        let voxels = vec![
            Voxel { id: 9, x: 1, y: 0, z: 0 },
            Voxel { id: 3, x: 0, y: 0, z: 0 },
        ];
        let g = VoxelGrid::new("A", voxels).unwrap();
        assert_eq!(g.voxels[0], Voxel { id: 0, x: 0, y: 0, z: 0 });
        assert_eq!(g.voxels[1].id, 1);
        assert_eq!(g.clone().canonicalize(), g);
    }

    #[test]
    fn duplicate_coordinates_rejected() {
        let voxels = vec![
            Voxel { id: 0, x: 1, y: 0, z: 0 },
            Voxel { id: 1, x: 1, y: 0, z: 0 },
        ];
        assert!(VoxelGrid::new("A", voxels).is_err());
    }

    #[test]
    fn threshold_prior_invariants() {
        let ok = ThresholdPrior::new(vec![
            ThresholdPoint { r: 1.0, mass: 0.25 },
            ThresholdPoint { r: 2.0, mass: 0.75 },
        ]);
        assert!(ok.is_ok());
        let unsorted = ThresholdPrior::new(vec![
            ThresholdPoint { r: 2.0, mass: 0.5 },
            ThresholdPoint { r: 1.0, mass: 0.5 },
        ]);
        assert!(unsorted.is_err());
        let bad_mass = ThresholdPrior::new(vec![ThresholdPoint { r: 2.0, mass: 0.9 }]);
        assert!(bad_mass.is_err());
    }

    #[test]
    fn labeling_rejects_empty_class() {
        assert!(Labeling::new(vec![0, 0, 2], 3).is_err());
        assert!(Labeling::new(vec![0, 3], 3).is_err());
        let l = Labeling::compact(&[5, 5, 2, 7]);
        assert_eq!(l.labels(), &[0, 0, 1, 2]);
        assert_eq!(l.k(), 3);
    }
}
