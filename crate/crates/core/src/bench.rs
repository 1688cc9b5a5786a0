//! Replicated comparison of SCCN with the baselines on simulated data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{bh_fdr, bsgp_select, maxt_from_model, CoClusters};
use crate::config::DetectConfig;
use crate::error::{Result, SccnError};
use crate::inference::{build_inference_matrix, EdgeModel};
use crate::model::{validate_dataset, Matrix, SubjectDataset, VoxelGrid};
use crate::pipeline::detect_model;
use crate::rng::{derive_seed, Stream};
use crate::simulation::{
    desk_spec, evaluate, evaluate_mask, generate_dataset, paper_spec, pairs_recovered, GroundTruth, SimulationSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sccn,
    Bh,
    Maxt,
    Bsgp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sccn => "sccn",
            Method::Bh => "bh",
            Method::Maxt => "maxt",
            Method::Bsgp => "bsgp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sccn" => Ok(Method::Sccn),
            "bh" => Ok(Method::Bh),
            "maxt" => Ok(Method::Maxt),
            "bsgp" => Ok(Method::Bsgp),
            _ => Err(SccnError::InvalidArgument(format!(
                "unknown method '{s}' (sccn, bh, maxt, bsgp)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Desk,
    Paper,
}

impl Geometry {
    pub fn spec(self, variance: f64, subjects: usize) -> SimulationSpec {
        match self {
            Geometry::Desk => desk_spec(variance, subjects),
            Geometry::Paper => paper_spec(variance, subjects),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub geometry: Geometry,
    pub variances: Vec<f64>,
    pub subjects: Vec<usize>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub detect: DetectConfig,
    /// BH level and maxT FWER level.
    pub level: f64,
    pub maxt_perms: usize,
    pub bsgp_k: (usize, usize),
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            geometry: Geometry::Desk,
            variances: vec![1.0],
            subjects: vec![200],
            replicates: 10,
            methods: vec![Method::Sccn, Method::Bh, Method::Maxt, Method::Bsgp],
            seed: 0,
            detect: DetectConfig::default(),
            level: 0.05,
            maxt_perms: 200,
            bsgp_k: (2, 12),
        }
    }
}

/// One method on one simulated replicate. `network_detected` is missing for
/// edge-wise methods, `edge_misassignment` for methods without a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub variance: f64,
    pub subjects: usize,
    pub replicate: usize,
    pub method: Method,
    pub tpr: f64,
    pub fpr: f64,
    pub network_detected: Option<bool>,
    pub edge_misassignment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variance: f64,
    pub subjects: usize,
    pub method: Method,
    pub replicates: usize,
    pub tpr_mean: f64,
    pub tpr_sd: f64,
    pub fpr_mean: f64,
    pub fpr_sd: f64,
    /// Fraction of replicates with the network detected.
    pub network_detected: Option<f64>,
}

/// Seed of replicate `r` in setting `k`.
pub fn replicate_seed(master: u64, setting: usize, r: usize) -> u64 {
    derive_seed(master, Stream::Replicate, ((setting as u64) << 32) | r as u64)
}

/// Runs every method on one dataset.
pub fn run_methods(
    ds: SubjectDataset,
    truth: &GroundTruth,
    spec: &SimulationSpec,
    settings: &BenchSettings,
    replicate: usize,
) -> Result<Vec<ReplicateRow>> {
    let ga = VoxelGrid::box_grid("A", spec.dims_a);
    let gb = VoxelGrid::box_grid("B", spec.dims_b);
    let row = |method, tpr, fpr, nd, mis| ReplicateRow {
        variance: spec.sigma * spec.sigma,
        subjects: spec.subjects,
        replicate,
        method,
        tpr,
        fpr,
        network_detected: nd,
        edge_misassignment: mis,
    };
    let ds = validate_dataset(ds, &ga, &gb)?;
    let model = EdgeModel::from_dataset(ds, settings.detect.regression.two_sided)?;
    let stats = model.observed()?;
    let mut rows = Vec::new();
    for &method in &settings.methods {
        match method {
            Method::Sccn => {
                let mut cfg = settings.detect.clone();
                cfg.seed = derive_seed(spec.seed, Stream::Permutation, u64::MAX);
                let det = detect_model(&model, &ga, &gb, &cfg)?;
                let m = evaluate(&det.report, truth)?;
                rows.push(row(method, m.tpr, m.fpr, Some(m.network_detected), m.edge_misassignment));
            }
            Method::Bh => {
                let mask = bh_fdr(stats.pvals.as_slice(), settings.level)?;
                let m = evaluate_mask(&mask, truth)?;
                rows.push(row(method, m.tpr, m.fpr, None, None));
            }
            Method::Maxt => {
                let mt = maxt_from_model(
                    &model,
                    &stats.zstats,
                    settings.maxt_perms,
                    settings.level,
                    derive_seed(spec.seed, Stream::Baseline, 0),
                    settings.detect.regression.scheme,
                )?;
                let m = evaluate_mask(&mt.reject, truth)?;
                rows.push(row(method, m.tpr, m.fpr, None, None));
            }
            Method::Bsgp => {
                let w = build_inference_matrix(&stats.pvals, &stats.zstats, &settings.detect.regression)?;
                let cc = bsgp_select(&w, settings.bsgp_k.0..=settings.bsgp_k.1, spec.seed)?;
                let (mask, pairs) = bsgp_detection(&cc, &w.values);
                let metrics = evaluate_mask(&mask, truth)?;
                rows.push(row(
                    method,
                    metrics.tpr,
                    metrics.fpr,
                    Some(pairs_recovered(truth, &pairs)),
                    None,
                ));
            }
        }
    }
    Ok(rows)
}

/// Edge mask and member lists of the informative co-clusters.
pub fn bsgp_detection(cc: &CoClusters, w: &Matrix) -> (Vec<bool>, Vec<(Vec<usize>, Vec<usize>)>) {
    let m = w.cols();
    let mut mask = vec![false; w.rows() * m];
    let mut pairs = Vec::new();
    for c in cc.informative(w) {
        let (u, v) = cc.members(c);
        for &i in &u {
            for &j in &v {
                mask[i * m + j] = true;
            }
        }
        pairs.push((u, v));
    }
    (mask, pairs)
}

/// Every replicate of every `(variance, S)` setting, settings in
/// variance-major order.
pub fn run_bench(settings: &BenchSettings) -> Result<Vec<ReplicateRow>> {
    if settings.methods.is_empty() || settings.replicates == 0 {
        return Err(SccnError::InvalidArgument("need at least one method and one replicate".into()));
    }
    let mut rows = Vec::new();
    let mut setting = 0;
    for &variance in &settings.variances {
        for &subjects in &settings.subjects {
            for r in 0..settings.replicates {
                let spec = settings
                    .geometry
                    .spec(variance, subjects)
                    .with_seed(replicate_seed(settings.seed, setting, r));
                let (ds, truth) = generate_dataset(&spec)?;
                log::info!("variance {variance}, S = {subjects}, replicate {r}");
                rows.extend(run_methods(ds, &truth, &spec, settings, r)?);
            }
            setting += 1;
        }
    }
    Ok(rows)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Means and sample standard deviations per setting and method, in order
/// of first appearance.
pub fn summarize(rows: &[ReplicateRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, usize, Method)> = Vec::new();
    for r in rows {
        let k = (r.variance, r.subjects, r.method);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(variance, subjects, method)| {
            let group: Vec<&ReplicateRow> = rows
                .iter()
                .filter(|r| (r.variance, r.subjects, r.method) == (variance, subjects, method))
                .collect();
            let tpr: Vec<f64> = group.iter().map(|r| r.tpr).collect();
            let fpr: Vec<f64> = group.iter().map(|r| r.fpr).collect();
            let (tpr_mean, tpr_sd) = mean_sd(&tpr);
            let (fpr_mean, fpr_sd) = mean_sd(&fpr);
            let nd: Vec<bool> = group.iter().filter_map(|r| r.network_detected).collect();
            SummaryRow {
                variance,
                subjects,
                method,
                replicates: group.len(),
                tpr_mean,
                tpr_sd,
                fpr_mean,
                fpr_sd,
                network_detected: (!nd.is_empty())
                    .then(|| nd.iter().filter(|&&b| b).count() as f64 / nd.len() as f64),
            }
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from("variance,subjects,method,replicates,tpr_mean,tpr_sd,fpr_mean,fpr_sd,network_detected\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.variance,
            r.subjects,
            r.method.name(),
            r.replicates,
            r.tpr_mean,
            r.tpr_sd,
            r.fpr_mean,
            r.fpr_sd,
            opt(r.network_detected)
        ));
    }
    std::fs::write(path, out).map_err(|e| SccnError::io(path, e))
}

pub fn write_replicates_csv(path: &Path, rows: &[ReplicateRow]) -> Result<()> {
    let mut out = String::from("variance,subjects,replicate,method,tpr,fpr,network_detected,edge_misassignment\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.variance,
            r.subjects,
            r.replicate,
            r.method.name(),
            r.tpr,
            r.fpr,
            opt(r.network_detected),
            opt(r.edge_misassignment)
        ));
    }
    std::fs::write(path, out).map_err(|e| SccnError::io(path, e))
}
