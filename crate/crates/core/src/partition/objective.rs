//! The block-density objective over a bipartition.

use crate::error::{Result, SccnError};
use crate::model::{Bipartition, InferenceMatrix, ThresholdPrior};

use super::search::SearchGrid;

/// Nonzero inference entries in row-major order, the only ones that can
/// exceed a positive threshold.
#[derive(Debug, Clone)]
pub struct Support {
    pub n: usize,
    pub m: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl Support {
    pub fn new(w: &InferenceMatrix) -> Self {
        let (n, m) = w.shape();
        let mut entries = Vec::new();
        for i in 0..n {
            for (j, &v) in w.values.row(i).iter().enumerate() {
                if v > 0.0 {
                    entries.push((i as u32, j as u32, v));
                }
            }
        }
        Support { n, m, entries }
    }

    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    /// Supra-threshold mass per block for each threshold, `[t][c * D + d]`.
    pub fn block_masses(&self, part: &Bipartition, thresholds: &[f64]) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; part.c * part.d]; thresholds.len()];
        for &(i, j, w) in &self.entries {
            let cell = part.u_labels[i as usize] * part.d + part.v_labels[j as usize];
            for (t, &r) in thresholds.iter().enumerate() {
                if w > r {
                    out[t][cell] += w;
                }
            }
        }
        out
    }

    /// Supra-threshold edge counts per block, `[c * D + d]`.
    pub fn block_counts(&self, part: &Bipartition, r: f64) -> Vec<usize> {
        let mut out = vec![0; part.c * part.d];
        for &(i, j, w) in &self.entries {
            if w > r {
                out[part.u_labels[i as usize] * part.d + part.v_labels[j as usize]] += 1;
            }
        }
        out
    }
}

/// `sum_r g(r) sum_{c,d} [ln(density_cd(r)) + lambda ln(|U_c||V_d|)]`, with
/// each block density floored at the grid's density floor.
pub fn objective_value(
    w: &InferenceMatrix,
    part: &Bipartition,
    g: &ThresholdPrior,
    lambda: f64,
    grid: &SearchGrid,
) -> Result<f64> {
    part.validate()?;
    let (n, m) = w.shape();
    if part.u_labels.len() != n || part.v_labels.len() != m {
        return Err(SccnError::Dimension(format!(
            "partition covers ({}, {}) voxels, matrix is {n}x{m}",
            part.u_labels.len(),
            part.v_labels.len()
        )));
    }
    check_lambda(lambda)?;
    Ok(evaluate(&Support::new(w), part, g, lambda, grid.floor(n, m)))
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SccnError::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

pub(crate) fn evaluate(
    support: &Support,
    part: &Bipartition,
    g: &ThresholdPrior,
    lambda: f64,
    floor: f64,
) -> f64 {
    let (density, size) = evaluate_terms(support, part, g, floor);
    density + lambda * size
}

/// The objective split as `density + lambda * size`.
pub(crate) fn evaluate_terms(support: &Support, part: &Bipartition, g: &ThresholdPrior, floor: f64) -> (f64, f64) {
    let thresholds: Vec<f64> = g.points().iter().map(|p| p.r).collect();
    let masses = support.block_masses(part, &thresholds);
    let (us, vs) = (part.u().sizes(), part.v().sizes());
    let mut log_sizes = 0.0;
    for c in 0..part.c {
        for d in 0..part.d {
            log_sizes += ((us[c] * vs[d]) as f64).ln();
        }
    }
    let mut density_term = 0.0;
    let mut size_term = 0.0;
    for (point, mass) in g.points().iter().zip(&masses) {
        let mut inner = 0.0;
        for c in 0..part.c {
            for d in 0..part.d {
                let size = (us[c] * vs[d]) as f64;
                inner += (mass[c * part.d + d] / size).max(floor).ln();
            }
        }
        density_term += point.mass * inner;
        size_term += point.mass * log_sizes;
    }
    (density_term, size_term)
}
