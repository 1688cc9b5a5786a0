//! Threshold prior elicitation and likelihood-based selection of lambda.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::bh_adjust;
use crate::error::{Result, SccnError};
use crate::model::{
    Bipartition, InferenceMatrix, LambdaTraceEntry, Matrix, ThresholdPoint, ThresholdPrior,
};
use crate::partition::{best_partitions, Candidates, SearchResult, Support};

/// p-value cut-offs behind the default threshold support.
pub const DEFAULT_THRESHOLD_P: [f64; 3] = [0.05, 0.005, 0.001];
/// Masses used when the FDR estimates are unusable.
pub const FALLBACK_MASSES: [f64; 3] = [0.1, 0.3, 0.6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaConfig {
    pub lambda_grid: Vec<f64>,
    /// Prior over the likelihood threshold; `None` reuses the objective's prior.
    pub r0_prior: Option<ThresholdPrior>,
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig {
            lambda_grid: default_lambda_grid(),
            r0_prior: None,
        }
    }
}

impl LambdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(SccnError::InvalidArgument("empty lambda grid".into()));
        }
        if self.lambda_grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(SccnError::InvalidArgument("lambda grid values must lie in [0, 1]".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SccnError::InvalidArgument("lambda grid must be sorted and unique".into()));
        }
        Ok(())
    }
}

/// `0, 0.125, ..., 1`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=8).map(|k| k as f64 / 8.0).collect()
}

/// Prior with masses proportional to `1 / fdr` on thresholds `-ln p`.
pub fn prior_from_fdr(threshold_p: &[f64], fdrs: &[f64]) -> Result<ThresholdPrior> {
    if threshold_p.len() != fdrs.len() || threshold_p.is_empty() {
        return Err(SccnError::InvalidArgument(
            "need one FDR per threshold".into(),
        ));
    }
    if fdrs.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(SccnError::InvalidArgument("FDR estimates must be positive".into()));
    }
    let inv: Vec<f64> = fdrs.iter().map(|f| 1.0 / f).collect();
    let total: f64 = inv.iter().sum();
    let mut masses: Vec<f64> = inv.iter().map(|v| v / total).collect();
    fix_sum(&mut masses);
    let points = threshold_p
        .iter()
        .zip(masses)
        .map(|(&p, mass)| ThresholdPoint { r: -p.ln(), mass })
        .collect();
    ThresholdPrior::new(points)
}

// Puts the rounding residue on the largest mass so the total is exactly 1.
fn fix_sum(masses: &mut [f64]) {
    let total: f64 = masses.iter().sum();
    let k = (0..masses.len())
        .max_by(|&a, &b| masses[a].total_cmp(&masses[b]))
        .unwrap_or(0);
    masses[k] += 1.0 - total;
}

pub fn fallback_prior() -> ThresholdPrior {
    let points = DEFAULT_THRESHOLD_P
        .iter()
        .zip(FALLBACK_MASSES)
        .map(|(&p, mass)| ThresholdPoint { r: -p.ln(), mass })
        .collect();
    ThresholdPrior::new(points).expect("fallback prior is valid")
}

/// Support `-ln {0.05, 0.005, 0.001}` with masses proportional to the
/// inverse BH-adjusted p-value of the largest p-value under each cut-off.
pub fn default_threshold_prior(pvals: &Matrix) -> ThresholdPrior {
    let p = pvals.as_slice();
    let adjusted = bh_adjust(p);
    let mut fdrs = Vec::with_capacity(DEFAULT_THRESHOLD_P.len());
    for &t in &DEFAULT_THRESHOLD_P {
        // Adjusted p-values are monotone in p, so the one at the largest
        // p-value under the cut-off is the FDR of rejecting at that cut-off.
        let best = p
            .iter()
            .zip(&adjusted)
            .filter(|(&pv, _)| pv <= t)
            .max_by(|a, b| a.0.total_cmp(b.0))
            .map(|(_, &q)| q);
        match best {
            Some(q) if q > 0.0 => fdrs.push(q),
            _ => return fallback_prior(),
        }
    }
    prior_from_fdr(&DEFAULT_THRESHOLD_P, &fdrs).unwrap_or_else(|_| fallback_prior())
}

/// Bernoulli block log-likelihood of `I(w > r0)` under per-block MLEs.
pub fn block_loglik(w: &InferenceMatrix, part: &Bipartition, r0: f64) -> Result<f64> {
    let (n, m) = w.shape();
    if part.u_labels.len() != n || part.v_labels.len() != m {
        return Err(SccnError::Dimension(format!(
            "partition covers ({}, {}) voxels, matrix is {n}x{m}",
            part.u_labels.len(),
            part.v_labels.len()
        )));
    }
    part.validate()?;
    Ok(loglik(&Support::new(w), part, r0))
}

pub(crate) fn loglik(support: &Support, part: &Bipartition, r0: f64) -> f64 {
    let counts = support.block_counts(part, r0);
    let (us, vs) = (part.u().sizes(), part.v().sizes());
    let mut total = 0.0;
    for c in 0..part.c {
        for d in 0..part.d {
            let size = (us[c] * vs[d]) as f64;
            let k = counts[c * part.d + d] as f64;
            let pi = k / size;
            if k > 0.0 {
                total += k * pi.ln();
            }
            if k < size {
                total += (size - k) * (1.0 - pi).ln();
            }
        }
    }
    total
}

pub(crate) fn integrated_loglik(support: &Support, part: &Bipartition, g0: &ThresholdPrior) -> f64 {
    g0.points()
        .iter()
        .map(|p| p.mass * loglik(support, part, p.r))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda_hat: f64,
    pub trace: Vec<LambdaTraceEntry>,
    pub result: SearchResult,
}

/// Runs the partition search at every grid lambda over shared candidate
/// labelings and keeps the lambda whose partition maximizes the integrated
/// block likelihood. Ties go to the smaller lambda.
pub fn select_lambda(
    w: &InferenceMatrix,
    cands: &Candidates,
    g: &ThresholdPrior,
    cfg: &LambdaConfig,
) -> Result<LambdaSelection> {
    cfg.validate()?;
    let support = Support::new(w);
    let g0 = cfg.r0_prior.as_ref().unwrap_or(g);
    let runs: Vec<(SearchResult, f64)> = best_partitions(&support, cands, g, &cfg.lambda_grid)?
        .into_par_iter()
        .map(|res| {
            let ll = integrated_loglik(&support, &res.partition, g0);
            (res, ll)
        })
        .collect();
    let mut best = 0;
    for k in 1..runs.len() {
        if runs[k].1 > runs[best].1 {
            best = k;
        }
    }
    let trace = cfg
        .lambda_grid
        .iter()
        .zip(&runs)
        .map(|(&lambda, (res, ll))| LambdaTraceEntry {
            lambda,
            c: res.partition.c,
            d: res.partition.d,
            objective: res.objective,
            loglik: *ll,
        })
        .collect();
    Ok(LambdaSelection {
        lambda_hat: cfg.lambda_grid[best],
        trace,
        result: runs[best].0.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn inference(values: Matrix) -> InferenceMatrix {
        let (n, m) = values.shape();
        InferenceMatrix::new(values, 1.0, Matrix::zeros(n, m)).unwrap()
    }

    #[test]
    fn fdr_inverse_masses() {
        let g = prior_from_fdr(&DEFAULT_THRESHOLD_P, &[0.2, 0.1, 0.05]).unwrap();
        let m: Vec<f64> = g.points().iter().map(|p| p.mass).collect();
        assert_relative_eq!(m[0], 1.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(m[1], 2.0 / 7.0, epsilon = 1e-12);
        assert_relative_eq!(m[2], 4.0 / 7.0, epsilon = 1e-12);
        let eq = prior_from_fdr(&DEFAULT_THRESHOLD_P, &[0.1, 0.1, 0.1]).unwrap();
        for p in eq.points() {
            assert_relative_eq!(p.mass, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn no_small_p_values_falls_back() {
        let p = Matrix::from_vec(1, 3, vec![0.2, 0.5, 0.9]).unwrap();
        let g = default_threshold_prior(&p);
        assert_eq!(g, fallback_prior());
        let m: Vec<f64> = g.points().iter().map(|p| p.mass).collect();
        assert_eq!(m, vec![0.1, 0.3, 0.6]);
        assert_relative_eq!(g.points()[1].r, -(0.005f64).ln());
    }

    #[test]
    fn default_prior_uses_bh_estimates() {
        // 10 p-values: BH adjusted for the largest under each cut-off.
        let p = Matrix::from_vec(1, 10, vec![0.0005, 0.004, 0.04, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]).unwrap();
        let g = default_threshold_prior(&p);
        // Adjusted: 0.0005*10/1 = 0.005, 0.004*10/2 = 0.02, 0.04*10/3 = 0.1333.
        let inv = [1.0 / (0.4 / 3.0), 1.0 / 0.02, 1.0 / 0.005];
        let total: f64 = inv.iter().sum();
        for (pt, v) in g.points().iter().zip(inv) {
            assert_relative_eq!(pt.mass, v / total, epsilon = 1e-12);
        }
    }

    #[test]
    fn loglik_examples() {
        let full = inference(Matrix::from_vec(2, 2, vec![5.0; 4]).unwrap());
        let one = Bipartition::from_labels(vec![0, 0], 1, vec![0, 0], 1).unwrap();
        assert_eq!(block_loglik(&full, &one, 3.0).unwrap(), 0.0);
        let half = inference(Matrix::from_vec(2, 2, vec![5.0, 0.0, 0.0, 5.0]).unwrap());
        assert_relative_eq!(block_loglik(&half, &one, 3.0).unwrap(), 4.0 * 0.5f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(4.0 * 0.5f64.ln(), -2.7726, epsilon = 1e-4);
        let empty = inference(Matrix::zeros(2, 2));
        assert_eq!(block_loglik(&empty, &one, 3.0).unwrap(), 0.0);
    }

    fn random_case(seed: u64) -> (InferenceMatrix, Bipartition) {
        use rand::Rng;
        let mut rng = crate::rng::rng_from(seed);
        let (n, m) = (rng.gen_range(2..10), rng.gen_range(2..10));
        let w = Matrix::from_fn(n, m, |_, _| if rng.gen_bool(0.4) { rng.gen_range(3.0..9.0) } else { 0.0 });
        let c = rng.gen_range(1..=n.min(3));
        let d = rng.gen_range(1..=m.min(3));
        let u = (0..n).map(|i| i % c).collect();
        let v = (0..m).map(|j| j % d).collect();
        (inference(w), Bipartition::from_labels(u, c, v, d).unwrap())
    }

    proptest! {
        #[test]
        fn loglik_nonpositive_and_refinement_monotone(seed in any::<u64>(), r0 in 3.0f64..8.0) {
            let (w, part) = random_case(seed);
            let ll = block_loglik(&w, &part, r0).unwrap();
            prop_assert!(ll <= 0.0);
            // Refine U by splitting every class by voxel parity.
            let refined = Labeling::compact(
                &part.u_labels.iter().enumerate().map(|(i, &l)| l * 2 + i % 2).collect::<Vec<_>>(),
            );
            let fine = Bipartition::new(refined, part.v());
            prop_assert!(block_loglik(&w, &fine, r0).unwrap() >= ll - 1e-9);
        }

        #[test]
        fn loglik_invariant_to_label_permutation(seed in any::<u64>()) {
            let (w, part) = random_case(seed);
            let u = part.u_labels.iter().map(|&l| part.c - 1 - l).collect();
            let v = part.v_labels.iter().map(|&l| part.d - 1 - l).collect();
            let swapped = Bipartition::from_labels(u, part.c, v, part.d).unwrap();
            let g = fallback_prior();
            let s = Support::new(&w);
            let a = integrated_loglik(&s, &part, &g);
            let b = integrated_loglik(&s, &swapped, &g);
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    use crate::model::Labeling;
}
