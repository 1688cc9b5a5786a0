//! Minimum-description-length statistic for sub-area pairs and the
//! max-statistic permutation p-values built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SccnError};
use crate::model::{Bipartition, Matrix};
use crate::stats::log2_binomial;

/// `log2` differential entropy of the standard normal, `½ log2(2πe)`.
pub const NORMAL_ENTROPY_BITS: f64 = 2.047_095_585_180_641;

/// Default additive constant in the entropy term: `-½ log2(2π)`. With it the
/// per-edge cost reduces to `-μ₁² / (2 ln 2)`, so a block with no shift in
/// mean statistic earns nothing for its size.
pub const DEFAULT_MDL_CONSTANT: f64 = -1.325_748_064_736_159_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermutationMode {
    /// Reuse lambda and search a window around the observed cell.
    Fast,
    /// Rerun threshold elicitation, lambda selection and the full search.
    Full,
}

impl std::fmt::Display for PermutationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PermutationMode::Fast => "fast",
            PermutationMode::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub h: usize,
    pub alpha: f64,
    pub mode: PermutationMode,
    /// Report `(1 + count) / (1 + H)` instead of `count / H`.
    pub smoothed: bool,
    pub mdl_constant: f64,
    /// Relative half-width of the fast-mode search window.
    pub window: f64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            h: 1000,
            alpha: 0.05,
            mode: PermutationMode::Fast,
            smoothed: false,
            mdl_constant: DEFAULT_MDL_CONSTANT,
            window: 0.25,
        }
    }
}

impl PermutationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 {
            return Err(SccnError::InvalidArgument("need at least one permutation".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SccnError::InvalidArgument(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if !self.mdl_constant.is_finite() || !(self.window >= 0.0) {
            return Err(SccnError::InvalidArgument("invalid MDL constant or window".into()));
        }
        Ok(())
    }

    /// `[floor(k (1 - w)), ceil(k (1 + w))]`.
    pub fn window_around(&self, k: usize) -> (usize, usize) {
        let lo = ((k as f64) * (1.0 - self.window)).floor().max(1.0) as usize;
        let hi = ((k as f64) * (1.0 + self.window)).ceil() as usize;
        (lo, hi.max(lo))
    }
}

/// Description length of a block given its binomial membership cost.
pub fn mdl_value(log2_membership: f64, size: usize, mu1: f64, c_mdl: f64) -> f64 {
    let per_edge = (1.0 - mu1 * mu1) / (2.0 * std::f64::consts::LN_2) - (NORMAL_ENTROPY_BITS + c_mdl);
    log2_membership + per_edge * size as f64
}

/// Mean of `zstats` over `rows x cols`, summed in sorted index order so the
/// value does not depend on member order.
pub fn block_mean(zstats: &Matrix, rows: &[usize], cols: &[usize]) -> f64 {
    let mut r = rows.to_vec();
    let mut c = cols.to_vec();
    r.sort_unstable();
    c.sort_unstable();
    let mut sum = 0.0;
    for &i in &r {
        let row = zstats.row(i);
        for &j in &c {
            sum += row[j];
        }
    }
    sum / (r.len() * c.len()) as f64
}

/// Mean of `zstats` over every block of `part`, `[c * D + d]`. Each block
/// is summed in the same order as [`block_mean`], so values agree exactly.
pub fn block_means(part: &Bipartition, zstats: &Matrix) -> Vec<f64> {
    let (n, m) = zstats.shape();
    let mut sums = vec![0.0; part.c * part.d];
    for i in 0..n {
        let base = part.u_labels[i] * part.d;
        for (j, &z) in zstats.row(i).iter().enumerate() {
            sums[base + part.v_labels[j]] += z;
        }
    }
    let (us, vs) = (part.u().sizes(), part.v().sizes());
    debug_assert_eq!(us.iter().sum::<usize>(), n);
    debug_assert_eq!(vs.iter().sum::<usize>(), m);
    for c in 0..part.c {
        for d in 0..part.d {
            sums[c * part.d + d] /= (us[c] * vs[d]) as f64;
        }
    }
    sums
}

/// MDL of the pair `(U_c, V_d)` in an `n x m` bipartite graph.
pub fn mdl_statistic(u: &[usize], v: &[usize], zstats: &Matrix, c_mdl: f64) -> Result<f64> {
    let (n, m) = zstats.shape();
    if u.is_empty() || v.is_empty() {
        return Err(SccnError::InvalidArgument("empty sub-area".into()));
    }
    if u.iter().any(|&i| i >= n) || v.iter().any(|&j| j >= m) {
        return Err(SccnError::Dimension("sub-area member outside the matrix".into()));
    }
    let mu1 = block_mean(zstats, u, v);
    let membership = log2_binomial(n, u.len()) + log2_binomial(m, v.len());
    Ok(mdl_value(membership, u.len() * v.len(), mu1, c_mdl))
}

/// Test statistic for a block: lower description length means denser, so
/// the statistic is `-MDL` and large values are evidence against the null.
pub fn score(mdl: f64) -> f64 {
    -mdl
}

/// `#{h : T^h > T0} / H`, or `(1 + #) / (1 + H)` when smoothed. An exact
/// tie counts as an exceedance, so a statistic that the null reproduces
/// bit for bit is never significant.
pub fn perm_p_value(observed: f64, null_maxima: &[f64], smoothed: bool) -> f64 {
    let count = null_maxima.iter().filter(|&&t| t >= observed).count();
    let h = null_maxima.len();
    if smoothed {
        (1 + count) as f64 / (1 + h) as f64
    } else {
        count as f64 / h as f64
    }
}
