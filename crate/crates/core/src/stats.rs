//! Scalar distribution helpers.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

/// Smallest p-value carried through the pipeline; exact zeros are clamped here.
pub const P_FLOOR: f64 = 1e-300;

/// Upper-tail standard normal quantile: the `z` with `P(Z > z) = p`.
pub fn normal_upper_quantile(p: f64) -> f64 {
    let p = p.clamp(P_FLOOR, 1.0);
    std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Two-sided p-value of a Student t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return P_FLOOR;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(P_FLOOR, 1.0)
}

/// Upper-tail p-value `P(T > t)`.
pub fn t_upper_p(t: f64, df: f64) -> f64 {
    let half = 0.5 * t_two_sided_p(t, df);
    if t > 0.0 {
        half.max(P_FLOOR)
    } else {
        (1.0 - half).clamp(P_FLOOR, 1.0)
    }
}

/// `log2` of the binomial coefficient `n choose k` via log-gamma.
pub fn log2_binomial(n: usize, k: usize) -> f64 {
    if k == 0 || k >= n {
        return 0.0;
    }
    let (n, k) = (n as f64, k as f64);
    (ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)) / std::f64::consts::LN_2
}

/// Kolmogorov–Smirnov distance of a sample from Uniform(0, 1).
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = x - i as f64 / n;
            let hi = (i + 1) as f64 / n - x;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_quantiles() {
        assert_relative_eq!(normal_upper_quantile(0.025), 1.959963984540054, epsilon = 1e-9);
        assert_relative_eq!(normal_upper_quantile(0.5), 0.0, epsilon = 1e-12);
        let deep = normal_upper_quantile(1e-300);
        assert!(deep.is_finite() && deep > 37.0 && deep < 37.1);
    }

    #[test]
    fn t_p_values() {
        // t = 2.228 at 10 df is the 0.975 quantile.
        assert_relative_eq!(t_two_sided_p(2.228138851986274, 10.0), 0.05, epsilon = 1e-9);
        assert_eq!(t_two_sided_p(0.0, 5.0), 1.0);
        assert_relative_eq!(t_upper_p(-2.228138851986274, 10.0), 0.975, epsilon = 1e-9);
        let tiny = t_two_sided_p(40.0, 2000.0);
        assert!(tiny > 0.0 && tiny < 1e-200);
    }

    #[test]
    fn binomial_logs() {
        assert_relative_eq!(log2_binomial(4, 2), 6f64.log2(), epsilon = 1e-12);
        assert_eq!(log2_binomial(10, 10), 0.0);
        assert_eq!(log2_binomial(10, 0), 0.0);
    }
}
