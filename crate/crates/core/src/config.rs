//! Run configuration and its flat `key = value` text form.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SccnError};
use crate::inference::{PermutationScheme, RegressionConfig};
use crate::lambda::{default_lambda_grid, LambdaConfig};
use crate::mdl::{PermutationConfig, PermutationMode};
use crate::model::{ThresholdPoint, ThresholdPrior};
use crate::partition::search::{SearchGrid, DEFAULT_GRID_MAX};
use crate::partition::SpectralConfig;
use crate::spatial::DEFAULT_EPSILON;

/// Membership cost of a within-region pair `(c, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagonalMembership {
    /// One binomial term `C(n, |U_c|)`.
    Single,
    /// Two terms, as for an off-diagonal pair.
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub seed: u64,
    pub regression: RegressionConfig,
    pub epsilon_a: f64,
    pub epsilon_b: f64,
    pub c_min: usize,
    /// `None` means `min(n, 64)`.
    pub c_max: Option<usize>,
    pub d_min: usize,
    pub d_max: Option<usize>,
    pub density_floor: Option<f64>,
    /// `None` selects lambda by likelihood.
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
    /// `None` elicits the prior from the data.
    pub threshold_prior: Option<ThresholdPrior>,
    pub r0_prior: Option<ThresholdPrior>,
    pub spectral: SpectralConfig,
    pub permutation: PermutationConfig,
    pub diagonal_membership: DiagonalMembership,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            seed: 0,
            regression: RegressionConfig::default(),
            epsilon_a: DEFAULT_EPSILON,
            epsilon_b: DEFAULT_EPSILON,
            c_min: 1,
            c_max: None,
            d_min: 1,
            d_max: None,
            density_floor: None,
            lambda: None,
            lambda_grid: default_lambda_grid(),
            threshold_prior: None,
            r0_prior: None,
            spectral: SpectralConfig::default(),
            permutation: PermutationConfig::default(),
            diagonal_membership: DiagonalMembership::Single,
        }
    }
}

const KEYS: &[&str] = &[
    "seed",
    "screen_p",
    "two_sided",
    "corr_clamp",
    "scheme",
    "epsilon_a",
    "epsilon_b",
    "c_min",
    "c_max",
    "d_min",
    "d_max",
    "density_floor",
    "lambda",
    "lambda_grid",
    "threshold_prior",
    "r0_prior",
    "restarts",
    "eigen_tol",
    "eigen_max_iter",
    "dense_limit",
    "perms",
    "alpha",
    "perm_mode",
    "smoothed",
    "mdl_constant",
    "window",
    "diagonal_membership",
];

impl DetectConfig {
    /// Search grid for an `n x m` problem.
    pub fn grid(&self, n: usize, m: usize) -> SearchGrid {
        SearchGrid {
            c_min: self.c_min,
            c_max: self.c_max.unwrap_or(n.min(DEFAULT_GRID_MAX)),
            d_min: self.d_min,
            d_max: self.d_max.unwrap_or(m.min(DEFAULT_GRID_MAX)),
            density_floor: self.density_floor,
        }
    }

    pub fn lambda_config(&self) -> LambdaConfig {
        LambdaConfig {
            lambda_grid: self.lambda_grid.clone(),
            r0_prior: self.r0_prior.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regression.validate()?;
        self.permutation.validate()?;
        self.lambda_config().validate()?;
        for e in [self.epsilon_a, self.epsilon_b] {
            if !(e > 0.0 && e.is_finite()) {
                return Err(SccnError::InvalidArgument(format!("epsilon {e} must be positive")));
            }
        }
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(SccnError::InvalidArgument(format!("lambda {l} outside [0, 1]")));
            }
        }
        if self.spectral.restarts == 0 {
            return Err(SccnError::InvalidArgument("restarts must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Every key, one per line, in a form [`DetectConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |x| x.to_string());
        let optf = |v: Option<f64>| v.map_or("auto".to_string(), |x| format!("{x:?}"));
        let prior = |p: &Option<ThresholdPrior>| match p {
            None => "auto".to_string(),
            Some(p) => p
                .points()
                .iter()
                .map(|q| format!("{:?}:{:?}", q.r, q.mass))
                .collect::<Vec<_>>()
                .join(","),
        };
        let r = &self.regression;
        let p = &self.permutation;
        let lines = [
            ("seed", self.seed.to_string()),
            ("screen_p", format!("{:?}", r.screen_p)),
            ("two_sided", r.two_sided.to_string()),
            ("corr_clamp", format!("{:?}", r.corr_clamp)),
            ("scheme", scheme_name(r.scheme).to_string()),
            ("epsilon_a", format!("{:?}", self.epsilon_a)),
            ("epsilon_b", format!("{:?}", self.epsilon_b)),
            ("c_min", self.c_min.to_string()),
            ("c_max", opt(self.c_max)),
            ("d_min", self.d_min.to_string()),
            ("d_max", opt(self.d_max)),
            ("density_floor", optf(self.density_floor)),
            ("lambda", optf(self.lambda)),
            (
                "lambda_grid",
                self.lambda_grid.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","),
            ),
            ("threshold_prior", prior(&self.threshold_prior)),
            ("r0_prior", prior(&self.r0_prior)),
            ("restarts", self.spectral.restarts.to_string()),
            ("eigen_tol", format!("{:?}", self.spectral.eigen.tol)),
            ("eigen_max_iter", self.spectral.eigen.max_iter.to_string()),
            ("dense_limit", self.spectral.eigen.dense_limit.to_string()),
            ("perms", p.h.to_string()),
            ("alpha", format!("{:?}", p.alpha)),
            ("perm_mode", p.mode.to_string()),
            ("smoothed", p.smoothed.to_string()),
            ("mdl_constant", format!("{:?}", p.mdl_constant)),
            ("window", format!("{:?}", p.window)),
            (
                "diagonal_membership",
                match self.diagonal_membership {
                    DiagonalMembership::Single => "single",
                    DiagonalMembership::Double => "double",
                }
                .to_string(),
            ),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = DetectConfig::default();
        let mut seen = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SccnError::Parse(format!("line {}: expected key = value", ln + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(SccnError::Parse(format!("line {}: duplicate key '{key}'", ln + 1)));
            }
            seen.push(key);
            cfg.set(key, value)
                .map_err(|e| SccnError::Parse(format!("line {}: {e}", ln + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, value)?,
            "screen_p" => self.regression.screen_p = num(key, value)?,
            "two_sided" => self.regression.two_sided = num(key, value)?,
            "corr_clamp" => self.regression.corr_clamp = num(key, value)?,
            "scheme" => {
                self.regression.scheme = match value {
                    "shuffle" => PermutationScheme::Shuffle,
                    "freedman-lane" => PermutationScheme::FreedmanLane,
                    _ => return Err(bad(key, value)),
                }
            }
            "epsilon_a" => self.epsilon_a = num(key, value)?,
            "epsilon_b" => self.epsilon_b = num(key, value)?,
            "c_min" => self.c_min = num(key, value)?,
            "c_max" => self.c_max = auto(key, value)?,
            "d_min" => self.d_min = num(key, value)?,
            "d_max" => self.d_max = auto(key, value)?,
            "density_floor" => self.density_floor = auto(key, value)?,
            "lambda" => self.lambda = auto(key, value)?,
            "lambda_grid" => {
                self.lambda_grid = value
                    .split(',')
                    .map(|x| num(key, x.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            "threshold_prior" => self.threshold_prior = parse_prior(key, value)?,
            "r0_prior" => self.r0_prior = parse_prior(key, value)?,
            "restarts" => self.spectral.restarts = num(key, value)?,
            "eigen_tol" => self.spectral.eigen.tol = num(key, value)?,
            "eigen_max_iter" => self.spectral.eigen.max_iter = num(key, value)?,
            "dense_limit" => self.spectral.eigen.dense_limit = num(key, value)?,
            "perms" => self.permutation.h = num(key, value)?,
            "alpha" => self.permutation.alpha = num(key, value)?,
            "perm_mode" => {
                self.permutation.mode = match value {
                    "fast" => PermutationMode::Fast,
                    "full" => PermutationMode::Full,
                    _ => return Err(bad(key, value)),
                }
            }
            "smoothed" => self.permutation.smoothed = num(key, value)?,
            "mdl_constant" => self.permutation.mdl_constant = num(key, value)?,
            "window" => self.permutation.window = num(key, value)?,
            "diagonal_membership" => {
                self.diagonal_membership = match value {
                    "single" => DiagonalMembership::Single,
                    "double" => DiagonalMembership::Double,
                    _ => return Err(bad(key, value)),
                }
            }
            _ => {
                return Err(SccnError::Parse(format!(
                    "unknown key '{key}' (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

fn scheme_name(s: PermutationScheme) -> &'static str {
    match s {
        PermutationScheme::Shuffle => "shuffle",
        PermutationScheme::FreedmanLane => "freedman-lane",
    }
}

fn bad(key: &str, value: &str) -> SccnError {
    SccnError::Parse(format!("invalid value '{value}' for '{key}'"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

/// `auto`, or comma-separated `r:mass` points.
fn parse_prior(key: &str, value: &str) -> Result<Option<ThresholdPrior>> {
    if value == "auto" {
        return Ok(None);
    }
    let points = value
        .split(',')
        .map(|pt| {
            let (r, mass) = pt.trim().split_once(':').ok_or_else(|| bad(key, value))?;
            Ok(ThresholdPoint {
                r: num(key, r.trim())?,
                mass: num(key, mass.trim())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ThresholdPrior::new(points).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = DetectConfig::default();
        assert_eq!(DetectConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(DetectConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn overrides_apply() {
        let cfg = DetectConfig::parse(
            "# comment\nseed = 9\nlambda = 0.5\nc_max = 12\nthreshold_prior = 3.0:0.25, 5.0:0.75\nperm_mode = full\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lambda, Some(0.5));
        assert_eq!(cfg.c_max, Some(12));
        assert_eq!(cfg.permutation.mode, PermutationMode::Full);
        assert_eq!(cfg.threshold_prior.unwrap().points()[1].mass, 0.75);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(matches!(DetectConfig::parse("eigen_tolerance = 1e-8"), Err(SccnError::Parse(_))));
        assert!(DetectConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(DetectConfig::parse("seed 1").is_err());
        assert!(DetectConfig::parse("lambda = 1.5").is_err());
        assert!(DetectConfig::parse("scheme = bogus").is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = DetectConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
