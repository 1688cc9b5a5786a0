use std::fmt;
use std::path::PathBuf;

/// A single violated dataset or grid invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension {
        subject: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    DuplicateSubject(String),
    NonFinite {
        subject: String,
        i: usize,
        j: usize,
    },
    NonFiniteCovariate {
        subject: String,
        column: usize,
    },
    CovariateLength {
        subject: String,
        expected: usize,
        found: usize,
    },
    PrimaryIndex {
        index: usize,
        covariates: usize,
    },
    DuplicateVoxelId(u32),
    DuplicateCoordinate([i32; 3]),
    Other(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension {
                subject,
                expected,
                found,
            } => write!(
                f,
                "subject {subject}: connectivity is {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::DuplicateSubject(id) => write!(f, "duplicate subject_id {id}"),
            Violation::NonFinite { subject, i, j } => {
                write!(f, "subject {subject}: non-finite connectivity at ({i}, {j})")
            }
            Violation::NonFiniteCovariate { subject, column } => {
                write!(f, "subject {subject}: non-finite covariate in column {column}")
            }
            Violation::CovariateLength {
                subject,
                expected,
                found,
            } => write!(
                f,
                "subject {subject}: {found} covariates, expected {expected}"
            ),
            Violation::PrimaryIndex { index, covariates } => write!(
                f,
                "primary covariate index {index} out of range for {covariates} covariates"
            ),
            Violation::DuplicateVoxelId(id) => write!(f, "duplicate voxel_id {id}"),
            Violation::DuplicateCoordinate(c) => {
                write!(f, "duplicate voxel coordinate ({}, {}, {})", c[0], c[1], c[2])
            }
            Violation::Other(msg) => f.write_str(msg),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SccnError {
    #[error("validation failed: {}", join(.0))]
    Validation(Vec<Violation>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rank-deficient design: column(s) {} collinear with earlier columns", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("zero variance time series for voxel {region}:{voxel}")]
    ZeroVariance { region: String, voxel: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<SccnError>,
    },
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl SccnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SccnError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        SccnError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage attribution.
    pub fn root(&self) -> &SccnError {
        match self {
            SccnError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for invalid input, 3 for numeric failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            SccnError::Validation(_)
            | SccnError::Dimension(_)
            | SccnError::RankDeficient(_)
            | SccnError::ZeroVariance { .. }
            | SccnError::InvalidArgument(_)
            | SccnError::Parse(_) => 2,
            SccnError::Numeric(_) => 3,
            SccnError::Io { .. } | SccnError::Stage { .. } => 1,
        }
    }
}

pub type Result<T, E = SccnError> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
