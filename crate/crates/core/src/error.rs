use std::fmt;

use thiserror::Error;

/// Which member of a triad a value belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Child,
    Mother,
    Father,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Child, Role::Mother, Role::Father];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Child => "child",
            Role::Mother => "mother",
            Role::Father => "father",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "child" | "offspring" => Ok(Role::Child),
            "mother" => Ok(Role::Mother),
            "father" => Ok(Role::Father),
            other => Err(Error::InvalidArgument(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside the open interval (0, 1)")]
    Domain { value: f64 },

    #[error("invalid Beta shape parameters ({alpha}, {beta})")]
    InvalidScale { alpha: f64, beta: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate {role} values at site `{site}`: {reason}")]
    DegenerateSite { site: String, role: Role, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("optimizer failed for cluster {cluster}: {reason}")]
    Optimizer { cluster: usize, reason: String },

    #[error("all {restarts} EM restarts failed; last error: {last}")]
    AllRestartsFailed { restarts: usize, last: String },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
