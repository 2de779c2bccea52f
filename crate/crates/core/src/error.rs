use thiserror::Error;

/// Position of a node (and optionally the control being applied) in a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeLocation {
    pub level: usize,
    pub node: usize,
    pub control: Option<usize>,
}

impl std::fmt::Display for NodeLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "level {}, node {}", self.level, self.node)?;
        if let Some(c) = self.control {
            write!(f, ", control {c}")?;
        }
        Ok(())
    }
}

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum TsaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The tree (or an enumeration) would exceed its configured size budget.
    #[error("capacity exceeded at level {level}: {count} nodes > cap {cap}")]
    Capacity {
        level: usize,
        count: u128,
        cap: u128,
    },

    /// A dynamics or cost evaluation returned NaN or infinity.
    #[error("non-finite {what}{}", .at.map(|l| format!(" at {l}")).unwrap_or_default())]
    Numerical {
        what: &'static str,
        at: Option<NodeLocation>,
    },

    /// Relative error is undefined because the exact solution vanishes on a level.
    #[error("degenerate norm: exact values vanish on level {level}")]
    DegenerateNorm { level: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TsaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TsaError::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = TsaError> = std::result::Result<T, E>;
