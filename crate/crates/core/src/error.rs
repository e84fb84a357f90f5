//! Error types shared by all modules.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Location of an offending cell, reported with positivity and CFL failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl std::fmt::Display for CellIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.i, self.j, self.k)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("positivity violated in {field} at cell {cell}: value {value:e}")]
    Positivity {
        field: &'static str,
        cell: CellIndex,
        value: f64,
    },

    #[error("time step {dt:e} exceeds the CFL bound {bound:e} (limiting cell {cell})")]
    Cfl {
        dt: f64,
        bound: f64,
        cell: CellIndex,
    },

    #[error("{solver} did not converge: residual {residual:e} after {iterations} iterations")]
    Solver {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("trajectory snapshots were decimated (stride {stride}); residuals need every step")]
    Stride { stride: usize },

    #[error("config error{}: {message}", location_suffix(.key, .line))]
    Config {
        key: Option<String>,
        line: Option<usize>,
        message: String,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn location_suffix(key: &Option<String>, line: &Option<usize>) -> String {
    match (key, line) {
        (Some(k), Some(l)) => format!(" at line {l} (key `{k}`)"),
        (Some(k), None) => format!(" (key `{k}`)"),
        (None, Some(l)) => format!(" at line {l}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(key: Option<&str>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.map(str::to_owned),
            line,
            message: msg.into(),
        }
    }

    /// Strips any `AtStep` wrapping.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}
