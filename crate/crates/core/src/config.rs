//! TOML run configuration.
//!
//! A config is parsed once, validated, and its raw text is kept so that the
//! run metadata can echo it back byte for byte. Every output file carries the
//! short hash of that text.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chemotaxis::{InitialData, SchemeConfig};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::monitor::CertifyOptions;
use crate::params::ModelParams;
use crate::stokes::PotentialSpec;
use crate::testfn::{
    make_stream_psi, SolenoidalTestField, TestFunction, TestFunctionSpec, TimeWindow,
};

/// Cell counts and (optionally) domain lengths; two entries give a planar grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: Vec<usize>,
    #[serde(default)]
    pub len: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        let len = self.len.clone().unwrap_or_else(|| vec![1.0; self.n.len()]);
        if len.len() != self.n.len() {
            return Err(Error::config(
                Some("grid.len"),
                None,
                "needs one length per axis",
            ));
        }
        match self.n.len() {
            2 => Grid::new_2d(self.n[0], self.n[1], len[0], len[1]),
            3 => Grid::new_3d([self.n[0], self.n[1], self.n[2]], [len[0], len[1], len[2]]),
            k => Err(Error::config(
                Some("grid.n"),
                None,
                format!("expected 2 or 3 cell counts, got {k}"),
            )),
        }
        .map_err(|e| match e {
            Error::Domain(msg) => Error::config(Some("grid"), None, msg),
            e => e,
        })
    }
}

/// Solenoidal test field for the velocity weak form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamFunctionSpec {
    pub modes: [u32; 2],
    pub t0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ModelParams,
    pub grid: GridSpec,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub potential: PotentialSpec,
    /// Scalar test functions. Empty means the built-in set.
    #[serde(default)]
    pub test_functions: Vec<TestFunctionSpec>,
    #[serde(default)]
    pub stream_functions: Vec<StreamFunctionSpec>,
    #[serde(default)]
    pub certify: CertifyOptions,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Raw text the config was parsed from.
    #[serde(skip)]
    pub source: String,
}

impl RunConfig {
    /// Parses and validates a config. Errors carry the offending key and
    /// line where they can be located.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        cfg.source = text.to_owned();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let locate = |key: &str, e: Error| match e {
            Error::Domain(msg) => Error::config(Some(key), line_of(&self.source, key), msg),
            e => e,
        };
        self.params.validate().map_err(|e| locate("params", e))?;
        let g = self.grid.build()?;
        self.scheme.validate().map_err(|e| locate("scheme", e))?;
        self.potential
            .validate(&g)
            .map_err(|e| locate("potential", e))?;
        self.initial.build(&g).map_err(|e| locate("initial", e))?;
        for tf in &self.test_functions {
            if !tf.plateau && !(tf.t1 > tf.t0) {
                return Err(Error::config(
                    Some("test_functions"),
                    line_of(&self.source, "test_functions"),
                    "need t1 > t0",
                ));
            }
        }
        for sf in &self.stream_functions {
            if !(sf.t1 > sf.t0) || sf.modes.contains(&0) {
                return Err(Error::config(
                    Some("stream_functions"),
                    line_of(&self.source, "stream_functions"),
                    "need t1 > t0 and nonzero modes",
                ));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        self.grid.build().expect("validated")
    }

    /// SHA-256 of the raw config text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    /// First 12 hex digits of the hash, used in file names.
    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_owned()
    }

    /// Scalar test functions, falling back to phi == 1 plus three cosine
    /// modes windowed over the whole run.
    pub fn test_functions(&self) -> Vec<TestFunction> {
        let len = self.grid().len;
        if !self.test_functions.is_empty() {
            return self
                .test_functions
                .iter()
                .map(|s| TestFunction::from_spec(s, len))
                .collect();
        }
        let w = TimeWindow::bump(0.0, self.scheme.t_end);
        let mut out = vec![TestFunction::constant_one(len)];
        for (k, m) in [(1, 0), (1, 2), (2, 1)] {
            out.push(crate::testfn::make_cosine_phi(k, m, w, true, len));
        }
        out
    }

    pub fn stream_functions(&self) -> Vec<SolenoidalTestField> {
        let len = self.grid().len;
        if !self.stream_functions.is_empty() {
            return self
                .stream_functions
                .iter()
                .map(|s| make_stream_psi(s.modes, TimeWindow::bump(s.t0, s.t1), len))
                .collect();
        }
        let w = TimeWindow::bump(0.0, self.scheme.t_end);
        vec![
            make_stream_psi([1, 2], w, len),
            make_stream_psi([2, 1], w, len),
        ]
    }

    /// Re-serializes the parsed config (not the raw text).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(None, None, e.to_string()))
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first table header or assignment mentioning `key`.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let last = key.rsplit('.').next().unwrap_or(key);
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.starts_with(&format!("[{key}]"))
                || l.starts_with(&format!("[[{key}]]"))
                || l.starts_with(&format!("{last} "))
                || l.starts_with(&format!("{last}="))
        })
        .map(|i| i + 1)
}

fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let msg = e.message().to_owned();
    // serde messages quote the field in backticks: "missing field `chi`"
    let key = msg.split('`').nth(1).map(str::to_owned);
    let line = e.span().map(|s| line_at(text, s.start));
    Error::Config {
        key,
        line,
        message: msg,
    }
}
