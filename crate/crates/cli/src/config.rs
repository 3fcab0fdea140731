//! The JSON run configuration shared by `simulate`, `solve` and `rate-scan`.

use std::path::Path;

use mclab::experiments::{
    Axis, NoiseFamily, NoiseSpec, SamplingSpec, ScanConfig, SyntheticErrors, TrialConfig,
};
use mclab::{Estimator, SolverConfig, Tuning};
use serde::{Deserialize, Serialize};

use crate::fail::{CliError, CliResult};

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn silent() -> NoiseSpec {
    NoiseSpec {
        kind: NoiseFamily::None,
        sigma: 0.0,
        df: None,
    }
}

/// Constant of the theorem tuning rules used by `--lambda auto`.
pub const DEFAULT_RULE_CONSTANT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RunConfig {
    pub m1: usize,
    pub m2: usize,
    #[serde(default = "one")]
    pub rank: usize,
    #[serde(default = "unit")]
    pub a: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default = "silent")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub estimator: Option<Estimator>,
    #[serde(default)]
    pub tuning: Option<Tuning>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    /// Constant for `--lambda auto`; defaults to [`DEFAULT_RULE_CONSTANT`].
    #[serde(default)]
    pub rule_constant: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scan: Option<ScanSpec>,
    /// Record per-trial wall time (breaks byte-identical outputs).
    #[serde(default)]
    pub timing: bool,
}

/// Fixes the theorem-rule constant from a pilot simulation at the first grid point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Calibration {
    pub reps: usize,
    pub quantile: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScanSpec {
    pub axis: Axis,
    pub grid: Vec<usize>,
    pub reps: usize,
    #[serde(default)]
    pub scale_n_with_rank: bool,
    #[serde(default)]
    pub synthetic: Option<SyntheticErrors>,
    #[serde(default)]
    pub calibrate: Option<Calibration>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            CliError::usage(format!(
                "{}: schema violation at {pointer}: {}",
                path.display(),
                e.inner()
            ))
        })
    }

    /// The trial this configuration describes. `n` may be left unset only
    /// when a scan supplies it.
    pub fn trial(&self, estimator: Estimator) -> CliResult<TrialConfig> {
        let n = match (self.n, &self.scan) {
            (Some(n), _) => n,
            (None, Some(s)) if s.axis == Axis::N && !s.grid.is_empty() => s.grid[0],
            _ => return Err(CliError::usage("config is missing the sample size n")),
        };
        Ok(TrialConfig {
            m1: self.m1,
            m2: self.m2,
            rank: self.rank,
            a: self.a,
            n,
            estimator,
            noise: self.noise,
            sampling: self.sampling.clone(),
            tuning: self.tuning.unwrap_or(Tuning::Explicit),
            lambda: self.lambda,
            tau: self.tau,
            solver: self.solver,
            seed: self.seed,
            replicate: 0,
            timing: self.timing,
        })
    }

    pub fn scan(&self) -> CliResult<ScanConfig> {
        let spec = self
            .scan
            .as_ref()
            .ok_or_else(|| CliError::usage("config has no scan section"))?;
        let estimator = self
            .estimator
            .ok_or_else(|| CliError::usage("rate-scan needs an estimator in the config"))?;
        Ok(ScanConfig {
            axis: spec.axis,
            grid: spec.grid.clone(),
            reps: spec.reps,
            seed: self.seed,
            base: self.trial(estimator)?,
            scale_n_with_rank: spec.scale_n_with_rank,
            synthetic: spec.synthetic,
        })
    }
}

/// Renders a serde path such as `noise.sigma` or `grid[2]` as `/noise/sigma`, `/grid/2`.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } | Segment::Enum { variant: key } => {
                out.push_str(&key.replace('~', "~0").replace('/', "~1"))
            }
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, text).unwrap();
        RunConfig::load(&path)
    }

    #[test]
    fn minimal_config_defaults() {
        let c = parse(r#"{"m1": 4, "m2": 5, "n": 10}"#).unwrap();
        assert_eq!(c.rank, 1);
        assert_eq!(c.a, 1.0);
        assert_eq!(c.noise.kind, NoiseFamily::None);
    }

    #[test]
    fn pointer_names_offending_key() {
        let e =
            parse(r#"{"m1": 4, "m2": 5, "noise": {"kind": "gaussian", "sigmaa": 1}}"#).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.message.contains("/noise"), "{}", e.message);
        let e = parse(r#"{"m1": 4, "m2": 5, "n": -3}"#).unwrap_err();
        assert!(e.message.contains("/n"), "{}", e.message);
        let e = parse(r#"{"m1": 4, "m2": 5, "solver": {"maxIters": "x"}}"#).unwrap_err();
        assert!(e.message.contains("/solver/maxIters"), "{}", e.message);
    }

    #[test]
    fn scan_takes_n_from_grid() {
        let c = parse(
            r#"{"m1": 6, "m2": 6, "estimator": "ls", "tuning": {"mode": "theoremRule", "c": 1.0},
                "noise": {"kind": "gaussian", "sigma": 0.2},
                "scan": {"axis": "n", "grid": [100, 200, 400, 800], "reps": 10}}"#,
        )
        .unwrap();
        let s = c.scan().unwrap();
        assert_eq!(s.base.n, 100);
        assert!(s.validate().is_ok());
    }
}
