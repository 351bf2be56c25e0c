//! One-parameter sweeps over a base configuration.

use std::fmt;
use std::fs;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IdmlError, Result};
use crate::eval::EvalReport;

use super::config::RunConfig;
use super::run::{train, RunOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Tau,
    Gamma,
    BatchSize,
    SemanticDim,
    UncertaintyDim,
}

impl SweepParam {
    pub const ALL: [SweepParam; 5] = [
        SweepParam::Tau,
        SweepParam::Gamma,
        SweepParam::BatchSize,
        SweepParam::SemanticDim,
        SweepParam::UncertaintyDim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Gamma => "gamma",
            SweepParam::BatchSize => "batch_size",
            SweepParam::SemanticDim => "semantic_dim",
            SweepParam::UncertaintyDim => "uncertainty_dim",
        }
    }

    /// `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = cfg.clone();
        let whole = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(IdmlError::param(format!("{} needs a positive integer, got {value}", self.name())))
            }
        };
        match self {
            SweepParam::Tau => c.metric_params.tau = value,
            SweepParam::Gamma => c.metric_params.gamma = value,
            SweepParam::BatchSize => c.batch_size = whole()?,
            SweepParam::SemanticDim => c.model.semantic_dim = whole()?,
            SweepParam::UncertaintyDim => c.model.uncertainty_dim = whole()?,
        }
        c.validate()?;
        Ok(c)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = IdmlError;

    fn from_str(s: &str) -> Result<Self> {
        SweepParam::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| IdmlError::param(format!("unknown sweep parameter '{s}'")))
    }
}

/// Thread cap from `IDML_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("IDML_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// One run per value, all with the base seed. Each run writes into
/// `<output_dir>/<param>=<value>/` and the evaluation rows are collected in
/// `<output_dir>/sweep.csv`. Parallel runs are independent and produce the
/// same records as sequential ones.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64], parallel: bool) -> Result<Vec<RunOutput>> {
    if values.is_empty() {
        return Err(IdmlError::param("sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = param.apply(cfg, v)?;
            c.output_dir = cfg.output_dir.as_ref().map(|d| d.join(format!("{param}={v}")));
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let outputs = if parallel {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_cap() {
            pool = pool.num_threads(n);
        }
        let pool = pool
            .build()
            .map_err(|e| IdmlError::param(format!("thread pool: {e}")))?;
        pool.install(|| configs.par_iter().map(train).collect::<Result<Vec<_>>>())?
    } else {
        configs.iter().map(train).collect::<Result<Vec<_>>>()?
    };
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.csv"), sweep_csv(cfg, param, values, &outputs))?;
    }
    Ok(outputs)
}

pub fn sweep_csv(cfg: &RunConfig, param: SweepParam, values: &[f64], outputs: &[RunOutput]) -> String {
    let mut out = format!("param,value,{}\n", EvalReport::csv_header(&cfg.eval.ks));
    for (v, o) in values.iter().zip(outputs) {
        let row = o.record.eval.as_ref().map(|e| e.csv_row()).unwrap_or_default();
        out.push_str(&format!("{param},{v},{row}\n"));
    }
    out
}
