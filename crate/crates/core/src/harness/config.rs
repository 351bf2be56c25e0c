//! Run configuration and its presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::SynthConfig;
use crate::error::{IdmlError, Result};
use crate::eval::EvalOptions;
use crate::losses::{LossKind, LossParams, Objective};
use crate::metric::Metric;
use crate::model::{Activation, EncoderConfig, OptimizerConfig};
use crate::types::MetricParams;

/// Where the samples of a run come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// A CSV or binary feature file.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub hidden: Vec<usize>,
    pub semantic_dim: usize,
    pub uncertainty_dim: usize,
    pub activation: Activation,
    pub head_u_scale: f64,
    /// Zero the uncertainty path and keep it at zero.
    pub freeze_uncertainty: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let e = EncoderConfig::new(1);
        ModelSettings {
            hidden: e.hidden,
            semantic_dim: e.semantic_dim,
            uncertainty_dim: e.uncertainty_dim,
            activation: e.activation,
            head_u_scale: e.head_u_scale,
            freeze_uncertainty: false,
        }
    }
}

impl ModelSettings {
    pub fn encoder(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden: self.hidden.clone(),
            semantic_dim: self.semantic_dim,
            uncertainty_dim: self.uncertainty_dim,
            activation: self.activation,
            head_u_scale: self.head_u_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub test_metric: Metric,
    pub ks: Vec<usize>,
    pub knn_k: usize,
    pub n_anchors: usize,
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
    pub mixed_fraction: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let o = EvalOptions::default();
        EvalSettings {
            test_metric: o.test_metric,
            ks: o.ks,
            knn_k: o.knn_k,
            n_anchors: o.n_anchors,
            kmeans_restarts: o.kmeans_restarts,
            kmeans_iters: o.kmeans_iters,
            mixed_fraction: o.mixed_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub loss: LossKind,
    pub metric: Metric,
    pub metric_params: MetricParams,
    pub loss_params: LossParams,
    pub augment: AugmentConfig,
    pub model: ModelSettings,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Target number of samples per class in a batch.
    pub samples_per_class: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Whether mixed samples act as anchors in proxy losses.
    pub mixed_proxy_anchors: bool,
    pub eval: EvalSettings,
    /// Not echoed into run records.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Desk-scale defaults: synthetic 10 x 50 samples, batch 32, 50 epochs,
    /// 32/32 embedding dims.
    pub fn desk() -> Self {
        RunConfig {
            data: DataSource::Synthetic(SynthConfig::default()),
            loss: LossKind::Contrastive,
            metric: Metric::Ism,
            metric_params: MetricParams::default(),
            loss_params: LossParams::default(),
            augment: AugmentConfig::default(),
            model: ModelSettings::default(),
            optimizer: OptimizerConfig::adamw(1e-3),
            batch_size: 32,
            samples_per_class: 4,
            epochs: 50,
            seed: 0,
            mixed_proxy_anchors: true,
            eval: EvalSettings::default(),
            output_dir: None,
        }
    }

    /// Full-scale values: batch 120, 512/512 embedding dims, tau 5.
    pub fn full() -> Self {
        let mut c = RunConfig::desk();
        c.batch_size = 120;
        c.model.hidden = vec![512];
        c.model.semantic_dim = 512;
        c.model.uncertainty_dim = 512;
        c.metric_params.tau = 5.0;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "full" => Ok(RunConfig::full()),
            _ => Err(IdmlError::param(format!("unknown preset '{name}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 4 {
            return Err(IdmlError::param(format!("batch_size must be >= 4, got {}", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(IdmlError::param("epochs must be >= 1"));
        }
        if self.samples_per_class == 0 {
            return Err(IdmlError::param("samples_per_class must be >= 1"));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.metric_params.validate()?;
        self.loss_params.validate()?;
        self.augment.validate()?;
        self.optimizer.validate()?;
        self.model.encoder(1).validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(IdmlError::param("eval.ks must be nonempty positive cutoffs"));
        }
        if !(0.0..=1.0).contains(&self.eval.mixed_fraction) {
            return Err(IdmlError::param("eval.mixed_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        let mut o = Objective::new(self.loss, self.metric).with_params(self.metric_params, self.loss_params);
        o.mixed_proxy_anchors = self.mixed_proxy_anchors;
        o
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            ks: self.eval.ks.clone(),
            test_metric: self.eval.test_metric,
            metric_params: self.metric_params,
            normalize_semantic: self.loss.normalizes_semantic(),
            knn_k: self.eval.knn_k,
            n_anchors: self.eval.n_anchors,
            kmeans_restarts: self.eval.kmeans_restarts,
            kmeans_iters: self.eval.kmeans_iters,
            mixed_fraction: self.eval.mixed_fraction,
            mix_lambda_dist: self.augment.mix_lambda_dist,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        RunConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        let mut c = RunConfig::full();
        c.metric_params.gamma = 0.1 + 0.2;
        c.optimizer = OptimizerConfig::sgd(0.05, 0.9);
        c.data = DataSource::File { path: "x.csv".into() };
        c.output_dir = Some("out".into());
        assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
        let d = RunConfig::desk();
        assert_eq!(RunConfig::from_json(&d.to_json().unwrap()).unwrap(), d);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"loss": "proxy_anchor", "epochs": 3}"#).unwrap();
        assert_eq!(c.loss, LossKind::ProxyAnchor);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 32);
    }

    #[test]
    fn validation() {
        assert!(RunConfig::desk().validate().is_ok());
        assert!(RunConfig::full().validate().is_ok());
        let bad = RunConfig {
            batch_size: 3,
            ..RunConfig::desk()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            epochs: 0,
            ..RunConfig::desk()
        };
        assert!(bad.validate().is_err());
        assert!(RunConfig::from_json(r#"{"metric": "bogus"}"#).is_err());
        assert!(RunConfig::preset("huge").is_err());
    }
}
