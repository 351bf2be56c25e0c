//! Training runs, evaluation of trained models, gradient checks and
//! diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::mix_batch;
use crate::data::{self, Dataset, Split};
use crate::error::{IdmlError, Result};
use crate::eval::{evaluate, uncertainty_csv, EvalOptions, EvalReport, Evaluation, UncertaintyRow};
use crate::model::checkpoint;
use crate::model::gradcheck::{gradcheck as fd_check, h_factor_check, GradcheckOptions, GradcheckReport, HFactorReport};
use crate::model::{Model, OptimState};
use crate::rng::Rng;
use crate::types::{norm, LabelSet, Sample};

use super::config::{DataSource, RunConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch loss.
    pub loss: f64,
    pub mean_u_clean: f64,
    pub mean_u_mixed: Option<f64>,
    /// Mean over batches of the per-sample semantic gradient norm.
    pub semantic_grad_norm: f64,
    /// Batches whose mining found nothing to train on.
    pub exhausted_batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub epoch: usize,
    pub batch: usize,
    pub message: String,
}

/// Everything a run reports except wall time, so that equal configs give
/// byte-identical records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub n_params: usize,
    pub epochs: Vec<EpochLog>,
    pub eval: Option<EvalReport>,
    pub failure: Option<Failure>,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,loss,mean_u_clean,mean_u_mixed,semantic_grad_norm,exhausted_batches\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                e.epoch,
                e.loss,
                e.mean_u_clean,
                e.mean_u_mixed.map(|v| v.to_string()).unwrap_or_default(),
                e.semantic_grad_norm,
                e.exhausted_batches
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub model: Model,
    pub uncertainty: Vec<UncertaintyRow>,
    pub wall_seconds: f64,
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Synthetic(s) => data::generate(s),
        DataSource::File { path } => data::load(path),
    }
}

pub fn load_split(cfg: &RunConfig) -> Result<Split> {
    let split = load_dataset(&cfg.data)?.split()?;
    if split.train.is_empty() || split.test.len() < 2 {
        return Err(IdmlError::param("split leaves too few samples for training and evaluation"));
    }
    Ok(split)
}

/// Index batches for one epoch. Each batch draws from
/// `max(2, batch_size / samples_per_class)` distinct classes (capped at the
/// class count) in round-robin order; each class yields samples from its own
/// shuffled queue, refilled when empty. An epoch has
/// `ceil(n / batch_size)` batches.
pub fn class_balanced_batches(
    labels: &[LabelSet],
    batch_size: usize,
    samples_per_class: usize,
    rng: &mut Rng,
) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.primary()).or_default().push(i);
    }
    let pools: Vec<Vec<usize>> = by_class.into_values().collect();
    let mut queues: Vec<Vec<usize>> = vec![Vec::new(); pools.len()];
    let k = (batch_size / samples_per_class).max(2).min(pools.len());
    let n_batches = labels.len().div_ceil(batch_size);
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let chosen = rng.choose_distinct(pools.len(), k);
        let mut batch = Vec::with_capacity(batch_size);
        for t in 0..batch_size {
            let c = chosen[t % k];
            if queues[c].is_empty() {
                let mut q = pools[c].clone();
                rng.shuffle(&mut q);
                queues[c] = q;
            }
            batch.push(queues[c].pop().expect("refilled"));
        }
        batches.push(batch);
    }
    batches
}

pub fn init_model(cfg: &RunConfig, train: &Dataset, rng: &mut Rng) -> Result<Model> {
    let proxies = if cfg.loss.uses_proxies() { train.classes() } else { Vec::new() };
    let mut model = Model::new(cfg.model.encoder(train.dim()), proxies, rng)?;
    if cfg.model.freeze_uncertainty {
        model.freeze_uncertainty();
    }
    Ok(model)
}

/// One training batch: corrupted clean samples followed by mixed ones.
fn assemble(cfg: &RunConfig, pool: &[Sample], idx: &[usize], rng: &mut Rng) -> Result<Vec<Sample>> {
    let mut batch = Vec::with_capacity(idx.len() * 2);
    for &i in idx {
        let s = &pool[i];
        batch.push(Sample {
            feature: cfg.augment.corrupt(&s.feature, rng)?,
            labels: s.labels.clone(),
            is_mixed: false,
        });
    }
    let mixed = mix_batch(&batch, &cfg.augment, rng)?;
    batch.extend(mixed);
    Ok(batch)
}

fn mean_or_none(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

struct Trained {
    epochs: Vec<EpochLog>,
    failure: Option<Failure>,
}

fn train_loop(cfg: &RunConfig, model: &mut Model, train: &Dataset, rng: &mut Rng) -> Trained {
    let obj = cfg.objective();
    let mut opt = OptimState::new(cfg.optimizer, model.n_params());
    let pool = train.samples();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = class_balanced_batches(&train.labels, cfg.batch_size, cfg.samples_per_class, rng);
        let (mut loss, mut gnorm) = (0.0, 0.0);
        let (mut u_clean, mut n_clean, mut u_mixed, mut n_mixed) = (0.0, 0, 0.0, 0);
        let mut exhausted = 0;
        for (b, idx) in batches.iter().enumerate() {
            let result = assemble(cfg, &pool, idx, rng).and_then(|batch| {
                let step = model.loss_and_grad(&batch, &obj, None, rng)?;
                if !step.value.value.is_finite() || step.grads.iter().any(|g| !g.is_finite()) {
                    return Err(IdmlError::Numerical("non-finite loss or gradient".into()));
                }
                model.step(&step.grads, &mut opt)?;
                Ok((batch, step))
            });
            let (batch, step) = match result {
                Ok(v) => v,
                Err(e) => {
                    return Trained {
                        epochs,
                        failure: Some(Failure {
                            epoch,
                            batch: b,
                            message: e.to_string(),
                        }),
                    }
                }
            };
            loss += step.value.value;
            gnorm += step.semantic_grad_norm;
            exhausted += step.value.mining_exhausted as usize;
            for (s, e) in batch.iter().zip(&step.embeddings) {
                let u = norm(&e.uncertainty);
                if s.is_mixed {
                    u_mixed += u;
                    n_mixed += 1;
                } else {
                    u_clean += u;
                    n_clean += 1;
                }
            }
        }
        let nb = batches.len() as f64;
        epochs.push(EpochLog {
            epoch,
            loss: loss / nb,
            mean_u_clean: mean_or_none(u_clean, n_clean).unwrap_or(0.0),
            mean_u_mixed: mean_or_none(u_mixed, n_mixed),
            semantic_grad_norm: gnorm / nb,
            exhausted_batches: exhausted,
        });
    }
    Trained { epochs, failure: None }
}

fn echo(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        output_dir: None,
        ..cfg.clone()
    }
}

/// Trains per `cfg` and evaluates on the test split. When `cfg.output_dir`
/// is set, the outputs are written there, including after a numerical
/// failure, which is then returned as the error.
pub fn train(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let split = load_split(cfg)?;
    let root = Rng::new(cfg.seed);
    let mut model = init_model(cfg, &split.train, &mut root.fork(1))?;
    let trained = train_loop(cfg, &mut model, &split.train, &mut root.fork(2));
    let mut record = RunRecord {
        config: echo(cfg),
        n_train: split.train.len(),
        n_test: split.test.len(),
        n_params: model.n_params(),
        epochs: trained.epochs,
        eval: None,
        failure: trained.failure,
    };
    let mut uncertainty = Vec::new();
    if record.failure.is_none() {
        let ev = evaluate_split(cfg, &model, &split.test, &mut root.fork(3))?;
        record.eval = Some(ev.report);
        uncertainty = ev.uncertainty;
    }
    let out = RunOutput {
        record,
        model,
        uncertainty,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &cfg.output_dir {
        write_outputs(dir, &out)?;
    }
    if let Some(f) = &out.record.failure {
        return Err(IdmlError::Numerical(format!(
            "epoch {} batch {}: {}",
            f.epoch, f.batch, f.message
        )));
    }
    Ok(out)
}

pub fn evaluate_split(cfg: &RunConfig, model: &Model, test: &Dataset, rng: &mut Rng) -> Result<Evaluation> {
    evaluate(model, &test.samples(), &test.id_strings(), &cfg.eval_options(), rng)
}

/// Evaluates a trained model on the test split of `cfg`'s data.
pub fn evaluate_checkpoint(cfg: &RunConfig, model: &Model) -> Result<Evaluation> {
    cfg.validate()?;
    let split = load_split(cfg)?;
    evaluate_split(cfg, model, &split.test, &mut Rng::new(cfg.seed).fork(3))
}

/// Full evaluation of `model` on every sample of `ds`.
pub fn diagnose(model: &Model, ds: &Dataset, opts: &EvalOptions, seed: u64) -> Result<Evaluation> {
    if ds.dim() != model.config().input_dim {
        return Err(IdmlError::shape(format!(
            "dataset dim {} vs model input dim {}",
            ds.dim(),
            model.config().input_dim
        )));
    }
    evaluate(model, &ds.samples(), &ds.id_strings(), opts, &mut Rng::new(seed))
}

pub fn write_evaluation(dir: &Path, ev: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("eval.json"), ev.report.to_json()?)?;
    fs::write(dir.join("uncertainty.csv"), uncertainty_csv(&ev.uncertainty))?;
    Ok(())
}

/// Writes `config.json`, `record.json`, `epochs.csv`, `eval.json`,
/// `uncertainty.csv`, `model.ckpt` and `timing.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), out.record.config.to_json()?)?;
    fs::write(dir.join("record.json"), out.record.to_json()?)?;
    fs::write(dir.join("epochs.csv"), out.record.epochs_csv())?;
    if let Some(ev) = &out.record.eval {
        fs::write(dir.join("eval.json"), ev.to_json()?)?;
        fs::write(dir.join("uncertainty.csv"), uncertainty_csv(&out.uncertainty))?;
    }
    checkpoint::save(&out.model, dir.join("model.ckpt"))?;
    let timing = serde_json::json!({ "wall_seconds": out.wall_seconds });
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOutcome {
    pub finite_differences: GradcheckReport,
    pub h_factor: HFactorReport,
    pub h_factor_passed: bool,
    pub passed: bool,
}

/// Samples per gradient-check batch before mixing.
pub const GRADCHECK_BATCH: usize = 8;
/// Pairs in the gradient-weight identity check.
pub const H_FACTOR_PAIRS: usize = 1000;

/// Finite-difference check of the configured loss and metric on a freshly
/// initialized model, plus the gradient-weight identity.
pub fn gradcheck(cfg: &RunConfig, opts: &GradcheckOptions) -> Result<GradcheckOutcome> {
    cfg.validate()?;
    let split = load_split(cfg)?;
    let root = Rng::new(cfg.seed);
    let model = init_model(cfg, &split.train, &mut root.fork(1))?;
    let pool = split.train.samples();
    let labels = split.train.labels.clone();
    let draw = |rng: &mut Rng| -> Vec<Sample> {
        let idx = class_balanced_batches(&labels, GRADCHECK_BATCH, 2, rng).swap_remove(0);
        assemble(cfg, &pool, &idx, rng).expect("batch assembly on validated config")
    };
    let fd = fd_check(&model, draw, &cfg.objective(), opts, &mut root.fork(4))?;
    let h = h_factor_check(H_FACTOR_PAIRS, cfg.model.semantic_dim, &cfg.metric_params, &mut root.fork(5))?;
    let h_ok = h.max_ratio_err < 1e-6 && h.bound_violations == 0;
    Ok(GradcheckOutcome {
        passed: fd.passed && h_ok,
        finite_differences: fd,
        h_factor: h,
        h_factor_passed: h_ok,
    })
}
