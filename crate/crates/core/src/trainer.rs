//! Seeded mini-batch training of the student on the combined objective.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{Checkpoint, DataError, FeatureTable, Pair};
use crate::losses::{
    batch_loss_and_grads, batch_losses, infonce_loss, LossError, LossReport, LossWeights,
};
use crate::math::{l2_normalize_rows, EmbeddingMatrix, MathError};
use crate::matrix::RealMatrix;
use crate::model::{self, ModelDims, ModelError, StudentParams};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::soft_labels::{build_batch_targets, TeacherBatch, DEFAULT_TEACHER_INV_TEMP};

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("batch size {batch_size} exceeds the {n_pairs} available pairs")]
    BatchTooLarge { n_pairs: usize, batch_size: usize },
    #[error("numeric failure at epoch {epoch}, step {step}: {reason}")]
    Numeric {
        epoch: usize,
        step: usize,
        reason: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// What the optimizer minimizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// `L_itc + α·L_CSA + β·L_USA`.
    #[default]
    Cusa,
    /// Plain InfoNCE through its own gradient path. Alignment losses are still
    /// evaluated for the log but never differentiated.
    InfoNce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub teacher_inv_temp: f64,
    pub separate_uni_temp: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    pub embed_dim: usize,
    pub usa_dim: usize,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            alpha: 0.5,
            beta: 0.5,
            batch_size: 32,
            epochs: 5,
            learning_rate: adam.learning_rate,
            seed: 0,
            teacher_inv_temp: DEFAULT_TEACHER_INV_TEMP,
            separate_uni_temp: false,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            weight_decay: adam.weight_decay,
            embed_dim: 32,
            usa_dim: 32,
            objective: Objective::Cusa,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.teacher_inv_temp > 0.0 && self.teacher_inv_temp.is_finite()) {
            return bad(format!(
                "teacher_inv_temp must be > 0, got {}",
                self.teacher_inv_temp
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.adam_epsilon.is_nan()
            || self.adam_epsilon <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return bad("adam epsilon must be > 0 and weight decay >= 0".into());
        }
        if self.embed_dim == 0 || self.usa_dim == 0 {
            return bad("embed_dim and usa_dim must be >= 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
        }
    }

    /// Loss weights actually applied to the gradient.
    pub fn effective_weights(&self) -> LossWeights {
        match self.objective {
            Objective::Cusa => LossWeights {
                alpha: self.alpha,
                beta: self.beta,
            },
            Objective::InfoNce => LossWeights {
                alpha: 0.0,
                beta: 0.0,
            },
        }
    }
}

/// Base and teacher features aligned row-by-row with a pair list.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub pairs: Vec<Pair>,
    pub base_img: RealMatrix,
    pub base_txt: RealMatrix,
    pub teacher_img: EmbeddingMatrix,
    pub teacher_txt: EmbeddingMatrix,
}

impl TrainingData {
    /// Looks up every pair's features. Teacher rows are normalized here.
    pub fn assemble(
        pairs: &[Pair],
        img_base: &FeatureTable,
        txt_base: &FeatureTable,
        img_teacher: &FeatureTable,
        txt_teacher: &FeatureTable,
    ) -> Result<Self, TrainError> {
        if pairs.is_empty() {
            return Err(TrainError::InvalidConfig("pair list is empty".into()));
        }
        let img_ids: Vec<&str> = pairs.iter().map(|p| p.image_id.as_str()).collect();
        let txt_ids: Vec<&str> = pairs.iter().map(|p| p.text_id.as_str()).collect();
        let teacher_img = img_teacher.gather(&img_ids)?;
        let teacher_txt = txt_teacher.gather(&txt_ids)?;
        Ok(Self {
            pairs: pairs.to_vec(),
            base_img: img_base.gather(&img_ids)?,
            base_txt: txt_base.gather(&txt_ids)?,
            teacher_img: normalize_teacher(&teacher_img)?,
            teacher_txt: normalize_teacher(&teacher_txt)?,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn model_dims(&self, config: &TrainConfig) -> ModelDims {
        ModelDims {
            d_bi: self.base_img.cols(),
            d_bt: self.base_txt.cols(),
            d_e: config.embed_dim,
            d_u: config.usa_dim,
        }
    }

    pub fn batch_inputs(&self, indices: &[usize]) -> Result<BatchInputs, MathError> {
        Ok(BatchInputs {
            base_img: self.base_img.select_rows(indices),
            base_txt: self.base_txt.select_rows(indices),
            teacher: TeacherBatch::new(
                self.teacher_img.select_rows(indices),
                self.teacher_txt.select_rows(indices),
            )?,
        })
    }
}

fn normalize_teacher(m: &RealMatrix) -> Result<EmbeddingMatrix, TrainError> {
    l2_normalize_rows(m).map_err(|e| TrainError::Model(ModelError::Math(e)))
}

/// Rows gathered for a single batch.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub base_img: RealMatrix,
    pub base_txt: RealMatrix,
    pub teacher: TeacherBatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_original: f64,
    pub l_csa: f64,
    pub l_usa: f64,
    pub l_total: f64,
    pub inv_temp: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

#[derive(Serialize)]
struct LogHeader<'a> {
    kind: &'static str,
    format_version: u32,
    parallel_feature: bool,
    bitwise_deterministic_across_threads: bool,
    config: &'a TrainConfig,
}

impl TrainLog {
    /// One JSON object per line: a header, then one record per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W, config: &TrainConfig) -> std::io::Result<()> {
        let header = LogHeader {
            kind: "header",
            format_version: LOG_FORMAT_VERSION,
            parallel_feature: crate::parallel::parallel_available(),
            bitwise_deterministic_across_threads: true,
            config,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

/// Seeded permutation of `0..n_pairs` cut into full batches; the remainder is dropped.
pub fn make_batches(
    n_pairs: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>, TrainError> {
    if batch_size == 0 || n_pairs < batch_size {
        return Err(TrainError::BatchTooLarge {
            n_pairs,
            batch_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is used for parameter init.
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n_pairs).collect();
    order.shuffle(&mut rng);
    Ok(order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Losses and parameter gradients for one batch under the configured objective.
pub fn step_gradients(
    inputs: &BatchInputs,
    params: &StudentParams,
    config: &TrainConfig,
) -> Result<(LossReport, StudentParams), TrainError> {
    let map_loss = |e: LossError| TrainError::Numeric {
        epoch: 0,
        step: 0,
        reason: e.to_string(),
    };
    let out = model::forward(&inputs.base_img, &inputs.base_txt, params)?;
    let logits = out.logits().map_err(ModelError::from)?;
    let targets =
        build_batch_targets(&inputs.teacher, config.teacher_inv_temp).map_err(ModelError::from)?;
    let weights = config.effective_weights();
    let (report, upstream) = match config.objective {
        Objective::Cusa => batch_loss_and_grads(&logits, &targets, weights).map_err(map_loss)?,
        Objective::InfoNce => {
            let (value, grads) = infonce_loss(&logits.s_i2t, logits.inv_temp).map_err(map_loss)?;
            let mut report = batch_losses(&logits, &targets, weights).map_err(map_loss)?;
            report.l_original = value;
            report.l_total = value;
            (report, grads)
        }
    };
    if !upstream.is_finite() {
        return Err(map_loss(LossError::Math(MathError::InvalidDistribution(
            "non-finite loss gradient".into(),
        ))));
    }
    let grads = model::backward(&inputs.base_img, &inputs.base_txt, params, &out, &upstream)?;
    Ok((report, grads))
}

/// Runs `epochs × batches` optimizer steps and returns the final checkpoint and per-step log.
pub fn train(
    data: &TrainingData,
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainLog), TrainError> {
    train_from(data, config, None)
}

/// Like [`train`], optionally starting from existing parameters.
pub fn train_from(
    data: &TrainingData,
    config: &TrainConfig,
    init: Option<StudentParams>,
) -> Result<(Checkpoint, TrainLog), TrainError> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(TrainError::BatchTooLarge {
            n_pairs: data.len(),
            batch_size: config.batch_size,
        });
    }
    let mut params = match init {
        Some(p) => p,
        None => {
            let p = StudentParams::init(config.seed, data.model_dims(config))?;
            if config.separate_uni_temp {
                p.with_separate_uni_temp()
            } else {
                p
            }
        }
    };
    let hyper = config.adam();
    let mut state = AdamState::default();
    let mut log = TrainLog::default();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        for batch in make_batches(data.len(), config.batch_size, config.seed, epoch)? {
            let with_context = |e: TrainError| match e {
                TrainError::Numeric { reason, .. } => TrainError::Numeric {
                    epoch,
                    step,
                    reason,
                },
                TrainError::Model(m) => TrainError::Numeric {
                    epoch,
                    step,
                    reason: m.to_string(),
                },
                other => other,
            };
            let inputs = data
                .batch_inputs(&batch)
                .map_err(|e| with_context(TrainError::Model(e.into())))?;
            let (report, grads) = step_gradients(&inputs, &params, config).map_err(with_context)?;
            let values = [
                report.l_original,
                report.l_csa,
                report.l_usa,
                report.l_total,
            ];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(with_context(TrainError::Numeric {
                    epoch,
                    step,
                    reason: "non-finite loss".into(),
                }));
            }
            log.records.push(StepRecord {
                epoch,
                step,
                l_original: report.l_original,
                l_csa: report.l_csa,
                l_usa: report.l_usa,
                l_total: report.l_total,
                inv_temp: params.inv_temp(),
            });
            adam_step(&mut params, &grads, &mut state, &hyper);
            params.clamp_temperatures();
            if !params.is_finite() {
                return Err(with_context(TrainError::Numeric {
                    epoch,
                    step,
                    reason: "parameters became non-finite".into(),
                }));
            }
            step += 1;
        }
    }
    Ok((
        Checkpoint {
            params,
            config: config.clone(),
        },
        log,
    ))
}
