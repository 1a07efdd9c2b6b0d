//! Train on a synthetic split and score the result on another.

use serde::{Deserialize, Serialize};

use crate::metrics::{
    evaluate_cross_modal_with, evaluate_uni_modal_with, CrossModalReport, UniModalReport,
};
use crate::model::{encode, Representation, StudentParams};
use crate::parallel::Execution;
use crate::synth::SynthDataset;
use crate::trainer::{train, TrainConfig, TrainError, TrainingData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub cross: CrossModalReport,
    pub image: UniModalReport,
    pub text: UniModalReport,
}

/// Cross-modal and uni-modal metrics of `params` on `split`, using its full relevance.
pub fn evaluate_split(
    params: &StudentParams,
    split: &SynthDataset,
    repr: Representation,
    exec: Execution,
) -> Result<SplitReport, Box<dyn std::error::Error + Send + Sync>> {
    let img = encode(params, &split.img_base.to_matrix(), true, repr)?;
    let txt = encode(params, &split.txt_base.to_matrix(), false, repr)?;
    let rel = &split.relevance;
    let i2t = rel
        .restrict_queries(split.img_base.ids())
        .resolve(&split.img_base, &split.txt_base)?;
    let t2i = rel
        .restrict_queries(split.txt_base.ids())
        .resolve(&split.txt_base, &split.img_base)?;
    let ii = rel
        .restrict_queries(split.img_base.ids())
        .resolve(&split.img_base, &split.img_base)?;
    let tt = rel
        .restrict_queries(split.txt_base.ids())
        .resolve(&split.txt_base, &split.txt_base)?;
    Ok(SplitReport {
        cross: evaluate_cross_modal_with(&img, &txt, &i2t, &t2i, exec)?,
        image: evaluate_uni_modal_with(&img, &ii, exec)?,
        text: evaluate_uni_modal_with(&txt, &tt, exec)?,
    })
}

/// Trains on `train_split` and evaluates on `eval_split`.
pub fn train_and_evaluate(
    train_split: &SynthDataset,
    eval_split: &SynthDataset,
    config: &TrainConfig,
) -> Result<SplitReport, Box<dyn std::error::Error + Send + Sync>> {
    let data = TrainingData::assemble(
        &train_split.pairs,
        &train_split.img_base,
        &train_split.txt_base,
        &train_split.img_teacher,
        &train_split.txt_teacher,
    )?;
    let (ckpt, _) = train(&data, config).map_err(|e: TrainError| Box::new(e))?;
    evaluate_split(
        &ckpt.params,
        eval_split,
        Representation::Main,
        Execution::default(),
    )
}
