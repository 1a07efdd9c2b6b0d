use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use cusa_core::gradcheck::{run_gradcheck, Component, GradcheckConfig};
use cusa_core::io::{
    read_checkpoint, read_features, read_pairs, read_relevance, read_sts, write_checkpoint,
    write_features, Checkpoint, FeatureTable, RelevanceMap,
};
use cusa_core::losses::{batch_losses, student_distributions, LossReport, LossWeights};
use cusa_core::math::{l2_normalize_rows, EmbeddingMatrix};
use cusa_core::metrics::{evaluate_cross_modal, evaluate_sts, evaluate_uni_modal};
use cusa_core::model::{encode, forward};
use cusa_core::soft_labels::{build_batch_targets, DEFAULT_TEACHER_INV_TEMP};
use cusa_core::synth::{synth_generate, SynthConfig, HELDOUT_DIR};
use cusa_core::trainer::{train, Objective, StepRecord, TrainingData};
use cusa_core::{Execution, RealMatrix, Representation, StudentParams, TrainConfig};
use serde::Serialize;

use crate::error::CliError;
use crate::report::{timing, RunReport};
use crate::{
    Cli, Command, EvalArgs, FeatureArgs, GradcheckArgs, InspectArgs, ObjectiveArg, ReprArg,
    SynthArgs, Task, TrainArgs,
};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let show_timing = !cli.no_timing;
    macro_rules! emit {
        ($command:literal, $args:expr, $seed:expr, $payload:expr) => {
            RunReport {
                format_version: crate::report::REPORT_FORMAT_VERSION,
                command: $command,
                config: $args,
                seed: $seed,
                payload: $payload,
                timing: timing(show_timing, start.elapsed()),
            }
            .print()?
        };
    }
    match &cli.command {
        Command::Synth(a) => emit!("synth", a, Some(a.seed), synth(a)?),
        Command::Train(a) => emit!("train", a, Some(a.seed), train_cmd(a)?),
        Command::Eval(a) => emit!("eval", a, None, eval(a)?),
        Command::Gradcheck(a) => {
            let (payload, failure) = gradcheck(a)?;
            emit!("gradcheck", a, Some(a.seed), payload);
            if let Some(f) = failure {
                return Err(f);
            }
        }
        Command::Inspect(a) => {
            let seed = a.ckpt.is_none().then_some(a.seed);
            emit!("inspect", a, seed, inspect(a)?)
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthPayload {
    resolved: SynthConfig,
    train_pairs: usize,
    heldout_pairs: usize,
    files: Vec<String>,
}

fn synth(a: &SynthArgs) -> Result<SynthPayload, CliError> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_clusters: a.clusters.unwrap_or(d.n_clusters),
        pairs_per_cluster: a.pairs_per_cluster.unwrap_or(d.pairs_per_cluster),
        holdout_per_cluster: a.holdout_per_cluster.unwrap_or(d.holdout_per_cluster),
        d_student_img: a.d_student_img.unwrap_or(d.d_student_img),
        d_student_txt: a.d_student_txt.unwrap_or(d.d_student_txt),
        d_teacher_img: a.d_teacher_img.unwrap_or(d.d_teacher_img),
        d_teacher_txt: a.d_teacher_txt.unwrap_or(d.d_teacher_txt),
        intra_noise: a.noise.unwrap_or(d.intra_noise),
        cross_modal_gap: a.gap.unwrap_or(d.cross_modal_gap),
        shared_dim: a.shared_dim.unwrap_or(d.shared_dim),
        seed: a.seed,
    };
    let out = synth_generate(&cfg)?;
    out.write_dir(&a.out)?;
    let names = [
        cusa_core::synth::IMG_BASE_FILE,
        cusa_core::synth::TXT_BASE_FILE,
        cusa_core::synth::IMG_TEACHER_FILE,
        cusa_core::synth::TXT_TEACHER_FILE,
        cusa_core::synth::PAIRS_FILE,
        cusa_core::synth::RELEVANCE_FILE,
    ];
    let mut files: Vec<String> = names.iter().map(|n| n.to_string()).collect();
    if out.heldout.is_some() {
        files.extend(names.iter().map(|n| format!("{HELDOUT_DIR}/{n}")));
    }
    Ok(SynthPayload {
        resolved: cfg,
        train_pairs: out.train.pairs.len(),
        heldout_pairs: out.heldout.as_ref().map_or(0, |h| h.pairs.len()),
        files,
    })
}

fn assemble(f: &FeatureArgs, subset: Option<&[usize]>) -> Result<TrainingData, CliError> {
    let mut pairs = read_pairs(&f.pairs)?;
    if let Some(idx) = subset {
        pairs = idx.iter().map(|&i| pairs[i].clone()).collect();
    }
    let img_base = read_features(&f.img_base)?;
    let txt_base = read_features(&f.txt_base)?;
    let img_teacher = read_features(&f.img_teacher)?;
    let txt_teacher = read_features(&f.txt_teacher)?;
    Ok(TrainingData::assemble(
        &pairs,
        &img_base,
        &txt_base,
        &img_teacher,
        &txt_teacher,
    )?)
}

#[derive(Serialize)]
struct TrainPayload {
    resolved: TrainConfig,
    pairs: usize,
    steps: usize,
    final_step: Option<StepRecord>,
    final_inv_temp: f64,
    final_uni_inv_temp: Option<f64>,
    checkpoint: String,
    log: String,
}

fn train_cmd(a: &TrainArgs) -> Result<TrainPayload, CliError> {
    let d = TrainConfig::default();
    let config = TrainConfig {
        alpha: a.alpha.unwrap_or(d.alpha),
        beta: a.beta.unwrap_or(d.beta),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        epochs: a.epochs.unwrap_or(d.epochs),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        seed: a.seed,
        teacher_inv_temp: a.teacher_inv_temp.unwrap_or(d.teacher_inv_temp),
        separate_uni_temp: a.separate_uni_temp,
        weight_decay: a.weight_decay.unwrap_or(d.weight_decay),
        embed_dim: a.embed_dim.unwrap_or(d.embed_dim),
        usa_dim: a.usa_dim.unwrap_or(d.usa_dim),
        objective: match a.objective {
            ObjectiveArg::Cusa => Objective::Cusa,
            ObjectiveArg::Infonce => Objective::InfoNce,
        },
        ..d
    };
    // Reject bad flags before touching any file.
    config.validate()?;
    let data = assemble(&a.features, None)?;
    let (ckpt, log) = train(&data, &config)?;
    write_checkpoint(&a.out_ckpt, &ckpt)?;
    let file =
        File::create(&a.log).map_err(|e| CliError::Io(format!("{}: {e}", a.log.display())))?;
    log.write_jsonl(BufWriter::new(file), &config)
        .map_err(|e| CliError::Io(format!("{}: {e}", a.log.display())))?;
    Ok(TrainPayload {
        resolved: config,
        pairs: data.len(),
        steps: log.records.len(),
        final_step: log.records.last().copied(),
        final_inv_temp: ckpt.params.inv_temp(),
        final_uni_inv_temp: ckpt.params.uni_inv_temp(),
        checkpoint: a.out_ckpt.display().to_string(),
        log: a.log.display().to_string(),
    })
}

/// Loads one modality's table and its embeddings.
fn load_side(
    a: &EvalArgs,
    ckpt: Option<&Checkpoint>,
    image: bool,
) -> Result<(FeatureTable, EmbeddingMatrix), CliError> {
    let (base, emb, base_flag, emb_flag) = if image {
        (&a.img_base, &a.img_emb, "--img-base", "--img-emb")
    } else {
        (&a.txt_base, &a.txt_emb, "--txt-base", "--txt-emb")
    };
    match ckpt {
        Some(c) => {
            let path = base
                .as_ref()
                .ok_or_else(|| CliError::Usage(format!("{base_flag} is required with --ckpt")))?;
            let table = read_features(path)?;
            let repr = match a.repr {
                ReprArg::Main => Representation::Main,
                ReprArg::Usa => Representation::Usa,
            };
            let e = encode(&c.params, &table.to_matrix(), image, repr)?;
            Ok((table, e))
        }
        None => {
            let path = emb.as_ref().ok_or_else(|| {
                CliError::Usage(format!("{emb_flag} or --ckpt with {base_flag} is required"))
            })?;
            let table = read_features(path)?;
            let e = l2_normalize_rows(&table.to_matrix())
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok((table, e))
        }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum EvalPayload {
    Cross(cusa_core::CrossModalReport),
    Uni(cusa_core::UniModalReport),
    Sts(cusa_core::metrics::StsReport),
}

fn eval(a: &EvalArgs) -> Result<EvalPayload, CliError> {
    if a.ckpt.is_none() && a.repr == ReprArg::Usa {
        return Err(CliError::Usage("--repr usa needs --ckpt".into()));
    }
    let ckpt = a.ckpt.as_ref().map(read_checkpoint).transpose()?;
    let ckpt = ckpt.as_ref();
    match a.task {
        Task::Cross => {
            let (img, img_emb) = load_side(a, ckpt, true)?;
            let (txt, txt_emb) = load_side(a, ckpt, false)?;
            let (i2t, t2i) = match (&a.pairs, &a.relevance) {
                (Some(p), None) => {
                    let pairs = read_pairs(p)?;
                    RelevanceMap::cross_from_pairs(&pairs)
                }
                (None, Some(r)) => {
                    let rel = read_relevance(r)?;
                    rel.validate_ids(&[&img, &txt])?;
                    let mut i2t = rel.restrict_queries(img.ids());
                    let mut t2i = rel.restrict_queries(txt.ids());
                    if t2i.is_empty() {
                        t2i = i2t.transpose();
                    } else if i2t.is_empty() {
                        i2t = t2i.transpose();
                    }
                    (i2t, t2i)
                }
                _ => {
                    return Err(CliError::Usage(
                        "--task cross needs --pairs or --relevance".into(),
                    ))
                }
            };
            let i2t = i2t.resolve(&img, &txt)?;
            let t2i = t2i.resolve(&txt, &img)?;
            Ok(EvalPayload::Cross(evaluate_cross_modal(
                &img_emb, &txt_emb, &i2t, &t2i,
            )?))
        }
        Task::Img | Task::Txt => {
            let path = a
                .relevance
                .as_ref()
                .ok_or_else(|| CliError::Usage("uni-modal tasks need --relevance".into()))?;
            let (table, emb) = load_side(a, ckpt, a.task == Task::Img)?;
            let rel = read_relevance(path)?;
            let own = rel.restrict_queries(table.ids());
            if own.is_empty() {
                return Err(CliError::Data(format!(
                    "{} has no queries from the {} table",
                    path.display(),
                    if a.task == Task::Img { "image" } else { "text" }
                )));
            }
            let resolved = own.resolve(&table, &table)?;
            Ok(EvalPayload::Uni(evaluate_uni_modal(&emb, &resolved)?))
        }
        Task::Sts => {
            let path = a
                .sts
                .as_ref()
                .ok_or_else(|| CliError::Usage("--task sts needs --sts".into()))?;
            let (table, emb) = load_side(a, ckpt, false)?;
            let scored = read_sts(path)?;
            let row = |id: &str| {
                table
                    .index_of(id)
                    .ok_or_else(|| CliError::Data(format!("STS id {id:?} has no embedding")))
            };
            let mut pairs = Vec::with_capacity(scored.len());
            let mut gold = Vec::with_capacity(scored.len());
            for p in &scored {
                pairs.push((row(&p.a)?, row(&p.b)?));
                gold.push(p.score);
            }
            Ok(EvalPayload::Sts(evaluate_sts(&emb, &pairs, &gold)?))
        }
    }
}

#[derive(Serialize)]
struct GradcheckPayload {
    trials: usize,
    batch_sizes: Vec<usize>,
    tolerance: f64,
    passed: bool,
    components: Vec<ComponentLine>,
}

#[derive(Serialize)]
struct ComponentLine {
    component: &'static str,
    checks: usize,
    max_rel_error: f64,
    passed: bool,
}

fn gradcheck(a: &GradcheckArgs) -> Result<(GradcheckPayload, Option<CliError>), CliError> {
    let inject_fault = match &a.inject_fault {
        None => None,
        Some(name) => Some(Component::from_name(name).ok_or_else(|| {
            let names: Vec<&str> = Component::ALL.iter().map(|c| c.name()).collect();
            CliError::Usage(format!(
                "unknown component {name:?}; expected one of {names:?}"
            ))
        })?),
    };
    let cfg = GradcheckConfig {
        seed: a.seed,
        trials: a.trials as usize,
        max_dim: a.dims as usize,
        inject_fault,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&cfg, Execution::default()).map_err(CliError::Numeric)?;
    let failure = (!report.passed).then(|| {
        let names: Vec<&str> = report.failed.iter().map(|c| c.name()).collect();
        CliError::Gradcheck(format!("components over tolerance: {}", names.join(", ")))
    });
    let payload = GradcheckPayload {
        trials: report.trials,
        batch_sizes: report.batch_sizes,
        tolerance: report.tolerance,
        passed: report.passed,
        components: report
            .components
            .iter()
            .map(|c| ComponentLine {
                component: c.component.name(),
                checks: c.checks,
                max_rel_error: c.max_rel_error,
                passed: c.passed,
            })
            .collect(),
    };
    Ok((payload, failure))
}

#[derive(Serialize)]
struct BatchItem {
    index: usize,
    image_id: String,
    text_id: String,
}

#[derive(Serialize)]
struct Distributions {
    p_i2i: Vec<Vec<f64>>,
    p_t2t: Vec<Vec<f64>>,
    q_i2t: Vec<Vec<f64>>,
    q_t2i: Vec<Vec<f64>>,
    q_i2i: Vec<Vec<f64>>,
    q_t2t: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ExportedVector {
    id: String,
    vector: Vec<f64>,
}

#[derive(Serialize)]
struct Embeddings {
    image: Vec<ExportedVector>,
    text: Vec<ExportedVector>,
}

#[derive(Serialize)]
struct InspectPayload {
    batch: Vec<BatchItem>,
    inv_temp: f64,
    uni_inv_temp: f64,
    teacher_inv_temp: f64,
    distributions: Distributions,
    losses: LossReport,
    embeddings: Embeddings,
}

fn rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

fn export(ids: &[String], emb: &EmbeddingMatrix) -> Vec<ExportedVector> {
    ids.iter()
        .zip(emb.matrix().row_iter())
        .map(|(id, v)| ExportedVector {
            id: id.clone(),
            vector: v.to_vec(),
        })
        .collect()
}

fn write_export(
    dir: &Path,
    name: &str,
    ids: &[String],
    emb: &EmbeddingMatrix,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let table = FeatureTable::from_matrix(ids.to_vec(), emb.matrix())?;
    Ok(write_features(dir.join(name), &table)?)
}

fn inspect(a: &InspectArgs) -> Result<InspectPayload, CliError> {
    let weights = LossWeights::new(a.alpha, a.beta).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.batch.len() < 2 {
        return Err(CliError::Usage("--batch needs at least two indices".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = a.batch.iter().find(|&&i| !seen.insert(i)) {
        return Err(CliError::Usage(format!("batch index {dup} repeated")));
    }
    let n_pairs = read_pairs(&a.features.pairs)?.len();
    if let Some(bad) = a.batch.iter().find(|&&i| i >= n_pairs) {
        return Err(CliError::Usage(format!(
            "batch index {bad} out of range for {n_pairs} pairs"
        )));
    }
    let data = assemble(&a.features, Some(&a.batch))?;
    let ckpt = a.ckpt.as_ref().map(read_checkpoint).transpose()?;
    let teacher_inv_temp = a.teacher_inv_temp.unwrap_or_else(|| {
        ckpt.as_ref()
            .map_or(DEFAULT_TEACHER_INV_TEMP, |c| c.config.teacher_inv_temp)
    });
    if !(teacher_inv_temp > 0.0 && teacher_inv_temp.is_finite()) {
        return Err(CliError::Usage(
            "--teacher-inv-temp must be positive".into(),
        ));
    }
    let params = match ckpt {
        Some(c) => c.params,
        None => {
            let d = TrainConfig::default();
            let config = TrainConfig {
                embed_dim: a.embed_dim.unwrap_or(d.embed_dim),
                usa_dim: a.usa_dim.unwrap_or(d.usa_dim),
                ..d
            };
            StudentParams::init(a.seed, data.model_dims(&config))?
        }
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let inputs = data
        .batch_inputs(&all)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let numeric = |e: &dyn std::fmt::Display| CliError::Numeric(e.to_string());
    let out = forward(&inputs.base_img, &inputs.base_txt, &params)?;
    let logits = out.logits().map_err(|e| numeric(&e))?;
    let targets =
        build_batch_targets(&inputs.teacher, teacher_inv_temp).map_err(|e| numeric(&e))?;
    let q = student_distributions(&logits).map_err(|e| numeric(&e))?;
    let losses = batch_losses(&logits, &targets, weights).map_err(|e| numeric(&e))?;

    let img_ids: Vec<String> = data.pairs.iter().map(|p| p.image_id.clone()).collect();
    let txt_ids: Vec<String> = data.pairs.iter().map(|p| p.text_id.clone()).collect();
    if let Some(dir) = &a.export_dir {
        write_export(dir, "img_emb.cusf", &img_ids, &out.img_emb)?;
        write_export(dir, "txt_emb.cusf", &txt_ids, &out.txt_emb)?;
    }
    Ok(InspectPayload {
        batch: a
            .batch
            .iter()
            .zip(&data.pairs)
            .map(|(&index, p)| BatchItem {
                index,
                image_id: p.image_id.clone(),
                text_id: p.text_id.clone(),
            })
            .collect(),
        inv_temp: logits.inv_temp,
        uni_inv_temp: logits.effective_uni_inv_temp(),
        teacher_inv_temp,
        distributions: Distributions {
            p_i2i: rows(targets.p_i2i.probs()),
            p_t2t: rows(targets.p_t2t.probs()),
            q_i2t: rows(q.q_i2t.probs()),
            q_t2i: rows(q.q_t2i.probs()),
            q_i2i: rows(q.q_i2i.probs()),
            q_t2t: rows(q.q_t2t.probs()),
        },
        losses,
        embeddings: Embeddings {
            image: export(&img_ids, &out.img_emb),
            text: export(&txt_ids, &out.txt_emb),
        },
    })
}
