//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use cusa_core::experiment::{evaluate_split, train_and_evaluate, SplitReport};
use cusa_core::gradcheck::{run_gradcheck, Component, GradcheckConfig};
use cusa_core::io::{
    decode_checkpoint, decode_features, encode_checkpoint, encode_features, DataError, FeatureTable,
};
use cusa_core::losses::{csa_loss, infonce_loss};
use cusa_core::math::{kl_divergence_rows, l2_normalize_rows, row_softmax, SimilarityKind};
use cusa_core::metrics::{
    evaluate_uni_modal_with, map_at_r, r_precision, rank, recall_at_k, rsum, spearman,
};
use cusa_core::synth::{synth_generate, SynthConfig};
use cusa_core::trainer::{train, Objective, TrainingData};
use cusa_core::{
    Execution, RealMatrix, Representation, RetrievalRelevance, RowStochasticMatrix,
    SimilarityMatrix, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> RealMatrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    RealMatrix::new(rows, cols, data).unwrap()
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> RowStochasticMatrix {
    let s = SimilarityMatrix::new(random_matrix(rng, n, n, 1.0), SimilarityKind::I2I);
    row_softmax(&s, rng.random_range(1.0..20.0)).unwrap()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = run_gradcheck(&GradcheckConfig::default(), Execution::default())?;
    let elapsed = start.elapsed();
    let worst = report
        .components
        .iter()
        .map(|c| format!("{}={:.1e}", c.component.name(), c.max_rel_error))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(report.components.len() == Component::ALL.len(), || {
        "not every component was checked".into()
    })?;
    ensure(report.passed, || {
        format!("failed: {:?} ({worst})", report.failed)
    })?;
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:.1?}, limit 30 s")
    })?;
    Ok(format!("{} trials, {worst}, {elapsed:.1?}", report.trials))
}

fn diag_cross_entropy_oracle(s: &RealMatrix, kappa: f64) -> f64 {
    let n = s.rows();
    let row_term = |get: &dyn Fn(usize, usize) -> f64, i: usize| {
        let m = (0..n)
            .map(|j| get(i, j) * kappa)
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = m
            + (0..n)
                .map(|j| (get(i, j) * kappa - m).exp())
                .sum::<f64>()
                .ln();
        lse - get(i, i) * kappa
    };
    let fwd = |i: usize, j: usize| s.get(i, j);
    let bwd = |i: usize, j: usize| s.get(j, i);
    let a: f64 = (0..n).map(|i| row_term(&fwd, i)).sum::<f64>() / n as f64;
    let b: f64 = (0..n).map(|i| row_term(&bwd, i)).sum::<f64>() / n as f64;
    0.5 * (a + b)
}

fn small_training_data(seed: u64) -> TrainingData {
    let cfg = SynthConfig {
        pairs_per_cluster: 24,
        d_student_img: 12,
        d_student_txt: 10,
        d_teacher_img: 8,
        d_teacher_txt: 6,
        seed,
        ..SynthConfig::default()
    };
    let d = synth_generate(&cfg).unwrap().train;
    TrainingData::assemble(
        &d.pairs,
        &d.img_base,
        &d.txt_base,
        &d.img_teacher,
        &d.txt_teacher,
    )
    .unwrap()
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut worst_kl = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..10);
        let p = random_distribution(&mut rng, n);
        let (rows, mean) = kl_divergence_rows(&p, &p).map_err(|e| e.to_string())?;
        worst_kl = rows
            .iter()
            .chain([&mean])
            .fold(worst_kl, |a, v| a.max(v.abs()));
    }
    ensure(worst_kl <= 1e-12, || {
        format!("(a) KL(P||P) reached {worst_kl:e}")
    })?;

    let mut worst_onehot = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..10);
        let s = random_matrix(&mut rng, n, n, 1.0);
        let kappa = rng.random_range(1.0..50.0);
        let sim = SimilarityMatrix::new(s.clone(), SimilarityKind::I2T);
        let q_i2t = row_softmax(&sim, kappa).unwrap();
        let q_t2i = row_softmax(&sim.transpose(), kappa).unwrap();
        let eye = RowStochasticMatrix::new(RealMatrix::identity(n)).unwrap();
        let csa = csa_loss(&eye, &eye, &q_i2t, &q_t2i).unwrap().value;
        let (itc, _) = infonce_loss(&sim, kappa).unwrap();
        let oracle = diag_cross_entropy_oracle(&s, kappa);
        worst_onehot = worst_onehot
            .max((csa - itc).abs())
            .max((csa - oracle).abs());
    }
    ensure(worst_onehot <= 1e-9, || {
        format!("(b) one-hot CSA off by {worst_onehot:e}")
    })?;

    let data = small_training_data(3);
    let cfg = TrainConfig {
        alpha: 0.5,
        beta: 0.5,
        batch_size: 16,
        epochs: 3,
        learning_rate: 1e-2,
        embed_dim: 8,
        usa_dim: 6,
        ..TrainConfig::default()
    };
    let (_, log) = train(&data, &cfg).map_err(|e| e.to_string())?;
    let worst_total = log
        .records
        .iter()
        .map(|r| (r.l_total - (r.l_original + cfg.alpha * r.l_csa + cfg.beta * r.l_usa)).abs())
        .fold(0.0f64, f64::max);
    ensure(!log.records.is_empty() && worst_total <= 1e-12, || {
        format!("(c) total identity off by {worst_total:e}")
    })?;

    let zero = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ..cfg.clone()
    };
    let plain = TrainConfig {
        objective: Objective::InfoNce,
        ..zero.clone()
    };
    let (a, _) = train(&data, &zero).map_err(|e| e.to_string())?;
    let (b, _) = train(&data, &plain).map_err(|e| e.to_string())?;
    let mut worst_param = (a.params.log_inv_temp - b.params.log_inv_temp).abs();
    for (x, y) in a.params.tensors().iter().zip(b.params.tensors()) {
        for (u, v) in x.0.iter().zip(y.0) {
            worst_param = worst_param.max((u - v).abs());
        }
    }
    ensure(worst_param <= 1e-12, || {
        format!("(d) zero-weight run differs from InfoNCE by {worst_param:e}")
    })?;

    Ok(format!(
        "KL(P||P) {worst_kl:.0e}, one-hot {worst_onehot:.0e}, total {worst_total:.0e} over {} steps, trajectory {worst_param:.0e}",
        log.records.len()
    ))
}

/// Position of gallery item `g` in the ranking of `scores`: higher score
/// first, ties broken by lower index.
fn oracle_position(scores: &[f64], g: usize, excluded: Option<usize>) -> usize {
    (0..scores.len())
        .filter(|&h| Some(h) != excluded && h != g)
        .filter(|&h| scores[h] > scores[g] || (scores[h] == scores[g] && h < g))
        .count()
}

struct OracleMetrics {
    recall: [f64; 3],
    r_precision: f64,
    map_at_r: f64,
}

fn oracle_metrics(scores: &RealMatrix, relevant: &[Vec<usize>], ks: [usize; 3]) -> OracleMetrics {
    let nq = relevant.len();
    let mut hits = [0usize; 3];
    let mut rp = 0.0;
    let mut ap = 0.0;
    for (i, rel) in relevant.iter().enumerate() {
        let row = scores.row(i);
        let positions: Vec<usize> = rel.iter().map(|&g| oracle_position(row, g, None)).collect();
        let best = *positions.iter().min().unwrap();
        for (h, &k) in hits.iter_mut().zip(&ks) {
            if best < k {
                *h += 1;
            }
        }
        let r = rel.len();
        rp += positions.iter().filter(|&&p| p < r).count() as f64 / r as f64;
        let mut sorted: Vec<usize> = positions.iter().copied().filter(|&p| p < r).collect();
        sorted.sort_unstable();
        let mut acc = 0.0;
        for (found, &p) in sorted.iter().enumerate() {
            acc += (found + 1) as f64 / (p + 1) as f64;
        }
        ap += acc / r as f64;
    }
    OracleMetrics {
        recall: hits.map(|h| h as f64 / nq as f64),
        r_precision: rp / nq as f64,
        map_at_r: ap / nq as f64,
    }
}

fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

fn quantized(rng: &mut ChaCha8Rng, rows: usize, cols: usize, ties: bool) -> RealMatrix {
    let data = (0..rows * cols)
        .map(|_| {
            if ties {
                rng.random_range(0..4) as f64 / 4.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    RealMatrix::new(rows, cols, data).unwrap()
}

fn random_relevance(rng: &mut ChaCha8Rng, gallery: usize, exclude: Option<usize>) -> Vec<usize> {
    let candidates: Vec<usize> = (0..gallery).filter(|&g| Some(g) != exclude).collect();
    let r = rng.random_range(1..=candidates.len().min(5));
    let mut picked = candidates;
    for i in 0..r {
        let j = rng.random_range(i..picked.len());
        picked.swap(i, j);
    }
    picked.truncate(r);
    picked
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ks = [1, 5, 10];
    for instance in 0..100 {
        let ties = instance % 2 == 0;
        let g = rng.random_range(2..=20);
        let nq = rng.random_range(1..=12);
        let scores = quantized(&mut rng, nq, g, ties);
        let relevant: Vec<Vec<usize>> = (0..nq)
            .map(|_| random_relevance(&mut rng, g, None))
            .collect();
        let rel = RetrievalRelevance::new((0..nq).collect(), relevant.clone(), g).unwrap();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let ranked = rank(&scores, exec);
            let oracle = oracle_metrics(&scores, &relevant, ks);
            for (k, want) in ks.iter().zip(oracle.recall) {
                let got = recall_at_k(&ranked, &rel, *k).unwrap();
                ensure(got == want, || {
                    format!("instance {instance}: R@{k} {got} vs {want}")
                })?;
            }
            let got = r_precision(&ranked, &rel).unwrap();
            ensure(got == oracle.r_precision, || {
                format!("instance {instance}: R-P {got} vs {}", oracle.r_precision)
            })?;
            let got = map_at_r(&ranked, &rel).unwrap();
            ensure(got == oracle.map_at_r, || {
                format!("instance {instance}: mAP@R {got} vs {}", oracle.map_at_r)
            })?;
        }

        // Uni-modal R@1 on unit rows drawn from {±e_k}, so cosine ties are exact.
        let dim = 3;
        let data: Vec<f64> = (0..g)
            .flat_map(|_| {
                let k = rng.random_range(0..dim);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                (0..dim).map(move |j| if j == k { sign } else { 0.0 })
            })
            .collect();
        let raw = RealMatrix::new(g, dim, data).unwrap();
        let emb = l2_normalize_rows(&raw).unwrap();
        let queries: Vec<usize> = (0..g).filter(|_| rng.random::<bool>()).collect();
        let queries = if queries.is_empty() { vec![0] } else { queries };
        let uni_rel: Vec<Vec<usize>> = queries
            .iter()
            .map(|&q| random_relevance(&mut rng, g, Some(q)))
            .collect();
        let rel = RetrievalRelevance::new(queries.clone(), uni_rel.clone(), g).unwrap();
        let mut hits = 0usize;
        for (q, rel_q) in queries.iter().zip(&uni_rel) {
            let row: Vec<f64> = (0..g)
                .map(|h| (0..dim).map(|j| raw.get(*q, j) * raw.get(h, j)).sum())
                .collect();
            if rel_q
                .iter()
                .any(|&h| oracle_position(&row, h, Some(*q)) == 0)
            {
                hits += 1;
            }
        }
        let want = hits as f64 / queries.len() as f64;
        for exec in [Execution::Sequential, Execution::Parallel] {
            let got = evaluate_uni_modal_with(&emb, &rel, exec)
                .unwrap()
                .recall_at_1;
            ensure(got == want, || {
                format!("instance {instance}: uni R@1 {got} vs {want}")
            })?;
        }
    }

    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(3..30);
        let levels = if case % 2 == 0 { 4 } else { 1000 };
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let want = oracle_spearman(&x, &y);
        match spearman(&x, &y) {
            Ok(got) => worst = worst.max((got - want).abs()),
            // Constant inputs have no defined correlation on either side.
            Err(_) => ensure(want.is_nan(), || format!("spearman case {case} rejected"))?,
        }
    }
    ensure(worst <= 1e-9, || format!("Spearman off by {worst:e}"))?;
    Ok(format!(
        "100 ranking instances exact, Spearman max error {worst:.0e}"
    ))
}

fn rsum_arithmetic() -> Outcome {
    let cases = [
        ([57.3, 83.1, 90.3, 44.2, 72.7, 82.1], 429.7),
        ([83.5, 96.3, 98.5, 66.2, 87.1, 92.2], 523.8),
    ];
    for (inputs, want) in cases {
        let got = rsum(inputs).map_err(|e| e.to_string())?;
        ensure(got == want, || {
            format!("{inputs:?} -> {got:?}, want {want:?}")
        })?;
    }
    Ok("429.7 and 523.8 exact".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct ArmSummary {
    img_r1: f64,
    txt_r1: f64,
    rsum: f64,
    map_at_r: f64,
}

fn summarize(reports: &[SplitReport]) -> ArmSummary {
    let pick = |f: fn(&SplitReport) -> f64| median(reports.iter().map(f).collect());
    ArmSummary {
        img_r1: pick(|r| r.image.recall_at_1_pct),
        txt_r1: pick(|r| r.text.recall_at_1_pct),
        rsum: pick(|r| r.cross.rsum),
        map_at_r: pick(|r| r.cross.map_at_r_pct),
    }
}

/// Held-out scenario used for the ablation. The student starts at inverse
/// temperature 1/0.07, and the teacher targets use the same sharpness.
fn ablation_config(alpha: f64, beta: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        alpha,
        beta,
        batch_size: 32,
        epochs: 20,
        learning_rate: 1e-2,
        seed,
        teacher_inv_temp: 1.0 / 0.07,
        embed_dim: 32,
        usa_dim: 32,
        ..TrainConfig::default()
    }
}

fn ablation_direction() -> Outcome {
    let arms = [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)];
    let mut results: Vec<Vec<SplitReport>> = vec![Vec::new(); arms.len()];
    let mut slowest = Duration::ZERO;
    for seed in 0..5u64 {
        let data = synth_generate(&SynthConfig {
            holdout_per_cluster: 50,
            seed,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let heldout = data.heldout.expect("held-out split requested");
        for (slot, &(alpha, beta)) in results.iter_mut().zip(&arms) {
            let start = Instant::now();
            let report =
                train_and_evaluate(&data.train, &heldout, &ablation_config(alpha, beta, seed))
                    .map_err(|e| e.to_string())?;
            slowest = slowest.max(start.elapsed());
            slot.push(report);
        }
    }
    let [base, usa, csa, full] = [0, 1, 2, 3].map(|i| summarize(&results[i]));
    let line = format!(
        "median img/txt R@1, RSUM, mAP@R: base {:.1}/{:.1} {:.1} {:.1}; USA {:.1}/{:.1}; CSA mAP@R {:.1}; full {:.1}/{:.1} {:.1}; slowest run {slowest:.1?}",
        base.img_r1, base.txt_r1, base.rsum, base.map_at_r, usa.img_r1, usa.txt_r1, csa.map_at_r,
        full.img_r1, full.txt_r1, full.rsum
    );
    ensure(usa.img_r1 > base.img_r1 && usa.txt_r1 > base.txt_r1, || {
        format!("(a) USA-only did not improve uni-modal R@1: {line}")
    })?;
    ensure(csa.map_at_r >= base.map_at_r, || {
        format!("(b) CSA-only lowered mAP@R: {line}")
    })?;
    ensure(
        full.img_r1 >= base.img_r1 + 5.0 && full.txt_r1 >= base.txt_r1 + 5.0,
        || format!("(c) full model uni-modal gain below 5 points: {line}"),
    )?;
    ensure(full.rsum >= base.rsum, || {
        format!("(c) full model lowered RSUM: {line}")
    })?;
    ensure(slowest <= Duration::from_secs(60), || {
        format!("run over 60 s: {line}")
    })?;
    Ok(line)
}

fn expect_truncated(
    result: Result<impl std::fmt::Debug, DataError>,
    cut: usize,
) -> Result<(), String> {
    match result {
        Err(DataError::TruncatedFile { offset, .. }) if offset == cut => Ok(()),
        other => Err(format!("prefix of {cut} bytes gave {other:?}")),
    }
}

fn determinism_and_round_trips() -> Outcome {
    let data = small_training_data(9);
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 2,
        embed_dim: 6,
        usa_dim: 5,
        separate_uni_temp: true,
        ..TrainConfig::default()
    };
    let synth = SynthConfig {
        pairs_per_cluster: 24,
        holdout_per_cluster: 6,
        seed: 9,
        ..SynthConfig::default()
    };
    let mut ckpts = Vec::new();
    let mut logs = Vec::new();
    let mut reports = Vec::new();
    for exec in [
        Execution::Sequential,
        Execution::Parallel,
        Execution::Parallel,
    ] {
        let (ckpt, log) = train(&data, &cfg).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf, &cfg).unwrap();
        let out = synth_generate(&synth).unwrap();
        let heldout = out.heldout.unwrap();
        let model_cfg = TrainConfig {
            embed_dim: 6,
            usa_dim: 5,
            ..cfg.clone()
        };
        let trained = train(
            &TrainingData::assemble(
                &out.train.pairs,
                &out.train.img_base,
                &out.train.txt_base,
                &out.train.img_teacher,
                &out.train.txt_teacher,
            )
            .unwrap(),
            &model_cfg,
        )
        .map_err(|e| e.to_string())?
        .0;
        let report = evaluate_split(&trained.params, &heldout, Representation::Main, exec)
            .map_err(|e| e.to_string())?;
        ckpts.push(encode_checkpoint(&ckpt).unwrap());
        logs.push(buf);
        reports.push(serde_json::to_vec(&report).unwrap());
    }
    ensure(ckpts.windows(2).all(|w| w[0] == w[1]), || {
        "checkpoints differ".into()
    })?;
    ensure(logs.windows(2).all(|w| w[0] == w[1]), || {
        "logs differ".into()
    })?;
    ensure(reports.windows(2).all(|w| w[0] == w[1]), || {
        "reports differ".into()
    })?;

    let ckpt_bytes = &ckpts[0];
    let back = decode_checkpoint(ckpt_bytes).map_err(|e| e.to_string())?;
    ensure(&encode_checkpoint(&back).unwrap() == ckpt_bytes, || {
        "checkpoint round trip changed bytes".into()
    })?;

    let values = vec![
        0.1f32,
        -0.0,
        f32::MIN_POSITIVE / 4.0,
        f32::MAX,
        -1.5e-38,
        3.0e7,
    ];
    let table = FeatureTable::new(vec!["a".into(), "ü-b".into()], 3, values.clone())
        .map_err(|e| e.to_string())?;
    let feat_bytes = encode_features(&table);
    let decoded = decode_features(&feat_bytes).map_err(|e| e.to_string())?;
    let same_bits = decoded
        .values()
        .iter()
        .zip(&values)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same_bits && decoded.ids() == table.ids(), || {
        "feature values changed".into()
    })?;
    ensure(encode_features(&decoded) == feat_bytes, || {
        "feature bytes changed".into()
    })?;

    for cut in 0..feat_bytes.len() {
        expect_truncated(decode_features(&feat_bytes[..cut]), cut)?;
    }
    for cut in 0..ckpt_bytes.len() {
        expect_truncated(decode_checkpoint(&ckpt_bytes[..cut]), cut)?;
    }
    let mut corrupt = feat_bytes.clone();
    corrupt[0] = b'X';
    ensure(
        matches!(decode_features(&corrupt), Err(DataError::BadMagic { .. })),
        || "bad feature magic accepted".into(),
    )?;
    let first_value = 20 + 2 + 1;
    let mut corrupt = feat_bytes.clone();
    corrupt[first_value..first_value + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    match decode_features(&corrupt) {
        Err(DataError::NonFiniteValue { offset, .. }) if offset == first_value => {}
        other => return Err(format!("NaN feature gave {other:?}")),
    }
    let mut corrupt = ckpt_bytes.clone();
    corrupt[0] = b'X';
    ensure(
        matches!(decode_checkpoint(&corrupt), Err(DataError::BadMagic { .. })),
        || "bad checkpoint magic accepted".into(),
    )?;
    let mut corrupt = ckpt_bytes.clone();
    corrupt.push(0);
    ensure(
        matches!(
            decode_checkpoint(&corrupt),
            Err(DataError::TrailingBytes { .. })
        ),
        || "trailing checkpoint bytes accepted".into(),
    )?;

    Ok(format!(
        "3 runs identical across execution modes, {} + {} truncations rejected at their offsets",
        feat_bytes.len(),
        ckpt_bytes.len()
    ))
}

fn main() {
    let criteria: [Criterion; 6] = [
        ("1 gradient correctness", gradient_correctness),
        ("2 loss identities", loss_identities),
        ("3 metric oracle equivalence", metric_oracles),
        ("4 RSUM arithmetic", rsum_arithmetic),
        ("5 ablation direction", ablation_direction),
        ("6 determinism and round trips", determinism_and_round_trips),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
