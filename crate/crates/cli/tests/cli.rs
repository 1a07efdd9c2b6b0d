use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cusa_core::io::{read_checkpoint, write_features, write_pairs, FeatureTable, Pair};
use serde_json::Value;

fn cusa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cusa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(out: &Output) -> Value {
    assert_eq!(
        code(out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--clusters",
        "4",
        "--pairs-per-cluster",
        "20",
        "--seed",
        "7",
    ];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", p(dir), "--no-timing"]);
    json(&cusa(&args));
}

struct Features {
    pairs: PathBuf,
    img_base: PathBuf,
    txt_base: PathBuf,
    img_teacher: PathBuf,
    txt_teacher: PathBuf,
}

impl Features {
    fn in_dir(d: &Path) -> Self {
        Self {
            pairs: d.join("pairs.tsv"),
            img_base: d.join("img_base.cusf"),
            txt_base: d.join("txt_base.cusf"),
            img_teacher: d.join("img_teacher.cusf"),
            txt_teacher: d.join("txt_teacher.cusf"),
        }
    }

    fn args(&self) -> Vec<String> {
        [
            ("--pairs", &self.pairs),
            ("--img-base", &self.img_base),
            ("--txt-base", &self.txt_base),
            ("--img-teacher", &self.img_teacher),
            ("--txt-teacher", &self.txt_teacher),
        ]
        .iter()
        .flat_map(|(flag, path)| [flag.to_string(), p(path).to_string()])
        .collect()
    }
}

fn train(f: &Features, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec!["train".into()];
    args.extend(f.args());
    args.extend(extra.iter().map(|s| s.to_string()));
    args.extend([
        "--out-ckpt".into(),
        p(&out.join("model.cusc")).into(),
        "--log".into(),
        p(&out.join("log.jsonl")).into(),
        "--no-timing".into(),
    ]);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    cusa(&refs)
}

fn records(log: &Path) -> Vec<Value> {
    std::fs::read_to_string(log)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_writes_six_files_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &[]);
    synth(&b, &[]);
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 6, "{names:?}");
    for n in &names {
        assert_eq!(
            std::fs::read(a.join(n)).unwrap(),
            std::fs::read(b.join(n)).unwrap(),
            "{n}"
        );
    }
}

#[test]
fn synth_without_out_is_usage_error() {
    let out = cusa(&["synth", "--clusters", "4"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn synth_holdout_goes_to_subdirectory() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--holdout-per-cluster", "5"]);
    assert!(tmp.path().join("heldout").join("relevance.tsv").exists());
}

#[test]
fn train_rejects_batch_size_one() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let out = train(
        &Features::in_dir(tmp.path()),
        tmp.path(),
        &["--batch-size", "1"],
    );
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("model.cusc").exists());
}

#[test]
fn zero_weights_match_infonce_log() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let f = Features::in_dir(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let small = [
        "--batch-size",
        "16",
        "--epochs",
        "2",
        "--embed-dim",
        "8",
        "--usa-dim",
        "8",
    ];
    json(&train(
        &f,
        &a,
        &[&["--alpha", "0", "--beta", "0"][..], &small].concat(),
    ));
    json(&train(
        &f,
        &b,
        &[&["--objective", "infonce"][..], &small].concat(),
    ));
    let (ra, rb) = (records(&a.join("log.jsonl")), records(&b.join("log.jsonl")));
    assert!(!ra.is_empty());
    assert_eq!(ra, rb);
    let params = |d: &Path| read_checkpoint(d.join("model.cusc")).unwrap().params;
    assert_eq!(params(&a), params(&b));
}

#[test]
fn full_objective_loss_trends_down() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let report = json(&train(
        &Features::in_dir(tmp.path()),
        tmp.path(),
        &[
            "--alpha",
            "0.5",
            "--beta",
            "0.5",
            "--batch-size",
            "8",
            "--epochs",
            "5",
            "--lr",
            "0.01",
        ],
    ));
    let totals: Vec<f64> = records(&tmp.path().join("log.jsonl"))
        .iter()
        .map(|r| r["l_total"].as_f64().unwrap())
        .collect();
    assert_eq!(
        report["payload"]["steps"].as_u64().unwrap() as usize,
        totals.len()
    );
    let median = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let k = totals.len() / 4;
    assert!(
        median(&totals[totals.len() - k..]) < median(&totals[..k]),
        "{totals:?}"
    );
}

#[test]
fn train_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let f = Features::in_dir(tmp.path());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        std::fs::create_dir_all(&dir).unwrap();
        let out = train(&f, &dir, &["--batch-size", "8", "--epochs", "2"]);
        assert_eq!(code(&out), 0);
        outputs.push((
            std::fs::read(dir.join("model.cusc")).unwrap(),
            std::fs::read(dir.join("log.jsonl")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn train_unknown_id_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let mut f = Features::in_dir(tmp.path());
    f.pairs = tmp.path().join("bad_pairs.tsv");
    write_pairs(
        &f.pairs,
        &[
            Pair::new("img-00000", "txt-00000"),
            Pair::new("img-missing", "txt-00001"),
        ],
    )
    .unwrap();
    let out = train(&f, tmp.path(), &["--batch-size", "2"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("img-missing"));
}

#[test]
fn train_missing_file_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let mut f = Features::in_dir(tmp.path());
    f.img_base = tmp.path().join("nope.cusf");
    assert_eq!(code(&train(&f, tmp.path(), &[])), 3);
}

#[test]
fn collapsed_student_features_abort_with_step_context() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let f = Features::in_dir(tmp.path());
    let ids: Vec<String> = (0..80).map(|i| format!("img-{i:05}")).collect();
    let zeros = FeatureTable::new(ids, 32, vec![0.0; 80 * 32]).unwrap();
    write_features(&f.img_base, &zeros).unwrap();
    let out = train(&f, tmp.path(), &["--batch-size", "8"]);
    assert_eq!(code(&out), 5);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epoch 0, step 0"), "{err}");
}

#[test]
fn self_retrieval_gives_perfect_recall() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = tmp.path().join("emb.cusf");
    let ids: Vec<String> = (0..12).map(|i| format!("x{i}")).collect();
    let values: Vec<f32> = (0..12 * 12)
        .map(|k| if k % 13 == 0 { 1.0 } else { 0.1 })
        .collect();
    write_features(&emb, &FeatureTable::new(ids.clone(), 12, values).unwrap()).unwrap();
    let pairs = tmp.path().join("pairs.tsv");
    let pair_list: Vec<Pair> = ids
        .iter()
        .map(|i| Pair::new(i.clone(), i.clone()))
        .collect();
    write_pairs(&pairs, &pair_list).unwrap();
    let args = [
        "eval",
        "--img-emb",
        p(&emb),
        "--txt-emb",
        p(&emb),
        "--pairs",
        p(&pairs),
        "--no-timing",
    ];
    let first = cusa(&args);
    let report = json(&first);
    for dir in ["i2t", "t2i"] {
        for k in [1, 5, 10] {
            assert_eq!(report["payload"][dir][format!("recall_at_{k}")], 1.0);
        }
    }
    assert_eq!(report["payload"]["rsum"], 600.0);
    assert_eq!(cusa(&args).stdout, first.stdout);
}

#[test]
fn eval_checkpoint_on_all_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &["--holdout-per-cluster", "6"]);
    json(&train(
        &Features::in_dir(tmp.path()),
        tmp.path(),
        &["--batch-size", "8", "--epochs", "2"],
    ));
    let held = tmp.path().join("heldout");
    let ckpt = tmp.path().join("model.cusc");
    let base = |task: &str, repr: &str| {
        json(&cusa(&[
            "eval",
            "--ckpt",
            p(&ckpt),
            "--img-base",
            p(&held.join("img_base.cusf")),
            "--txt-base",
            p(&held.join("txt_base.cusf")),
            "--relevance",
            p(&held.join("relevance.tsv")),
            "--task",
            task,
            "--repr",
            repr,
            "--no-timing",
        ]))
    };
    let cross = base("cross", "main");
    assert_eq!(cross["payload"]["i2t"]["queries"], 24);
    let rsum = cross["payload"]["rsum"].as_f64().unwrap();
    assert!((0.0..=600.0).contains(&rsum));
    for task in ["img", "txt"] {
        for repr in ["main", "usa"] {
            let r = base(task, repr);
            assert_eq!(r["payload"]["queries"], 24);
        }
    }
}

#[test]
fn eval_sts_reports_spearman() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = tmp.path().join("t.cusf");
    let table = FeatureTable::new(
        vec!["a".into(), "b".into(), "c".into(), "d".into()],
        2,
        vec![1.0, 0.0, 0.9, 0.1, 0.5, 0.5, 0.0, 1.0],
    )
    .unwrap();
    write_features(&emb, &table).unwrap();
    let sts = tmp.path().join("sts.tsv");
    std::fs::write(&sts, "a\tb\t5\na\tc\t3\na\td\t0\nb\td\t1\n").unwrap();
    let report = json(&cusa(&[
        "eval",
        "--task",
        "sts",
        "--txt-emb",
        p(&emb),
        "--sts",
        p(&sts),
    ]));
    assert_eq!(report["payload"]["pairs"], 4);
    assert!((report["payload"]["spearman"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    std::fs::write(&sts, "a\tzz\t5\n").unwrap();
    assert_eq!(
        code(&cusa(&[
            "eval",
            "--task",
            "sts",
            "--txt-emb",
            p(&emb),
            "--sts",
            p(&sts)
        ])),
        4
    );
}

#[test]
fn eval_unknown_relevance_id_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let rel = tmp.path().join("rel.tsv");
    std::fs::write(&rel, "img-00000\ttxt-99999\n").unwrap();
    let out = cusa(&[
        "eval",
        "--img-emb",
        p(&tmp.path().join("img_base.cusf")),
        "--txt-emb",
        p(&tmp.path().join("txt_base.cusf")),
        "--relevance",
        p(&rel),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn gradcheck_default_passes_and_lists_components() {
    let report = json(&cusa(&["gradcheck", "--no-timing"]));
    let names: Vec<&str> = report["payload"]["components"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["component"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["infonce", "csa", "usa", "total", "model"]);
    assert_eq!(report["payload"]["passed"], true);
}

#[test]
fn gradcheck_zero_trials_is_usage_error() {
    assert_eq!(code(&cusa(&["gradcheck", "--trials", "0"])), 2);
}

#[test]
fn gradcheck_injected_fault_is_named() {
    let out = cusa(&["gradcheck", "--trials", "2", "--inject-fault", "usa"]);
    assert_eq!(code(&out), 6);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("usa"), "{err}");
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["payload"]["passed"], false);
}

fn inspect(dir: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec!["inspect".into()];
    args.extend(Features::in_dir(dir).args());
    args.extend(extra.iter().map(|s| s.to_string()));
    args.push("--no-timing".into());
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    cusa(&refs)
}

#[test]
fn inspect_identical_teacher_images_give_uniform_rows() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let ids: Vec<String> = (0..80).map(|i| format!("img-{i:05}")).collect();
    let same = FeatureTable::new(ids, 3, [0.3f32, -0.2, 0.9].repeat(80)).unwrap();
    write_features(tmp.path().join("img_teacher.cusf"), &same).unwrap();
    let report = json(&inspect(tmp.path(), &["--batch", "0,1"]));
    for row in report["payload"]["distributions"]["p_i2i"]
        .as_array()
        .unwrap()
    {
        let row: Vec<f64> = serde_json::from_value(row.clone()).unwrap();
        assert_eq!(row, [0.5, 0.5]);
    }
}

#[test]
fn inspect_dump_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let export = tmp.path().join("export");
    let report = json(&inspect(
        tmp.path(),
        &[
            "--batch",
            "3,41,7,60",
            "--alpha",
            "0.3",
            "--beta",
            "0.7",
            "--export-dir",
            p(&export),
        ],
    ));
    let payload = &report["payload"];
    for (name, m) in payload["distributions"].as_object().unwrap() {
        let rows: Vec<Vec<f64>> = serde_json::from_value(m.clone()).unwrap();
        assert_eq!(rows.len(), 4, "{name}");
        for r in rows {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{name}");
        }
    }
    let l = &payload["losses"];
    let f = |k: &str| l[k].as_f64().unwrap();
    assert!((f("l_total") - (f("l_original") + 0.3 * f("l_csa") + 0.7 * f("l_usa"))).abs() < 1e-12);
    assert_eq!(payload["embeddings"]["image"][1]["id"], "img-00041");
    assert_eq!(payload["embeddings"]["text"].as_array().unwrap().len(), 4);
    assert!(export.join("img_emb.cusf").exists() && export.join("txt_emb.cusf").exists());
}

#[test]
fn inspect_rejects_bad_batches() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    assert_eq!(code(&inspect(tmp.path(), &["--batch", "0"])), 2);
    assert_eq!(code(&inspect(tmp.path(), &["--batch", "0,0"])), 2);
    assert_eq!(code(&inspect(tmp.path(), &["--batch", "0,999"])), 2);
    let ids: Vec<String> = (1..80).map(|i| format!("txt-{i:05}")).collect();
    let partial = FeatureTable::new(ids, 2, vec![1.0; 79 * 2]).unwrap();
    write_features(tmp.path().join("txt_teacher.cusf"), &partial).unwrap();
    assert_eq!(code(&inspect(tmp.path(), &["--batch", "0,1"])), 4);
}

#[test]
fn thread_limit_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), &[]);
    let (img, txt, rel) = (
        tmp.path().join("img_base.cusf"),
        tmp.path().join("txt_base.cusf"),
        tmp.path().join("relevance.tsv"),
    );
    let args = [
        "eval",
        "--img-emb",
        p(&img),
        "--txt-emb",
        p(&txt),
        "--relevance",
        p(&rel),
        "--no-timing",
    ];
    let default = cusa(&args);
    let limited = Command::new(env!("CARGO_BIN_EXE_cusa"))
        .args(args)
        .env("CUSA_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&default), 0);
    assert_eq!(default.stdout, limited.stdout);
}

#[test]
fn timing_lives_in_its_own_field() {
    let with = json(&cusa(&["gradcheck", "--trials", "1"]));
    assert!(with["timing"]["wall_seconds"].is_number());
    let without = json(&cusa(&["gradcheck", "--trials", "1", "--no-timing"]));
    assert!(without.get("timing").is_none());
    assert_eq!(with["payload"], without["payload"]);
}
