//! Four-arm ablation on the synthetic held-out split.
//!
//! Usage: `cargo run --release --example ablation -- [key=value ...]`
//! Keys: seeds, gap, shared, holdout, lr, epochs, batch, tinv, embed, usa.
//! Defaults reproduce the acceptance scenario.

use std::collections::HashMap;
use std::process::exit;

use cusa_core::experiment::train_and_evaluate;
use cusa_core::synth::{synth_generate, SynthConfig};
use cusa_core::TrainConfig;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn main() {
    let mut opts: HashMap<String, f64> = HashMap::new();
    for arg in std::env::args().skip(1) {
        match arg.split_once('=').map(|(k, v)| (k, v.parse::<f64>())) {
            Some((k, Ok(v))) => {
                opts.insert(k.to_string(), v);
            }
            _ => {
                eprintln!("expected key=number, got {arg:?}");
                exit(2);
            }
        }
    }
    let get = |k: &str, default: f64| opts.get(k).copied().unwrap_or(default);
    let arms = [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)];
    let mut results: Vec<Vec<[f64; 4]>> = vec![Vec::new(); arms.len()];
    for seed in 0..get("seeds", 5.0) as u64 {
        let synth = SynthConfig {
            cross_modal_gap: get("gap", SynthConfig::default().cross_modal_gap),
            shared_dim: get("shared", 8.0) as usize,
            holdout_per_cluster: get("holdout", 50.0) as usize,
            seed,
            ..SynthConfig::default()
        };
        let data = synth_generate(&synth).unwrap_or_else(|e| {
            eprintln!("{e}");
            exit(2)
        });
        let heldout = data.heldout.as_ref().expect("holdout must be >= 2");
        for (slot, &(alpha, beta)) in results.iter_mut().zip(&arms) {
            let config = TrainConfig {
                alpha,
                beta,
                seed,
                learning_rate: get("lr", 1e-2),
                epochs: get("epochs", 20.0) as usize,
                batch_size: get("batch", 32.0) as usize,
                teacher_inv_temp: get("tinv", 1.0 / 0.07),
                embed_dim: get("embed", 32.0) as usize,
                usa_dim: get("usa", 32.0) as usize,
                ..TrainConfig::default()
            };
            let r = train_and_evaluate(&data.train, heldout, &config).unwrap_or_else(|e| {
                eprintln!("{e}");
                exit(1)
            });
            slot.push([
                r.image.recall_at_1_pct,
                r.text.recall_at_1_pct,
                r.cross.rsum,
                r.cross.map_at_r_pct,
            ]);
        }
    }
    println!("alpha beta   img R@1  txt R@1   RSUM  mAP@R   (medians)");
    for (rows, (alpha, beta)) in results.iter().zip(arms) {
        let col = |i: usize| median(rows.iter().map(|r| r[i]).collect());
        println!(
            "{alpha:5} {beta:4}   {:7.1}  {:7.1}  {:5.1}  {:5.1}",
            col(0),
            col(1),
            col(2),
            col(3)
        );
    }
}
