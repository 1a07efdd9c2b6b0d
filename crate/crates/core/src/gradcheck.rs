//! Finite-difference verification of every analytic gradient in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::{
    batch_loss_and_grads, batch_losses, csa_loss, infonce_loss, usa_loss, LossError, LossWeights,
    StudentLogits,
};
use crate::math::{l2_normalize_rows, row_softmax, SimilarityKind, SimilarityMatrix};
use crate::matrix::RealMatrix;
use crate::model::{backward, forward, ModelDims, StudentParams};
use crate::parallel::{map_indices, Execution};
use crate::soft_labels::{build_batch_targets, BatchTargets, TeacherBatch};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const BATCH_SIZES: [usize; 4] = [2, 3, 5, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Infonce,
    Csa,
    Usa,
    Total,
    Model,
}

impl Component {
    pub const ALL: [Component; 5] = [
        Component::Infonce,
        Component::Csa,
        Component::Usa,
        Component::Total,
        Component::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Infonce => "infonce",
            Component::Csa => "csa",
            Component::Usa => "usa",
            Component::Total => "total",
            Component::Model => "model",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub trials: usize,
    /// Upper bound on feature, embedding, and projector widths.
    pub max_dim: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Flips the sign of one component's analytic gradient. Used to show the
    /// harness catches a wrong gradient.
    pub inject_fault: Option<Component>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 20,
            max_dim: 8,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            inject_fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub component: Component,
    pub checks: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub batch_sizes: Vec<usize>,
    pub tolerance: f64,
    pub components: Vec<ComponentResult>,
    pub passed: bool,
    pub failed: Vec<Component>,
}

/// `|a − n| / max(|a|, |n|, 1e-3)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

#[derive(Default, Clone, Copy)]
struct Tally {
    checks: usize,
    max: f64,
}

impl Tally {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.checks += 1;
        let e = relative_error(analytic, numeric);
        // NaN must register as a failure.
        if e.is_nan() || e > self.max {
            self.max = if e.is_nan() { f64::INFINITY } else { e };
        }
    }

    fn merge(&mut self, o: Tally) {
        self.checks += o.checks;
        self.max = self.max.max(o.max);
    }
}

struct Probe {
    h: f64,
    sign: f64,
}

impl Probe {
    fn central(&self, x: f64, f: impl Fn(f64) -> f64) -> f64 {
        (f(x + self.h) - f(x - self.h)) / (2.0 * self.h)
    }

    /// Compares `analytic` with central differences of `f` over every entry of `m`.
    fn matrix(
        &self,
        tally: &mut Tally,
        m: &RealMatrix,
        analytic: &RealMatrix,
        f: impl Fn(&RealMatrix) -> f64,
    ) {
        for idx in 0..m.data().len() {
            let num = self.central(m.data()[idx], |v| {
                let mut p = m.clone();
                p.data_mut()[idx] = v;
                f(&p)
            });
            tally.add(self.sign * analytic.data()[idx], num);
        }
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> RealMatrix {
    RealMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn sim(m: RealMatrix, kind: SimilarityKind) -> SimilarityMatrix {
    SimilarityMatrix::new(m, kind)
}

fn random_targets(rng: &mut ChaCha8Rng, n: usize, max_dim: usize) -> BatchTargets {
    let di = rng.random_range(2..=max_dim.max(2));
    let dt = rng.random_range(2..=max_dim.max(2));
    let ti = l2_normalize_rows(&rand_matrix(rng, n, di)).expect("nonzero rows");
    let tt = l2_normalize_rows(&rand_matrix(rng, n, dt)).expect("nonzero rows");
    let inv_temp = rng.random_range(0.5..4.0);
    build_batch_targets(&TeacherBatch::new(ti, tt).expect("aligned"), inv_temp)
        .expect("valid targets")
}

type Tallies = [Tally; 5];

fn check_infonce(
    rng: &mut ChaCha8Rng,
    n: usize,
    p: &Probe,
    t: &mut Tally,
) -> Result<(), LossError> {
    let s = rand_matrix(rng, n, n);
    let theta: f64 = rng.random_range(0.0..2.0);
    let f = |s: &RealMatrix, th: f64| {
        infonce_loss(&sim(s.clone(), SimilarityKind::I2T), th.exp()).map(|r| r.0)
    };
    let (_, g) = infonce_loss(&sim(s.clone(), SimilarityKind::I2T), theta.exp())?;
    p.matrix(t, &s, &g.d_s_i2t, |m| f(m, theta).unwrap_or(f64::NAN));
    let num = p.central(theta, |th| f(&s, th).unwrap_or(f64::NAN));
    t.add(p.sign * g.d_log_inv_temp, num);
    Ok(())
}

fn check_csa(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_dim: usize,
    p: &Probe,
    t: &mut Tally,
) -> Result<(), LossError> {
    let targets = random_targets(rng, n, max_dim);
    let s = rand_matrix(rng, n, n);
    let theta: f64 = rng.random_range(0.0..2.0);
    let f = |s: &RealMatrix, th: f64| -> Result<_, LossError> {
        let m = sim(s.clone(), SimilarityKind::I2T);
        let q_i2t = row_softmax(&m, th.exp())?;
        let q_t2i = row_softmax(&m.transpose(), th.exp())?;
        csa_loss(&targets.p_i2i, &targets.p_t2t, &q_i2t, &q_t2i)
    };
    let kappa = theta.exp();
    let loss = f(&s, theta)?;
    let d_s = loss.d_logits_i2t.scaled(kappa);
    let d_theta = kappa * loss.d_logits_i2t.frobenius_dot(&s);
    p.matrix(t, &s, &d_s, |m| {
        f(m, theta).map(|l| l.value).unwrap_or(f64::NAN)
    });
    t.add(
        p.sign * d_theta,
        p.central(theta, |th| f(&s, th).map(|l| l.value).unwrap_or(f64::NAN)),
    );
    Ok(())
}

fn check_usa(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_dim: usize,
    p: &Probe,
    t: &mut Tally,
) -> Result<(), LossError> {
    let targets = random_targets(rng, n, max_dim);
    let a = rand_matrix(rng, n, n);
    let b = rand_matrix(rng, n, n);
    let theta: f64 = rng.random_range(0.0..2.0);
    let f = |a: &RealMatrix, b: &RealMatrix, th: f64| -> Result<_, LossError> {
        let q_i2i = row_softmax(&sim(a.clone(), SimilarityKind::I2I), th.exp())?;
        let q_t2t = row_softmax(&sim(b.clone(), SimilarityKind::T2T), th.exp())?;
        usa_loss(&targets.p_i2i, &targets.p_t2t, &q_i2i, &q_t2t)
    };
    let kappa = theta.exp();
    let loss = f(&a, &b, theta)?;
    let value =
        |l: Result<crate::losses::UsaLoss, LossError>| l.map(|l| l.value).unwrap_or(f64::NAN);
    p.matrix(t, &a, &loss.d_logits_i2i.scaled(kappa), |m| {
        value(f(m, &b, theta))
    });
    p.matrix(t, &b, &loss.d_logits_t2t.scaled(kappa), |m| {
        value(f(&a, m, theta))
    });
    let d_theta =
        kappa * (loss.d_logits_i2i.frobenius_dot(&a) + loss.d_logits_t2t.frobenius_dot(&b));
    t.add(
        p.sign * d_theta,
        p.central(theta, |th| value(f(&a, &b, th))),
    );
    Ok(())
}

fn check_total(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_dim: usize,
    separate: bool,
    p: &Probe,
    t: &mut Tally,
) -> Result<(), LossError> {
    let targets = random_targets(rng, n, max_dim);
    let weights = LossWeights::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))?;
    let logits = StudentLogits {
        s_i2t: sim(rand_matrix(rng, n, n), SimilarityKind::I2T),
        s_i2i: sim(rand_matrix(rng, n, n), SimilarityKind::I2I),
        s_t2t: sim(rand_matrix(rng, n, n), SimilarityKind::T2T),
        inv_temp: rng.random_range(0.0f64..2.0).exp(),
        uni_inv_temp: separate.then(|| rng.random_range(0.0f64..2.0).exp()),
    };
    let (_, g) = batch_loss_and_grads(&logits, &targets, weights)?;
    let value = |l: &StudentLogits| {
        batch_losses(l, &targets, weights)
            .map(|r| r.l_total)
            .unwrap_or(f64::NAN)
    };
    p.matrix(t, logits.s_i2t.matrix(), &g.d_s_i2t, |m| {
        value(&StudentLogits {
            s_i2t: sim(m.clone(), SimilarityKind::I2T),
            ..logits.clone()
        })
    });
    p.matrix(t, logits.s_i2i.matrix(), &g.d_s_i2i, |m| {
        value(&StudentLogits {
            s_i2i: sim(m.clone(), SimilarityKind::I2I),
            ..logits.clone()
        })
    });
    p.matrix(t, logits.s_t2t.matrix(), &g.d_s_t2t, |m| {
        value(&StudentLogits {
            s_t2t: sim(m.clone(), SimilarityKind::T2T),
            ..logits.clone()
        })
    });
    let num = p.central(logits.inv_temp.ln(), |th| {
        value(&StudentLogits {
            inv_temp: th.exp(),
            ..logits.clone()
        })
    });
    t.add(p.sign * g.d_log_inv_temp, num);
    if let Some(u) = logits.uni_inv_temp {
        let num = p.central(u.ln(), |th| {
            value(&StudentLogits {
                uni_inv_temp: Some(th.exp()),
                ..logits.clone()
            })
        });
        t.add(p.sign * g.d_log_uni_inv_temp, num);
    }
    Ok(())
}

fn check_model(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_dim: usize,
    separate: bool,
    p: &Probe,
    t: &mut Tally,
) -> Result<(), Box<dyn std::error::Error>> {
    let hi = max_dim.max(2);
    let dims = ModelDims {
        d_bi: rng.random_range(2..=hi),
        d_bt: rng.random_range(2..=hi),
        d_e: rng.random_range(2..=hi),
        d_u: rng.random_range(2..=hi),
    };
    let mut params = StudentParams::init(rng.random(), dims)?;
    // Keep temperatures strictly inside the clamp range so the gate is inactive.
    params.log_inv_temp = rng.random_range(0.2..2.0);
    if separate {
        params.log_uni_inv_temp = Some(rng.random_range(0.2..2.0));
    }
    let img = rand_matrix(rng, n, dims.d_bi);
    let txt = rand_matrix(rng, n, dims.d_bt);
    let targets = random_targets(rng, n, max_dim);
    let weights = LossWeights::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))?;
    let loss = |q: &StudentParams| -> f64 {
        forward(&img, &txt, q)
            .ok()
            .and_then(|o| o.logits().ok())
            .and_then(|l| batch_losses(&l, &targets, weights).ok())
            .map_or(f64::NAN, |r| r.l_total)
    };
    let out = forward(&img, &txt, &params)?;
    let (_, upstream) = batch_loss_and_grads(&out.logits()?, &targets, weights)?;
    let grads = backward(&img, &txt, &params, &out, &upstream)?;

    let analytic: Vec<f64> = grads
        .tensors()
        .iter()
        .flat_map(|(g, _)| g.iter().copied())
        .collect();
    let mut k = 0;
    for slot in 0..params.tensors().len() {
        let len = params.tensors()[slot].0.len();
        for idx in 0..len {
            let x = params.tensors()[slot].0[idx];
            let num = p.central(x, |v| {
                let mut q = params.clone();
                q.tensors_mut()[slot].0[idx] = v;
                loss(&q)
            });
            t.add(p.sign * analytic[k], num);
            k += 1;
        }
    }
    Ok(())
}

fn run_trial(cfg: &GradcheckConfig, trial: usize) -> Result<Tallies, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64);
    let probe = |c: Component| Probe {
        h: cfg.step,
        sign: if cfg.inject_fault == Some(c) {
            -1.0
        } else {
            1.0
        },
    };
    let mut tallies: Tallies = Default::default();
    let err =
        |c: Component, e: &dyn std::fmt::Display| format!("{} (trial {trial}): {e}", c.name());
    for n in BATCH_SIZES {
        check_infonce(&mut rng, n, &probe(Component::Infonce), &mut tallies[0])
            .map_err(|e| err(Component::Infonce, &e))?;
        check_csa(
            &mut rng,
            n,
            cfg.max_dim,
            &probe(Component::Csa),
            &mut tallies[1],
        )
        .map_err(|e| err(Component::Csa, &e))?;
        check_usa(
            &mut rng,
            n,
            cfg.max_dim,
            &probe(Component::Usa),
            &mut tallies[2],
        )
        .map_err(|e| err(Component::Usa, &e))?;
        for separate in [false, true] {
            check_total(
                &mut rng,
                n,
                cfg.max_dim,
                separate,
                &probe(Component::Total),
                &mut tallies[3],
            )
            .map_err(|e| err(Component::Total, &e))?;
            check_model(
                &mut rng,
                n,
                cfg.max_dim,
                separate,
                &probe(Component::Model),
                &mut tallies[4],
            )
            .map_err(|e| err(Component::Model, &e))?;
        }
    }
    Ok(tallies)
}

/// Runs every component check over `trials × BATCH_SIZES`, both temperature modes.
pub fn run_gradcheck(cfg: &GradcheckConfig, exec: Execution) -> Result<GradcheckReport, String> {
    if cfg.trials == 0 {
        return Err("trials must be >= 1".into());
    }
    if cfg.max_dim < 2 {
        return Err("max_dim must be >= 2".into());
    }
    if !(cfg.step > 0.0 && cfg.tolerance > 0.0) {
        return Err("step and tolerance must be > 0".into());
    }
    let per_trial = map_indices(exec, cfg.trials, |t| run_trial(cfg, t));
    let mut total: Tallies = Default::default();
    for r in per_trial {
        for (acc, t) in total.iter_mut().zip(r?) {
            acc.merge(t);
        }
    }
    let components: Vec<ComponentResult> = Component::ALL
        .iter()
        .zip(total)
        .map(|(&component, t)| ComponentResult {
            component,
            checks: t.checks,
            max_rel_error: t.max,
            passed: t.max < cfg.tolerance,
        })
        .collect();
    let failed: Vec<Component> = components
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.component)
        .collect();
    Ok(GradcheckReport {
        trials: cfg.trials,
        batch_sizes: BATCH_SIZES.to_vec(),
        tolerance: cfg.tolerance,
        passed: failed.is_empty(),
        failed,
        components,
    })
}
