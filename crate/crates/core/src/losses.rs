//! Contrastive and soft-label alignment losses with analytic gradients.
//!
//! All gradients are taken with respect to the student similarity matrices
//! and the log inverse temperatures. Teacher targets are constants.
//!
//! For a row softmax `q = softmax(z)` and a fixed target `t`, the gradient of
//! the cross-entropy `−Σ t log q` with respect to `z` is `q − t`. Every loss
//! here is a mean over rows of such terms averaged over two directions, so the
//! logit gradient of each direction is `(Q − T) / (2N)`. With `z = s · κ` and
//! `κ = exp(θ)`, `∂/∂s = κ ∂/∂z` and `∂/∂θ = Σ (∂/∂z) ⊙ z`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{
    cross_entropy_diagonal, kl_divergence_rows, row_softmax, MathError, RowStochasticMatrix,
    SimilarityMatrix,
};
use crate::matrix::RealMatrix;
use crate::soft_labels::BatchTargets;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("loss weight {name} must be non-negative and finite, got {value}")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error("batch size mismatch: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error("similarity matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
}

/// Weights of the two alignment terms in the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, LossError> {
        check_weight("alpha", alpha)?;
        check_weight("beta", beta)?;
        Ok(Self { alpha, beta })
    }
}

fn check_weight(name: &'static str, value: f64) -> Result<(), LossError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(LossError::NegativeWeight { name, value })
    }
}

/// Student similarity logits for one batch.
///
/// `s_i2t` holds the cross-modal similarities (row = image); the text-to-image
/// matrix is always its transpose. `s_i2i` / `s_t2t` come from the uni-modal
/// projector heads.
#[derive(Clone, Debug)]
pub struct StudentLogits {
    pub s_i2t: SimilarityMatrix,
    pub s_i2i: SimilarityMatrix,
    pub s_t2t: SimilarityMatrix,
    pub inv_temp: f64,
    /// Separate inverse temperature for the uni-modal softmaxes; `None` shares `inv_temp`.
    pub uni_inv_temp: Option<f64>,
}

impl StudentLogits {
    pub fn batch_size(&self) -> usize {
        self.s_i2t.matrix().rows()
    }

    pub fn effective_uni_inv_temp(&self) -> f64 {
        self.uni_inv_temp.unwrap_or(self.inv_temp)
    }
}

/// Student distributions derived from [`StudentLogits`].
#[derive(Clone, Debug)]
pub struct StudentDistributions {
    pub q_i2t: RowStochasticMatrix,
    pub q_t2i: RowStochasticMatrix,
    pub q_i2i: RowStochasticMatrix,
    pub q_t2t: RowStochasticMatrix,
}

pub fn student_distributions(logits: &StudentLogits) -> Result<StudentDistributions, LossError> {
    check_square(logits)?;
    let uni = logits.effective_uni_inv_temp();
    Ok(StudentDistributions {
        q_i2t: row_softmax(&logits.s_i2t, logits.inv_temp)?,
        q_t2i: row_softmax(&logits.s_i2t.transpose(), logits.inv_temp)?,
        q_i2i: row_softmax(&logits.s_i2i, uni)?,
        q_t2t: row_softmax(&logits.s_t2t, uni)?,
    })
}

/// Per-direction KL terms of the two alignment losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirectionalKl {
    pub i2t: f64,
    pub t2i: f64,
    pub i2i: f64,
    pub t2t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_original: f64,
    pub l_csa: f64,
    pub l_usa: f64,
    pub l_total: f64,
    pub per_direction: DirectionalKl,
    pub alpha: f64,
    pub beta: f64,
}

/// Gradients of a scalar batch loss with respect to the student logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradients {
    pub d_s_i2t: RealMatrix,
    pub d_s_i2i: RealMatrix,
    pub d_s_t2t: RealMatrix,
    pub d_log_inv_temp: f64,
    /// Only non-zero when a separate uni-modal temperature is in use.
    pub d_log_uni_inv_temp: f64,
}

impl LossGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_s_i2t: RealMatrix::zeros(n, n),
            d_s_i2i: RealMatrix::zeros(n, n),
            d_s_t2t: RealMatrix::zeros(n, n),
            d_log_inv_temp: 0.0,
            d_log_uni_inv_temp: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.d_s_i2t, &self.d_s_i2i, &self.d_s_t2t]
            .iter()
            .all(|m| m.data().iter().all(|v| v.is_finite()))
            && self.d_log_inv_temp.is_finite()
            && self.d_log_uni_inv_temp.is_finite()
    }
}

/// Soft-label loss over the cross-modal distributions.
#[derive(Clone, Debug)]
pub struct CsaLoss {
    pub value: f64,
    pub kl_i2t: f64,
    pub kl_t2i: f64,
    /// Gradient with respect to the scaled cross-modal logits `s_i2t · κ`.
    pub d_logits_i2t: RealMatrix,
}

/// Soft-label loss over the uni-modal distributions.
#[derive(Clone, Debug)]
pub struct UsaLoss {
    pub value: f64,
    pub kl_i2i: f64,
    pub kl_t2t: f64,
    pub d_logits_i2i: RealMatrix,
    pub d_logits_t2t: RealMatrix,
}

fn check_square(logits: &StudentLogits) -> Result<usize, LossError> {
    let n = logits.batch_size();
    for s in [&logits.s_i2t, &logits.s_i2i, &logits.s_t2t] {
        let (r, c) = s.matrix().shape();
        if r != c {
            return Err(LossError::NotSquare(r, c));
        }
        if r != n {
            return Err(LossError::BatchMismatch(n, r));
        }
    }
    Ok(n)
}

fn same_size(dists: &[&RowStochasticMatrix]) -> Result<usize, LossError> {
    let n = dists[0].size();
    for d in dists {
        if d.size() != n {
            return Err(LossError::BatchMismatch(n, d.size()));
        }
    }
    Ok(n)
}

/// `(Q − T) / (2N)`.
fn direction_grad(q: &RealMatrix, target: &RealMatrix) -> RealMatrix {
    let scale = 1.0 / (2.0 * q.rows() as f64);
    let mut g = q.clone();
    g.add_scaled(target, -1.0);
    g.scaled(scale)
}

/// Adds `src` (a gradient for the t2i logits) onto `dst` (i2t layout).
fn add_transposed(dst: &mut RealMatrix, src: &RealMatrix) {
    let n = dst.rows();
    for i in 0..n {
        for j in 0..n {
            let v = dst.get(i, j) + src.get(j, i);
            dst.set(i, j, v);
        }
    }
}

/// Symmetric InfoNCE over a square cross-modal similarity matrix with positives on the diagonal.
pub fn infonce_loss(
    s_i2t: &SimilarityMatrix,
    inv_temp: f64,
) -> Result<(f64, LossGradients), LossError> {
    let (n, c) = s_i2t.matrix().shape();
    if n != c {
        return Err(LossError::NotSquare(n, c));
    }
    let q_i2t = row_softmax(s_i2t, inv_temp)?;
    let q_t2i = row_softmax(&s_i2t.transpose(), inv_temp)?;
    let value = 0.5 * (cross_entropy_diagonal(&q_i2t)? + cross_entropy_diagonal(&q_t2i)?);

    let eye = RealMatrix::identity(n);
    let mut dz = direction_grad(q_i2t.probs(), &eye);
    add_transposed(&mut dz, &direction_grad(q_t2i.probs(), &eye));

    let mut grads = LossGradients::zeros(n);
    grads.d_log_inv_temp = inv_temp * dz.frobenius_dot(s_i2t.matrix());
    grads.d_s_i2t = dz.scaled(inv_temp);
    Ok((value, grads))
}

/// Cross-modal soft-label alignment: `(KL(P_i2i ‖ Q_i2t) + KL(P_t2t ‖ Q_t2i)) / 2`,
/// each KL averaged over rows.
pub fn csa_loss(
    p_i2i: &RowStochasticMatrix,
    p_t2t: &RowStochasticMatrix,
    q_i2t: &RowStochasticMatrix,
    q_t2i: &RowStochasticMatrix,
) -> Result<CsaLoss, LossError> {
    same_size(&[p_i2i, p_t2t, q_i2t, q_t2i])?;
    let (_, kl_i2t) = kl_divergence_rows(p_i2i, q_i2t)?;
    let (_, kl_t2i) = kl_divergence_rows(p_t2t, q_t2i)?;
    let mut d = direction_grad(q_i2t.probs(), p_i2i.probs());
    add_transposed(&mut d, &direction_grad(q_t2i.probs(), p_t2t.probs()));
    Ok(CsaLoss {
        value: 0.5 * (kl_i2t + kl_t2i),
        kl_i2t,
        kl_t2i,
        d_logits_i2t: d,
    })
}

/// Uni-modal soft-label alignment: `(KL(P_i2i ‖ Q_i2i) + KL(P_t2t ‖ Q_t2t)) / 2`.
pub fn usa_loss(
    p_i2i: &RowStochasticMatrix,
    p_t2t: &RowStochasticMatrix,
    q_i2i: &RowStochasticMatrix,
    q_t2t: &RowStochasticMatrix,
) -> Result<UsaLoss, LossError> {
    same_size(&[p_i2i, p_t2t, q_i2i, q_t2t])?;
    let (_, kl_i2i) = kl_divergence_rows(p_i2i, q_i2i)?;
    let (_, kl_t2t) = kl_divergence_rows(p_t2t, q_t2t)?;
    Ok(UsaLoss {
        value: 0.5 * (kl_i2i + kl_t2t),
        kl_i2i,
        kl_t2t,
        d_logits_i2i: direction_grad(q_i2i.probs(), p_i2i.probs()),
        d_logits_t2t: direction_grad(q_t2t.probs(), p_t2t.probs()),
    })
}

/// `l_original + alpha · l_csa + beta · l_usa`.
pub fn cusa_total(
    l_original: f64,
    l_csa: f64,
    l_usa: f64,
    alpha: f64,
    beta: f64,
) -> Result<f64, LossError> {
    check_weight("alpha", alpha)?;
    check_weight("beta", beta)?;
    Ok(l_original + alpha * l_csa + beta * l_usa)
}

struct Forward {
    dists: StudentDistributions,
    l_original: f64,
    csa: CsaLoss,
    usa: UsaLoss,
}

fn forward(logits: &StudentLogits, targets: &BatchTargets) -> Result<Forward, LossError> {
    let n = check_square(logits)?;
    if targets.p_i2i.size() != n {
        return Err(LossError::BatchMismatch(n, targets.p_i2i.size()));
    }
    let dists = student_distributions(logits)?;
    let l_original =
        0.5 * (cross_entropy_diagonal(&dists.q_i2t)? + cross_entropy_diagonal(&dists.q_t2i)?);
    let csa = csa_loss(&targets.p_i2i, &targets.p_t2t, &dists.q_i2t, &dists.q_t2i)?;
    let usa = usa_loss(&targets.p_i2i, &targets.p_t2t, &dists.q_i2i, &dists.q_t2t)?;
    Ok(Forward {
        dists,
        l_original,
        csa,
        usa,
    })
}

fn report(f: &Forward, weights: LossWeights) -> Result<LossReport, LossError> {
    Ok(LossReport {
        l_original: f.l_original,
        l_csa: f.csa.value,
        l_usa: f.usa.value,
        l_total: cusa_total(
            f.l_original,
            f.csa.value,
            f.usa.value,
            weights.alpha,
            weights.beta,
        )?,
        per_direction: DirectionalKl {
            i2t: f.csa.kl_i2t,
            t2i: f.csa.kl_t2i,
            i2i: f.usa.kl_i2i,
            t2t: f.usa.kl_t2t,
        },
        alpha: weights.alpha,
        beta: weights.beta,
    })
}

/// Loss values only; CSA and USA are always computed, even at zero weight.
pub fn batch_losses(
    logits: &StudentLogits,
    targets: &BatchTargets,
    weights: LossWeights,
) -> Result<LossReport, LossError> {
    report(&forward(logits, targets)?, weights)
}

/// Full objective and its gradient with respect to every student logit and temperature.
pub fn batch_loss_and_grads(
    logits: &StudentLogits,
    targets: &BatchTargets,
    weights: LossWeights,
) -> Result<(LossReport, LossGradients), LossError> {
    let f = forward(logits, targets)?;
    let rep = report(&f, weights)?;
    let n = logits.batch_size();
    let kappa = logits.inv_temp;
    let kappa_uni = logits.effective_uni_inv_temp();

    let eye = RealMatrix::identity(n);
    let mut dz_i2t = direction_grad(f.dists.q_i2t.probs(), &eye);
    add_transposed(&mut dz_i2t, &direction_grad(f.dists.q_t2i.probs(), &eye));
    dz_i2t.add_scaled(&f.csa.d_logits_i2t, weights.alpha);

    let dz_i2i = f.usa.d_logits_i2i.scaled(weights.beta);
    let dz_t2t = f.usa.d_logits_t2t.scaled(weights.beta);

    let d_theta = kappa * dz_i2t.frobenius_dot(logits.s_i2t.matrix());
    let d_theta_uni = kappa_uni
        * (dz_i2i.frobenius_dot(logits.s_i2i.matrix())
            + dz_t2t.frobenius_dot(logits.s_t2t.matrix()));

    let (d_log_inv_temp, d_log_uni_inv_temp) = match logits.uni_inv_temp {
        Some(_) => (d_theta, d_theta_uni),
        None => (d_theta + d_theta_uni, 0.0),
    };
    let grads = LossGradients {
        d_s_i2t: dz_i2t.scaled(kappa),
        d_s_i2i: dz_i2i.scaled(kappa_uni),
        d_s_t2t: dz_t2t.scaled(kappa_uni),
        d_log_inv_temp,
        d_log_uni_inv_temp,
    };
    Ok((rep, grads))
}
