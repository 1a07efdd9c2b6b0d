//! Linear-head student over precomputed base features.
//!
//! Each modality is projected into a shared retrieval space and normalized.
//! A second linear map per modality (the uni-modal projector) feeds only the
//! uni-modal alignment loss. All maps are bias-free.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{LossGradients, StudentLogits};
use crate::math::{
    cosine_similarity, l2_normalize_rows_with_norms, EmbeddingMatrix, MathError, SimilarityKind,
};
use crate::matrix::RealMatrix;

pub const MIN_INV_TEMP: f64 = 1.0;
pub const MAX_INV_TEMP: f64 = 100.0;
/// Initial temperature 0.07.
pub const INIT_TEMPERATURE: f64 = 0.07;

pub fn min_log_inv_temp() -> f64 {
    MIN_INV_TEMP.ln()
}

pub fn max_log_inv_temp() -> f64 {
    MAX_INV_TEMP.ln()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid dimension {name} = {value}")]
    InvalidDimension { name: &'static str, value: usize },
    #[error("{what}: expected {expected} columns, found {found}")]
    FeatureWidth {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("image and text batches differ in size: {0} vs {1}")]
    BatchMismatch(usize, usize),
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_bi: usize,
    pub d_bt: usize,
    pub d_e: usize,
    pub d_u: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("d_bi", self.d_bi),
            ("d_bt", self.d_bt),
            ("d_e", self.d_e),
            ("d_u", self.d_u),
        ] {
            if value == 0 {
                return Err(ModelError::InvalidDimension { name, value });
            }
        }
        Ok(())
    }
}

/// Trainable student parameters. Also used as the container for their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentParams {
    pub w_img: RealMatrix,
    pub w_txt: RealMatrix,
    pub u_img: RealMatrix,
    pub u_txt: RealMatrix,
    pub log_inv_temp: f64,
    /// Present only when the uni-modal softmax has its own temperature.
    pub log_uni_inv_temp: Option<f64>,
}

impl StudentParams {
    /// Uniform `[-1/√fan_in, 1/√fan_in]` weights from a seeded ChaCha stream,
    /// drawn in the order `w_img, w_txt, u_img, u_txt`.
    pub fn init(seed: u64, dims: ModelDims) -> Result<Self, ModelError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            RealMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
        };
        let w_img = draw(dims.d_bi, dims.d_e);
        let w_txt = draw(dims.d_bt, dims.d_e);
        let u_img = draw(dims.d_e, dims.d_u);
        let u_txt = draw(dims.d_e, dims.d_u);
        Ok(Self {
            w_img,
            w_txt,
            u_img,
            u_txt,
            log_inv_temp: (1.0 / INIT_TEMPERATURE).ln(),
            log_uni_inv_temp: None,
        })
    }

    /// Gives the uni-modal softmax its own temperature, initialized like the shared one.
    pub fn with_separate_uni_temp(mut self) -> Self {
        self.log_uni_inv_temp = Some((1.0 / INIT_TEMPERATURE).ln());
        self
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_bi: self.w_img.rows(),
            d_bt: self.w_txt.rows(),
            d_e: self.w_img.cols(),
            d_u: self.u_img.cols(),
        }
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            w_img: RealMatrix::zeros(self.w_img.rows(), self.w_img.cols()),
            w_txt: RealMatrix::zeros(self.w_txt.rows(), self.w_txt.cols()),
            u_img: RealMatrix::zeros(self.u_img.rows(), self.u_img.cols()),
            u_txt: RealMatrix::zeros(self.u_txt.rows(), self.u_txt.cols()),
            log_inv_temp: 0.0,
            log_uni_inv_temp: self.log_uni_inv_temp.map(|_| 0.0),
        }
    }

    pub fn inv_temp(&self) -> f64 {
        clamp_inv_temp(self.log_inv_temp)
    }

    pub fn uni_inv_temp(&self) -> Option<f64> {
        self.log_uni_inv_temp.map(clamp_inv_temp)
    }

    /// Parameter tensors in a fixed order, flagged with whether weight decay applies.
    pub fn tensors(&self) -> Vec<(&[f64], bool)> {
        let mut v = vec![
            (self.w_img.data(), true),
            (self.w_txt.data(), true),
            (self.u_img.data(), true),
            (self.u_txt.data(), true),
            (std::slice::from_ref(&self.log_inv_temp), false),
        ];
        if let Some(t) = &self.log_uni_inv_temp {
            v.push((std::slice::from_ref(t), false));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut v = vec![
            (self.w_img.data_mut(), true),
            (self.w_txt.data_mut(), true),
            (self.u_img.data_mut(), true),
            (self.u_txt.data_mut(), true),
            (std::slice::from_mut(&mut self.log_inv_temp), false),
        ];
        if let Some(t) = &mut self.log_uni_inv_temp {
            v.push((std::slice::from_mut(t), false));
        }
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(t, _)| t.iter().all(|v| v.is_finite()))
    }

    /// Projects the log inverse temperatures into the clamp range.
    pub fn clamp_temperatures(&mut self) {
        let (lo, hi) = (min_log_inv_temp(), max_log_inv_temp());
        self.log_inv_temp = self.log_inv_temp.clamp(lo, hi);
        if let Some(t) = &mut self.log_uni_inv_temp {
            *t = t.clamp(lo, hi);
        }
    }
}

pub fn clamp_inv_temp(log_inv_temp: f64) -> f64 {
    log_inv_temp.exp().clamp(MIN_INV_TEMP, MAX_INV_TEMP)
}

/// Gradient gate for the clamped temperature.
///
/// Outside the clamp range the loss is flat in θ. On the boundary itself the
/// gradient survives only if a descent step would move θ back inside.
pub fn gate_temperature_grad(log_inv_temp: f64, grad: f64) -> f64 {
    let (lo, hi) = (min_log_inv_temp(), max_log_inv_temp());
    let outside = log_inv_temp > hi || log_inv_temp < lo;
    let pushing_out = (log_inv_temp == hi && grad < 0.0) || (log_inv_temp == lo && grad > 0.0);
    if outside || pushing_out {
        0.0
    } else {
        grad
    }
}

/// Student forward results for one batch.
#[derive(Clone, Debug)]
pub struct StudentOutputs {
    pub img_emb: EmbeddingMatrix,
    pub txt_emb: EmbeddingMatrix,
    pub img_usa: EmbeddingMatrix,
    pub txt_usa: EmbeddingMatrix,
    pub inv_temp: f64,
    pub uni_inv_temp: Option<f64>,
    img_norms: Vec<f64>,
    txt_norms: Vec<f64>,
    img_usa_norms: Vec<f64>,
    txt_usa_norms: Vec<f64>,
}

impl StudentOutputs {
    /// Cross-modal logits from the retrieval embeddings, uni-modal logits from
    /// the projector outputs.
    pub fn logits(&self) -> Result<StudentLogits, MathError> {
        Ok(StudentLogits {
            s_i2t: cosine_similarity(&self.img_emb, &self.txt_emb, SimilarityKind::I2T)?,
            s_i2i: cosine_similarity(&self.img_usa, &self.img_usa, SimilarityKind::I2I)?,
            s_t2t: cosine_similarity(&self.txt_usa, &self.txt_usa, SimilarityKind::T2T)?,
            inv_temp: self.inv_temp,
            uni_inv_temp: self.uni_inv_temp,
        })
    }
}

fn check_width(what: &'static str, m: &RealMatrix, expected: usize) -> Result<(), ModelError> {
    if m.cols() != expected {
        return Err(ModelError::FeatureWidth {
            what,
            expected,
            found: m.cols(),
        });
    }
    Ok(())
}

/// Retrieval embeddings for one modality: `normalize(base · w)`.
pub fn embed(base: &RealMatrix, w: &RealMatrix) -> Result<EmbeddingMatrix, ModelError> {
    check_width("base features", base, w.rows())?;
    Ok(l2_normalize_rows_with_norms(&base.matmul(w)?)?.0)
}

/// Which student output to use as the embedding at evaluation time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// The retrieval embedding `normalize(X W)`.
    #[default]
    Main,
    /// The uni-modal projector output `normalize(E U)`.
    Usa,
}

/// Image (`image = true`) or text embeddings for a whole table of base features.
pub fn encode(
    params: &StudentParams,
    base: &RealMatrix,
    image: bool,
    repr: Representation,
) -> Result<EmbeddingMatrix, ModelError> {
    let (w, u) = if image {
        (&params.w_img, &params.u_img)
    } else {
        (&params.w_txt, &params.u_txt)
    };
    let e = embed(base, w)?;
    match repr {
        Representation::Main => Ok(e),
        Representation::Usa => embed(e.matrix(), u),
    }
}

pub fn forward(
    base_img: &RealMatrix,
    base_txt: &RealMatrix,
    params: &StudentParams,
) -> Result<StudentOutputs, ModelError> {
    check_width("image base features", base_img, params.w_img.rows())?;
    check_width("text base features", base_txt, params.w_txt.rows())?;
    if base_img.rows() != base_txt.rows() {
        return Err(ModelError::BatchMismatch(base_img.rows(), base_txt.rows()));
    }
    let (img_emb, img_norms) = l2_normalize_rows_with_norms(&base_img.matmul(&params.w_img)?)?;
    let (txt_emb, txt_norms) = l2_normalize_rows_with_norms(&base_txt.matmul(&params.w_txt)?)?;
    let (img_usa, img_usa_norms) =
        l2_normalize_rows_with_norms(&img_emb.matrix().matmul(&params.u_img)?)?;
    let (txt_usa, txt_usa_norms) =
        l2_normalize_rows_with_norms(&txt_emb.matrix().matmul(&params.u_txt)?)?;
    Ok(StudentOutputs {
        img_emb,
        txt_emb,
        img_usa,
        txt_usa,
        inv_temp: params.inv_temp(),
        uni_inv_temp: params.uni_inv_temp(),
        img_norms,
        txt_norms,
        img_usa_norms,
        txt_usa_norms,
    })
}

/// Pulls a gradient on normalized rows `x̂ = x/‖x‖` back to `x`:
/// `(g − x̂ (x̂·g)) / ‖x‖` per row.
fn normalize_backward(unit: &RealMatrix, norms: &[f64], grad: &RealMatrix) -> RealMatrix {
    let mut out = grad.clone();
    for (i, &norm) in norms.iter().enumerate() {
        let u = unit.row(i);
        let proj: f64 = u.iter().zip(grad.row(i)).map(|(a, b)| a * b).sum();
        for (o, &uv) in out.row_mut(i).iter_mut().zip(u) {
            *o = (*o - uv * proj) / norm;
        }
    }
    out
}

/// `(G + Gᵀ) · E`: gradient of `E Eᵀ` with respect to `E`.
fn self_similarity_backward(g: &RealMatrix, e: &RealMatrix) -> Result<RealMatrix, MathError> {
    let mut sym = g.clone();
    sym.add_scaled(&g.transpose(), 1.0);
    sym.matmul(e)
}

/// Exact parameter gradients given upstream logit gradients.
pub fn backward(
    base_img: &RealMatrix,
    base_txt: &RealMatrix,
    params: &StudentParams,
    out: &StudentOutputs,
    upstream: &LossGradients,
) -> Result<StudentParams, ModelError> {
    let e_img = out.img_emb.matrix();
    let e_txt = out.txt_emb.matrix();

    // Uni-modal branch: s_i2i = F Fᵀ with F = normalize(E U).
    let d_f_img = self_similarity_backward(&upstream.d_s_i2i, out.img_usa.matrix())?;
    let d_f_txt = self_similarity_backward(&upstream.d_s_t2t, out.txt_usa.matrix())?;
    let d_b_img = normalize_backward(out.img_usa.matrix(), &out.img_usa_norms, &d_f_img);
    let d_b_txt = normalize_backward(out.txt_usa.matrix(), &out.txt_usa_norms, &d_f_txt);
    let d_u_img = e_img.transpose_matmul(&d_b_img)?;
    let d_u_txt = e_txt.transpose_matmul(&d_b_txt)?;

    // Retrieval embeddings receive the cross-modal gradient plus the projector's.
    let mut d_e_img = upstream.d_s_i2t.matmul(e_txt)?;
    d_e_img.add_scaled(&d_b_img.matmul_transposed(&params.u_img)?, 1.0);
    let mut d_e_txt = upstream.d_s_i2t.transpose_matmul(e_img)?;
    d_e_txt.add_scaled(&d_b_txt.matmul_transposed(&params.u_txt)?, 1.0);

    let d_a_img = normalize_backward(e_img, &out.img_norms, &d_e_img);
    let d_a_txt = normalize_backward(e_txt, &out.txt_norms, &d_e_txt);
    let d_w_img = base_img.transpose_matmul(&d_a_img)?;
    let d_w_txt = base_txt.transpose_matmul(&d_a_txt)?;

    Ok(StudentParams {
        w_img: d_w_img,
        w_txt: d_w_txt,
        u_img: d_u_img,
        u_txt: d_u_txt,
        log_inv_temp: gate_temperature_grad(params.log_inv_temp, upstream.d_log_inv_temp),
        log_uni_inv_temp: params
            .log_uni_inv_temp
            .map(|t| gate_temperature_grad(t, upstream.d_log_uni_inv_temp)),
    })
}
