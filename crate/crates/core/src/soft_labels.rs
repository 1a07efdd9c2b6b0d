//! Teacher soft-label targets.
//!
//! Each target row is a softmax over the teacher's within-batch cosine
//! similarities, self-similarity included.

use crate::math::{
    cosine_similarity, row_softmax, EmbeddingMatrix, MathError, RowStochasticMatrix, SimilarityKind,
};

/// Default teacher inverse temperature: similarities enter the softmax unscaled.
pub const DEFAULT_TEACHER_INV_TEMP: f64 = 1.0;

/// Teacher features for one batch; row `i` of each belongs to pair `i`.
#[derive(Clone, Debug)]
pub struct TeacherBatch {
    image_features: EmbeddingMatrix,
    text_features: EmbeddingMatrix,
}

impl TeacherBatch {
    pub fn new(
        image_features: EmbeddingMatrix,
        text_features: EmbeddingMatrix,
    ) -> Result<Self, MathError> {
        for e in [&image_features, &text_features] {
            if !e.is_normalized() {
                let r = e.matrix().row(0);
                return Err(MathError::NotNormalized {
                    row: 0,
                    norm: r.iter().map(|v| v * v).sum::<f64>().sqrt(),
                });
            }
        }
        if image_features.rows() != text_features.rows() {
            return Err(MathError::ShapeMismatch {
                expected: (image_features.rows(), image_features.dim()),
                found: (text_features.rows(), text_features.dim()),
            });
        }
        Ok(Self {
            image_features,
            text_features,
        })
    }

    pub fn image_features(&self) -> &EmbeddingMatrix {
        &self.image_features
    }

    pub fn text_features(&self) -> &EmbeddingMatrix {
        &self.text_features
    }

    pub fn len(&self) -> usize {
        self.image_features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Within-batch teacher distributions for both modalities.
#[derive(Clone, Debug)]
pub struct BatchTargets {
    pub p_i2i: RowStochasticMatrix,
    pub p_t2t: RowStochasticMatrix,
}

/// Soft-label distribution over the batch from teacher feature similarities.
pub fn teacher_distribution(
    features: &EmbeddingMatrix,
    teacher_inv_temp: f64,
    kind: SimilarityKind,
) -> Result<RowStochasticMatrix, MathError> {
    if features.rows() < 2 {
        return Err(MathError::InvalidDistribution(format!(
            "teacher targets need a batch of at least 2, got {}",
            features.rows()
        )));
    }
    let r = cosine_similarity(features, features, kind)?;
    row_softmax(&r, teacher_inv_temp)
}

pub fn build_batch_targets(
    teacher: &TeacherBatch,
    teacher_inv_temp: f64,
) -> Result<BatchTargets, MathError> {
    Ok(BatchTargets {
        p_i2i: teacher_distribution(
            &teacher.image_features,
            teacher_inv_temp,
            SimilarityKind::I2I,
        )?,
        p_t2t: teacher_distribution(
            &teacher.text_features,
            teacher_inv_temp,
            SimilarityKind::T2T,
        )?,
    })
}
