//! Synthetic clustered image-text data with planted false negatives.
//!
//! Every pair belongs to a cluster. The pairs file links each image only to
//! its own caption, while the relevance file marks every same-cluster item
//! relevant, so in-batch negatives from the same cluster are false negatives.
//!
//! Student features are `normalize(centroid + intra_noise · n)` where `n` is
//! unit-variance Gaussian. `n` mixes a latent shared by the image and text of
//! a pair with modality-private noise; `cross_modal_gap` sets the private
//! share. Teacher features carry the cluster structure only.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{
    write_features, write_pairs, write_relevance, DataError, FeatureTable, Pair, RelevanceMap,
};

pub const IMG_BASE_FILE: &str = "img_base.cusf";
pub const TXT_BASE_FILE: &str = "txt_base.cusf";
pub const IMG_TEACHER_FILE: &str = "img_teacher.cusf";
pub const TXT_TEACHER_FILE: &str = "txt_teacher.cusf";
pub const PAIRS_FILE: &str = "pairs.tsv";
pub const RELEVANCE_FILE: &str = "relevance.tsv";
pub const HELDOUT_DIR: &str = "heldout";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_clusters: usize,
    pub pairs_per_cluster: usize,
    pub d_student_img: usize,
    pub d_student_txt: usize,
    pub d_teacher_img: usize,
    pub d_teacher_txt: usize,
    pub intra_noise: f64,
    pub cross_modal_gap: f64,
    /// Width of the latent shared by the two halves of a pair.
    pub shared_dim: usize,
    /// Extra pairs per cluster generated as a disjoint evaluation split.
    pub holdout_per_cluster: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_clusters: 4,
            pairs_per_cluster: 200,
            d_student_img: 32,
            d_student_txt: 32,
            d_teacher_img: 32,
            d_teacher_txt: 32,
            intra_noise: 0.15,
            cross_modal_gap: 0.25,
            shared_dim: 8,
            holdout_per_cluster: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_clusters < 2 {
            return bad("n_clusters must be >= 2");
        }
        if self.pairs_per_cluster < 2 {
            return bad("pairs_per_cluster must be >= 2");
        }
        if self.holdout_per_cluster == 1 {
            return bad("holdout_per_cluster must be 0 or >= 2");
        }
        let dims = [
            self.d_student_img,
            self.d_student_txt,
            self.d_teacher_img,
            self.d_teacher_txt,
            self.shared_dim,
        ];
        if dims.contains(&0) {
            return bad("all dimensions must be >= 1");
        }
        if !(self.intra_noise >= 0.0 && self.intra_noise.is_finite()) {
            return bad("intra_noise must be finite and >= 0");
        }
        if !(self.cross_modal_gap >= 0.0 && self.cross_modal_gap.is_finite()) {
            return bad("cross_modal_gap must be finite and >= 0");
        }
        Ok(())
    }
}

/// One split: four feature tables, the diagonal pairs, and full relevance.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub img_base: FeatureTable,
    pub txt_base: FeatureTable,
    pub img_teacher: FeatureTable,
    pub txt_teacher: FeatureTable,
    pub pairs: Vec<Pair>,
    /// Every image and text id as a query, listing all same-cluster items of
    /// both modalities except itself.
    pub relevance: RelevanceMap,
    /// Cluster of each pair, aligned with `pairs`.
    pub clusters: Vec<usize>,
}

impl SynthDataset {
    pub fn write_dir(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        write_features(dir.join(IMG_BASE_FILE), &self.img_base)?;
        write_features(dir.join(TXT_BASE_FILE), &self.txt_base)?;
        write_features(dir.join(IMG_TEACHER_FILE), &self.img_teacher)?;
        write_features(dir.join(TXT_TEACHER_FILE), &self.txt_teacher)?;
        write_pairs(dir.join(PAIRS_FILE), &self.pairs)?;
        write_relevance(dir.join(RELEVANCE_FILE), &self.relevance)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub train: SynthDataset,
    pub heldout: Option<SynthDataset>,
}

impl SynthOutput {
    /// Writes the training split to `dir` and the held-out split, if any, to `dir/heldout`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SynthError> {
        self.train.write_dir(dir)?;
        if let Some(h) = &self.heldout {
            h.write_dir(&dir.join(HELDOUT_DIR))?;
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, n);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn normalize_into(v: &[f64], out: &mut Vec<f32>) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    out.extend(v.iter().map(|x| (x / norm) as f32));
}

struct Centroids {
    img: Vec<Vec<f64>>,
    txt: Vec<Vec<f64>>,
    t_img: Vec<Vec<f64>>,
    t_txt: Vec<Vec<f64>>,
}

struct Mixing {
    img: Vec<Vec<f64>>,
    txt: Vec<Vec<f64>>,
}

fn split(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    centroids: &Centroids,
    mixing: &Mixing,
    per_cluster: usize,
    prefix: &str,
) -> Result<SynthDataset, SynthError> {
    let n = cfg.n_clusters * per_cluster;
    let mut img = Vec::with_capacity(n * cfg.d_student_img);
    let mut txt = Vec::with_capacity(n * cfg.d_student_txt);
    let mut t_img = Vec::with_capacity(n * cfg.d_teacher_img);
    let mut t_txt = Vec::with_capacity(n * cfg.d_teacher_txt);
    let mut clusters = Vec::with_capacity(n);
    // Shared and private parts are scaled so the combined noise has unit variance per coordinate.
    let norm = (1.0 + cfg.cross_modal_gap * cfg.cross_modal_gap).sqrt();
    let shared_scale = 1.0 / ((cfg.shared_dim as f64).sqrt() * norm);
    let private_scale = cfg.cross_modal_gap / norm;
    let student = |rng: &mut ChaCha8Rng, centroid: &[f64], mix: &[Vec<f64>], z: &[f64]| {
        let eps = gaussian(rng, centroid.len());
        centroid
            .iter()
            .zip(mix)
            .zip(&eps)
            .map(|((c, row), e)| {
                let shared: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
                c + cfg.intra_noise * (shared_scale * shared + private_scale * e)
            })
            .collect::<Vec<f64>>()
    };
    let teacher = |rng: &mut ChaCha8Rng, centroid: &[f64]| {
        let eps = gaussian(rng, centroid.len());
        centroid
            .iter()
            .zip(&eps)
            .map(|(c, e)| c + cfg.intra_noise * e)
            .collect::<Vec<f64>>()
    };
    for c in 0..cfg.n_clusters {
        for _ in 0..per_cluster {
            let z = gaussian(rng, cfg.shared_dim);
            normalize_into(&student(rng, &centroids.img[c], &mixing.img, &z), &mut img);
            normalize_into(&student(rng, &centroids.txt[c], &mixing.txt, &z), &mut txt);
            normalize_into(&teacher(rng, &centroids.t_img[c]), &mut t_img);
            normalize_into(&teacher(rng, &centroids.t_txt[c]), &mut t_txt);
            clusters.push(c);
        }
    }
    let img_ids: Vec<String> = (0..n).map(|i| format!("{prefix}img-{i:05}")).collect();
    let txt_ids: Vec<String> = (0..n).map(|i| format!("{prefix}txt-{i:05}")).collect();
    let pairs = img_ids
        .iter()
        .zip(&txt_ids)
        .map(|(a, b)| Pair::new(a.clone(), b.clone()))
        .collect();

    let mut entries = Vec::with_capacity(2 * n);
    for (own, other) in [(&img_ids, &txt_ids), (&txt_ids, &img_ids)] {
        for i in 0..n {
            let c = clusters[i];
            let members = (0..n).filter(|&j| clusters[j] == c);
            let mut rel: Vec<String> = members.clone().map(|j| other[j].clone()).collect();
            rel.extend(members.filter(|&j| j != i).map(|j| own[j].clone()));
            entries.push((own[i].clone(), rel));
        }
    }
    Ok(SynthDataset {
        img_base: FeatureTable::new(img_ids.clone(), cfg.d_student_img, img)?,
        txt_base: FeatureTable::new(txt_ids.clone(), cfg.d_student_txt, txt)?,
        img_teacher: FeatureTable::new(img_ids, cfg.d_teacher_img, t_img)?,
        txt_teacher: FeatureTable::new(txt_ids, cfg.d_teacher_txt, t_txt)?,
        pairs,
        relevance: RelevanceMap::new(entries)?,
        clusters,
    })
}

/// Generates the training split and, when `holdout_per_cluster > 0`, a held-out
/// split from the same centroids with fresh instances.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |d: usize| {
        (0..cfg.n_clusters)
            .map(|_| unit_vector(&mut rng, d))
            .collect()
    };
    let centroids = Centroids {
        img: draw(cfg.d_student_img),
        txt: draw(cfg.d_student_txt),
        t_img: draw(cfg.d_teacher_img),
        t_txt: draw(cfg.d_teacher_txt),
    };
    let mixing = Mixing {
        img: (0..cfg.d_student_img)
            .map(|_| gaussian(&mut rng, cfg.shared_dim))
            .collect(),
        txt: (0..cfg.d_student_txt)
            .map(|_| gaussian(&mut rng, cfg.shared_dim))
            .collect(),
    };
    let train = split(
        cfg,
        &mut rng,
        &centroids,
        &mixing,
        cfg.pairs_per_cluster,
        "",
    )?;
    let heldout = if cfg.holdout_per_cluster > 0 {
        Some(split(
            cfg,
            &mut rng,
            &centroids,
            &mixing,
            cfg.holdout_per_cluster,
            "ho-",
        )?)
    } else {
        None
    };
    Ok(SynthOutput { train, heldout })
}
