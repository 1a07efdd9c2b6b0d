//! Retrieval metrics under multi-positive relevance, plus rank correlation.
//!
//! Rankings sort gallery items by descending similarity with ties going to
//! the lower gallery index. Per-query terms may be computed in parallel; they
//! are always summed in query order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{exact_sum, EmbeddingMatrix, MathError};
use crate::matrix::{dot, RealMatrix};
use crate::parallel::{map_indices, Execution};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("k must be >= 1")]
    InvalidK,
    #[error("value {value} at position {index} outside [0, 100]")]
    OutOfRange { index: usize, value: f64 },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid relevance: {0}")]
    InvalidRelevance(String),
    #[error("{0} rankings for {1} relevance entries")]
    CountMismatch(usize, usize),
    #[error(transparent)]
    Math(#[from] MathError),
}

/// Relevant gallery rows for each query row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalRelevance {
    queries: Vec<usize>,
    relevant: Vec<Vec<usize>>,
    gallery_size: usize,
}

impl RetrievalRelevance {
    /// `queries[i]` is the query's row in its own table; `relevant[i]` lists
    /// gallery rows. Sets are sorted and must be non-empty and duplicate-free.
    pub fn new(
        queries: Vec<usize>,
        mut relevant: Vec<Vec<usize>>,
        gallery_size: usize,
    ) -> Result<Self, MetricError> {
        if gallery_size == 0 {
            return Err(MetricError::EmptyGallery);
        }
        if queries.len() != relevant.len() {
            return Err(MetricError::CountMismatch(queries.len(), relevant.len()));
        }
        for (i, set) in relevant.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(MetricError::InvalidRelevance(format!(
                    "query {i} has no relevant item"
                )));
            }
            set.sort_unstable();
            if set.windows(2).any(|w| w[0] == w[1]) {
                return Err(MetricError::InvalidRelevance(format!(
                    "query {i} repeats an item"
                )));
            }
            if let Some(&g) = set.last().filter(|&&g| g >= gallery_size) {
                return Err(MetricError::InvalidRelevance(format!(
                    "query {i} references gallery row {g} of {gallery_size}"
                )));
            }
        }
        Ok(Self {
            queries,
            relevant,
            gallery_size,
        })
    }

    /// Query `i` is relevant only to gallery row `i`.
    pub fn identity(n: usize) -> Result<Self, MetricError> {
        Self::new((0..n).collect(), (0..n).map(|i| vec![i]).collect(), n)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn query_rows(&self) -> &[usize] {
        &self.queries
    }

    pub fn relevant(&self, i: usize) -> &[usize] {
        &self.relevant[i]
    }

    pub fn gallery_size(&self) -> usize {
        self.gallery_size
    }

    fn is_relevant(&self, i: usize, g: usize) -> bool {
        self.relevant[i].binary_search(&g).is_ok()
    }
}

/// Gallery rows per query, best first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedList {
    orders: Vec<Vec<usize>>,
}

impl RankedList {
    pub fn from_orders(orders: Vec<Vec<usize>>) -> Self {
        Self { orders }
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn order(&self, i: usize) -> &[usize] {
        &self.orders[i]
    }
}

fn rank_row(scores: &[f64], exclude: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&g| Some(g) != exclude).collect();
    // `+ 0.0` folds -0.0 into +0.0 so that total_cmp treats them as a tie.
    idx.sort_by(|&a, &b| (scores[b] + 0.0).total_cmp(&(scores[a] + 0.0)));
    idx
}

/// Ranks every row of `scores` (queries × gallery).
pub fn rank(scores: &RealMatrix, exec: Execution) -> RankedList {
    RankedList {
        orders: map_indices(exec, scores.rows(), |i| rank_row(scores.row(i), None)),
    }
}

/// Ranks each query's scores with gallery row `exclude[i]` removed.
pub fn rank_excluding_self(scores: &RealMatrix, exclude: &[usize], exec: Execution) -> RankedList {
    assert_eq!(scores.rows(), exclude.len(), "one excluded row per query");
    RankedList {
        orders: map_indices(exec, scores.rows(), |i| {
            rank_row(scores.row(i), Some(exclude[i]))
        }),
    }
}

fn check(ranked: &RankedList, rel: &RetrievalRelevance) -> Result<(), MetricError> {
    if rel.is_empty() {
        return Err(MetricError::NoQueries);
    }
    if ranked.len() != rel.len() {
        return Err(MetricError::CountMismatch(ranked.len(), rel.len()));
    }
    if ranked.orders.iter().any(Vec::is_empty) {
        return Err(MetricError::EmptyGallery);
    }
    Ok(())
}

fn hits_at_k(
    ranked: &RankedList,
    rel: &RetrievalRelevance,
    k: usize,
) -> Result<usize, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    check(ranked, rel)?;
    Ok((0..rel.len())
        .filter(|&i| {
            ranked.orders[i]
                .iter()
                .take(k)
                .any(|&g| rel.is_relevant(i, g))
        })
        .count())
}

/// Fraction of queries with at least one relevant item in the top `k`.
pub fn recall_at_k(
    ranked: &RankedList,
    rel: &RetrievalRelevance,
    k: usize,
) -> Result<f64, MetricError> {
    Ok(hits_at_k(ranked, rel, k)? as f64 / rel.len() as f64)
}

fn per_query_r<F>(
    ranked: &RankedList,
    rel: &RetrievalRelevance,
    term: F,
) -> Result<f64, MetricError>
where
    F: Fn(&[usize], usize) -> f64,
{
    check(ranked, rel)?;
    let mut total = 0.0;
    for i in 0..rel.len() {
        let order = &ranked.orders[i];
        let r = rel.relevant[i].len();
        if r > order.len() {
            return Err(MetricError::InvalidRelevance(format!(
                "query {i} has {r} relevant items but only {} ranked",
                order.len()
            )));
        }
        total += term(order, i);
    }
    Ok(total / rel.len() as f64)
}

/// Mean over queries of the relevant fraction of the top `R`, where `R` is the
/// query's number of relevant items.
pub fn r_precision(ranked: &RankedList, rel: &RetrievalRelevance) -> Result<f64, MetricError> {
    per_query_r(ranked, rel, |order, i| {
        let r = rel.relevant[i].len();
        let found = order[..r]
            .iter()
            .filter(|&&g| rel.is_relevant(i, g))
            .count();
        found as f64 / r as f64
    })
}

/// Mean over queries of `(1/R) Σ_{k ≤ R} rel(k) · precision@k`.
pub fn map_at_r(ranked: &RankedList, rel: &RetrievalRelevance) -> Result<f64, MetricError> {
    per_query_r(ranked, rel, |order, i| {
        let r = rel.relevant[i].len();
        let mut found = 0usize;
        let mut acc = 0.0;
        for (k, &g) in order[..r].iter().enumerate() {
            if rel.is_relevant(i, g) {
                found += 1;
                acc += found as f64 / (k + 1) as f64;
            }
        }
        acc / r as f64
    })
}

/// Sum of six percent-scale recalls, correctly rounded.
pub fn rsum(recalls: [f64; 6]) -> Result<f64, MetricError> {
    for (index, &value) in recalls.iter().enumerate() {
        if !(0.0..=100.0).contains(&value) {
            return Err(MetricError::OutOfRange { index, value });
        }
    }
    Ok(exact_sum(&recalls))
}

/// Fractional ranks, ties sharing their average rank (1-based).
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| (x[a] + 0.0).total_cmp(&(x[b] + 0.0)));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &j in &idx[start..end] {
            ranks[j] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64, MetricError> {
    if pred.len() != gold.len() {
        return Err(MetricError::DegenerateInput(format!(
            "lengths differ: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    if pred.len() < 2 {
        return Err(MetricError::DegenerateInput(
            "need at least two items".into(),
        ));
    }
    if pred.iter().chain(gold).any(|v| !v.is_finite()) {
        return Err(MetricError::DegenerateInput("non-finite value".into()));
    }
    let rx = average_ranks(pred);
    let ry = average_ranks(gold);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::DegenerateInput("constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Metrics for one retrieval direction. `*_pct` fields are the same values ×100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub queries: usize,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub r_precision: f64,
    pub map_at_r: f64,
    pub recall_at_1_pct: f64,
    pub recall_at_5_pct: f64,
    pub recall_at_10_pct: f64,
    pub r_precision_pct: f64,
    pub map_at_r_pct: f64,
}

fn direction_metrics(
    ranked: &RankedList,
    rel: &RetrievalRelevance,
) -> Result<DirectionMetrics, MetricError> {
    let n = rel.len();
    let h1 = hits_at_k(ranked, rel, 1)?;
    let h5 = hits_at_k(ranked, rel, 5)?;
    let h10 = hits_at_k(ranked, rel, 10)?;
    let frac = |h: usize| h as f64 / n as f64;
    let pct = |h: usize| (100 * h) as f64 / n as f64;
    let rp = r_precision(ranked, rel)?;
    let map = map_at_r(ranked, rel)?;
    Ok(DirectionMetrics {
        queries: n,
        recall_at_1: frac(h1),
        recall_at_5: frac(h5),
        recall_at_10: frac(h10),
        r_precision: rp,
        map_at_r: map,
        recall_at_1_pct: pct(h1),
        recall_at_5_pct: pct(h5),
        recall_at_10_pct: pct(h10),
        r_precision_pct: rp * 100.0,
        map_at_r_pct: map * 100.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossModalReport {
    pub i2t: DirectionMetrics,
    pub t2i: DirectionMetrics,
    /// Sum of the six percent recalls.
    pub rsum: f64,
    /// Mean of the two directions.
    pub r_precision: f64,
    pub map_at_r: f64,
    pub r_precision_pct: f64,
    pub map_at_r_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniModalReport {
    pub queries: usize,
    pub recall_at_1: f64,
    pub recall_at_1_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StsReport {
    pub pairs: usize,
    pub spearman: f64,
}

fn require_normalized(e: &EmbeddingMatrix) -> Result<(), MetricError> {
    if e.is_normalized() {
        return Ok(());
    }
    let r = e.matrix().row(0);
    Err(MathError::NotNormalized {
        row: 0,
        norm: dot(r, r).sqrt(),
    }
    .into())
}

/// Cosine scores between the relevance's query rows and every gallery row.
pub fn query_scores(
    queries: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    rel: &RetrievalRelevance,
    exec: Execution,
) -> Result<RealMatrix, MetricError> {
    require_normalized(queries)?;
    require_normalized(gallery)?;
    if rel.gallery_size() != gallery.rows() {
        return Err(MetricError::InvalidRelevance(format!(
            "relevance expects {} gallery rows, found {}",
            rel.gallery_size(),
            gallery.rows()
        )));
    }
    if let Some(&q) = rel.query_rows().iter().find(|&&q| q >= queries.rows()) {
        return Err(MetricError::InvalidRelevance(format!(
            "query row {q} of {}",
            queries.rows()
        )));
    }
    let q = queries.matrix().select_rows(rel.query_rows());
    Ok(q.matmul_transposed_with(gallery.matrix(), exec)?)
}

pub fn evaluate_cross_modal(
    img_emb: &EmbeddingMatrix,
    txt_emb: &EmbeddingMatrix,
    rel_i2t: &RetrievalRelevance,
    rel_t2i: &RetrievalRelevance,
) -> Result<CrossModalReport, MetricError> {
    evaluate_cross_modal_with(img_emb, txt_emb, rel_i2t, rel_t2i, Execution::default())
}

pub fn evaluate_cross_modal_with(
    img_emb: &EmbeddingMatrix,
    txt_emb: &EmbeddingMatrix,
    rel_i2t: &RetrievalRelevance,
    rel_t2i: &RetrievalRelevance,
    exec: Execution,
) -> Result<CrossModalReport, MetricError> {
    let ranked_i2t = rank(&query_scores(img_emb, txt_emb, rel_i2t, exec)?, exec);
    let ranked_t2i = rank(&query_scores(txt_emb, img_emb, rel_t2i, exec)?, exec);
    let i2t = direction_metrics(&ranked_i2t, rel_i2t)?;
    let t2i = direction_metrics(&ranked_t2i, rel_t2i)?;
    let rsum = rsum([
        i2t.recall_at_1_pct,
        i2t.recall_at_5_pct,
        i2t.recall_at_10_pct,
        t2i.recall_at_1_pct,
        t2i.recall_at_5_pct,
        t2i.recall_at_10_pct,
    ])?;
    let r_precision = (i2t.r_precision + t2i.r_precision) / 2.0;
    let map_at_r = (i2t.map_at_r + t2i.map_at_r) / 2.0;
    Ok(CrossModalReport {
        rsum,
        r_precision,
        map_at_r,
        r_precision_pct: r_precision * 100.0,
        map_at_r_pct: map_at_r * 100.0,
        i2t,
        t2i,
    })
}

/// R@1 within one modality. Each query's own row is removed from its gallery,
/// so the relevance must index the same table for queries and gallery.
pub fn evaluate_uni_modal(
    emb: &EmbeddingMatrix,
    rel: &RetrievalRelevance,
) -> Result<UniModalReport, MetricError> {
    evaluate_uni_modal_with(emb, rel, Execution::default())
}

pub fn evaluate_uni_modal_with(
    emb: &EmbeddingMatrix,
    rel: &RetrievalRelevance,
    exec: Execution,
) -> Result<UniModalReport, MetricError> {
    for (i, &q) in rel.query_rows().iter().enumerate() {
        if rel.is_relevant(i, q) {
            return Err(MetricError::InvalidRelevance(format!(
                "query row {q} lists itself as relevant"
            )));
        }
    }
    let scores = query_scores(emb, emb, rel, exec)?;
    let ranked = rank_excluding_self(&scores, rel.query_rows(), exec);
    let hits = hits_at_k(&ranked, rel, 1)?;
    Ok(UniModalReport {
        queries: rel.len(),
        recall_at_1: hits as f64 / rel.len() as f64,
        recall_at_1_pct: (100 * hits) as f64 / rel.len() as f64,
    })
}

/// Spearman correlation between cosine scores of row pairs and gold scores.
pub fn evaluate_sts(
    emb: &EmbeddingMatrix,
    pairs: &[(usize, usize)],
    gold: &[f64],
) -> Result<StsReport, MetricError> {
    require_normalized(emb)?;
    if let Some(&(a, b)) = pairs
        .iter()
        .find(|&&(a, b)| a >= emb.rows() || b >= emb.rows())
    {
        return Err(MetricError::InvalidRelevance(format!(
            "pair ({a}, {b}) outside {} rows",
            emb.rows()
        )));
    }
    let m = emb.matrix();
    let pred: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| dot(m.row(a), m.row(b)))
        .collect();
    Ok(StsReport {
        pairs: pairs.len(),
        spearman: spearman(&pred, gold)?,
    })
}
