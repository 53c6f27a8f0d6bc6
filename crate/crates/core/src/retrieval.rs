//! Exact batched retrieval under the nearest-neighbour and CSLS criteria.
//!
//! Everything here is built on one kernel, [`top_k_dots`], which scans the
//! candidate matrix in blocks and keeps the `k` best scores per query. The
//! ordering is total (score descending, then lower index), so the result
//! does not depend on the block size or on how queries are split across
//! worker threads.
//!
//! CSLS between a mapped query `q` and a target `y` is
//!
//! ```text
//! csls(q, y) = −2 cos(q, y) + r_Y(q) + r_X(y)
//! ```
//!
//! where `r_Y(q)` is the mean cosine of `q` to its `k` nearest targets and
//! `r_X(y)` the mean cosine of `y` to its `k` nearest mapped sources. Lower is
//! more similar; retrieval maximises `2 cos(q, y) − r_X(y)` since `r_Y(q)` is
//! constant per query.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::MappingMatrix;
use crate::embedding::{normalize_rows, EmbeddingMatrix};
use crate::error::{Error, Result};

/// Floating-point width used by the scoring kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorePrecision {
    #[default]
    F64,
    F32,
}

impl FromStr for ScorePrecision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" | "64" => Ok(ScorePrecision::F64),
            "f32" | "32" => Ok(ScorePrecision::F32),
            other => Err(Error::InvalidArgument(format!("unknown precision {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalOptions {
    /// Number of candidates scored per pass over a query.
    pub block_size: usize,
    pub precision: ScorePrecision,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        RetrievalOptions {
            block_size: 4096,
            precision: ScorePrecision::F64,
        }
    }
}

/// Retrieval criterion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Nn,
    Csls,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Nn => "nn",
            Criterion::Csls => "csls",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Criterion::Nn),
            "csls" => Ok(Criterion::Csls),
            other => Err(Error::InvalidArgument(format!("unknown criterion {other:?}"))),
        }
    }
}

/// One scored candidate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub score: f64,
}

fn rank(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.score.total_cmp(&a.score).then(a.index.cmp(&b.index))
}

/// Mean similarity of each point to its `k` nearest neighbours in a pool.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborCache {
    pub r_values: Vec<f64>,
    pub k: usize,
    pub pool_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub target: usize,
    /// Cosine for NN; `2 cos − r_Y − r_X` (the negated CSLS loss) for CSLS.
    pub score: f64,
}

/// Best target for each query row.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationResult {
    pub criterion: Criterion,
    pub k: Option<usize>,
    /// Source index of each query; defaults to the query row number.
    pub queries: Vec<usize>,
    pub predictions: Vec<Prediction>,
}

impl TranslationResult {
    /// Relabels queries with their source-vocabulary indices.
    pub fn with_queries(mut self, queries: Vec<usize>) -> Result<Self> {
        if queries.len() != self.predictions.len() {
            return Err(Error::Shape(format!(
                "{} query ids for {} predictions",
                queries.len(),
                self.predictions.len()
            )));
        }
        self.queries = queries;
        Ok(self)
    }

    pub fn targets(&self) -> Vec<usize> {
        self.predictions.iter().map(|p| p.target).collect()
    }
}

trait Scalar: Copy + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn dot(a: &[Self], b: &[Self]) -> f64;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            // Fixed summation order: four interleaved accumulators, then a
            // sequential tail.
            #[inline]
            fn dot(a: &[Self], b: &[Self]) -> f64 {
                let n = a.len().min(b.len());
                let chunks = n / 4;
                let mut acc = [0 as $t; 4];
                for c in 0..chunks {
                    let i = c * 4;
                    acc[0] += a[i] * b[i];
                    acc[1] += a[i + 1] * b[i + 1];
                    acc[2] += a[i + 2] * b[i + 2];
                    acc[3] += a[i + 3] * b[i + 3];
                }
                let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
                for i in chunks * 4..n {
                    s += a[i] * b[i];
                }
                s as f64
            }
        }
    };
}

impl_scalar!(f64);
impl_scalar!(f32);

/// Dot product with the same summation order the retrieval kernel uses.
pub fn dot_f64(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(a), Some(b)) => <f64 as Scalar>::dot(a, b),
        _ => <f64 as Scalar>::dot(&a.to_vec(), &b.to_vec()),
    }
}

/// Candidate-side adjustment: `score = scale · dot − bias[j]`.
#[derive(Clone, Copy)]
pub(crate) struct Scoring<'a> {
    pub scale: f64,
    pub bias: Option<&'a [f64]>,
}

impl Scoring<'_> {
    pub(crate) const DOT: Scoring<'static> = Scoring {
        scale: 1.0,
        bias: None,
    };
}

fn rows_of<T: Scalar>(m: ArrayView2<'_, f64>) -> Vec<T> {
    m.iter().map(|&v| T::from_f64(v)).collect()
}

fn scan<T: Scalar>(
    q: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    k: usize,
    excluded: &[bool],
    scoring: Scoring<'_>,
    block: usize,
) -> Vec<Vec<Neighbor>> {
    let d = q.ncols();
    let qd: Vec<T> = rows_of(q);
    let cd: Vec<T> = rows_of(c);
    let p = c.nrows();
    let block = block.max(1);

    (0..q.nrows())
        .into_par_iter()
        .map(|i| {
            let qi = &qd[i * d..(i + 1) * d];
            let mut best: Vec<Neighbor> = Vec::with_capacity(k + block.min(p));
            let mut start = 0;
            while start < p {
                let end = (start + block).min(p);
                for j in start..end {
                    if excluded[j] {
                        continue;
                    }
                    let dot = T::dot(qi, &cd[j * d..(j + 1) * d]);
                    let mut score = scoring.scale * dot;
                    if let Some(bias) = scoring.bias {
                        score -= bias[j];
                    }
                    best.push(Neighbor { index: j, score });
                }
                if best.len() > k {
                    best.select_nth_unstable_by(k - 1, rank);
                    best.truncate(k);
                }
                start = end;
            }
            best.sort_unstable_by(rank);
            best
        })
        .collect()
}

fn exclusion_mask(p: usize, exclude: &BTreeSet<usize>) -> Vec<bool> {
    let mut mask = vec![false; p];
    for &j in exclude.range(..p) {
        mask[j] = true;
    }
    mask
}

pub(crate) fn top_k_scored(
    q: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    k: usize,
    exclude: &BTreeSet<usize>,
    scoring: Scoring<'_>,
    opts: &RetrievalOptions,
) -> Result<Vec<Vec<Neighbor>>> {
    if q.ncols() != c.ncols() {
        return Err(Error::Shape(format!(
            "queries have dimension {}, candidates {}",
            q.ncols(),
            c.ncols()
        )));
    }
    let mask = exclusion_mask(c.nrows(), exclude);
    let available = mask.iter().filter(|&&e| !e).count();
    if k == 0 || k > available {
        return Err(Error::KOutOfRange { k, available });
    }
    let q = q.as_standard_layout();
    let c = c.as_standard_layout();
    Ok(match opts.precision {
        ScorePrecision::F64 => scan::<f64>(q.view(), c.view(), k, &mask, scoring, opts.block_size),
        ScorePrecision::F32 => scan::<f32>(q.view(), c.view(), k, &mask, scoring, opts.block_size),
    })
}

/// Exact top-`k` candidates by dot product for every query row, sorted by
/// score descending with ties going to the lower candidate index.
pub fn top_k_dots(
    q: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    k: usize,
    exclude: &BTreeSet<usize>,
    opts: &RetrievalOptions,
) -> Result<Vec<Vec<Neighbor>>> {
    top_k_scored(q, c, k, exclude, Scoring::DOT, opts)
}

pub(crate) fn mean_knn_excluding(
    points: ArrayView2<'_, f64>,
    pool: ArrayView2<'_, f64>,
    k: usize,
    exclude: &BTreeSet<usize>,
    opts: &RetrievalOptions,
) -> Result<NeighborCache> {
    let top = top_k_dots(points, pool, k, exclude, opts)?;
    let r_values = top.iter().map(|nb| mean_score(nb)).collect();
    Ok(NeighborCache {
        r_values,
        k,
        pool_size: pool.nrows() - exclude.range(..pool.nrows()).count(),
    })
}

fn mean_score(nb: &[Neighbor]) -> f64 {
    nb.iter().map(|n| n.score).sum::<f64>() / nb.len() as f64
}

/// Mean cosine of each point to its `k` most similar pool rows. Rows are
/// expected to be unit-norm, so dot products are cosines.
pub fn mean_knn_similarity(
    points: ArrayView2<'_, f64>,
    pool: ArrayView2<'_, f64>,
    k: usize,
    opts: &RetrievalOptions,
) -> Result<NeighborCache> {
    mean_knn_excluding(points, pool, k, &BTreeSet::new(), opts)
}

/// Maps query rows with `w` and renormalizes them to unit length.
pub fn map_queries(w: &MappingMatrix, x_q: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x_q.ncols() != w.dim() {
        return Err(Error::Shape(format!(
            "queries have dimension {}, map is {}x{}",
            x_q.ncols(),
            w.dim(),
            w.dim()
        )));
    }
    Ok(normalize_rows(w.apply(x_q)).0)
}

fn translation(
    criterion: Criterion,
    k: Option<usize>,
    best: Vec<Vec<Neighbor>>,
    query_offset: Option<&[f64]>,
) -> TranslationResult {
    let predictions = best
        .into_iter()
        .enumerate()
        .map(|(i, nb)| {
            let top = nb[0];
            let score = match query_offset {
                Some(r) => top.score - r[i],
                None => top.score,
            };
            Prediction {
                target: top.index,
                score,
            }
        })
        .collect::<Vec<_>>();
    TranslationResult {
        criterion,
        k,
        queries: (0..predictions.len()).collect(),
        predictions,
    }
}

/// Nearest-neighbour translation: `argmax_j ⟨W xᵢ, y_j⟩` over non-zero target
/// rows, with mapped queries renormalized.
pub fn nn_translate(
    w: &MappingMatrix,
    x_q: ArrayView2<'_, f64>,
    y: &EmbeddingMatrix,
    opts: &RetrievalOptions,
) -> Result<TranslationResult> {
    let mapped = map_queries(w, x_q)?;
    nn_translate_mapped(mapped.view(), y, opts)
}

pub(crate) fn nn_translate_mapped(
    mapped: ArrayView2<'_, f64>,
    y: &EmbeddingMatrix,
    opts: &RetrievalOptions,
) -> Result<TranslationResult> {
    if y.len() == y.zero_rows().len() {
        return Err(Error::EmptyCandidates);
    }
    let best = top_k_dots(mapped, y.vectors(), 1, y.zero_rows(), opts)?;
    Ok(translation(Criterion::Nn, None, best, None))
}

/// CSLS translation of `x_q` into `y`. `r_Y` is computed against all non-zero
/// rows of `y`; `r_X` against the mapped rows of `x_pool`.
pub fn csls_translate(
    w: &MappingMatrix,
    x_q: ArrayView2<'_, f64>,
    y: &EmbeddingMatrix,
    x_pool: &EmbeddingMatrix,
    k: usize,
    opts: &RetrievalOptions,
) -> Result<TranslationResult> {
    let mapped_q = map_queries(w, x_q)?;
    let mapped_pool = map_queries(w, x_pool.vectors())?;
    let pool_excl = zero_rows_of(mapped_pool.view());
    let r_x = csls_target_cache(y, mapped_pool.view(), &pool_excl, k, opts)?;
    csls_translate_mapped(mapped_q.view(), y, &r_x, k, opts)
}

/// `r_X` for every target row against a mapped source pool.
pub(crate) fn csls_target_cache(
    y: &EmbeddingMatrix,
    mapped_pool: ArrayView2<'_, f64>,
    pool_exclude: &BTreeSet<usize>,
    k: usize,
    opts: &RetrievalOptions,
) -> Result<Vec<f64>> {
    if mapped_pool.nrows() == pool_exclude.len() {
        return Err(Error::EmptyCandidates);
    }
    Ok(mean_knn_excluding(y.vectors(), mapped_pool, k, pool_exclude, opts)?.r_values)
}

pub(crate) fn csls_translate_mapped(
    mapped_q: ArrayView2<'_, f64>,
    y: &EmbeddingMatrix,
    r_x: &[f64],
    k: usize,
    opts: &RetrievalOptions,
) -> Result<TranslationResult> {
    if y.len() == y.zero_rows().len() {
        return Err(Error::EmptyCandidates);
    }
    let r_y = mean_knn_excluding(mapped_q, y.vectors(), k, y.zero_rows(), opts)?.r_values;
    let scoring = Scoring {
        scale: 2.0,
        bias: Some(r_x),
    };
    let best = top_k_scored(mapped_q, y.vectors(), 1, y.zero_rows(), scoring, opts)?;
    Ok(translation(Criterion::Csls, Some(k), best, Some(&r_y)))
}

pub(crate) fn zero_rows_of(m: ArrayView2<'_, f64>) -> BTreeSet<usize> {
    m.rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().all(|&v| v == 0.0))
        .map(|(i, _)| i)
        .collect()
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    <f64 as Scalar>::dot(a.as_slice().unwrap(), b.as_slice().unwrap()) / (na * nb)
}

fn mean_top_cosines(v: ArrayView1<'_, f64>, pool: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    if k == 0 || k > pool.nrows() {
        return Err(Error::KOutOfRange {
            k,
            available: pool.nrows(),
        });
    }
    let mut cos: Vec<f64> = pool.rows().into_iter().map(|p| cosine(v, p)).collect();
    cos.sort_unstable_by(|a, b| b.total_cmp(a));
    Ok(cos[..k].iter().sum::<f64>() / k as f64)
}

/// CSLS loss between a (mapped) source vector `x` and target `y`:
/// `−2 cos(x, y) + mean_k cos(x, y_pool) + mean_k cos(x_pool, y)`.
///
/// The two neighbourhood terms are added before the cosine term so that
/// swapping the arguments together with their pools gives the identical
/// floating-point result.
pub fn csls_loss(
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    y_pool: ArrayView2<'_, f64>,
    x_pool: ArrayView2<'_, f64>,
    k: usize,
) -> Result<f64> {
    let r_y = mean_top_cosines(x, y_pool, k)?;
    let r_x = mean_top_cosines(y, x_pool, k)?;
    Ok(-2.0 * cosine(x, y) + (r_y + r_x))
}
