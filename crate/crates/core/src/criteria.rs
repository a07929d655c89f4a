//! Filter selection: norms, pairwise distances, geometric-median selection,
//! the norm/GM hybrid, and a Weiszfeld solver for the continuous median.
//!
//! Every selector ranks rows by `(score, index)` ascending, so ties always go
//! to the lower row index.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::FilterMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    L1,
    L2,
    /// `1 - cos(x, y)`, in `[0, 2]`.
    Cosine,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 3] = [DistanceKind::L1, DistanceKind::L2, DistanceKind::Cosine];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "norm_l1")]
    NormL1,
    #[serde(rename = "norm_l2")]
    NormL2,
    #[serde(rename = "gm")]
    Gm,
    #[serde(rename = "mix")]
    Mix,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NormL1 => "norm_l1",
            Self::NormL2 => "norm_l2",
            Self::Gm => "gm",
            Self::Mix => "mix",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CriteriaError {
    #[error("ZeroVectorCosine: row {row} is the zero vector, cosine distance is undefined")]
    ZeroVectorCosine { row: usize },
    #[error("CountOutOfRange: asked for {count} filters out of {rows}")]
    CountOutOfRange { count: usize, rows: usize },
    #[error("DimensionMismatch: expected a vector of length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("InvalidTolerance: tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("NoConvergence: Weiszfeld stopped after {} iterations at objective {}", best.iterations, best.objective)]
    NoConvergence { best: Box<GmPoint> },
}

impl CriteriaError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ZeroVectorCosine { .. } => "ZeroVectorCosine",
            Self::CountOutOfRange { .. } => "CountOutOfRange",
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::InvalidTolerance(_) => "InvalidTolerance",
            Self::NoConvergence { .. } => "NoConvergence",
        }
    }
}

/// Selected rows plus the per-row score of the named criterion.
///
/// For `Gm` the scores are the distance sums `g`; for the norm criteria they
/// are the norms; for `Mix` they are the norms of the first stage (the GM
/// stage only scores the survivors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub criterion: Criterion,
    pub distance: Option<DistanceKind>,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// JSON shape `{layer, criterion, distance, indices, scores}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    pub layer: String,
    #[serde(flatten)]
    pub result: SelectionResult,
}

/// How the cosine metric treats an all-zero row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroRowPolicy {
    /// Refuse with `ZeroVectorCosine`.
    #[default]
    Error,
    /// The zero row sits at the maximal distance 2.0 from every other row.
    MaxDistance,
}

pub fn filter_norm(m: &FilterMatrix, p: NormKind) -> Vec<f64> {
    m.iter_rows().map(|row| row_norm(row, p)).collect()
}

fn row_norm(row: &[f64], p: NormKind) -> f64 {
    match p {
        NormKind::L1 => row.iter().map(|v| v.abs()).sum(),
        NormKind::L2 => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// Row-wise metric over a fixed matrix, with cosine norms cached.
struct Metric<'a> {
    m: &'a FilterMatrix,
    kind: DistanceKind,
    policy: ZeroRowPolicy,
    l2_norms: Vec<f64>,
}

impl<'a> Metric<'a> {
    fn new(m: &'a FilterMatrix, kind: DistanceKind, policy: ZeroRowPolicy) -> Result<Self, CriteriaError> {
        let l2_norms = if kind == DistanceKind::Cosine {
            let norms = filter_norm(m, NormKind::L2);
            if policy == ZeroRowPolicy::Error {
                if let Some(row) = norms.iter().position(|&n| n == 0.0) {
                    return Err(CriteriaError::ZeroVectorCosine { row });
                }
            }
            norms
        } else {
            Vec::new()
        };
        Ok(Self {
            m,
            kind,
            policy,
            l2_norms,
        })
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (self.m.row(i), self.m.row(j));
        match self.kind {
            DistanceKind::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            DistanceKind::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            DistanceKind::Cosine => {
                let (na, nb) = (self.l2_norms[i], self.l2_norms[j]);
                if na == 0.0 || nb == 0.0 {
                    debug_assert_eq!(self.policy, ZeroRowPolicy::MaxDistance);
                    return 2.0;
                }
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
            }
        }
    }

    /// Sequential left-to-right sum of row `j`'s distances.
    fn row_sum(&self, j: usize, include_self: bool) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.m.rows() {
            if k == j && !include_self {
                continue;
            }
            acc += self.dist(j, k);
        }
        acc
    }
}

#[cfg(feature = "parallel")]
fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_indices<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Full symmetric distance matrix, row-major `rows x rows`.
pub fn distance_matrix(m: &FilterMatrix, kind: DistanceKind) -> Result<Vec<Vec<f64>>, CriteriaError> {
    distance_matrix_with(m, kind, ZeroRowPolicy::Error)
}

pub fn distance_matrix_with(
    m: &FilterMatrix,
    kind: DistanceKind,
    policy: ZeroRowPolicy,
) -> Result<Vec<Vec<f64>>, CriteriaError> {
    let metric = Metric::new(m, kind, policy)?;
    let n = m.rows();
    Ok(map_indices(n, |i| (0..n).map(|j| metric.dist(i, j)).collect()))
}

/// `g[j]`: summed distance from row `j` to every row, itself included.
pub fn distance_sum(m: &FilterMatrix, kind: DistanceKind) -> Result<Vec<f64>, CriteriaError> {
    distance_sum_with(m, kind, ZeroRowPolicy::Error)
}

pub fn distance_sum_with(
    m: &FilterMatrix,
    kind: DistanceKind,
    policy: ZeroRowPolicy,
) -> Result<Vec<f64>, CriteriaError> {
    let metric = Metric::new(m, kind, policy)?;
    Ok(map_indices(m.rows(), |j| metric.row_sum(j, true)))
}

/// `g'[j]`: as [`distance_sum`] but skipping the self term. Bitwise equal to
/// `g` because every metric returns exactly zero on the diagonal.
pub fn distance_sum_excluding_self(m: &FilterMatrix, kind: DistanceKind) -> Result<Vec<f64>, CriteriaError> {
    let metric = Metric::new(m, kind, ZeroRowPolicy::Error)?;
    Ok(map_indices(m.rows(), |j| metric.row_sum(j, false)))
}

/// Indices of the `count` smallest scores, ties to the lower index, returned
/// ascending.
pub fn smallest_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut picked = order[..count.min(order.len())].to_vec();
    picked.sort_unstable();
    picked
}

fn check_count(count: usize, rows: usize) -> Result<(), CriteriaError> {
    if count > rows {
        return Err(CriteriaError::CountOutOfRange { count, rows });
    }
    Ok(())
}

pub fn select_gm(m: &FilterMatrix, count: usize, kind: DistanceKind) -> Result<SelectionResult, CriteriaError> {
    select_gm_with(m, count, kind, ZeroRowPolicy::Error)
}

pub fn select_gm_with(
    m: &FilterMatrix,
    count: usize,
    kind: DistanceKind,
    policy: ZeroRowPolicy,
) -> Result<SelectionResult, CriteriaError> {
    check_count(count, m.rows())?;
    let scores = distance_sum_with(m, kind, policy)?;
    Ok(SelectionResult {
        criterion: Criterion::Gm,
        distance: Some(kind),
        indices: smallest_indices(&scores, count),
        scores,
    })
}

pub fn select_norm(m: &FilterMatrix, count: usize, p: NormKind) -> Result<SelectionResult, CriteriaError> {
    check_count(count, m.rows())?;
    let scores = filter_norm(m, p);
    Ok(SelectionResult {
        criterion: match p {
            NormKind::L1 => Criterion::NormL1,
            NormKind::L2 => Criterion::NormL2,
        },
        distance: None,
        indices: smallest_indices(&scores, count),
        scores,
    })
}

pub fn select_mix(
    m: &FilterMatrix,
    norm_count: usize,
    gm_count: usize,
    p: NormKind,
    kind: DistanceKind,
) -> Result<SelectionResult, CriteriaError> {
    select_mix_with(m, norm_count, gm_count, p, kind, ZeroRowPolicy::Error)
}

/// Norm stage first, then GM over the survivors only (their `g` is
/// recomputed without the norm-selected rows).
pub fn select_mix_with(
    m: &FilterMatrix,
    norm_count: usize,
    gm_count: usize,
    p: NormKind,
    kind: DistanceKind,
    policy: ZeroRowPolicy,
) -> Result<SelectionResult, CriteriaError> {
    let total = norm_count.checked_add(gm_count).ok_or(CriteriaError::CountOutOfRange {
        count: usize::MAX,
        rows: m.rows(),
    })?;
    check_count(total, m.rows())?;
    let by_norm = select_norm(m, norm_count, p)?;
    let mut indices = by_norm.indices.clone();
    if gm_count > 0 {
        let survivors: Vec<usize> = (0..m.rows())
            .filter(|j| by_norm.indices.binary_search(j).is_err())
            .collect();
        let sub = m
            .select_rows(&survivors)
            .expect("survivor rows come from a valid matrix");
        let g = distance_sum_with(&sub, kind, policy)?;
        indices.extend(smallest_indices(&g, gm_count).into_iter().map(|k| survivors[k]));
        indices.sort_unstable();
    }
    Ok(SelectionResult {
        criterion: Criterion::Mix,
        distance: Some(kind),
        indices,
        scores: by_norm.scores,
    })
}

/// Row closest to `x` under `kind`, ties to the lower index.
pub fn nearest_to_point(m: &FilterMatrix, x: &[f64], kind: DistanceKind) -> Result<usize, CriteriaError> {
    if x.len() != m.cols() {
        return Err(CriteriaError::DimensionMismatch {
            expected: m.cols(),
            actual: x.len(),
        });
    }
    let probe_norm = row_norm(x, NormKind::L2);
    if kind == DistanceKind::Cosine && probe_norm == 0.0 {
        return Err(CriteriaError::ZeroVectorCosine { row: m.rows() });
    }
    let mut best = (f64::INFINITY, 0usize);
    for (j, row) in m.iter_rows().enumerate() {
        let d = match kind {
            DistanceKind::L1 => row.iter().zip(x).map(|(a, b)| (a - b).abs()).sum(),
            DistanceKind::L2 => euclidean(row, x),
            DistanceKind::Cosine => {
                let n = row_norm(row, NormKind::L2);
                if n == 0.0 {
                    return Err(CriteriaError::ZeroVectorCosine { row: j });
                }
                let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                (1.0 - dot / (n * probe_norm)).clamp(0.0, 2.0)
            }
        };
        if d < best.0 {
            best = (d, j);
        }
    }
    Ok(best.1)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sum of Euclidean distances from `x` to every row.
pub fn gm_objective(m: &FilterMatrix, x: &[f64]) -> f64 {
    m.iter_rows().map(|row| euclidean(row, x)).sum()
}

/// A (numerically) exact geometric median of the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmPoint {
    pub coords: Vec<f64>,
    pub iterations: usize,
    /// Sum of Euclidean distances from `coords` to every row.
    pub objective: f64,
    /// Objective of every accepted iterate, starting with the initial point.
    pub trajectory: Vec<f64>,
}

/// Shift applied when an iterate lands exactly on an input row.
pub fn coincidence_shift(x: &[f64]) -> f64 {
    1e-12 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// Weiszfeld iteration for the point minimizing the summed Euclidean distance.
///
/// Starts from the centroid. Before iterating, every distinct input row is
/// tested with the Kuhn optimality condition (the resultant of unit vectors
/// from the other rows has norm at most the row's multiplicity); a row that
/// passes is the exact median and is returned as-is. Iteration stops once a
/// step moves less than `tol`. An iterate that would raise the objective is
/// rejected, so the recorded trajectory never increases.
pub fn weiszfeld_gm(m: &FilterMatrix, tol: f64, max_iters: usize) -> Result<GmPoint, CriteriaError> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CriteriaError::InvalidTolerance(tol));
    }
    let (n, d) = (m.rows(), m.cols());

    if let Some(j) = optimal_data_row(m) {
        let coords = m.row(j).to_vec();
        let objective = gm_objective(m, &coords);
        return Ok(GmPoint {
            coords,
            iterations: 0,
            objective,
            trajectory: vec![objective],
        });
    }

    let mut x = vec![0.0; d];
    for row in m.iter_rows() {
        for (xi, v) in x.iter_mut().zip(row) {
            *xi += v;
        }
    }
    x.iter_mut().for_each(|v| *v /= n as f64);
    let mut objective = gm_objective(m, &x);
    let mut trajectory = vec![objective];

    for iter in 1..=max_iters {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        let mut coincident = false;
        for row in m.iter_rows() {
            let dist = euclidean(row, &x);
            if dist == 0.0 {
                coincident = true;
                break;
            }
            let w = 1.0 / dist;
            den += w;
            for (acc, v) in num.iter_mut().zip(row) {
                *acc += w * v;
            }
        }
        if coincident {
            // No input row is optimal, so nudging off it and continuing is safe.
            x[0] += coincidence_shift(&x);
            continue;
        }
        let next: Vec<f64> = num.iter().map(|v| v / den).collect();
        let step = euclidean(&next, &x);
        let next_objective = gm_objective(m, &next);
        if next_objective > objective {
            return Ok(GmPoint {
                coords: x,
                iterations: iter,
                objective,
                trajectory,
            });
        }
        x = next;
        objective = next_objective;
        trajectory.push(objective);
        if step <= tol {
            return Ok(GmPoint {
                coords: x,
                iterations: iter,
                objective,
                trajectory,
            });
        }
    }
    Err(CriteriaError::NoConvergence {
        best: Box::new(GmPoint {
            coords: x,
            iterations: max_iters,
            objective,
            trajectory,
        }),
    })
}

/// First input row satisfying the data-point optimality condition.
fn optimal_data_row(m: &FilterMatrix) -> Option<usize> {
    let d = m.cols();
    'rows: for (j, a) in m.iter_rows().enumerate() {
        let mut multiplicity = 0usize;
        let mut resultant = vec![0.0; d];
        for (k, b) in m.iter_rows().enumerate() {
            let dist = euclidean(a, b);
            if dist == 0.0 {
                if k < j {
                    // Same point already tested.
                    continue 'rows;
                }
                multiplicity += 1;
                continue;
            }
            for ((r, x), y) in resultant.iter_mut().zip(a).zip(b) {
                *r += (x - y) / dist;
            }
        }
        let pull = resultant.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pull <= multiplicity as f64 {
            return Some(j);
        }
    }
    None
}
