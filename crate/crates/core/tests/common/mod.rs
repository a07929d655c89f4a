//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls into the selection code it is used to check.

#![allow(dead_code)]

pub mod schedule;
pub mod toy;

use fpgm_core::rng::Lcg;
use fpgm_core::FilterMatrix;

pub fn random_rows(rng: &mut Lcg, rows: usize, dims: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..dims).map(|_| rng.next_normal()).collect())
        .collect()
}

pub fn random_matrix(rng: &mut Lcg, rows: usize, dims: usize) -> FilterMatrix {
    FilterMatrix::from_rows(&random_rows(rng, rows, dims)).unwrap()
}

pub fn rows_of(m: &FilterMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|j| m.row(j).to_vec()).collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Metric {
    L1,
    L2,
    Cosine,
}

pub fn oracle_distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::L1 => {
            let mut s = 0.0;
            for k in 0..a.len() {
                s += (a[k] - b[k]).abs();
            }
            s
        }
        Metric::L2 => {
            let mut s = 0.0;
            for k in 0..a.len() {
                s += (a[k] - b[k]) * (a[k] - b[k]);
            }
            s.sqrt()
        }
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for k in 0..a.len() {
                dot += a[k] * b[k];
                na += a[k] * a[k];
                nb += b[k] * b[k];
            }
            1.0 - dot / (na.sqrt() * nb.sqrt())
        }
    }
}

/// O(n^2 d) distance sums over explicit pairs, self excluded.
pub fn oracle_g(rows: &[Vec<f64>], metric: Metric) -> Vec<f64> {
    let n = rows.len();
    let mut g = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                g[i] += oracle_distance(&rows[i], &rows[j], metric);
            }
        }
    }
    g
}

/// Full sort on (score, index), take `count`, return ascending.
pub fn oracle_pick(scores: &[f64], count: usize) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = pairs.into_iter().take(count).map(|p| p.1).collect();
    out.sort();
    out
}

pub fn oracle_norm(row: &[f64], l1: bool) -> f64 {
    if l1 {
        row.iter().map(|v| v.abs()).sum()
    } else {
        row.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn oracle_select_norm(rows: &[Vec<f64>], count: usize, l1: bool) -> Vec<usize> {
    let norms: Vec<f64> = rows.iter().map(|r| oracle_norm(r, l1)).collect();
    oracle_pick(&norms, count)
}

pub fn oracle_select_gm(rows: &[Vec<f64>], count: usize, metric: Metric) -> Vec<usize> {
    oracle_pick(&oracle_g(rows, metric), count)
}

/// Norm sort, then brute-force GM over the survivors.
pub fn oracle_select_mix(
    rows: &[Vec<f64>],
    norm_count: usize,
    gm_count: usize,
    l1: bool,
    metric: Metric,
) -> Vec<usize> {
    let first = oracle_select_norm(rows, norm_count, l1);
    let survivors: Vec<usize> = (0..rows.len()).filter(|j| !first.contains(j)).collect();
    let sub: Vec<Vec<f64>> = survivors.iter().map(|&j| rows[j].clone()).collect();
    let second: Vec<usize> = oracle_select_gm(&sub, gm_count, metric)
        .into_iter()
        .map(|k| survivors[k])
        .collect();
    let mut all = [first, second].concat();
    all.sort();
    all
}

/// True when scores around the selection cut differ by a clear margin.
pub fn cut_is_clear(scores: &[f64], count: usize, rel: f64) -> bool {
    if count == 0 || count >= scores.len() {
        return true;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (a, b) = (sorted[count - 1], sorted[count]);
    (b - a) > rel * (1.0 + a.abs().max(b.abs()))
}
