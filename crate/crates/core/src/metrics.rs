//! Brute-force silhouette scoring.
//!
//! This is the exact, non-differentiable reference: it is both the oracle the
//! soft clustering loss is tested against and the score reported for 2D
//! projections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Array, Scalar};
use crate::par;
use crate::projection::Embedding2D;

/// Mean silhouette of the points carrying one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: i32,
    pub count: usize,
    pub mean_silhouette: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub silhouette: f64,
    pub per_class: Vec<ClassScore>,
    pub n: usize,
    pub k: usize,
}

/// Per-point silhouette values `s(i)`, with `s = 0` for members of singleton
/// clusters and wherever both mean distances vanish.
pub fn silhouette_samples<T: Scalar>(points: &Array<T>, labels: &[i32]) -> Result<Vec<f64>> {
    let (n, d) = match *points.shape() {
        [n, d] => (n, d),
        _ => {
            return Err(Error::shape(
                "silhouette_score",
                format!("expected [N, D] points, got {:?}", points.shape()),
            ))
        }
    };
    if labels.len() != n {
        return Err(Error::shape(
            "silhouette_score",
            format!("{n} points but {} labels", labels.len()),
        ));
    }
    if n < 3 {
        return Err(Error::Data(format!("silhouette needs at least 3 points, got {n}")));
    }
    let mut clusters: Vec<i32> = labels.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return Err(Error::SingleCluster);
    }
    let slot: Vec<usize> = labels
        .iter()
        .map(|l| clusters.binary_search(l).expect("label collected above"))
        .collect();
    let k = clusters.len();
    let mut counts = vec![0usize; k];
    for &c in &slot {
        counts[c] += 1;
    }
    let x: Vec<f64> = points.data().iter().map(|v| v.f64()).collect();

    Ok(par::map_indexed(n, |i| {
        let own = slot[i];
        if counts[own] < 2 {
            return 0.0;
        }
        let xi = &x[i * d..(i + 1) * d];
        let mut sums = vec![0.0f64; k];
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = &x[j * d..(j + 1) * d];
            let sq: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            sums[slot[j]] += sq.sqrt();
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            (b - a) / m
        } else {
            0.0
        }
    }))
}

/// Mean silhouette over all points, with per-class breakdown.
pub fn silhouette_score<T: Scalar>(points: &Array<T>, labels: &[i32]) -> Result<EvaluationReport> {
    let s = silhouette_samples(points, labels)?;
    let mut by_class: BTreeMap<i32, (usize, f64)> = BTreeMap::new();
    for (&l, &v) in labels.iter().zip(&s) {
        let e = by_class.entry(l).or_default();
        e.0 += 1;
        e.1 += v;
    }
    let per_class: Vec<ClassScore> = by_class
        .into_iter()
        .map(|(label, (count, total))| ClassScore {
            label,
            count,
            mean_silhouette: total / count as f64,
        })
        .collect();
    Ok(EvaluationReport {
        silhouette: s.iter().sum::<f64>() / s.len() as f64,
        k: per_class.len(),
        per_class,
        n: s.len(),
    })
}

/// Silhouette of a 2D projection under its own labels.
pub fn evaluate_projection(e: &Embedding2D) -> Result<EvaluationReport> {
    silhouette_score(&e.coords, &e.labels)
}
