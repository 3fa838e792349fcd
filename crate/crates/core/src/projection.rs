//! UMAP-style projection of latent vectors to 2D.
//!
//! Exact kNN, per-point bandwidth calibration into a fuzzy neighbourhood
//! graph, a least-squares fit of the low-dimensional similarity curve, then
//! cross-entropy SGD with negative sampling.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{Array, Scalar};
use crate::par;

/// Binary-search iterations for each bandwidth.
const SIGMA_ITERATIONS: usize = 64;
const SIGMA_TOLERANCE: f64 = 1e-5;
/// Sample count of the curve fit over `[0, 3 * spread]`.
const CURVE_SAMPLES: usize = 300;
const CURVE_ITERATIONS: usize = 300;
const GRAD_CLIP: f64 = 4.0;

/// Exact k nearest neighbours of every point, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    pub n: usize,
    pub k: usize,
    /// `n * k` neighbour indices, row-major by point.
    pub indices: Vec<usize>,
    /// Matching Euclidean distances.
    pub distances: Vec<f64>,
}

impl KnnGraph {
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn neighbor_distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

/// Symmetric weighted neighbourhood graph. Each undirected edge appears
/// once with `i < j`, sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub rho: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub epochs: usize,
    pub negative_samples: usize,
    /// Initial SGD step size; decays linearly to zero over the epochs.
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            epochs: 200,
            negative_samples: 5,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors < 2 {
            return Err(Error::Config(format!(
                "n_neighbors must be at least 2, got {}",
                self.n_neighbors
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("projection needs at least one epoch".into()));
        }
        if !(self.min_dist > 0.0 && self.min_dist < self.spread) {
            return Err(Error::Config(format!(
                "need 0 < min_dist < spread, got {} and {}",
                self.min_dist, self.spread
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// 2D coordinates `[N, 2]` with one label per point.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding2D {
    pub coords: Array<f64>,
    pub labels: Vec<i32>,
}

impl Embedding2D {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// CSV with header `index,x,y,label`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "x", "y", "label"])?;
        for (i, &l) in self.labels.iter().enumerate() {
            let p = self.coords.row(i);
            w.serialize((i, p[0], p[1], l))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in r.deserialize::<(usize, f64, f64, i32)>().enumerate() {
            let (i, x, y, l) = rec?;
            if i != row {
                return Err(Error::Data(format!("embedding row {row} carries index {i}")));
            }
            coords.extend([x, y]);
            labels.push(l);
        }
        Ok(Self {
            coords: Array::new(&[labels.len(), 2], coords)?,
            labels,
        })
    }
}

fn points_f64<T: Scalar>(op: &'static str, z: &Array<T>) -> Result<(usize, usize, Vec<f64>)> {
    match *z.shape() {
        [n, d] => Ok((n, d, z.data().iter().map(|v| v.f64()).collect())),
        _ => Err(Error::shape(op, format!("expected [N, D], got {:?}", z.shape()))),
    }
}

/// Brute-force kNN; ties in distance go to the lower index.
pub fn knn_graph<T: Scalar>(z: &Array<T>, k: usize) -> Result<KnnGraph> {
    let (n, d, x) = points_f64("knn_graph", z)?;
    if k == 0 || k >= n {
        return Err(Error::Config(format!("need 1 <= k < N, got k={k} with N={n}")));
    }
    let rows = par::map_indexed(n, |i| {
        let xi = &x[i * d..(i + 1) * d];
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let xj = &x[j * d..(j + 1) * d];
                let sq: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                (sq.sqrt(), j)
            })
            .collect();
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.truncate(k);
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand
    });
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for row in rows {
        for (dist, j) in row {
            indices.push(j);
            distances.push(dist);
        }
    }
    Ok(KnnGraph {
        n,
        k,
        indices,
        distances,
    })
}

/// Sum of the directed memberships `exp(-max(0, d - rho) / sigma)`.
pub fn membership_sum(distances: &[f64], rho: f64, sigma: f64) -> f64 {
    distances
        .iter()
        .map(|&d| (-(d - rho).max(0.0) / sigma).exp())
        .sum()
}

/// Bandwidth `sigma` with `membership_sum == log2(k)`, and whether the search
/// converged.
pub fn calibrate_sigma(distances: &[f64], rho: f64, target: f64) -> (f64, bool) {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut mid = 1.0;
    for _ in 0..SIGMA_ITERATIONS {
        let sum = membership_sum(distances, rho, mid);
        if (sum - target).abs() < SIGMA_TOLERANCE {
            return (mid, true);
        }
        if sum > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    let fallback = if hi.is_infinite() { lo } else { (lo + hi) / 2.0 };
    (fallback.max(f64::MIN_POSITIVE), false)
}

/// Fuzzy union `a + b - ab`.
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    a + b - a * b
}

pub fn fuzzy_simplicial_set(knn: &KnnGraph) -> FuzzyGraph {
    let target = (knn.k as f64).log2();
    let calibrated = par::map_indexed(knn.n, |i| {
        let d = knn.neighbor_distances(i);
        let rho = d[0];
        let (sigma, ok) = calibrate_sigma(d, rho, target);
        (rho, sigma, ok)
    });
    let mut rho = Vec::with_capacity(knn.n);
    let mut sigma = Vec::with_capacity(knn.n);
    for (i, (r, s, ok)) in calibrated.into_iter().enumerate() {
        if !ok {
            log::warn!("bandwidth search for point {i} did not converge; using sigma={s:e}");
        }
        rho.push(r);
        sigma.push(s);
    }
    let mut directed: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for i in 0..knn.n {
        for (&j, &d) in knn.neighbors(i).iter().zip(knn.neighbor_distances(i)) {
            let w = (-(d - rho[i]).max(0.0) / sigma[i]).exp();
            let e = directed.entry((i.min(j), i.max(j))).or_default();
            if i < j {
                e.0 = w;
            } else {
                e.1 = w;
            }
        }
    }
    let edges = directed
        .into_iter()
        .map(|((i, j), (a, b))| (i, j, fuzzy_union(a, b)))
        .filter(|&(_, _, w)| w > 0.0)
        .collect();
    FuzzyGraph {
        n: knn.n,
        edges,
        rho,
        sigma,
    }
}

fn curve_target(x: f64, min_dist: f64, spread: f64) -> f64 {
    if x <= min_dist {
        1.0
    } else {
        (-(x - min_dist) / spread).exp()
    }
}

/// Low-dimensional similarity `1 / (1 + a d^(2b))`.
pub fn curve(d: f64, a: f64, b: f64) -> f64 {
    1.0 / (1.0 + a * d.powf(2.0 * b))
}

/// Least-squares `(a, b)` for the similarity curve against the target
/// "1 inside `min_dist`, exponential decay with `spread` beyond".
/// Levenberg-Marquardt from `(1, 1)`.
pub fn fit_ab(min_dist: f64, spread: f64) -> Result<(f64, f64)> {
    if !(min_dist > 0.0 && min_dist < spread) {
        return Err(Error::Config(format!(
            "need 0 < min_dist < spread, got {min_dist} and {spread}"
        )));
    }
    let xs: Vec<f64> = (0..CURVE_SAMPLES)
        .map(|i| 3.0 * spread * i as f64 / (CURVE_SAMPLES - 1) as f64)
        .collect();
    let ys: Vec<f64> = xs.iter().map(|&x| curve_target(x, min_dist, spread)).collect();
    let cost = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| (curve(x, a, b) - y).powi(2))
            .sum()
    };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut c = cost(a, b);
    let mut damping = 1e-3;
    for _ in 0..CURVE_ITERATIONS {
        // Normal equations J^T J and J^T r for residual r = f - y.
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let f = 1.0 / (1.0 + a * p);
            let r = f - y;
            let da = -p * f * f;
            let db = -a * p * 2.0 * x.ln() * f * f;
            jaa += da * da;
            jab += da * db;
            jbb += db * db;
            ga += da * r;
            gb += db * r;
        }
        let mut accepted = false;
        for _ in 0..50 {
            let (m11, m22) = (jaa * (1.0 + damping), jbb * (1.0 + damping));
            let det = m11 * m22 - jab * jab;
            let step_a = -(m22 * ga - jab * gb) / det;
            let step_b = -(m11 * gb - jab * ga) / det;
            let (na, nb) = (a + step_a, b + step_b);
            let nc = if na > 0.0 && nb > 0.0 { cost(na, nb) } else { f64::INFINITY };
            if nc <= c {
                let done = (c - nc) <= 1e-15 * c.max(1e-300)
                    || (step_a.abs() < 1e-12 && step_b.abs() < 1e-12);
                a = na;
                b = nb;
                c = nc;
                damping = (damping / 10.0).max(1e-12);
                accepted = true;
                if done {
                    return Ok((a, b));
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: the gradient vanishes here.
            return Ok((a, b));
        }
    }
    let grad_norm = {
        let h = 1e-7;
        let ga = (cost(a + h, b) - cost(a - h, b)) / (2.0 * h);
        let gb = (cost(a, b + h) - cost(a, b - h)) / (2.0 * h);
        ga.hypot(gb)
    };
    if grad_norm < 1e-6 {
        Ok((a, b))
    } else {
        Err(Error::Convergence {
            what: "similarity curve fit",
            residual: c,
        })
    }
}

/// Seeded initial layout, uniform in `[-0.01, 0.01]²`.
pub fn initial_layout(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2 * n).map(|_| rng.random_range(-10.0..10.0) * 1e-3).collect()
}

fn clip(v: f64) -> f64 {
    v.clamp(-GRAD_CLIP, GRAD_CLIP)
}

/// Cross-entropy SGD over the graph's edges. Returns `[N, 2]` coordinates.
pub fn optimize_embedding(graph: &FuzzyGraph, config: &ProjectionConfig, a: f64, b: f64) -> Result<Array<f64>> {
    if graph.edges.is_empty() {
        return Err(Error::Data("cannot optimize an embedding of an empty graph".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Config("projection needs at least one epoch".into()));
    }
    let n = graph.n;
    let mut y = initial_layout(n, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let max_w = graph.edges.iter().map(|e| e.2).fold(0.0, f64::max);
    for epoch in 0..config.epochs {
        let alpha = config.learning_rate * (1.0 - epoch as f64 / config.epochs as f64);
        for &(i, j, w) in &graph.edges {
            for (head, tail) in [(i, j), (j, i)] {
                if rng.random::<f64>() >= w / max_w {
                    continue;
                }
                let dx = y[2 * head] - y[2 * tail];
                let dy = y[2 * head + 1] - y[2 * tail + 1];
                let dsq = dx * dx + dy * dy;
                if dsq > 0.0 {
                    let coeff = -2.0 * a * b * dsq.powf(b - 1.0) / (a * dsq.powf(b) + 1.0);
                    let (gx, gy) = (clip(coeff * dx), clip(coeff * dy));
                    y[2 * head] += gx * alpha;
                    y[2 * head + 1] += gy * alpha;
                    y[2 * tail] -= gx * alpha;
                    y[2 * tail + 1] -= gy * alpha;
                }
                for _ in 0..config.negative_samples {
                    let other = rng.random_range(0..n);
                    if other == head {
                        continue;
                    }
                    let dx = y[2 * head] - y[2 * other];
                    let dy = y[2 * head + 1] - y[2 * other + 1];
                    let dsq = dx * dx + dy * dy;
                    let (gx, gy) = if dsq > 0.0 {
                        let coeff = 2.0 * b / ((0.001 + dsq) * (a * dsq.powf(b) + 1.0));
                        (clip(coeff * dx), clip(coeff * dy))
                    } else {
                        (GRAD_CLIP, GRAD_CLIP)
                    };
                    y[2 * head] += gx * alpha;
                    y[2 * head + 1] += gy * alpha;
                }
            }
        }
        if let Some(p) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding coordinate of point {} at epoch {epoch}",
                p / 2
            )));
        }
    }
    Array::new(&[n, 2], y)
}

/// kNN graph, fuzzy set, curve fit and SGD in sequence.
pub fn project<T: Scalar>(z: &Array<T>, labels: &[i32], config: &ProjectionConfig) -> Result<Embedding2D> {
    config.validate()?;
    let n = z.shape().first().copied().unwrap_or(0);
    if labels.len() != n {
        return Err(Error::shape(
            "project",
            format!("{n} points but {} labels", labels.len()),
        ));
    }
    if n < config.n_neighbors + 1 {
        return Err(Error::Data(format!(
            "projection with n_neighbors={} needs at least {} points, got {n}",
            config.n_neighbors,
            config.n_neighbors + 1
        )));
    }
    let knn = knn_graph(z, config.n_neighbors)?;
    let graph = fuzzy_simplicial_set(&knn);
    let (a, b) = fit_ab(config.min_dist, config.spread)?;
    let coords = optimize_embedding(&graph, config, a, b)?;
    Ok(Embedding2D {
        coords,
        labels: labels.to_vec(),
    })
}

/// [`project`] on points reordered by ascending `keys` (stable), with the
/// result mapped back to the caller's order. The output depends only on the
/// set of `(key, point, label)` triples, not on their order.
pub fn project_keyed<T: Scalar>(
    z: &Array<T>,
    labels: &[i32],
    keys: &[u64],
    config: &ProjectionConfig,
) -> Result<Embedding2D> {
    if keys.len() != labels.len() {
        return Err(Error::shape("project_keyed", "one key per point required"));
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    let sorted_labels: Vec<i32> = order.iter().map(|&i| labels[i]).collect();
    let e = project(&z.select_outer(&order), &sorted_labels, config)?;
    let mut coords = vec![0.0; 2 * order.len()];
    for (pos, &orig) in order.iter().enumerate() {
        coords[2 * orig..2 * orig + 2].copy_from_slice(e.coords.row(pos));
    }
    Ok(Embedding2D {
        coords: Array::new(&[order.len(), 2], coords)?,
        labels: labels.to_vec(),
    })
}
