//! Fuzzy c-means.
//!
//! Used in three places: estimating Gaussian antecedent parameters, seeding
//! the alternating loop with initial hard labels, and as the FCM baseline in
//! benchmark runs.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_FUZZIFIER: f64 = 2.0;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

/// Result of a fuzzy c-means fit.
#[derive(Debug, Clone)]
pub struct FcmResult {
    /// `N x C` membership degrees; every row sums to 1.
    pub memberships: DMatrix<f64>,
    /// `C x d` cluster centers.
    pub centers: DMatrix<f64>,
    /// Objective value after each iteration; non-increasing.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

/// Runs fuzzy c-means with centers initialized as `c` distinct samples drawn
/// by the seeded generator.
pub fn fit(
    features: &DMatrix<f64>,
    c: usize,
    m: f64,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> Result<FcmResult> {
    let n = features.nrows();
    if c == 0 || c > n {
        return Err(Error::Fcm(format!("cluster count {c} not in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, n, c);
    let mut centers = DMatrix::<f64>::zeros(c, features.ncols());
    for (r, i) in picks.into_iter().enumerate() {
        centers.set_row(r, &features.row(i));
    }
    fit_from_centers(features, centers, m, max_iter, tol)
}

/// Runs the alternating membership/center updates from explicit initial
/// centers. Exposed so tests can pin the starting point exactly.
pub fn fit_from_centers(
    features: &DMatrix<f64>,
    mut centers: DMatrix<f64>,
    m: f64,
    max_iter: usize,
    tol: f64,
) -> Result<FcmResult> {
    let n = features.nrows();
    let d = features.ncols();
    let c = centers.nrows();
    if centers.ncols() != d {
        return Err(Error::Fcm(format!(
            "center dimension {} does not match data dimension {d}",
            centers.ncols()
        )));
    }
    if m <= 1.0 {
        return Err(Error::Fcm(format!("fuzzifier must exceed 1, got {m}")));
    }
    if tol <= 0.0 || max_iter == 0 {
        return Err(Error::Fcm("need tol > 0 and max_iter >= 1".into()));
    }

    let mut memberships = DMatrix::<f64>::zeros(n, c);
    let mut d2 = DMatrix::<f64>::zeros(n, c);
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        squared_distances(features, &centers, &mut d2);
        update_memberships(&d2, m, &mut memberships);

        // Center update: membership^m-weighted means. A cluster that lost all
        // weight keeps its previous center.
        let mut new_centers = DMatrix::<f64>::zeros(c, d);
        for r in 0..c {
            let mut weight = 0.0;
            let mut acc = nalgebra::DVector::<f64>::zeros(d);
            for j in 0..n {
                let w = memberships[(j, r)].powf(m);
                weight += w;
                acc.axpy(w, &features.row(j).transpose(), 1.0);
            }
            if weight > 0.0 {
                new_centers.set_row(r, &(acc / weight).transpose());
            } else {
                new_centers.set_row(r, &centers.row(r));
            }
        }

        let displacement = (&new_centers - &centers).abs().max();
        centers = new_centers;

        squared_distances(features, &centers, &mut d2);
        let mut objective = 0.0;
        for j in 0..n {
            for r in 0..c {
                objective += memberships[(j, r)].powf(m) * d2[(j, r)];
            }
        }
        trace.push(objective);

        if displacement < tol {
            break;
        }
    }

    // Memberships consistent with the final centers.
    squared_distances(features, &centers, &mut d2);
    update_memberships(&d2, m, &mut memberships);

    Ok(FcmResult {
        memberships,
        centers,
        objective_trace: trace,
        iterations,
    })
}

/// Crisp labels by maximum membership; ties go to the lowest cluster index.
pub fn hard_labels(result: &FcmResult) -> Vec<usize> {
    let mut labels = Vec::with_capacity(result.memberships.nrows());
    for j in 0..result.memberships.nrows() {
        let row = result.memberships.row(j);
        let mut best = 0usize;
        for r in 1..row.len() {
            if row[r] > row[best] {
                best = r;
            }
        }
        labels.push(best);
    }
    labels
}

fn squared_distances(features: &DMatrix<f64>, centers: &DMatrix<f64>, out: &mut DMatrix<f64>) {
    for j in 0..features.nrows() {
        for r in 0..centers.nrows() {
            let mut acc = 0.0;
            for i in 0..features.ncols() {
                let diff = features[(j, i)] - centers[(r, i)];
                acc += diff * diff;
            }
            out[(j, r)] = acc;
        }
    }
}

/// Inverse-distance-ratio membership rule. A sample coincident with one or
/// more centers gets its full membership split uniformly over those centers.
fn update_memberships(d2: &DMatrix<f64>, m: f64, out: &mut DMatrix<f64>) {
    let exponent = 1.0 / (m - 1.0);
    let c = d2.ncols();
    for j in 0..d2.nrows() {
        let zero_hits = (0..c).filter(|&r| d2[(j, r)] == 0.0).count();
        if zero_hits > 0 {
            for r in 0..c {
                out[(j, r)] = if d2[(j, r)] == 0.0 {
                    1.0 / zero_hits as f64
                } else {
                    0.0
                };
            }
            continue;
        }
        for r in 0..c {
            let mut denom = 0.0;
            for s in 0..c {
                denom += (d2[(j, r)] / d2[(j, s)]).powf(exponent);
            }
            out[(j, r)] = 1.0 / denom;
        }
    }
}
