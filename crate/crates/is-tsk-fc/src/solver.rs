//! The two per-cluster subproblems of the alternating loop: the unit-norm
//! consequent vector (a smallest-eigenvalue problem) and the style matrix
//! (a rank-one fixed-point iteration regularized toward the identity).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Per-cluster model parameters: one decision plane and one style matrix per
/// cluster, all living in the antecedent feature space.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    /// Unit-norm consequent vectors, one per cluster.
    pub consequents: Vec<DVector<f64>>,
    /// Plane offsets, one per cluster.
    pub biases: Vec<f64>,
    /// Style matrices; each differs from the identity by at most rank one.
    pub styles: Vec<DMatrix<f64>>,
    /// Regularization weight pulling styles toward the identity.
    pub lambda: f64,
}

impl ClusterModel {
    pub fn clusters(&self) -> usize {
        self.consequents.len()
    }

    pub fn dim(&self) -> usize {
        self.consequents.first().map_or(0, |p| p.len())
    }

    /// `|P_k^T S_k x_g + q_k|` for one antecedent row.
    pub fn decision_value(&self, k: usize, x_g: &DVector<f64>) -> f64 {
        let w = &self.styles[k] * &self.consequents[k];
        (x_g.dot(&w) + self.biases[k]).abs()
    }
}

/// Diagnostics for one cluster subproblem within one alternating round.
#[derive(Debug, Clone, Copy)]
pub struct SubproblemStats {
    pub smallest_eigenvalue: f64,
    pub style_iterations: usize,
    pub style_delta: f64,
    pub style_diverged: bool,
}

/// Solution of the consequent eigenproblem.
#[derive(Debug, Clone)]
pub struct ConsequentSolution {
    pub consequent: DVector<f64>,
    pub bias: f64,
    pub smallest_eigenvalue: f64,
}

/// Result of the style fixed-point iteration.
#[derive(Debug, Clone)]
pub struct StyleSolution {
    pub style: DMatrix<f64>,
    pub iterations: usize,
    pub delta: f64,
    pub diverged: bool,
}

/// Builds the symmetric matrix whose smallest eigenvector is the consequent:
/// `H = S^T X^T X S - (S^T X^T e)(e^T X S) / (e^T e)`, explicitly symmetrized.
pub fn build_h(x_gk: &DMatrix<f64>, style: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n_k = x_gk.nrows();
    if n_k == 0 {
        return Err(Error::Solver("empty cluster: H is undefined".into()));
    }
    let g = x_gk * style;
    let col_sums = g.row_sum().transpose();
    let mut h = g.transpose() * &g - (&col_sums * col_sums.transpose()) / n_k as f64;
    let ht = h.transpose();
    h = (h + ht) * 0.5;
    Ok(h)
}

/// Smallest-eigenvalue consequent solve with the bias from the first-order
/// stationarity condition.
///
/// The consequent is a unit-norm eigenvector of [`build_h`]'s output for its
/// smallest eigenvalue. Degenerate smallest eigenspaces are resolved
/// deterministically: among eigenvalues within `1e-10 * (1 + |H|_F)` of the
/// minimum, the eigenvector whose largest-magnitude entry sits at the lowest
/// index wins, and the sign is flipped so that entry is positive.
pub fn solve_consequent(x_gk: &DMatrix<f64>, style: &DMatrix<f64>) -> Result<ConsequentSolution> {
    solve_consequent_inner(x_gk, style, None)
}

/// Like [`solve_consequent`] but first deflates the direction that is flat on
/// every sample by construction of the antecedent matrix (normalized firings
/// summing to 1 make `X_g (S^-1 u)` constant for the bias-slot vector `u`).
/// Without the deflation that direction is an exact zero eigenvector of every
/// cluster's `H`, all decision values collapse to zero, and assignment
/// degenerates. Skipped when the style matrix is singular, in which case no
/// such direction exists.
pub fn solve_consequent_deflated(
    x_gk: &DMatrix<f64>,
    style: &DMatrix<f64>,
    flat_direction: &DVector<f64>,
) -> Result<ConsequentSolution> {
    solve_consequent_inner(x_gk, style, Some(flat_direction))
}

fn solve_consequent_inner(
    x_gk: &DMatrix<f64>,
    style: &DMatrix<f64>,
    deflate: Option<&DVector<f64>>,
) -> Result<ConsequentSolution> {
    let h = build_h(x_gk, style)?;
    let h_norm = h.norm();
    let mut h_work = h.clone();

    if let Some(flat) = deflate {
        if let Some(v) = style.clone().lu().solve(flat) {
            let ok = v.iter().all(|x| x.is_finite())
                && (style * &v - flat).norm() <= 1e-6 * flat.norm().max(1.0);
            if ok && v.norm() > 0.0 {
                let v = v.normalize();
                let shift = 1.0 + h_norm;
                h_work += shift * &v * v.transpose();
            }
        }
    }

    let eigen = nalgebra::SymmetricEigen::new(h_work);
    let dim = eigen.eigenvalues.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[a]
            .partial_cmp(&eigen.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let min_value = eigen.eigenvalues[order[0]];
    let tie_tol = 1e-10 * (1.0 + h_norm);

    let argmax_abs = |col: nalgebra::DVectorView<f64>| -> usize {
        let mut best = 0usize;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        best
    };

    let mut chosen = order[0];
    let mut chosen_slot = argmax_abs(eigen.eigenvectors.column(chosen).into());
    for &cand in order.iter().skip(1) {
        if eigen.eigenvalues[cand] > min_value + tie_tol {
            break;
        }
        let slot = argmax_abs(eigen.eigenvectors.column(cand).into());
        if slot < chosen_slot {
            chosen = cand;
            chosen_slot = slot;
        }
    }

    let mut consequent = eigen.eigenvectors.column(chosen).clone_owned();
    let norm = consequent.norm();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Solver("eigensolver returned a degenerate vector".into()));
    }
    consequent /= norm;
    if consequent[chosen_slot] < 0.0 {
        consequent = -consequent;
    }

    // The chosen vector is an eigenvector of the original H as well; report
    // its eigenvalue there via the Rayleigh quotient.
    let smallest_eigenvalue = consequent.dot(&(&h * &consequent));

    let n_k = x_gk.nrows() as f64;
    let fitted = x_gk * (style * &consequent);
    let bias = -fitted.sum() / n_k;

    Ok(ConsequentSolution {
        consequent,
        bias,
        smallest_eigenvalue,
    })
}

/// Residual vector `a = X S P + q e`.
pub fn style_residual(
    x_gk: &DMatrix<f64>,
    style: &DMatrix<f64>,
    consequent: &DVector<f64>,
    bias: f64,
) -> DVector<f64> {
    let mut a = x_gk * (style * consequent);
    a.add_scalar_mut(bias);
    a
}

/// One style update `S = I - (1/(2 lambda)) X^T a P^T`; the deviation from
/// the identity is rank-one by construction.
pub fn style_step(
    x_gk: &DMatrix<f64>,
    a: &DVector<f64>,
    consequent: &DVector<f64>,
    lambda: f64,
) -> DMatrix<f64> {
    let d = x_gk.ncols();
    let coef = 1.0 / (2.0 * lambda);
    let w = x_gk.transpose() * a;
    let mut s = DMatrix::<f64>::identity(d, d);
    if coef > 0.0 {
        s -= coef * w * consequent.transpose();
    }
    s
}

/// Objective of the style subproblem, `|X S P + q e|^2 + lambda |S - I|_F^2`.
/// The regularization term is taken as zero when `S = I` exactly so that an
/// infinite lambda does not turn into `inf * 0`.
pub fn style_objective(
    x_gk: &DMatrix<f64>,
    style: &DMatrix<f64>,
    consequent: &DVector<f64>,
    bias: f64,
    lambda: f64,
) -> f64 {
    let fit = style_residual(x_gk, style, consequent, bias).norm_squared();
    let dev = (style - DMatrix::<f64>::identity(style.nrows(), style.ncols())).norm_squared();
    if dev == 0.0 {
        fit
    } else {
        fit + lambda * dev
    }
}

/// Alternates [`style_residual`] and [`style_step`] from `S = I` until the
/// Frobenius delta drops below `theta` or `max_iter` iterations elapse.
///
/// The fixed point can oscillate divergently when lambda is small relative to
/// the data scale; growth beyond Frobenius norm 1e6 aborts the loop and keeps
/// the best iterate by objective, flagged in the result. Non-finite values
/// are an error rather than something to clamp silently.
pub fn solve_style(
    x_gk: &DMatrix<f64>,
    consequent: &DVector<f64>,
    bias: f64,
    lambda: f64,
    max_iter: usize,
    theta: f64,
) -> Result<StyleSolution> {
    if lambda <= 0.0 {
        return Err(Error::Solver(format!("lambda must be positive, got {lambda}")));
    }
    if max_iter == 0 || theta <= 0.0 {
        return Err(Error::Solver("need max_iter >= 1 and theta > 0".into()));
    }

    let d = x_gk.ncols();
    let mut style = DMatrix::<f64>::identity(d, d);
    let mut best = style.clone();
    let mut best_objective = style_objective(x_gk, &style, consequent, bias, lambda);
    let mut delta = 0.0;
    let mut iterations = 0;
    let mut diverged = false;

    for t in 1..=max_iter {
        iterations = t;
        let a = style_residual(x_gk, &style, consequent, bias);
        let next = style_step(x_gk, &a, consequent, lambda);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteStyle {
                iteration: t,
                lambda,
            });
        }
        delta = (&next - &style).norm();
        style = next;

        let objective = style_objective(x_gk, &style, consequent, bias, lambda);
        if objective < best_objective {
            best_objective = objective;
            best = style.clone();
        }
        if style.norm() > 1e6 {
            diverged = true;
            style = best;
            break;
        }
        if delta < theta {
            break;
        }
    }

    Ok(StyleSolution {
        style,
        iterations,
        delta,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn two_point_case() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])
    }

    #[test]
    fn h_hand_computation() {
        let x = two_point_case();
        let h = build_h(&x, &DMatrix::identity(2, 2)).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((h - want).abs().max() < 1e-12);
    }

    #[test]
    fn h_single_row_vanishes() {
        let x = DMatrix::from_row_slice(1, 3, &[2.0, -1.0, 0.5]);
        let h = build_h(&x, &DMatrix::identity(3, 3)).unwrap();
        assert!(h.abs().max() < 1e-12);
        assert!(build_h(&DMatrix::<f64>::zeros(0, 3), &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn h_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = DMatrix::from_fn(12, 4, |_, _| rng.random_range(-3.0..3.0));
            let s = DMatrix::from_fn(4, 4, |i, j| {
                if i == j { 1.0 } else { rng.random_range(-0.2..0.2) }
            });
            let h = build_h(&x, &s).unwrap();
            assert!((&h - h.transpose()).norm() < 1e-12);
        }
    }

    #[test]
    fn consequent_hand_case() {
        let x = two_point_case();
        let sol = solve_consequent(&x, &DMatrix::identity(2, 2)).unwrap();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(sol.smallest_eigenvalue, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.consequent[0], inv_sqrt2, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.consequent[1], inv_sqrt2, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.bias, -inv_sqrt2, epsilon = 1e-10);
        let residual = style_residual(&x, &DMatrix::identity(2, 2), &sol.consequent, sol.bias);
        assert!(residual.abs().max() < 1e-10);
    }

    #[test]
    fn single_point_cluster_is_deterministic() {
        let x = DMatrix::from_row_slice(1, 3, &[0.4, -2.0, 1.0]);
        let s = DMatrix::identity(3, 3);
        let a = solve_consequent(&x, &s).unwrap();
        let b = solve_consequent(&x, &s).unwrap();
        assert_eq!(a.consequent, b.consequent);
        assert_abs_diff_eq!(a.consequent.norm(), 1.0, epsilon = 1e-12);
        let residual = style_residual(&x, &s, &a.consequent, a.bias);
        assert!(residual.abs().max() < 1e-12);
    }

    #[test]
    fn consequent_beats_random_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = DMatrix::from_fn(30, 5, |_, _| rng.random_range(-2.0..2.0));
        let s = DMatrix::identity(5, 5);
        let sol = solve_consequent(&x, &s).unwrap();
        let objective = |p: &DVector<f64>| {
            let fitted = &x * p;
            let q = -fitted.sum() / 30.0;
            fitted.iter().map(|v| (v + q).powi(2)).sum::<f64>()
        };
        let ours = objective(&sol.consequent);
        for _ in 0..1000 {
            let p = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0)).normalize();
            assert!(ours <= objective(&p) + 1e-9);
        }
    }

    #[test]
    fn deflated_solve_avoids_flat_direction() {
        // Rows with a constant first column: e1 is flat on every sample, so
        // the plain solve returns it (zero objective) while the deflated one
        // must find a different direction.
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.3, 2.0, 1.0, -0.8, 0.5, 1.0, 1.9, -1.0, 1.0, 0.4, 0.7],
        );
        let s = DMatrix::identity(3, 3);
        let flat = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        let plain = solve_consequent(&x, &s).unwrap();
        assert!(plain.consequent[0].abs() > 0.99);
        let deflated = solve_consequent_deflated(&x, &s, &flat).unwrap();
        assert!(deflated.consequent[0].abs() < 1e-6);
        assert_abs_diff_eq!(deflated.consequent.norm(), 1.0, epsilon = 1e-12);
        // Still an eigenpair of the original H.
        let h = build_h(&x, &s).unwrap();
        let residual = &h * &deflated.consequent - deflated.smallest_eigenvalue * &deflated.consequent;
        assert!(residual.norm() < 1e-8 * (1.0 + h.norm()));
    }

    #[test]
    fn residual_cases() {
        let x = DMatrix::from_row_slice(1, 1, &[2.0]);
        let s = DMatrix::from_row_slice(1, 1, &[1.0]);
        let p = DVector::from_row_slice(&[1.0]);
        let a = style_residual(&x, &s, &p, 1.0);
        assert_abs_diff_eq!(a[0], 3.0, epsilon = 1e-15);

        // With the stationarity bias the residual always sums to zero.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
        let s = DMatrix::identity(4, 4);
        let sol = solve_consequent(&x, &s).unwrap();
        let a = style_residual(&x, &s, &sol.consequent, sol.bias);
        assert!(a.sum().abs() < 1e-8 * 20.0);
    }

    #[test]
    fn style_step_cases() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let p = DVector::from_row_slice(&[1.0, 0.0]);
        let zero_a = DVector::zeros(2);
        let s = style_step(&x, &zero_a, &p, 1.0);
        assert!((s - DMatrix::<f64>::identity(2, 2)).norm() < 1e-15);

        let x = DMatrix::from_row_slice(1, 1, &[2.0]);
        let a = DVector::from_row_slice(&[1.0]);
        let p = DVector::from_row_slice(&[1.0]);
        let s = style_step(&x, &a, &p, 1.0);
        assert_abs_diff_eq!(s[(0, 0)], 0.0, epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let p = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let s = style_step(&x, &a, &p, 1e12);
        assert!((s - DMatrix::<f64>::identity(3, 3)).norm() < 1e-9);
    }

    #[test]
    fn style_converges_immediately_on_perfect_fit() {
        let x = two_point_case();
        let sol = solve_consequent(&x, &DMatrix::identity(2, 2)).unwrap();
        let style = solve_style(&x, &sol.consequent, sol.bias, 1.0, 30, 1e-3).unwrap();
        assert_eq!(style.iterations, 1);
        assert!(!style.diverged);
        assert!((style.style - DMatrix::<f64>::identity(2, 2)).norm() < 1e-9);
    }

    #[test]
    fn huge_lambda_freezes_style() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(15, 4, |_, _| rng.random_range(-2.0..2.0));
        let p = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0)).normalize();
        let sol = solve_style(&x, &p, 0.2, 1e12, 30, 1e-3).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!((sol.style - DMatrix::<f64>::identity(4, 4)).norm() < 1e-9);
    }

    #[test]
    fn small_lambda_divergence_is_detected() {
        // Scalar chain S: 1 -> -1 -> 3 -> -5 -> ... oscillates with growth.
        let x = DMatrix::from_row_slice(1, 1, &[2.0]);
        let p = DVector::from_row_slice(&[1.0]);
        let sol = solve_style(&x, &p, 0.0, 1.0, 30, 1e-3).unwrap();
        assert!(sol.diverged);
        // Best-so-far by objective is the identity start.
        assert_abs_diff_eq!(sol.style[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn style_deviation_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let x = DMatrix::from_fn(12, 5, |_, _| rng.random_range(-2.0..2.0));
            let sol = solve_consequent(&x, &DMatrix::identity(5, 5)).unwrap();
            let style = solve_style(&x, &sol.consequent, sol.bias, 10.0, 30, 1e-4).unwrap();
            let dev = &style.style - DMatrix::<f64>::identity(5, 5);
            let svd = dev.svd(false, false);
            let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
            sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sv.len() > 1 {
                assert!(sv[1] < 1e-8, "second singular value {}", sv[1]);
            }
        }
    }
}
