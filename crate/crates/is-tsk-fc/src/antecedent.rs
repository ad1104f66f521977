//! Rule antecedents: Gaussian membership parameters estimated from fuzzy
//! c-means, firing strengths, and the stacked antecedent matrix the
//! consequent/style subproblems operate on.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::FcmResult;

/// Consequent order: constant-only or affine in the input features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Zero,
    First,
}

impl Order {
    /// Length of the extended input `x_e`.
    pub fn extended_len(self, dim: usize) -> usize {
        match self {
            Order::Zero => 1,
            Order::First => 1 + dim,
        }
    }
}

/// Widths are floored here so rules dominated by near-duplicate samples do
/// not produce divisions that blow up.
pub const WIDTH_FLOOR: f64 = 1e-4;

/// Gaussian IF-part parameters for all rules.
#[derive(Debug, Clone)]
pub struct AntecedentModel {
    centers: DMatrix<f64>,
    widths: DMatrix<f64>,
    order: Order,
    scale_h: f64,
}

/// Per-sample antecedent rows plus the normalized firing levels they came from.
#[derive(Debug, Clone)]
pub struct AntecedentMatrix {
    /// `N x D` with `D = R(1+d)` for first order, `D = R` for zero order.
    pub x_g: DMatrix<f64>,
    /// `N x R` normalized firing strengths; each row sums to 1.
    pub firings: DMatrix<f64>,
}

/// Single Gaussian membership value.
pub fn membership(x: f64, center: f64, delta: f64) -> f64 {
    let z = (x - center) / delta;
    (-0.5 * z * z).exp()
}

/// Estimates per-rule centers and widths from FCM memberships.
///
/// Centers are membership-weighted means. Widths use the standard-deviation
/// form `h * sqrt(sum_j u_jr (x_ji - c_i)^2 / sum_j u_jr)`, floored at
/// [`WIDTH_FLOOR`]. (The signed-deviation width formula sometimes quoted for
/// this construction is identically zero by the definition of the weighted
/// mean, so the variance form is what gets implemented.)
pub fn estimate(
    features: &DMatrix<f64>,
    fcm: &FcmResult,
    rules: usize,
    scale_h: f64,
    order: Order,
) -> Result<AntecedentModel> {
    let r_fcm = fcm.centers.nrows();
    if r_fcm != rules {
        return Err(Error::Config(format!(
            "rule count {rules} does not match the {r_fcm}-cluster fcm result"
        )));
    }
    if scale_h <= 0.0 {
        return Err(Error::Config(format!("scale h must be positive, got {scale_h}")));
    }
    let (n, d) = (features.nrows(), features.ncols());
    if fcm.memberships.nrows() != n {
        return Err(Error::Config(
            "fcm result computed on a different number of samples".into(),
        ));
    }

    let mut centers = DMatrix::<f64>::zeros(rules, d);
    let mut widths = DMatrix::<f64>::zeros(rules, d);
    for r in 0..rules {
        let weight: f64 = (0..n).map(|j| fcm.memberships[(j, r)]).sum();
        if weight <= 0.0 {
            return Err(Error::Config(format!(
                "rule {r}: all memberships are zero (collapsed fcm run)"
            )));
        }
        for i in 0..d {
            let mut mean = 0.0;
            for j in 0..n {
                mean += fcm.memberships[(j, r)] * features[(j, i)];
            }
            mean /= weight;
            let mut var = 0.0;
            for j in 0..n {
                let diff = features[(j, i)] - mean;
                var += fcm.memberships[(j, r)] * diff * diff;
            }
            var /= weight;
            centers[(r, i)] = mean;
            widths[(r, i)] = (scale_h * var.sqrt()).max(WIDTH_FLOOR);
        }
    }

    Ok(AntecedentModel {
        centers,
        widths,
        order,
        scale_h,
    })
}

impl AntecedentModel {
    pub fn rule_count(&self) -> usize {
        self.centers.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn scale_h(&self) -> f64 {
        self.scale_h
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn widths(&self) -> &DMatrix<f64> {
        &self.widths
    }

    /// Width of one antecedent row.
    pub fn output_dim(&self) -> usize {
        self.rule_count() * self.order.extended_len(self.input_dim())
    }

    /// Normalized firing strengths for one sample.
    ///
    /// The per-rule product of Gaussian memberships underflows for a few tens
    /// of features, so the products are evaluated as log sums and shifted by
    /// the maximum before exponentiating. The result always sums to 1; if
    /// every shifted weight still vanished the strengths fall back to uniform.
    pub fn normalized_firings(&self, x: &RowDVector<f64>) -> DVector<f64> {
        let r = self.rule_count();
        let mut logs = DVector::<f64>::zeros(r);
        for rule in 0..r {
            let mut acc = 0.0;
            for i in 0..self.input_dim() {
                let z = (x[i] - self.centers[(rule, i)]) / self.widths[(rule, i)];
                acc -= 0.5 * z * z;
            }
            logs[rule] = acc;
        }
        let shift = logs.max();
        let mut sum = 0.0;
        let mut out = DVector::<f64>::zeros(r);
        for rule in 0..r {
            let w = (logs[rule] - shift).exp();
            out[rule] = w;
            sum += w;
        }
        if sum > 0.0 && sum.is_finite() {
            out /= sum;
        } else {
            out.fill(1.0 / r as f64);
        }
        out
    }

    /// One antecedent row: the per-rule extended inputs scaled by their
    /// normalized firing strengths and concatenated.
    pub fn x_g_row(&self, x: &RowDVector<f64>) -> DVector<f64> {
        let firings = self.normalized_firings(x);
        let step = self.order.extended_len(self.input_dim());
        let mut row = DVector::<f64>::zeros(self.output_dim());
        for rule in 0..self.rule_count() {
            let base = rule * step;
            row[base] = firings[rule];
            if self.order == Order::First {
                for i in 0..self.input_dim() {
                    row[base + 1 + i] = firings[rule] * x[i];
                }
            }
        }
        row
    }

    /// Unit vector supported on the per-rule bias slots.
    ///
    /// Because normalized firings sum to 1, `X_g` maps this direction to a
    /// constant for every possible sample; it spans the decision directions
    /// that cannot discriminate anything.
    pub fn flat_direction(&self) -> DVector<f64> {
        let step = self.order.extended_len(self.input_dim());
        let r = self.rule_count();
        let mut v = DVector::<f64>::zeros(self.output_dim());
        let w = 1.0 / (r as f64).sqrt();
        for rule in 0..r {
            v[rule * step] = w;
        }
        v
    }
}

/// Builds the full antecedent matrix for a dataset.
pub fn build_matrix(model: &AntecedentModel, features: &DMatrix<f64>) -> Result<AntecedentMatrix> {
    if features.ncols() != model.input_dim() {
        return Err(Error::Config(format!(
            "data dimension {} does not match antecedent model dimension {}",
            features.ncols(),
            model.input_dim()
        )));
    }
    let n = features.nrows();
    let mut x_g = DMatrix::<f64>::zeros(n, model.output_dim());
    let mut firings = DMatrix::<f64>::zeros(n, model.rule_count());
    for j in 0..n {
        let x = RowDVector::from_iterator(features.ncols(), features.row(j).iter().copied());
        let f = model.normalized_firings(&x);
        firings.set_row(j, &f.transpose());
        x_g.set_row(j, &model.x_g_row(&x).transpose());
    }
    Ok(AntecedentMatrix { x_g, firings })
}

/// Supervised least-squares consequents `(X_g^T X_g)^-1 X_g^T y`.
///
/// This is the classic regression route for TSK consequents. It plays no part
/// in clustering; it exists to validate the antecedent pipeline end to end
/// against targets with a known solution. Rank-deficient normal equations
/// fall back to a tiny ridge (1e-8 on the diagonal).
pub fn least_squares_consequents(x_g: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x_g.nrows() != y.len() {
        return Err(Error::Config(format!(
            "{} rows vs {} targets",
            x_g.nrows(),
            y.len()
        )));
    }
    let gram = x_g.transpose() * x_g;
    let rhs = x_g.transpose() * y;
    if let Some(chol) = nalgebra::Cholesky::new(gram.clone()) {
        return Ok(chol.solve(&rhs));
    }
    let ridge = &gram + DMatrix::identity(gram.nrows(), gram.ncols()) * 1e-8;
    nalgebra::Cholesky::new(ridge)
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Solver("normal equations unsolvable even with ridge".into()))
}
