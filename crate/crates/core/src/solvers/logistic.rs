use nalgebra::{DMatrix, DVector};

use super::{FitConfig, FitReport, Features, LinearModel, Standardizer};
use crate::error::{Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy of `sigmoid(intercept + weights · x)` plus
/// `l2 * |weights|^2 / 2`, and its gradient `[d/d intercept, d/d weights...]`.
pub fn logistic_objective(
    features: &Features,
    labels: &[bool],
    intercept: f64,
    weights: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let n = features.n_rows() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; weights.len() + 1];
    for (i, &y) in labels.iter().enumerate() {
        let row = features.row(i);
        let eta = intercept + weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
        let y = f64::from(u8::from(y));
        value += softplus(eta) - y * eta;
        let r = sigmoid(eta) - y;
        grad[0] += r;
        for (g, x) in grad[1..].iter_mut().zip(row) {
            *g += r * x;
        }
    }
    value /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    value += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    for (g, w) in grad[1..].iter_mut().zip(weights) {
        *g += l2 * w;
    }
    (value, grad)
}

struct Problem<'a> {
    design: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    l2: f64,
}

impl Problem<'_> {
    fn value(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.design * beta;
        let n = self.y.len() as f64;
        let loss: f64 = eta
            .iter()
            .zip(self.y.iter())
            .map(|(e, y)| softplus(*e) - y * e)
            .sum::<f64>()
            / n;
        loss + 0.5 * self.l2 * beta.rows(1, beta.len() - 1).norm_squared()
    }

    /// Gradient and Hessian at `beta`.
    fn derivatives(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.y.len() as f64;
        let eta = self.design * beta;
        let p = eta.map(sigmoid);
        let resid = &p - self.y;
        let mut grad = self.design.tr_mul(&resid) / n;
        let sqrt_w = p.map(|p| (p * (1.0 - p)).max(0.0).sqrt() / n.sqrt());
        let weighted = DMatrix::from_fn(self.design.nrows(), self.design.ncols(), |i, j| {
            self.design[(i, j)] * sqrt_w[i]
        });
        let mut hess = weighted.tr_mul(&weighted);
        for j in 1..beta.len() {
            grad[j] += self.l2 * beta[j];
            hess[(j, j)] += self.l2;
        }
        (grad, hess)
    }
}

fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let scale = 1.0 + hess.diagonal().amax();
    let mut jitter = 0.0;
    loop {
        let mut h = hess.clone();
        for j in 0..h.nrows() {
            h[(j, j)] += jitter;
        }
        if let Some(chol) = h.cholesky() {
            return -chol.solve(grad);
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
        if jitter > scale {
            // gradient step as a last resort
            return -grad;
        }
    }
}

/// Fits `sigmoid(intercept + weights · x)` by damped Newton iterations on the
/// standardized problem. The intercept is never penalized.
///
/// Non-convergence (for example separable data with no penalty) is reported
/// through [`FitReport::converged`] rather than as an error.
pub fn fit_logistic(
    features: &Features,
    labels: &[bool],
    config: &FitConfig,
) -> Result<(LinearModel, FitReport)> {
    config.validate()?;
    if features.n_rows() == 0 {
        return Err(Error::InsufficientData("logistic fit needs at least one sample".into()));
    }
    if labels.len() != features.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.n_rows()
        )));
    }
    let scaler = Standardizer::fit(features);
    let design = scaler.design(features);
    let y = DVector::from_iterator(labels.len(), labels.iter().map(|&l| f64::from(u8::from(l))));
    let problem = Problem {
        design: &design,
        y: &y,
        l2: config.l2_penalty,
    };

    let mut beta = DVector::zeros(design.ncols());
    let mut value = problem.value(&beta);
    let mut report = FitReport {
        iterations: 0,
        converged: false,
        residual: f64::INFINITY,
    };
    for iter in 0..config.max_iter {
        let (grad, hess) = problem.derivatives(&beta);
        report.residual = grad.norm();
        report.iterations = iter;
        if report.residual < config.tol {
            report.converged = true;
            break;
        }
        let direction = newton_direction(&hess, &grad);
        let slope = grad.dot(&direction);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &beta + &direction * step;
            let v = problem.value(&candidate);
            if v <= value + 1e-4 * step * slope {
                beta = candidate;
                value = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no further decrease is representable
            let (grad, _) = problem.derivatives(&beta);
            report.residual = grad.norm();
            report.converged = report.residual < config.tol;
            report.iterations = iter + 1;
            break;
        }
        report.iterations = iter + 1;
    }
    if !report.converged && report.iterations == config.max_iter {
        let (grad, _) = problem.derivatives(&beta);
        report.residual = grad.norm();
        report.converged = report.residual < config.tol;
    }
    let model = scaler.unscale(&beta, features.names());
    if !model.is_finite() {
        return Err(Error::InvalidArgument("logistic fit diverged to non-finite coefficients".into()));
    }
    Ok((model, report))
}
