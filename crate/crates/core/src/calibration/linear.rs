use super::{CalibratedScorer, ClaimSet};
use crate::error::{Error, Result};
use crate::solvers::{fit_logistic, FitConfig, Features};

fn logistic_config(n: usize, c: f64) -> Result<FitConfig> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("logistic C must be positive, got {c}")));
    }
    Ok(FitConfig {
        max_iter: 1000,
        tol: 1e-6,
        l1_penalty: 0.0,
        l2_penalty: 1.0 / (c * n as f64),
    })
}

fn fit(claims: &ClaimSet, c: f64, with_groups: bool) -> Result<CalibratedScorer> {
    if claims.is_empty() {
        return Err(Error::InsufficientData("logistic calibration needs at least one claim".into()));
    }
    let groups = if with_groups { claims.groups().to_vec() } else { Vec::new() };
    let n = claims.len();
    let width = groups.len() + 1;
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        data.push(claims.scores()[i]);
        for g in 0..groups.len() {
            data.push(f64::from(u8::from(claims.mask(g)[i])));
        }
    }
    let names = std::iter::once("score".to_string())
        .chain(groups.iter().map(|g| g.name.clone()))
        .collect();
    let features = Features::new(n, names, data)?;
    let (model, report) = fit_logistic(&features, claims.labels(), &logistic_config(n, c)?)?;
    if !report.converged {
        log::warn!(
            "logistic calibration stopped after {} iterations (gradient norm {:.3e})",
            report.iterations,
            report.residual
        );
    }
    Ok(CalibratedScorer::LinearLogistic { model, groups })
}

/// Platt scaling: `sigmoid(a + b * score)` fitted by penalized cross-entropy.
/// `c` is the inverse L2 strength (penalty `|b|^2 / (2 c n)`).
pub fn platt_scaling(claims: &ClaimSet, c: f64) -> Result<CalibratedScorer> {
    fit(claims, c, false)
}

/// Group-conditional unbiased logistic regression: Platt scaling with one
/// extra indicator feature per group of the claim set.
pub fn gculr(claims: &ClaimSet, c: f64) -> Result<CalibratedScorer> {
    fit(claims, c, true)
}
