//! L1-penalized linear quantile regression.
//!
//! The objective `mean pinball_tau(y - Xb) + l1 * |w|_1` is split as
//! `r = y - Xb`, `z = w` and solved with ADMM: a fixed linear solve for the
//! coefficients, the closed-form proximal operator of the pinball loss for
//! the residuals and soft-thresholding for the weights. The intercept is
//! then set to the exact tau-quantile of the partial residuals.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FitConfig, FitReport, Features, LinearModel, Standardizer};
use crate::error::{Error, Result};

/// `tau * (y - pred)` when `y >= pred`, else `(1 - tau) * (pred - y)`.
pub fn pinball(y: f64, pred: f64, tau: f64) -> f64 {
    if y >= pred {
        tau * (y - pred)
    } else {
        (1.0 - tau) * (pred - y)
    }
}

/// Order-statistic index `ceil(q * n)` clamped to `1..=n`, with a small guard
/// so products such as `0.9 * 10` are not pushed up by rounding error.
pub(crate) fn ceil_rank(q: f64, n: usize) -> usize {
    ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// The `ceil(tau * n)`-th smallest value: a minimizer of the mean pinball loss
/// over constants.
pub fn lower_quantile(values: &[f64], tau: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[ceil_rank(tau, sorted.len()) - 1]
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")))
    }
}

/// Mean pinball loss of `model` plus `l1` times the L1 norm of its weights
/// measured in standardized units (each weight times its column's standard
/// deviation on `features`), i.e. the quantity [`fit_quantile`] minimizes.
pub fn quantile_objective(
    features: &Features,
    targets: &[f64],
    tau: f64,
    model: &LinearModel,
    l1: f64,
) -> f64 {
    let scaler = Standardizer::fit(features);
    let loss = (0..features.n_rows())
        .map(|i| pinball(targets[i], model.predict(features.row(i)), tau))
        .sum::<f64>()
        / features.n_rows() as f64;
    let penalty: f64 = model
        .weights
        .iter()
        .zip(&scaler.scales)
        .map(|(w, s)| (w * s).abs())
        .sum();
    loss + l1 * penalty
}

fn standardized_objective(design: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, tau: f64, l1: f64) -> f64 {
    let pred = design * beta;
    let loss = y
        .iter()
        .zip(pred.iter())
        .map(|(y, p)| pinball(*y, *p, tau))
        .sum::<f64>()
        / y.len() as f64;
    loss + l1 * beta.rows(1, beta.len() - 1).lp_norm(1)
}

/// Sets the intercept to the exact minimizer given the weights.
fn polish_intercept(design: &DMatrix<f64>, y: &DVector<f64>, beta: &mut DVector<f64>, tau: f64) {
    beta[0] = 0.0;
    let partial = design * &*beta;
    let resid: Vec<f64> = y.iter().zip(partial.iter()).map(|(y, p)| y - p).collect();
    beta[0] = lower_quantile(&resid, tau);
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn check_inputs(features: &Features, targets: &[f64], tau: f64, config: &FitConfig) -> Result<()> {
    config.validate()?;
    check_tau(tau)?;
    let n = features.n_rows();
    if n == 0 {
        return Err(Error::InsufficientData("quantile fit needs at least one sample".into()));
    }
    if targets.len() != n {
        return Err(Error::InvalidArgument(format!("{} targets for {n} feature rows", targets.len())));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("quantile targets must be finite".into()));
    }
    Ok(())
}

/// Fits the linear `tau`-quantile of `targets` given `features`, with an
/// L1 penalty `config.l1_penalty` on the (standardized) weights.
pub fn fit_quantile(
    features: &Features,
    targets: &[f64],
    tau: f64,
    config: &FitConfig,
) -> Result<(LinearModel, FitReport)> {
    check_inputs(features, targets, tau, config)?;
    let problem = Problem::new(features, targets, tau)?;
    let (model, report, _) = problem.solve(config.l1_penalty, config, None);
    Ok((model, report))
}

/// Standardized design and factorization, shared by every penalty fitted on
/// the same rows.
struct Problem<'a> {
    features: &'a Features,
    scaler: Standardizer,
    design: DMatrix<f64>,
    y: DVector<f64>,
    tau: f64,
    intercept_only: DVector<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

/// ADMM iterate, reusable as a warm start for a neighbouring penalty.
struct AdmmState {
    beta: DVector<f64>,
    r: DVector<f64>,
    z: DVector<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
    sigma: f64,
}

const RELAXATION: f64 = 1.6;

impl<'a> Problem<'a> {
    fn new(features: &'a Features, targets: &[f64], tau: f64) -> Result<Self> {
        let scaler = Standardizer::fit(features);
        let design = scaler.design(features);
        let y = DVector::from_column_slice(targets);
        let p = design.ncols();
        let mut intercept_only = DVector::zeros(p);
        polish_intercept(&design, &y, &mut intercept_only, tau);
        let chol = if p == 1 {
            None
        } else {
            // (A^T A + E^T E) is constant across iterations and penalties
            let mut gram = design.tr_mul(&design);
            for j in 1..p {
                gram[(j, j)] += 1.0;
            }
            Some(
                gram.cholesky()
                    .ok_or_else(|| Error::InvalidArgument("singular quantile design".into()))?,
            )
        };
        Ok(Self {
            features,
            scaler,
            design,
            y,
            tau,
            intercept_only,
            chol,
        })
    }

    fn solve(&self, l1: f64, config: &FitConfig, warm: Option<AdmmState>) -> (LinearModel, FitReport, Option<AdmmState>) {
        let Some(chol) = &self.chol else {
            let report = FitReport {
                iterations: 0,
                converged: true,
                residual: 0.0,
            };
            return (self.scaler.unscale(&self.intercept_only, self.features.names()), report, None);
        };
        let (design, y, tau) = (&self.design, &self.y, self.tau);
        let n = design.nrows();
        let p = design.ncols();
        let nf = n as f64;
        let mut state = warm.unwrap_or_else(|| AdmmState {
            beta: self.intercept_only.clone(),
            r: y - design * &self.intercept_only,
            z: DVector::zeros(p - 1),
            u: DVector::zeros(n),
            v: DVector::zeros(p - 1),
            sigma: 1.0 / nf,
        });
        let AdmmState { beta, r, z, u, v, sigma } = &mut state;
        let eps_rel = 1e-5;
        let dim = ((n + p) as f64).sqrt();
        let mut report = FitReport {
            iterations: config.max_iter,
            converged: false,
            residual: f64::INFINITY,
        };

        for iter in 0..config.max_iter {
            // coefficient update
            let mut rhs = design.tr_mul(&(y - &*r - &*u));
            for j in 1..p {
                rhs[j] += z[j - 1] - v[j - 1];
            }
            *beta = chol.solve(&rhs);
            let fitted = design * &*beta;

            // residual update (over-relaxed): prox of pinball / (n sigma)
            let kappa = 1.0 / (nf * *sigma);
            let r_old = r.clone();
            let relaxed: DVector<f64> = RELAXATION * &fitted + (1.0 - RELAXATION) * (y - &r_old);
            for i in 0..n {
                let xi = y[i] - relaxed[i] - u[i];
                r[i] = if xi > tau * kappa {
                    xi - tau * kappa
                } else if xi < -(1.0 - tau) * kappa {
                    xi + (1.0 - tau) * kappa
                } else {
                    0.0
                };
            }
            // weight update
            let z_old = z.clone();
            let mut relaxed_w = DVector::zeros(p - 1);
            for j in 1..p {
                relaxed_w[j - 1] = RELAXATION * beta[j] + (1.0 - RELAXATION) * z_old[j - 1];
                z[j - 1] = soft_threshold(relaxed_w[j - 1] + v[j - 1], l1 / *sigma);
            }
            // dual updates
            *u += &relaxed + &*r - y;
            *v += &relaxed_w - &*z;

            let primal_r = &fitted + &*r - y;
            let primal_z = beta.rows(1, p - 1) - &*z;
            let primal = (primal_r.norm_squared() + primal_z.norm_squared()).sqrt();
            let scale_pri = fitted.norm().max(r.norm()).max(y.norm());
            let primal_ok = primal <= dim * config.tol + eps_rel * scale_pri;
            let adapt = iter % 10 == 9;
            if !primal_ok && !adapt {
                continue;
            }
            let dr = &*r - &r_old;
            let mut dual_vec = design.tr_mul(&dr);
            for j in 1..p {
                dual_vec[j] -= z[j - 1] - z_old[j - 1];
            }
            let dual = *sigma * dual_vec.norm();
            let mut aty = design.tr_mul(&*u);
            for j in 1..p {
                aty[j] += v[j - 1];
            }
            let scale_dual = *sigma * aty.norm();
            report.residual = primal.max(dual);
            if primal_ok && dual <= dim * config.tol + eps_rel * scale_dual {
                report.iterations = iter + 1;
                report.converged = true;
                break;
            }
            if adapt {
                if primal > 10.0 * dual {
                    *sigma *= 2.0;
                    *u /= 2.0;
                    *v /= 2.0;
                } else if dual > 10.0 * primal {
                    *sigma /= 2.0;
                    *u *= 2.0;
                    *v *= 2.0;
                }
            }
        }

        let mut solution = self.intercept_only.clone();
        for j in 1..p {
            solution[j] = state.z[j - 1];
        }
        polish_intercept(design, y, &mut solution, tau);
        let candidate = standardized_objective(design, y, &solution, tau, l1);
        let baseline = standardized_objective(design, y, &self.intercept_only, tau, l1);
        let best = if candidate < baseline - 1e-12 {
            solution
        } else {
            self.intercept_only.clone()
        };
        (self.scaler.unscale(&best, self.features.names()), report, Some(state))
    }
}

/// Outcome of penalty selection: the chosen value and the mean held-out
/// pinball loss of every grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub penalty: f64,
    pub mean_losses: Vec<(f64, f64)>,
}

const CV_TIE_TOL: f64 = 1e-9;

/// Chooses the L1 penalty from `grid` minimizing `k_folds`-fold held-out
/// pinball loss. Losses within a small tolerance of the best count as ties
/// and resolve toward the larger penalty.
pub fn cross_validate_penalty(
    features: &Features,
    targets: &[f64],
    tau: f64,
    grid: &[f64],
    k_folds: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<CvOutcome> {
    check_inputs(features, targets, tau, config)?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("penalty grid is empty".into()));
    }
    if k_folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k_folds}")));
    }
    let n = features.n_rows();
    if n < k_folds {
        return Err(Error::InsufficientData(format!("{n} samples for {k_folds} folds")));
    }
    if grid.len() == 1 {
        return Ok(CvOutcome {
            penalty: grid[0],
            mean_losses: Vec::new(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds: Vec<(Vec<usize>, Vec<usize>)> = (0..k_folds)
        .map(|f| {
            let (held, train): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
                order.iter().copied().enumerate().partition(|(pos, _)| pos % k_folds == f);
            (
                train.into_iter().map(|(_, i)| i).collect(),
                held.into_iter().map(|(_, i)| i).collect(),
            )
        })
        .collect();

    // each fold walks the grid from the largest penalty down, warm-starting
    // every fit from the previous one
    let mut path: Vec<usize> = (0..grid.len()).collect();
    path.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
    let per_fold: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|(train, held)| {
            let x_train = features.select_rows(train);
            let y_train: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
            let problem = Problem::new(&x_train, &y_train, tau)?;
            let mut losses = vec![0.0; grid.len()];
            let mut warm = None;
            for &g in &path {
                let (model, _, state) = problem.solve(grid[g], config, warm.take());
                warm = state;
                losses[g] = held
                    .iter()
                    .map(|&i| pinball(targets[i], model.predict(features.row(i)), tau))
                    .sum::<f64>();
            }
            Ok(losses)
        })
        .collect::<Result<_>>()?;
    let fold_losses: Vec<f64> = (0..grid.len())
        .flat_map(|g| per_fold.iter().map(move |l| l[g]))
        .collect();

    let mean_losses: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(g, &pen)| {
            let total: f64 = fold_losses[g * k_folds..(g + 1) * k_folds].iter().sum();
            (pen, total / n as f64)
        })
        .collect();
    let best_loss = mean_losses.iter().map(|&(_, l)| l).fold(f64::INFINITY, f64::min);
    let tol = CV_TIE_TOL * (1.0 + best_loss.abs());
    let penalty = mean_losses
        .iter()
        .filter(|&&(_, l)| l <= best_loss + tol)
        .map(|&(p, _)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CvOutcome {
        penalty,
        mean_losses,
    })
}
