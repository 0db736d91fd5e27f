//! Linear models on an ℓ₂ ball, the hinge loss, and the defender's trainer.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, LabeledPoint};
use crate::error::{Error, Result};
use crate::vecops;

/// Parameter vector constrained to ‖θ‖₂ ≤ ρ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub rho: f64,
    pub theta: Vec<f64>,
}

impl LinearModel {
    pub fn new(theta: Vec<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        let nrm = vecops::norm(&theta);
        if nrm > rho * (1.0 + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "‖θ‖ = {nrm} exceeds radius {rho}"
            )));
        }
        Ok(Self { rho, theta })
    }

    pub fn zero(d: usize, rho: f64) -> Result<Self> {
        Self::new(vec![0.0; d], rho)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        vecops::dot(&self.theta, x)
    }
}

/// `max(0, 1 − y⟨θ,x⟩)` without dimension checks.
#[inline]
pub(crate) fn hinge(theta: &[f64], x: &[f64], y: Label) -> f64 {
    (1.0 - y.sign() * vecops::dot(theta, x)).max(0.0)
}

pub fn hinge_loss(model: &LinearModel, p: &LabeledPoint) -> Result<f64> {
    Error::check_dim(model.dim(), p.dim())?;
    Ok(hinge(&model.theta, &p.x, p.y))
}

/// `−y·x` inside the margin, zero otherwise (including exactly on it).
pub fn hinge_subgradient(model: &LinearModel, p: &LabeledPoint) -> Result<Vec<f64>> {
    Error::check_dim(model.dim(), p.dim())?;
    if 1.0 - p.y.sign() * model.predict(&p.x) > 0.0 {
        Ok(vecops::scale(-p.y.sign(), &p.x))
    } else {
        Ok(vec![0.0; p.dim()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub avg_hinge: f64,
    pub zero_one: f64,
    pub n_points: usize,
}

/// Average hinge loss and 0/1 error; a zero score counts as a mistake.
pub fn evaluate(model: &LinearModel, data: &Dataset) -> Result<LossReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Error::check_dim(model.dim(), data.dim())?;
    let mut hinge_sum = 0.0;
    let mut errors = 0usize;
    for p in data {
        let margin = p.y.sign() * model.predict(&p.x);
        hinge_sum += (1.0 - margin).max(0.0);
        if margin <= 0.0 {
            errors += 1;
        }
    }
    let n = data.len();
    Ok(LossReport {
        avg_hinge: hinge_sum / n as f64,
        zero_one: errors as f64 / n as f64,
        n_points: n,
    })
}

/// Sum of hinge losses over `points`.
pub(crate) fn total_hinge<'a>(theta: &[f64], points: impl IntoIterator<Item = &'a LabeledPoint>) -> f64 {
    points.into_iter().map(|p| hinge(theta, &p.x, p.y)).sum()
}

/// Adds the sum of hinge subgradients over `points` (scaled by `weight`) into `out`.
pub(crate) fn accumulate_subgradient<'a>(
    theta: &[f64],
    points: impl IntoIterator<Item = &'a LabeledPoint>,
    weight: f64,
    out: &mut [f64],
) {
    for p in points {
        let s = p.y.sign();
        if 1.0 - s * vecops::dot(theta, &p.x) > 0.0 {
            vecops::axpy(-s * weight, &p.x, out);
        }
    }
}

/// Projection onto the ℓ₂ ball of radius `rho`.
pub(crate) fn project_ball(theta: &mut [f64], rho: f64) {
    let nrm = vecops::norm(theta);
    if nrm > rho {
        let s = rho / nrm;
        theta.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iter: usize,
    /// Stop once the primal-dual gap of the objective falls below this.
    pub tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iter: 4000,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearModel,
    /// Objective at the returned model.
    pub objective: f64,
    /// Certified lower bound on the optimal objective (dual value).
    pub dual_bound: f64,
    pub iterations: usize,
    /// False when `max_iter` was hit before the gap reached `tol`.
    pub converged: bool,
}

/// A weighted hinge objective `(1/Z)·Σ wᵢ ℓ(θ; xᵢ, yᵢ)` where the points come
/// in two groups with a shared weight per group.
#[derive(Debug, Clone, Copy)]
pub struct WeightedObjective<'a> {
    pub primary: &'a [LabeledPoint],
    pub extra: &'a [LabeledPoint],
    pub extra_weight: f64,
    pub normalizer: f64,
}

impl WeightedObjective<'_> {
    pub fn value(&self, theta: &[f64]) -> f64 {
        (total_hinge(theta, self.primary) + self.extra_weight * total_hinge(theta, self.extra))
            / self.normalizer
    }

    /// Returns the objective value and writes a subgradient into `grad`;
    /// also returns the loss-active mass `(1/Z)Σ_{margin<1} wᵢ`.
    fn value_and_subgradient(&self, theta: &[f64], grad: &mut [f64]) -> (f64, f64) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        let mut active = 0.0;
        for (pts, w) in [(self.primary, 1.0), (self.extra, self.extra_weight)] {
            for p in pts {
                let s = p.y.sign();
                let slack = 1.0 - s * vecops::dot(theta, &p.x);
                if slack > 0.0 {
                    value += w * slack;
                    active += w;
                    vecops::axpy(-s * w, &p.x, grad);
                }
            }
        }
        let z = self.normalizer;
        grad.iter_mut().for_each(|g| *g /= z);
        (value / z, active / z)
    }

    fn gradient_bound(&self) -> f64 {
        let s: f64 = self.primary.iter().map(|p| vecops::norm(&p.x)).sum::<f64>()
            + self.extra_weight * self.extra.iter().map(|p| vecops::norm(&p.x)).sum::<f64>();
        s / self.normalizer
    }
}

/// Projected subgradient descent with steps `∝ 1/√t`, running averages and
/// best-iterate tracking.
///
/// The averaged subgradients define a dual point `α`, so
/// `(1/Z)Σαᵢ − ρ‖(1/Z)Σαᵢyᵢxᵢ‖` is a valid lower bound on the optimum; the
/// loop stops when the best objective is within `tol` of it. The returned
/// objective never exceeds the objective at `init`.
pub fn train_weighted(
    obj: &WeightedObjective<'_>,
    d: usize,
    rho: f64,
    init: Option<&[f64]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    if obj.primary.is_empty() && obj.extra.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut theta = match init {
        Some(t) => {
            Error::check_dim(d, t.len())?;
            let mut t = t.to_vec();
            project_ball(&mut t, rho);
            t
        }
        None => vec![0.0; d],
    };
    let gbound = obj.gradient_bound();
    if gbound == 0.0 {
        // Every point is the origin: the objective is constant.
        let value = obj.value(&theta);
        return Ok(TrainOutcome {
            model: LinearModel::new(theta, rho)?,
            objective: value,
            dual_bound: value,
            iterations: 0,
            converged: true,
        });
    }
    let step0 = rho / gbound;

    let mut grad = vec![0.0; d];
    let mut best = theta.clone();
    let mut best_val = f64::INFINITY;
    // step-weighted averages of iterates and of subgradients
    let mut avg_theta = vec![0.0; d];
    let mut avg_grad = vec![0.0; d];
    let mut avg_active = 0.0;
    let mut weight_sum = 0.0;
    let mut dual_bound = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for k in 1..=config.max_iter.max(1) {
        iterations = k;
        let (val, active) = obj.value_and_subgradient(&theta, &mut grad);
        if val < best_val {
            best_val = val;
            best.copy_from_slice(&theta);
        }
        let step = step0 / (k as f64).sqrt();
        weight_sum += step;
        let a = step / weight_sum;
        for j in 0..d {
            avg_theta[j] += a * (theta[j] - avg_theta[j]);
            avg_grad[j] += a * (grad[j] - avg_grad[j]);
        }
        avg_active += a * (active - avg_active);

        if k % 8 == 0 || k == config.max_iter {
            let avg_val = obj.value(&avg_theta);
            if avg_val < best_val {
                best_val = avg_val;
                best.copy_from_slice(&avg_theta);
            }
            dual_bound = dual_bound.max(avg_active - rho * vecops::norm(&avg_grad));
            if best_val - dual_bound <= config.tol {
                converged = true;
                break;
            }
        }
        if vecops::norm(&grad) == 0.0 {
            // θ is a minimizer (zero loss); the gap check confirms below.
            dual_bound = dual_bound.max(0.0);
            if best_val <= config.tol {
                converged = true;
                break;
            }
        }
        vecops::axpy(-step, &grad, &mut theta);
        project_ball(&mut theta, rho);
    }
    if !converged {
        log::debug!(
            "train: no convergence after {iterations} iterations (gap {:.3e})",
            best_val - dual_bound
        );
    }
    Ok(TrainOutcome {
        model: LinearModel::new(best, rho)?,
        objective: best_val,
        dual_bound,
        iterations,
        converged,
    })
}

/// Minimizes the average hinge loss of `data` over ‖θ‖₂ ≤ ρ.
pub fn train_erm(data: &Dataset, rho: f64, config: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let obj = WeightedObjective {
        primary: data.points(),
        extra: &[],
        extra_weight: 0.0,
        normalizer: data.len() as f64,
    };
    train_weighted(&obj, data.dim(), rho, None, config)
}

/// Uniform-convergence bound `ρR(√(4/n) + √(log(1/δ)/(2n)))` for 1-Lipschitz
/// margin losses with ‖x‖₂ ≤ R.
pub fn generalization_bound(n: usize, rho: f64, delta: f64, radius: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must be in (0,1), got {delta}")));
    }
    if !(rho > 0.0 && radius > 0.0) {
        return Err(Error::InvalidArgument("rho and R must be positive".into()));
    }
    let n = n as f64;
    Ok(rho * radius * ((4.0 / n).sqrt() + ((1.0 / delta).ln() / (2.0 * n)).sqrt()))
}
