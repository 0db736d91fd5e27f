//! Worst-case single points against a fixed sphere/slab defense.
//!
//! Maximizing the hinge loss `1 − y⟨θ,x⟩` over the feasible set of class `y`
//! is minimizing the linear function `⟨c, x⟩`, `c = yθ`, over the intersection
//! of a ball and a slab. Writing `x = μ_y + α·v̂ + w` with `w ⊥ v̂`, the optimal
//! `w` for a fixed `α` points along `−c⊥` with length `√(r² − α²)`, which
//! leaves a convex problem in `α` alone; its minimizer is the sphere-only
//! optimum `α = −c∥·r/‖c‖` clipped to the slab.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledPoint};
use crate::defense::{SphereSlabParams, DEFAULT_MEMBERSHIP_TOL};
use crate::error::{Error, Result};
use crate::model::{hinge, LinearModel};
use crate::vecops;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOptimum {
    pub y: Label,
    pub x: Vec<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Best point found; `None` only when integer rounding found nothing feasible.
    pub point: Option<LabeledPoint>,
    pub loss: f64,
    /// Loss of the continuous maximizer (an upper bound on `loss`).
    pub relaxed_loss: f64,
    pub relaxed_point: LabeledPoint,
    /// Continuous optimum per class, positive class first.
    pub per_class: [ClassOptimum; 2],
}

/// Minimizer of `⟨c, x⟩` over the class-`y` feasible set.
pub fn minimize_linear(params: &SphereSlabParams, y: Label, c: &[f64]) -> Result<Vec<f64>> {
    Error::check_dim(params.dim(), c.len())?;
    let mu = params.mu(y);
    let cn = vecops::norm(c);
    if cn == 0.0 {
        return Ok(mu.to_vec());
    }
    if !params.use_sphere {
        return Err(Error::Unbounded(
            "linear objective over a slab without a sphere constraint".into(),
        ));
    }
    let r = params.radius(y);
    let v = params.slab_direction(y);
    let vn = vecops::norm(&v);
    if !params.use_slab || vn == 0.0 {
        // ball only
        let mut x = mu.to_vec();
        vecops::axpy(-r / cn, c, &mut x);
        return Ok(x);
    }
    let vhat = vecops::scale(1.0 / vn, &v);
    let bound = r.min(params.half_width(y) / vn);
    let c_par = vecops::dot(c, &vhat);
    let mut c_perp = c.to_vec();
    vecops::axpy(-c_par, &vhat, &mut c_perp);
    let pn = vecops::norm(&c_perp);

    let mut x = mu.to_vec();
    if pn <= 1e-15 * cn {
        let alpha = -bound * c_par.signum();
        vecops::axpy(alpha, &vhat, &mut x);
    } else {
        let alpha = (-c_par * r / cn).clamp(-bound, bound);
        let w = (r * r - alpha * alpha).max(0.0).sqrt();
        vecops::axpy(alpha, &vhat, &mut x);
        vecops::axpy(-w / pn, &c_perp, &mut x);
    }
    Ok(x)
}

/// Exact maximizer of the hinge loss over the feasible set, trying both
/// labels. Ties go to the positive class.
pub fn max_loss_continuous(params: &SphereSlabParams, model: &LinearModel) -> Result<OracleResult> {
    Error::check_dim(params.dim(), model.dim())?;
    let per_class = Label::BOTH.map(|y| -> Result<ClassOptimum> {
        let c = vecops::scale(y.sign(), &model.theta);
        let x = minimize_linear(params, y, &c)?;
        let loss = hinge(&model.theta, &x, y);
        Ok(ClassOptimum { y, x, loss })
    });
    let [pos, neg] = per_class;
    let per_class = [pos?, neg?];
    let best = if per_class[0].loss >= per_class[1].loss { &per_class[0] } else { &per_class[1] };
    let point = LabeledPoint::new(best.x.clone(), best.y);
    Ok(OracleResult {
        point: Some(point.clone()),
        loss: best.loss,
        relaxed_loss: best.loss,
        relaxed_point: point,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingConfig {
    /// Randomized roundings drawn per class.
    pub budget: usize,
    pub seed: u64,
    /// Optional per-coordinate upper bound on counts.
    pub caps: Option<Vec<f64>>,
}

/// Relaxed bound plus the best feasible integer point among randomized
/// roundings of each class's continuous optimum.
///
/// Each coordinate rounds up with probability equal to its fractional part;
/// infeasible samples are repaired by stepping coordinates toward the
/// centroid, largest violation contribution first, or discarded.
pub fn max_loss_integer(
    params: &SphereSlabParams,
    model: &LinearModel,
    config: &RoundingConfig,
) -> Result<OracleResult> {
    let relaxed = max_loss_continuous(params, model)?;
    if let Some(caps) = &config.caps {
        Error::check_dim(params.dim(), caps.len())?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(f64, LabeledPoint)> = None;
    for opt in &relaxed.per_class {
        for _ in 0..config.budget {
            let mut x: Vec<f64> = opt
                .x
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let fl = v.floor();
                    let up = rng.random_bool((v - fl).clamp(0.0, 1.0));
                    let mut r = if up { fl + 1.0 } else { fl };
                    if let Some(caps) = &config.caps {
                        r = r.min(caps[j]);
                    }
                    r.max(0.0)
                })
                .collect();
            if !repair_integer_point(params, opt.y, &mut x) {
                continue;
            }
            let loss = hinge(&model.theta, &x, opt.y);
            if best.as_ref().is_none_or(|(l, _)| loss > *l) {
                best = Some((loss, LabeledPoint::new(x, opt.y)));
            }
        }
    }
    Ok(match best {
        Some((loss, point)) => OracleResult {
            point: Some(point),
            loss,
            ..relaxed
        },
        None => OracleResult {
            point: None,
            loss: 0.0,
            ..relaxed
        },
    })
}

/// Moves an integer point toward `μ_y` one unit at a time until it satisfies
/// the sphere/slab constraints. Returns false if no move can help.
pub fn repair_integer_point(params: &SphereSlabParams, y: Label, x: &mut [f64]) -> bool {
    let mu = params.mu(y);
    let v = params.slab_direction(y);
    let mut contrib = vec![0.0; x.len()];
    // each move strictly shrinks Σ|xᵢ − μᵢ|, so this bound is never reached
    // for sane inputs
    let max_steps = 10_000 + 4 * x.len() * 64;
    for _ in 0..max_steps {
        let (dist, slab) = params.constraint_values(x, y);
        let sphere_bad = params.use_sphere && dist - params.radius(y) > DEFAULT_MEMBERSHIP_TOL;
        let slab_bad = params.use_slab && slab.abs() - params.half_width(y) > DEFAULT_MEMBERSHIP_TOL;
        if !sphere_bad && !slab_bad {
            return true;
        }
        contrib.iter_mut().for_each(|c| *c = 0.0);
        for (j, c) in contrib.iter_mut().enumerate() {
            let z = x[j] - mu[j];
            if sphere_bad {
                *c += z * z / (dist * dist);
            }
            if slab_bad {
                *c += z * v[j] * slab.signum() / slab.abs();
            }
        }
        let pick = (0..x.len())
            .filter(|&j| {
                let z = x[j] - mu[j];
                let next = x[j] - z.signum();
                z.abs() > 0.5 && next >= 0.0 && contrib[j] > 0.0
            })
            .max_by(|&a, &b| contrib[a].total_cmp(&contrib[b]).then(b.cmp(&a)));
        match pick {
            Some(j) => x[j] -= (x[j] - mu[j]).signum(),
            None => return false,
        }
    }
    false
}
