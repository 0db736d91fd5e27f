//! Baseline attacks: label flipping and an alternating gradient heuristic.
//! Neither is meant to be optimal; they are reference points below the
//! certificate attack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certify::{certify, CertifyConfig};
use crate::data::{floor_count, Dataset, Label, LabeledPoint};
use crate::defense::{FeasibleSet, SphereSlabParams};
use crate::error::{Error, Result};
use crate::maxoracle::repair_integer_point;
use crate::model::{evaluate, train_weighted, LinearModel, TrainConfig, WeightedObjective};
use crate::vecops;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    LabelFlip,
    Gradient,
    CertificateAttack,
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label-flip" => Ok(Self::LabelFlip),
            "gradient" => Ok(Self::Gradient),
            "certificate-attack" | "certificate" => Ok(Self::CertificateAttack),
            _ => Err(Error::InvalidArgument(format!("unknown attack kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Outer iterations of the gradient attack.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
}

fn default_steps() -> usize {
    20
}

fn default_step_size() -> f64 {
    0.5
}

impl AttackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(Error::InvalidArgument(format!("eps must be in (0,1], got {}", self.eps)));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step_size must be non-negative, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

fn budget(clean: &Dataset, eps: f64) -> Result<usize> {
    if clean.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = floor_count(eps * clean.len() as f64);
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "eps = {eps} gives no attack points for n = {}",
            clean.len()
        )));
    }
    Ok(k)
}

/// Copies of clean points with flipped labels, drawn with replacement from
/// those the defense accepts.
pub fn label_flip_attack(clean: &Dataset, f: &FeasibleSet, eps: f64, seed: u64) -> Result<Dataset> {
    let k = budget(clean, eps)?;
    Error::check_dim(clean.dim(), f.dim())?;
    let mut pool = Vec::new();
    for p in clean {
        let flipped = LabeledPoint::new(p.x.clone(), p.y.opposite());
        if f.membership(&flipped)? {
            pool.push(flipped);
        }
    }
    let mut out = Dataset::empty(clean.dim(), clean.integer_features())?;
    if pool.is_empty() {
        log::warn!("label flip: no flipped point passes the defense; returning an empty attack");
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..k {
        out.push(pool[rng.random_range(0..pool.len())].clone())?;
    }
    Ok(out)
}

/// Clips the slab coordinate, then shrinks the remainder into the sphere.
/// Not the Euclidean projection onto the intersection, but always feasible.
pub fn project_sphere_slab(params: &SphereSlabParams, y: Label, x: &mut [f64]) {
    let mu = params.mu(y);
    let v = params.slab_direction(y);
    let vn = vecops::norm(&v);
    let mut z = vecops::sub(x, mu);
    let mut alpha = 0.0;
    let mut vhat = vec![0.0; x.len()];
    if vn > 0.0 {
        vhat = vecops::scale(1.0 / vn, &v);
        alpha = vecops::dot(&z, &vhat);
        vecops::axpy(-alpha, &vhat, &mut z);
    }
    // z is now the part orthogonal to v̂
    if params.use_slab && vn > 0.0 {
        let lim = params.half_width(y) / vn;
        alpha = alpha.clamp(-lim, lim);
    }
    if params.use_sphere {
        let r = params.radius(y);
        alpha = alpha.clamp(-r, r);
        let room = (r * r - alpha * alpha).max(0.0).sqrt();
        let zn = vecops::norm(&z);
        if zn > room {
            z = vecops::scale(room / zn, &z);
        }
    }
    for i in 0..x.len() {
        x[i] = mu[i] + alpha * vhat[i] + z[i];
    }
}

fn project_feasible(f: &FeasibleSet, p: &mut LabeledPoint, previous: &[f64]) {
    project_sphere_slab(&f.params, p.y, &mut p.x);
    if f.integer_features {
        p.x.iter_mut().for_each(|v| *v = v.round().max(0.0));
        if !repair_integer_point(&f.params, p.y, &mut p.x) {
            p.x = previous.to_vec();
        }
    }
    // rounding inside the projection can leave a hair outside the set
    if !f.membership(p).unwrap_or(false) {
        p.x = previous.to_vec();
    }
}

fn retrain(
    clean: &Dataset,
    attack: &Dataset,
    rho: f64,
    init: Option<&[f64]>,
    config: &TrainConfig,
) -> Result<(LinearModel, f64)> {
    let obj = WeightedObjective {
        primary: clean.points(),
        extra: attack.points(),
        extra_weight: 1.0,
        normalizer: clean.len() as f64,
    };
    let out = train_weighted(&obj, clean.dim(), rho, init, config)?;
    let value = obj.value(&out.model.theta);
    Ok((out.model, value))
}

/// Label-flip points, or alternating class centroids when none are feasible.
pub fn initial_attack(clean: &Dataset, f: &FeasibleSet, eps: f64, seed: u64) -> Result<Dataset> {
    let k = budget(clean, eps)?;
    let mut attack = label_flip_attack(clean, f, eps, seed)?;
    if attack.is_empty() {
        for i in 0..k {
            let y = if i % 2 == 0 { Label::Pos } else { Label::Neg };
            let mut p = LabeledPoint::new(f.params.mu(y).to_vec(), y);
            let prev = p.x.clone();
            if f.integer_features {
                p.x.iter_mut().for_each(|v| *v = v.round().max(0.0));
                if !repair_integer_point(&f.params, y, &mut p.x) {
                    p.x = prev;
                }
            }
            if f.membership(&p)? {
                attack.push(p)?;
            }
        }
        if attack.len() < k {
            log::warn!("gradient attack: only {} of {k} initial points are feasible", attack.len());
        }
    }
    Ok(attack)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientAttack {
    pub attack: Dataset,
    /// `(1/n)L(θ̃; D_c ∪ D_p)` after each retraining, initialization first.
    pub loss_trace: Vec<f64>,
}

/// Alternates retraining on `D_c ∪ D_p` with one ascent step per attack
/// point against the frozen model, followed by projection onto `F`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_attack(
    clean: &Dataset,
    f: &FeasibleSet,
    eps: f64,
    rho: f64,
    steps: usize,
    step_size: f64,
    seed: u64,
    train: &TrainConfig,
) -> Result<GradientAttack> {
    let mut attack = initial_attack(clean, f, eps, seed)?;
    let (mut model, value) = retrain(clean, &attack, rho, None, train)?;
    let mut loss_trace = vec![value];
    for _ in 0..steps {
        let mut moved = attack.points().to_vec();
        for p in &mut moved {
            let prev = p.x.clone();
            vecops::axpy(-step_size * p.y.sign(), &model.theta, &mut p.x);
            project_feasible(f, p, &prev);
        }
        attack = Dataset::from_points(clean.dim(), clean.integer_features(), moved)?;
        let (m, v) = retrain(clean, &attack, rho, Some(&model.theta), train)?;
        model = m;
        loss_trace.push(v);
    }
    Ok(GradientAttack { attack, loss_trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub kind: AttackKind,
    pub eps: f64,
    pub attack: Dataset,
    pub model: LinearModel,
    /// `(1/n)L(θ̃; D_c ∪ D_p)`.
    pub induced_loss: f64,
    pub clean_hinge: f64,
    pub clean_zero_one: f64,
    pub test_hinge: Option<f64>,
    pub test_zero_one: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub loss_trace: Vec<f64>,
}

/// Runs the named attack, retrains on `D_c ∪ D_p` and evaluates the result.
/// The certificate attack reuses the certification run, so its induced loss
/// is the certificate's lower bound.
pub fn run_attack(
    clean: &Dataset,
    test: Option<&Dataset>,
    f: &FeasibleSet,
    spec: &AttackSpec,
    certify_config: &CertifyConfig,
) -> Result<AttackOutcome> {
    spec.validate()?;
    let rho = certify_config.rho;
    let train = &certify_config.train;
    let (attack, model, induced, trace) = match spec.kind {
        AttackKind::LabelFlip => {
            let a = label_flip_attack(clean, f, spec.eps, spec.seed)?;
            let (m, v) = retrain(clean, &a, rho, None, train)?;
            (a, m, v, Vec::new())
        }
        AttackKind::Gradient => {
            let g = gradient_attack(clean, f, spec.eps, rho, spec.steps, spec.step_size, spec.seed, train)?;
            let (m, v) = retrain(clean, &g.attack, rho, None, train)?;
            (g.attack, m, v, g.loss_trace)
        }
        AttackKind::CertificateAttack => {
            let cfg = CertifyConfig {
                eps: spec.eps,
                seed: spec.seed,
                ..certify_config.clone()
            };
            let cert = certify(clean, f, &cfg)?;
            (cert.attack, cert.model_tilde, cert.lower_bound, Vec::new())
        }
    };
    let on_clean = evaluate(&model, clean)?;
    let on_test = test.map(|t| evaluate(&model, t)).transpose()?;
    Ok(AttackOutcome {
        kind: spec.kind,
        eps: spec.eps,
        attack,
        model,
        induced_loss: induced,
        clean_hinge: on_clean.avg_hinge,
        clean_zero_one: on_clean.zero_one,
        test_hinge: on_test.as_ref().map(|r| r.avg_hinge),
        test_zero_one: on_test.as_ref().map(|r| r.zero_one),
        loss_trace: trace,
    })
}
