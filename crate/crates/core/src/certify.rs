//! Certification by online learning: the defender runs adaptive regularized
//! dual averaging against a best-responding attacker. The smallest value of
//! the upper-bound function `U` over the iterates certifies the minimax loss,
//! and the collected best responses form a candidate attack.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{class_stats, floor_count, ClassStats, Dataset, LabeledPoint};
use crate::defense::{DefenseKind, FeasibleSet};
use crate::error::{Error, Result};
use crate::maxoracle::{max_loss_continuous, max_loss_integer, OracleResult, RoundingConfig};
use crate::model::{
    accumulate_subgradient, evaluate, total_hinge, train_erm, train_weighted, LinearModel, TrainConfig, WeightedObjective,
};
use crate::sdp::{max_loss_data_dependent, DataDependentConfig, SupportPoint};
use crate::vecops;

/// Slack allowed in the sandwich checks.
pub const SANDWICH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdaState {
    pub cumulative_gradient: Vec<f64>,
    pub t: usize,
    pub eta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub theta: Vec<f64>,
}

impl RdaState {
    pub fn new(d: usize, eta: f64, rho: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        Ok(Self {
            cumulative_gradient: vec![0.0; d],
            t: 0,
            eta,
            lambda: 1.0 / eta,
            rho,
            theta: vec![0.0; d],
        })
    }

    pub fn step(&mut self, g: &[f64]) -> Result<()> {
        Error::check_dim(self.theta.len(), g.len())?;
        vecops::axpy(1.0, g, &mut self.cumulative_gradient);
        self.t += 1;
        self.lambda = (1.0 / self.eta).max(vecops::norm(&self.cumulative_gradient) / self.rho);
        let inv = -1.0 / self.lambda;
        for (th, gc) in self.theta.iter_mut().zip(&self.cumulative_gradient) {
            *th = inv * gc;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<LinearModel> {
        LinearModel::new(self.theta.clone(), self.rho)
    }
}

/// `G ← G + g`, `λ ← max(1/η, ‖G‖/ρ)`, `θ ← −G/λ`.
pub fn rda_step(state: &RdaState, g: &[f64]) -> Result<RdaState> {
    let mut next = state.clone();
    next.step(g)?;
    Ok(next)
}

/// `(1/n)L(θ; D_c) + ε·(oracle loss)`.
pub fn objective_u(model: &LinearModel, clean: &Dataset, eps: f64, oracle: &OracleResult) -> Result<f64> {
    Ok(evaluate(model, clean)?.avg_hinge + eps * oracle.relaxed_loss)
}

/// Cumulative `ρ²/2η + Σ_{s≤t} ‖g_s‖²/2λ_s` over the recorded steps.
pub fn regret_trace(rho: f64, eta: f64, steps: &[StepRecord]) -> Result<Vec<f64>> {
    if steps.is_empty() {
        return Err(Error::InvalidArgument("empty step history".into()));
    }
    let mut acc = rho * rho / (2.0 * eta);
    Ok(steps
        .iter()
        .map(|s| {
            acc += s.grad_norm * s.grad_norm / (2.0 * s.lambda);
            acc
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// `U` at the iterate the oracle was queried at.
    pub upper: f64,
    /// Regularization in force at that iterate.
    pub lambda: f64,
    pub grad_norm: f64,
    /// Unweighted loss of the oracle's answer.
    pub oracle_loss: f64,
    /// Data-dependent runs: the SDP failed and no update was made.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
    /// Data-dependent runs: the recovered points needed extra dimensions.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub lifted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: DefenseKind,
    pub eps: f64,
    /// `⌊εn⌋/n`, the budget actually certified.
    pub eps_effective: f64,
    pub n: usize,
    pub steps: usize,
    pub rho: f64,
    pub eta: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub duality_gap: f64,
    /// Final value of the regret bound.
    pub regret_bound: f64,
    /// Index into `u_trace` of the iterate achieving the upper bound.
    pub best_iterate: usize,
    /// `U(θ̃)`; the upper bound is the smaller of this and the best iterate.
    pub upper_at_model_tilde: Option<f64>,
    /// `(1/n)L(θ̃; D_c)`.
    pub clean_train_loss: f64,
    pub model_tilde: LinearModel,
    pub attack: Dataset,
    /// Weight of each attack point relative to a clean point.
    pub attack_weight: f64,
    /// `U(θ⁽⁰⁾), …, U(θ⁽ᵀ⁾)`.
    pub u_trace: Vec<f64>,
    pub regret_bound_trace: Vec<f64>,
    pub trace: Vec<StepRecord>,
    /// Whether the lower/upper sandwich was checked (fixed continuous defenses).
    pub sandwich_checked: bool,
    pub skipped_steps: usize,
    pub lifted_steps: usize,
    /// Integer runs: steps where rounding found no feasible point.
    pub missing_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyConfig {
    pub eps: f64,
    pub rho: f64,
    /// Defaults to `ρ/(Ḡ√T)` with `Ḡ` a bound on the gradient norms.
    pub eta: Option<f64>,
    /// Number of online steps; defaults to `⌊εn⌋`. Other values give each
    /// attack point weight `⌊εn⌋/T`.
    pub steps: Option<usize>,
    pub seed: u64,
    pub train: TrainConfig,
    /// Randomized roundings per class and step when features are integer.
    pub rounding_budget: usize,
    /// Per-coordinate caps for integer attack points; defaults to the largest
    /// clean value of each coordinate.
    pub rounding_caps: Option<Vec<f64>>,
    pub sdp: DataDependentConfig,
    /// Attack multisets drawn per candidate distribution.
    pub attack_samples: usize,
    /// Candidate distributions (highest `U` first) used for attacks.
    pub retrain_top_k: usize,
    /// Largest tolerated fraction of skipped data-dependent steps.
    pub max_skip_fraction: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            rho: 1.0,
            eta: None,
            steps: None,
            seed: 0,
            train: TrainConfig::default(),
            rounding_budget: 100,
            rounding_caps: None,
            sdp: DataDependentConfig {
                solver: crate::sdp::SolverConfig {
                    tol: 1e-6,
                    max_iter: 50_000,
                },
                ..Default::default()
            },
            attack_samples: 5,
            retrain_top_k: 10,
            max_skip_fraction: 0.1,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::InvalidArgument(format!("eps must be in [0,1], got {}", self.eps)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {}", self.rho)));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
            }
        }
        if self.steps == Some(0) {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean hinge loss of `D_c` and its subgradient.
fn clean_objective(theta: &[f64], clean: &Dataset) -> (f64, Vec<f64>) {
    let n = clean.len() as f64;
    let mut g = vec![0.0; theta.len()];
    accumulate_subgradient(theta, clean, 1.0 / n, &mut g);
    (total_hinge(theta, clean) / n, g)
}

fn hinge_grad_into(theta: &[f64], p: &LabeledPoint, weight: f64, g: &mut [f64]) {
    accumulate_subgradient(theta, std::iter::once(p), weight, g);
}

/// `(1/n)Σ‖x‖ + ε·max_y(‖μ_y‖ + r_y)`: bounds every gradient norm.
fn gradient_scale(clean: &Dataset, f: &FeasibleSet, eps: f64) -> f64 {
    let n = clean.len() as f64;
    let data: f64 = clean.iter().map(|p| vecops::norm(&p.x)).sum::<f64>() / n;
    let reach = crate::data::Label::BOTH
        .iter()
        .map(|&y| vecops::norm(f.params.mu(y)) + f.params.radius(y))
        .fold(0.0, f64::max);
    data + eps * reach
}

struct Plan {
    budget: usize,
    steps: usize,
    eps_eff: f64,
    attack_weight: f64,
    eta: f64,
}

fn plan(clean: &Dataset, f: &FeasibleSet, config: &CertifyConfig) -> Result<Plan> {
    config.validate()?;
    if clean.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Error::check_dim(clean.dim(), f.dim())?;
    let n = clean.len();
    let budget = floor_count(config.eps * n as f64);
    let eps_eff = budget as f64 / n as f64;
    let steps = config.steps.unwrap_or(budget);
    let attack_weight = if steps == 0 { 0.0 } else { budget as f64 / steps as f64 };
    let eta = match config.eta {
        Some(e) => e,
        None => {
            let gbar = gradient_scale(clean, f, eps_eff);
            if gbar > 0.0 && steps > 0 {
                config.rho / (gbar * (steps as f64).sqrt())
            } else {
                1.0
            }
        }
    };
    Ok(Plan {
        budget,
        steps,
        eps_eff,
        attack_weight,
        eta,
    })
}

/// No attack budget: bounds collapse to the clean training loss.
fn degenerate(clean: &Dataset, f: &FeasibleSet, config: &CertifyConfig, plan: &Plan) -> Result<Certificate> {
    let trained = train_erm(clean, config.rho, &config.train)?;
    let loss = evaluate(&trained.model, clean)?.avg_hinge;
    Ok(Certificate {
        kind: f.kind,
        eps: config.eps,
        eps_effective: 0.0,
        n: clean.len(),
        steps: 0,
        rho: config.rho,
        eta: plan.eta,
        upper_bound: loss,
        lower_bound: loss,
        duality_gap: 0.0,
        regret_bound: 0.0,
        best_iterate: 0,
        upper_at_model_tilde: None,
        clean_train_loss: loss,
        model_tilde: trained.model,
        attack: Dataset::empty(clean.dim(), clean.integer_features())?,
        attack_weight: 0.0,
        u_trace: Vec::new(),
        regret_bound_trace: Vec::new(),
        trace: Vec::new(),
        sandwich_checked: false,
        skipped_steps: 0,
        lifted_steps: 0,
        missing_points: 0,
    })
}

fn default_caps(clean: &Dataset) -> Vec<f64> {
    let mut caps = vec![0.0f64; clean.dim()];
    for p in clean {
        for (c, v) in caps.iter_mut().zip(&p.x) {
            *c = c.max(*v);
        }
    }
    caps
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Runs the online certification loop against a fixed (oracle) defense.
pub fn certify_fixed(clean: &Dataset, f: &FeasibleSet, config: &CertifyConfig) -> Result<Certificate> {
    if f.kind != DefenseKind::Oracle {
        return Err(Error::InvalidArgument(
            "certify_fixed needs an oracle defense; use certify_data_dependent".into(),
        ));
    }
    let plan = plan(clean, f, config)?;
    if plan.budget == 0 {
        return degenerate(clean, f, config, &plan);
    }
    let d = clean.dim();
    let integer = f.integer_features;
    let caps = if integer {
        Some(config.rounding_caps.clone().unwrap_or_else(|| default_caps(clean)))
    } else {
        None
    };
    let oracle = |model: &LinearModel, t: usize| -> Result<OracleResult> {
        if integer {
            let cfg = RoundingConfig {
                budget: config.rounding_budget,
                seed: config.seed.wrapping_add(t as u64),
                caps: caps.clone(),
            };
            max_loss_integer(&f.params, model, &cfg)
        } else {
            max_loss_continuous(&f.params, model)
        }
    };

    let mut state = RdaState::new(d, plan.eta, config.rho)?;
    let mut iterates = vec![state.theta.clone()];
    let mut u_trace = Vec::with_capacity(plan.steps + 1);
    let mut trace = Vec::with_capacity(plan.steps);
    let mut attack = Dataset::empty(d, clean.integer_features())?;
    let mut missing = 0;

    for t in 1..=plan.steps {
        let model = state.model()?;
        let res = oracle(&model, t)?;
        let (clean_loss, mut g) = clean_objective(&model.theta, clean);
        let upper = clean_loss + plan.eps_eff * res.relaxed_loss;
        // gradient of the relaxed objective; with integer features the
        // attack keeps the rounded point instead
        hinge_grad_into(&model.theta, &res.relaxed_point, plan.eps_eff, &mut g);
        match &res.point {
            Some(p) => attack.push(p.clone())?,
            None => missing += 1,
        }
        trace.push(StepRecord {
            t,
            upper,
            lambda: state.lambda,
            grad_norm: vecops::norm(&g),
            oracle_loss: res.relaxed_loss,
            skipped: false,
            lifted: false,
        });
        u_trace.push(upper);
        state.step(&g)?;
        iterates.push(state.theta.clone());
    }
    let last = state.model()?;
    let res = oracle(&last, plan.steps + 1)?;
    u_trace.push(objective_u_parts(&last.theta, clean, plan.eps_eff, res.relaxed_loss));

    let best = argmin(&u_trace);
    let regret = regret_trace(config.rho, plan.eta, &trace)?;

    let obj = WeightedObjective {
        primary: clean.points(),
        extra: attack.points(),
        extra_weight: plan.attack_weight,
        normalizer: clean.len() as f64,
    };
    let trained = train_weighted(&obj, d, config.rho, Some(&iterates[best]), &config.train)?;
    let lower = obj.value(&trained.model.theta);
    let res = oracle(&trained.model, plan.steps + 2)?;
    let u_tilde = objective_u_parts(&trained.model.theta, clean, plan.eps_eff, res.relaxed_loss);
    let upper = u_trace[best].min(u_tilde);
    let clean_train_loss = evaluate(&trained.model, clean)?.avg_hinge;
    let final_regret = *regret.last().unwrap_or(&0.0);

    let sandwich_checked = !integer;
    if sandwich_checked {
        let allowed = final_regret / plan.steps as f64 + SANDWICH_TOL;
        if lower > upper + SANDWICH_TOL || upper - lower > allowed {
            return Err(Error::Certificate(format!(
                "lower {lower:.9} / upper {upper:.9} violate the sandwich (allowed gap {allowed:.3e})"
            )));
        }
    }

    Ok(Certificate {
        kind: f.kind,
        eps: config.eps,
        eps_effective: plan.eps_eff,
        n: clean.len(),
        steps: plan.steps,
        rho: config.rho,
        eta: plan.eta,
        upper_bound: upper,
        lower_bound: lower,
        duality_gap: upper - lower,
        regret_bound: final_regret,
        best_iterate: best,
        upper_at_model_tilde: Some(u_tilde),
        clean_train_loss,
        model_tilde: trained.model,
        attack,
        attack_weight: plan.attack_weight,
        u_trace,
        regret_bound_trace: regret,
        trace,
        sandwich_checked,
        skipped_steps: 0,
        lifted_steps: 0,
        missing_points: missing,
    })
}

fn objective_u_parts(theta: &[f64], clean: &Dataset, eps: f64, oracle_loss: f64) -> f64 {
    total_hinge(theta, clean.points()) / clean.len() as f64 + eps * oracle_loss
}

/// Runs the loop with the SDP oracle for a data-dependent defense, then
/// samples candidate attacks from the best-scoring distributions.
pub fn certify_data_dependent(clean: &Dataset, f: &FeasibleSet, config: &CertifyConfig) -> Result<Certificate> {
    if f.kind != DefenseKind::DataDependent {
        return Err(Error::InvalidArgument(
            "certify_data_dependent needs a data-dependent defense".into(),
        ));
    }
    let plan = plan(clean, f, config)?;
    if plan.budget == 0 {
        return degenerate(clean, f, config, &plan);
    }
    let d = clean.dim();
    let stats = class_stats(clean)?;

    let mut state = RdaState::new(d, plan.eta, config.rho)?;
    let mut u_trace = Vec::with_capacity(plan.steps + 1);
    let mut u_iterates = Vec::with_capacity(plan.steps + 1);
    let mut trace = Vec::with_capacity(plan.steps);
    let mut candidates: Vec<(f64, Vec<f64>, Vec<SupportPoint>)> = Vec::new();
    let mut skipped = 0;
    let mut lifted = 0;

    let run_oracle = |model: &LinearModel, t: usize| {
        let cfg = DataDependentConfig {
            seed: config.sdp.seed.wrapping_add(config.seed).wrapping_add(t as u64),
            ..config.sdp.clone()
        };
        max_loss_data_dependent(&stats, model, &f.params, plan.eps_eff, &cfg)
    };

    for t in 1..=plan.steps {
        let model = state.model()?;
        let (clean_loss, mut g) = clean_objective(&model.theta, clean);
        match run_oracle(&model, t) {
            Ok(res) => {
                let upper = clean_loss + res.value;
                vecops::axpy(1.0, &res.loss_subgradient(&model.theta), &mut g);
                trace.push(StepRecord {
                    t,
                    upper,
                    lambda: state.lambda,
                    grad_norm: vecops::norm(&g),
                    oracle_loss: res.value / plan.eps_eff,
                    skipped: false,
                    lifted: res.lifted(),
                });
                lifted += res.lifted() as usize;
                u_trace.push(upper);
                u_iterates.push(state.theta.clone());
                candidates.push((upper, state.theta.clone(), res.support));
                state.step(&g)?;
            }
            Err(e) if e.is_numerical() => {
                log::warn!("step {t}: data-dependent oracle failed: {e}");
                skipped += 1;
                trace.push(StepRecord {
                    t,
                    upper: f64::NAN,
                    lambda: state.lambda,
                    grad_norm: 0.0,
                    oracle_loss: f64::NAN,
                    skipped: true,
                    lifted: false,
                });
            }
            Err(e) => return Err(e),
        }
    }
    if skipped as f64 > config.max_skip_fraction * plan.steps as f64 {
        return Err(Error::Sdp(format!(
            "{skipped} of {} steps skipped after oracle failures",
            plan.steps
        )));
    }
    let last = state.model()?;
    match run_oracle(&last, plan.steps + 1) {
        Ok(res) => {
            let (clean_loss, _) = clean_objective(&last.theta, clean);
            u_trace.push(clean_loss + res.value);
            u_iterates.push(last.theta.clone());
            candidates.push((clean_loss + res.value, last.theta.clone(), res.support));
        }
        Err(e) if e.is_numerical() => log::warn!("final iterate: data-dependent oracle failed: {e}"),
        Err(e) => return Err(e),
    }
    if u_trace.is_empty() {
        return Err(Error::Sdp("no iterate could be evaluated".into()));
    }
    let best = argmin(&u_trace);
    let upper = u_trace[best];
    let active: Vec<StepRecord> = trace.iter().filter(|s| !s.skipped).cloned().collect();
    let regret = if active.is_empty() {
        vec![config.rho * config.rho / (2.0 * plan.eta)]
    } else {
        regret_trace(config.rho, plan.eta, &active)?
    };

    // candidate attacks from the highest-scoring distributions
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[b].0.total_cmp(&candidates[a].0).then(a.cmp(&b)));
    order.truncate(config.retrain_top_k.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let n = clean.len() as f64;
    let mut best_attack: Option<(f64, Dataset, LinearModel)> = None;
    for &c in &order {
        let (_, theta, support) = &candidates[c];
        if support.is_empty() {
            continue;
        }
        let pick = WeightedIndex::new(support.iter().map(|s| s.weight))
            .map_err(|e| Error::Sdp(format!("attack distribution: {e}")))?;
        for _ in 0..config.attack_samples.max(1) {
            let pts: Vec<LabeledPoint> = (0..plan.budget)
                .map(|_| support[pick.sample(&mut rng)].point.clone())
                .collect();
            let sample = Dataset::from_points(d, false, pts)?;
            let obj = WeightedObjective {
                primary: clean.points(),
                extra: sample.points(),
                extra_weight: 1.0,
                normalizer: n,
            };
            let trained = train_weighted(&obj, d, config.rho, Some(theta), &config.train)?;
            let value = obj.value(&trained.model.theta);
            if best_attack.as_ref().is_none_or(|(v, _, _)| value > *v) {
                best_attack = Some((value, sample, trained.model));
            }
        }
    }
    let (lower, attack, model_tilde) = match best_attack {
        Some(b) => b,
        None => {
            let trained = train_erm(clean, config.rho, &config.train)?;
            let v = evaluate(&trained.model, clean)?.avg_hinge;
            (v, Dataset::empty(d, false)?, trained.model)
        }
    };
    let u_tilde = match run_oracle(&model_tilde, plan.steps + 2) {
        Ok(res) => Some(clean_objective(&model_tilde.theta, clean).0 + res.value),
        Err(e) if e.is_numerical() => {
            log::warn!("model tilde: data-dependent oracle failed: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    let upper = u_tilde.map_or(upper, |u| upper.min(u));
    let clean_train_loss = evaluate(&model_tilde, clean)?.avg_hinge;
    let final_regret = *regret.last().unwrap_or(&0.0);

    Ok(Certificate {
        kind: f.kind,
        eps: config.eps,
        eps_effective: plan.eps_eff,
        n: clean.len(),
        steps: plan.steps,
        rho: config.rho,
        eta: plan.eta,
        upper_bound: upper,
        lower_bound: lower,
        duality_gap: upper - lower,
        regret_bound: final_regret,
        best_iterate: best,
        upper_at_model_tilde: u_tilde,
        clean_train_loss,
        model_tilde,
        attack,
        attack_weight: 1.0,
        u_trace,
        regret_bound_trace: regret,
        trace,
        sandwich_checked: false,
        skipped_steps: skipped,
        lifted_steps: lifted,
        missing_points: 0,
    })
}

/// Dispatches on the defense kind.
pub fn certify(clean: &Dataset, f: &FeasibleSet, config: &CertifyConfig) -> Result<Certificate> {
    match f.kind {
        DefenseKind::Oracle => certify_fixed(clean, f, config),
        DefenseKind::DataDependent => certify_data_dependent(clean, f, config),
    }
}

/// Class statistics used by the data-dependent oracle (exposed for callers
/// that need to recompute `μ̂`).
pub fn clean_stats(clean: &Dataset) -> Result<ClassStats> {
    class_stats(clean)
}
