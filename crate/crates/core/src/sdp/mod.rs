//! Data-dependent oracle: worst attack distribution on at most four points,
//! found by a Gram-matrix SDP per weight vector and a Monte-Carlo search over
//! the weights.

pub mod gram;
pub mod recover;
pub mod solver;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gram::{build_gram_program, build_gram_program_with, AttackWeights, GramProgram};
pub use recover::{recover_vectors, Recovered};
pub use solver::{project_psd, solve_sdp, SdpProblem, SdpSolution, SdpStatus, SolverConfig};

use crate::data::{ClassStats, Label, LabeledPoint};
use crate::defense::SphereSlabParams;
use crate::error::{Error, Result};
use crate::model::{hinge, LinearModel};

/// A solved Gram program with its recovered attack vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSolution {
    pub sdp: SdpSolution,
    pub recovered: Recovered,
    /// Gram matrix of the recovered vectors: exactly realizable and within
    /// solver tolerance of `sdp.g_opt`.
    pub gram: DMatrix<f64>,
    /// Program objective at `gram`.
    pub objective: f64,
    /// ε-weighted hinge loss of the recovered distribution.
    pub realized: f64,
}

/// Solves the program and recovers explicit vectors. Non-optimal solver
/// statuses are reported as errors.
pub fn solve_gram(
    prog: &GramProgram,
    stats: &ClassStats,
    model: &LinearModel,
    config: &SolverConfig,
) -> Result<GramSolution> {
    let (reduced, p) = prog.reduced();
    let mut sdp = solve_sdp(&reduced, config)?;
    sdp.g_opt = p.transpose() * &sdp.g_opt * &p;
    if sdp.status != SdpStatus::Optimal {
        return Err(Error::Sdp(format!(
            "solver status {:?} after {} iterations (primal {:.2e}, dual {:.2e})",
            sdp.status, sdp.iterations, sdp.primal_residual, sdp.dual_residual
        )));
    }
    let recovered = recover_vectors(&sdp.g_opt, &stats.mu_plus, &stats.mu_minus, &model.theta)?;
    let gram = recovered.gram();
    let objective = prog.problem.objective_value(&gram);
    let theta = &recovered.known[2];
    let realized = prog
        .weights
        .by_slot()
        .iter()
        .zip(&recovered.points)
        .enumerate()
        .map(|(i, (w, x))| w * hinge(theta, x, gram::slot_label(i)))
        .sum();
    Ok(GramSolution {
        sdp,
        recovered,
        gram,
        objective,
        realized,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataDependentConfig {
    /// Weight vectors drawn uniformly from the simplex.
    pub samples: usize,
    pub seed: u64,
    /// Also try the supports `{a+}`, `{a−}` and `{a+, a−}` with zero
    /// mass elsewhere.
    pub boundary_cases: bool,
    pub solver: SolverConfig,
    /// Appends one JSON line per solve when set.
    pub trace: Option<PathBuf>,
}

impl Default for DataDependentConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            seed: 0,
            boundary_cases: true,
            solver: SolverConfig::default(),
            trace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub point: LabeledPoint,
    pub weight: f64,
    pub on_margin: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataDependentResult {
    pub weights: AttackWeights,
    /// Support points of positive mass, restricted to `R^d`.
    pub support: Vec<SupportPoint>,
    /// SDP optimum: the upper value.
    pub value: f64,
    pub realized: f64,
    pub solution: GramSolution,
    pub attempted: usize,
    pub infeasible: usize,
    pub failed: usize,
}

impl DataDependentResult {
    pub fn lifted(&self) -> bool {
        self.solution.recovered.lifted()
    }

    /// `ε·∂ℓ` of the worst distribution: `−Σ π_{a,y}·y·x_{a,y}`.
    pub fn loss_subgradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for s in &self.support {
            if s.on_margin && hinge(theta, &s.point.x, s.point.y) > 0.0 {
                crate::vecops::axpy(-s.weight * s.point.y.sign(), &s.point.x, &mut g);
            }
        }
        g
    }
}

/// `count` weight vectors drawn from Dirichlet(1,1,1,1), scaled by `eps`.
pub fn sample_weights(eps: f64, count: usize, seed: u64) -> Vec<AttackWeights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let e: [f64; 4] = std::array::from_fn(|_| rng.sample::<f64, _>(Exp1));
            let s: f64 = e.iter().sum();
            AttackWeights::from_slots(e.map(|v| eps * v / s))
        })
        .collect()
}

fn boundary_weights(eps: f64) -> [AttackWeights; 3] {
    [
        AttackWeights::from_slots([eps, 0.0, 0.0, 0.0]),
        AttackWeights::from_slots([0.0, eps, 0.0, 0.0]),
        AttackWeights::from_slots([eps / 2.0, eps / 2.0, 0.0, 0.0]),
    ]
}

#[derive(Serialize)]
struct TraceLine<'a> {
    index: usize,
    weights: &'a AttackWeights,
    status: Option<SdpStatus>,
    objective: Option<f64>,
    iterations: Option<usize>,
    primal_residual: Option<f64>,
    dual_residual: Option<f64>,
    gram: Option<Vec<Vec<f64>>>,
    error: Option<String>,
}

/// Best attack distribution over the sampled weight vectors.
pub fn max_loss_data_dependent(
    stats: &ClassStats,
    model: &LinearModel,
    params: &SphereSlabParams,
    eps: f64,
    config: &DataDependentConfig,
) -> Result<DataDependentResult> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut candidates: Vec<(AttackWeights, bool)> = Vec::new();
    if config.boundary_cases {
        candidates.extend(boundary_weights(eps).into_iter().map(|w| (w, true)));
    }
    candidates.extend(
        sample_weights(eps, config.samples, config.seed)
            .into_iter()
            .map(|w| (w, false)),
    );
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no weight vectors to try".into()));
    }

    let outcomes: Vec<Result<GramSolution>> = candidates
        .par_iter()
        .map(|(w, prune)| {
            if !gram::margin_reachable(stats, model, params, w, *prune) {
                return Err(Error::Sdp("Infeasible: margin unreachable inside the sphere".into()));
            }
            let prog = build_gram_program_with(stats, model, params, w, *prune)?;
            solve_gram(&prog, stats, model, &config.solver)
        })
        .collect();

    if let Some(path) = &config.trace {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        for (index, ((w, _), out)) in candidates.iter().zip(&outcomes).enumerate() {
            let line = match out {
                Ok(s) => TraceLine {
                    index,
                    weights: w,
                    status: Some(s.sdp.status),
                    objective: Some(s.objective),
                    iterations: Some(s.sdp.iterations),
                    primal_residual: Some(s.sdp.primal_residual),
                    dual_residual: Some(s.sdp.dual_residual),
                    gram: Some(s.gram.row_iter().map(|r| r.iter().copied().collect()).collect()),
                    error: None,
                },
                Err(e) => TraceLine {
                    index,
                    weights: w,
                    status: None,
                    objective: None,
                    iterations: None,
                    primal_residual: None,
                    dual_residual: None,
                    gram: None,
                    error: Some(e.to_string()),
                },
            };
            writeln!(f, "{}", serde_json::to_string(&line)?)?;
        }
    }

    let attempted = candidates.len();
    let mut infeasible = 0;
    let mut failed = 0;
    let mut best: Option<(usize, GramSolution)> = None;
    let mut last_err = None;
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(sol) => {
                if best.as_ref().is_none_or(|(_, b)| sol.objective > b.objective) {
                    best = Some((i, sol));
                }
            }
            Err(Error::Sdp(msg)) if msg.contains("Infeasible") => infeasible += 1,
            Err(e) => {
                failed += 1;
                last_err = Some(e.to_string());
            }
        }
    }
    let Some((i, solution)) = best else {
        return Err(Error::Sdp(format!(
            "all {attempted} weight vectors failed ({infeasible} infeasible, {failed} other{})",
            last_err.map(|e| format!("; last: {e}")).unwrap_or_default()
        )));
    };

    let weights = candidates[i].0;
    let truncated = solution.recovered.truncated();
    let support = weights
        .by_slot()
        .iter()
        .zip(truncated)
        .enumerate()
        .filter(|(_, (w, _))| **w > 0.0)
        .map(|(k, (w, x))| SupportPoint {
            point: LabeledPoint::new(x, gram::slot_label(k)),
            weight: *w,
            on_margin: k < 2,
        })
        .collect();
    Ok(DataDependentResult {
        weights,
        support,
        value: solution.objective,
        realized: solution.realized,
        solution,
        attempted,
        infeasible,
        failed,
    })
}

/// `μ̂_y` of the distribution: clean centroid mixed with the class's support points.
pub fn mixed_centroid(stats: &ClassStats, support: &[SupportPoint], y: Label) -> Vec<f64> {
    let p = stats.p(y);
    let mut mass = p;
    let mut mu = crate::vecops::scale(p, stats.mu(y));
    for s in support.iter().filter(|s| s.point.y == y) {
        crate::vecops::axpy(s.weight, &s.point.x, &mut mu);
        mass += s.weight;
    }
    crate::vecops::scale(1.0 / mass, &mu)
}
