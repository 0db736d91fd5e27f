//! The 7×7 Gram-matrix program for the worst four-point attack distribution
//! against a data-dependent sphere/slab defense.
//!
//! Row/column order of `G`: `x_{a,+}, x_{a,−}, x_{b,+}, x_{b,−}, μ_+, μ_−, θ`.
//! The `a` points sit on or inside the margin and carry the loss; the `b`
//! points lie outside the margin and only move the centroids.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::solver::{LinearConstraint, SdpProblem};
use crate::data::{ClassStats, Label};
use crate::defense::SphereSlabParams;
use crate::error::{Error, Result};
use crate::model::LinearModel;

pub const GRAM_DIM: usize = 7;
pub const XA_PLUS: usize = 0;
pub const XA_MINUS: usize = 1;
pub const XB_PLUS: usize = 2;
pub const XB_MINUS: usize = 3;
pub const MU_PLUS: usize = 4;
pub const MU_MINUS: usize = 5;
pub const THETA: usize = 6;

/// Index of the attack point for class `y` (`on_margin` selects the `a` point).
pub fn slot(y: Label, on_margin: bool) -> usize {
    match (on_margin, y) {
        (true, Label::Pos) => XA_PLUS,
        (true, Label::Neg) => XA_MINUS,
        (false, Label::Pos) => XB_PLUS,
        (false, Label::Neg) => XB_MINUS,
    }
}

pub fn slot_label(i: usize) -> Label {
    if i.is_multiple_of(2) {
        Label::Pos
    } else {
        Label::Neg
    }
}

fn mu_slot(y: Label) -> usize {
    match y {
        Label::Pos => MU_PLUS,
        Label::Neg => MU_MINUS,
    }
}

/// Masses of the four support points, relative to clean mass 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackWeights {
    pub pi_a_plus: f64,
    pub pi_b_plus: f64,
    pub pi_a_minus: f64,
    pub pi_b_minus: f64,
}

impl AttackWeights {
    pub fn new(pi_a_plus: f64, pi_b_plus: f64, pi_a_minus: f64, pi_b_minus: f64) -> Result<Self> {
        let w = Self {
            pi_a_plus,
            pi_b_plus,
            pi_a_minus,
            pi_b_minus,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn zero() -> Self {
        Self {
            pi_a_plus: 0.0,
            pi_b_plus: 0.0,
            pi_a_minus: 0.0,
            pi_b_minus: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.by_slot() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "attack weights must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.by_slot().iter().sum()
    }

    /// Weights in Gram order (`a+, a−, b+, b−`).
    pub fn by_slot(&self) -> [f64; 4] {
        [self.pi_a_plus, self.pi_a_minus, self.pi_b_plus, self.pi_b_minus]
    }

    pub fn from_slots(w: [f64; 4]) -> Self {
        Self {
            pi_a_plus: w[0],
            pi_a_minus: w[1],
            pi_b_plus: w[2],
            pi_b_minus: w[3],
        }
    }

    pub fn weight(&self, y: Label, on_margin: bool) -> f64 {
        self.by_slot()[slot(y, on_margin)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramProgram {
    pub problem: SdpProblem,
    pub weights: AttackWeights,
    /// Gram matrix of `(μ_+, μ_−, θ)`.
    pub known: DMatrix<f64>,
    /// Coefficients of `μ̂_+` and `μ̂_−` over the seven Gram vectors.
    pub mu_hat: [DVector<f64>; 2],
    /// Support points that received constraints.
    pub constrained: [bool; 4],
}

fn e(i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(GRAM_DIM);
    v[i] = 1.0;
    v
}

/// `(abᵀ + baᵀ)/2`, so that `⟨sym(a,b), G⟩ = aᵀGb`.
fn sym_outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    (a * b.transpose() + b * a.transpose()) * 0.5
}

pub fn mu_hat_coefficients(stats: &ClassStats, w: &AttackWeights, y: Label) -> Result<DVector<f64>> {
    let (pa, pb, p) = (w.weight(y, true), w.weight(y, false), stats.p(y));
    let denom = p + pa + pb;
    if denom <= 0.0 {
        return Err(Error::Sdp(format!("class {y} has zero total mass")));
    }
    Ok((e(mu_slot(y)) * p + e(slot(y, true)) * pa + e(slot(y, false)) * pb) / denom)
}

/// Emits all sphere, slab and margin constraints for every support point.
pub fn build_gram_program(
    stats: &ClassStats,
    model: &LinearModel,
    params: &SphereSlabParams,
    w: &AttackWeights,
) -> Result<GramProgram> {
    build_gram_program_with(stats, model, params, w, false)
}

/// As [`build_gram_program`]; with `prune_zero_weight`, support points of
/// zero mass get no constraints (they do not exist in the distribution).
pub fn build_gram_program_with(
    stats: &ClassStats,
    model: &LinearModel,
    params: &SphereSlabParams,
    w: &AttackWeights,
    prune_zero_weight: bool,
) -> Result<GramProgram> {
    w.validate()?;
    let d = stats.mu_plus.len();
    Error::check_dim(d, stats.mu_minus.len())?;
    Error::check_dim(d, model.dim())?;
    Error::check_dim(d, params.dim())?;
    if !params.use_sphere && !params.use_slab {
        return Err(Error::InvalidArgument("defense has no constraints".into()));
    }

    let vecs = [&stats.mu_plus[..], &stats.mu_minus[..], &model.theta[..]];
    let known = DMatrix::from_fn(3, 3, |i, j| crate::vecops::dot(vecs[i], vecs[j]));

    let mut prob = SdpProblem::new(GRAM_DIM);
    for i in 0..3 {
        for j in i..3 {
            prob.equalities.push(LinearConstraint {
                a: sym_outer(&e(MU_PLUS + i), &e(MU_PLUS + j)),
                b: known[(i, j)],
            });
        }
    }

    let mu_hat = [
        mu_hat_coefficients(stats, w, Label::Pos)?,
        mu_hat_coefficients(stats, w, Label::Neg)?,
    ];
    let mut constrained = [false; 4];
    for (i, flag) in constrained.iter_mut().enumerate() {
        let y = slot_label(i);
        let on_margin = i < 2;
        if prune_zero_weight && w.by_slot()[i] == 0.0 {
            continue;
        }
        *flag = true;
        let mh = &mu_hat[(y == Label::Neg) as usize];
        let mo = &mu_hat[(y == Label::Pos) as usize];
        let q = e(i) - mh;
        if params.use_sphere {
            let r = params.radius(y);
            prob.inequalities.push(LinearConstraint {
                a: &q * q.transpose(),
                b: r * r,
            });
        }
        if params.use_slab {
            let s = params.half_width(y);
            let a = sym_outer(&q, &(mh - mo));
            prob.inequalities.push(LinearConstraint { a: -&a, b: s });
            prob.inequalities.push(LinearConstraint { a, b: s });
        }
        // a: 1 − y⟨θ,x⟩ ≥ 0  ⇔  y⟨θ,x⟩ ≤ 1;  b: y⟨θ,x⟩ ≥ 1
        let margin = sym_outer(&e(i), &e(THETA)) * y.sign();
        if on_margin {
            prob.inequalities.push(LinearConstraint { a: margin, b: 1.0 });
        } else {
            prob.inequalities.push(LinearConstraint { a: -margin, b: -1.0 });
        }
    }

    prob.objective = sym_outer(&e(XA_PLUS), &e(THETA)) * -w.pi_a_plus
        + sym_outer(&e(XA_MINUS), &e(THETA)) * w.pi_a_minus;
    prob.objective_const = w.pi_a_plus + w.pi_a_minus;

    Ok(GramProgram {
        problem: prob,
        weights: *w,
        known,
        mu_hat,
        constrained,
    })
}

/// Cheap necessary condition for feasibility of the margin constraints.
///
/// Every constrained point of class `y` lies within `r_y` of `μ̂_y`, and
/// `p_y(μ̂_y − μ_y)` is a mass-weighted sum of such offsets, so
/// `‖x − μ_y‖ ≤ r_y(1 + (π_{a,y} + π_{b,y})/p_y)`. An `a`/`b` point whose
/// margin requirement cannot be met inside that ball makes the program
/// infeasible. Returns false only in that provable case.
pub fn margin_reachable(
    stats: &ClassStats,
    model: &LinearModel,
    params: &SphereSlabParams,
    w: &AttackWeights,
    prune_zero_weight: bool,
) -> bool {
    if !params.use_sphere {
        return true;
    }
    let tn = crate::vecops::norm(&model.theta);
    for i in 0..4 {
        if prune_zero_weight && w.by_slot()[i] == 0.0 {
            continue;
        }
        let y = slot_label(i);
        let p = stats.p(y);
        if p <= 0.0 {
            continue;
        }
        let reach = params.radius(y) * (1.0 + (w.weight(y, true) + w.weight(y, false)) / p);
        let centre = y.sign() * crate::vecops::dot(&model.theta, stats.mu(y));
        let slack = 1e-9 * (1.0 + centre.abs());
        let on_margin = i < 2;
        // a: need some x with y⟨θ,x⟩ ≤ 1; b: need y⟨θ,x⟩ ≥ 1
        let ok = if on_margin {
            centre - tn * reach <= 1.0 + slack
        } else {
            centre + tn * reach >= 1.0 - slack
        };
        if !ok {
            return false;
        }
    }
    true
}

impl GramProgram {
    /// Equivalent program with the known block whitened.
    ///
    /// With `G₂₂ = RᵀR` (`R` of full row rank `k`), every feasible `G` is
    /// `PᵀG'P` for `P = diag(I, R)` and `G' = [[G₁₁, Cᵀ], [C, I_k]] ⪰ 0`.
    /// Support points without constraints are dropped. Returns the reduced
    /// problem and `P`.
    pub fn reduced(&self) -> (SdpProblem, DMatrix<f64>) {
        let r = whitening(&self.known);
        let k = r.nrows();
        let slots: Vec<usize> = (0..4).filter(|&i| self.constrained[i]).collect();
        let m = slots.len() + k;
        let mut p = DMatrix::zeros(m, GRAM_DIM);
        for (row, &i) in slots.iter().enumerate() {
            p[(row, i)] = 1.0;
        }
        p.view_mut((slots.len(), MU_PLUS), (k, 3)).copy_from(&r);
        let map = |a: &DMatrix<f64>| {
            let t = &p * a * p.transpose();
            (&t + t.transpose()) * 0.5
        };
        let mut prob = SdpProblem::new(m);
        prob.objective = map(&self.problem.objective);
        prob.objective_const = self.problem.objective_const;
        for i in 0..k {
            for j in i..k {
                let mut a = DMatrix::zeros(m, m);
                a[(slots.len() + i, slots.len() + j)] += 0.5;
                a[(slots.len() + j, slots.len() + i)] += 0.5;
                prob.equalities.push(LinearConstraint {
                    a,
                    b: if i == j { 1.0 } else { 0.0 },
                });
            }
        }
        prob.inequalities = self
            .problem
            .inequalities
            .iter()
            .map(|c| LinearConstraint { a: map(&c.a), b: c.b })
            .collect();
        (prob, p)
    }
}

/// `R` with `RᵀR = g` and full row rank, from the eigendecomposition of `g`.
pub fn whitening(g: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..g.nrows())
        .filter(|&k| eig.eigenvalues[k] > RANK_TOL * lmax.max(1.0))
        .collect();
    let mut r = DMatrix::zeros(keep.len(), g.nrows());
    for (row, &k) in keep.iter().enumerate() {
        let s = eig.eigenvalues[k].sqrt();
        for j in 0..g.nrows() {
            r[(row, j)] = s * eig.eigenvectors[(j, k)];
        }
    }
    r
}

/// Relative eigenvalue cutoff for the rank of the known block.
pub const RANK_TOL: f64 = 1e-10;

/// Gram matrix of the given vectors.
pub fn gram_matrix(vectors: &[&[f64]]) -> DMatrix<f64> {
    let k = vectors.len();
    DMatrix::from_fn(k, k, |i, j| crate::vecops::dot(vectors[i], vectors[j]))
}
