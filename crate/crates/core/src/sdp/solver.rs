//! Small dense SDP solver by ADMM (operator splitting).
//!
//! Solves
//!
//! ```text
//! maximize   ⟨C, G⟩ + c₀
//! subject to ⟨Aᵢ, G⟩ = bᵢ      (equalities)
//!            ⟨Aⱼ, G⟩ ≤ hⱼ      (inequalities)
//!            G ⪰ 0
//! ```
//!
//! Inequalities get slack variables `s ≥ 0`, so the splitting alternates
//! between the affine set `{(G, s) : ⟨Aᵢ,G⟩ = bᵢ, ⟨Aⱼ,G⟩ + sⱼ = hⱼ}` (closed
//! form via a precomputed pseudo-inverse) and the cone `S₊ × R₊ᵐ` (eigenvalue
//! clipping plus `max(0,·)`). Matrices are handled in `svec` form, with
//! off-diagonal entries scaled by `√2` so that the Euclidean inner product
//! matches the Frobenius one.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    /// Symmetric coefficient matrix.
    pub a: DMatrix<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub n: usize,
    pub objective: DMatrix<f64>,
    pub objective_const: f64,
    pub equalities: Vec<LinearConstraint>,
    /// `⟨A, G⟩ ≤ b`
    pub inequalities: Vec<LinearConstraint>,
}

impl SdpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            objective: DMatrix::zeros(n, n),
            objective_const: 0.0,
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }

    pub fn objective_value(&self, g: &DMatrix<f64>) -> f64 {
        self.objective.dot(g) + self.objective_const
    }

    /// Largest violation over all linear constraints at `g`.
    pub fn max_violation(&self, g: &DMatrix<f64>) -> f64 {
        let eq = self.equalities.iter().map(|c| (c.a.dot(g) - c.b).abs());
        let ineq = self.inequalities.iter().map(|c| (c.a.dot(g) - c.b).max(0.0));
        eq.chain(ineq).fold(0.0, f64::max)
    }

    fn check(&self) -> Result<()> {
        let shape_ok = |m: &DMatrix<f64>| m.nrows() == self.n && m.ncols() == self.n;
        let all = std::iter::once(&self.objective)
            .chain(self.equalities.iter().map(|c| &c.a))
            .chain(self.inequalities.iter().map(|c| &c.a));
        for m in all {
            if !shape_ok(m) {
                return Err(Error::Sdp(format!(
                    "coefficient matrix is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols(),
                    n = self.n
                )));
            }
            if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                return Err(Error::Sdp("coefficient matrix is not symmetric".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    /// Exactly PSD iterate (the cone side of the splitting).
    pub g_opt: DMatrix<f64>,
    pub objective: f64,
    pub status: SdpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(svec_len(n));
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            out[k] = if i == j { m[(i, j)] } else { std::f64::consts::SQRT_2 * m[(i, j)] };
            k += 1;
        }
    }
    out
}

fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                let x = v[k] / std::f64::consts::SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

/// Frobenius-nearest PSD matrix: symmetrize, then clip negative eigenvalues.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    // exact symmetry
    let t = out.transpose();
    out += t;
    out *= 0.5;
    out
}

/// The affine set `{w : M w = q}` with a cached projector
/// `w ↦ (I − M⁺M) w + M⁺q`.
struct AffineSet {
    m: DMatrix<f64>,
    q: DVector<f64>,
    proj: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffineSet {
    fn new(mut m: DMatrix<f64>, mut q: DVector<f64>) -> Self {
        // unit rows improve the conditioning of M Mᵀ
        for i in 0..m.nrows() {
            let nrm = m.row(i).norm();
            if nrm > 0.0 {
                m.row_mut(i).unscale_mut(nrm);
                q[i] /= nrm;
            }
        }
        let mmt = &m * m.transpose();
        let pinv_mmt = mmt
            .clone()
            .pseudo_inverse(1e-12 * (1.0 + mmt.amax()))
            .unwrap_or_else(|_| DMatrix::zeros(mmt.nrows(), mmt.ncols()));
        let pinv = m.transpose() * pinv_mmt;
        let proj = DMatrix::identity(m.ncols(), m.ncols()) - &pinv * &m;
        let offset = &pinv * &q;
        Self { m, q, proj, offset }
    }

    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.offset.clone();
        out.gemv(1.0, &self.proj, v, 1.0);
        out
    }

    fn residual(&self, v: &DVector<f64>) -> f64 {
        if self.m.nrows() == 0 {
            return 0.0;
        }
        (&self.m * v - &self.q).norm()
    }
}

pub fn solve_sdp(problem: &SdpProblem, config: &SolverConfig) -> Result<SdpSolution> {
    problem.check()?;
    let n = problem.n;
    let nv = svec_len(n);
    let m_eq = problem.equalities.len();
    let m_in = problem.inequalities.len();
    let dim = nv + m_in;

    let mut mat = DMatrix::zeros(m_eq + m_in, dim);
    let mut rhs = DVector::zeros(m_eq + m_in);
    for (i, c) in problem.equalities.iter().enumerate() {
        mat.view_mut((i, 0), (1, nv)).copy_from(&svec(&c.a).transpose());
        rhs[i] = c.b;
    }
    for (j, c) in problem.inequalities.iter().enumerate() {
        let i = m_eq + j;
        mat.view_mut((i, 0), (1, nv)).copy_from(&svec(&c.a).transpose());
        mat[(i, nv + j)] = 1.0;
        rhs[i] = c.b;
    }
    let affine = AffineSet::new(mat, rhs);

    // inconsistent linear system: the affine set itself is empty
    let w0 = affine.project(&DVector::zeros(dim));
    if affine.residual(&w0) > 1e-8 * (1.0 + affine.q.amax()) {
        return Ok(SdpSolution {
            g_opt: DMatrix::zeros(n, n),
            objective: f64::NAN,
            status: SdpStatus::Infeasible,
            primal_residual: affine.residual(&w0),
            dual_residual: f64::NAN,
            iterations: 0,
        });
    }

    let c_full = {
        let mut c = DVector::zeros(dim);
        c.rows_mut(0, nv).copy_from(&svec(&problem.objective));
        c
    };
    let c_norm = c_full.norm();
    let c_unit = if c_norm > 0.0 { &c_full / c_norm } else { c_full.clone() };

    let split = |x: &DVector<f64>| (x.rows(0, dim).into_owned(), x.rows(dim, dim).into_owned());
    let join = |z: &DVector<f64>, u: &DVector<f64>| {
        let mut x = DVector::zeros(2 * dim);
        x.rows_mut(0, dim).copy_from(z);
        x.rows_mut(dim, dim).copy_from(u);
        x
    };
    // one relaxed ADMM pass on the state (z, u); returns the new state and
    // the affine iterate w
    let step = |x: &DVector<f64>, sigma: f64| -> Step {
        let (z, u) = split(x);
        let mut t = &z - &u;
        t.axpy(1.0 / sigma, &c_unit, 1.0);
        let w = affine.project(&t);
        let relaxed = &w * RELAX + &z * (1.0 - RELAX);
        let v = &relaxed + &u;
        let mut z_new = DVector::zeros(dim);
        let g = project_psd(&smat(&v.as_slice()[..nv], n));
        z_new.rows_mut(0, nv).copy_from(&svec(&g));
        for j in nv..dim {
            z_new[j] = v[j].max(0.0);
        }
        let u_new = v - &z_new;
        let primal = (&w - &z_new).norm();
        let dual = sigma * (&z_new - &z).norm();
        let scale = 1.0 + w.norm().max(z_new.norm());
        let dual_scale = 1.0 + sigma * u_new.norm();
        Step {
            x: join(&z_new, &u_new),
            primal,
            dual,
            scale,
            dual_scale,
        }
    };

    let mut sigma = 1.0;
    let mut x = {
        let mut z0 = w0.clone();
        let g = project_psd(&smat(&w0.as_slice()[..nv], n));
        z0.rows_mut(0, nv).copy_from(&svec(&g));
        for j in nv..dim {
            z0[j] = z0[j].max(0.0);
        }
        join(&z0, &DVector::zeros(dim))
    };
    let mut fx = step(&x, sigma);
    let mut accel = Anderson::new(ANDERSON_MEMORY);
    let mut status = SdpStatus::MaxIter;
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;

    for k in 1..=config.max_iter {
        iterations = k;
        if fx.primal <= config.tol * fx.scale && fx.dual <= config.tol * fx.dual_scale {
            status = SdpStatus::Optimal;
            break;
        }
        if k % 100 == 0 {
            // infeasible problems: the gap between the two sets stalls at a
            // positive distance while the dual variable diverges
            history.push(fx.primal / fx.scale);
            let h = history.len();
            if k >= 3000 && h >= 11 {
                let old = history[h - 11];
                let now = history[h - 1];
                if now > 1e-4 && (old - now).abs() <= 1e-2 * now {
                    status = SdpStatus::Infeasible;
                    break;
                }
            }
            // residual balancing; u is the scaled dual and must follow σ
            let rp = fx.primal / fx.scale;
            let rd = fx.dual / fx.dual_scale;
            if rp > 0.0 && rd > 0.0 {
                let f = (rp / rd).sqrt().clamp(0.2, 5.0);
                if !(0.5..=2.0).contains(&f) {
                    sigma *= f;
                    x = fx.x.clone();
                    x.rows_mut(dim, dim).unscale_mut(f);
                    fx = step(&x, sigma);
                    accel.reset();
                    continue;
                }
            }
        }

        let f = &fx.x - &x;
        if let Some(y) = accel.propose(&x, &f, &fx.x) {
            let fy = step(&y, sigma);
            if (&fy.x - &y).norm() <= f.norm() {
                x = y;
                fx = fy;
                continue;
            }
            accel.reset();
        }
        x = fx.x.clone();
        fx = step(&x, sigma);
    }

    let g_opt = smat(&fx.x.as_slice()[..nv], n);
    Ok(SdpSolution {
        objective: problem.objective_value(&g_opt),
        g_opt,
        status,
        primal_residual: fx.primal,
        dual_residual: fx.dual,
        iterations,
    })
}

const RELAX: f64 = 1.6;
const ANDERSON_MEMORY: usize = 8;

struct Step {
    x: DVector<f64>,
    primal: f64,
    dual: f64,
    scale: f64,
    dual_scale: f64,
}

/// Type-II Anderson acceleration of a fixed-point iteration `x ↦ F(x)`.
struct Anderson {
    memory: usize,
    prev: Option<(DVector<f64>, DVector<f64>)>,
    dx: std::collections::VecDeque<DVector<f64>>,
    df: std::collections::VecDeque<DVector<f64>>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Self {
            memory,
            prev: None,
            dx: Default::default(),
            df: Default::default(),
        }
    }

    fn reset(&mut self) {
        self.prev = None;
        self.dx.clear();
        self.df.clear();
    }

    /// Records `(x, f = F(x) − x)` and extrapolates from the stored differences.
    fn propose(&mut self, x: &DVector<f64>, f: &DVector<f64>, fx: &DVector<f64>) -> Option<DVector<f64>> {
        if let Some((xp, fp)) = self.prev.take() {
            self.dx.push_back(x - xp);
            self.df.push_back(f - fp);
            if self.dx.len() > self.memory {
                self.dx.pop_front();
                self.df.pop_front();
            }
        }
        self.prev = Some((x.clone(), f.clone()));
        let m = self.df.len();
        if m == 0 {
            return None;
        }
        let mut gram = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for i in 0..m {
            rhs[i] = self.df[i].dot(f);
            for j in i..m {
                let v = self.df[i].dot(&self.df[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let reg = 1e-10 * (gram.trace() + 1e-300);
        for i in 0..m {
            gram[(i, i)] += reg;
        }
        let gamma = gram.cholesky()?.solve(&rhs);
        if !gamma.iter().all(|g| g.is_finite()) {
            return None;
        }
        let mut y = fx.clone();
        for i in 0..m {
            y.axpy(-gamma[i], &self.dx[i], 1.0);
            y.axpy(-gamma[i], &self.df[i], 1.0);
        }
        Some(y)
    }
}
