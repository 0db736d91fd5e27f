//! Attack vectors from a Gram matrix.
//!
//! With `M = [μ_+, μ_−, θ]`, write each attack point as `x = Q c + Σ aⱼ vⱼ`
//! where `Q` is an orthonormal basis of `span M` and the `vⱼ` are fresh
//! directions orthogonal to it. The cross block fixes the coordinates `c`,
//! and the Schur complement `G₁₁ − CᵀC` is the Gram matrix of the orthogonal
//! parts.

use nalgebra::{DMatrix, SymmetricEigen};

use super::gram::{gram_matrix, GRAM_DIM, MU_PLUS, RANK_TOL};
use crate::error::{Error, Result};
use crate::vecops;

#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    /// `x_{a,+}, x_{a,−}, x_{b,+}, x_{b,−}` in `R^ambient_dim`.
    pub points: [Vec<f64>; 4],
    /// Dimension of the supplied vectors.
    pub dim: usize,
    /// `dim` when the orthogonal parts fit in `R^dim`, larger otherwise.
    pub ambient_dim: usize,
    /// `μ_+, μ_−, θ` zero-padded to `ambient_dim`.
    pub known: [Vec<f64>; 3],
}

impl Recovered {
    pub fn lifted(&self) -> bool {
        self.ambient_dim > self.dim
    }

    /// Gram matrix of the seven recovered vectors, in program order.
    pub fn gram(&self) -> DMatrix<f64> {
        let refs: Vec<&[f64]> = self
            .points
            .iter()
            .chain(self.known.iter())
            .map(|v| v.as_slice())
            .collect();
        gram_matrix(&refs)
    }

    /// Attack points restricted to the first `dim` coordinates.
    pub fn truncated(&self) -> [Vec<f64>; 4] {
        self.points.clone().map(|mut p| {
            p.truncate(self.dim);
            p
        })
    }
}

/// Tolerance on negative eigenvalues of the Schur complement.
pub const SCHUR_TOL: f64 = 1e-6;

pub fn recover_vectors(
    g: &DMatrix<f64>,
    mu_plus: &[f64],
    mu_minus: &[f64],
    theta: &[f64],
) -> Result<Recovered> {
    if g.nrows() != GRAM_DIM || g.ncols() != GRAM_DIM {
        return Err(Error::Recovery(format!("expected a {GRAM_DIM}x{GRAM_DIM} matrix")));
    }
    let d = mu_plus.len();
    Error::check_dim(d, mu_minus.len())?;
    Error::check_dim(d, theta.len())?;
    let g = (g + g.transpose()) * 0.5;
    let scale = 1.0 + g.amax();

    let known = [mu_plus, mu_minus, theta];
    let g22 = gram_matrix(&known);
    let drift = (&g22 - g.view((MU_PLUS, MU_PLUS), (3, 3))).amax();
    if drift > 1e-5 * scale {
        return Err(Error::Recovery(format!(
            "known block differs from the supplied vectors by {drift:.3e}"
        )));
    }

    // orthonormal basis Q = M U Λ^{-1/2} of span{μ_+, μ_−, θ}
    let eig = SymmetricEigen::new(g22.clone());
    let lmax = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..3)
        .filter(|&k| eig.eigenvalues[k] > RANK_TOL * lmax.max(1.0))
        .collect();
    let rank = keep.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    for &k in &keep {
        let l = eig.eigenvalues[k];
        let mut q = vec![0.0; d];
        for (j, v) in known.iter().enumerate() {
            vecops::axpy(eig.eigenvectors[(j, k)] / l.sqrt(), v, &mut q);
        }
        basis.push(q);
    }
    // coordinates of the attack points in that basis: C = Λ^{-1/2} Uᵀ G₂₁
    let g21 = g.view((MU_PLUS, 0), (3, 4)).into_owned();
    let mut coords = DMatrix::zeros(rank, 4);
    for (r, &k) in keep.iter().enumerate() {
        let l = eig.eigenvalues[k];
        for i in 0..4 {
            let s: f64 = (0..3).map(|j| eig.eigenvectors[(j, k)] * g21[(j, i)]).sum();
            coords[(r, i)] = s / l.sqrt();
        }
    }

    let g11 = g.view((0, 0), (4, 4)).into_owned();
    let schur = &g11 - coords.transpose() * &coords;
    let schur = (&schur + schur.transpose()) * 0.5;
    let se = SymmetricEigen::new(schur);
    let min_eig = se.eigenvalues.min();
    if min_eig < -SCHUR_TOL * scale {
        return Err(Error::Recovery(format!(
            "Schur complement has eigenvalue {min_eig:.3e}"
        )));
    }
    let orth: Vec<usize> = (0..4)
        .filter(|&k| se.eigenvalues[k] > 1e-9 * scale)
        .collect();

    // fresh directions: inside R^d when there is room, appended coordinates otherwise
    let room = d - rank;
    let ambient_dim = if orth.len() <= room { d } else { d + orth.len() };
    let fresh: Vec<Vec<f64>> = if ambient_dim == d {
        complement_directions(&basis, d, orth.len())
    } else {
        (0..orth.len())
            .map(|j| {
                let mut v = vec![0.0; ambient_dim];
                v[d + j] = 1.0;
                v
            })
            .collect()
    };

    let points = std::array::from_fn(|i| {
        let mut x = vec![0.0; ambient_dim];
        for (r, q) in basis.iter().enumerate() {
            vecops::axpy(coords[(r, i)], q, &mut x[..d]);
        }
        for (j, &k) in orth.iter().enumerate() {
            let a = se.eigenvalues[k].sqrt() * se.eigenvectors[(i, k)];
            vecops::axpy(a, &fresh[j], &mut x);
        }
        x
    });
    let pad = |v: &[f64]| {
        let mut p = v.to_vec();
        p.resize(ambient_dim, 0.0);
        p
    };
    Ok(Recovered {
        points,
        dim: d,
        ambient_dim,
        known: [pad(mu_plus), pad(mu_minus), pad(theta)],
    })
}

/// `count` orthonormal vectors of `R^d` orthogonal to the orthonormal `basis`.
fn complement_directions(basis: &[Vec<f64>], d: usize, count: usize) -> Vec<Vec<f64>> {
    let mut all: Vec<Vec<f64>> = basis.to_vec();
    let mut out = Vec::with_capacity(count);
    for j in 0..d {
        if out.len() == count {
            break;
        }
        let mut v = vec![0.0; d];
        v[j] = 1.0;
        // two Gram-Schmidt passes for stability
        for _ in 0..2 {
            for b in &all {
                let c = vecops::dot(&v, b);
                vecops::axpy(-c, b, &mut v);
            }
        }
        let n = vecops::norm(&v);
        if n > 1e-6 {
            let v = vecops::scale(1.0 / n, &v);
            all.push(v.clone());
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn reproduces_gram_of_explicit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in [2, 3, 5, 9] {
            for _ in 0..20 {
                let vs: Vec<Vec<f64>> = (0..GRAM_DIM).map(|_| rand_vec(&mut rng, d)).collect();
                let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
                let g = gram_matrix(&refs);
                let rec = recover_vectors(&g, &vs[4], &vs[5], &vs[6]).unwrap();
                assert!((rec.gram() - &g).amax() < 1e-8, "d={d}");
                // vectors living in R^d never need the lift
                assert!(!rec.lifted(), "d={d} ambient={}", rec.ambient_dim);
            }
        }
    }

    #[test]
    fn zero_schur_complement_stays_in_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let known: Vec<Vec<f64>> = (0..3).map(|_| rand_vec(&mut rng, d)).collect();
        let mut vs = Vec::new();
        for _ in 0..4 {
            let mut x = vec![0.0; d];
            for k in &known {
                vecops::axpy(rng.random_range(-1.0..1.0), k, &mut x);
            }
            vs.push(x);
        }
        vs.extend(known.iter().cloned());
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let g = gram_matrix(&refs);
        let rec = recover_vectors(&g, &known[0], &known[1], &known[2]).unwrap();
        for (x, want) in rec.points.iter().zip(&vs) {
            assert!(vecops::dist(x, want) < 1e-8);
        }
    }

    #[test]
    fn identity_block_gives_orthonormal_points() {
        let mu_p = vec![1.0, 0.0, 0.0];
        let mu_m = vec![0.0, 1.0, 0.0];
        let theta = vec![0.0, 0.0, 1.0];
        let mut g = DMatrix::zeros(GRAM_DIM, GRAM_DIM);
        for i in 0..GRAM_DIM {
            g[(i, i)] = 1.0;
        }
        let rec = recover_vectors(&g, &mu_p, &mu_m, &theta).unwrap();
        assert!(rec.lifted());
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vecops::dot(&rec.points[i], &rec.points[j]) - want).abs() < 1e-12);
            }
            for k in &rec.known {
                assert!(vecops::dot(&rec.points[i], k).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_deficient_known_block() {
        // θ = 0, as at the first step of certification
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 4;
        let mut vs: Vec<Vec<f64>> = (0..GRAM_DIM).map(|_| rand_vec(&mut rng, d)).collect();
        vs[6] = vec![0.0; d];
        let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        let g = gram_matrix(&refs);
        let rec = recover_vectors(&g, &vs[4], &vs[5], &vs[6]).unwrap();
        assert!((rec.gram() - &g).amax() < 1e-8);
    }

    #[test]
    fn non_psd_schur_complement_is_an_error() {
        let mu_p = vec![1.0, 0.0];
        let mu_m = vec![0.0, 1.0];
        let theta = vec![0.0, 0.0];
        let mut g = DMatrix::zeros(GRAM_DIM, GRAM_DIM);
        g[(4, 4)] = 1.0;
        g[(5, 5)] = 1.0;
        // ⟨x, μ_+⟩ = 2 with ‖x‖² = 1 is impossible
        g[(0, 0)] = 1.0;
        g[(0, 4)] = 2.0;
        g[(4, 0)] = 2.0;
        assert!(matches!(
            recover_vectors(&g, &mu_p, &mu_m, &theta),
            Err(Error::Recovery(_))
        ));
    }

    #[test]
    fn inconsistent_known_block_is_an_error() {
        let g = DMatrix::identity(GRAM_DIM, GRAM_DIM);
        assert!(recover_vectors(&g, &[2.0], &[0.0], &[0.0]).is_err());
    }
}
