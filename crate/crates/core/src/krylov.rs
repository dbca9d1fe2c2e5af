//! Lanczos approximation of `e^{tA} v` for symmetric negative semidefinite `A`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovOptions {
    /// Maximum Krylov subspace dimension per substep.
    pub max_dim: usize,
    /// Target error relative to `‖v‖`, spread uniformly over `[0, t]`.
    pub tol: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { max_dim: 40, tol: 1e-12 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KrylovStats {
    pub substeps: usize,
    pub matvecs: usize,
    /// Sum of the accepted a posteriori error estimates.
    pub error_estimate: f64,
}

const MAX_HALVINGS: usize = 80;

/// `φ₁(z) = (e^z − 1)/z`
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + 0.5 * z
    } else {
        z.exp_m1() / z
    }
}

struct LanczosBasis {
    vectors: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    /// `beta[j]` couples `v_j` and `v_{j+1}`; the last entry is the residual norm.
    beta: Vec<f64>,
    exact: bool,
}

fn lanczos(apply: &impl Fn(&[f64], &mut [f64]), v0: &[f64], beta0: f64, max_dim: usize, matvecs: &mut usize) -> LanczosBasis {
    let n = v0.len();
    let mut vectors = vec![v0.iter().map(|x| x / beta0).collect::<Vec<f64>>()];
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut w = vec![0.0; n];
    let mut exact = false;
    for j in 0..max_dim.min(n) {
        apply(&vectors[j], &mut w);
        *matvecs += 1;
        // full reorthogonalization, applied twice for stability
        let mut a = 0.0;
        for _ in 0..2 {
            for (k, vk) in vectors.iter().enumerate() {
                let p = dot(&w, vk);
                if k == j {
                    a += p;
                }
                w.iter_mut().zip(vk).for_each(|(wi, vi)| *wi -= p * vi);
            }
        }
        alpha.push(a);
        let b = norm(&w);
        beta.push(b);
        let scale = alpha.iter().map(|x| x.abs()).fold(b, f64::max);
        if b <= 1e-14 * scale || j + 1 == n {
            exact = true;
            break;
        }
        if j + 1 < max_dim {
            vectors.push(w.iter().map(|x| x / b).collect());
        }
    }
    LanczosBasis { vectors, alpha, beta, exact }
}

/// `e^{tA} v` by restarted Lanczos with adaptive substeps.
pub fn expm_sym_action(
    apply: impl Fn(&[f64], &mut [f64]),
    v: &[f64],
    t: f64,
    opts: KrylovOptions,
) -> Result<(Vec<f64>, KrylovStats)> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {t}")));
    }
    let mut stats = KrylovStats::default();
    let mut w = v.to_vec();
    let v_norm = norm(v);
    if t == 0.0 || v_norm == 0.0 {
        return Ok((w, stats));
    }
    let mut remaining = t;
    let mut tau = t;
    while remaining > 0.0 {
        let beta0 = norm(&w);
        if beta0 == 0.0 {
            break;
        }
        let basis = lanczos(&apply, &w, beta0, opts.max_dim, &mut stats.matvecs);
        let k = basis.alpha.len();
        let mut tmat = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            tmat[(i, i)] = basis.alpha[i];
            if i + 1 < k {
                tmat[(i, i + 1)] = basis.beta[i];
                tmat[(i + 1, i)] = basis.beta[i];
            }
        }
        let eig = SymmetricEigen::new(tmat);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            tau = tau.min(remaining);
            let err = if basis.exact {
                0.0
            } else {
                let last: f64 = (0..k)
                    .map(|i| eig.eigenvectors[(k - 1, i)] * phi1(tau * eig.eigenvalues[i]) * eig.eigenvectors[(0, i)])
                    .sum();
                beta0 * basis.beta[k - 1] * tau * last.abs()
            };
            let allowed = opts.tol * v_norm * tau / t;
            if err <= allowed {
                accepted = Some(err);
                break;
            }
            tau *= 0.5;
        }
        let Some(err) = accepted else {
            return Err(Error::NoConvergence {
                solver: "Krylov exponential",
                iterations: stats.substeps,
                residual: tau,
            });
        };
        let coeff: Vec<f64> = (0..k)
            .map(|r| {
                (0..k)
                    .map(|i| eig.eigenvectors[(r, i)] * (tau * eig.eigenvalues[i]).exp() * eig.eigenvectors[(0, i)])
                    .sum::<f64>()
                    * beta0
            })
            .collect();
        w.iter_mut().for_each(|x| *x = 0.0);
        for (c, vec) in coeff.iter().zip(&basis.vectors) {
            w.iter_mut().zip(vec).for_each(|(wi, vi)| *wi += c * vi);
        }
        stats.substeps += 1;
        stats.error_estimate += err;
        remaining -= tau;
        if remaining <= 1e-15 * t {
            remaining = 0.0;
        }
        if err < 0.1 * opts.tol * v_norm * tau / t {
            tau *= 2.0;
        }
    }
    Ok((w, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_operator_matches_closed_form() {
        let lam: Vec<f64> = (0..200).map(|i| -(i as f64) * 50.0).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..x.len() {
                y[i] = lam[i] * x[i];
            }
        };
        let v: Vec<f64> = (0..200).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let t = 0.37;
        let (w, st) = expm_sym_action(apply, &v, t, KrylovOptions::default()).unwrap();
        assert!(st.substeps >= 1);
        for i in 0..200 {
            assert!((w[i] - v[i] * (lam[i] * t).exp()).abs() < 1e-11, "{i}");
        }
    }

    #[test]
    fn zero_time_is_identity() {
        let v = vec![1.0, -2.0, 3.0];
        let (w, _) = expm_sym_action(|x, y| y.copy_from_slice(x), &v, 0.0, KrylovOptions::default()).unwrap();
        assert_eq!(w, v);
    }
}
