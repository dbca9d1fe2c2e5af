//! Neumann eigenvalue, discrete heat semigroup, empirical `L^p–L^q` decay
//! constants and the Duhamel residual of the density equation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fastdiag::FastDiag;
use crate::grid::{RectDomain, ScalarField, SystemState, VectorField};
use crate::krylov::{expm_sym_action, KrylovOptions};
use crate::linalg::{cg, dot, norm, remove_mean};
use crate::operators::{advect_raw, chemo_face_flux, divergence_raw, gradient_magnitude, laplacian_raw};
use crate::sensitivity::SensitivitySpec;

/// Largest grid (cells) for which the dense heat path is allowed.
pub const DENSE_MAX_CELLS: usize = 48 * 48;
/// Largest grid (cells) accepted by [`duhamel_residual_n`].
pub const DUHAMEL_MAX_CELLS: usize = 64 * 64;
/// Resolution below which eigenvalue estimates are flagged as coarse.
pub const RECOMMENDED_CELLS_PER_SIDE: usize = 32;

/// Exact `λ₁,h` of the cell-centered Neumann Laplacian.
pub fn discrete_lambda1(domain: &RectDomain) -> f64 {
    FastDiag::neumann(domain).eigenvalues().into_iter().filter(|&l| l > 0.0).fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub cells: Vec<usize>,
    pub h: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EigReport {
    pub lambda1: f64,
    #[serde(skip)]
    pub eigenfield: ScalarField,
    pub residual: f64,
    pub iterations: usize,
    /// Coarse to fine: `n/4`, `n/2`, `n` cells per side.
    pub table: Vec<ConvergenceRow>,
    /// `log₂` of the ratio of consecutive differences in `table`.
    pub observed_order: Option<f64>,
}

const EIG_TOL: f64 = 1e-8;
const EIG_MAX_OUTER: usize = 300;

/// Inverse iteration on the mean-zero subspace, inner solves by CG.
fn inverse_iteration(domain: &RectDomain) -> Result<(f64, ScalarField, f64, usize)> {
    let d = *domain;
    let neg_lap = |x: &[f64], y: &mut [f64]| {
        laplacian_raw(&d, x, y);
        y.iter_mut().for_each(|v| *v = -*v);
    };
    let l = d.lengths().to_vec();
    let seed = ScalarField::from_fn(&d, |x| {
        x[0] / l[0] + 0.6 * x[1] / l.get(1).copied().unwrap_or(1.0) + 0.3 * (x[0] * x[1] / l[0]).sin() + 0.2 * x[2]
    });
    let mut x = seed.into_values();
    remove_mean(&mut x);
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut ax = vec![0.0; x.len()];
    let mut lambda;
    let mut residual = f64::INFINITY;
    for it in 1..=EIG_MAX_OUTER {
        let mut y = vec![0.0; x.len()];
        cg(neg_lap, remove_mean, &x, &mut y, 1e-12, 20 * x.len())?;
        remove_mean(&mut y);
        let ny = norm(&y);
        y.iter_mut().for_each(|v| *v /= ny);
        x = y;
        neg_lap(&x, &mut ax);
        lambda = dot(&ax, &x);
        residual = ax.iter().zip(&x).map(|(a, v)| (a - lambda * v).powi(2)).sum::<f64>().sqrt() / lambda;
        if residual <= EIG_TOL {
            let field = ScalarField::from_values(&d, x)?;
            return Ok((lambda, field, residual, it));
        }
    }
    Err(Error::NoConvergence { solver: "Neumann inverse iteration", iterations: EIG_MAX_OUTER, residual })
}

fn coarsened(domain: &RectDomain, factor: usize) -> Option<RectDomain> {
    let cells: Vec<usize> = domain.cells().iter().map(|c| c / factor).collect();
    if cells.iter().zip(domain.cells()).any(|(c, o)| *c < 4 || c * factor != *o) {
        return None;
    }
    RectDomain::new(domain.lengths(), &cells).ok()
}

/// First nonzero Neumann eigenvalue with a three-level convergence table.
pub fn neumann_lambda1(domain: &RectDomain) -> Result<EigReport> {
    let (lambda1, eigenfield, residual, iterations) = inverse_iteration(domain)?;
    let mut table = vec![];
    for f in [4, 2] {
        if let Some(c) = coarsened(domain, f) {
            let (l, _, _, _) = inverse_iteration(&c)?;
            table.push(ConvergenceRow { cells: c.cells().to_vec(), h: c.h(), lambda: l });
        }
    }
    table.push(ConvergenceRow { cells: domain.cells().to_vec(), h: domain.h(), lambda: lambda1 });
    let observed_order = match table.as_slice() {
        [a, b, c] => {
            let r = (a.lambda - b.lambda) / (b.lambda - c.lambda);
            (r > 0.0).then(|| r.log2())
        }
        _ => None,
    };
    Ok(EigReport { lambda1, eigenfield, residual, iterations, table, observed_order })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatMethod {
    Krylov,
    /// Full eigendecomposition; only for grids up to [`DENSE_MAX_CELLS`].
    Dense,
    FastDiagonal,
}

#[derive(Clone, Debug)]
enum HeatEngine {
    Krylov(KrylovOptions),
    Dense { vectors: DMatrix<f64>, values: DVector<f64> },
    Fast(FastDiag),
}

/// `e^{tΔ_h}` on cell data; the mean is carried separately and exactly.
#[derive(Clone, Debug)]
pub struct HeatSemigroup {
    domain: RectDomain,
    engine: HeatEngine,
}

impl HeatSemigroup {
    pub fn new(domain: &RectDomain, method: HeatMethod, tol: f64) -> Result<Self> {
        let d = *domain;
        let engine = match method {
            HeatMethod::Krylov => HeatEngine::Krylov(KrylovOptions { tol, ..KrylovOptions::default() }),
            HeatMethod::FastDiagonal => HeatEngine::Fast(FastDiag::neumann(&d)),
            HeatMethod::Dense => {
                let n = d.n_cells();
                if n > DENSE_MAX_CELLS {
                    return Err(Error::InvalidArgument(format!("dense heat path limited to {DENSE_MAX_CELLS} cells, got {n}")));
                }
                let mut m = DMatrix::<f64>::zeros(n, n);
                let mut e = vec![0.0; n];
                let mut col = vec![0.0; n];
                for j in 0..n {
                    e[j] = 1.0;
                    laplacian_raw(&d, &e, &mut col);
                    e[j] = 0.0;
                    for i in 0..n {
                        m[(i, j)] = col[i];
                    }
                }
                let eig = SymmetricEigen::new(m);
                HeatEngine::Dense { vectors: eig.eigenvectors, values: eig.eigenvalues }
            }
        };
        Ok(Self { domain: d, engine })
    }

    pub fn krylov(domain: &RectDomain) -> Self {
        Self { domain: *domain, engine: HeatEngine::Krylov(KrylovOptions::default()) }
    }

    pub fn domain(&self) -> &RectDomain {
        &self.domain
    }

    pub fn method(&self) -> HeatMethod {
        match self.engine {
            HeatEngine::Krylov(_) => HeatMethod::Krylov,
            HeatEngine::Dense { .. } => HeatMethod::Dense,
            HeatEngine::Fast(_) => HeatMethod::FastDiagonal,
        }
    }

    pub fn apply(&self, w: &ScalarField, t: f64) -> Result<ScalarField> {
        self.evolve(w, t, true)
    }

    /// `e^{tΔ_h}(w − w̄)`, with the kernel component discarded.
    pub fn apply_mean_free(&self, w: &ScalarField, t: f64) -> Result<ScalarField> {
        self.evolve(w, t, false)
    }

    fn evolve(&self, w: &ScalarField, t: f64, keep_mean: bool) -> Result<ScalarField> {
        self.domain.ensure_same(w.domain(), "heat semigroup")?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!("heat time must be finite and >= 0, got {t}")));
        }
        let mean = w.mean();
        let mut dev: Vec<f64> = w.values().iter().map(|v| v - mean).collect();
        if t > 0.0 {
            match &self.engine {
                HeatEngine::Krylov(opts) => {
                    let d = self.domain;
                    let (out, _) = expm_sym_action(|x, y| laplacian_raw(&d, x, y), &dev, t, *opts)?;
                    dev = out;
                }
                HeatEngine::Fast(fd) => fd.apply_fn(&mut dev, |l| if l == 0.0 { 0.0 } else { (-t * l).exp() }),
                HeatEngine::Dense { vectors, values } => {
                    let kernel = values.iamin();
                    let v = DVector::from_vec(dev);
                    let mut coef = vectors.tr_mul(&v);
                    for (i, (c, l)) in coef.iter_mut().zip(values.iter()).enumerate() {
                        *c = if i == kernel { 0.0 } else { *c * (t * l).exp() };
                    }
                    dev = (vectors * coef).data.into();
                }
            }
        }
        // exact engines drop the kernel mode spectrally
        if matches!(self.engine, HeatEngine::Krylov(_)) || t == 0.0 {
            remove_mean(&mut dev);
        }
        if keep_mean {
            dev.iter_mut().for_each(|v| *v += mean);
        }
        ScalarField::from_values(&self.domain, dev)
    }
}

/// `e^{tΔ_h} w` by the Krylov path.
pub fn heat_apply(w: &ScalarField, t: f64) -> Result<ScalarField> {
    HeatSemigroup::krylov(w.domain()).apply(w, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatCase {
    /// `‖e^{tΔ}w‖_p` for mean-zero `w`.
    I,
    /// `‖∇e^{tΔ}w‖_p` against `‖w‖_q`.
    Ii,
    /// `‖∇e^{tΔ}w‖_p` against `‖∇w‖_q`, `2 ≤ q`.
    Iii,
    /// `‖e^{tΔ}∇·w‖_p` against `‖w‖_q`, `q > 1`.
    Iv,
}

impl std::str::FromStr for HeatCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(HeatCase::I),
            "ii" => Ok(HeatCase::Ii),
            "iii" => Ok(HeatCase::Iii),
            "iv" => Ok(HeatCase::Iv),
            other => Err(Error::InvalidArgument(format!("unknown heat case '{other}' (i|ii|iii|iv)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum HeatSample {
    Scalar(ScalarField),
    /// Face field; wall-normal faces are treated as zero.
    Flux(VectorField),
}

#[derive(Clone, Debug, Serialize)]
pub struct HeatEstimate {
    pub case: HeatCase,
    #[serde(serialize_with = "exponent")]
    pub p: f64,
    #[serde(serialize_with = "exponent")]
    pub q: f64,
    pub k_hat: f64,
    pub t_at_max: f64,
    pub sample_at_max: usize,
    pub lambda1_h: f64,
}

fn exponent<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// Mean-zero tolerance for case (i) samples, relative to `‖w‖_∞`.
pub const MEAN_ZERO_TOL: f64 = 1e-12;

/// Empirical `k̂ = max ‖·‖_p / [(1 + t^{−e}) e^{−λ₁,h t} ‖·‖_q]` over samples
/// and `t_grid`. This estimates a constant from finite data; it is not a proof.
pub fn verify_heat_estimate(
    heat: &HeatSemigroup,
    case: HeatCase,
    p: f64,
    q: f64,
    samples: &[HeatSample],
    t_grid: &[f64],
) -> Result<HeatEstimate> {
    if !(1.0 <= q && q <= p) {
        return Err(Error::InvalidArgument(format!("need 1 <= q <= p, got p = {p}, q = {q}")));
    }
    match case {
        HeatCase::Iii if q < 2.0 => return Err(Error::InvalidArgument("case iii needs q >= 2".into())),
        HeatCase::Iv if q <= 1.0 => return Err(Error::InvalidArgument("case iv needs q > 1".into())),
        _ => {}
    }
    if samples.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("need samples and positive times".into()));
    }
    let d = *heat.domain();
    let n = d.dim() as f64;
    let lam = discrete_lambda1(&d);
    let inv = |x: f64| if x.is_finite() { 1.0 / x } else { 0.0 };
    let gap = n / 2.0 * (inv(q) - inv(p));
    let expo = match case {
        HeatCase::I | HeatCase::Iii => gap,
        HeatCase::Ii | HeatCase::Iv => 0.5 + gap,
    };
    let mut best = HeatEstimate { case, p, q, k_hat: 0.0, t_at_max: t_grid[0], sample_at_max: 0, lambda1_h: lam };
    for (si, sample) in samples.iter().enumerate() {
        let (w, denom) = match (case, sample) {
            (HeatCase::I, HeatSample::Scalar(w)) => {
                if w.mean().abs() > MEAN_ZERO_TOL * w.max_abs().max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidArgument(format!("case i sample {si} is not mean-zero")));
                }
                (w.clone(), w.lp_norm(q)?)
            }
            (HeatCase::Ii, HeatSample::Scalar(w)) => (w.clone(), w.lp_norm(q)?),
            (HeatCase::Iii, HeatSample::Scalar(w)) => (w.clone(), gradient_magnitude(w).lp_norm(q)?),
            (HeatCase::Iv, HeatSample::Flux(v)) => {
                let mut v = v.clone();
                v.zero_boundary_faces();
                let mut div = vec![0.0; d.n_cells()];
                divergence_raw(&v, &mut div);
                (ScalarField::from_values(&d, div)?, v.lp_norm(q)?)
            }
            _ => return Err(Error::InvalidArgument(format!("sample {si} has the wrong kind for case {case:?}"))),
        };
        if denom == 0.0 {
            continue;
        }
        for &t in t_grid {
            let ev = match case {
                HeatCase::I | HeatCase::Iv => heat.apply_mean_free(&w, t)?,
                HeatCase::Ii | HeatCase::Iii => heat.apply(&w, t)?,
            };
            let num = match case {
                HeatCase::I | HeatCase::Iv => ev.lp_norm(p)?,
                HeatCase::Ii | HeatCase::Iii => gradient_magnitude(&ev).lp_norm(p)?,
            };
            let ratio = num / ((1.0 + t.powf(-expo)) * (-lam * t).exp() * denom);
            if !ratio.is_finite() {
                return Err(Error::NonFinite(format!("heat ratio unbounded at t = {t}")));
            }
            if ratio > best.k_hat {
                best.k_hat = ratio;
                best.t_at_max = t;
                best.sample_at_max = si;
            }
        }
    }
    Ok(best)
}

/// `∇·(nS∇c) + u·∇n` at one snapshot.
fn duhamel_source(state: &SystemState, s: &SensitivitySpec, kappa: f64) -> Result<Vec<f64>> {
    let d = *state.domain();
    let mut out = vec![0.0; d.n_cells()];
    if !s.is_zero() {
        let flux = chemo_face_flux(&state.n, &state.c, s)?;
        divergence_raw(&flux, &mut out);
    }
    if state.u.max_abs() > 0.0 {
        let mut adv = vec![0.0; out.len()];
        advect_raw(&state.u, state.n.deviation.values(), kappa, &mut adv);
        out.iter_mut().zip(&adv).for_each(|(o, a)| *o += a);
    }
    Ok(out)
}

/// `‖n(t) − e^{tΔ_h}n₀ + ∫₀ᵗ e^{(t−s)Δ_h}[∇·(nS∇c) + u·∇n](s) ds‖_∞`, the
/// integral by the trapezoidal rule over the snapshots (accumulated by
/// propagating the running sum between snapshot times).
pub fn duhamel_residual_n(snapshots: &[SystemState], s: &SensitivitySpec, kappa: f64) -> Result<f64> {
    let first = snapshots.first().ok_or_else(|| Error::InvalidArgument("no snapshots".into()))?;
    let d = *first.domain();
    if d.n_cells() > DUHAMEL_MAX_CELLS {
        return Err(Error::InvalidArgument(format!("Duhamel check limited to {DUHAMEL_MAX_CELLS} cells")));
    }
    if snapshots.len() == 1 {
        return Ok(0.0);
    }
    if snapshots.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::InvalidArgument("snapshot times must increase".into()));
    }
    let fd = FastDiag::neumann(&d);
    let mut acc = vec![0.0; d.n_cells()];
    let mut prev_src = duhamel_source(first, s, kappa)?;
    let mut free = first.n.deviation.values().to_vec();
    for w in snapshots.windows(2) {
        let dt = w[1].t - w[0].t;
        fd.heat(&mut acc, dt);
        fd.heat(&mut prev_src, dt);
        fd.heat(&mut free, dt);
        let src = duhamel_source(&w[1], s, kappa)?;
        for ((a, p), c) in acc.iter_mut().zip(&prev_src).zip(&src) {
            *a += 0.5 * dt * (p + c);
        }
        prev_src = src;
    }
    let last = snapshots.last().expect("nonempty");
    let level_shift = last.n.level - first.n.level;
    let res = last
        .n
        .deviation
        .values()
        .iter()
        .zip(&free)
        .zip(&acc)
        .map(|((nv, fv), av)| (nv + level_shift - fv + av).abs())
        .fold(0.0, f64::max);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steppers::{StepConfig, Stepper};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit(n: usize) -> RectDomain {
        RectDomain::build_grid(1.0, 1.0, n, n).unwrap()
    }

    #[test]
    fn unit_square_eigenvalue_matches_discrete_oracle() {
        let d = unit(32);
        let r = neumann_lambda1(&d).unwrap();
        assert!((r.lambda1 / discrete_lambda1(&d) - 1.0).abs() < 1e-8);
        assert!(r.eigenfield.mean().abs() < 1e-10);
        assert!(r.residual <= 1e-8);
        assert_eq!(r.table.len(), 3);
        let order = r.observed_order.unwrap();
        assert!((order - 2.0).abs() < 0.2, "{order}");
    }

    #[test]
    fn rectangle_eigenvalue() {
        let d = RectDomain::build_grid(2.0, 1.0, 64, 32).unwrap();
        let r = neumann_lambda1(&d).unwrap();
        let exact = (PI / 2.0).powi(2);
        assert!((r.lambda1 / exact - 1.0).abs() < 5e-3);
    }

    #[test]
    fn cosine_is_an_exact_discrete_eigenfunction() {
        let d = unit(24);
        let w = ScalarField::from_fn(&d, |x| (PI * x[0]).cos());
        let lam = discrete_lambda1(&d);
        for method in [HeatMethod::Krylov, HeatMethod::Dense, HeatMethod::FastDiagonal] {
            let h = HeatSemigroup::new(&d, method, 1e-12).unwrap();
            for t in [0.0, 0.01, 0.3] {
                let out = h.apply(&w, t).unwrap();
                let err = out.lin_comb(1.0, &w, -(-lam * t).exp()).max_abs();
                assert!(err < 1e-8, "{method:?} {t} {err}");
            }
        }
    }

    #[test]
    fn constants_are_fixed_points_and_means_are_kept() {
        let d = unit(16);
        let c = ScalarField::constant(&d, 3.5);
        assert_eq!(heat_apply(&c, 2.0).unwrap(), c);
        let w = ScalarField::from_fn(&d, |x| (5.0 * x[0] * x[1]).sin() + x[0]);
        let out = heat_apply(&w, 0.2).unwrap();
        assert!((out.mean() - w.mean()).abs() <= 1e-12 * w.mean().abs());
        assert!(out.max_abs() <= w.max_abs());
    }

    #[test]
    fn semigroup_and_spectral_sharpness() {
        let d = unit(20);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..d.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut w = ScalarField::from_values(&d, vals).unwrap();
        let m = w.mean();
        w.add_constant(-m);
        let a = heat_apply(&heat_apply(&w, 0.013).unwrap(), 0.05).unwrap();
        let b = heat_apply(&w, 0.063).unwrap();
        assert!(a.lin_comb(1.0, &b, -1.0).max_abs() <= 1e-9);
        let lam = discrete_lambda1(&d);
        for t in [1e-3, 0.01, 0.1, 1.0] {
            let out = heat_apply(&w, t).unwrap();
            assert!(out.lp_norm(2.0).unwrap() <= (-lam * t).exp() * w.lp_norm(2.0).unwrap() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn heat_estimates() {
        let d = unit(16);
        let h = HeatSemigroup::new(&d, HeatMethod::FastDiagonal, 1e-12).unwrap();
        let grid: Vec<f64> = (0..30).map(|i| 1e-3 * 10f64.powf(i as f64 / 7.25)).collect();
        let eig = HeatSample::Scalar(ScalarField::from_fn(&d, |x| (PI * x[0]).cos()));
        let e = verify_heat_estimate(&h, HeatCase::I, 2.0, 2.0, &[eig], &grid).unwrap();
        assert!(e.k_hat <= 0.5 * (1.0 + 1e-6), "{}", e.k_hat);
        let off = HeatSample::Scalar(ScalarField::from_fn(&d, |x| 1.0 + x[0]));
        assert!(verify_heat_estimate(&h, HeatCase::I, 2.0, 2.0, &[off.clone()], &grid).is_err());
        let e = verify_heat_estimate(&h, HeatCase::Ii, f64::INFINITY, f64::INFINITY, &[off], &grid).unwrap();
        assert!(e.k_hat.is_finite() && e.k_hat > 0.0);
        let flux = HeatSample::Flux(VectorField::from_fn(&d, |a, x| if a == 0 { x[1] } else { x[0] * x[0] }));
        let e = verify_heat_estimate(&h, HeatCase::Iv, 4.0, 2.0, &[flux], &grid).unwrap();
        assert!(e.k_hat.is_finite());
        let smooth = HeatSample::Scalar(ScalarField::from_fn(&d, |x| (3.0 * x[0]).sin() * x[1]));
        let e = verify_heat_estimate(&h, HeatCase::Iii, 4.0, 2.0, &[smooth], &grid).unwrap();
        assert!(e.k_hat.is_finite());
    }

    #[test]
    fn duhamel_pure_heat_is_exact() {
        let d = unit(16);
        let n = ScalarField::from_fn(&d, |x| 1.0 + 0.2 * (PI * x[0]).cos() * x[1]);
        let c = ScalarField::constant(&d, 0.1);
        let mut st = SystemState::new(&n, &c, VectorField::zeros(&d)).unwrap();
        let zero = SensitivitySpec::zero(&d);
        let mut s = Stepper::new(&zero, &ScalarField::zeros(&d), StepConfig::new(1e-3)).unwrap();
        let mut snaps = vec![st.clone()];
        assert_eq!(duhamel_residual_n(&snaps, &zero, 0.9).unwrap(), 0.0);
        for _ in 0..50 {
            st = s.step_system(&st).unwrap();
            snaps.push(st.clone());
        }
        assert!(duhamel_residual_n(&snaps, &zero, 0.9).unwrap() <= 1e-8);
    }
}
