//! Incompressible flow on the MAC grid: Helmholtz projection, the
//! Navier–Stokes step with buoyancy, and the first Stokes eigenvalue.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fastdiag::FastDiag;
use crate::grid::{RectDomain, ScalarField, SystemState, VectorField};
use crate::linalg::{dot, norm, pcg, remove_mean};
use crate::operators::{
    divergence_raw, ensure_solenoidal, grad_raw, grad_to_faces, laplacian_raw, momentum_advection,
    vector_laplacian, GradMode,
};

/// Solver for the cell-centered Neumann Poisson problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PoissonBackend {
    /// Exact separable eigen-solve.
    FastDiagonal,
    /// Conjugate gradients on the mean-zero subspace.
    ConjugateGradient { tol: f64, max_iter: usize },
}

impl Default for PoissonBackend {
    fn default() -> Self {
        PoissonBackend::FastDiagonal
    }
}

/// `L φ = rhs` with Neumann walls; `rhs` is made mean-zero first and `φ` is returned mean-zero.
#[derive(Clone, Debug)]
pub struct PressureSolve {
    domain: RectDomain,
    backend: PoissonBackend,
    fd: Option<FastDiag>,
}

impl PressureSolve {
    pub fn new(domain: &RectDomain, backend: PoissonBackend) -> Self {
        let fd = match backend {
            PoissonBackend::FastDiagonal => Some(FastDiag::neumann(domain)),
            PoissonBackend::ConjugateGradient { .. } => None,
        };
        Self { domain: *domain, backend, fd }
    }

    pub fn backend(&self) -> PoissonBackend {
        self.backend
    }

    /// Overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) -> Result<()> {
        remove_mean(rhs);
        match self.backend {
            PoissonBackend::FastDiagonal => {
                self.fd.as_ref().expect("fast-diagonal backend").solve(rhs);
            }
            PoissonBackend::ConjugateGradient { tol, max_iter } => {
                let d = self.domain;
                let b: Vec<f64> = rhs.iter().map(|v| -v).collect();
                let mut x = vec![0.0; b.len()];
                pcg(
                    |p, out| {
                        laplacian_raw(&d, p, out);
                        out.iter_mut().for_each(|v| *v = -*v);
                    },
                    |r, z| z.copy_from_slice(r),
                    remove_mean,
                    &b,
                    &mut x,
                    tol,
                    max_iter,
                )?;
                remove_mean(&mut x);
                rhs.copy_from_slice(&x);
            }
        }
        Ok(())
    }

    pub fn solve(&self, rhs: &ScalarField) -> Result<ScalarField> {
        let mut v = rhs.values().to_vec();
        self.solve_in_place(&mut v)?;
        ScalarField::from_values(&self.domain, v)
    }
}

/// Discrete Helmholtz projection `v ↦ v − ∇φ`, `Δφ = ∇·v`.
#[derive(Clone, Debug)]
pub struct Projector {
    pressure: PressureSolve,
}

impl Projector {
    pub fn new(domain: &RectDomain, backend: PoissonBackend) -> Self {
        Self { pressure: PressureSolve::new(domain, backend) }
    }

    pub fn domain(&self) -> &RectDomain {
        &self.pressure.domain
    }

    /// Projects onto discretely solenoidal fields with zero wall-normal
    /// components (wall faces of the input are discarded).
    pub fn project(&self, v: &VectorField) -> Result<VectorField> {
        let d = self.pressure.domain;
        d.ensure_same(v.domain(), "projection: field and projector")?;
        let mut out = v.clone();
        out.zero_boundary_faces();
        let mut phi = vec![0.0; d.n_cells()];
        divergence_raw(&out, &mut phi);
        self.pressure.solve_in_place(&mut phi)?;
        let mut g = VectorField::zeros(&d);
        grad_raw(&d, &phi, GradMode::Neumann, &mut g);
        out.axpy(-1.0, &g);
        Ok(out)
    }
}

/// Projection with the default backend.
pub fn helmholtz_project(v: &VectorField) -> Result<VectorField> {
    Projector::new(v.domain(), PoissonBackend::default()).project(v)
}

/// Options for [`FluidSolver::step`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NsOptions {
    /// Include `(u·∇)u`; `false` gives the Stokes regime.
    pub advect_momentum: bool,
    /// Central/upwind blend for the momentum flux.
    pub kappa: f64,
}

impl Default for NsOptions {
    fn default() -> Self {
        Self { advect_momentum: true, kappa: 0.9 }
    }
}

/// Projection-method Navier–Stokes solver with no-slip walls.
#[derive(Clone, Debug)]
pub struct FluidSolver {
    domain: RectDomain,
    projector: Projector,
    heat: Vec<FastDiag>,
}

impl FluidSolver {
    pub fn new(domain: &RectDomain, backend: PoissonBackend) -> Self {
        let heat = (0..domain.dim()).map(|a| FastDiag::velocity_component(domain, a)).collect();
        Self { domain: *domain, projector: Projector::new(domain, backend), heat }
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    fn interior(&self, axis: usize) -> impl Iterator<Item = usize> + '_ {
        let d = self.domain;
        let n = d.cells3()[axis];
        (0..d.face_count(axis)).filter(move |&fi| {
            let c = d.face_coords(axis, fi)[axis];
            c != 0 && c != n
        })
    }

    /// Applies `g(−L_vec)` to the interior faces of every component; wall faces become zero.
    pub(crate) fn apply_vector_fn(&self, u: &mut VectorField, g: impl Fn(f64) -> f64 + Copy) {
        for a in 0..self.domain.dim() {
            let idx: Vec<usize> = self.interior(a).collect();
            let comp = u.component_mut(a);
            let mut buf: Vec<f64> = idx.iter().map(|&i| comp[i]).collect();
            self.heat[a].apply_fn(&mut buf, g);
            comp.iter_mut().for_each(|v| *v = 0.0);
            for (&i, v) in idx.iter().zip(buf) {
                comp[i] = v;
            }
        }
    }

    /// `u ← e^{dt L_vec} u` (no-slip heat flow, exact in time).
    pub fn vector_heat(&self, u: &mut VectorField, dt: f64) {
        self.apply_vector_fn(u, |lam| (-dt * lam).exp());
    }

    /// One step: explicit transport and buoyancy, exact viscous flow, projection.
    ///
    /// `grad_phi` is `∇Φ` on faces and `n_dev` the part of `n` that can
    /// drive the flow (a constant times `∇Φ` is a pure gradient).
    pub fn step(
        &self,
        u: &VectorField,
        n_dev: &ScalarField,
        grad_phi: &VectorField,
        dt: f64,
        opts: NsOptions,
    ) -> Result<VectorField> {
        let d = self.domain;
        d.ensure_same(u.domain(), "fluid step: velocity")?;
        d.ensure_same(n_dev.domain(), "fluid step: density")?;
        ensure_solenoidal(u)?;
        let courant = dt * u.max_abs() / d.h();
        if courant > 1.0 {
            return Err(Error::Cfl(format!("advective Courant number {courant:.3} exceeds 1")));
        }
        let mut star = u.clone();
        if opts.advect_momentum && u.max_abs() > 0.0 {
            star.axpy(-dt, &momentum_advection(u, opts.kappa));
        }
        let cells = d.cells3();
        let strides = d.strides();
        let n = n_dev.values();
        for a in 0..d.dim() {
            let g = grad_phi.component(a);
            let comp = star.component_mut(a);
            for (fi, v) in comp.iter_mut().enumerate() {
                if g[fi] == 0.0 {
                    continue;
                }
                let fc = d.face_coords(a, fi);
                if fc[a] == 0 || fc[a] == cells[a] {
                    continue;
                }
                let hi = d.index(fc);
                *v += dt * 0.5 * (n[hi] + n[hi - strides[a]]) * g[fi];
            }
        }
        self.vector_heat(&mut star, dt);
        let out = self.projector.project(&star)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("velocity".into()));
        }
        Ok(out)
    }
}

/// Single Navier–Stokes step of `state.u` with potential `Φ` (default backend and options).
pub fn ns_step(state: &SystemState, phi: &ScalarField, dt: f64) -> Result<VectorField> {
    let solver = FluidSolver::new(state.domain(), PoissonBackend::default());
    let grad_phi = grad_to_faces(phi, GradMode::OneSided);
    solver.step(&state.u, &state.n.deviation, &grad_phi, dt, NsOptions::default())
}

/// First eigenpair of the discrete Stokes operator.
#[derive(Clone, Debug)]
pub struct StokesEig {
    pub lambda1_prime: f64,
    /// Unit discrete-`L²` eigenfield.
    pub eigenfield: VectorField,
    /// `‖A v − λ v‖₂ / (λ ‖v‖₂)`
    pub residual: f64,
    pub iterations: usize,
}

fn flatten(v: &VectorField) -> Vec<f64> {
    v.components().iter().flatten().copied().collect()
}

fn unflatten(d: &RectDomain, x: &[f64]) -> VectorField {
    let mut comps = Vec::new();
    let mut off = 0;
    for a in 0..d.dim() {
        let n = d.face_count(a);
        comps.push(x[off..off + n].to_vec());
        off += n;
    }
    VectorField::from_components(d, comps).expect("sizes match by construction")
}

/// Smallest eigenvalue of `A = −P Δ` with no-slip walls, by inverse iteration
/// on the solenoidal subspace.
///
/// Each inverse step solves `A y = x` with CG preconditioned by
/// `P (−Δ)^{-1} P`; iteration stops when the relative eigen-residual is at most `tol`.
pub fn stokes_lambda1(domain: &RectDomain, tol: f64) -> Result<StokesEig> {
    const MAX_OUTER: usize = 500;
    let solver = FluidSolver::new(domain, PoissonBackend::FastDiagonal);
    let d = *domain;
    let apply_a = |x: &[f64], out: &mut [f64]| {
        let v = unflatten(&d, x);
        let lv = solver.projector.project(&vector_laplacian(&v)).expect("projection");
        for (o, l) in out.iter_mut().zip(flatten(&lv)) {
            *o = -l;
        }
    };
    let precond = |r: &[f64], z: &mut [f64]| {
        let mut v = solver.projector.project(&unflatten(&d, r)).expect("projection");
        solver.apply_vector_fn(&mut v, |lam| 1.0 / lam);
        let v = solver.projector.project(&v).expect("projection");
        z.copy_from_slice(&flatten(&v));
    };
    // keeps CG iterates on the solenoidal subspace despite rounding
    let project = |r: &mut [f64]| {
        let v = solver.projector.project(&unflatten(&d, r)).expect("projection");
        r.copy_from_slice(&flatten(&v));
    };
    let l = d.lengths().to_vec();
    let seed = if d.dim() == 2 {
        VectorField::from_stream_function(&d, |x, y| {
            (PI * x / l[0]).sin().powi(2) * (PI * y / l[1]).sin().powi(2)
        })?
    } else {
        VectorField::from_fn(&d, |a, x| {
            let b = (a + 1) % 3;
            (PI * x[b] / l[b]).sin() * (2.0 * PI * x[a] / l[a]).sin()
        })
    };
    let mut x = flatten(&solver.projector.project(&seed)?);
    let s = norm(&x);
    x.iter_mut().for_each(|v| *v /= s);
    let mut ax = vec![0.0; x.len()];
    let mut lambda;
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_OUTER {
        let mut y = vec![0.0; x.len()];
        pcg(apply_a, precond, project, &x, &mut y, (1e-3 * tol).max(1e-12), 2000)?;
        project(&mut y);
        let s = norm(&y);
        x = y.iter().map(|v| v / s).collect();
        apply_a(&x, &mut ax);
        lambda = dot(&x, &ax);
        residual = x.iter().zip(&ax).map(|(xi, ai)| (ai - lambda * xi).powi(2)).sum::<f64>().sqrt() / lambda;
        if residual <= tol {
            let v = solver.projector.project(&unflatten(&d, &x))?;
            let nrm = v.l2_norm();
            return Ok(StokesEig {
                lambda1_prime: lambda,
                eigenfield: v.scaled(1.0 / nrm),
                residual,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence { solver: "Stokes inverse iteration", iterations: MAX_OUTER, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{divergence, divergence_check};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize) -> RectDomain {
        RectDomain::build_grid(1.0, 1.0, n, n).unwrap()
    }

    fn random_vector(d: &RectDomain, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorField::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn projection_examples() {
        let d = unit(24);
        let sf = VectorField::from_stream_function(&d, |x, y| (PI * x).sin().powi(2) * (PI * y).sin().powi(2)).unwrap();
        let p = helmholtz_project(&sf).unwrap();
        let mut diff = p.clone();
        diff.axpy(-1.0, &sf);
        assert!(diff.max_abs() < 1e-9);

        let phi = ScalarField::from_fn(&d, |x| (PI * x[0]).cos() * (PI * x[1]).cos() + x[0] * x[0] * (x[0] - 1.5));
        let g = grad_to_faces(&phi, GradMode::Neumann);
        assert!(helmholtz_project(&g).unwrap().max_abs() < 1e-9);

        let v = random_vector(&d, 11);
        let pv = helmholtz_project(&v).unwrap();
        assert!(divergence(&pv).max_abs() <= 1e-10 * v.l2_norm());
        let ppv = helmholtz_project(&pv).unwrap();
        let mut diff = ppv.clone();
        diff.axpy(-1.0, &pv);
        assert!(diff.max_abs() <= 1e-9);
        assert!(pv.l2_norm() <= v.l2_norm());
    }

    #[test]
    fn cg_backend_agrees_with_fast_diagonal() {
        let d = RectDomain::build_grid(2.0, 1.0, 32, 16).unwrap();
        let v = random_vector(&d, 5);
        let a = Projector::new(&d, PoissonBackend::FastDiagonal).project(&v).unwrap();
        let b = Projector::new(&d, PoissonBackend::ConjugateGradient { tol: 1e-13, max_iter: 5000 })
            .project(&v)
            .unwrap();
        let mut diff = a.clone();
        diff.axpy(-1.0, &b);
        assert!(diff.max_abs() < 1e-9);
        let (m, lim) = divergence_check(&b);
        assert!(m <= lim);
    }

    #[test]
    fn rest_state_with_constant_density_stays_at_rest() {
        let d = unit(16);
        let n = ScalarField::constant(&d, 1.0);
        let state = SystemState::new(&n, &ScalarField::constant(&d, 0.5), VectorField::zeros(&d)).unwrap();
        let phi = ScalarField::from_fn(&d, |x| (3.0 * x[0]).sin() * x[1] + x[1]);
        let mut st = state.clone();
        for _ in 0..20 {
            st.u = ns_step(&st, &phi, 1e-3).unwrap();
        }
        assert_eq!(st.u.max_abs(), 0.0);
    }

    #[test]
    fn stokes_step_dissipates_energy_and_stays_solenoidal() {
        let d = unit(16);
        let solver = FluidSolver::new(&d, PoissonBackend::FastDiagonal);
        let mut u = helmholtz_project(&random_vector(&d, 2)).unwrap();
        let zero = ScalarField::zeros(&d);
        let gphi = VectorField::zeros(&d);
        let opts = NsOptions { advect_momentum: false, kappa: 0.9 };
        let mut e = u.l2_norm();
        for _ in 0..10 {
            u = solver.step(&u, &zero, &gphi, 1e-3, opts).unwrap();
            assert!(divergence(&u).max_abs() <= 1e-10);
            let e2 = u.l2_norm();
            assert!(e2 < e);
            e = e2;
        }
    }

    #[test]
    fn cfl_violation_is_reported() {
        let d = unit(16);
        let solver = FluidSolver::new(&d, PoissonBackend::FastDiagonal);
        let u = VectorField::from_stream_function(&d, |x, y| 50.0 * (PI * x).sin().powi(2) * (PI * y).sin().powi(2)).unwrap();
        let r = solver.step(&u, &ScalarField::zeros(&d), &VectorField::zeros(&d), 0.1, NsOptions::default());
        assert!(matches!(r, Err(Error::Cfl(_))));
    }

    #[test]
    fn stokes_eigenvalue_scales_with_domain() {
        let a = stokes_lambda1(&unit(16), 1e-8).unwrap();
        let b = stokes_lambda1(&RectDomain::build_grid(2.0, 2.0, 16, 16).unwrap(), 1e-8).unwrap();
        assert!(a.residual <= 1e-8);
        assert!((a.lambda1_prime / b.lambda1_prime - 4.0).abs() < 0.04);
        assert!(divergence(&a.eigenfield).max_abs() <= 1e-10);
    }
}
