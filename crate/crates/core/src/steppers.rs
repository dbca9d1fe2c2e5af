//! Lie-split time stepping of the coupled system.
//!
//! Within one step the velocity, oxygen and density updates all read the
//! start-of-step state. Each scalar update is: explicit transport, then the
//! exact discrete heat flow `e^{dt Δ_h}`, then (for `c`) pointwise implicit
//! absorption.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fastdiag::FastDiag;
use crate::fluid::{FluidSolver, NsOptions, PoissonBackend};
use crate::grid::{OffsetField, RectDomain, ScalarField, SystemState, VectorField};
use crate::operators::{
    advect_raw, check_kappa, chemo_face_flux, divergence_raw, ensure_solenoidal, grad_to_faces, GradMode,
};
use crate::sensitivity::SensitivitySpec;

/// Fraction of `∫n₀` that the positivity guard may remove over a run.
pub const CLIP_BUDGET_REL: f64 = 1e-9;

/// Solver selection for the pressure projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoissonKind {
    #[default]
    FastDiagonal,
    ConjugateGradient,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    /// Central/upwind blend for transport, in `[0, 1]`.
    pub kappa: f64,
    /// Relative residual target of iterative solves.
    pub solver_tol: f64,
    pub positivity_guard: bool,
    /// `false` drops `(u·∇)u` (Stokes regime).
    pub advect_momentum: bool,
    pub poisson: PoissonKind,
}

impl StepConfig {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            kappa: 0.9,
            solver_tol: 1e-12,
            positivity_guard: true,
            advect_momentum: true,
            poisson: PoissonKind::FastDiagonal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        check_kappa(self.kappa)?;
        if !(self.solver_tol > 0.0) {
            return Err(Error::InvalidArgument("solver tolerance must be positive".into()));
        }
        Ok(())
    }

    fn backend(&self) -> PoissonBackend {
        match self.poisson {
            PoissonKind::FastDiagonal => PoissonBackend::FastDiagonal,
            PoissonKind::ConjugateGradient => {
                PoissonBackend::ConjugateGradient { tol: self.solver_tol, max_iter: 20_000 }
            }
        }
    }
}

/// Record of negative-density events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClipAudit {
    pub events: usize,
    /// Total mass removed by clipping (or found negative when the guard is off).
    pub clipped_mass: f64,
}

/// Precomputed operators and bookkeeping for one simulation.
#[derive(Clone, Debug)]
pub struct Stepper {
    domain: RectDomain,
    cfg: StepConfig,
    sens: SensitivitySpec,
    grad_phi: VectorField,
    fluid: FluidSolver,
    heat: FastDiag,
    audit: ClipAudit,
    budget: Option<f64>,
}

impl Stepper {
    pub fn new(sens: &SensitivitySpec, phi: &ScalarField, cfg: StepConfig) -> Result<Self> {
        cfg.validate()?;
        let domain = *phi.domain();
        domain.ensure_same(sens.domain(), "stepper: potential and sensitivity")?;
        Ok(Self {
            domain,
            cfg,
            sens: sens.clone(),
            grad_phi: grad_to_faces(phi, GradMode::OneSided),
            fluid: FluidSolver::new(&domain, cfg.backend()),
            heat: FastDiag::neumann(&domain),
            audit: ClipAudit::default(),
            budget: None,
        })
    }

    pub fn config(&self) -> &StepConfig {
        &self.cfg
    }

    pub fn sensitivity(&self) -> &SensitivitySpec {
        &self.sens
    }

    pub fn audit(&self) -> ClipAudit {
        self.audit
    }

    /// Exact discrete heat flow `e^{t Δ_h}` on cell data.
    pub fn heat_flow(&self, data: &mut [f64], t: f64) {
        self.heat.heat(data, t);
    }

    fn check_transport_cfl(&self, u: &VectorField) -> Result<()> {
        let courant = self.cfg.dt * u.max_abs() / self.domain.h();
        if courant > 1.0 {
            return Err(Error::Cfl(format!("advective Courant number {courant:.3} exceeds 1")));
        }
        Ok(())
    }

    /// Velocity update.
    pub fn step_u(&self, state: &SystemState) -> Result<VectorField> {
        let opts = NsOptions { advect_momentum: self.cfg.advect_momentum, kappa: self.cfg.kappa };
        self.fluid.step(&state.u, &state.n.deviation, &self.grad_phi, self.cfg.dt, opts)
    }

    /// Oxygen update: transport, heat flow, implicit absorption with `n` frozen.
    pub fn step_c(&self, state: &SystemState) -> Result<OffsetField> {
        ensure_solenoidal(&state.u)?;
        self.check_transport_cfl(&state.u)?;
        Ok(self.step_c_unchecked(state))
    }

    fn step_c_unchecked(&self, state: &SystemState) -> OffsetField {
        let dt = self.cfg.dt;
        let mut dev = state.c.deviation.values().to_vec();
        if state.u.max_abs() > 0.0 {
            let mut adv = vec![0.0; dev.len()];
            advect_raw(&state.u, &dev, self.cfg.kappa, &mut adv);
            dev.iter_mut().zip(&adv).for_each(|(v, a)| *v -= dt * a);
        }
        self.heat.heat(&mut dev, dt);
        let cl = state.c.level;
        let nl = state.n.level;
        let nd = state.n.deviation.values();
        let level = cl / (1.0 + dt * nl);
        for (v, &ndi) in dev.iter_mut().zip(nd) {
            let den = 1.0 + dt * (nl + ndi);
            *v = *v / den - cl * dt * ndi / (den * (1.0 + dt * nl));
        }
        let mut out = OffsetField {
            level,
            deviation: ScalarField::from_values(&self.domain, dev).expect("finite update"),
        };
        out.rebalance();
        out
    }

    /// Density update: chemotactic flux and transport, then heat flow.
    pub fn step_n(&mut self, state: &SystemState) -> Result<OffsetField> {
        ensure_solenoidal(&state.u)?;
        self.check_transport_cfl(&state.u)?;
        self.step_n_unchecked(state)
    }

    fn step_n_unchecked(&mut self, state: &SystemState) -> Result<OffsetField> {
        let dt = self.cfg.dt;
        let d = self.domain;
        let mut dev = state.n.deviation.values().to_vec();
        let mut work = vec![0.0; dev.len()];
        if !self.sens.is_zero() {
            let grad_c = grad_to_faces(&state.c.deviation, GradMode::Neumann).max_abs();
            let drift_courant = dt * self.sens.c_s() * grad_c / d.h();
            if drift_courant > 1.0 {
                return Err(Error::Cfl(format!("chemotactic Courant number {drift_courant:.3} exceeds 1")));
            }
            let flux = chemo_face_flux(&state.n, &state.c, &self.sens)?;
            divergence_raw(&flux, &mut work);
            dev.iter_mut().zip(&work).for_each(|(v, q)| *v -= dt * q);
        }
        if state.u.max_abs() > 0.0 {
            advect_raw(&state.u, state.n.deviation.values(), self.cfg.kappa, &mut work);
            dev.iter_mut().zip(&work).for_each(|(v, a)| *v -= dt * a);
        }
        self.heat.heat(&mut dev, dt);
        let mut out = OffsetField {
            level: state.n.level,
            deviation: ScalarField::from_values(&d, dev).map_err(|_| Error::NonFinite("density".into()))?,
        };
        out.rebalance();
        self.positivity(&mut out, state)?;
        Ok(out)
    }

    fn positivity(&mut self, n: &mut OffsetField, state: &SystemState) -> Result<()> {
        let budget = *self
            .budget
            .get_or_insert_with(|| CLIP_BUDGET_REL * state.n.integral().abs());
        let level = n.level;
        let vol = self.domain.cell_volume();
        let guard = self.cfg.positivity_guard;
        for v in n.deviation.values_mut() {
            let val = level + *v;
            if val < 0.0 {
                self.audit.events += 1;
                self.audit.clipped_mass += -val * vol;
                if guard {
                    *v = -level;
                }
            }
        }
        if guard && self.audit.clipped_mass > budget {
            return Err(Error::PositivityBudget { clipped: self.audit.clipped_mass, budget });
        }
        Ok(())
    }

    /// One full step `(n, c, u, t) → (n', c', u', t + dt)`.
    pub fn step_system(&mut self, state: &SystemState) -> Result<SystemState> {
        let u = self.step_u(state)?;
        self.check_transport_cfl(&state.u)?;
        let c = self.step_c_unchecked(state);
        let n = self.step_n_unchecked(state)?;
        let next = SystemState { n, c, u, t: state.t + self.cfg.dt };
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("state at t = {}", next.t)));
        }
        Ok(next)
    }
}

/// Single density step with `Φ = 0` (the density update does not see `Φ`).
pub fn step_n(state: &SystemState, s: &SensitivitySpec, cfg: StepConfig) -> Result<ScalarField> {
    let phi = ScalarField::zeros(state.domain());
    Stepper::new(s, &phi, cfg)?.step_n(state).map(|n| n.to_field())
}

/// Single oxygen step.
pub fn step_c(state: &SystemState, cfg: StepConfig) -> Result<ScalarField> {
    let d = state.domain();
    let phi = ScalarField::zeros(d);
    Stepper::new(&SensitivitySpec::zero(d), &phi, cfg)?.step_c(state).map(|c| c.to_field())
}

/// Advances `state` to `horizon`, calling `observe` at `t = 0` and every
/// `record_every` steps, and at the final step.
pub fn run(
    stepper: &mut Stepper,
    state: &mut SystemState,
    horizon: f64,
    record_every: usize,
    mut observe: impl FnMut(&SystemState) -> Result<()>,
) -> Result<()> {
    let dt = stepper.cfg.dt;
    let steps = (horizon / dt).round() as usize;
    if ((steps as f64) * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    let record_every = record_every.max(1);
    observe(state)?;
    for k in 1..=steps {
        let next = stepper.step_system(state)?;
        *state = next;
        // keep the clock on the step lattice
        state.t = k as f64 * dt;
        if k % record_every == 0 || k == steps {
            observe(state)?;
        }
    }
    Ok(())
}
