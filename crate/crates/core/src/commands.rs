//! Subcommand implementations shared by the binary and the tests.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{HeatCheckBlock, RunConfig};
use crate::error::{Error, Result};
use crate::fastdiag::FastDiag;
use crate::fluid::stokes_lambda1;
use crate::grid::{OffsetField, RectDomain, ScalarField, SystemState, VectorField};
use crate::io;
use crate::ledger::{
    check_initial_smallness, choose_m_eps, choose_m_eps_alternative, compute_c1_to_c7, default_t_grid, log_grid, sigma,
    Certificate, IntegralConstants, ParameterSet, SmallnessCheck, Variant,
};
use crate::monitor::{certify, CertificateReport, CertifyOptions, NormTrace};
use crate::operators::{divergence, DIV_TOL_ABS, DIV_TOL_REL};
use crate::sensitivity::{eta_convergence_study, EtaGap, EtaStudySetup, SensitivitySpec};
use crate::spectral::{
    discrete_lambda1, neumann_lambda1, verify_heat_estimate, ConvergenceRow, HeatEstimate, HeatMethod, HeatSample,
    HeatSemigroup, RECOMMENDED_CELLS_PER_SIDE,
};
use crate::steppers::{run, ClipAudit, Stepper};

const STOKES_TOL: f64 = 1e-8;

/// Flags common to all subcommands.
#[derive(Clone, Debug)]
pub struct Options {
    pub out: PathBuf,
    pub variant: Variant,
    pub seed: Option<u64>,
    /// Grid multiplier; for `constants` it refines the time grid instead.
    pub refine: usize,
    /// Directory that relative paths in the config are resolved against.
    pub base_dir: PathBuf,
}

impl Default for Options {
    fn default() -> Self {
        Self { out: PathBuf::from("."), variant: Variant::Main, seed: None, refine: 1, base_dir: PathBuf::from(".") }
    }
}

/// Warnings for grids below the recommended resolution.
pub fn resolution_warnings(d: &RectDomain) -> Vec<String> {
    d.cells()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < RECOMMENDED_CELLS_PER_SIDE)
        .map(|(a, c)| format!("warning: {c} cells along axis {a} is below the recommended resolution of {RECOMMENDED_CELLS_PER_SIDE}"))
        .collect()
}

/// Spectral data, parameters and certificate for one configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub domain: RectDomain,
    pub sensitivity: SensitivitySpec,
    pub phi: ScalarField,
    pub params: ParameterSet,
    pub constants: IntegralConstants,
    pub certificate: Certificate,
}

pub fn resolve_params(cfg: &RunConfig, d: &RectDomain, sens: &SensitivitySpec) -> Result<ParameterSet> {
    let lambda1 = discrete_lambda1(d);
    let lambda1_prime = match cfg.params.lambda1_prime {
        Some(v) => v,
        None => stokes_lambda1(d, STOKES_TOL)?.lambda1_prime,
    };
    Ok(cfg.params.resolve(d.dim(), lambda1, lambda1_prime, d.volume(), sens.c_s(), cfg.stepping.grad_phi_inf()))
}

pub fn prepare(cfg: &RunConfig, opts: &Options, t_refine: usize) -> Result<Prepared> {
    let domain = cfg.domain.build(opts.refine)?;
    let sensitivity = cfg.sensitivity.build(&domain)?;
    let phi = cfg.stepping.phi(&domain)?;
    let params = resolve_params(cfg, &domain, &sensitivity)?;
    params.validate(opts.variant)?;
    let constants = compute_c1_to_c7(&params, &default_t_grid(t_refine))?;
    let certificate = match opts.variant {
        Variant::Main => choose_m_eps(&params, &constants, sigma(&params)?)?,
        Variant::Alternative => {
            let init = initial_block(cfg, opts);
            let s = init.build(&domain, params.m, None, &opts.base_dir).map_err(|e| match e {
                Error::InvalidArgument(m) if m.contains("certificate") => {
                    Error::InvalidArgument("the alternative variant needs absolute initial amplitudes".into())
                }
                other => other,
            })?;
            choose_m_eps_alternative(&params, &constants, s.c.to_field().max_abs())?
        }
    };
    Ok(Prepared { domain, sensitivity, phi, params, constants, certificate })
}

fn initial_block(cfg: &RunConfig, opts: &Options) -> crate::config::InitialBlock {
    let mut b = cfg.initial.clone();
    if let Some(s) = opts.seed {
        b.seed = s;
    }
    b
}

fn out_path(opts: &Options, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&opts.out)?;
    Ok(opts.out.join(name))
}

/// `k̂₁` for `‖e^{tΔ}w‖_∞ ≤ k₁(1 + t^{−N/(2p₀)})e^{−λ₁t}‖w‖_{p₀}` from the
/// initial deviation plus seeded random mean-free samples.
pub fn estimate_k1(n0: &OffsetField, p0: f64, t_max: f64, seed: u64) -> Result<f64> {
    let d = *n0.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![];
    let dev = n0.centered();
    if dev.max_abs() > 0.0 {
        samples.push(HeatSample::Scalar(dev));
    }
    for _ in 0..8 {
        let mut w = ScalarField::from_values(&d, (0..d.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        w.add_constant(-w.mean());
        samples.push(HeatSample::Scalar(w));
    }
    let heat = HeatSemigroup::new(&d, HeatMethod::FastDiagonal, 1e-12)?;
    let grid = log_grid(1e-3, t_max.max(1e-2), 30);
    Ok(verify_heat_estimate(&heat, crate::spectral::HeatCase::I, f64::INFINITY, p0, &samples, &grid)?.k_hat)
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulationReport {
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub variant: Variant,
    pub lambda1_h: f64,
    pub lambda1_prime_h: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub eps: f64,
    pub smallness: SmallnessCheck,
    pub k1_hat: f64,
    pub max_rel_mass_drift: f64,
    /// `max_t |∇·u|_∞ / max{1e−9‖u‖₂, 1e−12}`
    pub max_divergence_ratio: f64,
    pub clip_audit: ClipAudit,
    pub certificate_report: CertificateReport,
}

/// Result of `simulate`, with the in-memory trace.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub report: SimulationReport,
    pub trace: NormTrace,
    pub certificate: Certificate,
    pub params: ParameterSet,
    pub final_state: SystemState,
}

/// Runs one simulation and writes the trace CSV, report and certificate JSON
/// (and checkpoints when requested) into `opts.out`.
pub fn simulate(cfg: &RunConfig, opts: &Options) -> Result<Simulation> {
    let prep = prepare(cfg, opts, 1)?;
    let d = prep.domain;
    let init = initial_block(cfg, opts);
    let mut state = init.build(&d, prep.params.m, Some(prep.certificate.eps), &opts.base_dir)?;
    let n0 = state.n.clone();
    let u0 = state.u.clone();
    let smallness = check_initial_smallness(&n0.to_field(), &state.c.to_field(), &u0, &prep.certificate, d.dim(), opts.variant)?;
    let horizon = cfg.stepping.horizon;
    let k1_hat = estimate_k1(&n0, prep.params.p0, horizon, init.seed)?;

    let mut stepper = Stepper::new(&prep.sensitivity, &prep.phi, cfg.stepping.step_config())?;
    let heat = FastDiag::neumann(&d);
    let mut trace = NormTrace::new(&prep.params, n0.mean(), true);
    let mass0 = n0.integral();
    let mut drift: f64 = 0.0;
    let mut div_ratio: f64 = 0.0;
    let dt = cfg.stepping.dt;
    let ckpt_every = cfg.outputs.checkpoint_every;
    if ckpt_every.is_some() {
        std::fs::create_dir_all(&opts.out)?;
    }
    run(&mut stepper, &mut state, horizon, cfg.stepping.snapshot_every, |s| {
        if !s.is_finite() {
            return Err(Error::NonFinite(format!("state at t = {}", s.t)));
        }
        let mut reference = n0.clone();
        heat.heat(reference.deviation.values_mut(), s.t);
        trace.record(s, Some(&reference))?;
        if mass0 != 0.0 {
            drift = drift.max(((s.n.integral() - mass0) / mass0).abs());
        }
        let max_div = divergence(&s.u).max_abs();
        div_ratio = div_ratio.max(max_div / (DIV_TOL_REL * s.u.l2_norm()).max(DIV_TOL_ABS));
        if let Some(k) = ckpt_every {
            let step = (s.t / dt).round() as usize;
            if k > 0 && step % k == 0 {
                io::write_checkpoint(&opts.out.join(format!("checkpoint_{step:08}.ctns")), s)?;
            }
        }
        Ok(())
    })?;

    let certificate_report = certify(&trace, &prep.certificate, &prep.params, CertifyOptions { window: None, k1_hat })?;
    let report = SimulationReport {
        cells: d.cells().to_vec(),
        lengths: d.lengths().to_vec(),
        dt,
        horizon,
        variant: opts.variant,
        lambda1_h: prep.params.lambda1,
        lambda1_prime_h: prep.params.lambda1_prime,
        alpha1: prep.params.alpha1,
        alpha2: prep.params.alpha2,
        eps: prep.certificate.eps,
        smallness,
        k1_hat,
        max_rel_mass_drift: drift,
        max_divergence_ratio: div_ratio,
        clip_audit: stepper.audit(),
        certificate_report,
    };
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    std::fs::write(out_path(opts, &cfg.outputs.trace_csv)?, csv)?;
    io::write_json(&out_path(opts, &cfg.outputs.report_json)?, &report)?;
    std::fs::write(out_path(opts, &cfg.outputs.certificate_json)?, prep.certificate.to_json()?)?;
    Ok(Simulation { report, trace, certificate: prep.certificate, params: prep.params, final_state: state })
}

/// Certificate JSON for the configured parameters.
pub fn constants(cfg: &RunConfig, opts: &Options) -> Result<Certificate> {
    let grid_opts = Options { refine: 1, ..opts.clone() };
    let prep = prepare(cfg, &grid_opts, opts.refine.max(1))?;
    std::fs::write(out_path(opts, &cfg.outputs.certificate_json)?, prep.certificate.to_json()?)?;
    Ok(prep.certificate)
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenOutput {
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
    pub lambda1: f64,
    pub lambda1_residual: f64,
    pub lambda1_h_exact: f64,
    pub lambda1_table: Vec<ConvergenceRow>,
    pub observed_order: Option<f64>,
    pub lambda1_prime: f64,
    pub lambda1_prime_residual: f64,
    pub warnings: Vec<String>,
}

pub fn eigen(cfg: &RunConfig, opts: &Options) -> Result<EigenOutput> {
    let d = cfg.domain.build(opts.refine)?;
    let warnings = resolution_warnings(&d);
    let r = neumann_lambda1(&d)?;
    let s = stokes_lambda1(&d, STOKES_TOL)?;
    let out = EigenOutput {
        cells: d.cells().to_vec(),
        lengths: d.lengths().to_vec(),
        lambda1: r.lambda1,
        lambda1_residual: r.residual,
        lambda1_h_exact: discrete_lambda1(&d),
        lambda1_table: r.table,
        observed_order: r.observed_order,
        lambda1_prime: s.lambda1_prime,
        lambda1_prime_residual: s.residual,
        warnings,
    };
    io::write_json(&out_path(opts, "eigen.json")?, &out)?;
    Ok(out)
}

pub const DEFAULT_ETAS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

pub fn eta_study(cfg: &RunConfig, opts: &Options) -> Result<Vec<EtaGap>> {
    let d = cfg.domain.build(opts.refine)?;
    let (etas, horizon) = match &cfg.eta_study {
        Some(b) => (b.etas.clone(), b.horizon),
        None => (DEFAULT_ETAS.to_vec(), cfg.stepping.horizon),
    };
    let state = initial_block(cfg, opts).build(&d, cfg.params.m, None, &opts.base_dir)?;
    let setup = EtaStudySetup {
        sensitivity: cfg.sensitivity.build(&d)?,
        phi: cfg.stepping.phi(&d)?,
        n0: state.n.to_field(),
        c0: state.c.to_field(),
        u0: state.u,
        step: cfg.stepping.step_config(),
        horizon,
    };
    let gaps = eta_convergence_study(&setup, &etas)?;
    let mut buf = Vec::new();
    io::write_eta_gaps(&mut buf, &gaps)?;
    std::fs::write(out_path(opts, "eta_study.csv")?, buf)?;
    Ok(gaps)
}

/// Seeded random samples of the kind each case needs.
pub fn heat_samples(d: &RectDomain, case: crate::spectral::HeatCase, count: usize, seed: u64) -> Result<Vec<HeatSample>> {
    use crate::spectral::HeatCase;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| match case {
            HeatCase::Iv => {
                let comps = (0..d.dim()).map(|a| (0..d.face_count(a)).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                Ok(HeatSample::Flux(VectorField::from_components(d, comps)?))
            }
            _ => {
                let mut w = ScalarField::from_values(d, (0..d.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
                if case == HeatCase::I {
                    w.add_constant(-w.mean());
                }
                Ok(HeatSample::Scalar(w))
            }
        })
        .collect()
}

pub fn heat_check(cfg: &RunConfig, opts: &Options) -> Result<Vec<HeatEstimate>> {
    let d = cfg.domain.build(opts.refine)?;
    let block = cfg.heat_check.clone().unwrap_or_else(HeatCheckBlock::default);
    let seed = opts.seed.unwrap_or(block.seed);
    let heat = HeatSemigroup::new(&d, HeatMethod::FastDiagonal, 1e-12)?;
    let grid = log_grid(block.t_min, block.t_max, block.n_times);
    let mut out = vec![];
    for case in block.parsed_cases()? {
        let samples = heat_samples(&d, case, block.samples, seed)?;
        for pair in &block.pairs {
            let (p, q) = (pair[0].value()?, pair[1].value()?);
            out.push(verify_heat_estimate(&heat, case, p, q, &samples, &grid)?);
        }
    }
    io::write_json(&out_path(opts, "heat_check.json")?, &out)?;
    Ok(out)
}

/// Re-checks the saved trace in `opts.out` against the saved certificate.
pub fn certify_saved(cfg: &RunConfig, opts: &Options, trace_path: Option<&Path>, cert_path: Option<&Path>) -> Result<CertificateReport> {
    let trace_path = trace_path.map(Path::to_path_buf).unwrap_or_else(|| opts.out.join(&cfg.outputs.trace_csv));
    let cert_path = cert_path.map(Path::to_path_buf).unwrap_or_else(|| opts.out.join(&cfg.outputs.certificate_json));
    let cert = Certificate::from_json(&std::fs::read_to_string(&cert_path)?)?;
    let d = cfg.domain.build(opts.refine)?;
    let sens = cfg.sensitivity.build(&d)?;
    let params = resolve_params(cfg, &d, &sens)?;
    let trace = NormTrace::read_csv(std::fs::File::open(&trace_path)?, &params, params.m)?;
    let init = initial_block(cfg, opts);
    let n0 = init.build(&d, params.m, Some(cert.eps), &opts.base_dir)?.n;
    let horizon = trace.rows().last().map(|r| r.t).unwrap_or(0.0);
    let k1_hat = estimate_k1(&n0, params.p0, horizon, init.seed)?;
    let report = certify(&trace, &cert, &params, CertifyOptions { window: None, k1_hat })?;
    io::write_json(&out_path(opts, "certify_report.json")?, &report)?;
    Ok(report)
}
