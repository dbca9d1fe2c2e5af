//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctns::commands::{self, Options, Simulation};
use ctns::config::RunConfig;
use ctns::error::Result;
use ctns::grid::{RectDomain, ScalarField, SystemState, VectorField};
use ctns::ledger::{
    certificate_slacks, choose_m_eps, choose_m_eps_alternative, compute_c1_to_c7, default_t_grid, lemma24_sup_ratio,
    log_grid, scalar_inequality_suite, sigma, sigma_closed_form, sigma_of, KConstants, ParameterSet, Variant,
};
use ctns::sensitivity::SensitivitySpec;
use ctns::spectral::{discrete_lambda1, duhamel_residual_n, heat_apply, HeatCase};
use ctns::steppers::{run, StepConfig, Stepper};

/// Extrapolated first Stokes eigenvalue of the unit square (pre-build oracle).
const STOKES_REF: f64 = 52.3447;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&config_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn options(out: &Path) -> Options {
    Options { out: out.to_path_buf(), base_dir: config_path(""), ..Options::default() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

struct AcceptanceRun {
    sim: Simulation,
    elapsed: Duration,
    trace_bytes: Vec<u8>,
    mass0: f64,
}

fn acceptance_run() -> Result<AcceptanceRun> {
    let cfg = load("acceptance.toml");
    let dir = tempfile::tempdir()?;
    let start = Instant::now();
    let sim = commands::simulate(&cfg, &options(dir.path()))?;
    let elapsed = start.elapsed();
    let trace_bytes = std::fs::read(dir.path().join(&cfg.outputs.trace_csv))?;
    let d = cfg.domain.build(1)?;
    let mass0 = cfg.params.m * d.volume();
    Ok(AcceptanceRun { sim, elapsed, trace_bytes, mass0 })
}

fn mass_conservation(r: &AcceptanceRun) -> Verdict {
    let rep = &r.sim.report;
    let clip_budget = 1e-9 * r.mass0;
    verdict(
        rep.max_rel_mass_drift <= 1e-9 && rep.clip_audit.clipped_mass <= clip_budget,
        format!(
            "max relative drift {:.3e} (<= 1e-9), clipped mass {:.3e} in {} events (<= {:.1e})",
            rep.max_rel_mass_drift, rep.clip_audit.clipped_mass, rep.clip_audit.events, clip_budget
        ),
    )
}

fn divergence_free(r: &AcceptanceRun) -> Verdict {
    let ratio = r.sim.report.max_divergence_ratio;
    verdict(ratio <= 1.0, format!("max |div u| / max(1e-9 |u|_2, 1e-12) = {ratio:.3e} (<= 1)"))
}

fn eigenvalues() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let sq = commands::eigen(&load("unit_square.toml"), &options(dir.path()))?;
    let rect = commands::eigen(&load("rectangle_2x1.toml"), &options(dir.path()))?;
    let e_sq = rel(sq.lambda1, PI * PI);
    let e_rect = rel(rect.lambda1, PI * PI / 4.0);
    let order = sq.observed_order.unwrap_or(f64::NAN);
    let e_stokes = rel(sq.lambda1_prime, STOKES_REF);
    Ok(verdict(
        e_sq <= 5e-3 && e_rect <= 5e-3 && order >= 1.8 && e_stokes <= 2e-2,
        format!(
            "lambda1 {:.6} (rel {:.2e}), 2x1 {:.6} (rel {:.2e}), order {:.3}, Stokes {:.4} vs {STOKES_REF} (rel {:.2e})",
            sq.lambda1, e_sq, rect.lambda1, e_rect, order, sq.lambda1_prime, e_stokes
        ),
    ))
}

fn decay_rates(r: &AcceptanceRun) -> Verdict {
    let rep = &r.sim.report;
    let cert = &rep.certificate_report;
    let alpha1 = 0.8 * r.sim.params.m.min(rep.lambda1_h);
    let alpha2 = 0.8 * alpha1.min(rep.lambda1_prime_h);
    let want = [("n_minus_mean_Linf", alpha1), ("c_W1q1", alpha1), ("u_Linf", alpha2)];
    let mut ok = rep.smallness.passed && r.elapsed <= Duration::from_secs(600);
    let mut parts = vec![format!("smallness {}", if rep.smallness.passed { "pass" } else { "FAIL" })];
    for (col, alpha) in want {
        match cert.rates.iter().find(|f| f.column == col) {
            Some(f) => {
                ok &= f.fit.rate >= 0.95 * alpha;
                parts.push(format!("{col} {:.4} (>= {:.4})", f.fit.rate, 0.95 * alpha));
            }
            None => {
                ok = false;
                parts.push(format!("{col} missing"));
            }
        }
    }
    ok &= cert.holds_to_horizon;
    parts.push(format!("bounds hold {}", cert.holds_to_horizon));
    parts.push(format!("runtime {:.0} s", r.elapsed.as_secs_f64()));
    verdict(ok, parts.join(", "))
}

fn oxygen_envelope(r: &AcceptanceRun) -> Verdict {
    let env = &r.sim.report.certificate_report.c_envelope;
    verdict(env.holds, format!("worst |c|_inf / envelope = {:.4} (k1_hat {:.4})", env.worst_ratio, env.k1_hat))
}

fn homogeneous_oracle() -> Result<Verdict> {
    let d = RectDomain::build_grid(1.0, 1.0, 32, 32)?;
    let m = 1.0;
    let c0 = 0.7;
    let dt = 1e-4;
    let steps = 10_000;
    let n = ScalarField::constant(&d, m);
    let c = ScalarField::constant(&d, c0);
    let mut state = SystemState::new(&n, &c, VectorField::zeros(&d))?;
    let sens = SensitivitySpec::rotation(&d, 0.5, PI / 2.0)?;
    let phi = ScalarField::from_fn(&d, |x| x[1]);
    let mut stepper = Stepper::new(&sens, &phi, StepConfig::new(dt))?;
    let mut worst_rec: f64 = 0.0;
    let mut worst_cont: f64 = 0.0;
    run(&mut stepper, &mut state, steps as f64 * dt, 100, |s| {
        let k = (s.t / dt).round() as i32;
        let expect_rec = c0 * (1.0 + m * dt).powi(-k);
        let expect_cont = c0 * (-m * s.t).exp();
        for v in s.c.to_field().values() {
            worst_rec = worst_rec.max(rel(*v, expect_rec));
            worst_cont = worst_cont.max(rel(*v, expect_cont));
        }
        Ok(())
    })?;
    Ok(verdict(
        worst_rec <= 1e-12 && worst_cont <= 1e-3,
        format!("recurrence rel err {worst_rec:.2e} (<= 1e-12), continuum rel err {worst_cont:.2e} (<= 1e-3)"),
    ))
}

fn random_params(rng: &mut ChaCha8Rng, variant: Variant) -> ParameterSet {
    let lambda1 = rng.random_range(2.0..20.0);
    let lambda1_prime = rng.random_range(20.0..80.0);
    let m: f64 = rng.random_range(0.3..3.0);
    let p0: f64 = rng.random_range(1.05..1.95);
    let q0_max: f64 = 1.0 / (1.0 / p0 - 0.5);
    let q0 = rng.random_range(2.05..q0_max.min(12.0));
    let q1 = q0 * rng.random_range(1.0..2.0);
    let beta = rng.random_range(0.55..0.95);
    let cap = m.min(lambda1);
    let alpha1 = match variant {
        Variant::Main => cap * rng.random_range(0.2..0.95),
        Variant::Alternative => {
            let lo = 0.5 * m;
            lo + (cap - lo) * rng.random_range(0.1..0.9)
        }
    };
    let alpha2 = alpha1.min(lambda1_prime) * rng.random_range(0.2..0.95);
    let mu = alpha2 + (lambda1_prime - alpha2) * rng.random_range(0.1..0.9);
    ParameterSet {
        m,
        dim: 2,
        p0,
        q0,
        q1,
        beta,
        alpha1,
        alpha2,
        mu,
        c_s: rng.random_range(0.0..2.0),
        grad_phi_inf: rng.random_range(0.0..2.0),
        omega: rng.random_range(0.5..4.0),
        lambda1,
        lambda1_prime,
        k: KConstants::default(),
    }
}

fn certificate_arithmetic() -> Result<Verdict> {
    let t_grid = default_t_grid(1);
    let default = ParameterSet::default_2d(PI * PI, STOKES_REF, 1.0, 0.5 * 2f64.sqrt(), 1.0);
    let mut sets = vec![(Variant::Main, default, 0.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..50 {
        let variant = if i % 2 == 0 { Variant::Main } else { Variant::Alternative };
        let c0_bound = rng.random_range(0.1..2.0);
        sets.push((variant, random_params(&mut rng, variant), c0_bound));
    }
    let mut worst_slack = f64::INFINITY;
    let mut bad = vec![];
    let mut worst_m0 = f64::NEG_INFINITY;
    for (i, (variant, p, c0_bound)) in sets.iter().enumerate() {
        p.validate(*variant)?;
        let c = match compute_c1_to_c7(p, &t_grid) {
            Ok(c) => c,
            Err(e) => {
                bad.push(format!("set {i}: {e}"));
                continue;
            }
        };
        let cert = match variant {
            Variant::Main => choose_m_eps(p, &c, sigma(p)?),
            Variant::Alternative => choose_m_eps_alternative(p, &c, *c0_bound),
        };
        let cert = match cert {
            Ok(cert) => cert,
            Err(e) => {
                bad.push(format!("set {i}: {e}"));
                continue;
            }
        };
        let slacks = certificate_slacks(&cert, p, &c)?;
        let min = slacks.iter().copied().fold(f64::INFINITY, f64::min);
        worst_slack = worst_slack.min(min);
        if min < 0.0 || !(cert.eps > 0.0) {
            bad.push(format!("set {i}: slack {min:e}, eps {:e}", cert.eps));
        }
        if *variant == Variant::Alternative {
            let bound = cert.eps * p.omega.powf(-1.0 / p.p0);
            match cert.m0 {
                Some(m0) if m0 > 0.0 && m0 < bound => worst_m0 = worst_m0.max(m0 / bound),
                other => bad.push(format!("set {i}: m0 {other:?} vs {bound:e}")),
            }
        }
    }
    Ok(verdict(
        bad.is_empty(),
        format!(
            "{} sets, smallest slack {worst_slack:.3e}, largest m0 / (eps |Omega|^(-1/p0)) {worst_m0:.3}{}",
            sets.len(),
            if bad.is_empty() { String::new() } else { format!("; failures: {}", bad.join("; ")) }
        ),
    ))
}

fn integral_inequalities() -> Result<Verdict> {
    let mut sigma_err: f64 = 0.0;
    for &(a, alpha) in &[(2.0 / 3.0, 0.8), (0.5, 1.0), (0.1, 0.3), (0.9, 2.5), (0.75, 0.05), (0.3, 7.0)] {
        sigma_err = sigma_err.max(rel(sigma_of(a, alpha)?, sigma_closed_form(a, alpha)));
    }
    let t_grid = log_grid(1e-3, 30.0, 25);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sym_err: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    let mut nonfinite = 0;
    for _ in 0..200 {
        let eta = rng.random_range(0.05..0.3);
        let alpha = rng.random_range(0.0..1.0 - eta);
        let beta = rng.random_range(eta..1.0 - eta);
        let delta = rng.random_range(0.0..3.0);
        let gamma_ = delta + rng.random_range(eta..1.0 / eta);
        let r = lemma24_sup_ratio(alpha, beta, gamma_, delta, eta, &t_grid)?;
        let s = lemma24_sup_ratio(beta, alpha, delta, gamma_, eta, &t_grid)?;
        if !(r.is_finite() && s.is_finite()) {
            nonfinite += 1;
            continue;
        }
        worst_ratio = worst_ratio.max(r);
        sym_err = sym_err.max(rel(r, s));
    }
    let suite = scalar_inequality_suite(1_000_000, 5);
    Ok(verdict(
        sigma_err <= 1e-8 && nonfinite == 0 && sym_err <= 1e-9 && suite.passed(),
        format!(
            "sigma rel err {sigma_err:.2e} (<= 1e-8), convolution sup ratio max {worst_ratio:.3} with {nonfinite} non-finite, exchange rel err {sym_err:.2e} (<= 1e-9), scalar violations {} + {} in {} samples",
            suite.violations_monotone, suite.violations_product, suite.samples
        ),
    ))
}

fn semigroup() -> Result<Verdict> {
    let d = RectDomain::build_grid(1.0, 1.0, 32, 32)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut w = ScalarField::from_values(&d, (0..d.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let lam = discrete_lambda1(&d);
    let mut comp_err: f64 = 0.0;
    let mut decay_excess: f64 = 0.0;
    for &(t, s) in &[(0.01, 0.02), (0.1, 0.05), (0.3, 0.7)] {
        let joint = heat_apply(&w, t + s)?;
        let split = heat_apply(&heat_apply(&w, s)?, t)?;
        comp_err = comp_err.max(joint.lin_comb(1.0, &split, -1.0).max_abs() / w.max_abs());
    }
    w.add_constant(-w.mean());
    let w2 = w.lp_norm(2.0)?;
    for t in log_grid(1e-3, 2.0, 12) {
        let ratio = heat_apply(&w, t)?.lp_norm(2.0)? / ((-lam * t).exp() * w2);
        decay_excess = decay_excess.max(ratio - 1.0);
    }
    let dir = tempfile::tempdir()?;
    let est = commands::heat_check(&load("unit_square.toml"), &options(dir.path()))?;
    let wanted = [(2.0, 2.0), (f64::INFINITY, 2.0), (f64::INFINITY, f64::INFINITY)];
    let mut finite = true;
    let mut covered = 0;
    let mut summary = vec![];
    for case in [HeatCase::I, HeatCase::Ii] {
        for (p, q) in wanted {
            match est.iter().find(|e| e.case == case && e.p == p && e.q == q) {
                Some(e) => {
                    covered += 1;
                    finite &= e.k_hat.is_finite();
                    summary.push(format!("{case:?}({p},{q}) {:.3}", e.k_hat));
                }
                None => finite = false,
            }
        }
    }
    Ok(verdict(
        comp_err <= 1e-9 && decay_excess <= 1e-9 && finite && covered == 6,
        format!(
            "composition err {comp_err:.2e} (<= 1e-9), L2 decay excess {decay_excess:.2e}, k_hat {}",
            summary.join(" ")
        ),
    ))
}

fn eta_convergence() -> Result<Verdict> {
    let dir = tempfile::tempdir()?;
    let gaps = commands::eta_study(&load("eta_study.toml"), &options(dir.path()))?;
    let g: Vec<f64> = gaps.iter().map(|x| x.gap_n).collect();
    let monotone = g.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let shrink = g.last().copied().unwrap_or(f64::NAN) <= 0.5 * g.first().copied().unwrap_or(f64::NAN);
    Ok(verdict(
        g.len() == 3 && monotone && shrink,
        format!("n gaps {:?}", g.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()),
    ))
}

fn duhamel_run(sens: &SensitivitySpec, n0: &ScalarField, c0: &ScalarField, dt: f64, horizon: f64) -> Result<f64> {
    let d = *n0.domain();
    let phi = ScalarField::from_fn(&d, |x| x[1]);
    let mut state = SystemState::new(n0, c0, VectorField::zeros(&d))?;
    let mut stepper = Stepper::new(sens, &phi, StepConfig::new(dt))?;
    let mut snaps = vec![];
    run(&mut stepper, &mut state, horizon, 1, |s| {
        snaps.push(s.clone());
        Ok(())
    })?;
    duhamel_residual_n(&snaps, sens, stepper.config().kappa)
}

fn duhamel() -> Result<Verdict> {
    let d = RectDomain::build_grid(1.0, 1.0, 48, 48)?;
    let n0 = ScalarField::from_fn(&d, |x| 1.0 + 0.05 * (PI * x[0]).cos() * (PI * x[1]).cos());
    let zero_c = ScalarField::zeros(&d);
    let pure = duhamel_run(&SensitivitySpec::zero(&d), &n0, &zero_c, 1e-3, 0.2)?;
    let sens = SensitivitySpec::rotation(&d, 0.5, PI / 2.0)?;
    let c0 = ScalarField::from_fn(&d, |x| 0.05 * (1.0 + 0.5 * (PI * x[0]).cos()));
    let coarse = duhamel_run(&sens, &n0, &c0, 2e-3, 0.2)?;
    let fine = duhamel_run(&sens, &n0, &c0, 1e-3, 0.2)?;
    let ratio = coarse / fine;
    Ok(verdict(
        pure <= 1e-8 && ratio >= 1.5,
        format!("pure heat {pure:.2e} (<= 1e-8), coupled {coarse:.3e} -> {fine:.3e}, ratio {ratio:.3} (>= 1.5)"),
    ))
}

fn determinism(first: &AcceptanceRun) -> Result<Verdict> {
    let second = acceptance_run()?;
    let same = first.trace_bytes == second.trace_bytes;
    Ok(verdict(same, format!("{} trace bytes, identical {same}", first.trace_bytes.len())))
}

fn report(id: usize, name: &str, v: Result<Verdict>) -> bool {
    let v = v.unwrap_or_else(|e| verdict(false, format!("error: {e}")));
    println!("criterion {id:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    v.pass
}

fn main() -> ExitCode {
    let mut all = true;
    let run = acceptance_run();
    match &run {
        Ok(r) => {
            all &= report(1, "mass conservation", Ok(mass_conservation(r)));
            all &= report(2, "divergence-free velocity", Ok(divergence_free(r)));
        }
        Err(e) => {
            for (id, name) in [(1, "mass conservation"), (2, "divergence-free velocity")] {
                all &= report(id, name, Err(ctns::error::Error::InvalidArgument(format!("acceptance run: {e}"))));
            }
        }
    }
    all &= report(3, "eigenvalue oracles", eigenvalues());
    let from_run = |f: fn(&AcceptanceRun) -> Verdict| match &run {
        Ok(r) => Ok(f(r)),
        Err(e) => Err(ctns::error::Error::InvalidArgument(format!("acceptance run: {e}"))),
    };
    all &= report(4, "decay rates", from_run(decay_rates));
    all &= report(5, "oxygen envelope", from_run(oxygen_envelope));
    all &= report(6, "homogeneous oracle", homogeneous_oracle());
    all &= report(7, "certificate arithmetic", certificate_arithmetic());
    all &= report(8, "integral inequalities", integral_inequalities());
    all &= report(9, "semigroup properties", semigroup());
    all &= report(10, "eta convergence", eta_convergence());
    all &= report(11, "Duhamel residual", duhamel());
    let det = match &run {
        Ok(r) => determinism(r),
        Err(e) => Err(ctns::error::Error::InvalidArgument(format!("acceptance run: {e}"))),
    };
    all &= report(12, "determinism", det);
    println!("acceptance: {}", if all { "all criteria pass" } else { "FAILURES" });
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
