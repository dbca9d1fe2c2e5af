//! Run configuration (TOML). Unknown keys are rejected everywhere.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RectDomain, ScalarField, SystemState, VectorField};
use crate::ledger::{KConstants, ParameterSet};
use crate::sensitivity::{CustomTable, SensitivityKind, SensitivitySpec};
use crate::spectral::HeatCase;
use crate::steppers::{PoissonKind, StepConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nz: Option<usize>,
}

impl DomainBlock {
    /// The grid with every cell count multiplied by `refine`.
    pub fn build(&self, refine: usize) -> Result<RectDomain> {
        let r = refine.max(1);
        match (self.lz, self.nz) {
            (None, None) => RectDomain::new(&[self.lx, self.ly], &[self.nx * r, self.ny * r]),
            (Some(lz), Some(nz)) => RectDomain::new(&[self.lx, self.ly, lz], &[self.nx * r, self.ny * r, nz * r]),
            _ => Err(Error::InvalidArgument("domain: lz and nz must be given together".into())),
        }
    }
}

/// Model and certificate inputs. Omitted spectral data are computed on the
/// run grid; omitted rates follow the default recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsBlock {
    pub m: f64,
    pub p0: f64,
    pub q0: f64,
    pub q1: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<KConstants>,
}

impl Default for ParamsBlock {
    fn default() -> Self {
        Self {
            m: 1.0,
            p0: 1.5,
            q0: 3.0,
            q1: 3.0,
            beta: 0.75,
            alpha1: None,
            alpha2: None,
            mu: None,
            lambda1: None,
            lambda1_prime: None,
            k: None,
        }
    }
}

impl ParamsBlock {
    pub fn resolve(&self, dim: usize, lambda1: f64, lambda1_prime: f64, omega: f64, c_s: f64, grad_phi_inf: f64) -> ParameterSet {
        let l1 = self.lambda1.unwrap_or(lambda1);
        let l1p = self.lambda1_prime.unwrap_or(lambda1_prime);
        let alpha1 = self.alpha1.unwrap_or(0.8 * self.m.min(l1));
        let alpha2 = self.alpha2.unwrap_or(0.8 * alpha1.min(l1p));
        ParameterSet {
            m: self.m,
            dim,
            p0: self.p0,
            q0: self.q0,
            q1: self.q1,
            beta: self.beta,
            alpha1,
            alpha2,
            mu: self.mu.unwrap_or(0.5 * (alpha2 + l1p)),
            c_s,
            grad_phi_inf,
            omega,
            lambda1: l1,
            lambda1_prime: l1p,
            k: self.k.unwrap_or_default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    ConstantPlusCosine,
    GaussianBump,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeUnit {
    #[default]
    Absolute,
    /// Multiples of the certificate's `ε`.
    Eps,
}

/// Initial data. `n₀ = m + a_n·w` with `w` mean-free, `c₀ = a_c·(1 + ½ v)` with
/// `|v| ≤ 1`, and `u₀` from the stream function `a_u·sin²(πx/Lx) sin²(πy/Ly)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    #[serde(default)]
    pub kind: InitialKind,
    #[serde(default)]
    pub unit: AmplitudeUnit,
    #[serde(default)]
    pub n_amplitude: f64,
    #[serde(default)]
    pub c_amplitude: f64,
    #[serde(default)]
    pub u_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
    /// Bump width, as a fraction of `Lx`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    /// Checkpoint to start from (`kind = "file"`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for InitialBlock {
    fn default() -> Self {
        Self {
            kind: InitialKind::ConstantPlusCosine,
            unit: AmplitudeUnit::Absolute,
            n_amplitude: 0.0,
            c_amplitude: 0.0,
            u_amplitude: 0.0,
            seed: 0,
            width: None,
            path: None,
        }
    }
}

/// Cosine modes used by `constant_plus_cosine`.
const MODES: [(usize, usize); 5] = [(1, 0), (0, 1), (1, 1), (2, 1), (1, 2)];

impl InitialBlock {
    /// Builds the initial state; `eps` scales the amplitudes when `unit = "eps"`.
    pub fn build(&self, d: &RectDomain, m: f64, eps: Option<f64>, base_dir: &Path) -> Result<SystemState> {
        if self.kind == InitialKind::File {
            let p = self.path.as_ref().ok_or_else(|| Error::InvalidArgument("initial.path is required for kind = \"file\"".into()))?;
            let state = crate::io::read_checkpoint(&base_dir.join(p))?;
            d.ensure_same(state.domain(), "checkpoint grid vs configured grid")?;
            return Ok(state);
        }
        let scale = match (self.unit, eps) {
            (AmplitudeUnit::Absolute, _) => 1.0,
            (AmplitudeUnit::Eps, Some(e)) => e,
            (AmplitudeUnit::Eps, None) => return Err(Error::InvalidArgument("eps-relative amplitudes need a certificate".into())),
        };
        let (an, ac, au) = (self.n_amplitude * scale, self.c_amplitude * scale, self.u_amplitude * scale);
        if an < 0.0 || ac < 0.0 {
            return Err(Error::InvalidArgument("initial amplitudes of n and c must be nonnegative".into()));
        }
        let l = d.lengths().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let shape = match self.kind {
            InitialKind::ConstantPlusCosine => {
                let coef: Vec<f64> = MODES.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                ScalarField::from_fn(d, |x| {
                    MODES
                        .iter()
                        .zip(&coef)
                        .map(|(&(i, j), a)| a * (PI * i as f64 * x[0] / l[0]).cos() * (PI * j as f64 * x[1] / l[1]).cos())
                        .sum()
                })
            }
            InitialKind::GaussianBump => {
                let w = self.width.unwrap_or(0.15) * l[0];
                let centre: Vec<f64> = l.iter().map(|li| li * rng.random_range(0.3..0.7)).collect();
                ScalarField::from_fn(d, |x| {
                    let r2: f64 = (0..d.dim()).map(|a| (x[a] - centre[a]).powi(2)).sum();
                    (-r2 / (2.0 * w * w)).exp()
                })
            }
            InitialKind::File => unreachable!(),
        };
        let peak = shape.max_abs();
        let unit_shape = if peak > 0.0 { shape.scaled(1.0 / peak) } else { shape };
        let mut w = unit_shape.clone();
        w.add_constant(-unit_shape.mean());
        let n0 = w.map(|v| m + an * v);
        if n0.min() < 0.0 {
            return Err(Error::InvalidArgument(format!("n amplitude {an} makes n0 negative for m = {m}")));
        }
        let c0 = unit_shape.map(|v| ac * (1.0 + 0.5 * v));
        let u0 = if au == 0.0 {
            VectorField::zeros(d)
        } else {
            VectorField::from_stream_function(d, |x, y| au * ((PI * x / l[0]).sin() * (PI * y / l[1]).sin()).powi(2))?
        };
        SystemState::new(&n0, &c0, u0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityName {
    #[default]
    Zero,
    ScalarChi,
    Rotation,
    SpaceModulated,
    CustomTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SensitivityBlock {
    #[serde(default)]
    pub kind: SensitivityName,
    #[serde(default)]
    pub chi: f64,
    #[serde(default)]
    pub theta: f64,
    /// Declared bound; defaults to `|χ|√N` for catalog kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_s: Option<f64>,
    #[serde(default)]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<CustomTable>,
}

impl SensitivityBlock {
    pub fn build(&self, d: &RectDomain) -> Result<SensitivitySpec> {
        let tight = self.chi.abs() * (d.dim() as f64).sqrt();
        let (kind, c_s) = match self.kind {
            SensitivityName::Zero => (SensitivityKind::Zero, self.c_s.unwrap_or(0.0)),
            SensitivityName::ScalarChi => (SensitivityKind::ScalarChi, self.c_s.unwrap_or(tight)),
            SensitivityName::Rotation => (SensitivityKind::Rotation, self.c_s.unwrap_or(tight)),
            SensitivityName::SpaceModulated => (SensitivityKind::SpaceModulated, self.c_s.unwrap_or(tight)),
            SensitivityName::CustomTable => {
                let t = self.table.clone().ok_or_else(|| Error::InvalidArgument("sensitivity.table is required for custom_table".into()))?;
                let c_s = self.c_s.ok_or_else(|| Error::InvalidArgument("sensitivity.c_s is required for custom_table".into()))?;
                (SensitivityKind::CustomTable(t), c_s)
            }
        };
        SensitivitySpec::new(kind, self.chi, self.theta, c_s, self.eta, d)
    }
}

/// Time stepping and the buoyancy potential `Φ(x) = g·x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteppingBlock {
    pub dt: f64,
    pub horizon: f64,
    /// Trace record interval, in steps.
    pub snapshot_every: usize,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_true")]
    pub positivity_guard: bool,
    #[serde(default = "default_true")]
    pub advect_momentum: bool,
    #[serde(default)]
    pub poisson: PoissonKind,
    #[serde(default = "default_phi_gradient")]
    pub phi_gradient: Vec<f64>,
}

fn default_kappa() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

fn default_phi_gradient() -> Vec<f64> {
    vec![0.0, 1.0]
}

impl Default for SteppingBlock {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 1.0,
            snapshot_every: 10,
            kappa: default_kappa(),
            positivity_guard: true,
            advect_momentum: true,
            poisson: PoissonKind::FastDiagonal,
            phi_gradient: default_phi_gradient(),
        }
    }
}

impl SteppingBlock {
    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            kappa: self.kappa,
            positivity_guard: self.positivity_guard,
            advect_momentum: self.advect_momentum,
            poisson: self.poisson,
            ..StepConfig::new(self.dt)
        }
    }

    pub fn phi(&self, d: &RectDomain) -> Result<ScalarField> {
        if self.phi_gradient.len() > d.dim() {
            return Err(Error::InvalidArgument(format!("stepping.phi_gradient has {} entries for a {}D grid", self.phi_gradient.len(), d.dim())));
        }
        let g = self.phi_gradient.clone();
        Ok(ScalarField::from_fn(d, |x| g.iter().enumerate().map(|(a, ga)| ga * x[a]).sum()))
    }

    pub fn grad_phi_inf(&self) -> f64 {
        self.phi_gradient.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsBlock {
    #[serde(default = "default_trace")]
    pub trace_csv: String,
    #[serde(default = "default_report")]
    pub report_json: String,
    #[serde(default = "default_certificate")]
    pub certificate_json: String,
    /// Checkpoint interval in steps; absent means no checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn default_trace() -> String {
    "trace.csv".into()
}

fn default_report() -> String {
    "report.json".into()
}

fn default_certificate() -> String {
    "certificate.json".into()
}

impl Default for OutputsBlock {
    fn default() -> Self {
        Self { trace_csv: default_trace(), report_json: default_report(), certificate_json: default_certificate(), checkpoint_every: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaStudyBlock {
    pub etas: Vec<f64>,
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatCheckBlock {
    /// Case names `i`..`iv`.
    pub cases: Vec<String>,
    /// `(p, q)` pairs; `inf` is written as a string.
    pub pairs: Vec<[ExponentValue; 2]>,
    pub samples: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub n_times: usize,
    #[serde(default)]
    pub seed: u64,
}

impl HeatCheckBlock {
    pub fn parsed_cases(&self) -> Result<Vec<HeatCase>> {
        self.cases.iter().map(|c| c.parse()).collect()
    }
}

impl Default for HeatCheckBlock {
    fn default() -> Self {
        let inf = ExponentValue::Text("inf".into());
        Self {
            cases: vec!["i".into(), "ii".into()],
            pairs: vec![
                [ExponentValue::Number(2.0), ExponentValue::Number(2.0)],
                [inf.clone(), ExponentValue::Number(2.0)],
                [inf.clone(), inf],
            ],
            samples: 100,
            t_min: 1e-3,
            t_max: 10.0,
            n_times: 30,
            seed: 0,
        }
    }
}

/// A Lebesgue exponent: a number or `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExponentValue {
    Number(f64),
    Text(String),
}

impl ExponentValue {
    pub fn value(&self) -> Result<f64> {
        match self {
            ExponentValue::Number(v) => Ok(*v),
            ExponentValue::Text(s) if s == "inf" => Ok(f64::INFINITY),
            ExponentValue::Text(s) => Err(Error::InvalidArgument(format!("exponent '{s}' is neither a number nor \"inf\""))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainBlock,
    #[serde(default)]
    pub params: ParamsBlock,
    #[serde(default)]
    pub initial: InitialBlock,
    #[serde(default)]
    pub sensitivity: SensitivityBlock,
    #[serde(default)]
    pub stepping: SteppingBlock,
    #[serde(default)]
    pub outputs: OutputsBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_study: Option<EtaStudyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heat_check: Option<HeatCheckBlock>,
}

impl RunConfig {
    /// Parses and checks the blocks that can be checked without running anything.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.domain.build(1)?;
        self.sensitivity.build(&d)?;
        self.stepping.step_config().validate()?;
        self.stepping.phi(&d)?;
        if !(self.stepping.horizon >= 0.0 && self.stepping.horizon.is_finite()) {
            return Err(Error::InvalidArgument("stepping.horizon must be finite and >= 0".into()));
        }
        if self.stepping.snapshot_every == 0 {
            return Err(Error::InvalidArgument("stepping.snapshot_every must be >= 1".into()));
        }
        if let Some(h) = &self.heat_check {
            h.parsed_cases()?;
            for p in &h.pairs {
                p[0].value()?;
                p[1].value()?;
            }
        }
        // λ₁′ is bounded below by the first Dirichlet eigenvalue of −Δ
        let lambda1 = crate::spectral::discrete_lambda1(&d);
        let dirichlet: f64 = d.lengths().iter().map(|l| (PI / l).powi(2)).sum();
        let c_s = self.sensitivity.build(&d)?.c_s();
        let p = self.params.resolve(d.dim(), lambda1, dirichlet, d.volume(), c_s, self.stepping.grad_phi_inf());
        p.validate(crate::ledger::Variant::Main)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[domain]
lx = 1.0
ly = 1.0
nx = 16
ny = 16
"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.params, ParamsBlock::default());
        assert_eq!(c.stepping.dt, 1e-3);
        assert_eq!(c.outputs.trace_csv, "trace.csv");
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = format!("{MINIMAL}\n[stepping]\ndt = 1e-3\nhorizon = 1.0\nsnapshot_every = 1\ndtt = 2.0\n");
        let e = RunConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(e.contains("dtt") && e.contains("line"), "{e}");
    }

    #[test]
    fn initial_data_is_mean_exact_and_nonnegative() {
        let d = RectDomain::build_grid(1.0, 1.0, 16, 16).unwrap();
        for kind in [InitialKind::ConstantPlusCosine, InitialKind::GaussianBump] {
            let b = InitialBlock { kind, n_amplitude: 0.3, c_amplitude: 0.2, u_amplitude: 0.01, seed: 4, ..InitialBlock::default() };
            let s = b.build(&d, 1.0, None, Path::new(".")).unwrap();
            assert!((s.n.mean() - 1.0).abs() < 1e-15);
            assert!(s.n.min() >= 0.0 && s.c.min() >= 0.0);
            assert!(s.u.max_abs() > 0.0);
        }
        let b = InitialBlock { n_amplitude: 5.0, ..InitialBlock::default() };
        assert!(b.build(&d, 1.0, None, Path::new(".")).is_err());
    }
}
