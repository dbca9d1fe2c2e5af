//! Tensor-valued chemotactic sensitivities `S(x, n, c)` and the boundary cutoff `ρ_η`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{OffsetField, RectDomain, ScalarField, SystemState, VectorField};
use crate::steppers::{run, StepConfig, Stepper};

/// A 3×3 tensor; only the leading `N×N` block is meaningful.
pub type Tensor = [[f64; 3]; 3];

const BOUND_SLACK: f64 = 1e-9;

/// Trilinearly interpolated tensor table over `(x, n, c)` nodes.
///
/// `tensors` is flattened as `(ix * n_nodes.len() + in) * c_nodes.len() + ic`,
/// each entry a row-major `N×N` block. Queries outside the node range are
/// clamped to the boundary nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomTable {
    pub x_nodes: Vec<f64>,
    pub n_nodes: Vec<f64>,
    pub c_nodes: Vec<f64>,
    pub tensors: Vec<Vec<f64>>,
}

impl CustomTable {
    fn validate(&self, dim: usize) -> Result<()> {
        for (name, nodes) in [("x", &self.x_nodes), ("n", &self.n_nodes), ("c", &self.c_nodes)] {
            if nodes.is_empty() {
                return Err(Error::InvalidArgument(format!("custom table: empty {name} axis")));
            }
            if nodes.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArgument(format!("custom table: {name} nodes must increase")));
            }
        }
        let expected = self.x_nodes.len() * self.n_nodes.len() * self.c_nodes.len();
        if self.tensors.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "custom table: expected {expected} tensors, got {}",
                self.tensors.len()
            )));
        }
        if self.tensors.iter().any(|t| t.len() != dim * dim || t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "custom table: every tensor needs {} finite entries",
                dim * dim
            )));
        }
        Ok(())
    }

    fn eval(&self, dim: usize, x0: f64, n: f64, c: f64) -> Tensor {
        let (ix, wx) = bracket(&self.x_nodes, x0);
        let (in_, wn) = bracket(&self.n_nodes, n);
        let (ic, wc) = bracket(&self.c_nodes, c);
        let (ln, lc) = (self.n_nodes.len(), self.c_nodes.len());
        let mut out = [[0.0; 3]; 3];
        for (dx, fx) in [(0, 1.0 - wx), (1, wx)] {
            for (dn, fn_) in [(0, 1.0 - wn), (1, wn)] {
                for (dc, fc) in [(0, 1.0 - wc), (1, wc)] {
                    let w = fx * fn_ * fc;
                    if w == 0.0 {
                        continue;
                    }
                    let jx = (ix + dx).min(self.x_nodes.len() - 1);
                    let jn = (in_ + dn).min(ln - 1);
                    let jc = (ic + dc).min(lc - 1);
                    let t = &self.tensors[(jx * ln + jn) * lc + jc];
                    for r in 0..dim {
                        for s in 0..dim {
                            out[r][s] += w * t[r * dim + s];
                        }
                    }
                }
            }
        }
        out
    }
}

/// Lower node index and interpolation weight, clamped to the node range.
fn bracket(nodes: &[f64], v: f64) -> (usize, f64) {
    if nodes.len() == 1 || v <= nodes[0] {
        return (0, 0.0);
    }
    let last = nodes.len() - 1;
    if v >= nodes[last] {
        return (last, 0.0);
    }
    let i = nodes.partition_point(|&x| x <= v) - 1;
    (i, (v - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

/// Catalog entry for `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SensitivityKind {
    /// `S ≡ 0`
    Zero,
    /// `S = χ I`
    ScalarChi,
    /// `S = χ R_θ`; in 3D the rotation acts in the x–y plane and `S_zz = χ`.
    Rotation,
    /// `S = χ · ½(1 + cos(2πx/Lx) cos(2πy/Ly)) / (1 + c) · R_θ`
    SpaceModulated,
    /// Tabulated tensor, interpolated and rescaled so that `|S|_F ≤ C_S`.
    CustomTable(CustomTable),
}

/// A sensitivity `S`, its declared bound `C_S`, and an optional cutoff width `η`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivitySpec {
    kind: SensitivityKind,
    chi: f64,
    theta: f64,
    c_s: f64,
    eta: f64,
    domain: RectDomain,
}

impl SensitivitySpec {
    pub fn new(kind: SensitivityKind, chi: f64, theta: f64, c_s: f64, eta: f64, domain: &RectDomain) -> Result<Self> {
        if !(chi.is_finite() && theta.is_finite() && c_s.is_finite() && c_s >= 0.0) {
            return Err(Error::InvalidArgument("sensitivity parameters must be finite, C_S >= 0".into()));
        }
        check_eta(domain, eta)?;
        if let SensitivityKind::CustomTable(t) = &kind {
            t.validate(domain.dim())?;
        }
        let spec = Self { kind, chi, theta, c_s, eta, domain: *domain };
        let sup = spec.analytic_sup();
        if sup > c_s * (1.0 + BOUND_SLACK) {
            return Err(Error::SensitivityBound { norm: sup, bound: c_s });
        }
        Ok(spec)
    }

    /// `S ≡ 0` with `C_S = 0`.
    pub fn zero(domain: &RectDomain) -> Self {
        Self { kind: SensitivityKind::Zero, chi: 0.0, theta: 0.0, c_s: 0.0, eta: 0.0, domain: *domain }
    }

    /// `χ R_θ` with the tight bound `C_S = |χ|·|R_θ|_F`.
    pub fn rotation(domain: &RectDomain, chi: f64, theta: f64) -> Result<Self> {
        let c_s = chi.abs() * (domain.dim() as f64).sqrt();
        Self::new(SensitivityKind::Rotation, chi, theta, c_s, 0.0, domain)
    }

    /// Same sensitivity with cutoff width `eta`.
    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        check_eta(&self.domain, eta)?;
        Ok(Self { eta, ..self.clone() })
    }

    pub fn kind(&self) -> &SensitivityKind {
        &self.kind
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn c_s(&self) -> f64 {
        self.c_s
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn domain(&self) -> &RectDomain {
        &self.domain
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, SensitivityKind::Zero) || (self.chi == 0.0 && !matches!(self.kind, SensitivityKind::CustomTable(_)))
    }

    /// Supremum of `|S|_F` implied by the closed form of each catalog kind.
    fn analytic_sup(&self) -> f64 {
        let dim = self.domain.dim() as f64;
        match self.kind {
            SensitivityKind::Zero => 0.0,
            SensitivityKind::ScalarChi | SensitivityKind::Rotation | SensitivityKind::SpaceModulated => {
                self.chi.abs() * dim.sqrt()
            }
            SensitivityKind::CustomTable(_) => 0.0,
        }
    }

    /// Cutoff value `ρ_η(x)`.
    pub fn cutoff(&self, x: [f64; 3]) -> f64 {
        cutoff_value(self.domain.wall_distance(x), self.eta)
    }

    /// `S_η(x, n, c)`; negative `n`, `c` (roundoff) are treated as zero.
    pub fn eval_tensor(&self, x: [f64; 3], n: f64, c: f64) -> Result<Tensor> {
        let dim = self.domain.dim();
        let (n, c) = (n.max(0.0), c.max(0.0));
        let rho = self.cutoff(x);
        let mut t = [[0.0; 3]; 3];
        if rho == 0.0 {
            return Ok(t);
        }
        let rot = |scale: f64| -> Tensor {
            let (s, co) = self.theta.sin_cos();
            let mut r = [[0.0; 3]; 3];
            r[0] = [scale * co, -scale * s, 0.0];
            r[1] = [scale * s, scale * co, 0.0];
            if dim == 3 {
                r[2][2] = scale;
            }
            r
        };
        match &self.kind {
            SensitivityKind::Zero => {}
            SensitivityKind::ScalarChi => {
                for (a, row) in t.iter_mut().enumerate().take(dim) {
                    row[a] = self.chi;
                }
            }
            SensitivityKind::Rotation => t = rot(self.chi),
            SensitivityKind::SpaceModulated => {
                let l = self.domain.lengths();
                let m = 0.5 * (1.0 + (2.0 * PI * x[0] / l[0]).cos() * (2.0 * PI * x[1] / l[1]).cos());
                t = rot(self.chi * m / (1.0 + c));
            }
            SensitivityKind::CustomTable(tab) => {
                t = tab.eval(dim, x[0], n, c);
                let norm = frobenius(&t);
                if norm > self.c_s {
                    let f = self.c_s / norm;
                    t.iter_mut().flatten().for_each(|v| *v *= f);
                }
            }
        }
        if rho != 1.0 {
            t.iter_mut().flatten().for_each(|v| *v *= rho);
        }
        let norm = frobenius(&t);
        if !(norm <= self.c_s * (1.0 + BOUND_SLACK)) {
            return Err(Error::SensitivityBound { norm, bound: self.c_s });
        }
        Ok(t)
    }
}

pub fn frobenius(t: &Tensor) -> f64 {
    t.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_eta(domain: &RectDomain, eta: f64) -> Result<()> {
    let lmin = domain.lengths().iter().copied().fold(f64::INFINITY, f64::min);
    if !(eta >= 0.0) || eta >= lmin / 4.0 {
        return Err(Error::InvalidArgument(format!(
            "cutoff width must satisfy 0 <= eta < min(L)/4 = {}, got {eta}",
            lmin / 4.0
        )));
    }
    Ok(())
}

/// Quintic smoothstep ramp of the wall distance: 0 for `d ≤ η/2`, 1 for `d ≥ η`.
pub fn cutoff_value(d: f64, eta: f64) -> f64 {
    if eta == 0.0 {
        return 1.0;
    }
    let s = ((d - 0.5 * eta) / (0.5 * eta)).clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

/// `ρ_η` sampled at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffField(pub ScalarField);

pub fn build_cutoff(domain: &RectDomain, eta: f64) -> Result<CutoffField> {
    check_eta(domain, eta)?;
    Ok(CutoffField(ScalarField::from_fn(domain, |x| cutoff_value(domain.wall_distance(x), eta))))
}

/// Everything of an η-study run except `η` itself.
#[derive(Clone, Debug)]
pub struct EtaStudySetup {
    pub sensitivity: SensitivitySpec,
    pub phi: ScalarField,
    pub n0: ScalarField,
    pub c0: ScalarField,
    pub u0: VectorField,
    pub step: StepConfig,
    pub horizon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EtaGap {
    pub eta: f64,
    pub eta_next: f64,
    pub gap_n: f64,
    pub gap_c: f64,
}

/// Runs the system once per `η` (strictly decreasing) and reports the sup-norm
/// gaps of `n` and `c` at the horizon between consecutive members.
pub fn eta_convergence_study(setup: &EtaStudySetup, etas: &[f64]) -> Result<Vec<EtaGap>> {
    if etas.len() < 2 {
        return Err(Error::InvalidArgument(format!("eta study needs at least 2 values, got {}", etas.len())));
    }
    if etas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("eta list must be strictly decreasing".into()));
    }
    let mut finals = Vec::with_capacity(etas.len());
    for &eta in etas {
        let s = setup.sensitivity.with_eta(eta)?;
        let mut stepper = Stepper::new(&s, &setup.phi, setup.step)?;
        let mut state = SystemState::new(&setup.n0, &setup.c0, setup.u0.clone())?;
        run(&mut stepper, &mut state, setup.horizon, usize::MAX, |_| Ok(()))?;
        finals.push(state);
    }
    Ok(etas
        .windows(2)
        .zip(finals.windows(2))
        .map(|(e, f)| {
            let gap = |a: &OffsetField, b: &OffsetField| {
                let shift = a.level - b.level;
                a.deviation.lin_comb(1.0, &b.deviation, -1.0).map(|v| v + shift).max_abs()
            };
            EtaGap { eta: e[0], eta_next: e[1], gap_n: gap(&f[0].n, &f[1].n), gap_c: gap(&f[0].c, &f[1].c) }
        })
        .collect())
}
