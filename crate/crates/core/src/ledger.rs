//! Constants ledger: `σ`, the integral constants `C₁..C₇`, selection of the
//! smallness certificate `(M₁..M₄, ε)`, and the scalar inequality checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::operators::gradient_magnitude;
use crate::quadrature::{integrate_exp_tail, integrate_singular, QuadOptions};

/// Relative safety factor applied to strict lower bounds when picking `M_i`.
pub const MARGIN: f64 = 1.1;
/// Factor applied to the displayed `ε` minimum.
pub const EPS_SAFETY: f64 = 0.99;

const QUAD: QuadOptions = QuadOptions { abs_tol: 1e-300, rel_tol: 1e-11, max_intervals: 4000 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Main,
    Alternative,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Variant::Main),
            "alternative" => Ok(Variant::Alternative),
            other => Err(Error::InvalidArgument(format!("unknown variant '{other}' (main|alternative)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KProvenance {
    UserSupplied,
    Estimated,
    #[default]
    Default,
}

/// Semigroup, projection and embedding constants `k₁..k₉`. The
/// exponent-dependent families `k₅(p)`, `k₇(p,q)`, `k₈(p,q)` are single
/// scalars valid for every exponent pair used by the certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KConstants {
    pub k: [f64; 9],
    #[serde(default)]
    pub provenance: KProvenance,
}

impl Default for KConstants {
    fn default() -> Self {
        Self { k: [1.0; 9], provenance: KProvenance::Default }
    }
}

impl KConstants {
    /// `k_i`, one-based.
    pub fn get(&self, i: usize) -> f64 {
        self.k[i - 1]
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self { k: self.k.map(|v| v * f), provenance: self.provenance }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSet {
    pub m: f64,
    pub dim: usize,
    pub p0: f64,
    pub q0: f64,
    pub q1: f64,
    pub beta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub mu: f64,
    pub c_s: f64,
    pub grad_phi_inf: f64,
    pub omega: f64,
    pub lambda1: f64,
    pub lambda1_prime: f64,
    #[serde(default)]
    pub k: KConstants,
}

fn constraint(name: &str, detail: String) -> Error {
    Error::Constraint { constraint: name.to_string(), detail }
}

impl ParameterSet {
    /// Default 2D set: `m = 1`, `p₀ = 1.5`, `q₀ = q₁ = 3`, `β = 0.75`,
    /// `α₁ = 0.8·min{m, λ₁}`, `α₂ = 0.8·min{α₁, λ₁′}`, `μ = (α₂ + λ₁′)/2`.
    pub fn default_2d(lambda1: f64, lambda1_prime: f64, omega: f64, c_s: f64, grad_phi_inf: f64) -> Self {
        let m: f64 = 1.0;
        let alpha1 = 0.8 * m.min(lambda1);
        let alpha2 = 0.8 * alpha1.min(lambda1_prime);
        Self {
            m,
            dim: 2,
            p0: 1.5,
            q0: 3.0,
            q1: 3.0,
            beta: 0.75,
            alpha1,
            alpha2,
            mu: 0.5 * (alpha2 + lambda1_prime),
            c_s,
            grad_phi_inf,
            omega,
            lambda1,
            lambda1_prime,
            k: KConstants::default(),
        }
    }

    pub fn n(&self) -> f64 {
        self.dim as f64
    }

    /// Checks the parameter constraints; `Variant::Main` uses `α₁ < min{m, λ₁}`,
    /// the alternative additionally needs `α₁ > m/2`.
    pub fn validate(&self, variant: Variant) -> Result<()> {
        let n = self.n();
        let finite = [
            self.m, self.p0, self.q0, self.q1, self.beta, self.alpha1, self.alpha2, self.mu, self.c_s,
            self.grad_phi_inf, self.omega, self.lambda1, self.lambda1_prime,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(constraint("finite", "all parameters must be finite".into()));
        }
        if !(self.dim == 2 || self.dim == 3) {
            return Err(constraint("N in {2,3}", format!("N = {}", self.dim)));
        }
        if !(self.m > 0.0) {
            return Err(constraint("m > 0", format!("m = {}", self.m)));
        }
        if !(n / 2.0 < self.p0 && self.p0 < n) {
            return Err(constraint("N/2 < p0 < N", format!("p0 = {}, N = {}", self.p0, self.dim)));
        }
        if !(self.q0 > n && 1.0 / self.q0 > 1.0 / self.p0 - 1.0 / n) {
            return Err(constraint("q0 > N and 1/q0 > 1/p0 - 1/N", format!("q0 = {}, p0 = {}", self.q0, self.p0)));
        }
        if !(self.q1 >= self.q0) {
            return Err(constraint("q1 >= q0", format!("q1 = {}, q0 = {}", self.q1, self.q0)));
        }
        if !(n / 4.0 < self.beta && self.beta < 1.0) {
            return Err(constraint("N/4 < beta < 1", format!("beta = {}", self.beta)));
        }
        if !(self.lambda1 > 0.0 && self.lambda1_prime > 0.0) {
            return Err(constraint("lambda1, lambda1' > 0", format!("{} {}", self.lambda1, self.lambda1_prime)));
        }
        if !(0.0 < self.alpha1 && self.alpha1 < self.m.min(self.lambda1)) {
            return Err(constraint("0 < alpha1 < min{m, lambda1}", format!("alpha1 = {}", self.alpha1)));
        }
        if variant == Variant::Alternative && !(self.alpha1 > 0.5 * self.m) {
            return Err(constraint("alpha1 > m/2", format!("alpha1 = {}, m = {}", self.alpha1, self.m)));
        }
        if !(0.0 < self.alpha2 && self.alpha2 < self.alpha1.min(self.lambda1_prime)) {
            return Err(constraint("0 < alpha2 < min{alpha1, lambda1'}", format!("alpha2 = {}", self.alpha2)));
        }
        if !(self.alpha2 < self.mu && self.mu < self.lambda1_prime) {
            return Err(constraint("alpha2 < mu < lambda1'", format!("mu = {}", self.mu)));
        }
        if !(self.c_s >= 0.0 && self.grad_phi_inf >= 0.0 && self.omega > 0.0) {
            return Err(constraint("C_S, |grad Phi|, |Omega|", "C_S >= 0, |grad Phi| >= 0, |Omega| > 0".into()));
        }
        if self.k.k.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(constraint("k_i > 0", format!("{:?}", self.k.k)));
        }
        Ok(())
    }
}

/// `∫₀^∞ (1 + s^{−a}) e^{−α s} ds` with `a = N/(2p₀)`.
pub fn sigma_of(a: f64, alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&a) {
        return Err(constraint("N/(2 p0) < 1", format!("exponent {a}")));
    }
    if !(alpha > 0.0) {
        return Err(constraint("alpha1 > 0", format!("alpha1 = {alpha}")));
    }
    let f = |s: f64| (1.0 + s.powf(-a)) * (-alpha * s).exp();
    let head = integrate_singular(|s, _| (s.powf(a) + 1.0) * (-alpha * s).exp(), 0.0, 1.0, a, 0.0, QUAD)?;
    let tail = integrate_exp_tail(f, alpha, QUAD)?;
    Ok(head.value + tail.value)
}

/// `1/α + Γ(1−a) α^{a−1}`.
pub fn sigma_closed_form(a: f64, alpha: f64) -> f64 {
    1.0 / alpha + gamma(1.0 - a) * alpha.powf(a - 1.0)
}

pub fn sigma(params: &ParameterSet) -> Result<f64> {
    sigma_of(params.n() / (2.0 * params.p0), params.alpha1)
}

/// `(offset + r^{−exponent}) e^{−rate r}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Factor {
    pub offset: f64,
    pub exponent: f64,
    pub rate: f64,
}

impl Factor {
    pub fn new(offset: f64, exponent: f64, rate: f64) -> Self {
        Self { offset, exponent, rate }
    }

    /// The factor times `r^{exponent}`, bounded at `r = 0`.
    fn regular(&self, r: f64, shift: f64) -> f64 {
        let power = if self.exponent == 0.0 { 1.0 } else { r.powf(self.exponent) };
        (self.offset * power + 1.0) * (-(self.rate - shift) * r).exp()
    }
}

/// `e^{ρt} ∫₀ᵗ f(s) g(t−s) ds` with `ρ` at most both rates.
pub fn convolution_scaled(f: Factor, g: Factor, t: f64, rho: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let r = integrate_singular(|s, r| f.regular(s, rho) * g.regular(r, rho), 0.0, t, f.exponent, g.exponent, QUAD)?;
    Ok(r.value)
}

/// Logarithmic grid of `n` points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Default sup grid: 400 log-spaced points on `[1e−4, 1e2]`, times `refine`.
pub fn default_t_grid(refine: usize) -> Vec<f64> {
    log_grid(1e-4, 1e2, 400 * refine.max(1))
}

/// Shape `(1 + t^{−e}) e^{−ρ t}`, or plain `e^{−ρ t}` for `None`; the
/// exponential is handled by scaling.
fn shape(t: f64, e: Option<f64>) -> f64 {
    e.map_or(1.0, |e| 1.0 + t.powf(-e))
}

fn sup_ratio(f: Factor, g: Factor, rho: f64, shape_exp: Option<f64>, t_grid: &[f64]) -> Result<f64> {
    let mut best = 0.0f64;
    for &t in t_grid {
        let v = convolution_scaled(f, g, t, rho)? / shape(t, shape_exp);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("sup ratio at t = {t}")));
        }
        best = best.max(v);
    }
    Ok(best)
}

/// Hypothesis `α∈[0,1−η], β∈[η,1−η], 1/η ≥ γ−δ ≥ η`, in either orientation.
fn convolution_admissible(a: f64, b: f64, g: f64, d: f64, eta: f64) -> bool {
    let one = |a: f64, b: f64, g: f64, d: f64| {
        (0.0..=1.0 - eta).contains(&a) && (eta..=1.0 - eta).contains(&b) && (eta..=1.0 / eta).contains(&(g - d))
    };
    eta > 0.0 && (one(a, b, g, d) || one(b, a, d, g))
}

/// `sup_t ∫₀ᵗ (1+s^{−α})(1+(t−s)^{−β}) e^{−γs} e^{−δ(t−s)} ds
///  / [e^{−min{γ,δ}t}(1+t^{min{0,1−α−β}})]`.
pub fn lemma24_sup_ratio(alpha: f64, beta: f64, gamma_: f64, delta: f64, eta: f64, t_grid: &[f64]) -> Result<f64> {
    if !convolution_admissible(alpha, beta, gamma_, delta, eta) {
        return Err(constraint(
            "alpha in [0,1-eta], beta in [eta,1-eta], 1/eta >= gamma-delta >= eta",
            format!("alpha={alpha}, beta={beta}, gamma={gamma_}, delta={delta}, eta={eta}"),
        ));
    }
    let rho = gamma_.min(delta);
    let e = -(0.0f64).min(1.0 - alpha - beta);
    sup_ratio(Factor::new(1.0, alpha, gamma_), Factor::new(1.0, beta, delta), rho, Some(e), t_grid)
}

/// `C₁..C₇`, each the sup over `t_grid` of its integral divided by its shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegralConstants {
    pub c: [f64; 7],
}

impl IntegralConstants {
    /// `C_i`, one-based.
    pub fn get(&self, i: usize) -> f64 {
        self.c[i - 1]
    }
}

/// Exponent samples standing in for `θ ∈ [q₀, ∞]`.
pub fn theta_samples(q0: f64) -> [f64; 4] {
    [q0, 2.0 * q0, 10.0 * q0, f64::INFINITY]
}

pub fn compute_c1_to_c7(p: &ParameterSet, t_grid: &[f64]) -> Result<IntegralConstants> {
    p.validate(Variant::Main).or_else(|e| match e {
        // the alternative only differs in α₁'s lower bound
        Error::Constraint { .. } => p.validate(Variant::Alternative),
        other => Err(other),
    })?;
    let n = p.n();
    let a1 = n / 2.0 * (1.0 / p.p0 - 1.0 / p.q0);
    let nq = n / (2.0 * p.q0);
    let (al1, al2, mu, l1) = (p.alpha1, p.alpha2, p.mu, p.lambda1);
    let c1 = sup_ratio(Factor::new(1.0, a1, al1), Factor::new(0.0, 0.0, mu), al2, None, t_grid)?;
    let c2 = sup_ratio(Factor::new(1.0, 1.0 - nq, al2), Factor::new(0.0, 0.5, mu), al2, Some(0.5 - nq), t_grid)?;
    let c3 = sup_ratio(Factor::new(1.0, a1, al1), Factor::new(0.0, 0.5, mu), al2, Some(0.5), t_grid)?;
    let c4 = sup_ratio(Factor::new(1.0, 1.0 - nq, 2.0 * al2), Factor::new(0.0, 0.5 + nq, mu), al2, Some(0.5), t_grid)?;
    let c5 = sup_ratio(Factor::new(1.0, n / (2.0 * p.p0), al1), Factor::new(1.0, 0.5, l1), al1, Some(0.5), t_grid)?;
    let c6 = sup_ratio(Factor::new(1.0, 1.0 - nq, al1), Factor::new(1.0, 0.5 + nq, l1), al1, Some(0.5), t_grid)?;
    let mut c7 = 0.0f64;
    for theta in theta_samples(p.q0) {
        let inv = if theta.is_finite() { 1.0 / theta } else { 0.0 };
        let r = sup_ratio(
            Factor::new(1.0, 0.5 + a1, al1),
            Factor::new(1.0, 0.5 + n / 2.0 * (1.0 / p.q0 - inv), l1),
            al1,
            Some(n / 2.0 * (1.0 / p.p0 - inv)),
            t_grid,
        )?;
        c7 = c7.max(r);
    }
    Ok(IntegralConstants { c: [c1, c2, c3, c4, c5, c6, c7] })
}

/// The four certificate inequalities in the order `M₃, M₄, M₂, M₁`.
pub const INEQUALITY_NAMES: [&str; 4] = ["M3", "M4", "M2", "M1"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub variant: Variant,
    pub m: f64,
    pub p0: f64,
    pub q0: f64,
    pub beta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub mu: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
    #[serde(rename = "M3")]
    pub m3: f64,
    #[serde(rename = "M4")]
    pub m4: f64,
    pub eps: f64,
    #[serde(rename = "A")]
    pub a: f64,
    /// `RHS − LHS` of the four inequalities, ordered as [`INEQUALITY_NAMES`].
    pub slacks: [f64; 4],
    pub k_provenance: KProvenance,
    pub sigma: f64,
    pub constants: [f64; 7],
    pub k: [f64; 9],
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub m0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c0_bound: Option<f64>,
}

impl Certificate {
    pub fn all_slacks_nonnegative(&self) -> bool {
        self.slacks.iter().all(|s| *s >= 0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

fn pick(lower: f64) -> f64 {
    if lower > 0.0 {
        MARGIN * lower
    } else {
        1.0
    }
}

/// Left-hand sides of the four inequalities of the main selection, in the
/// order of [`INEQUALITY_NAMES`], paired with their right-hand sides.
fn main_inequalities(p: &ParameterSet, c: &IntegralConstants, sigma: f64, mm: [f64; 4], eps: f64) -> [(f64, f64); 4] {
    let k = |i| p.k.get(i);
    let cc = |i| c.get(i);
    let [m1, m2, m3, m4] = mm;
    let n = p.n();
    let big = m1 + k(1);
    let (k5, k7, k8) = (k(5), k(7), k(8));
    let om_exp = p.omega.powf((p.q0 - n) / (n * p.q0));
    [
        (k7 + k5 * k7 * big * cc(1) * p.grad_phi_inf + 3.0 * k7 * k5 * m3 * m4 * cc(2) * eps, m3 / 2.0),
        (k8 + k8 * k5 * om_exp * big * cc(3) * p.grad_phi_inf + 3.0 * k8 * k5 * cc(4) * m3 * m4 * eps, m4 / 2.0),
        (
            k(2) + cc(5) * k(2) * (p.m + big * eps) * (big * sigma * eps).exp() + 3.0 * k(2) * m2 * m3 * cc(6) * eps,
            m2 / 2.0,
        ),
        (
            3.0 * p.c_s * cc(7) * k(4) * m2 * p.m * p.omega.powf(1.0 / p.q0)
                + 3.0 * p.c_s * cc(7) * k(4) * m2 * big * eps
                + 3.0 * big * cc(7) * k(4) * m3 * eps,
            m1 / 2.0,
        ),
    ]
}

/// Follows the selection order: `A` and `M₂`, then `M₁, M₃, M₄`, then `ε`
/// as the displayed minimum times [`EPS_SAFETY`].
pub fn choose_m_eps(p: &ParameterSet, c: &IntegralConstants, sigma: f64) -> Result<Certificate> {
    p.validate(Variant::Main)?;
    let k = |i| p.k.get(i);
    let cc = |i| c.get(i);
    let n = p.n();
    let a: f64 = 1.0;
    let m2 = pick(4.0 * (k(2) + cc(5) * k(2) * p.m * a.exp()));
    let m1 = pick(4.0 * 3.0 * p.c_s * cc(7) * k(4) * m2 * p.m * p.omega.powf(1.0 / p.q0));
    let big = m1 + k(1);
    let (k5, k7, k8) = (k(5), k(7), k(8));
    let m3 = pick(4.0 * (k7 + k5 * k7 * big * cc(1) * p.grad_phi_inf));
    let om_exp = p.omega.powf((p.q0 - n) / (n * p.q0));
    let m4 = pick(4.0 * (k8 + k8 * k5 * om_exp * big * cc(3) * p.grad_phi_inf));
    let candidates = [
        a / (big * sigma),
        1.0 / (12.0 * k7 * k5 * m4 * cc(2)),
        1.0 / (12.0 * k8 * k5 * m3 * cc(4)),
        m2 / (4.0 * cc(5) * k(2) * big * a.exp() + 12.0 * k(2) * m2 * m3 * cc(6)),
        m1 / (12.0 * cc(7) * k(4) * big * (p.c_s * m2 + m3)),
    ];
    let eps = EPS_SAFETY * candidates.iter().copied().fold(f64::INFINITY, f64::min);
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Infeasible(format!("no positive eps from candidates {candidates:?}")));
    }
    let slacks = main_inequalities(p, c, sigma, [m1, m2, m3, m4], eps).map(|(l, r)| r - l);
    Ok(Certificate {
        variant: Variant::Main,
        m: p.m,
        p0: p.p0,
        q0: p.q0,
        beta: p.beta,
        alpha1: p.alpha1,
        alpha2: p.alpha2,
        mu: p.mu,
        m1,
        m2,
        m3,
        m4,
        eps,
        a,
        slacks,
        k_provenance: p.k.provenance,
        sigma,
        constants: c.c,
        k: p.k.k,
        m0: None,
        c0_bound: None,
    })
}

fn alternative_inequalities(
    p: &ParameterSet,
    c: &IntegralConstants,
    sigma: f64,
    mm: [f64; 4],
    eps: f64,
    c0_bound: f64,
) -> [(f64, f64); 4] {
    let k = |i| p.k.get(i);
    let cc = |i| c.get(i);
    let [m1, m2, m3, m4] = mm;
    let n = p.n();
    let big = m1 + 2.0 * k(1);
    let (k5, k7, k8) = (k(5), k(7), k(8));
    let om_exp = p.omega.powf((p.q0 - n) / (n * p.q0));
    let om_inv = p.omega.powf(-1.0 / p.p0);
    [
        (k7 + k5 * k7 * big * p.grad_phi_inf * cc(1) + 3.0 * k7 * k5 * m3 * m4 * cc(2) * eps, m3 / 2.0),
        (k8 + k8 * k5 * om_exp * big * p.grad_phi_inf * cc(3) + 3.0 * m3 * m4 * k8 * k5 * cc(4) * eps, m4 / 2.0),
        (
            k(3) + cc(5) * k(2) * (om_inv + big) * c0_bound * (big * sigma * eps).exp() * eps
                + 3.0 * k(2) * m2 * m3 * cc(6) * eps,
            m2 / 2.0,
        ),
        (
            3.0 * p.c_s * cc(7) * k(4) * m2 * eps * om_inv
                + 3.0 * p.c_s * cc(7) * k(4) * m2 * big * eps
                + 3.0 * big * cc(7) * k(4) * m3 * eps,
            m1 / 2.0,
        ),
    ]
}

/// Variant selection for data with `‖c₀‖_∞ = M` and small `‖n₀‖_{L^{p₀}}`:
/// `M₁ = 1`, then `A`, `M₂..M₄`, `ε`, and finally `m₀ < ε|Ω|^{−1/p₀}` with
/// `(M₁ + 2k₁) σ(m₀/2) ε < A`.
pub fn choose_m_eps_alternative(p: &ParameterSet, c: &IntegralConstants, c0_bound: f64) -> Result<Certificate> {
    p.validate(Variant::Alternative)?;
    if !(c0_bound > 0.0 && c0_bound.is_finite()) {
        return Err(constraint("M > 0", format!("M = {c0_bound}")));
    }
    let k = |i| p.k.get(i);
    let cc = |i| c.get(i);
    let n = p.n();
    let m1 = 1.0;
    let big = m1 + 2.0 * k(1);
    let om_inv = p.omega.powf(-1.0 / p.p0);
    let a = MARGIN * big * (8.0 * p.omega.powf(1.0 / p.p0) + 1.0 / (1.0 - n / (2.0 * p.p0)));
    let m2 = pick(4.0 * (k(3) + cc(5) * k(2) * (om_inv + big) * c0_bound * a.exp() * a));
    let (k5, k7, k8) = (k(5), k(7), k(8));
    let m3 = pick(4.0 * (k7 + k5 * k7 * big * p.grad_phi_inf * cc(1)));
    let om_exp = p.omega.powf((p.q0 - n) / (n * p.q0));
    let m4 = pick(4.0 * (k8 + k8 * k5 * om_exp * big * p.grad_phi_inf * cc(3)));
    let candidates = [
        a,
        1.0 / (12.0 * k(2) * m3 * cc(6)),
        1.0 / (12.0 * m3 * k8 * k5 * cc(4)),
        1.0 / (12.0 * k7 * k5 * cc(2) * m4),
        m1 / (2.0 * (3.0 * p.c_s * cc(7) * k(4) * m2 * (om_inv + big) + 3.0 * big * cc(7) * k(4) * m3)),
        1.0,
    ];
    let eps = EPS_SAFETY * candidates.iter().copied().fold(f64::INFINITY, f64::min);
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Infeasible(format!("no positive eps from candidates {candidates:?}")));
    }
    let a_sigma = n / (2.0 * p.p0);
    let m0_cap = eps * om_inv;
    let mut m0 = EPS_SAFETY * m0_cap;
    let mut ok = false;
    for _ in 0..60 {
        if big * sigma_of(a_sigma, 0.5 * m0)? * eps < a {
            ok = true;
            break;
        }
        m0 = 0.5 * (m0 + m0_cap);
    }
    if !ok {
        return Err(Error::Infeasible("no admissible m0 below eps |Omega|^(-1/p0)".into()));
    }
    if !(p.m > m0) {
        return Err(constraint("m > m0", format!("m = {}, m0 = {m0}", p.m)));
    }
    let sigma = sigma_of(a_sigma, p.alpha1)?;
    let slacks = alternative_inequalities(p, c, sigma, [m1, m2, m3, m4], eps, c0_bound).map(|(l, r)| r - l);
    Ok(Certificate {
        variant: Variant::Alternative,
        m: p.m,
        p0: p.p0,
        q0: p.q0,
        beta: p.beta,
        alpha1: p.alpha1,
        alpha2: p.alpha2,
        mu: p.mu,
        m1,
        m2,
        m3,
        m4,
        eps,
        a,
        slacks,
        k_provenance: p.k.provenance,
        sigma,
        constants: c.c,
        k: p.k.k,
        m0: Some(m0),
        c0_bound: Some(c0_bound),
    })
}

/// Recomputes the slacks of an existing certificate against `p` and `c`.
pub fn certificate_slacks(cert: &Certificate, p: &ParameterSet, c: &IntegralConstants) -> Result<[f64; 4]> {
    let mm = [cert.m1, cert.m2, cert.m3, cert.m4];
    Ok(match cert.variant {
        Variant::Main => main_inequalities(p, c, sigma(p)?, mm, cert.eps),
        Variant::Alternative => {
            let bound = cert.c0_bound.ok_or_else(|| Error::Format("alternative certificate without c0_bound".into()))?;
            alternative_inequalities(p, c, sigma(p)?, mm, cert.eps, bound)
        }
    }
    .map(|(l, r)| r - l))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct InequalityReport {
    pub samples: usize,
    pub violations_monotone: usize,
    pub violations_product: usize,
    /// Largest observed `(1+t^a) / (2(1+t^b))`.
    pub worst_monotone: f64,
    /// Largest observed `(1+t^a)(1+t^b) / (3(1+t^{a+b}))`.
    pub worst_product: f64,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.violations_monotone == 0 && self.violations_product == 0
    }
}

/// `(1+t^a) ≤ 2(1+t^b)` for `0 ≥ a ≥ b`.
pub fn monotone_bound_holds(a: f64, b: f64, t: f64) -> Result<bool> {
    if !(0.0 >= a && a >= b && t > 0.0) {
        return Err(constraint("0 >= a >= b, t > 0", format!("a={a}, b={b}, t={t}")));
    }
    Ok(1.0 + t.powf(a) <= 2.0 * (1.0 + t.powf(b)))
}

/// `(1+t^a)(1+t^b) ≤ 3(1+t^{a+b})` for `a, b` of equal sign.
pub fn product_bound_holds(a: f64, b: f64, t: f64) -> Result<bool> {
    if !((a >= 0.0 && b >= 0.0) || (a <= 0.0 && b <= 0.0)) || !(t > 0.0) {
        return Err(constraint("a, b of equal sign, t > 0", format!("a={a}, b={b}, t={t}")));
    }
    Ok((1.0 + t.powf(a)) * (1.0 + t.powf(b)) <= 3.0 * (1.0 + t.powf(a + b)))
}

/// Random sampling of both elementary inequalities within their hypotheses.
pub fn scalar_inequality_suite(samples: usize, seed: u64) -> InequalityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = InequalityReport { samples, ..Default::default() };
    for _ in 0..samples {
        let t = 10f64.powf(rng.random_range(-6.0..6.0));
        let x: f64 = rng.random_range(-3.0..=0.0);
        let y: f64 = rng.random_range(-3.0..=0.0);
        let (a, b) = (x.max(y), x.min(y));
        let r1 = (1.0 + t.powf(a)) / (2.0 * (1.0 + t.powf(b)));
        rep.worst_monotone = rep.worst_monotone.max(r1);
        if !monotone_bound_holds(a, b, t).unwrap_or(false) {
            rep.violations_monotone += 1;
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let (a, b) = (sign * x.abs(), sign * y.abs());
        let r2 = (1.0 + t.powf(a)) * (1.0 + t.powf(b)) / (3.0 * (1.0 + t.powf(a + b)));
        rep.worst_product = rep.worst_product.max(r2);
        if !product_bound_holds(a, b, t).unwrap_or(false) {
            rep.violations_product += 1;
        }
    }
    rep
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmallnessCheck {
    pub variant: Variant,
    /// `(name, value, bound, margin = bound − value)`
    pub conditions: Vec<(String, f64, f64, f64)>,
    pub passed: bool,
}

/// Relative tolerance for `n̄₀ = m`.
pub const MEAN_TOL: f64 = 1e-12;

/// Evaluates the initial smallness conditions with discrete norms.
pub fn check_initial_smallness(
    n0: &ScalarField,
    c0: &ScalarField,
    u0: &VectorField,
    cert: &Certificate,
    dim: usize,
    variant: Variant,
) -> Result<SmallnessCheck> {
    let d = n0.domain();
    d.ensure_same(c0.domain(), "smallness: n0 and c0")?;
    d.ensure_same(u0.domain(), "smallness: n0 and u0")?;
    let eps = cert.eps;
    let nbar = n0.mean();
    let mut conds = vec![("mean n0 - m".to_string(), (nbar - cert.m).abs(), MEAN_TOL * cert.m)];
    let u_n = u0.lp_norm(dim as f64)?;
    match variant {
        Variant::Main => {
            let dev = n0.map(|v| v - nbar);
            conds.push(("|n0 - mean|_p0".into(), dev.lp_norm(cert.p0)?, eps));
            conds.push(("|c0|_inf".into(), c0.max_abs(), eps));
        }
        Variant::Alternative => {
            conds.push(("|n0|_p0".into(), n0.lp_norm(cert.p0)?, eps));
            conds.push(("|grad c0|_N".into(), gradient_magnitude(c0).lp_norm(dim as f64)?, eps));
        }
    }
    conds.push(("|u0|_N".into(), u_n, eps));
    let conditions: Vec<_> = conds.into_iter().map(|(n, v, b)| (n, v, b, b - v)).collect();
    let passed = conditions.iter().all(|c| c.3 >= 0.0);
    Ok(SmallnessCheck { variant, conditions, passed })
}
