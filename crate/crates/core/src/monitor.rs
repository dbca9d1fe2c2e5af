//! Norm trajectories, exponential rate fits, and the runtime check of the
//! four certificate trajectory bounds.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{OffsetField, SystemState};
use crate::ledger::{Certificate, ParameterSet};
use crate::operators::{gradient_magnitude, velocity_gradient_norm};

/// Values below this are floored before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-300;
pub const MIN_FIT_ROWS: usize = 20;
/// Relative slack below which a bound is reported as marginal.
pub const MARGINAL_SLACK: f64 = 1e-6;
/// Relative tolerance granted to the rate targets.
pub const RATE_TOL: f64 = 0.05;

/// CSV header, one name per [`TraceColumn`].
pub const COLUMNS: [&str; 12] = [
    "t",
    "n_minus_mean_Lq0",
    "n_minus_mean_Linf",
    "n_minus_heat_Lq0",
    "n_minus_heat_Linf",
    "grad_c_Linf",
    "c_Linf",
    "c_W1q1",
    "u_Lq0",
    "grad_u_LN",
    "u_Linf",
    "u_L2",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TraceColumn {
    NMinusMeanQ0 = 1,
    NMinusMeanInf,
    NMinusHeatQ0,
    NMinusHeatInf,
    GradCInf,
    CInf,
    CW1q1,
    UQ0,
    GradUN,
    UInf,
    UL2,
}

impl TraceColumn {
    pub fn name(self) -> &'static str {
        COLUMNS[self as usize]
    }
}

impl std::str::FromStr for TraceColumn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        use TraceColumn::*;
        let all = [NMinusMeanQ0, NMinusMeanInf, NMinusHeatQ0, NMinusHeatInf, GradCInf, CInf, CW1q1, UQ0, GradUN, UInf, UL2];
        all.into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown trace column '{s}'")))
    }
}

/// One record; the heat-deviation pair is absent when not tracked.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormRow {
    pub t: f64,
    pub n_minus_mean: [f64; 2],
    pub n_minus_heat: Option<[f64; 2]>,
    pub grad_c_inf: f64,
    pub c_inf: f64,
    pub c_w1q1: f64,
    pub u_q0: f64,
    pub grad_u_n: f64,
    pub u_inf: f64,
    pub u_2: f64,
}

impl NormRow {
    pub fn get(&self, col: TraceColumn) -> Option<f64> {
        use TraceColumn::*;
        Some(match col {
            NMinusMeanQ0 => self.n_minus_mean[0],
            NMinusMeanInf => self.n_minus_mean[1],
            NMinusHeatQ0 => self.n_minus_heat?[0],
            NMinusHeatInf => self.n_minus_heat?[1],
            GradCInf => self.grad_c_inf,
            CInf => self.c_inf,
            CW1q1 => self.c_w1q1,
            UQ0 => self.u_q0,
            GradUN => self.grad_u_n,
            UInf => self.u_inf,
            UL2 => self.u_2,
        })
    }

    fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        [self.t, self.n_minus_mean[0], self.n_minus_mean[1]]
            .into_iter()
            .chain(self.n_minus_heat.into_iter().flatten())
            .chain([self.grad_c_inf, self.c_inf, self.c_w1q1, self.u_q0, self.grad_u_n, self.u_inf, self.u_2])
    }
}

/// Norm trajectory of one run. `θ` ranges over `{q₀, ∞}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormTrace {
    pub nbar0: f64,
    pub q0: f64,
    pub q1: f64,
    pub dim: usize,
    pub track_heat: bool,
    rows: Vec<NormRow>,
}

impl NormTrace {
    pub fn new(params: &ParameterSet, nbar0: f64, track_heat: bool) -> Self {
        Self { nbar0, q0: params.q0, q1: params.q1, dim: params.dim, track_heat, rows: Vec::new() }
    }

    pub fn rows(&self) -> &[NormRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    /// `heat_ref` is `e^{tΔ_h} n₀` at the state's time.
    pub fn record(&mut self, state: &SystemState, heat_ref: Option<&OffsetField>) -> Result<&NormRow> {
        let n_minus_heat = match (self.track_heat, heat_ref) {
            (false, _) => None,
            (true, None) => return Err(Error::InvalidArgument("heat reference required for the n − e^{tΔ}n₀ columns".into())),
            (true, Some(h)) => {
                state.domain().ensure_same(h.domain(), "trace heat reference")?;
                let shift = state.n.level - h.level;
                let diff = state.n.deviation.lin_comb(1.0, &h.deviation, -1.0).map(|v| v + shift);
                Some([diff.lp_norm(self.q0)?, diff.max_abs()])
            }
        };
        // n̄(t) = n̄₀ up to rounding of the level; the mass audit is separate
        let ndev = state.n.centered();
        let c = state.c.to_field();
        let grad_c = gradient_magnitude(&state.c.deviation);
        let q1 = self.q1;
        let w1 = (c.lp_norm(q1)?.powf(q1) + grad_c.lp_norm(q1)?.powf(q1)).powf(1.0 / q1);
        let row = NormRow {
            t: state.t,
            n_minus_mean: [ndev.lp_norm(self.q0)?, ndev.max_abs()],
            n_minus_heat,
            grad_c_inf: grad_c.max_abs(),
            c_inf: c.max_abs(),
            c_w1q1: w1,
            u_q0: state.u.lp_norm(self.q0)?,
            grad_u_n: velocity_gradient_norm(&state.u).lp_norm(self.dim as f64)?,
            u_inf: state.u.max_abs(),
            u_2: state.u.l2_norm(),
        };
        self.push(row)?;
        Ok(self.rows.last().expect("just pushed"))
    }

    pub fn push(&mut self, row: NormRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if !(row.t > last.t) {
                return Err(Error::InvalidArgument(format!("trace times must increase: {} after {}", row.t, last.t)));
            }
        }
        if row.n_minus_heat.is_some() != self.track_heat {
            return Err(Error::InvalidArgument("row does not match the trace's heat tracking".into()));
        }
        if row.entries().any(|v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::NonFinite(format!("trace row at t = {}", row.t)));
        }
        self.rows.push(row);
        Ok(())
    }

    /// RFC-4180 CSV with 17 significant digits; untracked columns are empty.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(COLUMNS).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec: Vec<String> = vec![fmt17(r.t), fmt17(r.n_minus_mean[0]), fmt17(r.n_minus_mean[1])];
            match r.n_minus_heat {
                Some([a, b]) => rec.extend([fmt17(a), fmt17(b)]),
                None => rec.extend([String::new(), String::new()]),
            }
            rec.extend([r.grad_c_inf, r.c_inf, r.c_w1q1, r.u_q0, r.grad_u_n, r.u_inf, r.u_2].map(fmt17));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl Read, params: &ParameterSet, nbar0: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(csv_err)?.clone();
        if header.iter().ne(COLUMNS.iter().copied()) {
            return Err(Error::Format(format!("unexpected trace header: {header:?}")));
        }
        let mut trace: Option<NormTrace> = None;
        for (line, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let num = |i: usize| -> Result<Option<f64>> {
                let s = rec.get(i).unwrap_or("");
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|e| Error::Format(format!("row {}, column {}: {e}", line + 2, COLUMNS[i])))
            };
            let req = |i: usize| -> Result<f64> {
                num(i)?.ok_or_else(|| Error::Format(format!("row {}: column {} is empty", line + 2, COLUMNS[i])))
            };
            let heat = match (num(3)?, num(4)?) {
                (Some(a), Some(b)) => Some([a, b]),
                (None, None) => None,
                _ => return Err(Error::Format(format!("row {}: partial heat-deviation columns", line + 2))),
            };
            let t = trace.get_or_insert_with(|| NormTrace::new(params, nbar0, heat.is_some()));
            t.push(NormRow {
                t: req(0)?,
                n_minus_mean: [req(1)?, req(2)?],
                n_minus_heat: heat,
                grad_c_inf: req(5)?,
                c_inf: req(6)?,
                c_w1q1: req(7)?,
                u_q0: req(8)?,
                grad_u_n: req(9)?,
                u_inf: req(10)?,
                u_2: req(11)?,
            })?;
        }
        trace.ok_or_else(|| Error::Format("trace has no rows".into()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Scientific notation with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub prefactor: f64,
    pub r2: f64,
    pub samples: usize,
    /// Set when some value was at or below [`LOG_FLOOR`].
    pub floored: bool,
}

/// Least squares for `log v = log C − r t`.
pub fn fit_exponential(times: &[f64], values: &[f64]) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::InvalidArgument("times and values differ in length".into()));
    }
    let n = times.len();
    if n < MIN_FIT_ROWS {
        return Err(Error::InvalidArgument(format!("rate fit needs at least {MIN_FIT_ROWS} samples, got {n}")));
    }
    let mut floored = false;
    let logs: Vec<f64> = values
        .iter()
        .map(|&v| {
            if !(v > LOG_FLOOR) {
                floored = true;
            }
            v.max(LOG_FLOOR).ln()
        })
        .collect();
    let nf = n as f64;
    let tm = times.iter().sum::<f64>() / nf;
    let ym = logs.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (t, y) in times.iter().zip(&logs) {
        sxx += (t - tm) * (t - tm);
        sxy += (t - tm) * (y - ym);
        syy += (y - ym) * (y - ym);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs distinct times".into()));
    }
    let slope = sxy / sxx;
    let ss_res: f64 = times.iter().zip(&logs).map(|(t, y)| (y - ym - slope * (t - tm)).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(RateFit { rate: -slope, prefactor: (ym - slope * tm).exp(), r2, samples: n, floored })
}

/// Rate fit of one column over the rows with `t ∈ [lo, hi]`.
pub fn fit_rate(trace: &NormTrace, column: TraceColumn, window: [f64; 2]) -> Result<RateFit> {
    let mut ts = Vec::new();
    let mut vs = Vec::new();
    for r in trace.rows().iter().filter(|r| r.t >= window[0] && r.t <= window[1]) {
        let v = r.get(column).ok_or_else(|| Error::InvalidArgument(format!("column {} is not tracked", column.name())))?;
        ts.push(r.t);
        vs.push(v);
    }
    fit_exponential(&ts, &vs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityStatus {
    pub name: String,
    pub evaluated: bool,
    pub holds: bool,
    pub first_violation: Option<f64>,
    /// `min_t (RHS − LHS)/RHS`
    pub min_rel_slack: f64,
    pub t_min_slack: f64,
    pub marginal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FittedRate {
    pub column: String,
    pub fit: RateFit,
    pub target: f64,
    pub meets_target: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeCheck {
    pub k1_hat: f64,
    pub factor: f64,
    pub holds: bool,
    /// `max_t ‖c(t)‖_∞ / RHS(t)`
    pub worst_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertificateReport {
    pub inequalities: Vec<InequalityStatus>,
    pub holds_to_horizon: bool,
    pub first_violation: Option<(String, f64)>,
    pub horizon: f64,
    pub rates: Vec<FittedRate>,
    pub c_envelope: EnvelopeCheck,
    pub velocity_surrogate: &'static str,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertifyOptions {
    /// Fit window; `None` means `[1, horizon]`.
    pub window: Option<[f64; 2]>,
    pub k1_hat: f64,
}

/// Pointwise check of the four trajectory bounds (θ ∈ {q₀, ∞} for the
/// first), the oxygen envelope, and the fitted decay rates.
pub fn certify(trace: &NormTrace, cert: &Certificate, params: &ParameterSet, opts: CertifyOptions) -> Result<CertificateReport> {
    let same = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let checks = [
        ("m", cert.m, params.m),
        ("p0", cert.p0, params.p0),
        ("q0", cert.q0, params.q0),
        ("q0 (trace)", trace.q0, params.q0),
        ("alpha1", cert.alpha1, params.alpha1),
        ("alpha2", cert.alpha2, params.alpha2),
    ];
    for (name, a, b) in checks {
        if !same(a, b) {
            return Err(Error::InvalidArgument(format!("trace/certificate parameter mismatch in {name}: {a} vs {b}")));
        }
    }
    if trace.dim != params.dim {
        return Err(Error::InvalidArgument("trace/certificate parameter mismatch in dim".into()));
    }
    let rows = trace.rows();
    let horizon = rows.last().ok_or_else(|| Error::InvalidArgument("empty trace".into()))?.t;
    let n = params.n();
    let (a1, a2, eps) = (params.alpha1, params.alpha2, cert.eps);
    // (1 + t^{-e}) with the t = 0 limit
    let shape = |t: f64, e: f64| if e > 0.0 && t == 0.0 { f64::INFINITY } else { 1.0 + t.powf(-e) };
    let theta_exp = |theta: f64| n / 2.0 * (1.0 / params.p0 - if theta.is_finite() { 1.0 / theta } else { 0.0 });
    type Bound<'a> = (String, Box<dyn Fn(&NormRow) -> Option<(f64, f64)> + 'a>);
    let bounds: Vec<Bound> = vec![
        (
            "M1: |n - e^{tΔ}n0|_q0".into(),
            Box::new(|r: &NormRow| r.n_minus_heat.map(|h| (h[0], cert.m1 * eps * shape(r.t, theta_exp(params.q0)) * (-a1 * r.t).exp()))),
        ),
        (
            "M1: |n - e^{tΔ}n0|_inf".into(),
            Box::new(|r: &NormRow| r.n_minus_heat.map(|h| (h[1], cert.m1 * eps * shape(r.t, theta_exp(f64::INFINITY)) * (-a1 * r.t).exp()))),
        ),
        ("M2: |grad c|_inf".into(), Box::new(|r: &NormRow| Some((r.grad_c_inf, cert.m2 * eps * shape(r.t, 0.5) * (-a1 * r.t).exp())))),
        (
            "M3: |u|_q0".into(),
            Box::new(|r: &NormRow| Some((r.u_q0, cert.m3 * eps * shape(r.t, 0.5 - n / (2.0 * params.q0)) * (-a2 * r.t).exp()))),
        ),
        ("M4: |grad u|_N".into(), Box::new(|r: &NormRow| Some((r.grad_u_n, cert.m4 * eps * shape(r.t, 0.5) * (-a2 * r.t).exp())))),
    ];
    let mut inequalities = Vec::new();
    let mut first: Option<(String, f64)> = None;
    for (name, f) in &bounds {
        let mut st = InequalityStatus {
            name: name.clone(),
            evaluated: false,
            holds: true,
            first_violation: None,
            min_rel_slack: f64::INFINITY,
            t_min_slack: 0.0,
            marginal: false,
        };
        for r in rows {
            let Some((lhs, rhs)) = f(r) else { continue };
            st.evaluated = true;
            let rel = if rhs.is_infinite() { 1.0 } else if rhs > 0.0 { (rhs - lhs) / rhs } else if lhs == 0.0 { 0.0 } else { -1.0 };
            if rel < st.min_rel_slack {
                st.min_rel_slack = rel;
                st.t_min_slack = r.t;
            }
            if lhs > rhs && st.first_violation.is_none() {
                st.holds = false;
                st.first_violation = Some(r.t);
            }
        }
        st.marginal = st.evaluated && st.min_rel_slack.abs() < MARGINAL_SLACK;
        if let Some(t) = st.first_violation {
            if first.as_ref().is_none_or(|f| t < f.1) {
                first = Some((name.clone(), t));
            }
        }
        inequalities.push(st);
    }

    let c0 = rows[0].c_inf;
    let factor = (cert.sigma * (cert.m1 + opts.k1_hat) * eps).exp();
    let mut worst: f64 = 0.0;
    for r in rows {
        let rhs = c0 * factor * (-trace.nbar0 * r.t).exp();
        let ratio = if rhs > 0.0 { r.c_inf / rhs } else if r.c_inf == 0.0 { 0.0 } else { f64::INFINITY };
        worst = worst.max(ratio);
    }
    let c_envelope = EnvelopeCheck { k1_hat: opts.k1_hat, factor, holds: worst <= 1.0, worst_ratio: worst };

    let window = opts.window.unwrap_or([1.0, horizon]);
    let mut rates = Vec::new();
    for (col, target) in [(TraceColumn::NMinusMeanInf, a1), (TraceColumn::CW1q1, a1), (TraceColumn::UInf, a2)] {
        if let Ok(fit) = fit_rate(trace, col, window) {
            rates.push(FittedRate { column: col.name().into(), fit, target, meets_target: fit.rate >= (1.0 - RATE_TOL) * target });
        }
    }
    Ok(CertificateReport {
        holds_to_horizon: inequalities.iter().all(|s| s.holds),
        inequalities,
        first_violation: first,
        horizon,
        rates,
        c_envelope,
        velocity_surrogate: "u_L2",
    })
}
