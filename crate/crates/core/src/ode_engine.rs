//! Carathéodory initial value problems, the comparison principle, and the
//! straightening / push-up / connector constructions built on them.

use std::sync::Arc;

use serde::Serialize;

use crate::base_space::NodeId;
use crate::causal_core::{classify, lorentz_length, CausalKind};
use crate::error::{GeomError, Result};
use crate::metric_family::{ConformalFamily, Verdict};
use crate::product_geometry::{step_term, step_terms, CurveSample, Orientation, ProductCurve, ProductSpacetime};
use crate::tol;

pub type RhsFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Right-hand side `Φ(y, t)`: Lipschitz in `y`, only measurable in `t` unless flagged.
#[derive(Clone)]
pub struct CaratheodoryField {
    phi: RhsFn,
    /// Declared bound on `|Φ(y,t) − Φ(y',t)| / |y − y'|`.
    pub lipschitz: f64,
    pub continuous_in_time: bool,
    /// Admissible `y` range; leaving it truncates the solution.
    pub domain: (f64, f64),
}

impl std::fmt::Debug for CaratheodoryField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CaratheodoryField")
            .field("lipschitz", &self.lipschitz)
            .field("continuous_in_time", &self.continuous_in_time)
            .field("domain", &self.domain)
            .finish()
    }
}

impl CaratheodoryField {
    pub fn new(lipschitz: f64, continuous_in_time: bool, phi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { phi: Arc::new(phi), lipschitz, continuous_in_time, domain: (f64::NEG_INFINITY, f64::INFINITY) }
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }

    #[inline]
    pub fn eval(&self, y: f64, t: f64) -> f64 {
        (self.phi)(y, t)
    }

    /// Largest sampled difference quotient over `ys × ts`; compare with `lipschitz`.
    pub fn sampled_lipschitz(&self, ys: &[f64], ts: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for &t in ts {
            for w in ys.windows(2) {
                if w[1] != w[0] {
                    worst = worst.max(((self.eval(w[1], t) - self.eval(w[0], t)) / (w[1] - w[0])).abs());
                }
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IvpOptions {
    pub step: f64,
    /// `None`: RK4 for fields continuous in time, Euler otherwise.
    pub method: Option<Method>,
    /// Also solve with half the step and report the end-point difference.
    pub error_estimate: bool,
}

impl Default for IvpOptions {
    fn default() -> Self {
        Self { step: 1e-3, method: None, error_estimate: false }
    }
}

/// Piecewise linear solution on its breakpoint grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub method: Method,
    pub step: f64,
    /// Richardson estimate `|y_h − y_{h/2}|` at the final time.
    pub error_estimate: Option<f64>,
    pub exited: bool,
}

impl OdeSolution {
    pub fn end(&self) -> (f64, f64) {
        (*self.times.last().unwrap(), *self.values.last().unwrap())
    }

    /// Linear interpolation; `None` outside the computed range.
    pub fn at(&self, t: f64) -> Option<f64> {
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        if !(t0..=t1).contains(&t) {
            return None;
        }
        let k = self.times.partition_point(|&x| x <= t).saturating_sub(1).min(self.times.len().saturating_sub(2));
        if self.times.len() == 1 {
            return Some(self.values[0]);
        }
        let (a, b) = (self.times[k], self.times[k + 1]);
        let lam = (t - a) / (b - a);
        Some((1.0 - lam) * self.values[k] + lam * self.values[k + 1])
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory { times: self.times.clone(), values: self.values.clone() }
    }
}

fn integrate(f: &CaratheodoryField, t0: f64, y0: f64, horizon: f64, h: f64, method: Method) -> (Vec<f64>, Vec<f64>, bool) {
    let n = ((horizon - t0) / h).ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    times.push(t0);
    values.push(y0);
    let (lo, hi) = f.domain;
    let mut y = y0;
    for k in 0..n {
        let t = t0 + (horizon - t0) * k as f64 / n as f64;
        let t_next = if k + 1 == n { horizon } else { t0 + (horizon - t0) * (k + 1) as f64 / n as f64 };
        let dt = t_next - t;
        y = match method {
            Method::Euler => y + dt * f.eval(y, t),
            Method::Rk4 => {
                let k1 = f.eval(y, t);
                let k2 = f.eval(y + 0.5 * dt * k1, t + 0.5 * dt);
                let k3 = f.eval(y + 0.5 * dt * k2, t + 0.5 * dt);
                let k4 = f.eval(y + dt * k3, t_next);
                y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
        };
        if !y.is_finite() || y < lo || y > hi {
            return (times, values, true);
        }
        times.push(t_next);
        values.push(y);
    }
    (times, values, false)
}

pub fn solve_ivp(f: &CaratheodoryField, t0: f64, y0: f64, horizon: f64, opts: IvpOptions) -> Result<OdeSolution> {
    if !(f.domain.0..=f.domain.1).contains(&y0) || !y0.is_finite() {
        return Err(GeomError::Domain(format!("initial value {y0} outside the field domain")));
    }
    if !(horizon > t0) || !(opts.step > 0.0) {
        return Err(GeomError::Domain("horizon must exceed t0 and the step must be positive".into()));
    }
    let method = opts.method.unwrap_or(if f.continuous_in_time { Method::Rk4 } else { Method::Euler });
    let (times, values, exited) = integrate(f, t0, y0, horizon, opts.step, method);
    let error_estimate = if opts.error_estimate && !exited {
        let (_, fine, fine_exit) = integrate(f, t0, y0, horizon, 0.5 * opts.step, method);
        (!fine_exit).then(|| (fine.last().unwrap() - values.last().unwrap()).abs())
    } else {
        None
    };
    Ok(OdeSolution { times, values, method, step: opts.step, error_estimate, exited })
}

/// Sampled real function of `t`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn from_fn(times: &[f64], g: impl Fn(f64) -> f64) -> Self {
        Self { times: times.to_vec(), values: times.iter().map(|&t| g(t)).collect() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum CompareVerdict {
    /// `φ ≡ ψ`; `c` is the right endpoint.
    Equal { c: f64 },
    /// `φ = ψ` on `[t0, c]` and `φ < ψ` after.
    StrictAfter { c: f64 },
    HypothesisFailed { reason: String },
    Crossing { at: f64 },
}

/// Comparison dichotomy for `φ, ψ` with `φ(t0) ≤ ψ(t0)` and `Pφ ≤ Pψ`,
/// where `Pφ = φ' − Φ(φ, t)` is sampled by forward difference quotients.
pub fn compare(f: &CaratheodoryField, phi: &Trajectory, psi: &Trajectory, tol: f64) -> Result<CompareVerdict> {
    if phi.times != psi.times || phi.times.len() != phi.values.len() || psi.times.len() != psi.values.len() {
        return Err(GeomError::Domain("trajectories must share one grid".into()));
    }
    let close = |a: f64, b: f64| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()));
    if phi.values[0] > psi.values[0] && !close(phi.values[0], psi.values[0]) {
        return Ok(CompareVerdict::HypothesisFailed { reason: "φ(t0) > ψ(t0)".into() });
    }
    for k in 0..phi.times.len().saturating_sub(1) {
        let (t, dt) = (phi.times[k], phi.times[k + 1] - phi.times[k]);
        let p_phi = (phi.values[k + 1] - phi.values[k]) / dt - f.eval(phi.values[k], t);
        let p_psi = (psi.values[k + 1] - psi.values[k]) / dt - f.eval(psi.values[k], t);
        if p_phi > p_psi && !close(p_phi, p_psi) {
            return Ok(CompareVerdict::HypothesisFailed { reason: format!("Pφ > Pψ on [{t}, {}]", phi.times[k + 1]) });
        }
    }
    let n = phi.times.len();
    let contact = (0..n).take_while(|&k| close(phi.values[k], psi.values[k])).count();
    if contact == n {
        return Ok(CompareVerdict::Equal { c: phi.times[n - 1] });
    }
    for k in contact..n {
        if phi.values[k] >= psi.values[k] {
            return Ok(CompareVerdict::Crossing { at: phi.times[k] });
        }
    }
    Ok(CompareVerdict::StrictAfter { c: phi.times[contact.saturating_sub(1)] })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StraightenIntegrator {
    /// Per-step root of `(h̄Δy)² − d_ȳ² = ε²Δt²` at the step midpoint.
    ImplicitMidpoint,
    /// `y' = Φ_ε(y, t)` on the curve grid refined `refine` times.
    Explicit { method: Method, refine: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StraightenOptions {
    pub integrator: StraightenIntegrator,
    pub max_iterations: usize,
    /// Record `(t, y_ε(t))` for every bisection iterate.
    pub keep_traces: bool,
}

impl Default for StraightenOptions {
    fn default() -> Self {
        Self { integrator: StraightenIntegrator::ImplicitMidpoint, max_iterations: 200, keep_traces: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StraightenResult {
    pub curve: ProductCurve,
    /// Constant length element per unit parameter.
    pub epsilon: f64,
    pub iterations: usize,
    /// Largest `|element² − ε²| / ε²` over steps.
    pub constancy: f64,
    /// `y_ε(end)` never decreased as `ε` grew, up to the rounding of the per-step solve.
    pub monotone: bool,
    pub upper_bracket: f64,
    #[serde(skip)]
    pub traces: Vec<(f64, Vec<(f64, f64)>)>,
}

/// Times `y_k` along the fixed trace; `None` marks an overshoot of `target` or an exit from the interval.
fn retime(fam: &ConformalFamily, gamma: &ProductCurve, eps: f64, target: f64, integ: StraightenIntegrator) -> Result<Option<Vec<f64>>> {
    let s = &gamma.samples;
    let mut ys = Vec::with_capacity(s.len());
    ys.push(s[0].s);
    let top = target.min(fam.interval.1);
    for k in 0..s.len() - 1 {
        let (a, b) = (s[k], s[k + 1]);
        let y = ys[k];
        let dt = b.t - a.t;
        let next = match integ {
            StraightenIntegrator::ImplicitMidpoint => implicit_step(fam, a, b, y, eps * eps * dt * dt, top)?,
            StraightenIntegrator::Explicit { method, refine } => explicit_step(fam, a, b, y, eps, refine.max(1), method, top)?,
        };
        match next {
            Some(v) => ys.push(v),
            None => return Ok(None),
        }
    }
    Ok(Some(ys))
}

fn step_residual(fam: &ConformalFamily, a: CurveSample, b: CurveSample, y: f64, y1: f64, rhs: f64) -> Result<f64> {
    let term = step_term(fam, CurveSample { s: y, ..a }, CurveSample { s: y1, ..b })?;
    Ok(term.margin - rhs)
}

/// Smallest `y1 ≥ y` with step margin equal to `rhs`; `None` if it lies beyond `top`.
fn implicit_step(fam: &ConformalFamily, a: CurveSample, b: CurveSample, y: f64, rhs: f64, top: f64) -> Result<Option<f64>> {
    let g0 = step_residual(fam, a, b, y, y, rhs)?;
    if g0 >= 0.0 {
        return Ok(Some(y));
    }
    let room = top - y;
    if room <= 0.0 {
        return Ok(None);
    }
    let guess = (b.s - a.s).abs().max(rhs.sqrt()).max(1e-12 * (1.0 + y.abs()));
    let mut lo = (y, g0);
    let mut step = guess.min(room);
    let hi = loop {
        let y1 = y + step;
        let g = step_residual(fam, a, b, y, y1, rhs)?;
        if g >= 0.0 {
            break (y1, g);
        }
        lo = (y1, g);
        if step >= room {
            return Ok(None);
        }
        step = (2.0 * step).min(room);
    };
    // Illinois false position
    let (mut a0, mut b0) = (lo, hi);
    let mut side = 0i8;
    for _ in 0..200 {
        if b0.0 - a0.0 <= 4.0 * f64::EPSILON * b0.0.abs().max(1.0) {
            break;
        }
        let mut m = b0.0 - b0.1 * (b0.0 - a0.0) / (b0.1 - a0.1);
        if !(m > a0.0 && m < b0.0) {
            m = 0.5 * (a0.0 + b0.0);
        }
        let gm = step_residual(fam, a, b, y, m, rhs)?;
        if gm == 0.0 {
            return Ok(Some(m));
        }
        if gm < 0.0 {
            a0 = (m, gm);
            if side == -1 {
                b0.1 *= 0.5;
            }
            side = -1;
        } else {
            b0 = (m, gm);
            if side == 1 {
                a0.1 *= 0.5;
            }
            side = 1;
        }
    }
    Ok(Some(if a0.1.abs() < b0.1.abs() { a0.0 } else { b0.0 }))
}

#[allow(clippy::too_many_arguments)]
fn explicit_step(fam: &ConformalFamily, a: CurveSample, b: CurveSample, y: f64, eps: f64, refine: usize, method: Method, top: f64) -> Result<Option<f64>> {
    let dt = b.t - a.t;
    let phi = |s: f64| -> Result<f64> {
        if !fam.contains(s) {
            return Err(GeomError::Domain(format!("s = {s}")));
        }
        let v = if a.x == b.x { 0.0 } else { fam.distance_at(s, a.x, b.x)? / dt };
        Ok((v * v + eps * eps).sqrt() / fam.step_lapse(s, a.x, b.x))
    };
    let h = dt / refine as f64;
    let mut yk = y;
    for _ in 0..refine {
        let next = match method {
            Method::Euler => phi(yk).map(|k1| yk + h * k1),
            Method::Rk4 => (|| {
                let k1 = phi(yk)?;
                let k2 = phi(yk + 0.5 * h * k1)?;
                let k3 = phi(yk + 0.5 * h * k2)?;
                let k4 = phi(yk + h * k3)?;
                Ok(yk + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
            })(),
        };
        match next {
            Ok(v) if v <= top => yk = v,
            _ => return Ok(None),
        }
    }
    Ok(Some(yk))
}

/// Retimes a causal curve along its spatial trace to constant element `ε_b`,
/// keeping both endpoints.
pub fn straighten(st: &ProductSpacetime, gamma: &ProductCurve, opts: StraightenOptions) -> Result<StraightenResult> {
    let class = classify(st, gamma)?;
    if class.kind == CausalKind::NonCausal || class.orientation != Orientation::Future {
        return Err(GeomError::NonCausal { step: class.worst_step.unwrap_or(0), margin: class.worst_margin });
    }
    let tau = lorentz_length(st, gamma)?;
    if tau <= 0.0 {
        return Err(GeomError::NotApplicable("curve has zero Lorentzian length".into()));
    }
    let fam = &st.family;
    let target = gamma.last().s;
    let mut traces = Vec::new();
    let run = |eps: f64, traces: &mut Vec<(f64, Vec<(f64, f64)>)>| -> Result<Option<Vec<f64>>> {
        let ys = retime(fam, gamma, eps, target, opts.integrator)?;
        if opts.keep_traces {
            if let Some(ys) = &ys {
                traces.push((eps, gamma.samples.iter().zip(ys).map(|(c, &y)| (c.t, y)).collect()));
            }
        }
        Ok(ys)
    };
    let end = |ys: &Option<Vec<f64>>| ys.as_ref().map_or(f64::INFINITY, |v| *v.last().unwrap());

    let low = run(0.0, &mut traces)?;
    if end(&low) >= target {
        return Err(GeomError::BracketFailure(format!(
            "y_0(end) = {} does not stay below the target {target}; discretization too coarse or hypothesis fails",
            end(&low)
        )));
    }
    let mut hi = tau;
    let mut hi_run = run(hi, &mut traces)?;
    let mut doublings = 0;
    while end(&hi_run) < target {
        doublings += 1;
        if doublings > 64 {
            return Err(GeomError::BracketFailure("no upper bracket for ε".into()));
        }
        hi *= 2.0;
        hi_run = run(hi, &mut traces)?;
    }
    let upper_bracket = hi;
    let (mut lo, mut lo_end) = (0.0, end(&low));
    let mut best_lo = low.unwrap();
    let mut monotone = true;
    // each implicit step is solved to ~4 ulp, so end times carry that much noise per step
    let noise = 4.0 * f64::EPSILON * gamma.len() as f64 * target.abs().max(1.0);
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let ys = run(mid, &mut traces)?;
        let e = end(&ys);
        if e < lo_end - noise || e > end(&hi_run) + noise {
            monotone = false;
        }
        if e < target {
            lo = mid;
            lo_end = e;
            best_lo = ys.unwrap();
        } else {
            hi = mid;
            hi_run = ys;
            if e == target {
                lo = mid;
                break;
            }
        }
    }
    // `hi_run` may have exited; the retiming at `lo` is complete and lands just below the target.
    let (epsilon, mut ys) = match hi_run {
        Some(v) if (v.last().unwrap() - target).abs() <= (target - lo_end).abs() => (hi, v),
        _ => (lo, best_lo),
    };
    *ys.last_mut().unwrap() = target;
    if hi - lo > tol::BISECTION_RTOL * hi {
        return Err(GeomError::BracketFailure(format!("ε bracket [{lo}, {hi}] did not close")));
    }
    let samples: Vec<CurveSample> = gamma.samples.iter().zip(&ys).map(|(c, &y)| CurveSample { s: y, ..*c }).collect();
    let curve = ProductCurve::new(samples)
        .map_err(|_| GeomError::BracketFailure("retimed curve is not strictly parametrized".into()))?;
    let e2 = epsilon * epsilon;
    let constancy = step_terms(st, &curve)?
        .iter()
        .map(|t| ((t.margin / (t.dt * t.dt)) - e2).abs() / e2)
        .fold(0.0, f64::max);
    Ok(StraightenResult { curve, epsilon, iterations, constancy, monotone, upper_bracket, traces })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PushUpOptions {
    pub force: bool,
    pub straighten: StraightenOptions,
}

impl Default for PushUpOptions {
    fn default() -> Self {
        Self { force: false, straighten: StraightenOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PushUpResult {
    pub curve: ProductCurve,
    pub epsilon: f64,
    pub tau_total: f64,
    pub tau_left: f64,
    pub tau_right: f64,
    pub min_margin: f64,
    pub constancy: f64,
}

/// Timelike curve `q ↠ r` from witnesses `q → p` and `p → r`, one of them with positive length.
/// `certified` is the log-Lipschitz verdict for the family.
pub fn push_up(st: &ProductSpacetime, left: &ProductCurve, right: &ProductCurve, certified: Verdict, opts: PushUpOptions) -> Result<PushUpResult> {
    if certified != Verdict::Pass && !opts.force {
        return Err(GeomError::HypothesisNotCertified(format!("log-Lipschitz verdict is {certified:?}")));
    }
    let leg_tau = |c: &ProductCurve| -> Result<f64> {
        if c.len() < 2 {
            return Ok(0.0);
        }
        let class = classify(st, c)?;
        if class.kind == CausalKind::NonCausal || class.orientation != Orientation::Future {
            return Err(GeomError::NonCausal { step: class.worst_step.unwrap_or(0), margin: class.worst_margin });
        }
        lorentz_length(st, c)
    };
    let tau_left = leg_tau(left)?;
    let tau_right = leg_tau(right)?;
    let whole = left.concat(right)?;
    let tau_total = lorentz_length(st, &whole)?;
    if !(tau_total > 0.0) {
        return Err(GeomError::NotApplicable("neither witness has positive length".into()));
    }
    let r = straighten(st, &whole, opts.straighten)?;
    let class = classify(st, &r.curve)?;
    if class.kind != CausalKind::Timelike {
        return Err(GeomError::BracketFailure(format!("straightened curve classifies {:?}", class.kind)));
    }
    Ok(PushUpResult {
        min_margin: class.worst_margin,
        curve: r.curve,
        epsilon: r.epsilon,
        tau_total,
        tau_left,
        tau_right,
        constancy: r.constancy,
    })
}

/// Regularity constants entering the connector's neighbourhood budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConnectorBudget {
    pub c0: f64,
    /// `L` of the affine lemma: max{sup h, 1/|α(J)|, ‖α'‖, ‖v_β‖}.
    pub lemma_l: f64,
    /// `L` of the neighbourhood construction, sum form including `(inf h)^-2`.
    pub leg_l: f64,
    /// Sampled Lipschitz constant of `log ρ` in time.
    pub rho_log_lipschitz: f64,
    /// Sampled Lipschitz constant of `h²` in time.
    pub lapse_sq_lipschitz: f64,
    pub delta0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConnectorResult {
    pub curve: ProductCurve,
    /// Smallest element `sqrt(margin)/Δs` over all steps.
    pub margin: f64,
    /// `min(c0/2, sqrt(1/L − 1/L²))`.
    pub guaranteed: f64,
    pub displacement: f64,
    pub budget: ConnectorBudget,
}

fn time_parametrized(gamma: &ProductCurve) -> Result<ProductCurve> {
    ProductCurve::new(gamma.samples.iter().map(|c| CurveSample { t: c.s, ..*c }).collect())
}

fn sampled_time_lipschitz(j0: (f64, f64), nodes: &[NodeId], g: impl Fn(f64, NodeId) -> f64) -> f64 {
    let n = 256;
    let ts: Vec<f64> = (0..=n).map(|i| j0.0 + (j0.1 - j0.0) * i as f64 / n as f64).collect();
    let mut worst = 0.0f64;
    for &x in nodes {
        for w in ts.windows(2) {
            worst = worst.max(((g(w[1], x) - g(w[0], x)) / (w[1] - w[0])).abs());
        }
    }
    worst
}

/// Neighbourhood budget of a timelike witness parametrized by time.
pub fn connector_budget(st: &ProductSpacetime, gamma0: &ProductCurve) -> Result<ConnectorBudget> {
    let fam = &st.family;
    let g = time_parametrized(gamma0)?;
    let class = classify(st, &g)?;
    if class.kind != CausalKind::Timelike || class.orientation != Orientation::Future {
        return Err(GeomError::InvalidCurve("witness must be future-directed timelike".into()));
    }
    let terms = step_terms(st, &g)?;
    let c0 = terms.iter().map(|t| t.margin.sqrt() / t.dt).fold(f64::INFINITY, f64::min);
    let v_max = terms.iter().map(|t| t.dd / t.dt).fold(0.0, f64::max);
    let nodes: Vec<NodeId> = (0..fam.base.len()).collect();
    let j0 = fam.interval;
    let probe = 257;
    let mut h_sup = 0.0f64;
    let mut h_inf = f64::INFINITY;
    for i in 0..probe {
        let s = j0.0 + (j0.1 - j0.0) * i as f64 / (probe - 1) as f64;
        for &x in &nodes {
            let h = fam.lapse_at(s, x);
            h_sup = h_sup.max(h);
            h_inf = h_inf.min(h);
        }
    }
    let extent = g.time_extent();
    let lemma_l = h_sup.max(1.0 / extent).max(1.0).max(v_max);
    let leg_l = h_inf.powi(-2) + h_sup + 1.0 / extent + 1.0 + v_max;
    let rho_log_lipschitz = sampled_time_lipschitz(j0, &nodes, |s, x| fam.rho.eval(s, x).ln());
    let lapse_sq_lipschitz = sampled_time_lipschitz(j0, &nodes, |s, x| fam.lapse_at(s, x).powi(2));
    let omega = |d: f64| lapse_sq_lipschitz * d + (rho_log_lipschitz * d).exp_m1();
    let budget = |d: f64| 3.0 * lemma_l.powi(5) * d + 7.0 * lemma_l.powi(2) * omega(2.0 * d);
    let goal = 0.5 * c0 * c0;
    let (mut lo, mut hi) = (0.0, extent);
    if budget(hi) <= goal {
        lo = hi;
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if budget(mid) <= goal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(ConnectorBudget { c0, lemma_l, leg_l, rho_log_lipschitz, lapse_sq_lipschitz, delta0: lo })
}

/// Geodesic leg at the frozen time `s0` from `from` to `to`, crossed at base speed `1/L²`.
fn leg(fam: &ConformalFamily, s0: f64, from: NodeId, to: NodeId, l: f64, reverse_time: bool) -> Result<(Vec<(f64, NodeId)>, f64)> {
    if from == to {
        return Ok((vec![(s0, from)], 0.0));
    }
    let w = fam.weights_at(s0)?;
    let (_, path) = fam.base.conformal_geodesic(&w, from, to)?;
    let mut cum = vec![0.0];
    for p in path.windows(2) {
        let d = fam.base.conformal_distance(&w, p[0], p[1])?;
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let dur = l * l * total;
    let pts = path
        .iter()
        .zip(&cum)
        .map(|(&x, &c)| if reverse_time { (s0 - dur + l * l * c, x) } else { (s0 + l * l * c, x) })
        .collect();
    Ok((pts, total))
}

/// Three-leg timelike curve from `q = (a, x)` to `p = (b, y)` near the endpoints of a timelike witness.
pub fn timelike_connector(st: &ProductSpacetime, gamma0: &ProductCurve, q: (f64, NodeId), p: (f64, NodeId)) -> Result<ConnectorResult> {
    let fam = &st.family;
    let g0 = time_parametrized(gamma0)?;
    let budget = connector_budget(st, &g0)?;
    let (first, last) = (g0.first(), g0.last());
    if q == (first.s, first.x) && p == (last.s, last.x) {
        return Ok(ConnectorResult {
            margin: budget.c0,
            guaranteed: budget.c0,
            curve: g0,
            displacement: 0.0,
            budget,
        });
    }
    let l = budget.leg_l;
    fam.base.check_node(q.1)?;
    fam.base.check_node(p.1)?;
    fam.check_time(q.0)?;
    fam.check_time(p.0)?;
    // q -> (a', x0) and (b', y0) -> p
    let (mut head, _) = leg(fam, q.0, q.1, first.x, l, false)?;
    let (tail, _) = leg(fam, p.0, last.x, p.1, l, true)?;
    let a1 = head.last().unwrap().0;
    let b1 = tail[0].0;
    let displacement = (a1 - first.s).abs() + (b1 - last.s).abs();
    if !(displacement < budget.delta0) || !(b1 > a1) {
        return Err(GeomError::OutOfNeighborhood { displacement, delta0: budget.delta0 });
    }
    let (a0, b0) = (first.s, last.s);
    let affine = |s: f64| a1 + (b1 - a1) / (b0 - a0) * (s - a0);
    let core: Vec<(f64, NodeId)> = g0.samples.iter().map(|c| (affine(c.s), c.x)).collect();
    head.extend(core.into_iter().skip(1));
    head.extend(tail.into_iter().skip(1));
    *head.last_mut().unwrap() = p;
    head[0] = q;
    let curve = ProductCurve::new(head.iter().map(|&(s, x)| CurveSample { t: s, s, x }).collect())?;
    let terms = step_terms(st, &curve)?;
    let margin = terms
        .iter()
        .map(|t| if t.margin > 0.0 { t.margin.sqrt() / t.dt } else { 0.0 })
        .fold(f64::INFINITY, f64::min);
    let guaranteed = (budget.c0 / 2.0).min((1.0 / l - 1.0 / (l * l)).max(0.0).sqrt());
    Ok(ConnectorResult { curve, margin, guaranteed, displacement, budget })
}
