//! Distortion coefficients, entropy, the Wasserstein distance `W_h` on time,
//! Lorentz–Wasserstein `ℓ_p`, (K,N)-convexity checks, the wTCD probe on
//! vertical product plans and the partial-rigidity diagnostics.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::base_space::{BaseSpace, NodeId};
use crate::causal_core::{tau_table, CausalDAG, TimeSeparationTable};
use crate::error::{GeomError, Result};
use crate::metric_family::{Field, FieldSpec};
use crate::product_geometry::Event;
use crate::tol;

/// `σ_κ^t(θ)`; `Infinite` when `κθ² ≥ π²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sigma {
    Finite(f64),
    Infinite,
}

impl Sigma {
    pub fn value(self) -> f64 {
        match self {
            Sigma::Finite(v) => v,
            Sigma::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Sigma::Infinite)
    }
}

pub fn sigma(kappa: f64, t: f64, theta: f64) -> Sigma {
    let k = kappa * theta * theta;
    if k == 0.0 {
        Sigma::Finite(t)
    } else if k >= PI * PI {
        Sigma::Infinite
    } else if kappa > 0.0 {
        let r = kappa.sqrt();
        Sigma::Finite((r * t * theta).sin() / (r * theta).sin())
    } else {
        let r = (-kappa).sqrt();
        Sigma::Finite((r * t * theta).sinh() / (r * theta).sinh())
    }
}

/// Finitely supported probability measure.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteMeasure<A> {
    pub atoms: Vec<(A, f64)>,
}

impl<A: PartialEq + Clone> DiscreteMeasure<A> {
    pub fn new(atoms: Vec<(A, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(GeomError::InvalidMeasure("no atoms".into()));
        }
        if atoms.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(GeomError::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > tol::MASS_TOL {
            return Err(GeomError::InvalidMeasure(format!("total mass {total} differs from one")));
        }
        for (i, a) in atoms.iter().enumerate() {
            if atoms[..i].iter().any(|b| b.0 == a.0) {
                return Err(GeomError::InvalidMeasure("repeated atom".into()));
            }
        }
        Ok(Self { atoms })
    }

    pub fn uniform(points: Vec<A>) -> Result<Self> {
        let w = 1.0 / points.len() as f64;
        Self::new(points.into_iter().map(|p| (p, w)).collect())
    }

    pub fn dirac(point: A) -> Self {
        Self { atoms: vec![(point, 1.0)] }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn weight_of(&self, a: &A) -> Option<f64> {
        self.atoms.iter().find(|b| &b.0 == a).map(|b| b.1)
    }
}

/// `Σ μ_i log(μ_i / r_i)`; `+∞` when `μ` charges an atom outside the reference support.
pub fn entropy<A: PartialEq + Clone>(mu: &DiscreteMeasure<A>, reference: &[(A, f64)]) -> f64 {
    let mut total = 0.0;
    for (a, w) in &mu.atoms {
        if *w == 0.0 {
            continue;
        }
        match reference.iter().find(|r| &r.0 == a) {
            Some((_, r)) if *r > 0.0 => total += w * (w / r).ln(),
            _ => return f64::INFINITY,
        }
    }
    total
}

/// Lapse depending on time only, with `H(t) = ∫_0^t h`.
#[derive(Clone)]
pub struct TimeLapse {
    h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    constant: Option<f64>,
}

impl std::fmt::Debug for TimeLapse {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TimeLapse(constant = {:?})", self.constant)
    }
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_48),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_48),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// Composite 8-point Gauss–Legendre on `[a, b]` with `panels` panels.
pub fn gauss_legendre(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let w = (b - a) / panels as f64;
    let mut sum = 0.0;
    for k in 0..panels {
        let lo = a + w * k as f64;
        let c = lo + 0.5 * w;
        for (x, wt) in GL8 {
            sum += wt * f(c + 0.5 * w * x);
        }
    }
    0.5 * w * sum
}

impl TimeLapse {
    pub fn constant(c: f64) -> Self {
        Self { h: Arc::new(move |_| c), constant: Some(c) }
    }

    pub fn new(h: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { h: Arc::new(h), constant: None }
    }

    pub fn from_spec(spec: &FieldSpec) -> Result<Self> {
        Ok(match *spec {
            FieldSpec::Constant { value } => Self::constant(value),
            FieldSpec::ExpLinear { a, weights: None } => Self::new(move |s| (a * s).exp()),
            FieldSpec::AffineWeighted { a, b, weights: None } => Self::new(move |s| a + b * s),
            FieldSpec::PowerAffine { a, b, power } => Self::new(move |s| (a + b * s).powf(power)),
            FieldSpec::ExpQuadratic { a } => Self::new(move |s| (a * s * s).exp()),
            _ => return Err(GeomError::Domain("lapse for transport must depend on time only".into())),
        })
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.h)(s)
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    /// `H(t)`.
    pub fn big_h(&self, t: f64) -> f64 {
        match self.constant {
            Some(c) => c * t,
            None => {
                let panels = ((t.abs() * 64.0).ceil() as usize).clamp(8, 4096);
                gauss_legendre(0.0, t, panels, |s| self.eval(s))
            }
        }
    }

    /// `|t − s|_h`.
    pub fn dist(&self, s: f64, t: f64) -> f64 {
        (self.big_h(t) - self.big_h(s)).abs()
    }

    /// `H⁻¹(u)`.
    pub fn inverse(&self, u: f64) -> f64 {
        if let Some(c) = self.constant {
            return u / c;
        }
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.big_h(lo) > u {
            lo *= 2.0;
        }
        while self.big_h(hi) < u {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.big_h(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Quadratic transport on time with the `½`-weighted cost in `|·|_h`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WassersteinResult {
    pub value: f64,
    /// `(s, t, mass)` of the monotone coupling.
    pub plan: Vec<(f64, f64, f64)>,
}

impl WassersteinResult {
    /// Displacement interpolation `ν_t` pulled back through `H`.
    pub fn interpolate(&self, lapse: &TimeLapse, t: f64) -> Vec<(f64, f64)> {
        self.plan
            .iter()
            .map(|&(a, b, m)| (lapse.inverse((1.0 - t) * lapse.big_h(a) + t * lapse.big_h(b)), m))
            .collect()
    }
}

fn sorted_atoms(nu: &DiscreteMeasure<f64>) -> Vec<(f64, f64)> {
    let mut v = nu.atoms.clone();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// North-west corner coupling of two sorted atom lists.
fn monotone_coupling<A: Copy, B: Copy>(a: &[(A, f64)], b: &[(B, f64)]) -> Vec<(A, B, f64)> {
    let mut plan = Vec::new();
    if a.is_empty() || b.is_empty() {
        return plan;
    }
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        if m > 1e-15 {
            plan.push((a[i].0, b[j].0, m));
        }
        ra -= m;
        rb -= m;
        if ra <= 0.0 {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb <= 0.0 {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    plan
}

pub fn wasserstein_h(nu0: &DiscreteMeasure<f64>, nu1: &DiscreteMeasure<f64>, lapse: &TimeLapse) -> WassersteinResult {
    let a = sorted_atoms(nu0);
    let b = sorted_atoms(nu1);
    let plan = monotone_coupling(&a, &b);
    let cost: f64 = plan.iter().map(|&(s, t, m)| m * (lapse.big_h(t) - lapse.big_h(s)).powi(2)).sum();
    WassersteinResult { value: (0.5 * cost).sqrt(), plan }
}

/// Absolutely continuous time measure with piecewise linear quantile function in `H`-coordinates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeMeasure {
    /// `(mass level, H)` knots from `(0, H_min)` to `(1, H_max)`, both increasing strictly.
    pub knots: Vec<(f64, f64)>,
}

impl TimeMeasure {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 || knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(GeomError::InvalidMeasure("quantile knots must run from mass 0 to mass 1".into()));
        }
        if knots.windows(2).any(|w| !(w[1].0 > w[0].0) || !(w[1].1 > w[0].1)) {
            return Err(GeomError::InvalidMeasure("quantile knots must increase strictly".into()));
        }
        Ok(Self { knots })
    }

    /// Uniform measure on `[a, b]` in the `|·|_h` length.
    pub fn uniform_window(lapse: &TimeLapse, a: f64, b: f64) -> Result<Self> {
        Self::new(vec![(0.0, lapse.big_h(a)), (1.0, lapse.big_h(b))])
    }

    /// Quantile given in time coordinates, converted through `H`.
    pub fn from_time_quantile(lapse: &TimeLapse, knots: &[(f64, f64)]) -> Result<Self> {
        Self::new(knots.iter().map(|&(m, s)| (m, lapse.big_h(s))).collect())
    }

    pub fn quantile(&self, m: f64) -> f64 {
        let k = self.knots.partition_point(|x| x.0 <= m).clamp(1, self.knots.len() - 1);
        let (a, b) = (self.knots[k - 1], self.knots[k]);
        a.1 + (b.1 - a.1) * (m - a.0) / (b.0 - a.0)
    }

    pub fn support_h(&self) -> (f64, f64) {
        (self.knots[0].1, self.knots[self.knots.len() - 1].1)
    }
}

fn merged_levels(a: &TimeMeasure, b: &TimeMeasure) -> Vec<f64> {
    let mut v: Vec<f64> = a.knots.iter().chain(&b.knots).map(|k| k.0).collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Displacement interpolation `Q_t = (1 − t)Q_0 + tQ_1`.
pub fn interpolate_quantiles(a: &TimeMeasure, b: &TimeMeasure, t: f64) -> Result<TimeMeasure> {
    let levels = merged_levels(a, b);
    TimeMeasure::new(levels.iter().map(|&m| (m, (1.0 - t) * a.quantile(m) + t * b.quantile(m))).collect())
}

/// `W_h` between absolutely continuous time measures.
pub fn wasserstein_quantile(a: &TimeMeasure, b: &TimeMeasure) -> f64 {
    let levels = merged_levels(a, b);
    let mut sum = 0.0;
    for w in levels.windows(2) {
        let d0 = b.quantile(w[0]) - a.quantile(w[0]);
        let d1 = b.quantile(w[1]) - a.quantile(w[1]);
        sum += (w[1] - w[0]) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    (0.5 * sum).sqrt()
}

/// `ℓ_p` of the vertical plan between product measures with time marginals `a`, `b`.
pub fn vertical_ell_p(a: &TimeMeasure, b: &TimeMeasure, p: f64) -> f64 {
    let levels = merged_levels(a, b);
    let mut sum = 0.0;
    for w in levels.windows(2) {
        sum += gauss_legendre(w[0], w[1], 4, |m| (b.quantile(m) - a.quantile(m)).max(0.0).powf(p));
    }
    sum.powf(1.0 / p)
}

/// Reference `𝐦 = g · (h𝓛¹ ⊗ m)` with node masses `m` and a time-only lapse.
#[derive(Clone, Debug)]
pub struct DensityField {
    pub g: Field,
    pub masses: Vec<f64>,
    pub lapse: TimeLapse,
}

impl DensityField {
    pub fn new(g: Field, masses: Vec<f64>, lapse: TimeLapse) -> Result<Self> {
        if masses.is_empty() || masses.iter().any(|m| !(*m > 0.0)) {
            return Err(GeomError::InvalidMeasure("node masses must be positive".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > tol::MASS_TOL {
            return Err(GeomError::InvalidMeasure(format!("node masses sum to {total}")));
        }
        Ok(Self { g, masses, lapse })
    }

    pub fn from_spec(base: &BaseSpace, g: &FieldSpec, masses: Option<Vec<f64>>, lapse: &FieldSpec) -> Result<Self> {
        let n = base.len();
        let masses = masses.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        if masses.len() != n {
            return Err(GeomError::InvalidMeasure(format!("expected {n} node masses")));
        }
        Self::new(Field::from_spec(g, base)?, masses, TimeLapse::from_spec(lapse)?)
    }

    pub fn nodes(&self) -> usize {
        self.masses.len()
    }

    /// `g` as a function of `u = H(s)`.
    fn g_h(&self, u: f64, x: NodeId) -> f64 {
        self.g.eval(self.lapse.inverse(u), x)
    }

    /// Bound `C` with `C⁻¹ ≤ g ≤ C` sampled on a window.
    pub fn density_bound(&self, window: (f64, f64)) -> f64 {
        let mut c = 1.0f64;
        for i in 0..=256 {
            let s = window.0 + (window.1 - window.0) * i as f64 / 256.0;
            for x in 0..self.nodes() {
                let v = self.g.eval(s, x);
                c = c.max(v).max(1.0 / v);
            }
        }
        c
    }
}

/// Per mass piece: `(Δm, −log slope, [(Δm·w_q, H)])`.
fn entropy_terms(nu: &TimeMeasure) -> Vec<(f64, f64, Vec<(f64, f64)>)> {
    nu.knots
        .windows(2)
        .map(|w| {
            let dm = w[1].0 - w[0].0;
            let slope = (w[1].1 - w[0].1) / dm;
            let c = 0.5 * (w[0].0 + w[1].0);
            let pts = GL8
                .iter()
                .map(|&(x, wt)| {
                    let m = c + 0.5 * dm * x;
                    (0.5 * dm * wt, w[0].1 + slope * (m - w[0].0))
                })
                .collect();
            (dm, -slope.ln(), pts)
        })
        .collect()
}

/// `e_x = Ent_{λ_x}(ν)`, `λ_x = g(·, x) 𝓗¹_h`.
pub fn entropy_slice(field: &DensityField, nu: &TimeMeasure, x: NodeId) -> f64 {
    let mut e = 0.0;
    for (dm, neg_log_slope, pts) in entropy_terms(nu) {
        e += dm * neg_log_slope;
        for (w, u) in pts {
            e -= w * field.g_h(u, x).ln();
        }
    }
    e
}

fn region_mass(field: &DensityField, region: &[NodeId]) -> Result<f64> {
    if region.is_empty() {
        return Err(GeomError::InvalidMeasure("empty region".into()));
    }
    for (i, &x) in region.iter().enumerate() {
        if x >= field.nodes() {
            return Err(GeomError::UnknownNode(x));
        }
        if region[..i].contains(&x) {
            return Err(GeomError::InvalidMeasure("repeated node in region".into()));
        }
    }
    Ok(region.iter().map(|&x| field.masses[x]).sum())
}

/// `e_B = Ent_𝐦(ν ⊗ m|_B / m(B))` summed directly over the product.
pub fn entropy_region(field: &DensityField, nu: &TimeMeasure, region: &[NodeId]) -> Result<f64> {
    let mb = region_mass(field, region)?;
    let log_mb = mb.ln();
    let terms = entropy_terms(nu);
    let mut e = 0.0;
    for &x in region {
        let wx = field.masses[x] / mb;
        for (dm, neg_log_slope, pts) in &terms {
            e += wx * dm * (neg_log_slope - log_mb);
            for &(w, u) in pts {
                e -= wx * w * field.g_h(u, x).ln();
            }
        }
    }
    Ok(e)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Decomposition {
    pub t: f64,
    pub e_b: f64,
    /// `⨍_B e_x dm − log m(B)`
    pub averaged: f64,
    pub residual: f64,
}

pub fn entropy_decomposition(field: &DensityField, nu: &TimeMeasure, region: &[NodeId], t: f64) -> Result<Decomposition> {
    let mb = region_mass(field, region)?;
    let e_b = entropy_region(field, nu, region)?;
    let avg: f64 = region.iter().map(|&x| field.masses[x] * entropy_slice(field, nu, x)).sum::<f64>() / mb;
    let averaged = avg - mb.ln();
    Ok(Decomposition { t, e_b, averaged, residual: (e_b - averaged).abs() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KnReport {
    pub pass: bool,
    pub worst_t: f64,
    pub worst_slack: f64,
    /// `(t, u_exp(t) − σ-combination of endpoints)`
    pub slacks: Vec<(f64, f64)>,
}

/// (K,N)-convexity of `u` along a plan of length `T`, in the σ-form.
pub fn kn_convexity(u: &[(f64, f64)], k: f64, n: f64, t_eta: f64, slack_tol: f64) -> Result<KnReport> {
    if u.len() < 2 || u[0].0 != 0.0 || u[u.len() - 1].0 != 1.0 {
        return Err(GeomError::Domain("entropy curve must be sampled at t = 0 and t = 1".into()));
    }
    let ue = |v: f64| (-v / n).exp();
    let (u0, u1) = (ue(u[0].1), ue(u[u.len() - 1].1));
    let kappa = k / n;
    let mut slacks = Vec::with_capacity(u.len());
    for &(t, v) in u {
        let (a, b) = (sigma(kappa, 1.0 - t, t_eta), sigma(kappa, t, t_eta));
        let term = |s: Sigma, w: f64| match s {
            Sigma::Finite(c) => c * w,
            Sigma::Infinite if w == 0.0 => 0.0,
            Sigma::Infinite => f64::INFINITY,
        };
        slacks.push((t, ue(v) - (term(a, u0) + term(b, u1))));
    }
    let (worst_t, worst_slack) = slacks.iter().copied().fold((0.0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    Ok(KnReport { pass: worst_slack >= -slack_tol, worst_t, worst_slack, slacks })
}

/// One wTCD case: time marginals and a region `B`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WtcdCase {
    pub name: String,
    pub nu0: TimeMeasure,
    pub nu1: TimeMeasure,
    pub region: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WtcdCaseReport {
    pub name: String,
    pub distance: f64,
    pub ell_p: f64,
    /// `(t, e_B(t))`
    pub entropy: Vec<(f64, f64)>,
    pub convexity: KnReport,
    pub max_decomposition_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WtcdReport {
    pub k: f64,
    pub n: f64,
    pub p: f64,
    pub pass: bool,
    pub cases: Vec<WtcdCaseReport>,
}

pub fn wtcd_probe(field: &DensityField, p: f64, k: f64, n: f64, cases: &[WtcdCase], samples: usize) -> Result<WtcdReport> {
    if !(p > 0.0 && p < 1.0) || !(n >= 1.0) {
        return Err(GeomError::Domain("need p in (0,1) and N >= 1".into()));
    }
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let levels = merged_levels(&case.nu0, &case.nu1);
        if levels.iter().any(|&m| case.nu1.quantile(m) < case.nu0.quantile(m)) {
            return Err(GeomError::OutOfScope(format!("case {} is not an increasing vertical plan", case.name)));
        }
        let steps = samples.max(2);
        let mut entropy = Vec::with_capacity(steps + 1);
        let mut residual = 0.0f64;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let nu = interpolate_quantiles(&case.nu0, &case.nu1, t)?;
            let d = entropy_decomposition(field, &nu, &case.region, t)?;
            residual = residual.max(d.residual);
            entropy.push((t, d.e_b));
        }
        let distance = wasserstein_quantile(&case.nu0, &case.nu1);
        let convexity = kn_convexity(&entropy, k, n, distance, tol::KN_SLACK_TOL)?;
        out.push(WtcdCaseReport {
            name: case.name.clone(),
            distance,
            ell_p: vertical_ell_p(&case.nu0, &case.nu1, p),
            entropy,
            convexity,
            max_decomposition_residual: residual,
        });
    }
    Ok(WtcdReport { k, n, p, pass: out.iter().all(|c| c.convexity.pass), cases: out })
}

/// `u_x^δ(a) = exp((1/N) ⨍_{B_h(a, δ)} log g(·, x) d𝓗¹_h)`.
pub fn delta_smooth(field: &DensityField, x: NodeId, n: f64, delta: f64, a: f64, window: (f64, f64)) -> Result<f64> {
    if x >= field.nodes() {
        return Err(GeomError::UnknownNode(x));
    }
    let lapse = &field.lapse;
    let c = lapse.big_h(a);
    let (lo, hi) = (lapse.big_h(window.0), lapse.big_h(window.1));
    if !(delta > 0.0) || c - delta < lo || c + delta > hi {
        return Err(GeomError::Domain(format!("ball of radius {delta} around {a} leaves the window")));
    }
    let avg = gauss_legendre(c - delta, c + delta, 8, |u| field.g_h(u, x).ln()) / (2.0 * delta);
    Ok((avg / n).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Constancy {
    Constant { slope_bound: f64 },
    Undetermined { slope_bound: f64 },
    Failed,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeRigidity {
    pub node: NodeId,
    pub concave: bool,
    pub max_violation: f64,
    pub worst_triple: Option<(f64, f64, f64)>,
    /// `(window, slope bound)` per window.
    pub slope_bounds: Vec<((f64, f64), f64)>,
    pub max_secant_slope: f64,
    pub constancy: Constancy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RigidityReport {
    pub k: f64,
    pub n: f64,
    pub nodes: Vec<NodeRigidity>,
    pub all_concave: bool,
    pub exceptional_mass: f64,
    pub constancy: Constancy,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidityOptions {
    /// Sample points per window for `a < b`.
    pub points: usize,
    pub ts: [f64; 3],
    pub tol: f64,
    pub constant_bound: f64,
}

impl Default for RigidityOptions {
    fn default() -> Self {
        Self { points: 9, ts: [0.25, 0.5, 0.75], tol: tol::KN_SLACK_TOL, constant_bound: 1e-12 }
    }
}

/// Checks `g_x^{1/N}` against the σ-concavity inequality on each window and,
/// for `K = 0`, bounds slopes by `max(f(L), f(R)) / (R − L)`.
pub fn concavity_rigidity(field: &DensityField, k: f64, n: f64, windows: &[(f64, f64)], opts: RigidityOptions) -> Result<RigidityReport> {
    if windows.is_empty() || windows.iter().any(|w| !(w.1 > w.0)) {
        return Err(GeomError::Domain("windows must be nonempty intervals".into()));
    }
    let lapse = &field.lapse;
    let kappa = k / n;
    let mut nodes = Vec::with_capacity(field.nodes());
    for x in 0..field.nodes() {
        let f = |s: f64| field.g.eval(s, x).powf(1.0 / n);
        let mut max_violation = 0.0f64;
        let mut worst_triple = None;
        let mut slope_bounds = Vec::new();
        let mut max_secant = 0.0f64;
        for &(l, r) in windows {
            let pts: Vec<f64> = (0..opts.points).map(|i| l + (r - l) * i as f64 / (opts.points - 1) as f64).collect();
            for (i, &a) in pts.iter().enumerate() {
                for &b in &pts[i + 1..] {
                    max_secant = max_secant.max(((f(b) - f(a)) / (b - a)).abs());
                    let theta = lapse.dist(a, b);
                    let (ha, hb) = (lapse.big_h(a), lapse.big_h(b));
                    for &t in &opts.ts {
                        let at = lapse.inverse((1.0 - t) * ha + t * hb);
                        let rhs = match (sigma(kappa, 1.0 - t, theta), sigma(kappa, t, theta)) {
                            (Sigma::Finite(c0), Sigma::Finite(c1)) => c0 * f(a) + c1 * f(b),
                            _ => f64::INFINITY,
                        };
                        let viol = rhs - f(at);
                        if viol > max_violation {
                            max_violation = viol;
                            worst_triple = Some((a, b, t));
                        }
                    }
                }
            }
            slope_bounds.push(((l, r), f(l).max(f(r)) / (r - l)));
        }
        let concave = max_violation <= opts.tol;
        let constancy = if k != 0.0 {
            Constancy::NotApplicable
        } else if !concave {
            Constancy::Failed
        } else {
            let bound = slope_bounds.iter().map(|b| b.1).fold(f64::INFINITY, f64::min);
            if bound <= opts.constant_bound {
                Constancy::Constant { slope_bound: bound }
            } else {
                Constancy::Undetermined { slope_bound: bound }
            }
        };
        nodes.push(NodeRigidity { node: x, concave, max_violation, worst_triple, slope_bounds, max_secant_slope: max_secant, constancy });
    }
    let all_concave = nodes.iter().all(|r| r.concave);
    let exceptional_mass = nodes.iter().filter(|r| !r.concave).map(|r| field.masses[r.node]).sum();
    let constancy = if k != 0.0 {
        Constancy::NotApplicable
    } else if !all_concave {
        Constancy::Failed
    } else {
        let bound = nodes
            .iter()
            .map(|r| match r.constancy {
                Constancy::Constant { slope_bound } | Constancy::Undetermined { slope_bound } => slope_bound,
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max);
        if bound <= opts.constant_bound {
            Constancy::Constant { slope_bound: bound }
        } else {
            Constancy::Undetermined { slope_bound: bound }
        }
    };
    Ok(RigidityReport { k, n, nodes, all_concave, exceptional_mass, constancy })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CyclicReport {
    pub pass: bool,
    /// Permutation with the largest gain over the identity, and that gain.
    pub worst: Option<(Vec<usize>, f64)>,
}

fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    f(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Reverse cyclic monotonicity `Σ |t_i − s_i|_h^p ≥ Σ |t_{σ(i)} − s_i|_h^p` over
/// permutations that keep every pair causal (`ℓ = −∞` off the causal set). A
/// support with a non-causal pair fails outright.
pub fn check_cyclic(support: &[(f64, f64)], p: f64, lapse: &TimeLapse) -> Result<CyclicReport> {
    let n = support.len();
    if n > tol::MAX_PERMUTATION_SUPPORT {
        return Err(GeomError::SizeGuard(format!("support of {n} pairs exceeds {}", tol::MAX_PERMUTATION_SUPPORT)));
    }
    let hs: Vec<f64> = support.iter().map(|c| lapse.big_h(c.0)).collect();
    let ht: Vec<f64> = support.iter().map(|c| lapse.big_h(c.1)).collect();
    let causal = |i: usize, j: usize| support[j].1 >= support[i].0;
    let cost = |i: usize, j: usize| (ht[j] - hs[i]).max(0.0).powf(p);
    if !(0..n).all(|i| causal(i, i)) {
        return Ok(CyclicReport { pass: false, worst: None });
    }
    let base: f64 = (0..n).map(|i| cost(i, i)).sum();
    let mut worst: Option<(Vec<usize>, f64)> = None;
    for_each_permutation(n, |perm| {
        if !(0..n).all(|i| causal(i, perm[i])) {
            return;
        }
        let v: f64 = (0..n).map(|i| cost(i, perm[i])).sum();
        let gain = v - base;
        if gain > worst.as_ref().map_or(0.0, |w| w.1) {
            worst = Some((perm.to_vec(), gain));
        }
    });
    let tol = 1e-12 * (1.0 + base.abs());
    let pass = worst.as_ref().map_or(true, |w| w.1 <= tol);
    Ok(CyclicReport { pass, worst: if pass { None } else { worst } })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EllPMethod {
    Vertical,
    Permutation,
    VertexEnumeration,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EllPResult {
    pub value: f64,
    pub coupling: Vec<(Event, Event, f64)>,
    pub method: EllPMethod,
    pub feasible: bool,
    /// Atoms of `μ` (then `ν`) with no causal partner in the other support.
    pub isolated_sources: Vec<Event>,
    pub isolated_targets: Vec<Event>,
}

/// `τ` between support atoms; `None` for non-causal pairs.
pub struct TauMatrix {
    pub values: Vec<Vec<Option<f64>>>,
}

impl TauMatrix {
    pub fn build(dag: &CausalDAG, sources: &[Event], targets: &[Event]) -> Result<Self> {
        let mut values = Vec::with_capacity(sources.len());
        for &s in sources {
            let table: TimeSeparationTable = tau_table(dag, s)?;
            values.push(targets.iter().map(|&q| if q.layer < s.layer { None } else { table.tau(q) }).collect());
        }
        Ok(Self { values })
    }
}

fn isolated(tau: &TauMatrix, mu: &DiscreteMeasure<Event>, nu: &DiscreteMeasure<Event>) -> (Vec<Event>, Vec<Event>) {
    let src = mu.atoms.iter().enumerate().filter(|(i, _)| tau.values[*i].iter().all(Option::is_none)).map(|(_, a)| a.0).collect();
    let dst = nu
        .atoms
        .iter()
        .enumerate()
        .filter(|(j, _)| tau.values.iter().all(|row| row[*j].is_none()))
        .map(|(_, a)| a.0)
        .collect();
    (src, dst)
}

/// Product form `ν_t ⊗ m`: every node carries the same normalized time profile.
fn product_profile(mu: &DiscreteMeasure<Event>) -> Option<(Vec<(NodeId, f64)>, Vec<(usize, f64)>)> {
    let mut nodes: Vec<(NodeId, f64)> = Vec::new();
    for (e, w) in &mu.atoms {
        match nodes.iter_mut().find(|n| n.0 == e.node) {
            Some(n) => n.1 += w,
            None => nodes.push((e.node, *w)),
        }
    }
    nodes.sort_by_key(|n| n.0);
    let profile_of = |x: NodeId, mx: f64| {
        let mut v: Vec<(usize, f64)> = mu.atoms.iter().filter(|a| a.0.node == x).map(|a| (a.0.layer, a.1 / mx)).collect();
        v.sort_by_key(|a| a.0);
        v
    };
    let first = profile_of(nodes[0].0, nodes[0].1);
    for &(x, mx) in &nodes[1..] {
        let p = profile_of(x, mx);
        if p.len() != first.len() || p.iter().zip(&first).any(|(a, b)| a.0 != b.0 || (a.1 - b.1).abs() > 1e-12) {
            return None;
        }
    }
    Some((nodes, first))
}

fn ell_p_vertical(dag: &CausalDAG, mu: &DiscreteMeasure<Event>, nu: &DiscreteMeasure<Event>, p: f64) -> Result<Option<EllPResult>> {
    let (Some((nm, pm)), Some((nn, pn))) = (product_profile(mu), product_profile(nu)) else {
        return Ok(None);
    };
    if nm.len() != nn.len() || nm.iter().zip(&nn).any(|(a, b)| a.0 != b.0 || (a.1 - b.1).abs() > 1e-12) {
        return Ok(None);
    }
    let pairs = monotone_coupling(&pm, &pn);
    let mut coupling = Vec::new();
    let mut sum = 0.0;
    let mut feasible = true;
    for &(x, mx) in &nm {
        for &(la, lb, m) in &pairs {
            let (a, b) = (Event::new(la, x), Event::new(lb, x));
            let tau = if lb < la { None } else { tau_table(dag, a)?.tau(b) };
            match tau {
                Some(t) => {
                    sum += mx * m * t.powf(p);
                    coupling.push((a, b, mx * m));
                }
                None => feasible = false,
            }
        }
    }
    if !feasible {
        coupling.clear();
        sum = 0.0;
    }
    Ok(Some(EllPResult {
        value: sum.powf(1.0 / p),
        coupling,
        method: EllPMethod::Vertical,
        feasible,
        isolated_sources: vec![],
        isolated_targets: vec![],
    }))
}

/// Exhaustive maximum of `Σ π τ^p` over vertices of the causal transport polytope.
pub fn ell_p_exhaustive(tau: &TauMatrix, a: &[f64], b: &[f64], p: f64) -> Result<Option<(f64, Vec<(usize, usize, f64)>)>> {
    let (n, m) = (a.len(), b.len());
    let cells: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (0..m).filter_map(move |j| tau.values[i][j].map(|t| (i, j, t))))
        .collect();
    if cells.len() > tol::MAX_VERTEX_CELLS {
        return Err(GeomError::SizeGuard(format!("{} causal cells exceed {}", cells.len(), tol::MAX_VERTEX_CELLS)));
    }
    // components of the allowed bipartite graph fix the forest size
    let verts = n + m;
    let mut parent: Vec<usize> = (0..verts).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let nxt = p[y];
            p[y] = r;
            y = nxt;
        }
        r
    }
    for &(i, j, _) in &cells {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, n + j));
        if ri != rj {
            parent[ri] = rj;
        }
    }
    let comps = (0..verts).filter(|&v| find(&mut parent.clone(), v) == v).count();
    let edges = verts - comps;
    let mut best: Option<(f64, Vec<(usize, usize, f64)>)> = None;
    let mut chosen: Vec<usize> = Vec::with_capacity(edges);
    let mass: Vec<f64> = a.iter().chain(b).copied().collect();

    #[allow(clippy::too_many_arguments)]
    fn search(
        start: usize,
        cells: &[(usize, usize, f64)],
        n: usize,
        edges: usize,
        chosen: &mut Vec<usize>,
        uf: &mut Vec<usize>,
        mass: &[f64],
        p: f64,
        best: &mut Option<(f64, Vec<(usize, usize, f64)>)>,
    ) {
        if chosen.len() == edges {
            if let Some((v, plan)) = solve_forest(cells, chosen, n, mass, p) {
                if best.as_ref().map_or(true, |b| v > b.0) {
                    *best = Some((v, plan));
                }
            }
            return;
        }
        if cells.len() - start < edges - chosen.len() {
            return;
        }
        for k in start..cells.len() {
            if cells.len() - k < edges - chosen.len() {
                break;
            }
            let (i, j, _) = cells[k];
            let saved = uf.clone();
            let (ri, rj) = (find(uf, i), find(uf, n + j));
            if ri == rj {
                continue;
            }
            uf[ri] = rj;
            chosen.push(k);
            search(k + 1, cells, n, edges, chosen, uf, mass, p, best);
            chosen.pop();
            *uf = saved;
        }
    }

    let mut uf: Vec<usize> = (0..verts).collect();
    search(0, &cells, n, edges, &mut chosen, &mut uf, &mass, p, &mut best);
    Ok(best)
}

/// Flow on a spanning forest by leaf peeling; `None` if infeasible.
fn solve_forest(cells: &[(usize, usize, f64)], chosen: &[usize], n: usize, mass: &[f64], p: f64) -> Option<(f64, Vec<(usize, usize, f64)>)> {
    let verts = mass.len();
    let mut rem = mass.to_vec();
    let mut deg = vec![0usize; verts];
    for &k in chosen {
        deg[cells[k].0] += 1;
        deg[n + cells[k].1] += 1;
    }
    if (0..verts).any(|v| deg[v] == 0) {
        return None;
    }
    let mut used = vec![false; chosen.len()];
    let mut flow = vec![0.0; chosen.len()];
    for _ in 0..chosen.len() {
        let (e, leaf) = (0..chosen.len()).filter(|&e| !used[e]).find_map(|e| {
            let (i, j, _) = cells[chosen[e]];
            if deg[i] == 1 {
                Some((e, i))
            } else if deg[n + j] == 1 {
                Some((e, n + j))
            } else {
                None
            }
        })?;
        let (i, j, _) = cells[chosen[e]];
        let other = if leaf == i { n + j } else { i };
        let f = rem[leaf];
        if f < -1e-12 {
            return None;
        }
        flow[e] = f.max(0.0);
        rem[leaf] = 0.0;
        rem[other] -= f;
        deg[i] -= 1;
        deg[n + j] -= 1;
        used[e] = true;
    }
    if rem.iter().any(|r| r.abs() > 1e-9) {
        return None;
    }
    let mut value = 0.0;
    let mut plan = Vec::new();
    for (e, &k) in chosen.iter().enumerate() {
        let (i, j, t) = cells[k];
        if flow[e] > 0.0 {
            value += flow[e] * t.powf(p);
            plan.push((i, j, flow[e]));
        }
    }
    Some((value, plan))
}

fn ell_p_permutation(tau: &TauMatrix, n: usize, p: f64) -> Option<(f64, Vec<(usize, usize, f64)>)> {
    let w = 1.0 / n as f64;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_permutation(n, |perm| {
        let mut v = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            match tau.values[i][j] {
                Some(t) => v += w * t.powf(p),
                None => return,
            }
        }
        if best.as_ref().map_or(true, |b| v > b.0) {
            best = Some((v, perm.to_vec()));
        }
    });
    best.map(|(v, perm)| (v, perm.into_iter().enumerate().map(|(i, j)| (i, j, w)).collect()))
}

/// `ℓ_p(μ, ν) = sup_π (∫ τ^p dπ)^{1/p}` over causal couplings, 0 when none exists.
pub fn ell_p(dag: &CausalDAG, mu: &DiscreteMeasure<Event>, nu: &DiscreteMeasure<Event>, p: f64) -> Result<EllPResult> {
    if !(p > 0.0 && p < 1.0) {
        return Err(GeomError::Domain(format!("p = {p} outside (0, 1)")));
    }
    if let Some(r) = ell_p_vertical(dag, mu, nu, p)? {
        return Ok(r);
    }
    let src: Vec<Event> = mu.atoms.iter().map(|a| a.0).collect();
    let dst: Vec<Event> = nu.atoms.iter().map(|a| a.0).collect();
    let tau = TauMatrix::build(dag, &src, &dst)?;
    let (isolated_sources, isolated_targets) = isolated(&tau, mu, nu);
    let uniform = mu.len() == nu.len()
        && mu.len() <= tol::MAX_PERMUTATION_SUPPORT
        && mu.atoms.iter().chain(&nu.atoms).all(|a| (a.1 - 1.0 / mu.len() as f64).abs() <= 1e-15);
    let (best, method) = if uniform {
        (ell_p_permutation(&tau, mu.len(), p), EllPMethod::Permutation)
    } else {
        let a: Vec<f64> = mu.atoms.iter().map(|x| x.1).collect();
        let b: Vec<f64> = nu.atoms.iter().map(|x| x.1).collect();
        (ell_p_exhaustive(&tau, &a, &b, p)?, EllPMethod::VertexEnumeration)
    };
    Ok(match best {
        Some((v, plan)) => EllPResult {
            value: v.powf(1.0 / p),
            coupling: plan.into_iter().map(|(i, j, w)| (src[i], dst[j], w)).collect(),
            method,
            feasible: true,
            isolated_sources,
            isolated_targets,
        },
        None => EllPResult { value: 0.0, coupling: vec![], method, feasible: false, isolated_sources, isolated_targets },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal_core::build_causal_dag;
    use crate::metric_family::ConformalFamily;
    use crate::product_geometry::ProductSpacetime;

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(0.0, 0.3, 5.0), Sigma::Finite(0.3));
        assert_eq!(sigma(1.0, 0.3, PI), Sigma::Infinite);
        assert_eq!(sigma(2.0, 0.3, PI), Sigma::Infinite);
        let v = sigma(-1.0, 0.5, 1.0).value();
        assert!((v - 0.5f64.sinh() / 1f64.sinh()).abs() < 1e-15);
        assert!((v - 0.443409).abs() < 1e-6);
        assert!((sigma(1.0, 0.5, 1.0).value() - 0.5f64.sin() / 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        let reference: Vec<(u32, f64)> = (0..4).map(|i| (i, 0.25)).collect();
        let uniform = DiscreteMeasure::uniform((0..4).collect()).unwrap();
        assert_eq!(entropy(&uniform, &reference), 0.0);
        let point = DiscreteMeasure::dirac(2u32);
        assert!((entropy(&point, &reference) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&DiscreteMeasure::dirac(7u32), &reference), f64::INFINITY);
        assert!(DiscreteMeasure::new(vec![(0u32, 0.5), (1, 0.6)]).is_err());
        assert!(DiscreteMeasure::new(vec![(0u32, 0.5), (0, 0.5)]).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let one = TimeLapse::constant(1.0);
        let a = DiscreteMeasure::new(vec![(0.0, 0.5), (0.4, 0.5)]).unwrap();
        let w = wasserstein_h(&a, &a, &one);
        assert_eq!(w.value, 0.0);
        assert!(w.plan.iter().all(|p| p.0 == p.1));
        let (d0, d1) = (DiscreteMeasure::dirac(0.0), DiscreteMeasure::dirac(1.0));
        assert!((wasserstein_h(&d0, &d1, &one).value - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(wasserstein_h(&d0, &d1, &TimeLapse::constant(2.0)).value, 2.0 * wasserstein_h(&d0, &d1, &one).value);
        let mid = wasserstein_h(&d0, &d1, &one).interpolate(&one, 0.25);
        assert_eq!(mid, vec![(0.25, 1.0)]);
        let b = DiscreteMeasure::new(vec![(0.1, 0.25), (0.5, 0.25), (0.9, 0.5)]).unwrap();
        let plan = wasserstein_h(&a, &b, &one).plan;
        let total: f64 = plan.iter().map(|p| p.2).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(plan.len(), 3);
    }

    #[test]
    fn cyclic_examples() {
        let one = TimeLapse::constant(1.0);
        assert!(check_cyclic(&[(0.0, 2.0), (1.0, 3.0)], 0.5, &one).unwrap().pass);
        let crossed = check_cyclic(&[(0.0, 3.0), (1.0, 2.0)], 0.5, &one).unwrap();
        assert!(!crossed.pass);
        assert_eq!(crossed.worst.unwrap().0, vec![1, 0]);
        assert!(check_cyclic(&[(0.0, 1.0)], 0.5, &one).unwrap().pass);
        // the swap would pair 0.9 with 0.1, which is not causal
        assert!(check_cyclic(&[(0.0, 0.1), (0.9, 1.0)], 0.5, &one).unwrap().pass);
        assert!(!check_cyclic(&[(0.5, 0.1)], 0.5, &one).unwrap().pass);
        assert!(matches!(check_cyclic(&[(0.0, 1.0); 9], 0.5, &one), Err(GeomError::SizeGuard(_))));
    }

    #[test]
    fn kn_examples() {
        let ts: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        // affine u_exp = 1 + t
        let affine: Vec<(f64, f64)> = ts.iter().map(|&t| (t, -2.0 * (1.0 + t).ln())).collect();
        let r = kn_convexity(&affine, 0.0, 2.0, 1.0, 1e-12).unwrap();
        assert!(r.pass);
        assert!(r.worst_slack.abs() < 1e-15);
        let flat: Vec<(f64, f64)> = ts.iter().map(|&t| (t, 0.3)).collect();
        assert!(kn_convexity(&flat, 0.0, 3.0, 1.0, 1e-12).unwrap().pass);
        let dip: Vec<(f64, f64)> = ts.iter().map(|&t| (t, -(1.0 - t * (1.0 - t)).ln())).collect();
        let r = kn_convexity(&dip, 0.0, 1.0, 1.0, 1e-12).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst_t, 0.5);
        let inf = kn_convexity(&flat, 1.0, 1.0, 4.0, 1e-12).unwrap();
        assert!(!inf.pass);
    }

    fn field(spec: FieldSpec, nodes: usize) -> DensityField {
        let base = BaseSpace::path_graph(nodes, 1.0).unwrap();
        DensityField::from_spec(&base, &spec, None, &FieldSpec::Constant { value: 1.0 }).unwrap()
    }

    #[test]
    fn decomposition_examples() {
        let f = field(FieldSpec::Constant { value: 1.0 }, 4);
        let nu = TimeMeasure::uniform_window(&f.lapse, 0.0, 0.5).unwrap();
        let d = entropy_decomposition(&f, &nu, &[1], 0.0).unwrap();
        assert!((d.e_b - (entropy_slice(&f, &nu, 1) - 0.25f64.ln())).abs() < 1e-15);
        let d = entropy_decomposition(&f, &nu, &[0, 2, 3], 0.0).unwrap();
        let closed = -(0.5f64.ln()) - 0.75f64.ln();
        assert!((d.e_b - closed).abs() < 1e-14);
        assert!(d.residual < 1e-12);
    }

    #[test]
    fn delta_smooth_examples() {
        let c = field(FieldSpec::Constant { value: 3.0 }, 2);
        let u = delta_smooth(&c, 0, 2.0, 0.1, 0.5, (0.0, 1.0)).unwrap();
        assert!((u - 3f64.sqrt()).abs() < 1e-14);
        let e = field(FieldSpec::ExpLinear { a: 2.0, weights: None }, 2);
        let u = delta_smooth(&e, 1, 2.0, 0.2, 0.4, (0.0, 1.0)).unwrap();
        assert!((u - 0.4f64.exp()).abs() < 1e-14);
        assert!(delta_smooth(&e, 1, 2.0, 0.5, 0.4, (0.0, 1.0)).is_err());
    }

    #[test]
    fn wtcd_examples() {
        let flat = field(FieldSpec::Constant { value: 1.0 }, 3);
        let case = WtcdCase {
            name: "w".into(),
            nu0: TimeMeasure::uniform_window(&flat.lapse, 0.0, 0.2).unwrap(),
            nu1: TimeMeasure::uniform_window(&flat.lapse, 0.6, 1.0).unwrap(),
            region: vec![0, 1],
        };
        let r = wtcd_probe(&flat, 0.5, 0.0, 2.0, &[case.clone()], 8).unwrap();
        assert!(r.pass);
        let exp = field(FieldSpec::ExpLinear { a: 1.0, weights: None }, 3);
        let same = WtcdCase {
            nu1: TimeMeasure::uniform_window(&flat.lapse, 0.8, 1.0).unwrap(),
            ..case.clone()
        };
        let r = wtcd_probe(&exp, 0.5, 0.0, 2.0, &[same], 8).unwrap();
        assert!(!r.pass);
        assert_eq!(r.cases[0].convexity.worst_t, 0.5);
        let back = WtcdCase { nu0: case.nu1.clone(), nu1: case.nu0.clone(), ..case };
        assert!(matches!(wtcd_probe(&flat, 0.5, 0.0, 2.0, &[back], 8), Err(GeomError::OutOfScope(_))));
    }

    #[test]
    fn rigidity_examples() {
        let one = field(FieldSpec::Constant { value: 1.0 }, 2);
        let windows: Vec<(f64, f64)> = (0..=13).map(|k| (-(10f64.powi(k)), 10f64.powi(k))).collect();
        let r = concavity_rigidity(&one, 0.0, 1.0, &windows, RigidityOptions::default()).unwrap();
        assert!(r.all_concave);
        assert!(matches!(r.constancy, Constancy::Constant { slope_bound } if slope_bound <= 1e-12));
        let affine = field(FieldSpec::AffineWeighted { a: 1.0, b: 0.1, weights: None }, 2);
        let r = concavity_rigidity(&affine, 0.0, 1.0, &[(-1.0, 1.0)], RigidityOptions::default()).unwrap();
        assert!(r.all_concave);
        match r.constancy {
            Constancy::Undetermined { slope_bound } => assert!((slope_bound - 0.55).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        let quad = field(FieldSpec::ExpQuadratic { a: 1.0 }, 2);
        let r = concavity_rigidity(&quad, 0.0, 1.0, &[(-1.0, 1.0)], RigidityOptions::default()).unwrap();
        assert!(!r.all_concave);
        assert_eq!(r.constancy, Constancy::Failed);
        assert_eq!(r.exceptional_mass, 1.0);
    }

    fn vertical_dag() -> (CausalDAG, ProductSpacetime) {
        let fam = ConformalFamily::flat(BaseSpace::path_graph(3, 1.0).unwrap(), (0.0, 1.0)).unwrap();
        let st = ProductSpacetime::uniform(fam, 10, 1).unwrap();
        (build_causal_dag(&st).unwrap(), st)
    }

    #[test]
    fn ell_p_examples() {
        let (dag, _) = vertical_dag();
        let (p, q) = (Event::new(1, 1), Event::new(7, 1));
        let r = ell_p(&dag, &DiscreteMeasure::dirac(p), &DiscreteMeasure::dirac(q), 0.5).unwrap();
        assert!((r.value - 0.6).abs() < 1e-12);
        let none = ell_p(&dag, &DiscreteMeasure::dirac(q), &DiscreteMeasure::dirac(p), 0.5).unwrap();
        assert_eq!(none.value, 0.0);
        assert!(!none.feasible);
        // two atoms at one node: monotone pairing beats the crossed one
        let mu = DiscreteMeasure::uniform(vec![Event::new(0, 1), Event::new(2, 1)]).unwrap();
        let nu = DiscreteMeasure::uniform(vec![Event::new(5, 1), Event::new(9, 1)]).unwrap();
        let r = ell_p(&dag, &mu, &nu, 0.5).unwrap();
        assert_eq!(r.method, EllPMethod::Vertical);
        let tau = TauMatrix::build(&dag, &[Event::new(0, 1), Event::new(2, 1)], &[Event::new(5, 1), Event::new(9, 1)]).unwrap();
        let (brute, _) = ell_p_exhaustive(&tau, &[0.5, 0.5], &[0.5, 0.5], 0.5).unwrap().unwrap();
        assert!((r.value - brute.powf(2.0)).abs() < 1e-12);
        let crossed = 0.5 * (0.9f64.sqrt() + 0.3f64.sqrt());
        assert!(r.value.sqrt() > crossed);
        let perm = ell_p_permutation(&tau, 2, 0.5).unwrap();
        assert!((perm.0 - brute).abs() < 1e-15);
    }

    #[test]
    fn exhaustive_handles_unequal_weights() {
        let (dag, _) = vertical_dag();
        let src = [Event::new(0, 1), Event::new(3, 1)];
        let dst = [Event::new(4, 1), Event::new(6, 1), Event::new(9, 1)];
        let tau = TauMatrix::build(&dag, &src, &dst).unwrap();
        let (v, plan) = ell_p_exhaustive(&tau, &[0.3, 0.7], &[0.2, 0.5, 0.3], 0.5).unwrap().unwrap();
        let total: f64 = plan.iter().map(|x| x.2).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mu = DiscreteMeasure::new(vec![(src[0], 0.3), (src[1], 0.7)]).unwrap();
        let nu = DiscreteMeasure::new(vec![(dst[0], 0.2), (dst[1], 0.5), (dst[2], 0.3)]).unwrap();
        let r = ell_p(&dag, &mu, &nu, 0.5).unwrap();
        assert!((r.value - v.powf(2.0)).abs() < 1e-12);
    }
}
