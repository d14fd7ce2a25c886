//! Time-varying conformal metric families `d_s = d_{ρ(s,·)}`, the lapse `h`,
//! generalized metric speed and an empirical log-Lipschitz verifier.

use std::fmt;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::base_space::{BaseSpace, NodeId, SpacePath};
use crate::error::{GeomError, Result};
use crate::tol;

pub type FieldFn = Arc<dyn Fn(f64, NodeId) -> f64 + Send + Sync>;

/// Named analytic forms for ρ, h and densities as they appear in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum FieldSpec {
    /// `value`
    Constant { value: f64 },
    /// `exp(a s) * w(x)`
    ExpLinear {
        a: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// `a + b s w(x)`
    AffineWeighted {
        a: f64,
        b: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    /// `(a + b s)^power`
    PowerAffine { a: f64, b: f64, power: f64 },
    /// `exp(sqrt|s| w(x))`, Hölder but not Lipschitz at `s = 0`
    HolderSqrt { weights: Vec<f64> },
    /// `exp(a s^2)`
    ExpQuadratic { a: f64 },
    /// `base^depth(x)` with hop depth from `root`
    DepthPower {
        base: f64,
        #[serde(default)]
        root: NodeId,
    },
    /// Table over `times x nodes`, linear in time, clamped outside the table.
    Grid { times: Vec<f64>, values: Vec<Vec<f64>> },
}

/// Positive function of `(time, node)`.
#[derive(Clone)]
pub struct Field {
    f: FieldFn,
    /// Continuity in time; enables RK4 in the ODE engine.
    pub continuous_in_time: bool,
    pub label: String,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field").field("label", &self.label).field("continuous_in_time", &self.continuous_in_time).finish()
    }
}

fn node_weights(weights: &Option<Vec<f64>>, n: usize) -> Result<Arc<Vec<f64>>> {
    match weights {
        None => Ok(Arc::new(vec![1.0; n])),
        Some(w) if w.len() == n => Ok(Arc::new(w.clone())),
        Some(w) => Err(GeomError::Domain(format!("{} weights for {} nodes", w.len(), n))),
    }
}

impl Field {
    pub fn new(label: impl Into<String>, continuous_in_time: bool, f: impl Fn(f64, NodeId) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), continuous_in_time, label: label.into() }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant {c}"), true, move |_, _| c)
    }

    #[inline]
    pub fn eval(&self, s: f64, x: NodeId) -> f64 {
        (self.f)(s, x)
    }

    pub fn from_spec(spec: &FieldSpec, base: &BaseSpace) -> Result<Self> {
        let n = base.len();
        Ok(match spec {
            FieldSpec::Constant { value } => Self::constant(*value),
            FieldSpec::ExpLinear { a, weights } => {
                let (a, w) = (*a, node_weights(weights, n)?);
                Self::new("exp_linear", true, move |s, x| (a * s).exp() * w[x])
            }
            FieldSpec::AffineWeighted { a, b, weights } => {
                let (a, b, w) = (*a, *b, node_weights(weights, n)?);
                Self::new("affine_weighted", true, move |s, x| a + b * s * w[x])
            }
            FieldSpec::PowerAffine { a, b, power } => {
                let (a, b, p) = (*a, *b, *power);
                Self::new("power_affine", true, move |s, _| (a + b * s).powf(p))
            }
            FieldSpec::HolderSqrt { weights } => {
                let w = node_weights(&Some(weights.clone()), n)?;
                Self::new("holder_sqrt", true, move |s, x| (s.abs().sqrt() * w[x]).exp())
            }
            FieldSpec::ExpQuadratic { a } => {
                let a = *a;
                Self::new("exp_quadratic", true, move |s, _| (a * s * s).exp())
            }
            FieldSpec::DepthPower { base: b, root } => {
                if *root >= n {
                    return Err(GeomError::UnknownNode(*root));
                }
                let depth = Arc::new(base.hop_depths(*root));
                let b = *b;
                Self::new("depth_power", true, move |_, x| b.powi(depth[x] as i32))
            }
            FieldSpec::Grid { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(GeomError::Domain("grid needs one row of values per time".into()));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(GeomError::Domain("grid times must increase strictly".into()));
                }
                if values.iter().any(|r| r.len() != n) {
                    return Err(GeomError::Domain(format!("grid rows must have {n} entries")));
                }
                let (t, v) = (Arc::new(times.clone()), Arc::new(values.clone()));
                Self::new("grid", true, move |s, x| {
                    let m = t.len();
                    if s <= t[0] {
                        return v[0][x];
                    }
                    if s >= t[m - 1] {
                        return v[m - 1][x];
                    }
                    let k = t.partition_point(|&ti| ti <= s) - 1;
                    let lam = (s - t[k]) / (t[k + 1] - t[k]);
                    (1.0 - lam) * v[k][x] + lam * v[k + 1][x]
                })
            }
        })
    }
}

/// Declared regularity constants on the whole interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeclaredRegularity {
    pub log_rho_lipschitz: Option<f64>,
    pub lapse_lipschitz: Option<f64>,
}

/// Scenario form of a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub interval: (f64, f64),
    pub rho: FieldSpec,
    #[serde(default = "unit_lapse")]
    pub lapse: FieldSpec,
    #[serde(default)]
    pub declared: DeclaredRegularity,
}

fn unit_lapse() -> FieldSpec {
    FieldSpec::Constant { value: 1.0 }
}

/// Any family of metrics indexed by time. Used by the regularity verifier.
pub trait DistanceFamily {
    fn interval(&self) -> (f64, f64);
    fn distance(&self, s: f64, x: NodeId, y: NodeId) -> Result<f64>;
    fn space(&self) -> &BaseSpace;
    fn lapse_value(&self, _s: f64, _x: NodeId) -> Option<f64> {
        None
    }
}

/// Conformal family `d_s = d_{ρ(s,·)}` with lapse `h`.
#[derive(Clone, Debug)]
pub struct ConformalFamily {
    pub base: BaseSpace,
    pub interval: (f64, f64),
    pub rho: Field,
    pub lapse: Field,
    pub declared: DeclaredRegularity,
}

const POSITIVITY_SAMPLES: usize = 33;

impl ConformalFamily {
    pub fn new(base: BaseSpace, interval: (f64, f64), rho: Field, lapse: Field) -> Result<Self> {
        let (a, b) = interval;
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(GeomError::Domain(format!("interval [{a}, {b}] is empty")));
        }
        let fam = Self { base, interval, rho, lapse, declared: DeclaredRegularity::default() };
        for i in 0..POSITIVITY_SAMPLES {
            let s = a + (b - a) * i as f64 / (POSITIVITY_SAMPLES - 1) as f64;
            for x in 0..fam.base.len() {
                let (r, h) = (fam.rho.eval(s, x), fam.lapse.eval(s, x));
                if !(r > 0.0 && r.is_finite()) {
                    return Err(GeomError::Domain(format!("rho({s}, {x}) = {r} is not positive")));
                }
                if !(h > 0.0 && h.is_finite()) {
                    return Err(GeomError::Domain(format!("lapse({s}, {x}) = {h} is not positive")));
                }
            }
        }
        Ok(fam)
    }

    pub fn from_spec(base: BaseSpace, spec: &FamilySpec) -> Result<Self> {
        let rho = Field::from_spec(&spec.rho, &base)?;
        let lapse = Field::from_spec(&spec.lapse, &base)?;
        let mut fam = Self::new(base, spec.interval, rho, lapse)?;
        fam.declared = spec.declared;
        Ok(fam)
    }

    /// `ρ = h = 1`.
    pub fn flat(base: BaseSpace, interval: (f64, f64)) -> Result<Self> {
        Self::new(base, interval, Field::constant(1.0), Field::constant(1.0))
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.interval.0 && s <= self.interval.1
    }

    pub fn check_time(&self, s: f64) -> Result<()> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(GeomError::Domain(format!("time {s} outside [{}, {}]", self.interval.0, self.interval.1)))
        }
    }

    pub fn continuous_in_time(&self) -> bool {
        self.rho.continuous_in_time && self.lapse.continuous_in_time
    }

    pub fn weights_at(&self, s: f64) -> Result<Vec<f64>> {
        self.check_time(s)?;
        Ok((0..self.base.len()).map(|x| self.rho.eval(s, x)).collect())
    }

    /// `d_s(x, y)`.
    pub fn distance_at(&self, s: f64, x: NodeId, y: NodeId) -> Result<f64> {
        let w = self.weights_at(s)?;
        self.base.conformal_distance(&w, x, y)
    }

    pub fn distances_from_at(&self, s: f64, x: NodeId) -> Result<Vec<f64>> {
        let w = self.weights_at(s)?;
        self.base.conformal_distances_from(&w, x)
    }

    #[inline]
    pub fn lapse_at(&self, s: f64, x: NodeId) -> f64 {
        self.lapse.eval(s, x)
    }

    /// Lapse of a step between `x` and `y` at time `s`: the mean of the endpoint values.
    #[inline]
    pub fn step_lapse(&self, s: f64, x: NodeId, y: NodeId) -> f64 {
        if x == y {
            self.lapse.eval(s, x)
        } else {
            0.5 * (self.lapse.eval(s, x) + self.lapse.eval(s, y))
        }
    }
}

impl DistanceFamily for ConformalFamily {
    fn interval(&self) -> (f64, f64) {
        self.interval
    }
    fn distance(&self, s: f64, x: NodeId, y: NodeId) -> Result<f64> {
        self.distance_at(s, x, y)
    }
    fn space(&self) -> &BaseSpace {
        &self.base
    }
    fn lapse_value(&self, s: f64, x: NodeId) -> Option<f64> {
        Some(self.lapse_at(s, x))
    }
}

/// Spatial path with parameter breakpoints `t_0 < ... < t_m`, one per node.
/// Segment `k` moves at constant base speed from `nodes[k]` to `nodes[k+1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamPath {
    pub path: SpacePath,
    pub breakpoints: Vec<f64>,
}

/// Speed sample; `one_sided` is set at breakpoints, where the right-hand value
/// (left-hand at the final breakpoint) is returned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpeedSample {
    pub value: f64,
    pub one_sided: bool,
}

impl ParamPath {
    pub fn new(space: &BaseSpace, nodes: Vec<NodeId>, breakpoints: Vec<f64>) -> Result<Self> {
        if nodes.len() != breakpoints.len() || nodes.len() < 2 {
            return Err(GeomError::InvalidPath("need one breakpoint per node and at least two".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GeomError::InvalidPath("breakpoints must increase strictly".into()));
        }
        let speeds = nodes
            .windows(2)
            .zip(breakpoints.windows(2))
            .map(|(n, t)| space.edge_length(n[0], n[1]).unwrap_or(0.0) / (t[1] - t[0]))
            .collect();
        let path = SpacePath::with_speeds(nodes, speeds);
        path.validate(space)?;
        Ok(Self { path, breakpoints })
    }

    /// Constant curve at `x` over `[t0, t1]`.
    pub fn constant(space: &BaseSpace, x: NodeId, t0: f64, t1: f64) -> Result<Self> {
        Self::new(space, vec![x, x], vec![t0, t1])
    }

    pub fn speeds(&self) -> &[f64] {
        self.path.speeds.as_deref().unwrap_or(&[])
    }

    /// `β ∘ φ` for `φ(t) = a t + b`, `a > 0`.
    pub fn reparametrize_affine(&self, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(GeomError::Domain("affine reparametrization must preserve orientation".into()));
        }
        let breakpoints = self.breakpoints.iter().map(|t| (t - b) / a).collect();
        let speeds = self.speeds().iter().map(|v| v * a).collect();
        Ok(Self { path: SpacePath::with_speeds(self.path.nodes.clone(), speeds), breakpoints })
    }

    fn locate(&self, t: f64) -> Result<(usize, f64, bool)> {
        let bp = &self.breakpoints;
        let m = bp.len() - 1;
        if t < bp[0] || t > bp[m] {
            return Err(GeomError::Domain(format!("parameter {t} outside [{}, {}]", bp[0], bp[m])));
        }
        if t == bp[m] {
            return Ok((m - 1, 1.0, true));
        }
        let k = bp.partition_point(|&b| b <= t) - 1;
        let lam = (t - bp[k]) / (bp[k + 1] - bp[k]);
        Ok((k, lam, t == bp[k] && k > 0))
    }
}

/// `v_β(s, t) = ρ(s, β_t) |β'_t|`, with ρ interpolated linearly along an edge.
pub fn generalized_speed(fam: &ConformalFamily, beta: &ParamPath, s: f64, t: f64) -> Result<SpeedSample> {
    fam.check_time(s)?;
    let (k, lam, one_sided) = beta.locate(t)?;
    let (x, y) = (beta.path.nodes[k], beta.path.nodes[k + 1]);
    let speed = beta.speeds()[k];
    let rho = (1.0 - lam) * fam.rho.eval(s, x) + lam * fam.rho.eval(s, y);
    Ok(SpeedSample { value: rho * speed, one_sided })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// Result of [`verify_regularity`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularityReport {
    pub window: (f64, f64),
    pub gating_radius: f64,
    pub admissible_pairs: usize,
    pub sampled_pairs: usize,
    /// `(Δs, ω(Δs))`, the sampled modulus of `|log(d_s/d_{s'})|`.
    pub modulus: Vec<(f64, f64)>,
    pub fitted_constant: f64,
    /// `None` when the sampled modulus vanishes identically.
    pub fitted_exponent: Option<f64>,
    pub verdict: Verdict,
    pub lapse_lipschitz: Option<f64>,
    pub note: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularityOptions {
    /// Number of time intervals sampled across the window.
    pub grid_intervals: usize,
    /// Gating radius; half the K-diameter when `None`.
    pub radius: Option<f64>,
    pub max_pairs: usize,
    pub exponent_tol: f64,
}

impl Default for RegularityOptions {
    fn default() -> Self {
        Self { grid_intervals: 2048, radius: None, max_pairs: 64, exponent_tol: tol::EXPONENT_TOL }
    }
}

/// Integer lags used as gap scales, roughly geometric from 1 to `n / 2`.
fn gap_lags(n: usize) -> Vec<usize> {
    let mut lags = vec![];
    let mut k = 1usize;
    while k <= n / 2 {
        lags.push(k);
        k = (k + 1).max((k as f64 * 1.35).round() as usize);
    }
    lags
}

/// Least-squares fit of `log y = log c + g log x`; returns `(c, g)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let g = sxy / sxx;
    Some(((my - g * mx).exp(), g))
}

/// Tabulates `|log(d_s/d_{s'})|` over node pairs of `k` whose infimal distance over
/// the window is below the gating radius, and fits `C |s - s'|^γ`.
pub fn verify_regularity<F: DistanceFamily>(
    fam: &F,
    window: (f64, f64),
    k: &[NodeId],
    seed: u64,
    opts: RegularityOptions,
) -> Result<RegularityReport> {
    let (i0, i1) = fam.interval();
    let (a, b) = window;
    if !(a >= i0 && b <= i1 && b > a) {
        return Err(GeomError::Domain(format!("window [{a}, {b}] not inside [{i0}, {i1}]")));
    }
    if k.is_empty() {
        return Err(GeomError::Domain("node set K is empty".into()));
    }
    let mut nodes = k.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    for &x in &nodes {
        if x >= fam.space().len() {
            return Err(GeomError::UnknownNode(x));
        }
    }
    let n = opts.grid_intervals.max(2);
    let times: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();

    let coarse: Vec<f64> = (0..=32).map(|i| a + (b - a) * i as f64 / 32.0).collect();
    let mut pairs = Vec::new();
    for (i, &x) in nodes.iter().enumerate() {
        for &y in &nodes[i + 1..] {
            let mut inf = f64::INFINITY;
            for &s in &coarse {
                inf = inf.min(fam.distance(s, x, y)?);
            }
            pairs.push((x, y, inf));
        }
    }
    let diameter = pairs.iter().map(|p| p.2).fold(0.0, f64::max);
    let radius = opts.radius.unwrap_or(0.5 * diameter);
    let admissible: Vec<(NodeId, NodeId)> = pairs.iter().filter(|p| p.2 < radius).map(|p| (p.0, p.1)).collect();

    let lapse_lipschitz = {
        let mut best: Option<f64> = None;
        for &x in &nodes {
            for w in times.windows(2) {
                if let (Some(h0), Some(h1)) = (fam.lapse_value(w[0], x), fam.lapse_value(w[1], x)) {
                    let q = (h1 - h0).abs() / (w[1] - w[0]);
                    best = Some(best.map_or(q, |b: f64| b.max(q)));
                }
            }
        }
        best
    };

    let lags = gap_lags(n);
    let inconclusive = |note: String, sampled: usize| RegularityReport {
        window,
        gating_radius: radius,
        admissible_pairs: admissible.len(),
        sampled_pairs: sampled,
        modulus: vec![],
        fitted_constant: f64::NAN,
        fitted_exponent: None,
        verdict: Verdict::Inconclusive,
        lapse_lipschitz,
        note,
    };
    if admissible.len() < tol::MIN_ADMISSIBLE_PAIRS {
        return Ok(inconclusive(
            format!("{} admissible pairs, at least {} required", admissible.len(), tol::MIN_ADMISSIBLE_PAIRS),
            0,
        ));
    }
    if lags.len() < tol::MIN_GAP_SCALES {
        return Ok(inconclusive(format!("{} gap scales, at least {} required", lags.len(), tol::MIN_GAP_SCALES), 0));
    }

    let chosen: Vec<(NodeId, NodeId)> = if admissible.len() > opts.max_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, admissible.len(), opts.max_pairs).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| admissible[i]).collect()
    } else {
        admissible.clone()
    };

    let mut modulus = vec![0.0f64; lags.len()];
    for &(x, y) in &chosen {
        let logs = times.iter().map(|&s| fam.distance(s, x, y).map(f64::ln)).collect::<Result<Vec<_>>>()?;
        for (j, &lag) in lags.iter().enumerate() {
            for i in 0..=(n - lag) {
                modulus[j] = modulus[j].max((logs[i + lag] - logs[i]).abs());
            }
        }
    }
    let step = (b - a) / n as f64;
    let table: Vec<(f64, f64)> = lags.iter().zip(&modulus).map(|(&l, &w)| (l as f64 * step, w)).collect();
    let scale = modulus.iter().cloned().fold(0.0, f64::max);
    if scale <= 1e-14 {
        return Ok(RegularityReport {
            window,
            gating_radius: radius,
            admissible_pairs: admissible.len(),
            sampled_pairs: chosen.len(),
            modulus: table,
            fitted_constant: 0.0,
            fitted_exponent: None,
            verdict: Verdict::Pass,
            lapse_lipschitz,
            note: "log-ratio vanishes on the sampled window".into(),
        });
    }
    let Some((c, g)) = fit_power_law(&table) else {
        return Ok(inconclusive("too few positive modulus samples to fit".into(), chosen.len()));
    };
    let verdict = if g >= 1.0 - opts.exponent_tol { Verdict::Pass } else { Verdict::Fail };
    Ok(RegularityReport {
        window,
        gating_radius: radius,
        admissible_pairs: admissible.len(),
        sampled_pairs: chosen.len(),
        modulus: table,
        fitted_constant: c,
        fitted_exponent: Some(g),
        verdict,
        lapse_lipschitz,
        note: format!("fit over {} gap scales", lags.len()),
    })
}
