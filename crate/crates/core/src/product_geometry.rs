//! The product `hI ×_F X` on a time grid: events, sampled curves, the product
//! metric length, its lapse-weighted variant and the properness diagnostic.
//!
//! Every per-step quantity is evaluated at the midpoint time of the step with
//! lapse `h̄ = (h(s̄, x_k) + h(s̄, x_{k+1})) / 2` and spatial increment
//! `Δd = d_{s̄}(x_k, x_{k+1})`.

use serde::{Deserialize, Serialize};

use crate::base_space::NodeId;
use crate::error::{GeomError, Result};
use crate::metric_family::{fit_power_law, ConformalFamily};

/// Family plus a time grid and hop radius.
#[derive(Clone, Debug)]
pub struct ProductSpacetime {
    pub family: ConformalFamily,
    pub grid: Vec<f64>,
    pub hop_radius: usize,
}

impl ProductSpacetime {
    pub fn new(family: ConformalFamily, grid: Vec<f64>, hop_radius: usize) -> Result<Self> {
        if grid.len() < 2 {
            return Err(GeomError::Domain("time grid needs at least two samples".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(GeomError::Domain("time grid must increase strictly".into()));
        }
        if !family.contains(grid[0]) || !family.contains(grid[grid.len() - 1]) {
            return Err(GeomError::Domain("time grid leaves the interval".into()));
        }
        if hop_radius == 0 {
            return Err(GeomError::Domain("hop radius must be at least 1".into()));
        }
        Ok(Self { family, grid, hop_radius })
    }

    /// `steps + 1` equally spaced samples spanning the family interval.
    pub fn uniform(family: ConformalFamily, steps: usize, hop_radius: usize) -> Result<Self> {
        let (a, b) = family.interval;
        let grid = uniform_grid(a, b, steps);
        Self::new(family, grid, hop_radius)
    }

    pub fn layers(&self) -> usize {
        self.grid.len()
    }

    pub fn nodes(&self) -> usize {
        self.family.base.len()
    }

    pub fn time(&self, e: Event) -> f64 {
        self.grid[e.layer]
    }

    pub fn check_event(&self, e: Event) -> Result<()> {
        if e.layer >= self.layers() {
            return Err(GeomError::Domain(format!("layer {} beyond grid of {}", e.layer, self.layers())));
        }
        if e.node >= self.nodes() {
            return Err(GeomError::UnknownNode(e.node));
        }
        Ok(())
    }

    /// Nearest grid layer to time `s`.
    pub fn layer_of(&self, s: f64) -> usize {
        let k = self.grid.partition_point(|&g| g < s);
        if k == 0 {
            0
        } else if k == self.grid.len() || (s - self.grid[k - 1]) <= (self.grid[k] - s) {
            (k - 1).min(self.grid.len() - 1)
        } else {
            k
        }
    }
}

/// `n + 1` points from `a` to `b`, endpoints exact.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 }).collect()
}

/// Grid event: time layer and node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub layer: usize,
    pub node: NodeId,
}

impl Event {
    pub fn new(layer: usize, node: NodeId) -> Self {
        Self { layer, node }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub t: f64,
    pub s: f64,
    pub x: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Future,
    Past,
    Neither,
}

/// Sampled curve `γ = (α, β)`; consecutive nodes are joined by a conformal geodesic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductCurve {
    pub samples: Vec<CurveSample>,
}

impl ProductCurve {
    pub fn new(samples: Vec<CurveSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(GeomError::InvalidCurve("no samples".into()));
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(GeomError::InvalidCurve("parameter must increase strictly".into()));
        }
        if samples.iter().any(|c| !c.s.is_finite() || !c.t.is_finite()) {
            return Err(GeomError::InvalidCurve("non-finite sample".into()));
        }
        Ok(Self { samples })
    }

    /// Curve through grid events, parametrized by time.
    pub fn from_events(st: &ProductSpacetime, events: &[Event]) -> Result<Self> {
        Self::new(events.iter().map(|e| CurveSample { t: st.time(*e), s: st.time(*e), x: e.node }).collect())
    }

    /// Curve from `(s, x)` pairs, parameter equal to the sample index.
    pub fn from_points(points: &[(f64, NodeId)]) -> Result<Self> {
        Self::new(points.iter().enumerate().map(|(i, &(s, x))| CurveSample { t: i as f64, s, x }).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> CurveSample {
        self.samples[0]
    }

    pub fn last(&self) -> CurveSample {
        self.samples[self.samples.len() - 1]
    }

    pub fn orientation(&self) -> Orientation {
        let up = self.samples.windows(2).all(|w| w[1].s > w[0].s);
        let down = self.samples.windows(2).all(|w| w[1].s < w[0].s);
        match (up, down) {
            (true, false) => Orientation::Future,
            (false, true) => Orientation::Past,
            _ => Orientation::Neither,
        }
    }

    pub fn time_extent(&self) -> f64 {
        (self.last().s - self.first().s).abs()
    }

    /// `self` followed by `other`; the junction sample must coincide.
    pub fn concat(&self, other: &ProductCurve) -> Result<ProductCurve> {
        let (end, start) = (self.last(), other.first());
        if end.x != start.x || end.s != start.s {
            return Err(GeomError::InvalidCurve("curves do not meet".into()));
        }
        let shift = end.t - start.t;
        let mut samples = self.samples.clone();
        samples.extend(other.samples[1..].iter().map(|c| CurveSample { t: c.t + shift, ..*c }));
        ProductCurve::new(samples)
    }
}

/// Midpoint data of one curve step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepTerm {
    pub s_mid: f64,
    pub ds: f64,
    pub dt: f64,
    pub dd: f64,
    pub lapse: f64,
    /// `(h̄ Δs)² − Δd²`
    pub margin: f64,
}

impl StepTerm {
    pub fn lapse_ds(&self) -> f64 {
        self.lapse * self.ds.abs()
    }

    /// Margin relative to `(h̄ Δs)²`; `-inf` for a purely spatial step.
    pub fn relative_margin(&self) -> f64 {
        let hs2 = self.lapse_ds().powi(2);
        if hs2 == 0.0 {
            if self.dd == 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            self.margin / hs2
        }
    }
}

/// Step data for one pair of consecutive samples.
pub fn step_term(fam: &ConformalFamily, a: CurveSample, b: CurveSample) -> Result<StepTerm> {
    let s_mid = 0.5 * (a.s + b.s);
    let dd = if a.x == b.x { 0.0 } else { fam.distance_at(s_mid, a.x, b.x)? };
    if !fam.contains(a.s) || !fam.contains(b.s) {
        return Err(GeomError::Domain(format!("curve leaves the interval at s = {}", if fam.contains(a.s) { b.s } else { a.s })));
    }
    let lapse = fam.step_lapse(s_mid, a.x, b.x);
    let ds = b.s - a.s;
    let hs = lapse * ds.abs();
    Ok(StepTerm { s_mid, ds, dt: b.t - a.t, dd, lapse, margin: hs * hs - dd * dd })
}

pub fn step_terms(st: &ProductSpacetime, gamma: &ProductCurve) -> Result<Vec<StepTerm>> {
    gamma.samples.windows(2).map(|w| step_term(&st.family, w[0], w[1])).collect()
}

/// `Σ sqrt(h̄²Δs² + Δd²)`.
pub fn product_length(st: &ProductSpacetime, gamma: &ProductCurve) -> Result<f64> {
    Ok(step_terms(st, gamma)?.iter().map(|t| t.lapse_ds().hypot(t.dd)).sum())
}

/// `Σ sqrt(h̄²Δs² + Δd²) / h̄`.
pub fn weighted_length(st: &ProductSpacetime, gamma: &ProductCurve) -> Result<f64> {
    Ok(step_terms(st, gamma)?.iter().map(|t| t.lapse_ds().hypot(t.dd) / t.lapse).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DivergenceVerdict {
    Divergent { rate: String, exponent: f64 },
    Bounded { bound: f64 },
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceReport {
    /// `(n, S_n)` with `S_n = Σ_{k<n} Δd_k / h̄_k`.
    pub partial_sums: Vec<(usize, f64)>,
    pub verdict: DivergenceVerdict,
    pub note: String,
}

const RAY_NOTE: &str = "only the declared ray is checked; escaping curves are not quantified exhaustively";

/// Partial sums of `∫ v_β / h` along an escaping ray with an extrapolated verdict.
pub fn properness_diagnostic(st: &ProductSpacetime, ray: &ProductCurve) -> Result<DivergenceReport> {
    let mut seen = vec![false; st.nodes()];
    for c in &ray.samples {
        if c.x >= st.nodes() {
            return Err(GeomError::UnknownNode(c.x));
        }
        if seen[c.x] {
            return Err(GeomError::InvalidRay(format!("node {} revisited", c.x)));
        }
        seen[c.x] = true;
    }
    let terms = step_terms(st, ray)?;
    let mut partial_sums = vec![(0usize, 0.0)];
    let mut acc = 0.0;
    let mut inc = Vec::with_capacity(terms.len());
    for (k, t) in terms.iter().enumerate() {
        let a = t.dd / t.lapse;
        acc += a;
        inc.push(a);
        partial_sums.push((k + 1, acc));
    }
    let verdict = extrapolate(&inc, acc);
    Ok(DivergenceReport { partial_sums, verdict, note: RAY_NOTE.into() })
}

fn extrapolate(inc: &[f64], total: f64) -> DivergenceVerdict {
    let n = inc.len();
    if n < 8 {
        return DivergenceVerdict::Undetermined;
    }
    let tail = &inc[n / 2..];
    if tail.iter().all(|&a| a == 0.0) {
        return DivergenceVerdict::Bounded { bound: total };
    }
    if tail.iter().any(|&a| a <= 0.0) {
        return DivergenceVerdict::Undetermined;
    }
    let logs: f64 = tail.windows(2).map(|w| (w[1] / w[0]).ln()).sum::<f64>() / (tail.len() - 1) as f64;
    let ratio = logs.exp();
    let last = inc[n - 1];
    if ratio < 0.9 {
        return DivergenceVerdict::Bounded { bound: total + last * ratio / (1.0 - ratio) };
    }
    let pts: Vec<(f64, f64)> = tail.iter().enumerate().map(|(i, &a)| ((n / 2 + i + 1) as f64, a)).collect();
    let q = fit_power_law(&pts).map(|(_, g)| -g).unwrap_or(0.0);
    if q > 1.2 {
        DivergenceVerdict::Bounded { bound: total + last * n as f64 / (q - 1.0) }
    } else if q.abs() < 0.05 {
        DivergenceVerdict::Divergent { rate: "n".into(), exponent: 1.0 }
    } else if q < 0.95 {
        DivergenceVerdict::Divergent { rate: format!("n^{:.3}", 1.0 - q), exponent: 1.0 - q }
    } else {
        DivergenceVerdict::Divergent { rate: "log n".into(), exponent: 0.0 }
    }
}
