//! Two-dimensional reduction `Q = α(J) × [a, b]` with `g_Q = −F ds² + G dλ²`,
//! used to cross-check product lengths and to audit maximizers for null steps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::causal_core::{classify_step, maximizer, tau_table, CausalDAG, StepClass};
use crate::error::{GeomError, Result};
use crate::product_geometry::{step_terms, Event, ProductCurve, ProductSpacetime};
use crate::tol;

/// `F`, `G` sampled on `s_grid × lambda_grid`, bilinear in between.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridLorentzMetric {
    pub s_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    /// `f[i][j] = F(s_i, λ_j)`
    pub f: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    /// Sampled Lipschitz constants `(F, G)` over grid neighbours.
    pub lipschitz: (f64, f64),
}

fn bracket(grid: &[f64], v: f64) -> (usize, f64) {
    let n = grid.len();
    if n == 1 {
        return (0, 0.0);
    }
    let k = grid.partition_point(|&x| x <= v).clamp(1, n - 1) - 1;
    let lam = ((v - grid[k]) / (grid[k + 1] - grid[k])).clamp(0.0, 1.0);
    (k, lam)
}

fn sampled_lipschitz(s: &[f64], l: &[f64], v: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..s.len() {
        for j in 0..l.len() {
            if i + 1 < s.len() {
                worst = worst.max(((v[i + 1][j] - v[i][j]) / (s[i + 1] - s[i])).abs());
            }
            if j + 1 < l.len() {
                worst = worst.max(((v[i][j + 1] - v[i][j]) / (l[j + 1] - l[j])).abs());
            }
        }
    }
    worst
}

impl GridLorentzMetric {
    pub fn new(s_grid: Vec<f64>, lambda_grid: Vec<f64>, f: Vec<Vec<f64>>, g: Vec<Vec<f64>>) -> Result<Self> {
        let ok_grid = |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[1] > w[0]);
        if !ok_grid(&s_grid) || !ok_grid(&lambda_grid) {
            return Err(GeomError::Domain("grids must be nonempty and strictly increasing".into()));
        }
        let shape_ok = |v: &Vec<Vec<f64>>| v.len() == s_grid.len() && v.iter().all(|r| r.len() == lambda_grid.len());
        if !shape_ok(&f) || !shape_ok(&g) {
            return Err(GeomError::Domain("F and G must match the grid shape".into()));
        }
        if f.iter().flatten().any(|&x| !(x > 0.0)) || g.iter().flatten().any(|&x| !(x >= 0.0)) {
            return Err(GeomError::Domain("F must be positive and G nonnegative".into()));
        }
        let lipschitz = (sampled_lipschitz(&s_grid, &lambda_grid, &f), sampled_lipschitz(&s_grid, &lambda_grid, &g));
        Ok(Self { s_grid, lambda_grid, f, g, lipschitz })
    }

    /// Constant `F`, `G` on a rectangle.
    pub fn constant(s: (f64, f64), lambda: (f64, f64), f: f64, g: f64) -> Result<Self> {
        Self::new(vec![s.0, s.1], vec![lambda.0, lambda.1], vec![vec![f; 2]; 2], vec![vec![g; 2]; 2])
    }

    fn interp(&self, v: &[Vec<f64>], s: f64, l: f64) -> f64 {
        let (i, a) = bracket(&self.s_grid, s);
        let (j, b) = bracket(&self.lambda_grid, l);
        let at = |i: usize, j: usize| v[i.min(self.s_grid.len() - 1)][j.min(self.lambda_grid.len() - 1)];
        (1.0 - a) * ((1.0 - b) * at(i, j) + b * at(i, j + 1)) + a * ((1.0 - b) * at(i + 1, j) + b * at(i + 1, j + 1))
    }

    pub fn f_at(&self, s: f64, l: f64) -> f64 {
        self.interp(&self.f, s, l)
    }

    pub fn g_at(&self, s: f64, l: f64) -> f64 {
        self.interp(&self.g, s, l)
    }
}

/// `Σ sqrt(F Δs² − G Δλ²)` with `F, G` at step midpoints.
pub fn gq_length(metric: &GridLorentzMetric, y: &[(f64, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for (k, w) in y.windows(2).enumerate() {
        let (ds, dl) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
        let (sm, lm) = (0.5 * (w[0].0 + w[1].0), 0.5 * (w[0].1 + w[1].1));
        let a = metric.f_at(sm, lm) * ds * ds;
        let margin = a - metric.g_at(sm, lm) * dl * dl;
        if margin < -tol::CAUSAL_RTOL * a {
            return Err(GeomError::NonCausal { step: k, margin });
        }
        total += margin.max(0.0).sqrt();
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QReduction {
    pub metric: GridLorentzMetric,
    pub base_speed: f64,
    /// Graph curve `x(λ) = (α_λ, λ)`.
    pub graph: Vec<(f64, f64)>,
    pub gq_length: f64,
    pub lorentz_length: f64,
    pub residual: f64,
}

/// Builds `Q` over the product's time grid and the curve's parameter grid (with step midpoints),
/// `F = h²`, `G = c² ρ²` with `ρ` linear along each edge.
pub fn q_reduce(st: &ProductSpacetime, gamma: &ProductCurve) -> Result<QReduction> {
    let fam = &st.family;
    step_terms(st, gamma)?;
    if gamma.len() < 2 {
        return Err(GeomError::InvalidCurve("need at least two samples".into()));
    }
    let samples = &gamma.samples;
    let mut speeds = Vec::with_capacity(samples.len() - 1);
    for w in samples.windows(2) {
        let len = if w[0].x == w[1].x { 0.0 } else { fam.base.shortest_distance(w[0].x, w[1].x)? };
        speeds.push(len / (w[1].t - w[0].t));
    }
    let c = speeds[0];
    if speeds.iter().any(|&v| (v - c).abs() > 1e-9 * c.max(1.0)) {
        return Err(GeomError::ReparametrizeFirst);
    }
    let lorentz = crate::causal_core::lorentz_length(st, gamma)?;
    let mut lambda = Vec::with_capacity(2 * samples.len() - 1);
    let mut ends = Vec::with_capacity(2 * samples.len() - 1);
    for (k, smp) in samples.iter().enumerate() {
        if k > 0 {
            lambda.push(0.5 * (samples[k - 1].t + smp.t));
            ends.push((samples[k - 1].x, smp.x));
        }
        lambda.push(smp.t);
        ends.push((smp.x, smp.x));
    }
    let s_grid = st.grid.clone();
    let mut f = Vec::with_capacity(s_grid.len());
    let mut g = Vec::with_capacity(s_grid.len());
    for &s in &s_grid {
        f.push(ends.iter().map(|&(x, y)| fam.step_lapse(s, x, y).powi(2)).collect());
        g.push(ends.iter().map(|&(x, y)| (c * 0.5 * (fam.rho.eval(s, x) + fam.rho.eval(s, y))).powi(2)).collect());
    }
    let metric = GridLorentzMetric::new(s_grid, lambda, f, g)?;
    let graph: Vec<(f64, f64)> = samples.iter().map(|c| (c.s, c.t)).collect();
    let gq = gq_length(&metric, &graph)?;
    Ok(QReduction { metric, base_speed: c, graph, gq_length: gq, lorentz_length: lorentz, residual: (gq - lorentz).abs() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditFinding {
    pub from: Event,
    pub to: Event,
    pub step: usize,
    pub margin: f64,
    pub class: StepClass,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub examined: usize,
    pub positive: usize,
    pub null_steps: usize,
    pub findings: Vec<AuditFinding>,
    pub clean: bool,
}

/// Steps of a maximizer that are not strictly timelike.
pub fn audit_curve(st: &ProductSpacetime, gamma: &ProductCurve) -> Result<Vec<(usize, f64, StepClass)>> {
    Ok(step_terms(st, gamma)?
        .iter()
        .enumerate()
        .filter_map(|(k, t)| {
            let class = classify_step(t);
            (class != StepClass::Timelike).then_some((k, t.margin, class))
        })
        .collect())
}

/// Audits DP maximizers of the given pairs; pairs with `τ = 0` are skipped.
pub fn regularity_audit(dag: &CausalDAG, st: &ProductSpacetime, pairs: &[(Event, Event)]) -> Result<AuditReport> {
    let mut findings = Vec::new();
    let mut positive = 0;
    for &(p, q) in pairs {
        let table = tau_table(dag, p)?;
        if !table.tau(q).is_some_and(|t| t > 0.0) {
            continue;
        }
        positive += 1;
        let gamma = maximizer(dag, st, p, q)?;
        for (step, margin, class) in audit_curve(st, &gamma)? {
            findings.push(AuditFinding { from: p, to: q, step, margin, class });
        }
    }
    let null_steps = findings.len();
    Ok(AuditReport { examined: pairs.len(), positive, null_steps, clean: findings.is_empty(), findings })
}

/// Up to `count` seeded random pairs `p ≤ q` with `τ(p, q) > 0`.
pub fn sample_positive_pairs(dag: &CausalDAG, count: usize, seed: u64) -> Result<Vec<(Event, Event)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources: Vec<Event> = (0..dag.layers.saturating_sub(1)).flat_map(|l| (0..dag.nodes).map(move |x| Event::new(l, x))).collect();
    sources.shuffle(&mut rng);
    let mut out = Vec::with_capacity(count);
    for p in sources {
        if out.len() == count {
            break;
        }
        let table = tau_table(dag, p)?;
        let mut targets: Vec<Event> = table
            .rows()
            .into_iter()
            .filter(|r| r.0 > p.layer && r.2 > 0.0)
            .map(|r| Event::new(r.0, r.1))
            .collect();
        if let Some(&q) = targets.choose(&mut rng) {
            out.push((p, q));
            targets.clear();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_space::BaseSpace;
    use crate::causal_core::build_causal_dag;
    use crate::metric_family::{ConformalFamily, FamilySpec, FieldSpec};
    use crate::product_geometry::CurveSample;

    #[test]
    fn gq_length_examples() {
        let line = GridLorentzMetric::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0], vec![vec![1.0; 2], vec![4.0; 2], vec![9.0; 2]], vec![vec![0.0; 2]; 3]).unwrap();
        let l = gq_length(&line, &[(0.0, 0.5), (1.0, 0.5), (2.0, 0.5)]).unwrap();
        assert!((l - (2.5f64.sqrt() + 6.5f64.sqrt())).abs() < 1e-15);
        let unit = GridLorentzMetric::constant((0.0, 2.0), (0.0, 2.0), 1.0, 1.0).unwrap();
        assert_eq!(gq_length(&unit, &[(0.0, 0.0), (1.0, 1.0)]).unwrap(), 0.0);
        let quarter = GridLorentzMetric::constant((0.0, 2.0), (0.0, 2.0), 1.0, 0.25).unwrap();
        assert!((gq_length(&quarter, &[(0.0, 0.0), (1.0, 1.0)]).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(matches!(gq_length(&unit, &[(0.0, 0.0), (0.5, 1.0)]), Err(GeomError::NonCausal { .. })));
    }

    fn exp_family(nodes: usize, len: f64, t1: f64) -> ConformalFamily {
        let spec = FamilySpec {
            interval: (0.0, t1),
            rho: FieldSpec::ExpLinear { a: 1.0, weights: None },
            lapse: FieldSpec::Constant { value: 1.0 },
            declared: Default::default(),
        };
        ConformalFamily::from_spec(BaseSpace::path_graph(nodes, len).unwrap(), &spec).unwrap()
    }

    #[test]
    fn q_reduce_examples() {
        let fam = ConformalFamily::flat(BaseSpace::path_graph(11, 0.05).unwrap(), (0.0, 1.0)).unwrap();
        let st = ProductSpacetime::uniform(fam, 10, 1).unwrap();
        let vertical = ProductCurve::from_events(&st, &(0..=10).map(|l| Event::new(l, 3)).collect::<Vec<_>>()).unwrap();
        let r = q_reduce(&st, &vertical).unwrap();
        assert_eq!(r.base_speed, 0.0);
        assert_eq!(r.residual, 0.0);
        let diag = ProductCurve::from_events(&st, &(0..=10).map(|l| Event::new(l, l)).collect::<Vec<_>>()).unwrap();
        let r = q_reduce(&st, &diag).unwrap();
        assert!((r.base_speed - 0.5).abs() < 1e-12);
        assert!(r.residual < 1e-10);
        let bent = ProductCurve::from_events(&st, &[Event::new(0, 0), Event::new(1, 0), Event::new(2, 1)]).unwrap();
        assert!(matches!(q_reduce(&st, &bent), Err(GeomError::ReparametrizeFirst)));
    }

    #[test]
    fn q_reduce_refinement_exp_family() {
        let mut residuals = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let ds = 1.0 / n as f64;
            let fam = exp_family(n + 1, 0.3 * ds, 1.0);
            let st = ProductSpacetime::uniform(fam, n, 1).unwrap();
            let samples: Vec<CurveSample> = (0..=n).map(|k| CurveSample { t: k as f64 * ds, s: k as f64 * ds, x: k }).collect();
            let r = q_reduce(&st, &ProductCurve::new(samples).unwrap()).unwrap();
            residuals.push(r.residual);
        }
        for w in residuals.windows(2) {
            assert!(w[1] < w[0] / 2.0, "{residuals:?}");
        }
    }

    #[test]
    fn audit_flat_and_exp() {
        let fam = ConformalFamily::flat(BaseSpace::path_graph(11, 0.05).unwrap(), (0.0, 1.0)).unwrap();
        let st = ProductSpacetime::uniform(fam, 10, 1).unwrap();
        let dag = build_causal_dag(&st).unwrap();
        let pairs = sample_positive_pairs(&dag, 20, 7).unwrap();
        assert_eq!(pairs.len(), 20);
        let r = regularity_audit(&dag, &st, &pairs).unwrap();
        assert!(r.clean && r.positive == 20);
        let st = ProductSpacetime::uniform(exp_family(21, 0.03, 1.0), 20, 1).unwrap();
        let dag = build_causal_dag(&st).unwrap();
        let pairs = sample_positive_pairs(&dag, 50, 3).unwrap();
        assert!(regularity_audit(&dag, &st, &pairs).unwrap().clean);
        assert_eq!(pairs, sample_positive_pairs(&dag, 50, 3).unwrap());
    }

    #[test]
    fn audit_reports_null_steps() {
        let fam = ConformalFamily::flat(BaseSpace::path_graph(11, 0.1).unwrap(), (0.0, 1.0)).unwrap();
        let st = ProductSpacetime::uniform(fam, 10, 1).unwrap();
        let dag = build_causal_dag(&st).unwrap();
        let r = regularity_audit(&dag, &st, &[(Event::new(0, 0), Event::new(10, 5))]).unwrap();
        assert_eq!(r.positive, 1);
        assert_eq!(r.null_steps, 5);
        assert!(!r.clean);
    }
}
