//! Causal classification, Lorentzian length, the layered causal DAG and time
//! separation by longest-path dynamic programming.
//!
//! Increments are accumulated in fixed point ([`TauUnits`], 2^-64 resolution) so
//! that path sums are associative and the reverse triangle inequality holds
//! exactly on DP values.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::base_space::NodeId;
use crate::error::{GeomError, Result};
use crate::product_geometry::{step_terms, CurveSample, Event, Orientation, ProductCurve, ProductSpacetime, StepTerm};
use crate::tol;

const UNIT_SCALE: f64 = 18_446_744_073_709_551_616.0;

/// Non-negative Lorentzian length in units of 2^-64.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TauUnits(pub u128);

impl TauUnits {
    pub const ZERO: TauUnits = TauUnits(0);

    pub fn from_f64(x: f64) -> Self {
        debug_assert!(x >= 0.0);
        TauUnits((x * UNIT_SCALE).round() as u128)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / UNIT_SCALE
    }
}

impl Add for TauUnits {
    type Output = TauUnits;
    fn add(self, rhs: TauUnits) -> TauUnits {
        TauUnits(self.0 + rhs.0)
    }
}

impl std::iter::Sum for TauUnits {
    fn sum<I: Iterator<Item = TauUnits>>(iter: I) -> TauUnits {
        iter.fold(TauUnits::ZERO, |a, b| a + b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepClass {
    Timelike,
    Null,
    NonCausal,
}

/// Sign of `h̄²Δs² − Δd²` up to [`tol::CAUSAL_RTOL`] relative to `(h̄Δs)²`.
pub fn classify_step(t: &StepTerm) -> StepClass {
    if t.ds == 0.0 {
        return if t.dd == 0.0 { StepClass::Null } else { StepClass::NonCausal };
    }
    let rel = t.relative_margin();
    if rel > tol::CAUSAL_RTOL {
        StepClass::Timelike
    } else if rel >= -tol::CAUSAL_RTOL {
        StepClass::Null
    } else {
        StepClass::NonCausal
    }
}

/// `Δτ`: `sqrt(margin)` on timelike steps, zero otherwise.
pub fn step_increment(t: &StepTerm) -> TauUnits {
    match classify_step(t) {
        StepClass::Timelike => TauUnits::from_f64(t.margin.sqrt()),
        _ => TauUnits::ZERO,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CausalKind {
    Timelike,
    Causal,
    Null,
    NonCausal,
}

/// Classification of a curve with its worst absolute margin.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CausalClass {
    pub kind: CausalKind,
    pub worst_margin: f64,
    pub worst_step: Option<usize>,
    pub orientation: Orientation,
    pub reason: Option<String>,
}

pub fn classify(st: &ProductSpacetime, gamma: &ProductCurve) -> Result<CausalClass> {
    let orientation = gamma.orientation();
    if gamma.len() < 2 {
        return Ok(CausalClass {
            kind: CausalKind::Null,
            worst_margin: 0.0,
            worst_step: None,
            orientation,
            reason: Some("single sample".into()),
        });
    }
    let terms = step_terms(st, gamma)?;
    let (worst_step, worst_margin) = terms
        .iter()
        .enumerate()
        .map(|(i, t)| (i, t.margin))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    if orientation == Orientation::Neither {
        return Ok(CausalClass {
            kind: CausalKind::NonCausal,
            worst_margin,
            worst_step: Some(worst_step),
            orientation,
            reason: Some("time component is not strictly monotone".into()),
        });
    }
    let classes: Vec<StepClass> = terms.iter().map(classify_step).collect();
    let kind = if let Some(i) = classes.iter().position(|c| *c == StepClass::NonCausal) {
        return Ok(CausalClass {
            kind: CausalKind::NonCausal,
            worst_margin,
            worst_step: Some(worst_step),
            orientation,
            reason: Some(format!("step {i} leaves the cone")),
        });
    } else if classes.iter().all(|c| *c == StepClass::Timelike) {
        CausalKind::Timelike
    } else if classes.iter().all(|c| *c == StepClass::Null) {
        CausalKind::Null
    } else {
        CausalKind::Causal
    };
    Ok(CausalClass { kind, worst_margin, worst_step: Some(worst_step), orientation, reason: None })
}

/// `τ(γ) = Σ Δτ` in fixed point.
pub fn lorentz_length_units(st: &ProductSpacetime, gamma: &ProductCurve) -> Result<TauUnits> {
    let class = classify(st, gamma)?;
    if class.kind == CausalKind::NonCausal {
        return Err(GeomError::NonCausal { step: class.worst_step.unwrap_or(0), margin: class.worst_margin });
    }
    Ok(step_terms(st, gamma)?.iter().map(step_increment).sum())
}

/// Lorentzian length of a causal curve.
pub fn lorentz_length(st: &ProductSpacetime, gamma: &ProductCurve) -> Result<f64> {
    lorentz_length_units(st, gamma).map(TauUnits::to_f64)
}

/// Admissible step `(layer, x) -> (layer + 1, to)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DagStep {
    pub to: NodeId,
    pub dd: f64,
    pub lapse: f64,
    pub lapse_ds: f64,
    pub margin: f64,
    pub dtau: TauUnits,
    pub class: StepClass,
}

/// Layered event graph of admissible steps between consecutive layers.
#[derive(Clone, Debug)]
pub struct CausalDAG {
    pub layers: usize,
    pub nodes: usize,
    pub times: Vec<f64>,
    steps: Vec<Vec<Vec<DagStep>>>,
    pub step_count: usize,
    pub candidate_count: usize,
}

impl CausalDAG {
    /// Admissible steps leaving `(layer, x)`, sorted by target node.
    pub fn steps_from(&self, layer: usize, x: NodeId) -> &[DagStep] {
        if layer + 1 >= self.layers {
            return &[];
        }
        &self.steps[layer][x]
    }

    pub fn step(&self, from: Event, to: NodeId) -> Option<&DagStep> {
        self.steps_from(from.layer, from.node).iter().find(|s| s.to == to)
    }

    fn check(&self, e: Event) -> Result<()> {
        if e.layer >= self.layers || e.node >= self.nodes {
            Err(GeomError::Domain(format!("event ({}, {}) outside the DAG", e.layer, e.node)))
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DagOptions {
    pub max_steps: usize,
}

impl Default for DagOptions {
    fn default() -> Self {
        Self { max_steps: tol::MAX_DAG_STEPS }
    }
}

pub fn build_causal_dag(st: &ProductSpacetime) -> Result<CausalDAG> {
    build_causal_dag_with(st, DagOptions::default())
}

pub fn build_causal_dag_with(st: &ProductSpacetime, opts: DagOptions) -> Result<CausalDAG> {
    let base = &st.family.base;
    let n = base.len();
    let balls: Vec<Vec<NodeId>> = (0..n).map(|x| base.hop_ball(x, st.hop_radius)).collect();
    let per_layer: usize = balls.iter().map(Vec::len).sum();
    let candidates = per_layer * (st.layers() - 1);
    let guard = if st.hop_radius > 2 { opts.max_steps.min(tol::WIDE_HOP_STEP_GUARD) } else { opts.max_steps };
    if candidates > guard {
        let factor = (candidates as f64 / guard as f64).ceil();
        return Err(GeomError::SizeGuard(format!(
            "{candidates} candidate steps exceed the guard of {guard}; coarsen the time grid by a factor {factor} or lower the hop radius"
        )));
    }
    let mut steps = Vec::with_capacity(st.layers() - 1);
    let mut count = 0usize;
    for i in 0..st.layers() - 1 {
        let s_mid = 0.5 * (st.grid[i] + st.grid[i + 1]);
        let ds = st.grid[i + 1] - st.grid[i];
        let w = st.family.weights_at(s_mid)?;
        let mut layer = Vec::with_capacity(n);
        for (x, ball) in balls.iter().enumerate() {
            let dist = base.conformal_distances_to(&w, x, ball)?;
            let mut out = Vec::new();
            for (&y, &dd) in ball.iter().zip(&dist) {
                let dd = if x == y { 0.0 } else { dd };
                let term = StepTerm {
                    s_mid,
                    ds,
                    dt: ds,
                    dd,
                    lapse: st.family.step_lapse(s_mid, x, y),
                    margin: 0.0,
                };
                let hs = term.lapse * ds;
                let term = StepTerm { margin: hs * hs - dd * dd, ..term };
                let class = classify_step(&term);
                if class != StepClass::NonCausal {
                    out.push(DagStep {
                        to: y,
                        dd,
                        lapse: term.lapse,
                        lapse_ds: hs,
                        margin: term.margin,
                        dtau: step_increment(&term),
                        class,
                    });
                }
            }
            count += out.len();
            layer.push(out);
        }
        steps.push(layer);
    }
    Ok(CausalDAG { layers: st.layers(), nodes: n, times: st.grid.clone(), steps, step_count: count, candidate_count: candidates })
}

/// `τ(source, ·)` with predecessor links and strict-witness flags.
#[derive(Clone, Debug)]
pub struct TimeSeparationTable {
    pub source: Event,
    pub last_layer: usize,
    values: Vec<Vec<Option<TauUnits>>>,
    pred: Vec<Vec<Option<NodeId>>>,
    strict: Vec<Vec<bool>>,
}

impl TimeSeparationTable {
    fn idx(&self, e: Event) -> Option<usize> {
        if e.layer < self.source.layer || e.layer > self.last_layer {
            None
        } else {
            Some(e.layer - self.source.layer)
        }
    }

    pub fn units(&self, e: Event) -> Option<TauUnits> {
        self.idx(e).and_then(|i| self.values[i].get(e.node).copied().flatten())
    }

    pub fn tau(&self, e: Event) -> Option<f64> {
        self.units(e).map(TauUnits::to_f64)
    }

    pub fn reachable(&self, e: Event) -> bool {
        self.units(e).is_some()
    }

    /// Some reaching chain of at least one step has every step timelike.
    pub fn strict(&self, e: Event) -> bool {
        self.idx(e).is_some_and(|i| i > 0 && self.strict[i][e.node])
    }

    pub fn pred(&self, e: Event) -> Option<NodeId> {
        self.idx(e).and_then(|i| self.pred[i][e.node])
    }

    /// Rows `(layer, node, tau, pred)` over reachable events.
    pub fn rows(&self) -> Vec<(usize, NodeId, f64, Option<NodeId>)> {
        let mut out = Vec::new();
        for (i, row) in self.values.iter().enumerate() {
            for (x, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    out.push((self.source.layer + i, x, v.to_f64(), self.pred[i][x]));
                }
            }
        }
        out
    }

    /// Predecessor chain `source -> e`.
    pub fn chain(&self, e: Event) -> Option<Vec<Event>> {
        self.units(e)?;
        let mut out = vec![e];
        let mut cur = e;
        while cur.layer > self.source.layer {
            let p = self.pred(cur)?;
            cur = Event::new(cur.layer - 1, p);
            out.push(cur);
        }
        out.reverse();
        Some(out)
    }
}

/// Longest-path DP from `source` up to `last_layer`. Ties keep the smallest predecessor id.
pub fn tau_table_until(dag: &CausalDAG, source: Event, last_layer: usize) -> Result<TimeSeparationTable> {
    dag.check(source)?;
    let last_layer = last_layer.min(dag.layers - 1).max(source.layer);
    let depth = last_layer - source.layer + 1;
    let n = dag.nodes;
    let mut values = vec![vec![None; n]; depth];
    let mut pred = vec![vec![None; n]; depth];
    let mut strict = vec![vec![false; n]; depth];
    values[0][source.node] = Some(TauUnits::ZERO);
    strict[0][source.node] = true;
    for i in 0..depth - 1 {
        let layer = source.layer + i;
        let (cur, next) = values.split_at_mut(i + 1);
        let (cur, next) = (&cur[i], &mut next[0]);
        for x in 0..n {
            let Some(v) = cur[x] else { continue };
            let sx = strict[i][x];
            for step in &dag.steps[layer][x] {
                let cand = v + step.dtau;
                let slot = &mut next[step.to];
                if slot.map_or(true, |old| cand > old) {
                    *slot = Some(cand);
                    pred[i + 1][step.to] = Some(x);
                }
                if sx && step.class == StepClass::Timelike {
                    strict[i + 1][step.to] = true;
                }
            }
        }
    }
    Ok(TimeSeparationTable { source, last_layer, values, pred, strict })
}

pub fn tau_table(dag: &CausalDAG, source: Event) -> Result<TimeSeparationTable> {
    tau_table_until(dag, source, dag.layers - 1)
}

/// `τ(p, q)` and the relations `p ≤ q`, `p ≪ q` (strict witness) and `τ > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeSeparation {
    pub tau: Option<f64>,
    #[serde(skip)]
    pub units: Option<TauUnits>,
    pub causal: bool,
    pub timelike: bool,
    pub tau_positive: bool,
}

pub fn time_separation(dag: &CausalDAG, p: Event, q: Event) -> Result<TimeSeparation> {
    dag.check(p)?;
    dag.check(q)?;
    if q.layer < p.layer {
        return Ok(TimeSeparation { tau: None, units: None, causal: false, timelike: false, tau_positive: false });
    }
    let table = tau_table_until(dag, p, q.layer)?;
    Ok(separation_from(&table, q))
}

pub fn separation_from(table: &TimeSeparationTable, q: Event) -> TimeSeparation {
    let units = table.units(q);
    TimeSeparation {
        tau: units.map(TauUnits::to_f64),
        units,
        causal: units.is_some(),
        timelike: table.strict(q),
        tau_positive: units.is_some_and(|u| u > TauUnits::ZERO),
    }
}

/// Predecessor chain achieving `τ(p, q)`.
pub fn maximizer_events(dag: &CausalDAG, p: Event, q: Event) -> Result<Vec<Event>> {
    dag.check(p)?;
    dag.check(q)?;
    if q.layer < p.layer {
        return Err(GeomError::NoCurve);
    }
    let table = tau_table_until(dag, p, q.layer)?;
    table.chain(q).ok_or(GeomError::NoCurve)
}

pub fn maximizer(dag: &CausalDAG, st: &ProductSpacetime, p: Event, q: Event) -> Result<ProductCurve> {
    let events = maximizer_events(dag, p, q)?;
    ProductCurve::from_events(st, &events)
}

/// Grid events visited by a curve whose samples sit exactly on grid times.
pub fn curve_events(st: &ProductSpacetime, gamma: &ProductCurve) -> Result<Vec<Event>> {
    gamma
        .samples
        .iter()
        .map(|c| {
            let l = st.layer_of(c.s);
            if st.grid[l] == c.s {
                Ok(Event::new(l, c.x))
            } else {
                Err(GeomError::InvalidCurve(format!("sample time {} is not a grid time", c.s)))
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariationalReport {
    /// `(level, Σ τ(γ_{t_{i-1}}, γ_{t_i}))` over dyadic partitions with `2^level` pieces.
    pub levels: Vec<(usize, f64)>,
    pub value: f64,
    pub lorentz_length: f64,
}

/// `L_τ(γ)`: infimum over nested dyadic partitions up to `depth`.
pub fn variational_length(dag: &CausalDAG, st: &ProductSpacetime, gamma: &ProductCurve, depth: usize) -> Result<VariationalReport> {
    let class = classify(st, gamma)?;
    if class.kind == CausalKind::NonCausal || class.orientation != Orientation::Future {
        return Err(GeomError::NonCausal { step: class.worst_step.unwrap_or(0), margin: class.worst_margin });
    }
    let events = curve_events(st, gamma)?;
    let steps = events.len() - 1;
    let mut levels = Vec::new();
    let mut best: Option<TauUnits> = None;
    for level in 0..=depth {
        let pieces = (1usize << level.min(60)).min(steps.max(1));
        let mut cuts: Vec<usize> = (0..=pieces).map(|j| j * steps / pieces).collect();
        cuts.dedup();
        let mut sum = TauUnits::ZERO;
        for w in cuts.windows(2) {
            let (a, b) = (events[w[0]], events[w[1]]);
            let sep = time_separation(dag, a, b)?;
            sum = sum + sep.units.ok_or_else(|| GeomError::InvalidCurve("curve step is not a DAG step".into()))?;
        }
        levels.push((level, sum.to_f64()));
        best = Some(best.map_or(sum, |b| b.min(sum)));
        if pieces == steps {
            break;
        }
    }
    Ok(VariationalReport {
        levels,
        value: best.unwrap_or_default().to_f64(),
        lorentz_length: lorentz_length(st, gamma)?,
    })
}

/// `J(p, q)` with the causal length bound checked along maximizing chains from `p`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diamond {
    pub events: Vec<Event>,
    pub length_bound_holds: bool,
    /// Largest `weighted_length / (√2 Δt)` over members.
    pub worst_ratio: f64,
}

pub fn causal_diamond(dag: &CausalDAG, p: Event, q: Event) -> Result<Diamond> {
    dag.check(p)?;
    dag.check(q)?;
    if q.layer < p.layer {
        return Ok(Diamond { events: vec![], length_bound_holds: true, worst_ratio: 0.0 });
    }
    let fwd = tau_table_until(dag, p, q.layer)?;
    let depth = q.layer - p.layer + 1;
    let mut bwd = vec![vec![false; dag.nodes]; depth];
    bwd[depth - 1][q.node] = true;
    for i in (0..depth - 1).rev() {
        for x in 0..dag.nodes {
            bwd[i][x] = dag.steps[p.layer + i][x].iter().any(|s| bwd[i + 1][s.to]);
        }
    }
    let mut events = Vec::new();
    let mut worst = 0.0f64;
    let mut holds = true;
    for (i, row) in bwd.iter().enumerate() {
        for (x, &b) in row.iter().enumerate() {
            let e = Event::new(p.layer + i, x);
            if !(b && fwd.reachable(e)) {
                continue;
            }
            events.push(e);
            let chain = fwd.chain(e).ok_or(GeomError::NoCurve)?;
            let mut len = 0.0;
            for w in chain.windows(2) {
                let st = dag.step(w[0], w[1].node).ok_or(GeomError::NoCurve)?;
                len += st.lapse_ds.hypot(st.dd) / st.lapse;
            }
            let dt = dag.times[e.layer] - dag.times[p.layer];
            if dt > 0.0 {
                worst = worst.max(len / (std::f64::consts::SQRT_2 * dt));
            }
            if len > std::f64::consts::SQRT_2 * dt + 1e-12 {
                holds = false;
            }
        }
    }
    Ok(Diamond { events, length_bound_holds: holds, worst_ratio: worst })
}

/// Samples of a chain of grid events as `(t, s, x)` with `t = s`.
pub fn chain_samples(dag: &CausalDAG, chain: &[Event]) -> Vec<CurveSample> {
    chain.iter().map(|e| CurveSample { t: dag.times[e.layer], s: dag.times[e.layer], x: e.node }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_space::BaseSpace;
    use crate::metric_family::{ConformalFamily, FamilySpec, FieldSpec};

    fn flat(nodes: usize, len: f64, steps: usize, t1: f64) -> ProductSpacetime {
        let fam = ConformalFamily::flat(BaseSpace::path_graph(nodes, len).unwrap(), (0.0, t1)).unwrap();
        ProductSpacetime::uniform(fam, steps, 1).unwrap()
    }

    #[test]
    fn unit_cone_has_three_successors() {
        let st = flat(5, 0.25, 4, 1.0);
        let dag = build_causal_dag(&st).unwrap();
        let s = dag.steps_from(0, 2);
        assert_eq!(s.iter().map(|s| s.to).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(s[0].class, StepClass::Null);
        assert_eq!(s[1].class, StepClass::Timelike);
    }

    #[test]
    fn narrow_cone_only_vertical() {
        let st = flat(5, 1.0, 4, 1.0);
        let dag = build_causal_dag(&st).unwrap();
        assert!(dag.steps_from(1, 2).iter().all(|s| s.to == 2));
    }

    #[test]
    fn expanding_weight_shrinks_hops() {
        let spec = FamilySpec {
            interval: (0.0, 2.0),
            rho: FieldSpec::ExpLinear { a: 1.0, weights: None },
            lapse: FieldSpec::Constant { value: 1.0 },
            declared: Default::default(),
        };
        let fam = ConformalFamily::from_spec(BaseSpace::path_graph(5, 0.2).unwrap(), &spec).unwrap();
        let st = ProductSpacetime::uniform(fam, 8, 1).unwrap();
        let dag = build_causal_dag(&st).unwrap();
        assert_eq!(dag.steps_from(0, 2).len(), 3);
        assert_eq!(dag.steps_from(7, 2).len(), 1);
    }

    #[test]
    fn classify_examples() {
        let st = flat(5, 1.0, 4, 4.0);
        let vertical = ProductCurve::from_points(&[(0.0, 1), (1.0, 1), (2.0, 1)]).unwrap();
        let c = classify(&st, &vertical).unwrap();
        assert_eq!(c.kind, CausalKind::Timelike);
        assert_eq!(c.worst_margin, 1.0);
        let diag = ProductCurve::from_points(&[(0.0, 0), (1.0, 1), (2.0, 2)]).unwrap();
        assert_eq!(classify(&st, &diag).unwrap().kind, CausalKind::Null);
        let steep = ProductCurve::from_points(&[(0.0, 0), (0.5, 1), (1.0, 2)]).unwrap();
        assert_eq!(classify(&st, &steep).unwrap().kind, CausalKind::NonCausal);
        let back = ProductCurve::from_points(&[(0.0, 0), (1.0, 0), (0.5, 0)]).unwrap();
        assert_eq!(classify(&st, &back).unwrap().kind, CausalKind::NonCausal);
    }

    #[test]
    fn lorentz_length_examples() {
        let st = flat(5, 1.0, 4, 4.0);
        let vertical = ProductCurve::from_points(&[(0.0, 1), (1.5, 1), (3.0, 1)]).unwrap();
        assert_eq!(lorentz_length(&st, &vertical).unwrap(), 3.0);
        let null = ProductCurve::from_points(&[(0.0, 0), (1.0, 1)]).unwrap();
        assert_eq!(lorentz_length(&st, &null).unwrap(), 0.0);
        let st6 = flat(2, 0.6, 4, 1.0);
        let seg = ProductCurve::from_points(&[(0.0, 0), (1.0, 1)]).unwrap();
        assert!((lorentz_length(&st6, &seg).unwrap() - 0.8).abs() < 1e-15);
        let steep = ProductCurve::from_points(&[(0.0, 0), (0.5, 1)]).unwrap();
        assert!(matches!(lorentz_length(&st, &steep), Err(GeomError::NonCausal { .. })));
    }

    #[test]
    fn time_separation_examples() {
        let st = flat(11, 0.1, 10, 1.0);
        let dag = build_causal_dag(&st).unwrap();
        let sep = time_separation(&dag, Event::new(0, 5), Event::new(10, 5)).unwrap();
        assert!((sep.tau.unwrap() - 1.0).abs() < 1e-15);
        assert!(sep.causal && sep.timelike && sep.tau_positive);
        let far = time_separation(&dag, Event::new(0, 0), Event::new(3, 8)).unwrap();
        assert_eq!(far.tau, None);
        assert!(!far.causal && !far.timelike);
        let edge = time_separation(&dag, Event::new(0, 0), Event::new(3, 3)).unwrap();
        assert_eq!(edge.tau, Some(0.0));
        assert!(edge.causal && !edge.timelike && !edge.tau_positive);
    }

    #[test]
    fn refinement_with_wider_hops_approaches_chord() {
        let exact = 0.51f64.sqrt();
        let mut last = 0.0;
        for k in [1usize, 2, 4] {
            let cells = 10 * k;
            let fam = ConformalFamily::flat(BaseSpace::path_graph(cells + 1, 1.0 / cells as f64).unwrap(), (0.0, 1.0)).unwrap();
            let st = ProductSpacetime::new(fam, crate::product_geometry::uniform_grid(0.0, 1.0, 10), k).unwrap();
            let dag = build_causal_dag(&st).unwrap();
            let tau = time_separation(&dag, Event::new(0, 0), Event::new(10, 7 * k)).unwrap().tau.unwrap();
            assert!(tau >= last);
            assert!(tau <= exact + 1e-12);
            last = tau;
        }
        assert!((exact - last) / exact < 0.02);
    }

    #[test]
    fn maximizer_examples() {
        let st = flat(11, 0.1, 10, 1.0);
        let dag = build_causal_dag(&st).unwrap();
        let v = maximizer_events(&dag, Event::new(0, 4), Event::new(10, 4)).unwrap();
        assert!(v.iter().all(|e| e.node == 4));
        let c = maximizer(&dag, &st, Event::new(0, 2), Event::new(10, 7)).unwrap();
        let sep = time_separation(&dag, Event::new(0, 2), Event::new(10, 7)).unwrap();
        assert_eq!(lorentz_length_units(&st, &c).unwrap(), sep.units.unwrap());
        let a = maximizer_events(&dag, Event::new(0, 2), Event::new(10, 7)).unwrap();
        assert_eq!(a, maximizer_events(&dag, Event::new(0, 2), Event::new(10, 7)).unwrap());
        // ties: staircase takes its diagonal steps as late as possible so each
        // predecessor is the smaller node id
        assert_eq!(a[1].node, 2);
        assert!(matches!(maximizer_events(&dag, Event::new(0, 0), Event::new(2, 9)), Err(GeomError::NoCurve)));
    }

    #[test]
    fn variational_examples() {
        let st = flat(11, 0.1, 10, 1.0);
        let dag = build_causal_dag(&st).unwrap();
        let c = maximizer(&dag, &st, Event::new(0, 2), Event::new(10, 6)).unwrap();
        let r = variational_length(&dag, &st, &c, 0).unwrap();
        assert_eq!(r.value, time_separation(&dag, Event::new(0, 2), Event::new(10, 6)).unwrap().tau.unwrap());
        let vertical = ProductCurve::from_events(&st, &(0..=10).map(|l| Event::new(l, 3)).collect::<Vec<_>>()).unwrap();
        let r = variational_length(&dag, &st, &vertical, 5).unwrap();
        assert!(r.levels.iter().all(|l| (l.1 - 1.0).abs() < 1e-15));
        let zig = ProductCurve::from_events(&st, &[Event::new(0, 5), Event::new(1, 6), Event::new(2, 5)]).unwrap();
        let r = variational_length(&dag, &st, &zig, 3).unwrap();
        assert!(r.levels[0].1 > 0.0);
        assert_eq!(r.value, 0.0);
        assert_eq!(r.value, r.lorentz_length);
    }

    #[test]
    fn diamond_examples() {
        let st = flat(9, 0.25, 8, 2.0);
        let dag = build_causal_dag(&st).unwrap();
        let p = Event::new(2, 4);
        assert_eq!(causal_diamond(&dag, p, p).unwrap().events, vec![p]);
        let d = causal_diamond(&dag, Event::new(0, 4), Event::new(8, 4)).unwrap();
        assert!(d.length_bound_holds);
        let widths: Vec<usize> = (0..=8).map(|l| d.events.iter().filter(|e| e.layer == l).count()).collect();
        assert_eq!(widths, vec![1, 3, 5, 7, 9, 7, 5, 3, 1]);
        assert!(causal_diamond(&dag, Event::new(0, 0), Event::new(1, 5)).unwrap().events.is_empty());
    }

    #[test]
    fn size_guard() {
        let st = flat(50, 0.01, 200, 1.0);
        let err = build_causal_dag_with(&st, DagOptions { max_steps: 1000 }).unwrap_err();
        assert!(matches!(err, GeomError::SizeGuard(_)));
    }
}
