//! Task execution. Every task returns its JSON summary and in-memory artifacts;
//! nothing is written here.

use std::cell::OnceCell;

use lorprod_core::causal_core::tau_table;
use lorprod_core::manifold_compat::{audit_curve, sample_positive_pairs};
use lorprod_core::metric_family::{fit_power_law, verify_regularity, RegularityOptions, RegularityReport};
use lorprod_core::ode_engine::{push_up, PushUpOptions};
use lorprod_core::product_geometry::{properness_diagnostic, CurveSample, DivergenceVerdict};
use lorprod_core::transport_curvature::{
    concavity_rigidity, wtcd_probe, Constancy, DensityField, RigidityOptions, TimeMeasure, WtcdCase,
};
use lorprod_core::{
    build_causal_dag, causal_diamond, classify, lorentz_length, maximizer, q_reduce, regularity_audit, time_separation,
    CausalDAG, CausalKind, Event, GeomError, ProductCurve, ProductSpacetime, Verdict,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::scenario::*;

pub struct Artifact {
    pub file: String,
    pub bytes: Vec<u8>,
}

pub struct TaskOutput {
    pub passed: bool,
    pub result: Value,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug)]
pub enum TaskError {
    Schema(SchemaError),
    Numerical(String),
}

impl From<GeomError> for TaskError {
    fn from(e: GeomError) -> Self {
        TaskError::Numerical(e.to_string())
    }
}

impl From<SchemaError> for TaskError {
    fn from(e: SchemaError) -> Self {
        TaskError::Schema(e)
    }
}

type TaskResult = std::result::Result<TaskOutput, TaskError>;

pub struct Settings {
    pub seed: u64,
    pub tol: f64,
    pub force: bool,
}

/// Shared state for one run: the scenario and a lazily built DAG.
pub struct Runner<'a> {
    pub loaded: &'a Loaded,
    pub settings: Settings,
    dag: OnceCell<CausalDAG>,
}

/// FNV-1a, so task seeds depend only on the run seed and the task's own name.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn artifact_name(task: &str, kind: &str, stem: &str, ext: &str) -> String {
    if task == kind {
        format!("{stem}.{ext}")
    } else {
        format!("{stem}_{task}.{ext}")
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> std::result::Result<Vec<u8>, TaskError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| TaskError::Numerical(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| TaskError::Numerical(format!("csv: {e}")))
}

fn ev(e: Event, st: &ProductSpacetime) -> Value {
    json!({ "layer": e.layer, "node": e.node, "time": st.time(e) })
}

impl<'a> Runner<'a> {
    pub fn new(loaded: &'a Loaded, settings: Settings) -> Self {
        Self { loaded, settings, dag: OnceCell::new() }
    }

    fn st(&self) -> &ProductSpacetime {
        &self.loaded.space
    }

    fn dag(&self) -> std::result::Result<&CausalDAG, TaskError> {
        if self.dag.get().is_none() {
            let dag = build_causal_dag(self.st())?;
            let _ = self.dag.set(dag);
        }
        Ok(self.dag.get().expect("dag was just built"))
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.settings.seed ^ name_hash(name))
    }

    pub fn run(&self, index: usize, spec: &TaskSpec) -> TaskResult {
        let name = spec.name();
        let at = format!("/tasks/{index}");
        match &spec.task {
            Task::Tau(t) => self.tau(&name, &at, t),
            Task::Maximizer(t) => self.maximizer(&name, &at, t),
            Task::Pushup(t) => self.pushup(&name, &at, t),
            Task::Regularity(t) => self.regularity(&name, &at, t),
            Task::Hyperbolicity(t) => self.hyperbolicity(&name, &at, t),
            Task::VerifyLip(t) => self.verify_lip(&name, &at, t),
            Task::Tcd(t) => self.tcd(&name, &at, t),
            Task::Rigidity(t) => self.rigidity(&name, t),
            Task::DemoBubble(t) => self.demo_bubble(&name, t),
        }
    }

    fn tau(&self, name: &str, at: &str, t: &TauTask) -> TaskResult {
        let dag = self.dag()?;
        let st = self.st();
        let tol = t.tolerance.unwrap_or(self.settings.tol);
        let mut pairs = Vec::new();
        let mut passed = true;
        for (j, pair) in t.pairs.iter().enumerate() {
            let p = self.loaded.event(&pair.from, &format!("{at}/pairs/{j}/from"))?;
            let q = self.loaded.event(&pair.to, &format!("{at}/pairs/{j}/to"))?;
            let sep = time_separation(dag, p, q)?;
            let tau = sep.tau.unwrap_or(0.0);
            let mut entry = json!({
                "from": ev(p, st),
                "to": ev(q, st),
                "tau": tau,
                "causal": sep.causal,
                "timelike": sep.timelike,
                "tau_positive": sep.tau_positive,
            });
            if let Some(expected) = pair.expected {
                let err = (tau - expected).abs() / if expected == 0.0 { 1.0 } else { expected.abs() };
                let ok = err <= tol;
                passed &= ok;
                entry["expected"] = json!(expected);
                entry["relative_error"] = json!(err);
                entry["within_tolerance"] = json!(ok);
            }
            pairs.push(entry);
        }
        let source = match &t.table_source {
            Some(s) => self.loaded.event(s, &format!("{at}/table_source"))?,
            None => self.loaded.event(&t.pairs[0].from, &format!("{at}/pairs/0/from"))?,
        };
        let table = tau_table(dag, source)?;
        let rows = table.rows().into_iter().map(|(l, x, tau, pred)| {
            vec![l.to_string(), x.to_string(), tau.to_string(), pred.map(|p| p.to_string()).unwrap_or_default()]
        });
        let bytes = csv_bytes(&["layer", "node", "tau", "pred"], rows)?;
        Ok(TaskOutput {
            passed,
            result: json!({ "tolerance": tol, "pairs": pairs, "table_source": ev(source, st) }),
            artifacts: vec![Artifact { file: artifact_name(name, "tau", "tau_table", "csv"), bytes }],
        })
    }

    fn maximizer(&self, name: &str, at: &str, t: &MaximizerTask) -> TaskResult {
        let dag = self.dag()?;
        let st = self.st();
        let p = self.loaded.event(&t.from, &format!("{at}/from"))?;
        let q = self.loaded.event(&t.to, &format!("{at}/to"))?;
        let gamma = match maximizer(dag, st, p, q) {
            Ok(g) => g,
            Err(GeomError::NoCurve) => {
                return Ok(TaskOutput {
                    passed: false,
                    result: json!({ "from": ev(p, st), "to": ev(q, st), "found": false }),
                    artifacts: vec![],
                })
            }
            Err(e) => return Err(e.into()),
        };
        let class = classify(st, &gamma)?;
        let rows = gamma.samples.iter().map(|c| vec![c.t.to_string(), c.s.to_string(), c.x.to_string()]);
        let bytes = csv_bytes(&["t", "s", "node"], rows)?;
        let null_steps = audit_curve(st, &gamma)?.len();
        Ok(TaskOutput {
            passed: true,
            result: json!({
                "from": ev(p, st),
                "to": ev(q, st),
                "found": true,
                "length": lorentz_length(st, &gamma)?,
                "class": class,
                "steps": gamma.len() - 1,
                "non_timelike_steps": null_steps,
            }),
            artifacts: vec![Artifact { file: artifact_name(name, "maximizer", "maximizer", "csv"), bytes }],
        })
    }

    fn certify(&self, seed: u64) -> std::result::Result<RegularityReport, TaskError> {
        let fam = &self.st().family;
        let nodes: Vec<usize> = (0..fam.base.len()).collect();
        Ok(verify_regularity(fam, fam.interval, &nodes, seed, RegularityOptions::default())?)
    }

    /// Random `q ≤ p`, `p ≪ r` with `r ≠ p`.
    fn sample_triple(&self, rng: &mut ChaCha8Rng) -> std::result::Result<Option<(Event, Event, Event)>, TaskError> {
        let dag = self.dag()?;
        let (layers, nodes) = (dag.layers, dag.nodes);
        if layers < 2 {
            return Ok(None);
        }
        let q = Event::new(rng.gen_range(0..layers - 1), rng.gen_range(0..nodes));
        let from_q = tau_table(dag, q)?;
        let mids: Vec<Event> = from_q.rows().into_iter().filter(|r| r.0 + 1 < layers).map(|r| Event::new(r.0, r.1)).collect();
        let p = mids[rng.gen_range(0..mids.len())];
        let from_p = tau_table(dag, p)?;
        let ends: Vec<Event> =
            from_p.rows().into_iter().map(|r| Event::new(r.0, r.1)).filter(|&e| e != p && from_p.strict(e)).collect();
        if ends.is_empty() {
            return Ok(None);
        }
        Ok(Some((q, p, ends[rng.gen_range(0..ends.len())])))
    }

    fn triples(&self, name: &str, at: &str, explicit: &[Triple], samples: usize) -> std::result::Result<Vec<(Event, Event, Event)>, TaskError> {
        let mut out = Vec::new();
        for (j, tr) in explicit.iter().enumerate() {
            out.push((
                self.loaded.event(&tr.q, &format!("{at}/triples/{j}/q"))?,
                self.loaded.event(&tr.p, &format!("{at}/triples/{j}/p"))?,
                self.loaded.event(&tr.r, &format!("{at}/triples/{j}/r"))?,
            ));
        }
        let mut rng = self.rng(name);
        let mut attempts = 0;
        let mut drawn = 0;
        while drawn < samples {
            attempts += 1;
            if attempts > 100 * samples.max(1) {
                return Err(TaskError::Numerical(format!("found only {drawn} of {samples} chains q ≤ p ≪ r")));
            }
            if let Some(t) = self.sample_triple(&mut rng)? {
                out.push(t);
                drawn += 1;
            }
        }
        Ok(out)
    }

    fn push_chain(&self, (q, p, r): (Event, Event, Event), verdict: Verdict, force: bool) -> Value {
        let st = self.st();
        let base = json!({ "q": ev(q, st), "p": ev(p, st), "r": ev(r, st) });
        let attempt = || -> lorprod_core::Result<Value> {
            let dag = self.dag.get().expect("dag built before chains are drawn");
            let left = maximizer(dag, st, q, p)?;
            let right = maximizer(dag, st, p, r)?;
            let out = push_up(st, &left, &right, verdict, PushUpOptions { force, ..Default::default() })?;
            let kind = classify(st, &out.curve)?.kind;
            let (a, b) = (out.curve.first(), out.curve.last());
            let endpoint_error = (a.s - st.time(q)).abs().max((b.s - st.time(r)).abs());
            let nodes_match = a.x == q.node && b.x == r.node;
            Ok(json!({
                "status": if kind == CausalKind::Timelike { "timelike" } else { "not_timelike" },
                "kind": kind,
                "epsilon": out.epsilon,
                "tau": out.tau_total,
                "min_margin": out.min_margin,
                "constancy": out.constancy,
                "endpoint_error": if nodes_match { endpoint_error } else { f64::INFINITY },
            }))
        };
        let mut v = match attempt() {
            Ok(v) => v,
            Err(e) => json!({ "status": "error", "error": e.to_string() }),
        };
        if let (Value::Object(m), Value::Object(b)) = (&mut v, base) {
            for (k, x) in b {
                m.insert(k, x);
            }
        }
        v
    }

    fn pushup(&self, name: &str, at: &str, t: &PushupTask) -> TaskResult {
        let cert = self.certify(self.settings.seed ^ name_hash(name))?;
        let certification = json!({ "verdict": cert.verdict, "fitted_constant": cert.fitted_constant, "fitted_exponent": cert.fitted_exponent });
        if cert.verdict != Verdict::Pass && !self.settings.force {
            return Ok(TaskOutput {
                passed: false,
                result: json!({ "certification": certification, "refused": true, "reason": "log-Lipschitz regularity not certified; rerun with --force to bypass" }),
                artifacts: vec![],
            });
        }
        self.dag()?;
        let chains = self.triples(name, at, &t.triples, t.samples)?;
        let ctol = t.constancy_tol.unwrap_or(1e-6);
        let results: Vec<Value> = chains.iter().map(|&c| self.push_chain(c, cert.verdict, self.settings.force)).collect();
        let timelike = results.iter().filter(|r| r["status"] == "timelike").count();
        let max_endpoint = results.iter().filter_map(|r| r["endpoint_error"].as_f64()).fold(0.0, f64::max);
        let max_constancy = results.iter().filter_map(|r| r["constancy"].as_f64()).fold(0.0, f64::max);
        let passed = timelike == results.len() && max_endpoint == 0.0 && max_constancy <= ctol;
        let rows = results.iter().enumerate().map(|(i, r)| {
            let f = |k: &str| r[k].as_f64().map(|v| v.to_string()).unwrap_or_default();
            let e = |k: &str, f2: &str| r[k][f2].to_string();
            vec![
                i.to_string(),
                e("q", "layer"),
                e("q", "node"),
                e("p", "layer"),
                e("p", "node"),
                e("r", "layer"),
                e("r", "node"),
                r["status"].as_str().unwrap_or_default().to_string(),
                f("epsilon"),
                f("min_margin"),
                f("constancy"),
            ]
        });
        let header = ["index", "q_layer", "q_node", "p_layer", "p_node", "r_layer", "r_node", "status", "epsilon", "min_margin", "constancy"];
        let bytes = csv_bytes(&header, rows)?;
        Ok(TaskOutput {
            passed,
            result: json!({
                "certification": certification,
                "forced": self.settings.force && cert.verdict != Verdict::Pass,
                "chains": results.len(),
                "timelike": timelike,
                "max_endpoint_error": max_endpoint,
                "max_constancy": max_constancy,
                "constancy_tol": ctol,
                "cases": results,
            }),
            artifacts: vec![Artifact { file: artifact_name(name, "pushup", "pushup", "csv"), bytes }],
        })
    }

    fn sweep_curve(&self, at: &str, t: &RegularityTask) -> std::result::Result<ProductCurve, TaskError> {
        let st = self.st();
        let samples = match &t.curve {
            Some(c) => {
                let mut v = Vec::with_capacity(c.samples.len());
                for (j, (time, node)) in c.samples.iter().enumerate() {
                    v.push(CurveSample { t: *time, s: *time, x: self.loaded.node(node, &format!("{at}/curve/samples/{j}/1"))? });
                }
                v
            }
            None => st.grid.iter().map(|&s| CurveSample { t: s, s, x: 0 }).collect(),
        };
        Ok(ProductCurve::new(samples)?)
    }

    fn regularity(&self, name: &str, at: &str, t: &RegularityTask) -> TaskResult {
        let dag = self.dag()?;
        let st = self.st();
        let pairs = sample_positive_pairs(dag, t.pairs, self.settings.seed ^ name_hash(name))?;
        let audit = regularity_audit(dag, st, &pairs)?;
        let curve = self.sweep_curve(at, t)?;
        let mut sweep = Vec::new();
        for &m in &t.refinements {
            let mut grid = Vec::with_capacity((st.grid.len() - 1) * m + 1);
            for w in st.grid.windows(2) {
                grid.extend((0..m).map(|i| w[0] + (w[1] - w[0]) * i as f64 / m as f64));
            }
            grid.push(st.grid[st.grid.len() - 1]);
            let delta = grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            let fine = ProductSpacetime::new(st.family.clone(), grid, st.hop_radius)?;
            let q = q_reduce(&fine, &curve)?;
            sweep.push((delta, q.residual));
        }
        let order = fit_power_law(&sweep).map(|(_, g)| g);
        let rows = sweep.iter().map(|(d, r)| vec![d.to_string(), r.to_string()]);
        let bytes = csv_bytes(&["delta", "residual"], rows)?;
        let findings: Vec<Value> = audit
            .findings
            .iter()
            .map(|f| json!({ "from": ev(f.from, st), "to": ev(f.to, st), "step": f.step, "margin": f.margin, "class": f.class }))
            .collect();
        Ok(TaskOutput {
            passed: audit.clean,
            result: json!({
                "examined": audit.examined,
                "positive": audit.positive,
                "null_steps": audit.null_steps,
                "clean": audit.clean,
                "findings": findings,
                "residual_sweep": sweep,
                "residual_order": order,
            }),
            artifacts: vec![Artifact { file: artifact_name(name, "regularity", "residual", "csv"), bytes }],
        })
    }

    fn hyperbolicity(&self, name: &str, at: &str, t: &HyperbolicityTask) -> TaskResult {
        let st = self.st();
        let mut artifacts = Vec::new();
        let mut passed = true;
        let mut divergence = Value::Null;
        if !t.ray.is_empty() {
            let nodes = self.loaded.nodes(&t.ray, &format!("{at}/ray"))?;
            if nodes.len() > st.layers() {
                return Err(SchemaError { pointer: format!("{at}/ray"), message: "ray is longer than the time grid".into() }.into());
            }
            let samples: Vec<CurveSample> = nodes.iter().enumerate().map(|(k, &x)| CurveSample { t: st.grid[k], s: st.grid[k], x }).collect();
            let report = properness_diagnostic(st, &ProductCurve::new(samples)?)?;
            passed &= matches!(report.verdict, DivergenceVerdict::Divergent { .. });
            let rows = report.partial_sums.iter().map(|(n, s)| vec![n.to_string(), s.to_string()]);
            artifacts.push(Artifact { file: artifact_name(name, "hyperbolicity", "divergence", "csv"), bytes: csv_bytes(&["n", "partial_sum"], rows)? });
            divergence = serde_json::to_value(&report).map_err(|e| TaskError::Numerical(e.to_string()))?;
        }
        let mut diamonds = Vec::new();
        if !t.diamonds.is_empty() {
            let dag = self.dag()?;
            for (j, (p, q)) in t.diamonds.iter().enumerate() {
                let p = self.loaded.event(p, &format!("{at}/diamonds/{j}/0"))?;
                let q = self.loaded.event(q, &format!("{at}/diamonds/{j}/1"))?;
                let d = causal_diamond(dag, p, q)?;
                passed &= d.length_bound_holds;
                diamonds.push(json!({
                    "from": ev(p, st),
                    "to": ev(q, st),
                    "events": d.events.len(),
                    "length_bound_holds": d.length_bound_holds,
                    "worst_ratio": d.worst_ratio,
                }));
            }
        }
        Ok(TaskOutput { passed, result: json!({ "divergence": divergence, "diamonds": diamonds }), artifacts })
    }

    fn verify_lip(&self, name: &str, at: &str, t: &VerifyLipTask) -> TaskResult {
        let fam = &self.st().family;
        let nodes = match &t.nodes {
            Some(k) => self.loaded.nodes(k, &format!("{at}/nodes"))?,
            None => (0..fam.base.len()).collect(),
        };
        let mut opts = RegularityOptions { radius: t.radius, ..Default::default() };
        if let Some(n) = t.grid_intervals {
            opts.grid_intervals = n;
        }
        let report = verify_regularity(fam, t.window.unwrap_or(fam.interval), &nodes, self.settings.seed ^ name_hash(name), opts)?;
        let rows = report.modulus.iter().map(|(d, w)| vec![d.to_string(), w.to_string()]);
        let bytes = csv_bytes(&["gap", "modulus"], rows)?;
        Ok(TaskOutput {
            passed: report.verdict == Verdict::Pass,
            result: serde_json::to_value(&report).map_err(|e| TaskError::Numerical(e.to_string()))?,
            artifacts: vec![Artifact { file: artifact_name(name, "verify-lip", "modulus", "csv"), bytes }],
        })
    }

    fn density(&self, d: &DensitySpec) -> std::result::Result<DensityField, TaskError> {
        Ok(DensityField::from_spec(&self.st().family.base, &d.g, d.masses.clone(), &d.lapse)?)
    }

    fn tcd(&self, name: &str, at: &str, t: &TcdTask) -> TaskResult {
        let field = self.density(&t.density)?;
        let mut cases = Vec::with_capacity(t.cases.len());
        for (j, c) in t.cases.iter().enumerate() {
            cases.push(WtcdCase {
                name: c.name.clone(),
                nu0: TimeMeasure::uniform_window(&field.lapse, c.nu0.0, c.nu0.1)?,
                nu1: TimeMeasure::uniform_window(&field.lapse, c.nu1.0, c.nu1.1)?,
                region: self.loaded.nodes(&c.region, &format!("{at}/cases/{j}/region"))?,
            });
        }
        let report = wtcd_probe(&field, t.p, t.k, t.n, &cases, t.samples)?;
        let mut artifacts = Vec::new();
        for c in &report.cases {
            let stem = if name == "tcd" { format!("entropy_curve_{}", c.name) } else { format!("entropy_curve_{name}_{}", c.name) };
            let rows = c.entropy.iter().map(|(t, e)| vec![t.to_string(), e.to_string()]);
            artifacts.push(Artifact { file: format!("{stem}.csv"), bytes: csv_bytes(&["t", "entropy"], rows)? });
        }
        Ok(TaskOutput {
            passed: report.pass,
            result: serde_json::to_value(&report).map_err(|e| TaskError::Numerical(e.to_string()))?,
            artifacts,
        })
    }

    fn rigidity(&self, name: &str, t: &RigidityTask) -> TaskResult {
        let field = self.density(&t.density)?;
        let report = concavity_rigidity(&field, t.k, t.n, &t.windows, RigidityOptions::default())?;
        let value = serde_json::to_value(&report).map_err(|e| TaskError::Numerical(e.to_string()))?;
        let bytes = serde_json::to_vec_pretty(&value).map_err(|e| TaskError::Numerical(e.to_string()))?;
        Ok(TaskOutput {
            passed: report.all_concave && report.constancy != Constancy::Failed,
            result: value,
            artifacts: vec![Artifact { file: artifact_name(name, "rigidity", "rigidity_report", "json"), bytes }],
        })
    }

    /// Certification, forced push-ups and a null-step audit on a family expected to fail regularity.
    fn demo_bubble(&self, name: &str, t: &DemoBubbleTask) -> TaskResult {
        let st = self.st();
        let cert = self.certify(self.settings.seed ^ name_hash(name))?;
        let dag = self.dag()?;
        let mut rng = self.rng(name);
        let mut outcomes = Vec::new();
        for _ in 0..t.samples {
            if let Some(c) = self.sample_triple(&mut rng)? {
                outcomes.push(self.push_chain(c, cert.verdict, true));
            }
        }
        let count = |s: &str| outcomes.iter().filter(|o| o["status"] == s).count();
        let pairs = sample_positive_pairs(dag, t.samples, self.settings.seed ^ name_hash(name) ^ 1)?;
        let mut null_steps = 0;
        for &(p, q) in &pairs {
            let gamma = maximizer(dag, st, p, q)?;
            null_steps += audit_curve(st, &gamma)?.len();
        }
        Ok(TaskOutput {
            passed: true,
            result: json!({
                "certification": { "verdict": cert.verdict, "fitted_constant": cert.fitted_constant, "fitted_exponent": cert.fitted_exponent },
                "forced_pushups": outcomes.len(),
                "timelike": count("timelike"),
                "not_timelike": count("not_timelike"),
                "errors": count("error"),
                "cases": outcomes,
                "audited_pairs": pairs.len(),
                "null_steps": null_steps,
            }),
            artifacts: vec![],
        })
    }
}
