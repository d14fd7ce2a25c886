//! Scenario documents: base space, family, grid, and an ordered task list.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use lorprod_core::{BaseSpace, ConformalFamily, Event, FamilySpec, FieldSpec, GraphDoc, NodeId, ProductSpacetime};
use serde::Deserialize;

/// Schema violation with a JSON pointer to the offending value.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub pointer: String,
    pub message: String,
}

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "schema violation at {}: {}", if self.pointer.is_empty() { "/" } else { &self.pointer }, self.message)
    }
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> SchemaError {
    SchemaError { pointer: pointer.into(), message: message.into() }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub base: BaseSpec,
    pub family: FamilySpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseSpec {
    Path { nodes: usize, edge_length: f64 },
    Cycle { lengths: Vec<f64> },
    Grid { rows: usize, cols: usize, edge_length: f64 },
    Document(GraphDoc),
}

impl BaseSpec {
    pub fn build(&self) -> lorprod_core::Result<BaseSpace> {
        match self {
            BaseSpec::Path { nodes, edge_length } => BaseSpace::path_graph(*nodes, *edge_length),
            BaseSpec::Cycle { lengths } => BaseSpace::cycle_graph(lengths),
            BaseSpec::Grid { rows, cols, edge_length } => BaseSpace::grid_graph(*rows, *cols, *edge_length),
            BaseSpec::Document(doc) => BaseSpace::from_doc(doc),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub hop_radius: usize,
}

fn one() -> usize {
    1
}

/// A node by index or by label.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum NodeRef {
    Index(usize),
    Label(String),
}

/// A grid event by layer or by time (which must lie on the grid).
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    #[serde(default)]
    pub layer: Option<usize>,
    #[serde(default)]
    pub time: Option<f64>,
    pub node: NodeRef,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TaskSpec {
    #[serde(default)]
    pub name: Option<String>,
    /// Failing verdicts make the run exit 1 only for gating tasks.
    #[serde(default)]
    pub gating: bool,
    #[serde(flatten)]
    pub task: Task,
}

impl TaskSpec {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.task.kind().to_string())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    Tau(TauTask),
    Maximizer(MaximizerTask),
    Pushup(PushupTask),
    Regularity(RegularityTask),
    Hyperbolicity(HyperbolicityTask),
    VerifyLip(VerifyLipTask),
    Tcd(TcdTask),
    Rigidity(RigidityTask),
    DemoBubble(DemoBubbleTask),
}

impl Task {
    pub fn kind(&self) -> &'static str {
        match self {
            Task::Tau(_) => "tau",
            Task::Maximizer(_) => "maximizer",
            Task::Pushup(_) => "pushup",
            Task::Regularity(_) => "regularity",
            Task::Hyperbolicity(_) => "hyperbolicity",
            Task::VerifyLip(_) => "verify-lip",
            Task::Tcd(_) => "tcd",
            Task::Rigidity(_) => "rigidity",
            Task::DemoBubble(_) => "demo-bubble",
        }
    }
}


#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauPair {
    pub from: EventSpec,
    pub to: EventSpec,
    #[serde(default)]
    pub expected: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauTask {
    pub pairs: Vec<TauPair>,
    /// Relative tolerance on `expected`; `--tol` when absent.
    #[serde(default)]
    pub tolerance: Option<f64>,
    /// Source of `tau_table.csv`; the first pair's source when absent.
    #[serde(default)]
    pub table_source: Option<EventSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaximizerTask {
    pub from: EventSpec,
    pub to: EventSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triple {
    pub q: EventSpec,
    pub p: EventSpec,
    pub r: EventSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushupTask {
    /// Random chains `q ≤ p ≪ r` drawn from the DAG.
    #[serde(default)]
    pub samples: usize,
    #[serde(default)]
    pub triples: Vec<Triple>,
    #[serde(default)]
    pub constancy_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    /// `(time, node)` samples, time-parametrized.
    pub samples: Vec<(f64, NodeRef)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityTask {
    #[serde(default = "default_audit_pairs")]
    pub pairs: usize,
    /// Constant-speed curve for the Q residual sweep.
    #[serde(default)]
    pub curve: Option<CurveSpec>,
    /// Time-grid refinement factors for the sweep.
    #[serde(default = "default_refinements")]
    pub refinements: Vec<usize>,
}

fn default_audit_pairs() -> usize {
    200
}

fn default_refinements() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperbolicityTask {
    /// Escaping ray: one node per layer starting at layer 0.
    #[serde(default)]
    pub ray: Vec<NodeRef>,
    #[serde(default)]
    pub diamonds: Vec<(EventSpec, EventSpec)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyLipTask {
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    /// Node set `K`; all nodes when absent.
    #[serde(default)]
    pub nodes: Option<Vec<NodeRef>>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub grid_intervals: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub g: FieldSpec,
    #[serde(default)]
    pub masses: Option<Vec<f64>>,
    #[serde(default = "unit_lapse")]
    pub lapse: FieldSpec,
}

fn unit_lapse() -> FieldSpec {
    FieldSpec::Constant { value: 1.0 }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcdCase {
    pub name: String,
    pub nu0: (f64, f64),
    pub nu1: (f64, f64),
    pub region: Vec<NodeRef>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcdTask {
    pub density: DensitySpec,
    #[serde(default)]
    pub k: f64,
    pub n: f64,
    #[serde(default = "half")]
    pub p: f64,
    pub cases: Vec<TcdCase>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn half() -> f64 {
    0.5
}

fn default_samples() -> usize {
    16
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidityTask {
    pub density: DensitySpec,
    #[serde(default)]
    pub k: f64,
    pub n: f64,
    pub windows: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoBubbleTask {
    #[serde(default = "default_demo_samples")]
    pub samples: usize,
}

fn default_demo_samples() -> usize {
    20
}

/// A scenario with its space built and its references checked.
pub struct Loaded {
    pub scenario: Scenario,
    pub space: ProductSpacetime,
}

impl Loaded {
    pub fn node(&self, r: &NodeRef, pointer: &str) -> Result<NodeId, SchemaError> {
        let base = &self.space.family.base;
        match r {
            NodeRef::Index(i) if *i < base.len() => Ok(*i),
            NodeRef::Index(i) => Err(schema(pointer, format!("node {i} does not exist ({} nodes)", base.len()))),
            NodeRef::Label(l) => base.node_by_label(l).ok_or_else(|| schema(pointer, format!("unknown node label {l:?}"))),
        }
    }

    pub fn event(&self, e: &EventSpec, pointer: &str) -> Result<Event, SchemaError> {
        let node = self.node(&e.node, &format!("{pointer}/node"))?;
        let grid = &self.space.grid;
        let layer = match (e.layer, e.time) {
            (Some(l), None) if l < grid.len() => l,
            (Some(l), None) => return Err(schema(format!("{pointer}/layer"), format!("layer {l} beyond the {} grid layers", grid.len()))),
            (None, Some(t)) => {
                let l = self.space.layer_of(t);
                let scale = (grid[grid.len() - 1] - grid[0]).abs().max(1.0);
                if (grid[l] - t).abs() > 1e-9 * scale {
                    return Err(schema(format!("{pointer}/time"), format!("time {t} is not on the grid")));
                }
                l
            }
            _ => return Err(schema(pointer, "give exactly one of `layer` and `time`")),
        };
        Ok(Event::new(layer, node))
    }

    pub fn nodes(&self, refs: &[NodeRef], pointer: &str) -> Result<Vec<NodeId>, SchemaError> {
        refs.iter().enumerate().map(|(i, r)| self.node(r, &format!("{pointer}/{i}"))).collect()
    }
}

pub fn parse(text: &str) -> Result<Scenario, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut pointer = String::new();
        for seg in e.path().iter() {
            match seg {
                serde_path_to_error::Segment::Seq { index } => pointer.push_str(&format!("/{index}")),
                serde_path_to_error::Segment::Map { key } => pointer.push_str(&format!("/{key}")),
                serde_path_to_error::Segment::Enum { variant } => pointer.push_str(&format!("/{variant}")),
                serde_path_to_error::Segment::Unknown => pointer.push_str("/?"),
            }
        }
        schema(pointer, e.inner().to_string())
    })
}

pub fn load(path: &Path) -> Result<Loaded, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|e| schema("", format!("cannot read {}: {e}", path.display())))?;
    build(parse(&text)?)
}

/// Builds the product space and checks task names and references that do not need numerics.
pub fn build(scenario: Scenario) -> Result<Loaded, SchemaError> {
    let base = scenario.base.build().map_err(|e| schema("/base", e.to_string()))?;
    let family = ConformalFamily::from_spec(base, &scenario.family).map_err(|e| schema("/family", e.to_string()))?;
    let g = &scenario.grid;
    let space = match (&g.steps, &g.times) {
        (Some(n), None) if *n > 0 => ProductSpacetime::uniform(family, *n, g.hop_radius),
        (None, Some(times)) => ProductSpacetime::new(family, times.clone(), g.hop_radius),
        _ => return Err(schema("/grid", "give exactly one of `steps` (> 0) and `times`")),
    }
    .map_err(|e| schema("/grid", e.to_string()))?;
    let mut names = HashSet::new();
    for (i, t) in scenario.tasks.iter().enumerate() {
        let name = t.name();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(schema(format!("/tasks/{i}/name"), "task names use [A-Za-z0-9_-] only"));
        }
        if !names.insert(name.clone()) {
            return Err(schema(format!("/tasks/{i}/name"), format!("duplicate task name {name:?}")));
        }
    }
    let loaded = Loaded { scenario, space };
    check_references(&loaded)?;
    Ok(loaded)
}

fn check_references(l: &Loaded) -> Result<(), SchemaError> {
    for (i, spec) in l.scenario.tasks.iter().enumerate() {
        let at = format!("/tasks/{i}");
        match &spec.task {
            Task::Tau(t) => {
                if t.pairs.is_empty() {
                    return Err(schema(format!("{at}/pairs"), "at least one pair is required"));
                }
                for (j, p) in t.pairs.iter().enumerate() {
                    l.event(&p.from, &format!("{at}/pairs/{j}/from"))?;
                    l.event(&p.to, &format!("{at}/pairs/{j}/to"))?;
                }
                if let Some(s) = &t.table_source {
                    l.event(s, &format!("{at}/table_source"))?;
                }
            }
            Task::Maximizer(t) => {
                l.event(&t.from, &format!("{at}/from"))?;
                l.event(&t.to, &format!("{at}/to"))?;
            }
            Task::Pushup(t) => {
                for (j, tr) in t.triples.iter().enumerate() {
                    l.event(&tr.q, &format!("{at}/triples/{j}/q"))?;
                    l.event(&tr.p, &format!("{at}/triples/{j}/p"))?;
                    l.event(&tr.r, &format!("{at}/triples/{j}/r"))?;
                }
            }
            Task::Regularity(t) => {
                if let Some(c) = &t.curve {
                    for (j, s) in c.samples.iter().enumerate() {
                        l.node(&s.1, &format!("{at}/curve/samples/{j}/1"))?;
                    }
                }
                if t.refinements.is_empty() || t.refinements.contains(&0) {
                    return Err(schema(format!("{at}/refinements"), "refinement factors must be positive"));
                }
            }
            Task::Hyperbolicity(t) => {
                l.nodes(&t.ray, &format!("{at}/ray"))?;
                for (j, (p, q)) in t.diamonds.iter().enumerate() {
                    l.event(p, &format!("{at}/diamonds/{j}/0"))?;
                    l.event(q, &format!("{at}/diamonds/{j}/1"))?;
                }
            }
            Task::VerifyLip(t) => {
                if let Some(k) = &t.nodes {
                    l.nodes(k, &format!("{at}/nodes"))?;
                }
            }
            Task::Tcd(t) => {
                check_density(l, &t.density, &format!("{at}/density"))?;
                let mut seen = HashSet::new();
                for (j, c) in t.cases.iter().enumerate() {
                    if c.name.is_empty() || !c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_') {
                        return Err(schema(format!("{at}/cases/{j}/name"), "case names use [A-Za-z0-9_-] only"));
                    }
                    if !seen.insert(c.name.clone()) {
                        return Err(schema(format!("{at}/cases/{j}/name"), format!("duplicate case name {:?}", c.name)));
                    }
                    if c.region.is_empty() {
                        return Err(schema(format!("{at}/cases/{j}/region"), "region must be nonempty"));
                    }
                    l.nodes(&c.region, &format!("{at}/cases/{j}/region"))?;
                    for (w, key) in [(c.nu0, "nu0"), (c.nu1, "nu1")] {
                        if !(w.1 > w.0) {
                            return Err(schema(format!("{at}/cases/{j}/{key}"), "window must be a nonempty interval"));
                        }
                    }
                }
            }
            Task::Rigidity(t) => {
                check_density(l, &t.density, &format!("{at}/density"))?;
                if t.windows.is_empty() {
                    return Err(schema(format!("{at}/windows"), "at least one window is required"));
                }
                for (j, w) in t.windows.iter().enumerate() {
                    if !(w.1 > w.0) {
                        return Err(schema(format!("{at}/windows/{j}"), "window must be a nonempty interval"));
                    }
                }
            }
            Task::DemoBubble(_) => {}
        }
    }
    Ok(())
}

fn check_density(l: &Loaded, d: &DensitySpec, at: &str) -> Result<(), SchemaError> {
    if let Some(m) = &d.masses {
        if m.len() != l.space.nodes() {
            return Err(schema(format!("{at}/masses"), format!("expected {} node masses", l.space.nodes())));
        }
    }
    Ok(())
}
