//! Deterministic chronology simulator.
//!
//! Execution walks the events of a scenario in an order compatible with
//! the chronology (lexicographic event id breaks ties), producing one
//! record per event. Within a record the region's stages take turns in
//! the deterministic topological order of the arcs induced on the region.
//!
//! Things are modeled as instances. A firing Create stage mints a fresh
//! instance; a firing stage hands its instance to every flow successor
//! (fan-out shares the instance id); trigger arcs deposit *activations* —
//! instance-less permissions to fire — at their targets. A non-Create
//! stage fires by consuming a buffered instance (FIFO), or failing that
//! an activation; with neither it is starved and the record moves on.
//!
//! Times on events annotate records; only chronology edges order
//! execution. The seed is recorded for provenance and does not influence
//! the run.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::event::{order_stages, validate_dynamic, Chronology, TMEvent};
use crate::model::{has_errors, DiagCode, Diagnostic, Site, StageKind, StageRef, TMModel};
use crate::validate::validate;

/// Simulation parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    /// Event ids to execute; `None` means every declared event.
    pub scenario: Option<BTreeSet<String>>,
    /// Hard cap on total firings; hitting it truncates the trace.
    pub max_firings: usize,
    /// Recorded in the trace for provenance; the run itself is
    /// deterministic and ignores it.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scenario: None,
            max_firings: 10_000,
            seed: 0,
        }
    }
}

/// A thing in transit, minted by a Create firing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThingInstance {
    pub id: u64,
    /// Current label; updated to the arc's thing label on each hop.
    pub label: String,
    /// The event and Create stage that minted this instance; carried
    /// unchanged as the instance moves.
    pub birth: (String, StageRef),
}

/// One stage doing its work during a record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Firing {
    pub stage: StageRef,
    /// The instance consumed (Create: the instance minted); `None` for a
    /// firing fed by an activation.
    pub instance: Option<ThingInstance>,
}

/// One executed event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimRecord {
    /// Zero-based position in the run.
    pub tick: u64,
    pub event: String,
    pub time: Option<u64>,
    pub firings: Vec<Firing>,
}

/// The result of a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimTrace {
    pub model_name: String,
    pub seed: u64,
    pub max_firings: usize,
    /// `None` when the whole chronology ran.
    pub scenario: Option<BTreeSet<String>>,
    pub records: Vec<SimRecord>,
    /// Runtime findings: starved stages and triggers aimed outside the
    /// scenario. Never part of the textual trace.
    pub warnings: Vec<Diagnostic>,
    /// True when the firing cap cut the run short.
    pub truncated: bool,
}

impl SimTrace {
    pub fn total_firings(&self) -> usize {
        self.records.iter().map(|r| r.firings.len()).sum()
    }

    /// Canonical textual form: a header, one tab-separated line per
    /// record, and a trailing `truncated` line when the cap was hit. The
    /// model renders each firing's stage as its full-path token.
    pub fn to_text(&self, model: &TMModel) -> String {
        let mut out = String::from("# tm trace v1\n");
        let name = if self.model_name.is_empty() {
            "-"
        } else {
            self.model_name.as_str()
        };
        out.push_str(&format!("model {name}\n"));
        out.push_str(&format!("seed {}\n", self.seed));
        out.push_str(&format!("max_firings {}\n", self.max_firings));
        match &self.scenario {
            None => out.push_str("scenario all\n"),
            Some(ids) => {
                let joined: Vec<&str> = ids.iter().map(String::as_str).collect();
                out.push_str(&format!("scenario {}\n", joined.join(",")));
            }
        }
        for rec in &self.records {
            let event = match rec.time {
                Some(t) => format!("{}@{}", rec.event, t),
                None => rec.event.clone(),
            };
            let firings: Vec<String> = rec
                .firings
                .iter()
                .map(|f| match &f.instance {
                    Some(inst) => format!("{}#{}", model.ref_token(&f.stage), inst.id),
                    None => model.ref_token(&f.stage),
                })
                .collect();
            out.push_str(&format!("{}\t{}\t{}\n", rec.tick, event, firings.join(" ")));
        }
        if self.truncated {
            out.push_str("truncated\n");
        }
        out
    }
}

/// Why an explicitly requested step was refused.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepError {
    /// The id names no event in the scenario.
    UnknownEvent(String),
    /// The event already ran.
    AlreadyFired(String),
    /// Chronology predecessors of the event have not run yet.
    UnmetPredecessors {
        event: String,
        /// The still-pending predecessors, in id order.
        unmet: Vec<String>,
    },
}

impl core::fmt::Display for StepError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            StepError::UnknownEvent(id) => {
                write!(f, "no event `{id}` in the scenario")
            }
            StepError::AlreadyFired(id) => write!(f, "event `{id}` already fired"),
            StepError::UnmetPredecessors { event, unmet } => {
                let names: Vec<&str> = unmet.iter().map(String::as_str).collect();
                write!(
                    f,
                    "event `{event}` is not enabled; unmet predecessors: {}",
                    names.join(", ")
                )
            }
        }
    }
}

/// Why a run could not start.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SimError {
    /// Static validation reported errors.
    ModelHasErrors,
    /// Dynamic validation of the events and chronology reported errors.
    DynamicErrors,
    /// The scenario named an event that is not declared.
    UnknownScenarioEvent(String),
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SimError::ModelHasErrors => f.write_str("model has validation errors"),
            SimError::DynamicErrors => f.write_str("events or chronology have validation errors"),
            SimError::UnknownScenarioEvent(id) => {
                write!(f, "scenario names unknown event `{id}`")
            }
        }
    }
}

/// A run in progress; drive it with [`SimState::step`].
pub struct SimState<'m> {
    model: &'m TMModel,
    config: SimConfig,
    /// Scenario events by id.
    events: BTreeMap<String, TMEvent>,
    /// Transitive chronology successors per event, over the full
    /// declaration; restriction to the scenario happens at query time.
    reach: BTreeMap<String, BTreeSet<String>>,
    /// Stages covered by some scenario event's region.
    covered: BTreeSet<StageRef>,
    done: BTreeSet<String>,
    tick: u64,
    buffers: BTreeMap<StageRef, VecDeque<ThingInstance>>,
    activations: BTreeMap<StageRef, usize>,
    next_instance: u64,
    fired_total: usize,
    truncated: bool,
    warnings: Vec<Diagnostic>,
}

impl<'m> SimState<'m> {
    /// Checks every precondition and prepares a run. The model must have
    /// no static errors, the events and chronology no dynamic errors, and
    /// the scenario must name declared events.
    pub fn new(
        model: &'m TMModel,
        events: &[TMEvent],
        chron: &Chronology,
        config: SimConfig,
    ) -> Result<Self, SimError> {
        if has_errors(&validate(model)) {
            return Err(SimError::ModelHasErrors);
        }
        if has_errors(&validate_dynamic(model, events, chron)) {
            return Err(SimError::DynamicErrors);
        }
        let declared: BTreeSet<&str> = events.iter().map(|e| e.id.as_str()).collect();
        if let Some(ids) = &config.scenario {
            for id in ids {
                if !declared.contains(id.as_str()) {
                    return Err(SimError::UnknownScenarioEvent(id.clone()));
                }
            }
        }
        let selected: BTreeMap<String, TMEvent> = events
            .iter()
            .filter(|e| {
                config
                    .scenario
                    .as_ref()
                    .is_none_or(|ids| ids.contains(&e.id))
            })
            .map(|e| (e.id.clone(), e.clone()))
            .collect();
        let covered = selected
            .values()
            .flat_map(|e| e.region.iter().cloned())
            .collect();
        // Reachability over the full chronology keeps ordering between
        // scenario events that are only connected through omitted ones.
        let full = Chronology {
            events: events.iter().map(|e| e.id.clone()).collect(),
            edges: chron.edges.clone(),
        };
        Ok(SimState {
            model,
            config,
            events: selected,
            reach: full.paths(),
            covered,
            done: BTreeSet::new(),
            tick: 0,
            buffers: BTreeMap::new(),
            activations: BTreeMap::new(),
            next_instance: 0,
            fired_total: 0,
            truncated: false,
            warnings: Vec::new(),
        })
    }

    /// Event ids yet to run, in id order.
    pub fn remaining(&self) -> Vec<&str> {
        self.events
            .keys()
            .filter(|id| !self.done.contains(*id))
            .map(String::as_str)
            .collect()
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Executes the next eligible event — the lexicographically smallest
    /// whose scenario predecessors have all run — and returns its record.
    /// `None` once every event has run or the firing cap was hit.
    pub fn step(&mut self) -> Option<SimRecord> {
        if self.truncated {
            return None;
        }
        let next = self
            .events
            .keys()
            .find(|id| !self.done.contains(*id) && self.predecessors_done(id))?
            .clone();
        Some(self.execute(&next))
    }

    /// Executes a specific event, refusing if it is unknown, already ran,
    /// or still has pending chronology predecessors (named in the error).
    pub fn step_event(&mut self, id: &str) -> Result<SimRecord, StepError> {
        if !self.events.contains_key(id) {
            return Err(StepError::UnknownEvent(id.to_string()));
        }
        if self.done.contains(id) {
            return Err(StepError::AlreadyFired(id.to_string()));
        }
        let unmet = self.pending_predecessors(id);
        if !unmet.is_empty() {
            return Err(StepError::UnmetPredecessors {
                event: id.to_string(),
                unmet,
            });
        }
        Ok(self.execute(id))
    }

    fn predecessors_done(&self, id: &str) -> bool {
        self.pending_predecessors(id).is_empty()
    }

    /// Scenario events that must run before `id` and have not, in id
    /// order. Events outside the scenario never block.
    fn pending_predecessors(&self, id: &str) -> Vec<String> {
        self.events
            .keys()
            .filter(|other| {
                other.as_str() != id
                    && !self.done.contains(*other)
                    && self
                        .reach
                        .get(other.as_str())
                        .is_some_and(|r| r.contains(id))
            })
            .cloned()
            .collect()
    }

    /// Consumes the state into a trace around already-collected records.
    fn finish(self, records: Vec<SimRecord>) -> SimTrace {
        SimTrace {
            model_name: self.model.metadata.name.clone(),
            seed: self.config.seed,
            max_firings: self.config.max_firings,
            scenario: self.config.scenario.clone(),
            records,
            warnings: self.warnings,
            truncated: self.truncated,
        }
    }

    /// Runs one event's record: region stages take turns in induced
    /// topological order, each firing at most once.
    fn execute(&mut self, id: &str) -> SimRecord {
        let event = self.events.get(id).expect("scenario event").clone();
        self.done.insert(id.to_string());
        let order = order_stages(self.model, &event.region);
        let mut firings = Vec::new();
        for stage in order {
            if self.fired_total >= self.config.max_firings {
                self.truncated = true;
                break;
            }
            let instance = if stage.kind == StageKind::Create {
                let inst = ThingInstance {
                    id: self.next_instance,
                    label: self.create_label(&stage),
                    birth: (event.id.clone(), stage.clone()),
                };
                self.next_instance += 1;
                Some(inst)
            } else if let Some(inst) = self.buffers.get_mut(&stage).and_then(VecDeque::pop_front) {
                Some(inst)
            } else if self.activations.get(&stage).copied().unwrap_or(0) > 0 {
                *self.activations.get_mut(&stage).unwrap() -= 1;
                None
            } else {
                self.warnings.push(Diagnostic::warning(
                    DiagCode::StarvedStage,
                    Site::Stage(stage.clone()),
                    format!(
                        "stage `{stage}` had nothing to work on during event `{}`",
                        event.id
                    ),
                ));
                continue;
            };
            self.fired_total += 1;
            self.deliver(&stage, instance.as_ref());
            firings.push(Firing { stage, instance });
        }
        let record = SimRecord {
            tick: self.tick,
            event: event.id,
            time: event.time,
            firings,
        };
        self.tick += 1;
        record
    }

    /// Hands the instance to flow successors and deposits activations at
    /// trigger targets.
    fn deliver(&mut self, stage: &StageRef, instance: Option<&ThingInstance>) {
        let model = self.model;
        if let Some(inst) = instance {
            for (_, arc) in model.arcs_from(stage) {
                let mut hop = inst.clone();
                hop.label = arc.thing.clone();
                self.buffers
                    .entry(arc.to.clone())
                    .or_default()
                    .push_back(hop);
            }
        }
        let targets: Vec<StageRef> = model
            .triggers
            .iter()
            .filter(|t| &t.from == stage)
            .map(|t| t.to.clone())
            .collect();
        for target in targets {
            if self.covered.contains(&target) {
                *self.activations.entry(target).or_insert(0) += 1;
            } else {
                self.warnings.push(Diagnostic::warning(
                    DiagCode::TriggerTargetOutside,
                    Site::Stage(target.clone()),
                    format!(
                        "trigger from `{stage}` aims at `{target}`, outside every enabled region"
                    ),
                ));
            }
        }
    }

    /// Label for a freshly minted instance: the first outgoing arc's
    /// thing, else the stage's disambiguator, else `thing`.
    fn create_label(&self, stage: &StageRef) -> String {
        self.model
            .arcs_from(stage)
            .map(|(_, a)| a.thing.clone())
            .next()
            .or_else(|| stage.disambiguator.clone())
            .unwrap_or_else(|| String::from("thing"))
    }
}

/// Runs a whole scenario: topologically orders the scenario's events
/// (ties broken by id) and executes each record. Equivalent to driving
/// [`SimState::step`] to exhaustion.
pub fn simulate(
    model: &TMModel,
    events: &[TMEvent],
    chron: &Chronology,
    config: SimConfig,
) -> Result<SimTrace, SimError> {
    let mut state = SimState::new(model, events, chron, config)?;
    let order = scenario_order(&state);
    let mut records = Vec::new();
    for id in order {
        if state.truncated {
            break;
        }
        records.push(state.execute(&id));
    }
    Ok(state.finish(records))
}

/// Kahn's algorithm over the chronology restricted to the scenario by
/// transitive closure, always popping the smallest event id.
fn scenario_order(state: &SimState) -> Vec<String> {
    let ids: Vec<&String> = state.events.keys().collect();
    let mut indeg: BTreeMap<&str, usize> = ids.iter().map(|id| (id.as_str(), 0)).collect();
    let mut succ: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for a in &ids {
        for b in &ids {
            if a != b
                && state
                    .reach
                    .get(a.as_str())
                    .is_some_and(|r| r.contains(b.as_str()))
            {
                succ.entry(a.as_str()).or_default().push(b.as_str());
                *indeg.get_mut(b.as_str()).unwrap() += 1;
            }
        }
    }
    let mut ready: BTreeSet<&str> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut out = Vec::with_capacity(ids.len());
    while let Some(&id) = ready.iter().next() {
        ready.remove(id);
        out.push(id.to_string());
        if let Some(nexts) = succ.get(id) {
            for n in nexts {
                let d = indeg.get_mut(n).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(n);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StageKind::*;

    fn r(machine: &str, kind: crate::model::StageKind, d: Option<&str>) -> StageRef {
        StageRef::new(machine, kind, d)
    }

    /// A.create -> A.process -> A.release -> A.transfer
    ///   -> B.transfer -> B.receive -> B.process, thing "s".
    fn chain() -> TMModel {
        let mut b = TMModel::builder();
        b.metadata("chain", "");
        b.add_machine(None, "A").unwrap();
        b.add_machine(None, "B").unwrap();
        for (m, k) in [
            ("A", Create),
            ("A", Process),
            ("A", Release),
            ("A", Transfer),
            ("B", Transfer),
            ("B", Receive),
            ("B", Process),
        ] {
            b.add_stage(m, k, None, None).unwrap();
        }
        b.add_flow(r("A", Create, None), r("A", Process, None), "s");
        b.add_flow(r("A", Process, None), r("A", Release, None), "s");
        b.add_flow(r("A", Release, None), r("A", Transfer, None), "s");
        b.add_flow(r("A", Transfer, None), r("B", Transfer, None), "s");
        b.add_flow(r("B", Transfer, None), r("B", Receive, None), "s");
        b.add_flow(r("B", Receive, None), r("B", Process, None), "s");
        b.build()
    }

    fn chain_events() -> (Vec<TMEvent>, Chronology) {
        let events = alloc::vec![
            TMEvent {
                id: "E1".into(),
                region: BTreeSet::from([
                    r("A", Create, None),
                    r("A", Process, None),
                    r("A", Release, None),
                    r("A", Transfer, None),
                ]),
                time: None,
                desc: None,
            },
            TMEvent {
                id: "E2".into(),
                region: BTreeSet::from([
                    r("B", Transfer, None),
                    r("B", Receive, None),
                    r("B", Process, None),
                ]),
                time: Some(9),
                desc: None,
            },
        ];
        let chron = Chronology {
            events: BTreeSet::from(["E1".into(), "E2".into()]),
            edges: BTreeSet::from([("E1".into(), "E2".into())]),
        };
        (events, chron)
    }

    #[test]
    fn chain_runs_clean_and_in_order() {
        let m = chain();
        let (events, chron) = chain_events();
        let trace = simulate(&m, &events, &chron, SimConfig::default()).unwrap();
        assert_eq!(trace.warnings, Vec::new());
        assert!(!trace.truncated);
        assert_eq!(trace.records.len(), 2);
        assert_eq!(trace.records[0].event, "E1");
        assert_eq!(trace.records[0].firings.len(), 4);
        assert_eq!(trace.records[1].firings.len(), 3);
        // The minted instance travels the whole chain under one id.
        for rec in &trace.records {
            for f in &rec.firings {
                assert_eq!(f.instance.as_ref().map(|i| i.id), Some(0));
            }
        }
        // Region stages fire in flow order.
        let order: Vec<String> = trace.records[0]
            .firings
            .iter()
            .map(|f| f.stage.to_string())
            .collect();
        assert_eq!(order, ["A.create", "A.process", "A.release", "A.transfer"]);
    }

    #[test]
    fn skipping_the_feeder_starves_the_region() {
        let m = chain();
        let (events, chron) = chain_events();
        let config = SimConfig {
            scenario: Some(BTreeSet::from(["E2".into()])),
            ..SimConfig::default()
        };
        let trace = simulate(&m, &events, &chron, config).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].firings, Vec::new());
        assert_eq!(trace.warnings.len(), 3);
        assert!(trace
            .warnings
            .iter()
            .all(|w| w.code == DiagCode::StarvedStage));
    }

    /// M1.create -> M1.release plus a trigger M1.create ~> M2.process[x].
    fn triggered() -> (TMModel, Vec<TMEvent>, Chronology) {
        let mut b = TMModel::builder();
        b.add_machine(None, "M1").unwrap();
        b.add_machine(None, "M2").unwrap();
        b.add_stage("M1", Create, None, None).unwrap();
        b.add_stage("M1", Release, None, None).unwrap();
        b.add_stage("M2", Process, Some("x"), None).unwrap();
        b.add_flow(r("M1", Create, None), r("M1", Release, None), "s");
        b.add_trigger(r("M1", Create, None), r("M2", Process, Some("x")), None);
        let m = b.build();
        let events = alloc::vec![
            TMEvent {
                id: "E1".into(),
                region: BTreeSet::from([r("M1", Create, None), r("M1", Release, None)]),
                time: None,
                desc: None,
            },
            TMEvent {
                id: "E2".into(),
                region: BTreeSet::from([r("M2", Process, Some("x"))]),
                time: None,
                desc: None,
            },
        ];
        let chron = Chronology {
            events: BTreeSet::from(["E1".into(), "E2".into()]),
            edges: BTreeSet::from([("E1".into(), "E2".into())]),
        };
        (m, events, chron)
    }

    #[test]
    fn triggers_activate_other_regions() {
        let (m, events, chron) = triggered();
        let trace = simulate(&m, &events, &chron, SimConfig::default()).unwrap();
        assert_eq!(trace.warnings, Vec::new());
        assert_eq!(trace.records[1].firings.len(), 1);
        // Activation-fed firings carry no instance.
        assert_eq!(trace.records[1].firings[0].instance, None);
    }

    #[test]
    fn triggers_aimed_outside_the_scenario_warn() {
        let (m, events, chron) = triggered();
        let config = SimConfig {
            scenario: Some(BTreeSet::from(["E1".into()])),
            ..SimConfig::default()
        };
        let trace = simulate(&m, &events, &chron, config).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.warnings.len(), 1);
        assert_eq!(trace.warnings[0].code, DiagCode::TriggerTargetOutside);
    }

    #[test]
    fn instances_queue_first_in_first_out() {
        // Two Create records feed one Process record: it must consume the
        // earlier instance.
        let mut b = TMModel::builder();
        b.add_machine(None, "A").unwrap();
        b.add_stage("A", Create, None, None).unwrap();
        b.add_stage("A", Process, None, None).unwrap();
        b.add_flow(r("A", Create, None), r("A", Process, None), "s");
        let m = b.build();
        let ev = |id: &str, stage: StageRef| TMEvent {
            id: id.into(),
            region: BTreeSet::from([stage]),
            time: None,
            desc: None,
        };
        let events = alloc::vec![
            ev("E1", r("A", Create, None)),
            ev("E2", r("A", Create, None)),
            ev("E3", r("A", Process, None)),
        ];
        let chron = Chronology {
            events: BTreeSet::from(["E1".into(), "E2".into(), "E3".into()]),
            edges: BTreeSet::from([("E1".into(), "E2".into()), ("E2".into(), "E3".into())]),
        };
        let trace = simulate(&m, &events, &chron, SimConfig::default()).unwrap();
        let ids: Vec<Option<u64>> = trace
            .records
            .iter()
            .map(|r| r.firings[0].instance.as_ref().map(|i| i.id))
            .collect();
        assert_eq!(ids, [Some(0), Some(1), Some(0)]);
    }

    #[test]
    fn the_firing_cap_truncates() {
        let m = chain();
        let (events, chron) = chain_events();
        let config = SimConfig {
            max_firings: 3,
            ..SimConfig::default()
        };
        let trace = simulate(&m, &events, &chron, config).unwrap();
        assert!(trace.truncated);
        assert_eq!(trace.total_firings(), 3);
        assert_eq!(trace.records.len(), 1);
        assert!(trace.to_text(&m).ends_with("truncated\n"));
    }

    #[test]
    fn stepping_matches_running() {
        let m = chain();
        let (events, chron) = chain_events();
        let whole = simulate(&m, &events, &chron, SimConfig::default()).unwrap();
        let mut state = SimState::new(&m, &events, &chron, SimConfig::default()).unwrap();
        let mut stepped = Vec::new();
        while let Some(rec) = state.step() {
            stepped.push(rec);
        }
        assert_eq!(stepped, whole.records);
        assert_eq!(state.remaining(), Vec::<&str>::new());
    }

    #[test]
    fn instances_remember_their_birth() {
        let m = chain();
        let (events, chron) = chain_events();
        let trace = simulate(&m, &events, &chron, SimConfig::default()).unwrap();
        let birth = ("E1".to_string(), r("A", Create, None));
        // Every firing along the chain carries the instance minted by
        // E1's Create, label updated per hop but birth unchanged.
        for rec in &trace.records {
            for f in &rec.firings {
                assert_eq!(f.instance.as_ref().unwrap().birth, birth);
            }
        }
        let last = trace.records[1].firings.last().unwrap();
        assert_eq!(last.instance.as_ref().unwrap().label, "s");
    }

    #[test]
    fn explicit_steps_enforce_the_chronology() {
        let m = chain();
        let (events, chron) = chain_events();
        let mut state = SimState::new(&m, &events, &chron, SimConfig::default()).unwrap();
        assert_eq!(
            state.step_event("E2").unwrap_err(),
            StepError::UnmetPredecessors {
                event: "E2".into(),
                unmet: alloc::vec!["E1".into()],
            }
        );
        assert_eq!(
            state.step_event("E7").unwrap_err(),
            StepError::UnknownEvent("E7".into())
        );
        let first = state.step_event("E1").unwrap();
        assert_eq!(first.firings.len(), 4);
        assert_eq!(
            state.step_event("E1").unwrap_err(),
            StepError::AlreadyFired("E1".into())
        );
        let second = state.step_event("E2").unwrap();
        assert_eq!(second.firings.len(), 3);
        assert_eq!(state.remaining(), Vec::<&str>::new());
    }

    #[test]
    fn a_run_is_a_fold_of_explicit_steps() {
        let m = chain();
        let (events, chron) = chain_events();
        let whole = simulate(&m, &events, &chron, SimConfig::default()).unwrap();
        let mut state = SimState::new(&m, &events, &chron, SimConfig::default()).unwrap();
        let stepped: Vec<SimRecord> = whole
            .records
            .iter()
            .map(|rec| state.step_event(&rec.event).unwrap())
            .collect();
        assert_eq!(stepped, whole.records);
    }

    #[test]
    fn trace_text_is_exact() {
        let m = chain();
        let (events, chron) = chain_events();
        let trace = simulate(&m, &events, &chron, SimConfig::default()).unwrap();
        assert_eq!(
            trace.to_text(&m),
            "# tm trace v1\n\
             model chain\n\
             seed 0\n\
             max_firings 10000\n\
             scenario all\n\
             0\tE1\tA:create#0 A:process#0 A:release#0 A:transfer#0\n\
             1\tE2@9\tB:transfer#0 B:receive#0 B:process#0\n"
        );
    }

    #[test]
    fn runs_are_reproducible() {
        let m = chain();
        let (events, chron) = chain_events();
        let a = simulate(&m, &events, &chron, SimConfig::default()).unwrap();
        let b = simulate(&m, &events, &chron, SimConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn preconditions_are_enforced() {
        let m = chain();
        let (events, chron) = chain_events();
        let bad_scenario = SimConfig {
            scenario: Some(BTreeSet::from(["E9".into()])),
            ..SimConfig::default()
        };
        assert_eq!(
            simulate(&m, &events, &chron, bad_scenario).unwrap_err(),
            SimError::UnknownScenarioEvent("E9".into())
        );
        let contradictory = Chronology {
            events: chron.events.clone(),
            edges: BTreeSet::from([("E2".into(), "E1".into())]),
        };
        assert_eq!(
            simulate(&m, &events, &contradictory, SimConfig::default()).unwrap_err(),
            SimError::DynamicErrors
        );
    }

    #[test]
    fn omitted_middle_events_still_order_the_rest() {
        // E1 -> E2 -> E3 in the chronology; running {E1, E3} must keep
        // E1 before E3 through the omitted middle event.
        let mut b = TMModel::builder();
        b.add_machine(None, "A").unwrap();
        b.add_stage("A", Create, None, None).unwrap();
        b.add_stage("A", Process, None, None).unwrap();
        b.add_stage("A", Release, None, None).unwrap();
        b.add_flow(r("A", Create, None), r("A", Process, None), "s");
        b.add_flow(r("A", Process, None), r("A", Release, None), "s");
        let m = b.build();
        let ev = |id: &str, stage: StageRef| TMEvent {
            id: id.into(),
            region: BTreeSet::from([stage]),
            time: None,
            desc: None,
        };
        // Ids chosen so that plain lexicographic order would run them
        // backwards without the chronology path.
        let events = alloc::vec![
            ev("zfirst", r("A", Create, None)),
            ev("middle", r("A", Process, None)),
            ev("alast", r("A", Release, None)),
        ];
        let chron = Chronology {
            events: BTreeSet::from(["zfirst".into(), "middle".into(), "alast".into()]),
            edges: BTreeSet::from([
                ("zfirst".into(), "middle".into()),
                ("middle".into(), "alast".into()),
            ]),
        };
        let config = SimConfig {
            scenario: Some(BTreeSet::from(["zfirst".into(), "alast".into()])),
            ..SimConfig::default()
        };
        let trace = simulate(&m, &events, &chron, config).unwrap();
        let order: Vec<&str> = trace.records.iter().map(|r| r.event.as_str()).collect();
        assert_eq!(order, ["zfirst", "alast"]);
    }
}
